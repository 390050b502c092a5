//! Command implementations. Each writes its artifacts and a manifest into
//! `--out-dir`.

use std::path::{Path, PathBuf};

use fracuc::arma_map::{build_table, ArmaApproxTable, GridSpec};
use fracuc::diagnostics::{elw, periodogram, whiteness_report_lags, default_bandwidth, ElwResult, WhitenessReport};
use fracuc::estimate::{fit, ApproxKind, FitConfig, FitResult, Identification, LikelihoodEngine};
use fracuc::experiments::{bench_csv, run_bench, run_mc, BenchRepeats, McDesign, McTarget};
use fracuc::model::{simulate, ThetaParams};
use fracuc::ssm_exact::kalman_structured;
use fracuc::ssm_fast::extract_components;
use serde::Serialize;

use crate::data::{ingest, month_range, write_dataset, Dataset, IngestOptions, Month};
use crate::error::CliError;
use crate::manifest::{now, Manifest};
use crate::{
    BenchArgs, Cli, Command, DataArgs, DiagnoseArgs, EngineArg, ExtractArgs, FitArgs, IdentArg, McArgs, ModeArg,
    RerunArgs, SimulateArgs, TableArgs, TargetArg, ThetaArgs,
};

/// Environment variable naming the default ARMA table.
pub const TABLE_ENV: &str = "FRACUC_ARMA_TABLE";

const BUNDLED_TABLE: &str = include_str!("../assets/arma_table.json");

struct Run {
    argv: Vec<String>,
    threads: Option<usize>,
    started: f64,
}

impl Run {
    fn finish(
        &self,
        command: &str,
        out_dir: &Path,
        seed: Option<u64>,
        config: impl Serialize,
        outputs: Vec<PathBuf>,
    ) -> Result<(), CliError> {
        let m = Manifest {
            command: command.to_string(),
            argv: self.argv.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads: self.threads,
            config: serde_json::to_value(config)?,
            outputs,
            started_unix: self.started,
            finished_unix: now(),
        };
        m.write(out_dir)?;
        Ok(())
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // a rerun inside the same process finds the pool already built
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let run = Run {
        argv,
        threads: cli.threads,
        started: now(),
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&run, a),
        Command::Fit(a) => cmd_fit(&run, a),
        Command::Extract(a) => cmd_extract(&run, a),
        Command::Diagnose(a) => cmd_diagnose(&run, a),
        Command::Mc(a) => cmd_mc(&run, a),
        Command::Bench(a) => cmd_bench(&run, a),
        Command::Table(a) => cmd_table(&run, a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf, CliError> {
    std::fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn ingest_args(a: &DataArgs) -> Result<Dataset, CliError> {
    ingest(
        &a.data,
        &IngestOptions {
            log_diff: a.log_diff,
            from: a.from.clone(),
            to: a.to.clone(),
            keep_first: a.keep_first,
        },
    )
}

fn theta_from(a: &ThetaArgs) -> Result<ThetaParams<f64>, CliError> {
    let th = ThetaParams::new(a.beta.clone(), a.sigma.clone(), a.b);
    if a.sigma.len() != a.beta.len() {
        return Err(CliError::Usage(format!(
            "--beta has {} entries but --sigma has {}",
            a.beta.len(),
            a.sigma.len()
        )));
    }
    th.ensure_valid(th.p())?;
    Ok(th)
}

/// `--table`, then the environment variable, then the bundled table.
pub fn resolve_table(flag: Option<&Path>) -> Result<ArmaApproxTable, CliError> {
    if let Some(p) = flag {
        return Ok(ArmaApproxTable::load(p)?);
    }
    if let Some(p) = std::env::var_os(TABLE_ENV) {
        return Ok(ArmaApproxTable::load(Path::new(&p))?);
    }
    Ok(ArmaApproxTable::from_json(BUNDLED_TABLE)?)
}

fn cmd_simulate(run: &Run, a: SimulateArgs) -> Result<(), CliError> {
    let th = theta_from(&a.theta)?;
    let start: Month = a.start.parse().map_err(CliError::Usage)?;
    let sim = simulate(&th, a.n, a.seed)?;
    ensure_dir(&a.out_dir)?;
    let dates = month_range(start, a.n);
    let names: Vec<String> = (1..=th.p()).map(|i| format!("y{i}")).collect();
    let y_path = a.out_dir.join("sim.csv");
    write_dataset(&y_path, &dates, &names, &sim.y)?;
    let mut latent = String::from("date,x,eta");
    for i in 1..=th.p() {
        latent.push_str(&format!(",u{i}"));
    }
    latent.push('\n');
    for (t, d) in dates.iter().enumerate() {
        latent.push_str(&format!("{d},{},{}", sim.x[t], sim.eta[t]));
        for i in 0..th.p() {
            latent.push_str(&format!(",{}", sim.u[(t, i)]));
        }
        latent.push('\n');
    }
    let l_path = write(a.out_dir.join("sim_latent.csv"), &latent)?;
    run.finish("simulate", &a.out_dir, Some(a.seed), &th, vec![y_path, l_path])
}

fn fit_config(a: &FitArgs) -> Result<FitConfig, CliError> {
    let mut cfg: FitConfig = match &a.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&s).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => FitConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Truncation => ApproxKind::Truncation,
            ModeArg::Arma => ApproxKind::Arma,
        };
    }
    if let Some(e) = a.engine {
        cfg.engine = match e {
            EngineArg::Structured => LikelihoodEngine::Structured,
            EngineArg::Corrected => LikelihoodEngine::Corrected,
            EngineArg::Uncorrected => LikelihoodEngine::Uncorrected,
        };
    }
    if let Some(i) = a.identification {
        cfg.identification = match i {
            IdentArg::SigmaEtaUnity => Identification::SigmaEtaUnity,
            IdentArg::FirstLoadingUnity => Identification::FirstLoadingUnity,
        };
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(k) = a.n_starts {
        cfg.n_starts = k;
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    if let Some(k) = a.start_iters {
        cfg.start_iters = k;
    }
    if let Some(b) = a.fix_b {
        cfg.fix_b = Some(b);
    }
    if a.i1 {
        cfg.fix_b = Some(1.0);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fit(run: &Run, a: FitArgs) -> Result<(), CliError> {
    let cfg = fit_config(&a)?;
    let ds = ingest_args(&a.data)?;
    let table = match cfg.mode {
        ApproxKind::Arma => Some(resolve_table(a.table.as_deref())?),
        ApproxKind::Truncation => None,
    };
    let res = fit(&ds.values, &cfg, table.as_ref())?;
    if !res.converged {
        log::warn!("fit did not converge: {}", res.flags.join(", "));
    }
    ensure_dir(&a.out_dir)?;
    let out = write(a.out_dir.join("fit.json"), &res.to_json()?)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        fit: &'a FitConfig,
        data: &'a [PathBuf],
        series: &'a [String],
        n: usize,
        first: String,
        last: String,
        log_diff: bool,
        keep_first: bool,
    }
    let echo = Echo {
        fit: &cfg,
        data: &a.data.data,
        series: &ds.names,
        n: ds.n(),
        first: ds.dates[0].to_string(),
        last: ds.dates[ds.n() - 1].to_string(),
        log_diff: a.data.log_diff,
        keep_first: a.data.keep_first,
    };
    run.finish("fit", &a.out_dir, Some(cfg.seed), echo, vec![out])
}

fn read_fit(path: &Path) -> Result<FitResult, CliError> {
    let s = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_extract(run: &Run, a: ExtractArgs) -> Result<(), CliError> {
    let fr = read_fit(&a.fit)?;
    let ds = ingest_args(&a.data)?;
    let th = &fr.theta_hat;
    if th.p() != ds.values.cols() {
        return Err(CliError::Data(format!(
            "fit has p = {} but the data have {} series",
            th.p(),
            ds.values.cols()
        )));
    }
    let filt = kalman_structured(&ds.values, th)?;
    let c = extract_components(&ds.values, th, &filt)?;
    let mut s = String::from("date,trend,band_lo,band_hi");
    for name in &ds.names {
        s.push_str(&format!(",idio_{name}"));
    }
    s.push_str(",eta_hat\n");
    for (t, d) in ds.dates.iter().enumerate() {
        s.push_str(&format!(
            "{d},{},{},{}",
            c.trend[t],
            c.trend[t] - c.trend_band[t],
            c.trend[t] + c.trend_band[t]
        ));
        for i in 0..th.p() {
            s.push_str(&format!(",{}", c.idio[(t, i)]));
        }
        s.push_str(&format!(",{}\n", c.eta_hat[t]));
    }
    ensure_dir(&a.out_dir)?;
    let out = write(a.out_dir.join("trend.csv"), &s)?;
    run.finish("extract", &a.out_dir, None, th, vec![out])
}

#[derive(Serialize)]
struct SeriesDiagnostics {
    name: String,
    n: usize,
    bandwidth: usize,
    elw: ElwResult,
    whiteness: WhitenessReport,
}

fn cmd_diagnose(run: &Run, a: DiagnoseArgs) -> Result<(), CliError> {
    let ds = ingest_args(&a.data)?;
    let cols: Vec<usize> = if a.columns.is_empty() {
        (0..ds.names.len()).collect()
    } else {
        a.columns
            .iter()
            .map(|c| {
                ds.names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| CliError::Usage(format!("no column '{c}' (have {})", ds.names.join(", "))))
            })
            .collect::<Result<_, _>>()?
    };
    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let mut results = Vec::new();
    for &j in &cols {
        let x = ds.values.column(j);
        let name = &ds.names[j];
        let bw = a.bandwidth.unwrap_or_else(|| default_bandwidth(x.len()));
        let pg = periodogram(&x, bw)?;
        outputs.push(write(a.out_dir.join(format!("periodogram_{name}.csv")), &pg.to_csv())?);
        results.push(SeriesDiagnostics {
            name: name.clone(),
            n: x.len(),
            bandwidth: bw,
            elw: elw(&x, a.elw_m)?,
            whiteness: whiteness_report_lags(&x, a.lags)?,
        });
    }
    outputs.push(write(a.out_dir.join("diagnostics.json"), &serde_json::to_string_pretty(&results)?)?);
    #[derive(Serialize)]
    struct Echo<'a> {
        data: &'a [PathBuf],
        columns: Vec<&'a str>,
        bandwidth: Option<usize>,
        elw_m: Option<usize>,
        lags: usize,
    }
    let echo = Echo {
        data: &a.data.data,
        columns: cols.iter().map(|&j| ds.names[j].as_str()).collect(),
        bandwidth: a.bandwidth,
        elw_m: a.elw_m,
        lags: a.lags,
    };
    run.finish("diagnose", &a.out_dir, None, echo, outputs)
}

fn mc_design(a: &McArgs) -> Result<McDesign, CliError> {
    let mut d = match &a.design {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&s).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => {
            let b = a.b.ok_or_else(|| CliError::Usage("--b is required without --design".into()))?;
            if a.beta.is_empty() || a.sigma.is_empty() || a.n.is_empty() {
                return Err(CliError::Usage("--beta, --sigma and --n are required without --design".into()));
            }
            McDesign::new(ThetaParams::new(vec![], vec![], b), vec![], 100, 0)
        }
    };
    if let Some(b) = a.b {
        d.theta0.b = b;
    }
    if !a.beta.is_empty() {
        d.theta0.beta = a.beta.clone();
    }
    if !a.sigma.is_empty() {
        d.theta0.sigma_diag = a.sigma.clone();
    }
    if !a.n.is_empty() {
        d.n_grid = a.n.clone();
    }
    if let Some(r) = a.reps {
        d.replications = r;
    }
    if !a.targets.is_empty() {
        d.targets = a
            .targets
            .iter()
            .map(|t| match t {
                TargetArg::Consistency => McTarget::Consistency,
                TargetArg::Normality => McTarget::Normality,
                TargetArg::RotationRate => McTarget::RotationRate,
                TargetArg::MdsCheck => McTarget::MdsCheck,
                TargetArg::Speed => McTarget::Speed,
            })
            .collect();
    }
    if let Some(k) = a.n_starts {
        d.fit.n_starts = k;
    }
    if let Some(k) = a.top_k {
        d.fit.top_k = k;
    }
    if let Some(m) = a.m {
        d.fit.m = m;
    }
    if let Some(s) = a.seed {
        d.seed = s;
    }
    d.validate()?;
    Ok(d)
}

fn cmd_mc(run: &Run, a: McArgs) -> Result<(), CliError> {
    let d = mc_design(&a)?;
    let rep = run_mc(&d, None)?;
    if !rep.valid {
        log::warn!("{} of {} fits failed; the run is flagged invalid", rep.n_failed, rep.records.len());
    }
    ensure_dir(&a.out_dir)?;
    let outputs = vec![
        write(a.out_dir.join("mc_report.json"), &rep.to_json()?)?,
        write(a.out_dir.join("mc_records.csv"), &rep.records_csv())?,
        write(a.out_dir.join("mc_summary.csv"), &rep.summary_csv())?,
    ];
    run.finish("mc", &a.out_dir, Some(d.seed), &d, outputs)
}

/// Default loadings `1, 0.8, 1.2, 0.9, 1.1, ...` and variances `0.5`.
fn bench_theta(p: usize, b: f64) -> ThetaParams<f64> {
    let cycle = [1.0, 0.8, 1.2, 0.9, 1.1];
    ThetaParams::new((0..p).map(|i| cycle[i % cycle.len()]).collect(), vec![0.5; p], b)
}

fn cmd_bench(run: &Run, a: BenchArgs) -> Result<(), CliError> {
    if a.p == 0 {
        return Err(CliError::Usage("--p must be >= 1".into()));
    }
    let th = bench_theta(a.p, a.b);
    let rows = run_bench(
        &th,
        &a.n,
        a.m,
        BenchRepeats {
            fast: a.repeats,
            exact: a.exact_repeats,
        },
        a.seed,
    )?;
    for r in &rows {
        log::info!("n = {}: speedup {:.1}x, max |dv| = {:.2e}", r.n, r.speedup, r.max_v_diff);
    }
    ensure_dir(&a.out_dir)?;
    let out = write(a.out_dir.join("bench.csv"), &bench_csv(&rows))?;
    #[derive(Serialize)]
    struct Echo<'a> {
        theta: &'a ThetaParams<f64>,
        n: &'a [usize],
        m: usize,
        repeats: usize,
        exact_repeats: usize,
    }
    let echo = Echo {
        theta: &th,
        n: &a.n,
        m: a.m,
        repeats: a.repeats,
        exact_repeats: a.exact_repeats,
    };
    run.finish("bench", &a.out_dir, Some(a.seed), echo, vec![out])
}

fn cmd_table(run: &Run, a: TableArgs) -> Result<(), CliError> {
    let grid = GridSpec::default();
    let t = build_table(a.m, &grid, a.horizon)?;
    ensure_dir(&a.out_dir)?;
    let out = write(a.out_dir.join("arma_table.json"), &t.to_json()?)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        m: usize,
        horizon: usize,
        grid: &'a GridSpec,
    }
    run.finish(
        "table",
        &a.out_dir,
        None,
        Echo {
            m: a.m,
            horizon: a.horizon,
            grid: &grid,
        },
        vec![out],
    )
}

fn cmd_rerun(a: RerunArgs) -> Result<(), CliError> {
    use clap::Parser;
    let m = Manifest::read(&a.manifest)?;
    let mut argv = vec!["fracuc".to_string()];
    argv.extend(m.argv.iter().cloned());
    if let Some(dir) = &a.out_dir {
        argv.push("--out-dir".into());
        argv.push(dir.display().to_string());
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(CliError::Usage("a manifest cannot re-run another rerun".into()));
    }
    run(cli, argv[1..].to_vec())
}
