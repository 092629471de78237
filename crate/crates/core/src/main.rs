use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mobstab::activity::Estimator;
use mobstab::config::{ConfigError, FrameConfig, RunConfig};
use mobstab::geo::DistanceFormula;
use mobstab::ingest::peak_rss_bytes;
use mobstab::period::PeriodIndexing;
use mobstab::pipeline::{run_curves, run_ingest, run_pipeline, write_fixes, write_meta, PipelineError};
use mobstab::synth::{
    drifting_cohort, preset_grid, sample_fixes, synthetic_cohort, verify_convergence, CohortSpec, Preset, SamplingScheme,
    VerifyConfig, DAY_S,
};
use mobstab::geo::Trajectory;

#[derive(Parser)]
#[command(name = "mobstab", version, about = "Temporal stability of mobility from GPS fixes")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a fix file, clean it and estimate each participant's activity
    /// distribution over the whole frame.
    Ingest(RunArgs),
    /// Full analysis: velocity, distribution and level-set stability plus
    /// cohort summaries.
    Analyze(RunArgs),
    /// Generate synthetic fixes with a matching config file.
    Synth(SynthArgs),
    /// Convergence report of the two activity estimators on the presets.
    Verify(VerifyArgs),
    /// Group LCT-level-set curves from a previous run.
    Curves(CurvesArgs),
}

/// Flags mirror the config file keys and override them.
#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Fix file (participant_id, t, lon, lat).
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Participant metadata (participant_id, sex, age_group).
    #[arg(short, long)]
    meta: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Stability threshold.
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated alpha grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Alpha used for the summary level-set LCT.
    #[arg(long)]
    level_alpha: Option<f64>,
    /// Period length in seconds.
    #[arg(long)]
    period_length_s: Option<f64>,
    /// Activity estimator.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Which periods are compared.
    #[arg(long, value_enum)]
    period_indexing: Option<IndexingArg>,
    /// Distance model for velocities and jitter.
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    /// Drop fixes closer than this to the previous kept fix (metres).
    #[arg(long)]
    jitter_m: Option<f64>,
    /// Start of a frame shared by all participants (unix seconds).
    #[arg(long, requires = "frame_end")]
    frame_start: Option<f64>,
    /// End of the shared frame (unix seconds).
    #[arg(long, requires = "frame_start")]
    frame_end: Option<f64>,
    /// Grid origin longitude (lower-left corner).
    #[arg(long)]
    origin_lon: Option<f64>,
    /// Grid origin latitude (lower-left corner).
    #[arg(long)]
    origin_lat: Option<f64>,
    /// Grid columns.
    #[arg(long)]
    grid_cols: Option<u32>,
    /// Grid rows.
    #[arg(long)]
    grid_rows: Option<u32>,
    /// Cell side in metres.
    #[arg(long)]
    cell_size_m: Option<f64>,
    /// Bootstrap seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap resamples for group curves.
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    /// Confidence level of the group curve intervals.
    #[arg(long)]
    ci_level: Option<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Fixes held in memory per processing batch.
    #[arg(long)]
    batch_fixes: Option<usize>,
    /// Skip malformed records instead of aborting.
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Ordinary,
    Conservative,
}

#[derive(Clone, Copy, ValueEnum)]
enum IndexingArg {
    WithData,
    Calendar,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Haversine,
    Ellipsoid,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            gamma => cfg.gamma,
            alphas => cfg.alphas,
            level_alpha => cfg.level_alpha,
            period_length_s => cfg.period_length_s,
            jitter_m => cfg.jitter_m,
            origin_lon => cfg.grid.origin_lon,
            origin_lat => cfg.grid.origin_lat,
            grid_cols => cfg.grid.n_cols,
            grid_rows => cfg.grid.n_rows,
            cell_size_m => cfg.grid.cell_size_m,
            seed => cfg.seed,
            bootstrap_resamples => cfg.bootstrap_resamples,
            ci_level => cfg.ci_level,
            threads => cfg.threads,
            batch_fixes => cfg.batch_fixes,
        );
        if self.input.is_some() {
            cfg.input = self.input;
        }
        if self.meta.is_some() {
            cfg.meta = self.meta;
        }
        if self.output.is_some() {
            cfg.output = self.output;
        }
        if let Some(e) = self.estimator {
            cfg.estimator = match e {
                EstimatorArg::Ordinary => Estimator::Ordinary,
                EstimatorArg::Conservative => Estimator::Conservative,
            };
        }
        if let Some(i) = self.period_indexing {
            cfg.period_indexing = match i {
                IndexingArg::WithData => PeriodIndexing::WithData,
                IndexingArg::Calendar => PeriodIndexing::Calendar,
            };
        }
        if let Some(d) = self.distance {
            cfg.distance = match d {
                DistanceArg::Haversine => DistanceFormula::Haversine,
                DistanceArg::Ellipsoid => DistanceFormula::Ellipsoid,
            };
        }
        if let (Some(t_min), Some(t_max)) = (self.frame_start, self.frame_end) {
            cfg.frame = Some(FrameConfig { t_min, t_max });
        }
        cfg.skip_bad |= self.skip_bad;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scenario {
    Stationary,
    Commuter,
    Cycle4,
    Drifting,
    Alternator,
    /// Young, middle and old agents with age-dependent routines.
    Cohort,
    /// Several independent drifting agents.
    DriftingCohort,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    scenario: Scenario,
    /// Output directory for fixes.csv, meta.csv and config.toml.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 28)]
    periods: usize,
    #[arg(long, default_value_t = DAY_S)]
    period_length_s: f64,
    #[arg(long, default_value_t = 288)]
    fixes_per_period: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Agents per age group for the cohort scenario.
    #[arg(long, default_value_t = 10)]
    per_age_group: usize,
    /// Agents for the drifting-cohort scenario.
    #[arg(long, default_value_t = 20)]
    agents: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Output directory for convergence.csv and checks.csv.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 10000])]
    rates: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    base_seed: u64,
}

#[derive(Args)]
struct CurvesArgs {
    /// levelset_curves.csv from an analyze run.
    #[arg(long)]
    curves: PathBuf,
    /// Participant metadata (participant_id, sex, age_group).
    #[arg(short, long)]
    meta: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
    /// TOML config supplying bootstrap settings.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Bootstrap seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap resamples.
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    /// Confidence level.
    #[arg(long)]
    ci_level: Option<f64>,
}

enum Failure {
    Validation(String),
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.exit_code() {
            1 => Failure::Validation(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<mobstab::Error> for Failure {
    fn from(e: mobstab::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn ingest(args: RunArgs) -> Result<(), Failure> {
    let cfg = args.into_config()?;
    let manifest = run_ingest(&cfg)?;
    let summary = manifest.ingest.unwrap_or_default();
    println!(
        "records={} malformed_skipped={} participants={} estimated={} grouped={}",
        summary.records, summary.malformed_skipped, summary.participants, manifest.participants_complete, summary.grouped
    );
    if let Some(bytes) = peak_rss_bytes() {
        println!("peak_rss_bytes={bytes}");
    }
    Ok(())
}

fn analyze(args: RunArgs) -> Result<(), Failure> {
    let cfg = args.into_config()?;
    let manifest = run_pipeline(&cfg)?;
    println!(
        "participants={} complete={} outputs={}",
        manifest.participants,
        manifest.participants_complete,
        manifest.outputs.len()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    if args.periods == 0 || args.fixes_per_period == 0 || !(args.period_length_s > 0.0) {
        return Err(Failure::Validation("periods, fixes per period and period length must be positive".into()));
    }
    std::fs::create_dir_all(&args.output).map_err(|e| io_failure(&args.output, e))?;
    let out = std::fs::canonicalize(&args.output).map_err(|e| io_failure(&args.output, e))?;
    let spec = CohortSpec {
        per_age_group: args.per_age_group,
        n_periods: args.periods,
        period_length: args.period_length_s,
        fixes_per_period: args.fixes_per_period,
        seed: args.seed,
    };
    let frame = spec.frame();
    let fixes_path = out.join("fixes.csv");
    let mut meta_path = None;
    match args.scenario {
        Scenario::Cohort => {
            let cohort = synthetic_cohort(&spec)?;
            write_fixes(&fixes_path, cohort.iter().map(|p| &p.trajectory))?;
            let path = out.join("meta.csv");
            write_meta(&path, cohort.iter().map(|p| &p.meta))?;
            meta_path = Some(path);
        }
        Scenario::DriftingCohort => {
            let agents = drifting_cohort(args.agents, args.periods, args.period_length_s, args.fixes_per_period, args.seed)?;
            write_fixes(&fixes_path, &agents)?;
        }
        single => {
            let preset = match single {
                Scenario::Stationary => Preset::Stationary,
                Scenario::Commuter => Preset::Commuter,
                Scenario::Cycle4 => Preset::Cycle4,
                Scenario::Drifting => Preset::Drifting,
                _ => Preset::Alternator,
            };
            let itinerary = preset.itinerary(frame, args.period_length_s)?;
            let scheme = SamplingScheme::new(preset.default_law(), args.periods * args.fixes_per_period)?;
            let traj = sample_fixes(&itinerary, &scheme, args.seed);
            let traj = Trajectory::new(preset.name(), traj.into_fixes())?;
            write_fixes(&fixes_path, [&traj])?;
        }
    }
    let cfg = RunConfig {
        grid: preset_grid(),
        frame: Some(FrameConfig {
            t_min: frame.t_min,
            t_max: frame.t_max,
        }),
        period_length_s: args.period_length_s,
        seed: args.seed,
        input: Some(fixes_path),
        meta: meta_path,
        ..RunConfig::default()
    };
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| io_failure(&cfg_path, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let cfg = VerifyConfig {
        rates: args.rates,
        n_seeds: args.seeds,
        base_seed: args.base_seed,
        ..VerifyConfig::default()
    };
    let report = verify_convergence(&cfg).map_err(|e| Failure::Validation(e.to_string()))?;
    std::fs::create_dir_all(&args.output).map_err(|e| io_failure(&args.output, e))?;

    let path = args.output.join("convergence.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_failure(&path, e))?;
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    w.write_record([
        "preset",
        "n",
        "seeds",
        "conservative_failures",
        "median_ordinary_vs_conservative",
        "median_ordinary_vs_truth",
        "median_conservative_vs_truth",
    ])
    .map_err(|e| io_failure(&path, e))?;
    for r in &report.rows {
        w.write_record([
            r.preset.to_string(),
            r.n.to_string(),
            r.seeds.to_string(),
            r.conservative_failures.to_string(),
            opt(r.median_ordinary_vs_conservative),
            r.median_ordinary_vs_truth.to_string(),
            opt(r.median_conservative_vs_truth),
        ])
        .map_err(|e| io_failure(&path, e))?;
    }
    w.flush().map_err(|e| io_failure(&path, e))?;

    let path = args.output.join("checks.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_failure(&path, e))?;
    w.write_record(["preset", "regular_assumptions", "ordinary_vs_truth_decreasing", "ordinary_vs_conservative_decreasing"])
        .map_err(|e| io_failure(&path, e))?;
    let mut failed = Vec::new();
    for c in report.checks() {
        w.write_record([
            c.preset.to_string(),
            c.regular_assumptions.to_string(),
            c.ordinary_vs_truth_decreasing.to_string(),
            c.ordinary_vs_conservative_decreasing.to_string(),
        ])
        .map_err(|e| io_failure(&path, e))?;
        let ok = c.ordinary_vs_truth_decreasing && c.ordinary_vs_conservative_decreasing;
        println!("{:<12} {}", c.preset, if ok { "decreasing" } else { "NOT decreasing" });
        if c.regular_assumptions && !ok {
            failed.push(c.preset.to_string());
        }
    }
    w.flush().map_err(|e| io_failure(&path, e))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!("convergence not monotone for {}", failed.join(", "))))
    }
}

fn curves(args: CurvesArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.bootstrap_resamples {
        cfg.bootstrap_resamples = b;
    }
    if let Some(c) = args.ci_level {
        cfg.ci_level = c;
    }
    if cfg.bootstrap_resamples == 0 || !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0) {
        return Err(Failure::Validation("bootstrap needs resamples >= 1 and ci_level in (0, 1)".into()));
    }
    let groups = run_curves(&args.curves, &args.meta, &args.output, &cfg)?;
    println!("groups={}", groups.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Analyze(a) => analyze(a),
        Command::Synth(a) => synth(a),
        Command::Verify(a) => verify(a),
        Command::Curves(a) => curves(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
