//! End-to-end runs: ingest, per-participant analysis, cohort aggregation and
//! the output bundle.
//!
//! Every run writes into one directory with stable file names. All rows pass
//! through a single writer in a fixed order, so identical inputs and config
//! give byte-identical bundles.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::activity::CellSequence;
use crate::cohort::{
    group_lct_curves, summarize, summarize_measures, GroupCurve, ParticipantCurve, ParticipantMeasures,
    ParticipantMeta,
};
use crate::components::connected_components;
use crate::config::{ConfigError, RunConfig};
use crate::error::Error;
use crate::geo::{ReferenceFrame, Trajectory};
use crate::ingest::{
    prepare_participant, read_meta, stream_participants, IngestError, IngestSummary, ParticipantReport,
    PrepareOptions, PreparedParticipant,
};
use crate::lct::{ape_series, last_crossing_time, mape, weekly_ticks, ApeSample, ApeSeries};
use crate::period::{
    lct_distribution, lct_level_set, level_set, period_mean_series_with, ranking_distribution, split_periods,
    MeanActivitySeries,
};
use crate::velocity::{average_velocity_series_with, MPS_TO_KM_PER_WEEK, WEEK_S};

pub const INGEST_REPORT: &str = "ingest_report.csv";
pub const ACTIVITY: &str = "activity.csv";
pub const VELOCITY_SERIES: &str = "velocity_series.csv";
pub const PARTICIPANT_LCT: &str = "participant_lct.csv";
pub const LEVELSET_CURVES: &str = "levelset_curves.csv";
pub const LEVELSET_COHORT: &str = "levelset_cohort.csv";
pub const SUMMARY: &str = "summary.csv";
pub const MAPE: &str = "mape.csv";
pub const VELOCITY_COHORT: &str = "velocity_cohort.csv";
pub const GROUP_CURVES: &str = "group_curves.csv";
pub const MANIFEST: &str = "manifest.json";

/// Files written by `analyze`, in writing order (the manifest comes last).
pub const ANALYZE_OUTPUTS: [&str; 10] = [
    INGEST_REPORT,
    VELOCITY_SERIES,
    PARTICIPANT_LCT,
    LEVELSET_CURVES,
    LEVELSET_COHORT,
    SUMMARY,
    MAPE,
    VELOCITY_COHORT,
    GROUP_CURVES,
    MANIFEST,
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },

    #[error("participant {participant}: {source}")]
    Participant { participant: String, source: Error },

    #[error(transparent)]
    Analysis(#[from] Error),
}

impl PipelineError {
    /// Process exit code: 1 for invalid configuration, 2 for data and I/O
    /// errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Failures that describe the participant's data rather than a bug or a bad
/// setting. These become NA entries instead of aborting the run.
fn is_data_condition(e: &Error) -> bool {
    matches!(
        e,
        Error::TooFewFixes(_)
            | Error::ZeroTerminalValue
            | Error::EmptySeries
            | Error::EmptySequence
            | Error::InvalidFrame { .. }
            | Error::NoStationaryPairs
            | Error::FrameTooShort { .. }
            | Error::AllPeriodsEmpty
            | Error::EmptyTerminalLevelSet
    )
}

/// Level-set stability of one participant at one alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPoint {
    pub alpha: f64,
    /// Last crossing, in periods.
    pub lct: Option<usize>,
    /// Size and component count of the terminal level set.
    pub cells: usize,
    pub n_components: usize,
}

/// Everything computed for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantAnalysis {
    pub report: ParticipantReport,
    pub frame: Option<ReferenceFrame>,
    /// Empty when every measure was computed.
    pub issues: Vec<String>,
    /// `(tau seconds, velocity m/s, APE)` at each observation after the first.
    pub velocity: Vec<(f64, f64, f64)>,
    pub lct_velocity: Option<f64>,
    /// APE sampled at weekly ticks, for cohort MAPE.
    pub ape_ticks: Option<ApeSeries>,
    pub n_periods: Option<usize>,
    pub skipped_periods: usize,
    pub lct_distribution: Option<usize>,
    pub lct_level_set: Option<usize>,
    pub level_curve: Vec<LevelPoint>,
}

impl ParticipantAnalysis {
    pub fn participant_id(&self) -> &str {
        &self.report.participant_id
    }

    pub fn status(&self) -> String {
        if self.issues.is_empty() {
            "ok".into()
        } else {
            self.issues.join("; ")
        }
    }
}

/// Reduces an APE series to its values at weekly ticks plus a closing zero
/// at the horizon. Step interpolation of the result agrees with the full
/// series at every weekly tick, including ticks past this participant's
/// horizon.
fn compact_ape(ape: &ApeSeries) -> crate::Result<ApeSeries> {
    let horizon = ape.horizon();
    let mut samples: Vec<ApeSample> = weekly_ticks(horizon)
        .into_iter()
        .map(|tau| ApeSample {
            tau,
            ape: ape.value_at(tau),
        })
        .collect();
    if samples.last().is_none_or(|s| s.tau < horizon) {
        samples.push(ApeSample {
            tau: horizon,
            ape: ape.value_at(horizon),
        });
    }
    ApeSeries::new(samples, horizon)
}

fn participant_frame(traj: &Trajectory, cfg: &RunConfig) -> crate::Result<ReferenceFrame> {
    if let Some(frame) = cfg.frame() {
        return Ok(frame);
    }
    match (traj.fixes().first(), traj.fixes().last()) {
        (Some(first), Some(last)) => ReferenceFrame::new(first.t, last.t),
        _ => Err(Error::TooFewFixes(0)),
    }
}

/// Period series of one participant under the configured estimator.
pub fn activity_series(
    traj: &Trajectory,
    frame: ReferenceFrame,
    cfg: &RunConfig,
) -> crate::Result<MeanActivitySeries> {
    let seq = CellSequence::from_trajectory(traj, &cfg.grid, frame)?;
    let (_, periods) = split_periods(&seq, cfg.period_length_s)?;
    period_mean_series_with(&periods, cfg.estimator, cfg.period_indexing)
}

/// Computes the three stability measures and the level-set curve.
///
/// Data conditions (too few fixes, a frame shorter than one period, no
/// stationary pairs...) are recorded as issues with the affected measures
/// left empty. Other errors are returned with participant context.
pub fn analyze_participant(
    prepared: PreparedParticipant,
    cfg: &RunConfig,
) -> Result<ParticipantAnalysis, PipelineError> {
    let PreparedParticipant { trajectory, report } = prepared;
    let mut out = ParticipantAnalysis {
        report,
        frame: None,
        issues: Vec::new(),
        velocity: Vec::new(),
        lct_velocity: None,
        ape_ticks: None,
        n_periods: None,
        skipped_periods: 0,
        lct_distribution: None,
        lct_level_set: None,
        level_curve: Vec::new(),
    };
    let id = trajectory.participant_id.clone();
    let check = |what: &str, e: Error, issues: &mut Vec<String>| -> Result<(), PipelineError> {
        if is_data_condition(&e) {
            issues.push(format!("{what}: {e}"));
            Ok(())
        } else {
            Err(PipelineError::Participant {
                participant: id.clone(),
                source: e,
            })
        }
    };

    let frame = match participant_frame(&trajectory, cfg) {
        Ok(f) => f,
        Err(e) => {
            check("frame", e, &mut out.issues)?;
            return Ok(out);
        }
    };
    out.frame = Some(frame);

    let velocity = average_velocity_series_with(&trajectory, &frame, cfg.distance)
        .and_then(|z| ape_series(&z).map(|a| (z, a)));
    match velocity {
        Ok((z, ape)) => {
            out.lct_velocity = Some(last_crossing_time(&ape, cfg.gamma).lct);
            out.velocity = z
                .samples()
                .iter()
                .zip(ape.samples())
                .map(|(s, a)| (s.tau, s.value, a.ape))
                .collect();
            out.ape_ticks = Some(compact_ape(&ape)?);
        }
        Err(e) => check("velocity", e, &mut out.issues)?,
    }

    let series = match activity_series(&trajectory, frame, cfg) {
        Ok(s) => s,
        Err(e) => {
            check("activity", e, &mut out.issues)?;
            return Ok(out);
        }
    };
    out.n_periods = Some(series.n_calendar_periods);
    out.skipped_periods = series.skipped;
    out.lct_distribution = Some(lct_distribution(&series, cfg.gamma));

    let terminal_rank = ranking_distribution(series.terminal());
    for &alpha in &cfg.alphas {
        let terminal = level_set(&terminal_rank, alpha);
        let lct = match lct_level_set(&series, alpha, cfg.gamma) {
            Ok(v) => Some(v),
            Err(Error::EmptyTerminalLevelSet) => None,
            Err(e) => {
                check("level set", e, &mut out.issues)?;
                None
            }
        };
        out.level_curve.push(LevelPoint {
            alpha,
            lct,
            cells: terminal.len(),
            n_components: connected_components(&terminal.cells, &cfg.grid).n_components,
        });
    }
    match lct_level_set(&series, cfg.level_alpha, cfg.gamma) {
        Ok(v) => out.lct_level_set = Some(v),
        Err(e) => check("level set", e, &mut out.issues)?,
    }
    Ok(out)
}

/// SHA-256 and size of a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> std::io::Result<FileDigest> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Provenance record written as `manifest.json`. Contains no timestamps or
/// output locations so that reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, FileDigest>,
    pub ingest: Option<IngestSummary>,
    pub participants: usize,
    pub participants_complete: usize,
    pub meta_without_fixes: Vec<String>,
    pub outputs: BTreeMap<String, FileDigest>,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: "ok".into(),
            error: None,
            config: cfg.clone(),
            seeds: BTreeMap::from([("bootstrap".to_string(), cfg.seed)]),
            inputs: BTreeMap::new(),
            ingest: None,
            participants: 0,
            participants_complete: 0,
            meta_without_fixes: Vec::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| output_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| output_error(path, e))
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f)
}

/// A CSV file in the output directory.
struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, PipelineError> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| output_error(&path, e))?;
        let mut writer = csv::Writer::from_writer(BufWriter::with_capacity(1 << 16, file));
        writer.write_record(header).map_err(|e| output_error(&path, e))?;
        Ok(Table { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<(), PipelineError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| output_error(&self.path, e))
    }

    fn finish(mut self) -> Result<(), PipelineError> {
        self.writer.flush().map_err(|e| output_error(&self.path, e))
    }
}

fn write_manifest(dir: &Path, manifest: &mut Manifest, written: &[&str]) -> Result<(), PipelineError> {
    for name in written {
        let path = dir.join(name);
        if path.is_file() {
            let digest = digest_file(&path).map_err(|e| output_error(&path, e))?;
            manifest.outputs.insert(name.to_string(), digest);
        }
    }
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| output_error(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| output_error(&path, e))
}

fn prepare_options(cfg: &RunConfig) -> PrepareOptions {
    PrepareOptions {
        grid: cfg.grid,
        frame: cfg.frame(),
        jitter_m: cfg.jitter_m,
        distance: cfg.distance,
    }
}

fn thread_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, PipelineError> {
    path.as_deref()
        .ok_or_else(|| PipelineError::Config(ConfigError::Invalid(format!("no {what} path given"))))
}

fn record_input(manifest: &mut Manifest, name: &str, path: &Path) -> Result<(), PipelineError> {
    let digest = digest_file(path).map_err(|e| PipelineError::Ingest(IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }))?;
    manifest.inputs.insert(name.into(), digest);
    Ok(())
}

fn report_row(r: &ParticipantReport) -> [String; 8] {
    [
        r.participant_id.clone(),
        r.read.to_string(),
        r.malformed.to_string(),
        r.duplicates.to_string(),
        r.jitter_dropped.to_string(),
        r.outside_frame.to_string(),
        r.outside_window.to_string(),
        r.retained.to_string(),
    ]
}

const REPORT_HEADER: [&str; 8] = [
    "participant_id",
    "read",
    "malformed",
    "duplicates",
    "jitter_dropped",
    "outside_frame",
    "outside_window",
    "retained",
];

/// Runs `body` with the output directory prepared, then writes the manifest
/// whether or not `body` succeeded.
fn with_bundle(
    command: &str,
    cfg: &RunConfig,
    outputs: &[&str],
    body: impl FnOnce(&Path, &mut Manifest) -> Result<(), PipelineError> + Send,
) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let dir = require(&cfg.output, "output")?.to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| output_error(&dir, e))?;
    let mut manifest = Manifest::new(command, cfg);
    let result = thread_pool(cfg)?.install(|| body(&dir, &mut manifest));
    if let Err(e) = &result {
        manifest.status = "failed".into();
        manifest.error = Some(e.to_string());
    }
    write_manifest(&dir, &mut manifest, outputs)?;
    result.map(|_| manifest)
}

/// Ingest plus one activity estimate per participant over its whole frame.
/// Writes `ingest_report.csv`, `activity.csv` and the manifest.
pub fn run_ingest(cfg: &RunConfig) -> Result<Manifest, PipelineError> {
    with_bundle("ingest", cfg, &[INGEST_REPORT, ACTIVITY], |dir, manifest| {
        let input = require(&cfg.input, "input")?;
        record_input(manifest, "fixes", input)?;
        let mut report = Table::create(dir, INGEST_REPORT, &REPORT_HEADER)?;
        let mut activity = Table::create(dir, ACTIVITY, &["participant_id", "row", "col", "mass"])?;
        let opts = prepare_options(cfg);
        let mut complete = 0;
        let summary = stream_participants::<PipelineError>(input, cfg.skip_bad, cfg.batch_fixes, |batch| {
            let results: Vec<_> = batch
                .into_par_iter()
                .map(|raw| {
                    let p = prepare_participant(raw, &opts);
                    let dist = participant_frame(&p.trajectory, cfg)
                        .and_then(|frame| CellSequence::from_trajectory(&p.trajectory, &cfg.grid, frame))
                        .and_then(|seq| cfg.estimator.estimate(&seq));
                    (p.report, dist)
                })
                .collect();
            for (r, dist) in results {
                report.row(report_row(&r))?;
                match dist {
                    Ok(dist) => {
                        complete += 1;
                        for (c, m) in dist.iter() {
                            activity.row([
                                r.participant_id.clone(),
                                c.row.to_string(),
                                c.col.to_string(),
                                fmt_f(*m),
                            ])?;
                        }
                    }
                    Err(e) if is_data_condition(&e) => {
                        log::warn!("participant {}: {e}", r.participant_id);
                    }
                    Err(e) => {
                        return Err(PipelineError::Participant {
                            participant: r.participant_id,
                            source: e,
                        })
                    }
                }
            }
            Ok(())
        })?;
        report.finish()?;
        activity.finish()?;
        let summary = summary?;
        manifest.participants = summary.participants;
        manifest.participants_complete = complete;
        manifest.ingest = Some(summary);
        Ok(())
    })
}

/// Per-participant values kept for cohort aggregation once the per-row
/// outputs are written.
struct CohortEntry {
    measures: ParticipantMeasures,
    curve: Vec<Option<f64>>,
    components: Vec<Option<usize>>,
    ape_ticks: Option<ApeSeries>,
}

struct AnalyzeTables {
    report: Table,
    velocity: Table,
    lct: Table,
    curves: Table,
}

impl AnalyzeTables {
    fn create(dir: &Path) -> Result<Self, PipelineError> {
        Ok(AnalyzeTables {
            report: Table::create(dir, INGEST_REPORT, &REPORT_HEADER)?,
            velocity: Table::create(
                dir,
                VELOCITY_SERIES,
                &["participant_id", "tau_weeks", "velocity_km_per_week", "ape"],
            )?,
            lct: Table::create(
                dir,
                PARTICIPANT_LCT,
                &[
                    "participant_id",
                    "status",
                    "frame_weeks",
                    "n_periods",
                    "skipped_periods",
                    "lct_velocity_weeks",
                    "lct_distribution_weeks",
                    "lct_level_set_weeks",
                ],
            )?,
            curves: Table::create(
                dir,
                LEVELSET_CURVES,
                &["participant_id", "gamma", "alpha", "lct_level_set_weeks", "level_set_cells", "n_components"],
            )?,
        })
    }

    fn finish(self) -> Result<(), PipelineError> {
        self.report.finish()?;
        self.velocity.finish()?;
        self.lct.finish()?;
        self.curves.finish()
    }

    fn write(&mut self, a: &ParticipantAnalysis, cfg: &RunConfig) -> Result<CohortEntry, PipelineError> {
        let id = a.participant_id();
        let periods_to_weeks = |p: usize| p as f64 * cfg.period_length_s / WEEK_S;
        self.report.row(report_row(&a.report))?;
        for &(tau, v, ape) in &a.velocity {
            self.velocity.row([
                id.to_string(),
                fmt_f(tau / WEEK_S),
                fmt_f(v * MPS_TO_KM_PER_WEEK),
                fmt_f(ape),
            ])?;
        }
        let measures = ParticipantMeasures {
            participant_id: id.to_string(),
            lct_velocity: a.lct_velocity.map(|s| s / WEEK_S),
            lct_distribution: a.lct_distribution.map(periods_to_weeks),
            lct_level_set: a.lct_level_set.map(periods_to_weeks),
        };
        self.lct.row([
            id.to_string(),
            a.status(),
            fmt_opt(a.frame.map(|f| f.duration() / WEEK_S)),
            a.n_periods.map_or("NA".into(), |n| n.to_string()),
            a.skipped_periods.to_string(),
            fmt_opt(measures.lct_velocity),
            fmt_opt(measures.lct_distribution),
            fmt_opt(measures.lct_level_set),
        ])?;
        let mut curve = vec![None; cfg.alphas.len()];
        let mut components = vec![None; cfg.alphas.len()];
        for (i, p) in a.level_curve.iter().enumerate() {
            curve[i] = p.lct.map(periods_to_weeks);
            components[i] = Some(p.n_components);
            self.curves.row([
                id.to_string(),
                fmt_f(cfg.gamma),
                fmt_f(p.alpha),
                fmt_opt(curve[i]),
                p.cells.to_string(),
                p.n_components.to_string(),
            ])?;
        }
        Ok(CohortEntry {
            measures,
            curve,
            components,
            ape_ticks: a.ape_ticks.clone(),
        })
    }
}

/// Writes `group_curves.csv`; header only when there are no curves.
pub fn write_group_curves(dir: &Path, curves: &[GroupCurve]) -> Result<(), PipelineError> {
    let mut t = Table::create(
        dir,
        GROUP_CURVES,
        &["group", "gamma", "alpha", "n", "mean_lct_weeks", "ci_low_weeks", "ci_high_weeks", "too_small"],
    )?;
    for g in curves {
        for (i, alpha) in g.alphas.iter().enumerate() {
            let ci = |v: &[f64]| v.get(i).copied().filter(|x| !x.is_nan());
            t.row([
                g.group.to_string(),
                fmt_f(g.gamma),
                fmt_f(*alpha),
                g.n[i].to_string(),
                fmt_opt(g.mean_lct[i]),
                fmt_opt(ci(&g.ci_low)),
                fmt_opt(ci(&g.ci_high)),
                g.too_small.to_string(),
            ])?;
        }
    }
    t.finish()
}

fn write_cohort(dir: &Path, cfg: &RunConfig, entries: &[CohortEntry], metas: Option<&BTreeMap<String, ParticipantMeta>>) -> Result<(), PipelineError> {
    let mut t = Table::create(
        dir,
        LEVELSET_COHORT,
        &["alpha", "n", "mean_lct_weeks", "median_lct_weeks", "mean_n_components"],
    )?;
    for (i, alpha) in cfg.alphas.iter().enumerate() {
        let s = summarize(String::new(), entries.iter().filter_map(|e| e.curve[i]).collect());
        let comps: Vec<f64> = entries.iter().filter_map(|e| e.components[i]).map(|c| c as f64).collect();
        let mean_comps = (!comps.is_empty()).then(|| comps.iter().sum::<f64>() / comps.len() as f64);
        t.row([fmt_f(*alpha), s.n.to_string(), fmt_opt(s.mean), fmt_opt(s.median), fmt_opt(mean_comps)])?;
    }
    t.finish()?;

    let mut t = Table::create(
        dir,
        SUMMARY,
        &["measure", "n", "mean_weeks", "median_weeks", "sd_weeks", "sd_defined"],
    )?;
    let rows: Vec<ParticipantMeasures> = entries.iter().map(|e| e.measures.clone()).collect();
    if !rows.is_empty() {
        for s in summarize_measures(&rows, cfg.level_alpha)? {
            t.row([
                s.measure.clone(),
                s.n.to_string(),
                fmt_opt(s.mean),
                fmt_opt(s.median),
                fmt_f(s.sd),
                s.sd_defined.to_string(),
            ])?;
        }
    }
    t.finish()?;

    let apes: Vec<ApeSeries> = entries.iter().filter_map(|e| e.ape_ticks.clone()).collect();
    let mut t = Table::create(dir, MAPE, &["tau_weeks", "mape"])?;
    let mut lct_mape = None;
    if !apes.is_empty() {
        let horizon = apes.iter().map(|a| a.horizon()).fold(0.0, f64::max);
        let series = mape(&apes, &weekly_ticks(horizon))?;
        for s in series.samples() {
            t.row([fmt_f(s.tau / WEEK_S), fmt_f(s.ape)])?;
        }
        lct_mape = Some(last_crossing_time(&series, cfg.gamma).weeks());
    }
    t.finish()?;

    let mut t = Table::create(
        dir,
        VELOCITY_COHORT,
        &["gamma", "n", "lct_mape_weeks", "mean_lct_velocity_weeks"],
    )?;
    let lcts: Vec<f64> = entries.iter().filter_map(|e| e.measures.lct_velocity).collect();
    let mean_lct = (!lcts.is_empty()).then(|| lcts.iter().sum::<f64>() / lcts.len() as f64);
    t.row([fmt_f(cfg.gamma), lcts.len().to_string(), fmt_opt(lct_mape), fmt_opt(mean_lct)])?;
    t.finish()?;

    let groups = match metas {
        Some(metas) => {
            let curves: Vec<ParticipantCurve> = entries
                .iter()
                .map(|e| ParticipantCurve {
                    participant_id: e.measures.participant_id.clone(),
                    lct: e.curve.clone(),
                })
                .collect();
            group_lct_curves(&curves, metas, &cfg.alphas, cfg.gamma, &cfg.bootstrap())?
        }
        None => Vec::new(),
    };
    write_group_curves(dir, &groups)
}

/// Full analysis of a fix file into an output bundle.
///
/// Per-participant outputs follow the order participants are emitted by
/// ingestion; cohort outputs do not depend on that order.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest, PipelineError> {
    with_bundle("analyze", cfg, &ANALYZE_OUTPUTS[..ANALYZE_OUTPUTS.len() - 1], |dir, manifest| {
        let input = require(&cfg.input, "input")?;
        record_input(manifest, "fixes", input)?;
        let metas = match &cfg.meta {
            Some(path) => {
                record_input(manifest, "meta", path)?;
                Some(read_meta(path)?)
            }
            None => None,
        };
        let mut tables = AnalyzeTables::create(dir)?;
        let mut entries: Vec<CohortEntry> = Vec::new();
        let mut complete = 0;
        let summary = stream_participants::<PipelineError>(input, cfg.skip_bad, cfg.batch_fixes, |batch| {
            let analyses: Vec<ParticipantAnalysis> = batch
                .into_par_iter()
                .map(|raw| analyze_participant(prepare_participant(raw, &prepare_options(cfg)), cfg))
                .collect::<Result<_, PipelineError>>()?;
            for a in &analyses {
                complete += usize::from(a.issues.is_empty());
                entries.push(tables.write(a, cfg)?);
            }
            Ok(())
        });
        // flush whatever was written before reporting a failure
        let flushed = tables.finish();
        let summary = summary??;
        flushed?;

        manifest.participants = summary.participants;
        manifest.participants_complete = complete;
        manifest.ingest = Some(summary);
        if let Some(metas) = &metas {
            let seen: BTreeSet<&str> = entries.iter().map(|e| e.measures.participant_id.as_str()).collect();
            manifest.meta_without_fixes = metas.keys().filter(|id| !seen.contains(id.as_str())).cloned().collect();
            for id in &manifest.meta_without_fixes {
                log::warn!("participant {id} in metadata has no fixes");
            }
        }
        write_cohort(dir, cfg, &entries, metas.as_ref())
    })
}

/// Reads `levelset_curves.csv` back into per-participant curves. Returns the
/// alpha grid, gamma and one curve per participant.
pub fn read_levelset_curves(path: &Path) -> Result<(Vec<f64>, f64, Vec<ParticipantCurve>), PipelineError> {
    let bad = |line: u64, reason: String| {
        PipelineError::Ingest(IngestError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason,
        })
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut alphas: Vec<f64> = Vec::new();
    let mut gamma = None;
    let mut rows: BTreeMap<String, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64, PipelineError> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(line, format!("field {i} is not a number")))
        };
        let g = num(1)?;
        if gamma.is_some_and(|x| x != g) {
            return Err(bad(line, "mixed gamma values".into()));
        }
        gamma = Some(g);
        let alpha = num(2)?;
        let lct = match rec.get(3) {
            Some("NA") => None,
            _ => Some(num(3)?),
        };
        let id = rec.get(0).unwrap_or_default().to_string();
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((alpha, lct));
    }
    let Some(gamma) = gamma else {
        return Err(bad(1, "no curve rows".into()));
    };
    for id in &order {
        let these: Vec<f64> = rows[id].iter().map(|r| r.0).collect();
        if alphas.is_empty() {
            alphas = these;
        } else if these != alphas {
            return Err(bad(0, format!("participant {id} uses a different alpha grid")));
        }
    }
    let curves = order
        .into_iter()
        .map(|id| ParticipantCurve {
            lct: rows[&id].iter().map(|r| r.1).collect(),
            participant_id: id,
        })
        .collect();
    Ok((alphas, gamma, curves))
}

/// Group curves from a previous run's `levelset_curves.csv` and a metadata
/// file, written to `out_dir/group_curves.csv`.
pub fn run_curves(
    curves_path: &Path,
    meta_path: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<Vec<GroupCurve>, PipelineError> {
    let (alphas, gamma, curves) = read_levelset_curves(curves_path)?;
    let metas = read_meta(meta_path)?;
    let groups = group_lct_curves(&curves, &metas, &alphas, gamma, &cfg.bootstrap())?;
    std::fs::create_dir_all(out_dir).map_err(|e| output_error(out_dir, e))?;
    write_group_curves(out_dir, &groups)?;
    Ok(groups)
}

/// Writes fixes as `participant_id,t,lon,lat` with full float precision.
pub fn write_fixes<'a>(path: &Path, trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| output_error(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 16, file);
    let io = |e: std::io::Error| output_error(path, e);
    writeln!(w, "participant_id,t,lon,lat").map_err(io)?;
    for traj in trajectories {
        for f in traj.fixes() {
            writeln!(w, "{},{},{},{}", traj.participant_id, f.t, f.lon, f.lat).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_meta<'a>(path: &Path, metas: impl IntoIterator<Item = &'a ParticipantMeta>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| output_error(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| output_error(path, e);
    w.write_record(["participant_id", "sex", "age_group"]).map_err(err)?;
    for m in metas {
        let sex = serde_json::to_value(m.sex).expect("enum serializes");
        let age = serde_json::to_value(m.age_group).expect("enum serializes");
        w.write_record([
            m.participant_id.as_str(),
            sex.as_str().unwrap_or("unknown"),
            age.as_str().unwrap_or("unknown"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| output_error(path, e))
}
