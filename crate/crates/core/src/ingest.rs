//! Streaming ingestion of fix files and participant metadata.
//!
//! Fix files are delimited text with a header row naming the columns
//! `participant_id`, `t`, `lon` and `lat` (any order, extra columns ignored).
//! Comma is the default delimiter; a tab-separated header is detected.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use csv::{ByteRecord, ReaderBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{AgeGroup, ParticipantMeta, Sex};
use crate::geo::{clip_to_window, DistanceFormula, GpsFix, GridSpec, ReferenceFrame, Trajectory};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{path}: missing column {column:?} in header")]
    MissingColumn { path: PathBuf, column: &'static str },

    #[error("{path}: no header row")]
    EmptyInput { path: PathBuf },

    #[error("{path} line {line}: {reason}")]
    MalformedRecord { path: PathBuf, line: u64, reason: String },
}

impl IngestError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Per-participant cleaning settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub grid: GridSpec,
    /// Time clip; `None` keeps all timestamps.
    pub frame: Option<ReferenceFrame>,
    pub jitter_m: f64,
    pub distance: DistanceFormula,
}

/// Counts for one participant, from raw records to retained fixes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub participant_id: String,
    pub read: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub jitter_dropped: usize,
    pub outside_frame: usize,
    pub outside_window: usize,
    pub retained: usize,
}

/// Raw records of one participant as read from the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParticipant {
    pub participant_id: String,
    pub fixes: Vec<GpsFix>,
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedParticipant {
    pub trajectory: Trajectory,
    pub report: ParticipantReport,
}

/// Whole-file counts from one ingestion pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: u64,
    pub malformed_skipped: u64,
    /// Line numbers of skipped records, capped at [`MAX_REPORTED_LINES`].
    pub malformed_lines: Vec<u64>,
    pub participants: usize,
    /// Whether each participant's records were contiguous in the file. When
    /// they were not the whole file had to be buffered.
    pub grouped: bool,
}

pub const MAX_REPORTED_LINES: usize = 100;

/// Sort, deduplicate timestamps, drop jitter and clip one participant.
///
/// Fixes are ordered by time, then position, so that the fix kept among
/// several sharing a timestamp does not depend on input order. A fix closer
/// than `jitter_m` to the last kept fix is dropped.
pub fn prepare_participant(raw: RawParticipant, opts: &PrepareOptions) -> PreparedParticipant {
    let RawParticipant {
        participant_id,
        mut fixes,
        malformed,
    } = raw;
    let read = fixes.len() + malformed;
    fixes.sort_unstable_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.lon.total_cmp(&b.lon))
            .then(a.lat.total_cmp(&b.lat))
    });
    let (traj, duplicates) = Trajectory::from_fixes(participant_id, fixes);

    let mut jitter_dropped = 0;
    let traj = if opts.jitter_m > 0.0 {
        let id = traj.participant_id.clone();
        let mut kept: Vec<GpsFix> = Vec::with_capacity(traj.len());
        for fix in traj.into_fixes() {
            match kept.last() {
                Some(last) if opts.distance.distance(last, &fix) < opts.jitter_m => jitter_dropped += 1,
                _ => kept.push(fix),
            }
        }
        Trajectory::new(id, kept).expect("filtering keeps time order")
    } else {
        traj
    };

    let frame = opts.frame.unwrap_or(ReferenceFrame {
        t_min: f64::NEG_INFINITY,
        t_max: f64::INFINITY,
    });
    let clipped = clip_to_window(&traj, &opts.grid, &frame);
    let report = ParticipantReport {
        participant_id: traj.participant_id.clone(),
        read,
        malformed,
        duplicates,
        jitter_dropped,
        outside_frame: clipped.dropped_outside_frame,
        outside_window: clipped.dropped_outside_window,
        retained: clipped.trajectory.len(),
    };
    PreparedParticipant {
        trajectory: clipped.trajectory,
        report,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 16, f))
        .map_err(|e| IngestError::io(path, e))
}

fn sniff_delimiter(path: &Path) -> Result<u8, IngestError> {
    let mut first = String::new();
    open(path)?
        .read_line(&mut first)
        .map_err(|e| IngestError::io(path, e))?;
    if first.trim().is_empty() {
        return Err(IngestError::EmptyInput {
            path: path.to_path_buf(),
        });
    }
    Ok(if first.contains('\t') && !first.contains(',') { b'\t' } else { b',' })
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, IngestError> {
    let delimiter = sniff_delimiter(path)?;
    Ok(ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn column_index(
    headers: &ByteRecord,
    path: &Path,
    column: &'static str,
) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(column.as_bytes()))
        .ok_or(IngestError::MissingColumn {
            path: path.to_path_buf(),
            column,
        })
}

struct FixColumns {
    id: usize,
    t: usize,
    lon: usize,
    lat: usize,
}

impl FixColumns {
    fn from_reader(rdr: &mut csv::Reader<BufReader<File>>, path: &Path) -> Result<Self, IngestError> {
        let headers = rdr.byte_headers().map_err(|e| IngestError::io(path, e))?.clone();
        Ok(FixColumns {
            id: column_index(&headers, path, "participant_id")?,
            t: column_index(&headers, path, "t")?,
            lon: column_index(&headers, path, "lon")?,
            lat: column_index(&headers, path, "lat")?,
        })
    }

    fn parse(&self, rec: &ByteRecord) -> Result<GpsFix, String> {
        let field = |i: usize, name: &str| -> Result<f64, String> {
            let raw = rec.get(i).ok_or_else(|| format!("missing field {name}"))?;
            let text = std::str::from_utf8(raw).map_err(|_| format!("{name} is not UTF-8"))?;
            text.parse::<f64>()
                .map_err(|_| format!("{name} {text:?} is not a number"))
        };
        let t = field(self.t, "t")?;
        let lon = field(self.lon, "lon")?;
        let lat = field(self.lat, "lat")?;
        GpsFix::new(t, lon, lat).map_err(|e| e.to_string())
    }
}

fn participant_id(rec: &ByteRecord, idx: usize) -> Option<&str> {
    rec.get(idx)
        .and_then(|raw| std::str::from_utf8(raw).ok())
        .filter(|s| !s.is_empty())
}

/// One cheap pass reading only the id column: true if every participant's
/// records form a single contiguous run.
fn records_grouped(path: &Path) -> Result<bool, IngestError> {
    let mut rdr = reader(path)?;
    let headers = rdr.byte_headers().map_err(|e| IngestError::io(path, e))?.clone();
    let id_idx = column_index(&headers, path, "participant_id")?;
    let mut finished: HashSet<Vec<u8>> = HashSet::new();
    let mut current: Option<Vec<u8>> = None;
    let mut rec = ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => return Ok(true),
            Ok(true) => {}
            // reported with its line number by the main pass
            Err(_) => continue,
        }
        let Some(id) = rec.get(id_idx) else { continue };
        if current.as_deref() == Some(id) {
            continue;
        }
        if finished.contains(id) {
            return Ok(false);
        }
        if let Some(prev) = current.replace(id.to_vec()) {
            finished.insert(prev);
        }
    }
}

/// Streams participants from a fix file in batches of roughly `batch_fixes`
/// fixes, handing each batch to `sink` in file order.
///
/// Memory stays bounded by the batch size plus the largest participant when
/// every participant's records are contiguous. Otherwise the file is
/// buffered whole and participants are emitted in id order. A malformed
/// record aborts with its line number unless `skip_bad` is set, in which case
/// it is counted against its participant (when the id is readable).
pub fn stream_participants<E>(
    path: &Path,
    skip_bad: bool,
    batch_fixes: usize,
    mut sink: impl FnMut(Vec<RawParticipant>) -> Result<(), E>,
) -> Result<Result<IngestSummary, E>, IngestError> {
    let grouped = records_grouped(path)?;
    if !grouped {
        log::warn!(
            "{}: participant records are not contiguous; buffering the whole file",
            path.display()
        );
    }
    let mut rdr = reader(path)?;
    let cols = FixColumns::from_reader(&mut rdr, path)?;
    let mut summary = IngestSummary {
        grouped,
        ..IngestSummary::default()
    };

    let mut batch: Vec<RawParticipant> = Vec::new();
    let mut batch_size = 0usize;
    let mut buffered: BTreeMap<String, RawParticipant> = BTreeMap::new();
    let mut current: Option<RawParticipant> = None;
    let mut rec = ByteRecord::new();

    let malformed = |summary: &mut IngestSummary, line: u64, reason: String| {
        if !skip_bad {
            return Err(IngestError::MalformedRecord {
                path: path.to_path_buf(),
                line,
                reason,
            });
        }
        log::debug!("skipping line {line}: {reason}");
        summary.malformed_skipped += 1;
        if summary.malformed_lines.len() < MAX_REPORTED_LINES {
            summary.malformed_lines.push(line);
        }
        Ok(())
    };

    loop {
        let line = rdr.position().line();
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                summary.records += 1;
                malformed(&mut summary, line, e.to_string())?;
                continue;
            }
        }
        summary.records += 1;
        let line = rec.position().map_or(line, |p| p.line());
        let parsed = cols.parse(&rec);
        let Some(id) = participant_id(&rec, cols.id) else {
            malformed(&mut summary, line, "missing participant_id".into())?;
            continue;
        };

        let slot = if grouped {
            if current.as_ref().is_none_or(|c| c.participant_id != id) {
                if let Some(done) = current.take() {
                    batch_size += done.fixes.len();
                    batch.push(done);
                    if batch_size >= batch_fixes {
                        summary.participants += batch.len();
                        if let Err(e) = sink(std::mem::take(&mut batch)) {
                            return Ok(Err(e));
                        }
                        batch_size = 0;
                    }
                }
                current = Some(RawParticipant {
                    participant_id: id.to_string(),
                    fixes: Vec::new(),
                    malformed: 0,
                });
            }
            current.as_mut().expect("just set")
        } else {
            buffered
                .entry(id.to_string())
                .or_insert_with(|| RawParticipant {
                    participant_id: id.to_string(),
                    fixes: Vec::new(),
                    malformed: 0,
                })
        };
        match parsed {
            Ok(fix) => slot.fixes.push(fix),
            Err(reason) => {
                slot.malformed += 1;
                malformed(&mut summary, line, reason)?;
            }
        }
    }

    if grouped {
        batch.extend(current);
        if !batch.is_empty() {
            summary.participants += batch.len();
            if let Err(e) = sink(batch) {
                return Ok(Err(e));
            }
        }
    } else {
        let mut pending: Vec<RawParticipant> = Vec::new();
        let mut size = 0;
        for (_, p) in buffered {
            size += p.fixes.len();
            pending.push(p);
            if size >= batch_fixes {
                summary.participants += pending.len();
                if let Err(e) = sink(std::mem::take(&mut pending)) {
                    return Ok(Err(e));
                }
                size = 0;
            }
        }
        if !pending.is_empty() {
            summary.participants += pending.len();
            if let Err(e) = sink(pending) {
                return Ok(Err(e));
            }
        }
    }
    Ok(Ok(summary))
}

/// Reads a whole fix file and returns cleaned trajectories in emission
/// order with their reports.
pub fn ingest_file(
    path: &Path,
    opts: &PrepareOptions,
    skip_bad: bool,
) -> Result<(Vec<PreparedParticipant>, IngestSummary), IngestError> {
    let mut out = Vec::new();
    let summary = stream_participants::<std::convert::Infallible>(path, skip_bad, usize::MAX, |batch| {
        out.extend(batch.into_iter().map(|p| prepare_participant(p, opts)));
        Ok(())
    })?;
    let Ok(summary) = summary;
    Ok((out, summary))
}

/// Reads participant metadata with columns `participant_id`, `sex` and
/// `age_group` (a group name or an age in years).
pub fn read_meta(path: &Path) -> Result<BTreeMap<String, ParticipantMeta>, IngestError> {
    let mut rdr = reader(path)?;
    let headers = rdr.byte_headers().map_err(|e| IngestError::io(path, e))?.clone();
    let id_idx = column_index(&headers, path, "participant_id")?;
    let sex_idx = column_index(&headers, path, "sex")?;
    let age_idx = column_index(&headers, path, "age_group")?;
    let mut out = BTreeMap::new();
    let mut rec = ByteRecord::new();
    loop {
        let line = rdr.position().line();
        let bad = |reason: String| IngestError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason,
        };
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(bad(e.to_string())),
        }
        let text = |i: usize| -> Result<&str, IngestError> {
            rec.get(i)
                .and_then(|raw| std::str::from_utf8(raw).ok())
                .ok_or_else(|| bad(format!("missing or non-UTF-8 field {i}")))
        };
        let id = text(id_idx)?;
        if id.is_empty() {
            return Err(bad("missing participant_id".into()));
        }
        let sex: Sex = text(sex_idx)?.parse().map_err(|e: crate::Error| bad(e.to_string()))?;
        let age_group: AgeGroup = text(age_idx)?.parse().map_err(|e: crate::Error| bad(e.to_string()))?;
        let meta = ParticipantMeta {
            participant_id: id.to_string(),
            sex,
            age_group,
        };
        if out.insert(id.to_string(), meta).is_some() {
            return Err(bad(format!("duplicate participant {id:?}")));
        }
    }
    Ok(out)
}

/// Peak resident set size of this process in bytes, where the platform
/// reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn grid() -> GridSpec {
        GridSpec::new(6.0, 46.0, 1000, 1000, 28.0).unwrap()
    }

    fn opts() -> PrepareOptions {
        PrepareOptions {
            grid: grid(),
            frame: None,
            jitter_m: 0.0,
            distance: DistanceFormula::Haversine,
        }
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_line_file_gives_one_trajectory() {
        let f = file("participant_id,t,lon,lat\na,0,6.01,46.01\na,60,6.011,46.01\na,120,6.012,46.01\n");
        let (parts, summary) = ingest_file(f.path(), &opts(), false).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].trajectory.len(), 3);
        assert_eq!(summary.records, 3);
        assert!(summary.grouped);
    }

    #[test]
    fn columns_are_found_by_name_and_tabs_are_accepted() {
        let f = file("lat\tlon\tt\tparticipant_id\n46.01\t6.01\t5\tx\n46.01\t6.02\t9\tx\n");
        let (parts, _) = ingest_file(f.path(), &opts(), false).unwrap();
        let fixes = parts[0].trajectory.fixes();
        assert_eq!(fixes[0], GpsFix::new(5.0, 6.01, 46.01).unwrap());
        assert_eq!(fixes[1].lon, 6.02);
    }

    #[test]
    fn malformed_record_reports_its_line() {
        let f = file("participant_id,t,lon,lat\na,0,6.01,46.01\na,60,6.01,north\na,120,6.01,46.02\n");
        match ingest_file(f.path(), &opts(), false) {
            Err(IngestError::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed record, got {other:?}"),
        }
        let (parts, summary) = ingest_file(f.path(), &opts(), true).unwrap();
        assert_eq!(parts[0].trajectory.len(), 2);
        assert_eq!(parts[0].report.malformed, 1);
        assert_eq!(parts[0].report.read, 3);
        assert_eq!(summary.malformed_skipped, 1);
        assert_eq!(summary.malformed_lines, vec![3]);
    }

    #[test]
    fn missing_column_is_reported() {
        let f = file("participant_id,time,lon,lat\na,0,6.01,46.01\n");
        assert!(matches!(
            ingest_file(f.path(), &opts(), false),
            Err(IngestError::MissingColumn { column: "t", .. })
        ));
    }

    #[test]
    fn dedup_jitter_and_clip_are_counted() {
        let raw = RawParticipant {
            participant_id: "p".into(),
            fixes: vec![
                GpsFix::new(30.0, 6.01, 46.01).unwrap(),
                GpsFix::new(0.0, 6.01, 46.01).unwrap(),
                GpsFix::new(0.0, 6.02, 46.01).unwrap(),
                // about 1 m from the previous fix
                GpsFix::new(60.0, 6.01001, 46.01).unwrap(),
                GpsFix::new(90.0, 7.5, 46.01).unwrap(),
                GpsFix::new(500.0, 6.03, 46.01).unwrap(),
            ],
            malformed: 0,
        };
        let o = PrepareOptions {
            jitter_m: 5.0,
            frame: Some(ReferenceFrame::new(0.0, 100.0).unwrap()),
            ..opts()
        };
        let p = prepare_participant(raw, &o);
        assert_eq!(p.report.duplicates, 1);
        assert_eq!(p.report.jitter_dropped, 2);
        assert_eq!(p.report.outside_window, 1);
        assert_eq!(p.report.outside_frame, 1);
        assert_eq!(p.report.retained, 1);
        // the smaller longitude wins the duplicate timestamp
        assert_eq!(p.trajectory.fixes()[0].lon, 6.01);
    }

    #[test]
    fn shuffled_file_yields_identical_trajectories() {
        let rows = [
            "a,0,6.01,46.01",
            "a,60,6.02,46.01",
            "b,10,6.03,46.02",
            "a,60,6.015,46.01",
            "b,20,6.04,46.02",
            "a,120,6.05,46.01",
        ];
        let grouped = file(&format!("participant_id,t,lon,lat\n{}\n", rows.join("\n")));
        let mut reversed: Vec<&str> = rows.to_vec();
        reversed.reverse();
        let shuffled = file(&format!("participant_id,t,lon,lat\n{}\n", reversed.join("\n")));
        let (a, sa) = ingest_file(grouped.path(), &opts(), false).unwrap();
        let (b, sb) = ingest_file(shuffled.path(), &opts(), false).unwrap();
        assert!(!sa.grouped && !sb.grouped);
        let trajs = |v: Vec<PreparedParticipant>| v.into_iter().map(|p| p.trajectory).collect::<Vec<_>>();
        assert_eq!(trajs(a), trajs(b));
    }

    #[test]
    fn batches_respect_the_fix_budget() {
        let mut text = String::from("participant_id,t,lon,lat\n");
        for p in 0..5 {
            for i in 0..4 {
                text.push_str(&format!("p{p},{i},6.01,46.01\n"));
            }
        }
        let f = file(&text);
        let mut sizes = Vec::new();
        let summary = stream_participants::<()>(f.path(), false, 8, |batch| {
            sizes.push(batch.len());
            Ok(())
        })
        .unwrap()
        .unwrap();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(summary.participants, 5);
        assert_eq!(summary.records, 20);
    }

    #[test]
    fn meta_parses_names_and_ages() {
        let f = file("participant_id,sex,age_group\na,F,27\nb,male,old\nc,,\n");
        let meta = read_meta(f.path()).unwrap();
        assert_eq!(meta["a"].sex, Sex::Female);
        assert_eq!(meta["a"].age_group, AgeGroup::Young);
        assert_eq!(meta["b"].age_group, AgeGroup::Old);
        assert_eq!(meta["c"].sex, Sex::Unknown);
        let bad = file("participant_id,sex,age_group\na,F,27\na,M,30\n");
        assert!(matches!(read_meta(bad.path()), Err(IngestError::MalformedRecord { line: 3, .. })));
    }
}
