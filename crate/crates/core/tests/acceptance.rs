//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines always appear in `cargo test` output; exits nonzero
//! if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mobstab::activity::{
    conservative_estimator, ordinary_estimator, ActivityDistribution, CellSequence,
};
use mobstab::cohort::{group_lct_curves, BootstrapConfig, Group, ParticipantCurve};
use mobstab::components::connected_components;
use mobstab::config::{FrameConfig, RunConfig};
use mobstab::geo::{CellIndex, GridSpec, ReferenceFrame};
use mobstab::period::{lct_distribution, lct_level_set, level_set, ranking_distribution};
use mobstab::pipeline::{activity_series, write_fixes};
use mobstab::synth::{
    drifting_cohort, preset_grid, sample_fixes, synthetic_cohort, verify_convergence, CohortSpec, ConvergenceReport,
    Preset, SamplingScheme, VerifyConfig, DAY_S,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const TRUTH_L1_AT_MAX_RATE: f64 = 0.02;
const EQUIVALENCE_L1_AT_MAX_RATE: f64 = 0.05;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(120);
const FIXTURE_TOL: f64 = 1e-12;
const RANDOM_DISTRIBUTIONS: usize = 1000;
const RANDOM_CELL_SETS: usize = 1000;
const COHORT_SEEDS: u64 = 20;
const COHORT_PASS_SHARE: f64 = 0.9;
const PERF_FIXES: usize = 5_000_000;
const PERF_TIME_BUDGET: Duration = Duration::from_secs(60);
/// Holding the raw fixes of the performance file alone would take
/// 5e6 * 24 bytes = 120 MB, so a run under this ceiling cannot be buffering
/// the file.
const PERF_RSS_BUDGET_BYTES: u64 = 100 * 1024 * 1024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn alphas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn regular_rows(report: &ConvergenceReport) -> Vec<(Preset, Vec<f64>, Vec<Option<f64>>)> {
    Preset::ALL
        .iter()
        .filter(|p| p.regular_assumptions())
        .map(|&p| {
            let rows = report.rows_for(p);
            (
                p,
                rows.iter().map(|r| r.median_ordinary_vs_truth).collect(),
                rows.iter().map(|r| r.median_ordinary_vs_conservative).collect(),
            )
        })
        .collect()
}

fn convergence(report: &ConvergenceReport, elapsed: Duration) -> Outcome {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (p, o, _) in regular_rows(report) {
        let last = *o.last().unwrap();
        worst = worst.max(last);
        let zero = o.iter().all(|x| *x == 0.0);
        if !(zero || strictly_decreasing(&o)) || last > TRUTH_L1_AT_MAX_RATE {
            failures.push(format!("{p} {o:.4?}"));
        }
    }
    let timed = elapsed <= CONVERGENCE_BUDGET;
    outcome(
        failures.is_empty() && timed,
        format!(
            "max median L1 at n=1e4 {worst:.4} (<= {TRUTH_L1_AT_MAX_RATE}), runtime {:.1}s (<= {}s){}",
            elapsed.as_secs_f64(),
            CONVERGENCE_BUDGET.as_secs(),
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join("; ")) }
        ),
    )
}

fn equivalence(report: &ConvergenceReport) -> Outcome {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (p, _, oc) in regular_rows(report) {
        let Some(oc) = oc.into_iter().collect::<Option<Vec<f64>>>() else {
            failures.push(format!("{p} conservative undefined"));
            continue;
        };
        let last = *oc.last().unwrap();
        worst = worst.max(last);
        let zero = oc.iter().all(|x| *x == 0.0);
        if !(zero || strictly_decreasing(&oc)) || last > EQUIVALENCE_L1_AT_MAX_RATE {
            failures.push(format!("{p} {oc:.4?}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "max median ordinary-vs-conservative L1 at n=1e4 {worst:.4} (<= {EQUIVALENCE_L1_AT_MAX_RATE}){}",
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join("; ")) }
        ),
    )
}

fn random_distribution(rng: &mut ChaCha8Rng) -> ActivityDistribution {
    let support = rng.random_range(1..=40);
    let mut weights = BTreeMap::new();
    while weights.len() < support {
        let cell = CellIndex::new(rng.random_range(0..100), rng.random_range(0..100));
        // small integer weights force ties in the ranking
        let w = if rng.random_bool(0.5) {
            rng.random_range(1..=4) as f64
        } else {
            rng.random::<f64>() + 1e-3
        };
        weights.insert(cell, w);
    }
    ActivityDistribution::from_weights(weights, 10_000).unwrap()
}

/// Ranks computed from scratch: a cell's rank is the mass of all cells whose
/// mass does not exceed its own, over the total.
fn brute_ranks(pi: &ActivityDistribution) -> Vec<(CellIndex, f64)> {
    let masses: Vec<(CellIndex, f64)> = pi.iter().map(|(c, m)| (*c, *m)).collect();
    let total: f64 = masses.iter().map(|(_, m)| m).sum();
    masses
        .iter()
        .map(|(c, m)| (*c, masses.iter().filter(|(_, o)| o <= m).map(|(_, o)| o).sum::<f64>() / total))
        .collect()
}

/// Whether the library level set agrees with the brute-force ranks. Cells
/// whose rank is within rounding of alpha may fall either way, because the
/// two sums are accumulated in different orders.
fn agrees_with_brute_force(set: &BTreeSet<CellIndex>, ranks: &[(CellIndex, f64)], alpha: f64) -> bool {
    ranks.iter().all(|(c, r)| (r - alpha).abs() <= 1e-12 || (*r >= alpha) == set.contains(c))
}

fn coverage_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    let mut violations = 0;
    let mut oracle_mismatch = 0;
    for _ in 0..RANDOM_DISTRIBUTIONS {
        let pi = random_distribution(&mut rng);
        let rank = ranking_distribution(&pi);
        let brute = brute_ranks(&pi);
        for alpha in alphas() {
            cases += 1;
            let set = level_set(&rank, alpha);
            if !agrees_with_brute_force(&set.cells, &brute, alpha) {
                oracle_mismatch += 1;
            }
            let covered: f64 = set.cells.iter().map(|c| pi.get(c)).sum();
            if !(covered >= 1.0 - alpha) {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0 && oracle_mismatch == 0,
        format!("{cases} cases, {violations} coverage violations, {oracle_mismatch} level sets differing from brute force"),
    )
}

fn curve_for(traj: &mobstab::geo::Trajectory, cfg: &RunConfig, alphas: &[f64]) -> Vec<f64> {
    let frame = cfg.frame().unwrap();
    let series = activity_series(traj, frame, cfg).unwrap();
    alphas
        .iter()
        .map(|a| lct_level_set(&series, *a, cfg.gamma).unwrap() as f64)
        .collect()
}

fn daily_config(n_days: usize) -> RunConfig {
    RunConfig {
        grid: preset_grid(),
        frame: Some(FrameConfig {
            t_min: 0.0,
            t_max: n_days as f64 * DAY_S,
        }),
        period_length_s: DAY_S,
        ..RunConfig::default()
    }
}

fn nesting_and_monotonicity() -> Outcome {
    // nesting on random draws
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut nest_failures = 0;
    for _ in 0..RANDOM_DISTRIBUTIONS {
        let rank = ranking_distribution(&random_distribution(&mut rng));
        let sets: Vec<_> = alphas().iter().map(|a| level_set(&rank, *a).cells).collect();
        nest_failures += sets.windows(2).filter(|w| !w[1].is_subset(&w[0])).count();
    }

    // median over seeds of the drifting cohort's mean curve
    let cfg = daily_config(28);
    let grid_alphas = alphas();
    let per_seed: Vec<Vec<f64>> = (0..COHORT_SEEDS)
        .map(|seed| {
            let agents = drifting_cohort(10, 28, DAY_S, 288, seed).unwrap();
            let mut mean = vec![0.0; grid_alphas.len()];
            for a in &agents {
                for (m, v) in mean.iter_mut().zip(curve_for(a, &cfg, &grid_alphas)) {
                    *m += v / agents.len() as f64;
                }
            }
            mean
        })
        .collect();
    let median: Vec<f64> = (0..grid_alphas.len())
        .map(|i| {
            let mut v: Vec<f64> = per_seed.iter().map(|m| m[i]).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
        })
        .collect();
    let nonincreasing = median.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        nest_failures == 0 && nonincreasing,
        format!("{nest_failures} nesting failures; median LCT by alpha (days) {median:.2?}"),
    )
}

fn regular_commuter() -> Outcome {
    let cfg = daily_config(28);
    let frame = cfg.frame().unwrap();
    let itinerary = Preset::Commuter.itinerary(frame, DAY_S).unwrap();
    let traj = sample_fixes(&itinerary, &SamplingScheme::uniform(28 * 2000), 3);
    let series = activity_series(&traj, frame, &cfg).unwrap();
    let dist = lct_distribution(&series, 0.2);
    let ls = lct_level_set(&series, 0.2, 0.2).unwrap();
    outcome(dist == 0 && ls == 0, format!("lct_distribution {dist}, lct_level_set {ls} (gamma 0.2, alpha 0.2)"))
}

fn estimator_fixtures() -> Outcome {
    let (a, b) = (CellIndex::new(0, 0), CellIndex::new(0, 1));
    let frame = ReferenceFrame::new(0.0, 4.0).unwrap();
    let fixes = [(1.0, a), (2.0, a), (3.0, b)];
    let seq = CellSequence::new(fixes.to_vec(), frame, 4).unwrap();

    // bracketing spans with t_0 = t_min and t_{n+1} = t_max
    let t: Vec<f64> = std::iter::once(frame.t_min)
        .chain(fixes.iter().map(|f| f.0))
        .chain(std::iter::once(frame.t_max))
        .collect();
    let denom = frame.duration() + fixes[2].0 - fixes[0].0;
    let mut expect_o: BTreeMap<CellIndex, f64> = BTreeMap::new();
    for (i, (_, c)) in fixes.iter().enumerate() {
        *expect_o.entry(*c).or_default() += (t[i + 2] - t[i]) / denom;
    }
    // only same-cell consecutive pairs count
    let mut expect_c: BTreeMap<CellIndex, f64> = BTreeMap::new();
    let kept: f64 = fixes.windows(2).filter(|w| w[0].1 == w[1].1).map(|w| w[1].0 - w[0].0).sum();
    for w in fixes.windows(2).filter(|w| w[0].1 == w[1].1) {
        *expect_c.entry(w[0].1).or_default() += (w[1].0 - w[0].0) / kept;
    }

    let o = ordinary_estimator(&seq).unwrap();
    let c = conservative_estimator(&seq).unwrap();
    let close = |d: &ActivityDistribution, e: &BTreeMap<CellIndex, f64>| {
        d.support_len() == e.len() && e.iter().all(|(cell, m)| (d.get(cell) - m).abs() <= FIXTURE_TOL)
    };
    let literal = (o.get(&a) - 2.0 / 3.0).abs() <= FIXTURE_TOL
        && (o.get(&b) - 1.0 / 3.0).abs() <= FIXTURE_TOL
        && (c.get(&a) - 1.0).abs() <= FIXTURE_TOL
        && c.support_len() == 1;
    outcome(
        close(&o, &expect_o) && close(&c, &expect_c) && literal,
        format!(
            "ordinary {{A: {}, B: {}}}, conservative {{A: {}}} (tol {FIXTURE_TOL:e})",
            o.get(&a),
            o.get(&b),
            c.get(&a)
        ),
    )
}

/// Flood fill over the member cells with the 8-neighbourhood.
fn flood_fill_components(cells: &HashSet<(i64, i64)>) -> usize {
    let mut seen: HashSet<(i64, i64)> = HashSet::new();
    let mut count = 0;
    for &start in cells {
        if !seen.insert(start) {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([start]);
        while let Some((r, c)) = queue.pop_front() {
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let n = (r + dr, c + dc);
                    if cells.contains(&n) && seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    count
}

fn components() -> Outcome {
    let grid = GridSpec::new(6.0, 46.0, 64, 64, 28.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = 0;
    for _ in 0..RANDOM_CELL_SETS {
        let size = rng.random_range(0..=100);
        let span = rng.random_range(4..=30);
        let set: BTreeSet<CellIndex> = (0..size)
            .map(|_| CellIndex::new(rng.random_range(0..span), rng.random_range(0..span)))
            .collect();
        let plain: HashSet<(i64, i64)> = set.iter().map(|c| (c.row as i64, c.col as i64)).collect();
        if connected_components(&set, &grid).n_components != flood_fill_components(&plain) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{RANDOM_CELL_SETS} random sets, {mismatches} disagreements with flood fill"))
}

fn cohort_ordering() -> Outcome {
    let grid_alphas: Vec<f64> = alphas().into_iter().filter(|a| *a <= 0.5).collect();
    let mut holds = 0;
    for seed in 0..COHORT_SEEDS {
        let spec = CohortSpec {
            seed,
            ..CohortSpec::default()
        };
        let cfg = daily_config(spec.n_periods);
        let cohort = synthetic_cohort(&spec).unwrap();
        let curves: Vec<ParticipantCurve> = cohort
            .iter()
            .map(|p| ParticipantCurve {
                participant_id: p.meta.participant_id.clone(),
                lct: curve_for(&p.trajectory, &cfg, &grid_alphas).into_iter().map(Some).collect(),
            })
            .collect();
        let metas = cohort.iter().map(|p| (p.meta.participant_id.clone(), p.meta.clone())).collect();
        let boot = BootstrapConfig {
            resamples: 200,
            ..BootstrapConfig::default()
        };
        let groups = group_lct_curves(&curves, &metas, &grid_alphas, 0.2, &boot).unwrap();
        let mean = |g: Group| groups.iter().find(|c| c.group == g).unwrap().mean_lct.clone();
        let (young, middle, old) = (mean(Group::Young), mean(Group::Middle), mean(Group::Old));
        if (0..grid_alphas.len()).all(|i| old[i] < middle[i] && middle[i] < young[i]) {
            holds += 1;
        }
    }
    let share = holds as f64 / COHORT_SEEDS as f64;
    outcome(
        share >= COHORT_PASS_SHARE,
        format!("old < middle < young at every alpha <= 0.5 in {holds}/{COHORT_SEEDS} seeds (need >= {COHORT_PASS_SHARE})"),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mobstab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn performance(dir: &Path) -> Outcome {
    // 40 drifting agents x 25 days x 5000 fixes
    let agents = drifting_cohort(40, 25, DAY_S, PERF_FIXES / (40 * 25), 99).unwrap();
    let input = dir.join("perf.csv");
    write_fixes(&input, &agents).unwrap();
    let written: usize = agents.iter().map(|a| a.len()).sum();
    drop(agents);

    let out = dir.join("perf-out");
    let start = Instant::now();
    let run = run_cli(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--origin-lon",
        "6.55",
        "--origin-lat",
        "46.5",
        "--grid-cols",
        "400",
        "--grid-rows",
        "400",
        "--estimator",
        "ordinary",
        "--threads",
        "4",
    ]);
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&run.stdout);
    let rss: Option<u64> = stdout
        .lines()
        .find_map(|l| l.strip_prefix("peak_rss_bytes="))
        .and_then(|v| v.parse().ok());
    let estimated = stdout.contains("participants=40 estimated=40");
    let pass = run.status.success()
        && written == PERF_FIXES
        && estimated
        && elapsed <= PERF_TIME_BUDGET
        && rss.is_some_and(|r| r <= PERF_RSS_BUDGET_BYTES);
    outcome(
        pass,
        format!(
            "{written} fixes in {:.1}s (<= {}s) on {} core(s), peak RSS {} MiB (<= {} MiB){}",
            elapsed.as_secs_f64(),
            PERF_TIME_BUDGET.as_secs(),
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            rss.map_or("unknown".into(), |r| format!("{:.1}", r as f64 / 1048576.0)),
            PERF_RSS_BUDGET_BYTES / 1048576,
            if run.status.success() { String::new() } else { format!(", stderr: {}", String::from_utf8_lossy(&run.stderr)) }
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("det-data");
    let synth = run_cli(&[
        "synth",
        "--scenario",
        "cohort",
        "--per-age-group",
        "4",
        "--periods",
        "14",
        "--output",
        data.to_str().unwrap(),
    ]);
    if !synth.status.success() {
        return outcome(false, format!("synth failed: {}", String::from_utf8_lossy(&synth.stderr)));
    }
    let config = data.join("config.toml");
    let runs: Vec<_> = ["det-a", "det-b"]
        .iter()
        .map(|name| {
            let out = dir.join(name);
            let r = run_cli(&["analyze", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()]);
            (r.status.success(), out)
        })
        .collect();
    if !runs.iter().all(|r| r.0) {
        return outcome(false, "analyze failed");
    }
    let names = |d: &Path| -> BTreeSet<String> {
        std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect()
    };
    let (a, b) = (&runs[0].1, &runs[1].1);
    let files = names(a);
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .collect();
    outcome(
        files == names(b) && differing.is_empty() && files.len() >= 10,
        format!("{} files compared, {} differ", files.len(), differing.len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    let start = Instant::now();
    let report = verify_convergence(&VerifyConfig::default()).expect("convergence runs");
    let elapsed = start.elapsed();
    results.push(("ordinary estimator converges to ground truth", convergence(&report, elapsed)));
    results.push(("ordinary and conservative estimators agree", equivalence(&report)));
    results.push(("level sets cover at least 1 - alpha", coverage_inequality()));
    results.push(("level sets nest and drifting LCT falls with alpha", nesting_and_monotonicity()));
    results.push(("regular commuter has zero LCT", regular_commuter()));
    results.push(("hand-computed estimator fixtures", estimator_fixtures()));
    results.push(("connected components match flood fill", components()));
    results.push(("cohort curves ordered old < middle < young", cohort_ordering()));
    results.push(("5e6-fix ingest within time and memory budget", performance(tmp.path())));
    results.push(("reruns give byte-identical bundles", determinism(tmp.path())));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
