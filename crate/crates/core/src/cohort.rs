//! Demographic grouping, cohort summary tables and group LCT curves with
//! bootstrap confidence intervals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            "unknown" | "" | "na" => Ok(Sex::Unknown),
            other => Err(Error::InvalidParameter(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    /// 15 to 34 years.
    Young,
    /// 35 to 54 years.
    Middle,
    /// 55 years and older.
    Old,
    Unknown,
}

impl AgeGroup {
    pub fn from_age(years: u32) -> Self {
        match years {
            15..=34 => AgeGroup::Young,
            35..=54 => AgeGroup::Middle,
            55.. => AgeGroup::Old,
            _ => AgeGroup::Unknown,
        }
    }
}

impl FromStr for AgeGroup {
    type Err = Error;

    /// Accepts a group name or an age in whole years.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Ok(years) = s.parse::<u32>() {
            return Ok(AgeGroup::from_age(years));
        }
        match s.as_str() {
            "young" => Ok(AgeGroup::Young),
            "middle" => Ok(AgeGroup::Middle),
            "old" => Ok(AgeGroup::Old),
            "unknown" | "" | "na" => Ok(AgeGroup::Unknown),
            other => Err(Error::InvalidParameter(format!("unknown age group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantMeta {
    pub participant_id: String,
    pub sex: Sex,
    pub age_group: AgeGroup,
}

/// The demographic groups curves are computed for. Membership overlaps: a
/// participant belongs to one sex group and one age group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Male,
    Female,
    Young,
    Middle,
    Old,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Male, Group::Female, Group::Young, Group::Middle, Group::Old];

    pub fn contains(self, meta: &ParticipantMeta) -> bool {
        match self {
            Group::Male => meta.sex == Sex::Male,
            Group::Female => meta.sex == Sex::Female,
            Group::Young => meta.age_group == AgeGroup::Young,
            Group::Middle => meta.age_group == AgeGroup::Middle,
            Group::Old => meta.age_group == AgeGroup::Old,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Group::Male => "male",
            Group::Female => "female",
            Group::Young => "young",
            Group::Middle => "middle",
            Group::Old => "old",
        };
        f.write_str(name)
    }
}

/// The three per-participant stability measures, in weeks. `None` when the
/// measure could not be computed for that participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMeasures {
    pub participant_id: String,
    pub lct_velocity: Option<f64>,
    pub lct_distribution: Option<f64>,
    pub lct_level_set: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub measure: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Sample standard deviation; reported as 0 with `sd_defined = false`
    /// when fewer than two values exist.
    pub sd: f64,
    pub sd_defined: bool,
}

pub(crate) fn summarize(measure: String, mut values: Vec<f64>) -> MeasureSummary {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return MeasureSummary {
            measure,
            n,
            mean: None,
            median: None,
            sd: 0.0,
            sd_defined: false,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    let (sd, sd_defined) = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        ((ss / (n - 1) as f64).sqrt(), true)
    } else {
        (0.0, false)
    };
    MeasureSummary {
        measure,
        n,
        mean: Some(mean),
        median: Some(median),
        sd,
        sd_defined,
    }
}

/// Mean, median and sample standard deviation of each measure.
pub fn summarize_measures(rows: &[ParticipantMeasures], level_alpha: f64) -> Result<Vec<MeasureSummary>> {
    if rows.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let collect = |f: fn(&ParticipantMeasures) -> Option<f64>| rows.iter().filter_map(f).collect::<Vec<_>>();
    Ok(vec![
        summarize("LCT-velocity".into(), collect(|r| r.lct_velocity)),
        summarize("LCT-distribution".into(), collect(|r| r.lct_distribution)),
        summarize(
            format!("LCT-level set (alpha={level_alpha})"),
            collect(|r| r.lct_level_set),
        ),
    ])
}

/// One participant's LCT-level-set values (weeks) over an alpha grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantCurve {
    pub participant_id: String,
    pub lct: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Two-sided confidence level, e.g. 0.9.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            level: 0.9,
            seed: 20_200_101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCurve {
    pub group: Group,
    pub gamma: f64,
    pub alphas: Vec<f64>,
    /// Members contributing at each alpha.
    pub n: Vec<usize>,
    pub mean_lct: Vec<Option<f64>>,
    /// Empty when the group is too small for an interval.
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub too_small: bool,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile-bootstrap interval for the mean of `values`.
pub fn bootstrap_mean_ci(values: &[f64], cfg: &BootstrapConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = values.len();
    let mut means: Vec<f64> = (0..cfg.resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.level) / 2.0;
    (quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail))
}

/// Mean LCT-level-set curve and bootstrap interval per demographic group.
///
/// Members are aggregated in participant-id order so results do not depend
/// on input order. Groups with no members are omitted; groups with a single
/// member are emitted without an interval and flagged.
pub fn group_lct_curves(
    curves: &[ParticipantCurve],
    metas: &BTreeMap<String, ParticipantMeta>,
    alphas: &[f64],
    gamma: f64,
    boot: &BootstrapConfig,
) -> Result<Vec<GroupCurve>> {
    if let Some(bad) = curves.iter().find(|c| c.lct.len() != alphas.len()) {
        return Err(Error::InvalidParameter(format!(
            "curve for {} has {} values for {} alphas",
            bad.participant_id,
            bad.lct.len(),
            alphas.len()
        )));
    }
    let mut sorted: Vec<&ParticipantCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));

    let mut out = Vec::new();
    for (g_idx, group) in Group::ALL.iter().enumerate() {
        let members: Vec<&ParticipantCurve> = sorted
            .iter()
            .filter(|c| metas.get(&c.participant_id).is_some_and(|m| group.contains(m)))
            .copied()
            .collect();
        if members.is_empty() {
            continue;
        }
        let too_small = members.len() < 2;
        let mut curve = GroupCurve {
            group: *group,
            gamma,
            alphas: alphas.to_vec(),
            n: Vec::with_capacity(alphas.len()),
            mean_lct: Vec::with_capacity(alphas.len()),
            ci_low: Vec::new(),
            ci_high: Vec::new(),
            too_small,
        };
        for a_idx in 0..alphas.len() {
            let values: Vec<f64> = members.iter().filter_map(|c| c.lct[a_idx]).collect();
            curve.n.push(values.len());
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            curve.mean_lct.push(mean);
            if !too_small {
                let (lo, hi) = match mean {
                    Some(mean) if values.len() >= 2 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            boot.seed ^ ((g_idx as u64) << 32 | a_idx as u64),
                        );
                        let (lo, hi) = bootstrap_mean_ci(&values, boot, &mut rng);
                        // keep the interval around the point estimate
                        (lo.min(mean), hi.max(mean))
                    }
                    Some(mean) => (mean, mean),
                    None => (f64::NAN, f64::NAN),
                };
                curve.ci_low.push(lo);
                curve.ci_high.push(hi);
            }
        }
        out.push(curve);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measures(id: &str, v: f64) -> ParticipantMeasures {
        ParticipantMeasures {
            participant_id: id.into(),
            lct_velocity: Some(v),
            lct_distribution: Some(v),
            lct_level_set: None,
        }
    }

    #[test]
    fn age_boundaries_are_inclusive() {
        assert_eq!(AgeGroup::from_age(14), AgeGroup::Unknown);
        assert_eq!(AgeGroup::from_age(15), AgeGroup::Young);
        assert_eq!(AgeGroup::from_age(34), AgeGroup::Young);
        assert_eq!(AgeGroup::from_age(35), AgeGroup::Middle);
        assert_eq!(AgeGroup::from_age(54), AgeGroup::Middle);
        assert_eq!(AgeGroup::from_age(55), AgeGroup::Old);
        assert_eq!("42".parse::<AgeGroup>().unwrap(), AgeGroup::Middle);
        assert_eq!("old".parse::<AgeGroup>().unwrap(), AgeGroup::Old);
        assert!("elderly".parse::<AgeGroup>().is_err());
        assert_eq!("F".parse::<Sex>().unwrap(), Sex::Female);
    }

    #[test]
    fn summary_statistics_by_hand() {
        let rows = [measures("a", 10.0), measures("b", 30.0), measures("c", 20.0)];
        let s = summarize_measures(&rows, 0.2).unwrap();
        assert_eq!(s[0].measure, "LCT-velocity");
        assert_eq!(s[1].measure, "LCT-distribution");
        assert_eq!(s[2].measure, "LCT-level set (alpha=0.2)");
        assert_eq!(s[0].mean, Some(20.0));
        assert_eq!(s[0].median, Some(20.0));
        assert!((s[0].sd - 10.0).abs() < 1e-12);
        assert_eq!(s[2].n, 0);
        assert_eq!(s[2].mean, None);
    }

    #[test]
    fn single_participant_summary() {
        let s = summarize_measures(&[measures("a", 7.0)], 0.2).unwrap();
        assert_eq!(s[0].mean, Some(7.0));
        assert_eq!(s[0].median, Some(7.0));
        assert_eq!(s[0].sd, 0.0);
        assert!(!s[0].sd_defined);
        assert_eq!(summarize_measures(&[], 0.2), Err(Error::EmptyCohort));
    }

    fn meta(id: &str, sex: Sex, age: AgeGroup) -> (String, ParticipantMeta) {
        (
            id.to_string(),
            ParticipantMeta {
                participant_id: id.into(),
                sex,
                age_group: age,
            },
        )
    }

    #[test]
    fn identical_members_give_zero_width_intervals() {
        let alphas = [0.1, 0.5, 1.0];
        let curves: Vec<ParticipantCurve> = (0..6)
            .map(|i| ParticipantCurve {
                participant_id: format!("p{i}"),
                lct: vec![Some(4.0), Some(2.0), Some(1.0)],
            })
            .collect();
        let metas = curves
            .iter()
            .map(|c| meta(&c.participant_id, Sex::Male, AgeGroup::Young))
            .collect();
        let out = group_lct_curves(&curves, &metas, &alphas, 0.2, &BootstrapConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        for g in &out {
            assert_eq!(g.mean_lct, vec![Some(4.0), Some(2.0), Some(1.0)]);
            assert_eq!(g.ci_low, vec![4.0, 2.0, 1.0]);
            assert_eq!(g.ci_high, vec![4.0, 2.0, 1.0]);
        }
    }

    #[test]
    fn singleton_groups_are_flagged() {
        let curves = vec![
            ParticipantCurve { participant_id: "a".into(), lct: vec![Some(1.0)] },
            ParticipantCurve { participant_id: "b".into(), lct: vec![Some(3.0)] },
        ];
        let metas = [meta("a", Sex::Unknown, AgeGroup::Young), meta("b", Sex::Unknown, AgeGroup::Old)]
            .into_iter()
            .collect();
        let out = group_lct_curves(&curves, &metas, &[0.2], 0.2, &BootstrapConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|g| g.too_small && g.ci_low.is_empty()));
    }

    #[test]
    fn curves_are_order_independent_and_reproducible() {
        let alphas = [0.1, 0.2];
        let mut curves: Vec<ParticipantCurve> = (0..15)
            .map(|i| ParticipantCurve {
                participant_id: format!("p{i:02}"),
                lct: vec![Some((i * 7 % 11) as f64), Some((i % 4) as f64)],
            })
            .collect();
        let metas: BTreeMap<String, ParticipantMeta> = curves
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let sex = if i % 2 == 0 { Sex::Male } else { Sex::Female };
                meta(&c.participant_id, sex, AgeGroup::Middle)
            })
            .collect();
        let boot = BootstrapConfig::default();
        let a = group_lct_curves(&curves, &metas, &alphas, 0.2, &boot).unwrap();
        curves.reverse();
        let b = group_lct_curves(&curves, &metas, &alphas, 0.2, &boot).unwrap();
        assert_eq!(a, b);
        for g in &a {
            for i in 0..alphas.len() {
                let m = g.mean_lct[i].unwrap();
                assert!(g.ci_low[i] <= m && m <= g.ci_high[i]);
            }
        }
    }
}
