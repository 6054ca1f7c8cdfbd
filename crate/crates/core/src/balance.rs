//! Covariate balance: standardized absolute mean differences (in percent)
//! and propensity score histograms, before or after matching.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{descriptive_summary, LevelCount, Moments, ObservationTable, VariableStats};
use crate::error::{Error, Result};
use crate::matching::{expand_matched_sample, MatchResult};

/// SMD at or above this percentage flags a covariate as imbalanced.
pub const IMBALANCE_THRESHOLD: f64 = 10.0;
pub const HISTOGRAM_BINS: usize = 30;

/// A standardized mean difference in percent. Differences with zero pooled
/// variability are `Infinite` rather than a large float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smd {
    Finite(f64),
    Infinite,
}

impl Smd {
    pub fn value(self) -> f64 {
        match self {
            Smd::Finite(v) => v,
            Smd::Infinite => f64::INFINITY,
        }
    }

    pub fn is_imbalanced(self) -> bool {
        self.value() >= IMBALANCE_THRESHOLD
    }
}

impl fmt::Display for Smd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smd::Finite(v) => write!(f, "{v:.2}"),
            Smd::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Smd {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Smd::Finite(v) => s.serialize_f64(*v),
            Smd::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Smd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Smd::Finite(v)),
            Repr::Str(s) if s == "inf" => Ok(Smd::Infinite),
            Repr::Str(s) => s
                .parse()
                .map(Smd::Finite)
                .map_err(|_| serde::de::Error::custom(format!("invalid SMD `{s}`"))),
        }
    }
}

fn ratio(diff: f64, pooled_var: f64) -> Smd {
    if diff == 0.0 {
        Smd::Finite(0.0)
    } else if pooled_var <= 0.0 {
        Smd::Infinite
    } else {
        Smd::Finite(100.0 * diff / pooled_var.sqrt())
    }
}

/// `100·|m1 − m0| / sqrt((sd1² + sd0²)/2)`.
pub fn smd_continuous(mean1: f64, sd1: f64, mean0: f64, sd0: f64) -> Smd {
    ratio((mean1 - mean0).abs(), (sd1 * sd1 + sd0 * sd0) / 2.0)
}

/// SMD of two proportions using Bernoulli variances.
pub fn smd_binary(p1: f64, p0: f64) -> Smd {
    ratio((p1 - p0).abs(), (p1 * (1.0 - p1) + p0 * (1.0 - p0)) / 2.0)
}

/// Mahalanobis SMD of two level-proportion vectors.
///
/// Uses the non-reference levels (all but the first): `100·sqrt(dᵀ S⁺ d)`
/// with `d` the proportion difference and `S` the average of the two
/// multinomial covariance matrices. A difference outside the range of `S`
/// is infinite imbalance.
pub fn smd_categorical(props1: &[f64], props0: &[f64]) -> Result<Smd> {
    if props1.len() != props0.len() || props1.len() < 2 {
        return Err(Error::Dimension(format!(
            "proportion vectors of length {} and {} (need equal, ≥ 2)",
            props1.len(),
            props0.len()
        )));
    }
    for props in [props1, props0] {
        let total: f64 = props.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Dimension(format!("proportions sum to {total}, not 1")));
        }
    }
    let k = props1.len() - 1;
    let (p1, p0) = (&props1[1..], &props0[1..]);
    let d = DVector::from_iterator(k, p1.iter().zip(p0).map(|(a, b)| a - b));
    if d.iter().all(|&v| v == 0.0) {
        return Ok(Smd::Finite(0.0));
    }
    let s = DMatrix::from_fn(k, k, |a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        (p1[a] * (delta - p1[b]) + p0[a] * (delta - p0[b])) / 2.0
    });
    let pinv = s
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let x = &pinv * &d;
    if (&s * &x - &d).norm() > 1e-9 * (1.0 + d.norm()) {
        return Ok(Smd::Infinite);
    }
    Ok(Smd::Finite(100.0 * d.dot(&x).max(0.0).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub variable: String,
    pub smd: Smd,
    pub flagged: bool,
    pub arm_stats: VariableStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    /// Weighted unit totals as `[arm 0, arm 1]`.
    pub arm_n: [f64; 2],
    pub threshold: f64,
    pub rows: Vec<BalanceRow>,
}

/// Flat CSV layout: one record per variable, plus one per categorical level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRecord {
    pub variable: String,
    pub level: String,
    pub arm0_mean: Option<f64>,
    pub arm0_sd: Option<f64>,
    pub arm1_mean: Option<f64>,
    pub arm1_sd: Option<f64>,
    pub arm0_count: Option<f64>,
    pub arm0_percent: Option<f64>,
    pub arm1_count: Option<f64>,
    pub arm1_percent: Option<f64>,
    pub smd: Option<Smd>,
    pub flagged: Option<bool>,
}

pub const SAMPLE_SIZE_LABEL: &str = "Sample size (n)";

impl BalanceRecord {
    fn blank(variable: &str) -> Self {
        Self {
            variable: variable.to_string(),
            level: String::new(),
            arm0_mean: None,
            arm0_sd: None,
            arm1_mean: None,
            arm1_sd: None,
            arm0_count: None,
            arm0_percent: None,
            arm1_count: None,
            arm1_percent: None,
            smd: None,
            flagged: None,
        }
    }
}

impl BalanceTable {
    pub fn max_smd(&self) -> f64 {
        self.rows.iter().map(|r| r.smd.value()).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &BalanceRow> {
        self.rows.iter().filter(|r| r.flagged)
    }

    pub fn records(&self) -> Vec<BalanceRecord> {
        let mut out = vec![BalanceRecord {
            arm0_count: Some(self.arm_n[0]),
            arm1_count: Some(self.arm_n[1]),
            ..BalanceRecord::blank(SAMPLE_SIZE_LABEL)
        }];
        for row in &self.rows {
            let mut head = BalanceRecord {
                smd: Some(row.smd),
                flagged: Some(row.flagged),
                ..BalanceRecord::blank(&row.variable)
            };
            match &row.arm_stats {
                VariableStats::Continuous { arms, .. } => {
                    head.arm0_mean = Some(arms[0].mean);
                    head.arm0_sd = Some(arms[0].sd);
                    head.arm1_mean = Some(arms[1].mean);
                    head.arm1_sd = Some(arms[1].sd);
                    out.push(head);
                }
                VariableStats::Binary { arms, .. } => {
                    head.level = "1".into();
                    head.arm0_count = Some(arms[0].count);
                    head.arm0_percent = Some(arms[0].percent);
                    head.arm1_count = Some(arms[1].count);
                    head.arm1_percent = Some(arms[1].percent);
                    out.push(head);
                }
                VariableStats::Categorical { levels, arms, .. } => {
                    out.push(head);
                    for (l, level) in levels.iter().enumerate() {
                        out.push(BalanceRecord {
                            level: level.clone(),
                            arm0_count: Some(arms[0][l].count),
                            arm0_percent: Some(arms[0][l].percent),
                            arm1_count: Some(arms[1][l].count),
                            arm1_percent: Some(arms[1][l].percent),
                            ..BalanceRecord::blank(&row.variable)
                        });
                    }
                }
            }
        }
        out
    }
}

fn proportions(counts: &[LevelCount]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c.count).sum();
    counts.iter().map(|c| c.count / total).collect()
}

fn row_smd(stats: &VariableStats) -> Result<Smd> {
    Ok(match stats {
        VariableStats::Continuous { arms, .. } => {
            smd_continuous(arms[1].mean, arms[1].sd, arms[0].mean, arms[0].sd)
        }
        VariableStats::Binary { arms, .. } => {
            smd_binary(arms[1].percent / 100.0, arms[0].percent / 100.0)
        }
        VariableStats::Categorical { arms, .. } => {
            smd_categorical(&proportions(&arms[1]), &proportions(&arms[0]))?
        }
    })
}

pub const SCORE_ROW_LABEL: &str = "Propensity score";

/// Balance of every covariate, weighted by the matched sample when a match
/// result is given. With `scores`, a propensity score row is appended.
pub fn balance_table(
    table: &ObservationTable,
    match_result: Option<&MatchResult>,
    scores: Option<&[f64]>,
) -> Result<BalanceTable> {
    let weights = match_result.map(|m| expand_matched_sample(table, m).weights);
    let summary = descriptive_summary(table, weights.as_deref())?;
    let mut rows = Vec::with_capacity(summary.variables.len() + 1);
    for var in summary.variables {
        let smd = row_smd(&var.stats)?;
        rows.push(BalanceRow {
            variable: var.name,
            smd,
            flagged: smd.is_imbalanced(),
            arm_stats: var.stats,
        });
    }
    if let Some(scores) = scores {
        if scores.len() != table.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} units",
                scores.len(),
                table.len()
            )));
        }
        let unit = vec![1.0; table.len()];
        let w = weights.as_deref().unwrap_or(&unit);
        let z = table.treatment();
        let moments = |arm: Option<u8>| {
            Moments::weighted(
                scores
                    .iter()
                    .zip(w)
                    .zip(z)
                    .filter(move |(_, &zi)| arm.is_none_or(|a| a == zi))
                    .map(|((&s, &wi), _)| (s, wi)),
            )
        };
        let stats = VariableStats::Continuous {
            overall: moments(None),
            arms: [moments(Some(0)), moments(Some(1))],
        };
        let smd = row_smd(&stats)?;
        rows.push(BalanceRow {
            variable: SCORE_ROW_LABEL.into(),
            smd,
            flagged: smd.is_imbalanced(),
            arm_stats: stats,
        });
    }
    Ok(BalanceTable {
        arm_n: summary.arm_totals,
        threshold: IMBALANCE_THRESHOLD,
        rows,
    })
}

/// Weighted propensity score counts per arm on equal-width bins over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSeries {
    pub bin_edges: Vec<f64>,
    /// Counts as `[arm 0, arm 1]`.
    pub counts: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count_arm0: f64,
    pub count_arm1: f64,
}

impl HistogramSeries {
    pub fn records(&self) -> Vec<HistogramRecord> {
        self.bin_edges
            .windows(2)
            .zip(self.counts[0].iter().zip(&self.counts[1]))
            .map(|(edge, (&c0, &c1))| HistogramRecord {
                bin_lo: edge[0],
                bin_hi: edge[1],
                count_arm0: c0,
                count_arm1: c1,
            })
            .collect()
    }

    /// `Σ_b min(p0_b, p1_b)` over the per-arm normalized histograms; 1 means
    /// identical binned distributions.
    pub fn overlap_coefficient(&self) -> f64 {
        let t0: f64 = self.counts[0].iter().sum();
        let t1: f64 = self.counts[1].iter().sum();
        if t0 <= 0.0 || t1 <= 0.0 {
            return 0.0;
        }
        self.counts[0]
            .iter()
            .zip(&self.counts[1])
            .map(|(&a, &b)| (a / t0).min(b / t1))
            .sum()
    }
}

/// Bins are right-open except the last, which includes 1.
pub fn ps_histogram(
    scores: &[f64],
    z: &[u8],
    weights: Option<&[f64]>,
    bins: usize,
) -> Result<HistogramSeries> {
    if bins == 0 {
        return Err(Error::Dimension("histogram needs at least one bin".into()));
    }
    if scores.len() != z.len() || weights.is_some_and(|w| w.len() != z.len()) {
        return Err(Error::Dimension("scores, labels and weights must align".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Dimension(format!("score {bad} outside [0, 1]")));
    }
    let bin_edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut counts = [vec![0.0; bins], vec![0.0; bins]];
    for (i, (&s, &zi)) in scores.iter().zip(z).enumerate() {
        let bin = ((s * bins as f64).floor() as usize).min(bins - 1);
        counts[usize::from(zi)][bin] += weights.map_or(1.0, |w| w[i]);
    }
    Ok(HistogramSeries { bin_edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite(s: Smd) -> f64 {
        match s {
            Smd::Finite(v) => v,
            Smd::Infinite => panic!("unexpected infinite SMD"),
        }
    }

    #[test]
    fn continuous_examples() {
        let v = finite(smd_continuous(3.93, 2.28, 2.49, 1.78));
        assert!((v - 70.06).abs() < 1.0, "{v}");
        assert_eq!(smd_continuous(5.0, 2.0, 5.0, 2.0), Smd::Finite(0.0));
        let a = smd_continuous(23.21, 8.82, 14.29, 8.61);
        let b = smd_continuous(14.29, 8.61, 23.21, 8.82);
        assert_eq!(a, b);
        assert!((finite(a) - 102.33).abs() < 1.0);
        assert_eq!(smd_continuous(1.0, 0.0, 2.0, 0.0), Smd::Infinite);
        assert_eq!(smd_continuous(1.0, 0.0, 1.0, 0.0), Smd::Finite(0.0));
    }

    #[test]
    fn binary_examples() {
        let v = finite(smd_binary(0.29, 0.23));
        assert!((v - 13.7).abs() < 0.05, "{v}");
        assert_eq!(smd_binary(0.4, 0.4), Smd::Finite(0.0));
        assert_eq!(smd_binary(1.0, 0.0), Smd::Infinite);
        assert_eq!(smd_binary(0.0, 0.0), Smd::Finite(0.0));
    }

    #[test]
    fn categorical_examples() {
        let v = finite(smd_categorical(&[0.160, 0.467, 0.373], &[0.327, 0.436, 0.237]).unwrap());
        assert!((v - 42.96).abs() < 1.0, "{v}");
        assert_eq!(
            smd_categorical(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(),
            Smd::Finite(0.0)
        );
        assert!(smd_categorical(&[0.5, 0.5], &[0.2, 0.3, 0.5]).is_err());
        assert!(smd_categorical(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert_eq!(smd_categorical(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), Smd::Infinite);
    }

    #[test]
    fn two_level_categorical_is_binary() {
        for &(p1, p0) in &[(0.3, 0.6), (0.01, 0.9), (0.5, 0.49), (0.7, 0.7)] {
            let cat = finite(smd_categorical(&[1.0 - p1, p1], &[1.0 - p0, p0]).unwrap());
            let bin = finite(smd_binary(p1, p0));
            assert!((cat - bin).abs() < 1e-9, "{cat} vs {bin}");
        }
    }

    #[test]
    fn histogram_bins() {
        let h = ps_histogram(&[0.5, 0.5, 0.5], &[0, 1, 1], None, HISTOGRAM_BINS).unwrap();
        assert_eq!(h.bin_edges.len(), 31);
        assert_eq!(h.counts[0][15], 1.0);
        assert_eq!(h.counts[1][15], 2.0);
        let h = ps_histogram(&[1.0, 0.0], &[0, 1], Some(&[0.5, 2.0]), 30).unwrap();
        assert_eq!(h.counts[0][29], 0.5);
        assert_eq!(h.counts[1][0], 2.0);
        assert!(ps_histogram(&[1.2], &[0], None, 30).is_err());
    }

    #[test]
    fn smd_json_marker() {
        assert_eq!(serde_json::to_string(&Smd::Infinite).unwrap(), "\"inf\"");
        let back: Smd = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(back, Smd::Infinite);
        let back: Smd = serde_json::from_str("12.5").unwrap();
        assert_eq!(back, Smd::Finite(12.5));
    }
}
