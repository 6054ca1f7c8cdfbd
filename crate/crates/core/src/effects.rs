//! Effect estimation from a match result: unit-level imputed contrasts,
//! point estimates, the matching-variance standard error and the full
//! pipeline bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::matching::{nearest_neighbor_match, Estimand, MatchResult, MatchSpec};
use crate::propensity::{encode_design, fit_logistic, DesignMatrix, PropensityModel};

/// Largest fraction of bootstrap replicates that may fail.
pub const MAX_DROPPED_FRACTION: f64 = 0.05;

/// Per-focal-unit estimates of `Y(1) − Y(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEffects {
    pub focal: Vec<usize>,
    pub effects: Vec<f64>,
    /// Focal units without a match (caliper exclusions).
    pub excluded: Vec<usize>,
}

/// The missing potential outcome of each focal unit is imputed by the
/// weighted outcome of its matches; the contrast is signed so it always
/// estimates `Y(1) − Y(0)`.
pub fn unit_effects(result: &MatchResult, y: &[f64], z: &[u8]) -> Result<UnitEffects> {
    if y.len() != z.len() || result.k_counts.len() != z.len() {
        return Err(Error::Dimension("match result, outcomes and labels must align".into()));
    }
    let mut focal = Vec::new();
    let mut effects = Vec::new();
    for (i, group) in result.by_focal() {
        let imputed: f64 = group.iter().map(|p| p.weight * y[p.matched]).sum();
        focal.push(i);
        effects.push(if z[i] == 1 { y[i] - imputed } else { imputed - y[i] });
    }
    Ok(UnitEffects {
        focal,
        effects,
        excluded: result.unmatched.clone(),
    })
}

/// Mean of the unit effects over the focal set.
pub fn point_estimate(effects: &UnitEffects, estimand: Estimand) -> Result<f64> {
    if effects.effects.is_empty() {
        return Err(Error::Degenerate(format!("no matched focal units for {estimand}")));
    }
    Ok(effects.effects.iter().sum::<f64>() / effects.effects.len() as f64)
}

/// For every unit, its nearest other unit in the same arm by score, ties to
/// the lowest id. Arms must have at least two units.
fn same_arm_neighbors(scores: &[f64], z: &[u8]) -> Result<Vec<usize>> {
    let mut neighbor = vec![usize::MAX; z.len()];
    for arm in 0..2u8 {
        let mut ids: Vec<usize> = (0..z.len()).filter(|&i| z[i] == arm).collect();
        if ids.len() < 2 {
            return Err(Error::Degenerate(format!(
                "arm {arm} has {} unit(s); within-arm variance needs two",
                ids.len()
            )));
        }
        ids.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        for k in 0..ids.len() {
            let e = scores[ids[k]];
            let dist = |m: usize| (e - scores[ids[m]]).abs();
            let mut dmin = f64::INFINITY;
            if k > 0 {
                dmin = dmin.min(dist(k - 1));
            }
            if k + 1 < ids.len() {
                dmin = dmin.min(dist(k + 1));
            }
            let mut best = usize::MAX;
            for m in (0..k).rev() {
                if dist(m) > dmin {
                    break;
                }
                best = best.min(ids[m]);
            }
            for m in k + 1..ids.len() {
                if dist(m) > dmin {
                    break;
                }
                best = best.min(ids[m]);
            }
            neighbor[ids[k]] = best;
        }
    }
    Ok(neighbor)
}

/// Matching-estimator standard error with match-reuse correction.
///
/// `V = [Σ_focal (τ_i − τ̂)² + Σ_j K_j(K_j − 1) σ²_j] / n²` with `n` the
/// number of matched focal units and `σ²_j = ½(Y_j − Y_ℓ(j))²` from the
/// nearest same-arm neighbor `ℓ(j)`. `K_j(K_j − 1)` is clamped at zero for
/// fractional counts below one.
pub fn ai_standard_error(
    result: &MatchResult,
    y: &[f64],
    z: &[u8],
    scores: &[f64],
    estimand: Estimand,
) -> Result<f64> {
    if scores.len() != z.len() {
        return Err(Error::Dimension(format!("{} scores for {} units", scores.len(), z.len())));
    }
    let effects = unit_effects(result, y, z)?;
    let tau = point_estimate(&effects, estimand)?;
    let neighbor = same_arm_neighbors(scores, z)?;
    let dispersion: f64 = effects.effects.iter().map(|t| (t - tau) * (t - tau)).sum();
    let reuse: f64 = result
        .k_counts
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let factor = (k * (k - 1.0)).max(0.0);
            if factor == 0.0 {
                return 0.0;
            }
            let diff = y[j] - y[neighbor[j]];
            factor * 0.5 * diff * diff
        })
        .sum();
    let n = effects.effects.len() as f64;
    Ok(((dispersion + reuse) / (n * n)).sqrt())
}

/// Everything the point-estimate pipeline produces for one table.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub design: DesignMatrix,
    pub model: PropensityModel,
    pub matches: MatchResult,
    pub unit_effects: UnitEffects,
    pub tau_hat: f64,
}

/// Fit, match and estimate, without standard errors.
pub fn analyze(table: &ObservationTable, spec: &MatchSpec, estimand: Estimand) -> Result<Analysis> {
    let design = encode_design(table);
    let model = fit_logistic(&design, table.treatment())?;
    if !model.converged {
        return Err(Error::NotConverged(format!(
            "propensity fit stopped with status {:?} after {} iterations",
            model.status, model.iterations
        )));
    }
    let matches = nearest_neighbor_match(&model.scores, table.treatment(), spec, estimand)?;
    let unit_effects = unit_effects(&matches, table.outcome(), table.treatment())?;
    let tau_hat = point_estimate(&unit_effects, estimand)?;
    Ok(Analysis {
        design,
        model,
        matches,
        unit_effects,
        tau_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism. The result
    /// does not depend on this value.
    pub workers: Option<usize>,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub se: f64,
    pub requested: usize,
    pub dropped: usize,
    /// Replicate estimates in replicate order; `None` for dropped ones.
    pub estimates: Vec<Option<f64>>,
}

/// Row indices of bootstrap replicate `b`. The generator depends only on
/// `(seed, b)`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn replicate(table: &ObservationTable, spec: &MatchSpec, estimand: Estimand, seed: u64, b: usize) -> Option<f64> {
    let rows = resample_indices(table.len(), seed, b);
    let sample = table.select_rows(&rows);
    if sample.arm_counts().contains(&0) {
        return None;
    }
    analyze(&sample, spec, estimand).ok().map(|a| a.tau_hat)
}

/// Standard deviation (denominator `B − 1`) of the estimate over `B`
/// resamples, each re-running the propensity fit, matching and estimation.
pub fn bootstrap_standard_error(
    table: &ObservationTable,
    spec: &MatchSpec,
    estimand: Estimand,
    config: &BootstrapConfig,
) -> Result<BootstrapSummary> {
    let requested = config.replicates;
    if requested < 2 {
        return Err(Error::Degenerate("bootstrap needs at least two replicates".into()));
    }
    if table.arm_counts().contains(&0) {
        return Err(Error::Degenerate("table has an empty arm".into()));
    }
    let run = || -> Vec<Option<f64>> {
        (0..requested)
            .into_par_iter()
            .map(|b| replicate(table, spec, estimand, config.seed, b))
            .collect()
    };
    let estimates = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Degenerate(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let kept: Vec<f64> = estimates.iter().flatten().copied().collect();
    let dropped = requested - kept.len();
    if dropped as f64 > MAX_DROPPED_FRACTION * requested as f64 || kept.len() < 2 {
        return Err(Error::Bootstrap { dropped, requested });
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let ss: f64 = kept.iter().map(|t| (t - mean) * (t - mean)).sum();
    Ok(BootstrapSummary {
        se: (ss / (kept.len() - 1) as f64).sqrt(),
        requested,
        dropped,
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub tau_hat: f64,
    pub ai_se: f64,
    pub bootstrap_se: Option<f64>,
    pub n_focal: usize,
    #[serde(rename = "B")]
    pub bootstrap_replicates: usize,
    pub seed: Option<u64>,
    pub dropped_replicates: usize,
}

/// Point estimate with both standard errors for an analysis already run.
pub fn estimate_from_analysis(
    table: &ObservationTable,
    analysis: &Analysis,
    spec: &MatchSpec,
    estimand: Estimand,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<EffectEstimate> {
    let ai_se = ai_standard_error(
        &analysis.matches,
        table.outcome(),
        table.treatment(),
        &analysis.model.scores,
        estimand,
    )?;
    let boot = bootstrap
        .map(|cfg| bootstrap_standard_error(table, spec, estimand, cfg))
        .transpose()?;
    Ok(EffectEstimate {
        estimand,
        tau_hat: analysis.tau_hat,
        ai_se,
        bootstrap_se: boot.as_ref().map(|b| b.se),
        n_focal: analysis.unit_effects.focal.len(),
        bootstrap_replicates: bootstrap.map_or(0, |c| c.replicates),
        seed: bootstrap.map(|c| c.seed),
        dropped_replicates: boot.map_or(0, |b| b.dropped),
    })
}

/// Fit → match → unit effects → point estimate → standard errors.
pub fn estimate(
    table: &ObservationTable,
    spec: &MatchSpec,
    estimand: Estimand,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<EffectEstimate> {
    let analysis = analyze(table, spec, estimand)?;
    estimate_from_analysis(table, &analysis, spec, estimand, bootstrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::MatchPair;

    fn result(pairs: Vec<MatchPair>, n: usize, estimand: Estimand) -> MatchResult {
        MatchResult {
            estimand,
            k_counts: crate::matching::compute_k_counts(&pairs, n),
            pairs,
            unmatched: vec![],
        }
    }

    fn pair(focal: usize, matched: usize, weight: f64) -> MatchPair {
        MatchPair { focal, matched, weight }
    }

    #[test]
    fn sign_convention() {
        let r = result(vec![pair(0, 1, 1.0)], 2, Estimand::Att);
        let e = unit_effects(&r, &[1.0, 0.0], &[1, 0]).unwrap();
        assert_eq!(e.effects, vec![1.0]);
        let r = result(vec![pair(0, 1, 1.0)], 2, Estimand::Atnt);
        let e = unit_effects(&r, &[1.0, 0.0], &[0, 1]).unwrap();
        assert_eq!(e.effects, vec![-1.0]);
    }

    #[test]
    fn tied_matches_average_outcomes() {
        let r = result(vec![pair(0, 1, 0.5), pair(0, 2, 0.5)], 3, Estimand::Att);
        let e = unit_effects(&r, &[1.0, 0.0, 1.0], &[1, 0, 0]).unwrap();
        assert_eq!(e.effects, vec![0.5]);
    }

    #[test]
    fn att_is_mean_of_treated_effects() {
        let r = result(vec![pair(0, 2, 1.0), pair(1, 3, 1.0)], 4, Estimand::Att);
        let e = unit_effects(&r, &[1.0, 0.0, 0.0, 0.0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(point_estimate(&e, Estimand::Att).unwrap(), 0.5);
        let empty = UnitEffects {
            focal: vec![],
            effects: vec![],
            excluded: vec![0],
        };
        assert!(point_estimate(&empty, Estimand::Att).is_err());
    }

    #[test]
    fn ai_se_without_reuse_is_dispersion_only() {
        let z = [1, 1, 1, 0, 0, 0];
        let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let scores = [0.1, 0.2, 0.3, 0.11, 0.21, 0.31];
        let r = result(
            vec![pair(0, 3, 1.0), pair(1, 4, 1.0), pair(2, 5, 1.0)],
            6,
            Estimand::Att,
        );
        let se = ai_standard_error(&r, &y, &z, &scores, Estimand::Att).unwrap();
        // effects 1, 0, 0 around mean 1/3
        let expected = (2.0f64 / 3.0).sqrt() / 3.0;
        assert!((se - expected).abs() < 1e-15);
    }

    #[test]
    fn ai_se_reuse_term() {
        // control 3 used twice, its within-arm neighbor is control 4
        let z = [1, 1, 0, 0, 0];
        let y = [1.0, 1.0, 5.0, 0.0, 2.0];
        let scores = [0.5, 0.52, 0.1, 0.51, 0.6];
        let r = result(vec![pair(0, 3, 1.0), pair(1, 3, 1.0)], 5, Estimand::Att);
        let se = ai_standard_error(&r, &y, &z, &scores, Estimand::Att).unwrap();
        // dispersion 0, reuse = 2·1·½·(0 − 2)² = 4, V = 4 / 4
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_outcomes_have_zero_se() {
        let z = [1, 0, 1, 0];
        let y = [3.0; 4];
        let scores = [0.2, 0.3, 0.4, 0.5];
        let r = nearest_neighbor_match(&scores, &z, &MatchSpec::default(), Estimand::Ate).unwrap();
        assert_eq!(ai_standard_error(&r, &y, &z, &scores, Estimand::Ate).unwrap(), 0.0);
    }

    #[test]
    fn single_unit_arm_is_rejected() {
        let z = [1, 0, 0];
        let r = nearest_neighbor_match(&[0.5, 0.4, 0.6], &z, &MatchSpec::default(), Estimand::Att).unwrap();
        assert!(ai_standard_error(&r, &[1.0, 0.0, 0.0], &z, &[0.5, 0.4, 0.6], Estimand::Att).is_err());
    }

    #[test]
    fn neighbor_ties_go_to_lowest_id() {
        let n = same_arm_neighbors(&[0.5, 0.4, 0.6, 0.1, 0.2], &[0, 0, 0, 1, 1]).unwrap();
        assert_eq!(n[0], 1);
        assert_eq!(n[1], 0);
        assert_eq!(n[3], 4);
    }

    #[test]
    fn resampling_is_seeded_per_replicate() {
        assert_eq!(resample_indices(50, 7, 3), resample_indices(50, 7, 3));
        assert_ne!(resample_indices(50, 7, 3), resample_indices(50, 7, 4));
        assert_ne!(resample_indices(50, 7, 3), resample_indices(50, 8, 3));
    }
}
