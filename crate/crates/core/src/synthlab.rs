//! Synthetic observational data with both potential outcomes per unit, so
//! every estimand has a known finite-sample truth.
//!
//! Covariates are drawn independently, treatment follows a logit model of
//! the encoded design, and the unit effect is `τ(X) = τ0 + τ1·e(X)`, so a
//! nonzero `τ1` separates ATT from ATE.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateColumn, ObservationTable, Schema, VariableSpec};
use crate::error::{Error, Result};
use crate::propensity::logistic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum CovariateDistribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Categorical { levels: Vec<String>, probabilities: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGen {
    pub name: String,
    #[serde(flatten)]
    pub distribution: CovariateDistribution,
}

impl CovariateGen {
    pub fn normal(name: &str, mean: f64, sd: f64) -> Self {
        Self {
            name: name.into(),
            distribution: CovariateDistribution::Normal { mean, sd },
        }
    }

    pub fn bernoulli(name: &str, p: f64) -> Self {
        Self {
            name: name.into(),
            distribution: CovariateDistribution::Bernoulli { p },
        }
    }

    pub fn categorical(name: &str, levels: &[&str], probabilities: &[f64]) -> Self {
        Self {
            name: name.into(),
            distribution: CovariateDistribution::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                probabilities: probabilities.to_vec(),
            },
        }
    }

    fn width(&self) -> usize {
        match &self.distribution {
            CovariateDistribution::Categorical { levels, .. } => levels.len() - 1,
            _ => 1,
        }
    }

    fn spec(&self) -> VariableSpec {
        match &self.distribution {
            CovariateDistribution::Normal { .. } => VariableSpec::continuous(&self.name),
            CovariateDistribution::Bernoulli { .. } => VariableSpec::binary(&self.name),
            CovariateDistribution::Categorical { levels, .. } => {
                VariableSpec::categorical(&self.name, levels.iter().cloned())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutcomeNoise {
    /// `Y(a) ~ Bernoulli(p_a)` drawn independently, with `p_a` clamped to [0, 1].
    Bernoulli,
    /// Additive normal noise shared by both potential outcomes.
    Gaussian { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    /// Coefficients of `E[Y(0) | X]` on the encoded design (intercept first).
    pub baseline: Vec<f64>,
    pub tau0: f64,
    pub tau1: f64,
    pub noise: OutcomeNoise,
}

fn default_treatment() -> String {
    "treated".into()
}

fn default_outcome() -> String {
    "outcome".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_outcome")]
    pub outcome_name: String,
    pub covariates: Vec<CovariateGen>,
    /// Logit-scale treatment coefficients on the encoded design.
    pub ps_coefficients: Vec<f64>,
    pub outcome: OutcomeModel,
}

impl Scenario {
    pub fn from_config_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    /// Encoded design width: intercept plus one column per continuous or
    /// binary covariate plus `levels − 1` per categorical.
    pub fn design_width(&self) -> usize {
        1 + self.covariates.iter().map(CovariateGen::width).sum::<usize>()
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.treatment.clone(),
            self.outcome_name.clone(),
            self.covariates.iter().map(CovariateGen::spec).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario(format!("{}: {msg}", self.name)));
        if self.n < 2 {
            return bad(format!("n = {} (need ≥ 2)", self.n));
        }
        for gen in &self.covariates {
            match &gen.distribution {
                CovariateDistribution::Normal { mean, sd } => {
                    if !mean.is_finite() || !sd.is_finite() || *sd < 0.0 {
                        return bad(format!("`{}`: invalid normal({mean}, {sd})", gen.name));
                    }
                }
                CovariateDistribution::Bernoulli { p } => {
                    if !(0.0..=1.0).contains(p) {
                        return bad(format!("`{}`: probability {p} outside [0, 1]", gen.name));
                    }
                }
                CovariateDistribution::Categorical {
                    levels,
                    probabilities,
                } => {
                    if levels.len() != probabilities.len() {
                        return bad(format!("`{}`: {} levels, {} probabilities", gen.name, levels.len(), probabilities.len()));
                    }
                    if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return bad(format!("`{}`: probability outside [0, 1]", gen.name));
                    }
                    let total: f64 = probabilities.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return bad(format!("`{}`: probabilities sum to {total}", gen.name));
                    }
                }
            }
        }
        self.schema()?;
        let p = self.design_width();
        if self.ps_coefficients.len() != p {
            return bad(format!("{} propensity coefficients for {p} design columns", self.ps_coefficients.len()));
        }
        if self.outcome.baseline.len() != p {
            return bad(format!("{} baseline coefficients for {p} design columns", self.outcome.baseline.len()));
        }
        if let OutcomeNoise::Gaussian { sd } = self.outcome.noise {
            if !(sd >= 0.0) || !sd.is_finite() {
                return bad(format!("invalid gaussian noise sd {sd}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUnit {
    /// Encoded design row (intercept first).
    pub x: Vec<f64>,
    pub e_true: f64,
    pub z: u8,
    pub y0: f64,
    pub y1: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub table: ObservationTable,
    pub units: Vec<SyntheticUnit>,
    /// Units whose Bernoulli outcome probability was clamped into [0, 1].
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub unit_id: usize,
    pub y0: f64,
    pub y1: f64,
    pub e_true: f64,
}

impl GeneratedData {
    pub fn counterfactual_records(&self) -> Vec<CounterfactualRecord> {
        self.units
            .iter()
            .enumerate()
            .map(|(unit_id, u)| CounterfactualRecord {
                unit_id,
                y0: u.y0,
                y1: u.y1,
                e_true: u.e_true,
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a table from the scenario. One generator stream seeded by
/// `scenario.seed` is consumed unit by unit: covariates in declaration
/// order, then the treatment draw, then the outcome noise.
pub fn generate(scenario: &Scenario) -> Result<GeneratedData> {
    scenario.validate()?;
    let n = scenario.n;
    let p = scenario.design_width();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let noise = match scenario.outcome.noise {
        OutcomeNoise::Gaussian { sd } => {
            Some(Normal::new(0.0, sd).map_err(|e| Error::Scenario(e.to_string()))?)
        }
        OutcomeNoise::Bernoulli => None,
    };
    let normals: Vec<Option<Normal<f64>>> = scenario
        .covariates
        .iter()
        .map(|g| match g.distribution {
            CovariateDistribution::Normal { mean, sd } => Normal::new(mean, sd).ok(),
            _ => None,
        })
        .collect();

    let mut columns: Vec<CovariateColumn> = scenario
        .covariates
        .iter()
        .map(|g| match g.distribution {
            CovariateDistribution::Categorical { .. } => CovariateColumn::Categorical(Vec::with_capacity(n)),
            _ => CovariateColumn::Numeric(Vec::with_capacity(n)),
        })
        .collect();
    let mut units = Vec::with_capacity(n);
    let mut clamped = 0;

    for _ in 0..n {
        let mut x = Vec::with_capacity(p);
        x.push(1.0);
        for ((gen, normal), col) in scenario.covariates.iter().zip(&normals).zip(&mut columns) {
            match (&gen.distribution, col) {
                (CovariateDistribution::Normal { .. }, CovariateColumn::Numeric(v)) => {
                    let value = normal.expect("validated normal").sample(&mut rng);
                    v.push(value);
                    x.push(value);
                }
                (CovariateDistribution::Bernoulli { p }, CovariateColumn::Numeric(v)) => {
                    let value = if rng.random::<f64>() < *p { 1.0 } else { 0.0 };
                    v.push(value);
                    x.push(value);
                }
                (CovariateDistribution::Categorical { probabilities, .. }, CovariateColumn::Categorical(v)) => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut level = probabilities.len() - 1;
                    for (l, &prob) in probabilities.iter().enumerate() {
                        acc += prob;
                        if u < acc {
                            level = l;
                            break;
                        }
                    }
                    v.push(level);
                    x.extend((1..probabilities.len()).map(|l| if l == level { 1.0 } else { 0.0 }));
                }
                _ => unreachable!("columns follow the generators"),
            }
        }
        let e_true = logistic(dot(&x, &scenario.ps_coefficients)).clamp(1e-12, 1.0 - 1e-12);
        let z = u8::from(rng.random::<f64>() < e_true);
        let mean0 = dot(&x, &scenario.outcome.baseline);
        let tau = scenario.outcome.tau0 + scenario.outcome.tau1 * e_true;
        let (y0, y1) = match noise {
            Some(normal) => {
                let eps = normal.sample(&mut rng);
                (mean0 + eps, mean0 + tau + eps)
            }
            None => {
                let p0 = mean0.clamp(0.0, 1.0);
                let p1 = (mean0 + tau).clamp(0.0, 1.0);
                if p0 != mean0 || p1 != mean0 + tau {
                    clamped += 1;
                }
                let y0 = if rng.random::<f64>() < p0 { 1.0 } else { 0.0 };
                let y1 = if rng.random::<f64>() < p1 { 1.0 } else { 0.0 };
                (y0, y1)
            }
        };
        let y = if z == 1 { y1 } else { y0 };
        units.push(SyntheticUnit {
            x,
            e_true,
            z,
            y0,
            y1,
            y,
        });
    }

    let table = ObservationTable::from_columns(
        scenario.schema()?,
        units.iter().map(|u| u.z).collect(),
        units.iter().map(|u| u.y).collect(),
        columns,
    )?;
    Ok(GeneratedData {
        table,
        units,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub ate: f64,
    pub att: f64,
    pub atnt: f64,
}

impl Truth {
    pub fn get(&self, estimand: crate::matching::Estimand) -> f64 {
        use crate::matching::Estimand::*;
        match estimand {
            Ate => self.ate,
            Att => self.att,
            Atnt => self.atnt,
        }
    }
}

/// Finite-sample mean of `Y1 − Y0` over all, treated and control units.
pub fn true_estimands(units: &[SyntheticUnit]) -> Result<Truth> {
    let mean = |filter: &dyn Fn(&SyntheticUnit) -> bool, label: &str| -> Result<f64> {
        let (sum, count) = units
            .iter()
            .filter(|u| filter(u))
            .fold((0.0, 0usize), |(s, c), u| (s + (u.y1 - u.y0), c + 1));
        if count == 0 {
            return Err(Error::Degenerate(format!("no {label} units")));
        }
        Ok(sum / count as f64)
    };
    Ok(Truth {
        ate: mean(&|_| true, "")?,
        att: mean(&|u| u.z == 1, "treated")?,
        atnt: mean(&|u| u.z == 0, "control")?,
    })
}

fn crossing_covariates() -> Vec<CovariateGen> {
    vec![
        CovariateGen::normal("score_differential", 0.0, 1.2),
        CovariateGen::normal("dist_defender", 2.9, 2.0),
        CovariateGen::normal("space_controlled", 0.6, 0.35),
        CovariateGen::normal("dist_endline", 20.0, 9.5),
        CovariateGen::categorical("position", &["Forward", "Midfielder", "Defender"], &[0.3, 0.45, 0.25]),
        CovariateGen::bernoulli("ten_minute_warning", 0.25),
    ]
}

// Design order: intercept, score_differential, dist_defender,
// space_controlled, dist_endline, Midfielder, Defender, ten_minute_warning.
const MODERATE_PS: [f64; 8] = [-0.8, 0.0, 0.3, 1.0, -0.07, 0.2, 0.3, 0.1];
const STRONG_PS: [f64; 8] = [-1.2, -0.1, 0.3, 1.5, -0.1, 0.5, 0.75, 0.25];
const BASELINE: [f64; 8] = [0.15, -0.01, 0.02, 0.1, -0.004, 0.02, -0.02, 0.03];

fn crossing_scenario(name: &str, n: usize, seed: u64, ps: [f64; 8], outcome: OutcomeModel) -> Scenario {
    Scenario {
        name: name.into(),
        n,
        seed,
        treatment: "cross".into(),
        outcome_name: "shot".into(),
        covariates: crossing_covariates(),
        ps_coefficients: ps.to_vec(),
        outcome,
    }
}

fn gaussian(tau0: f64, tau1: f64, sd: f64) -> OutcomeModel {
    OutcomeModel {
        baseline: BASELINE.to_vec(),
        tau0,
        tau1,
        noise: OutcomeNoise::Gaussian { sd },
    }
}

/// The standard scenarios, each fully seeded.
pub fn scenario_suite() -> Vec<Scenario> {
    vec![
        crossing_scenario("null", 2000, 101, MODERATE_PS, gaussian(0.0, 0.0, 0.1)),
        crossing_scenario("homogeneous", 2000, 202, MODERATE_PS, gaussian(0.05, 0.0, 0.1)),
        crossing_scenario("heterogeneous", 5000, 2017, MODERATE_PS, gaussian(0.0, 0.15, 0.1)),
        crossing_scenario(
            "strong_confounding",
            8000,
            404,
            STRONG_PS,
            gaussian(0.05, 0.0, 0.1),
        ),
        crossing_scenario(
            "weak_overlap",
            3000,
            505,
            [0.0, -0.4, 1.2, 4.0, -0.35, 1.5, 2.0, 1.0],
            gaussian(0.05, 0.0, 0.1),
        ),
        crossing_scenario(
            "binary_shots",
            2225,
            606,
            MODERATE_PS,
            OutcomeModel {
                baseline: BASELINE.to_vec(),
                tau0: 0.02,
                tau1: 0.0,
                noise: OutcomeNoise::Bernoulli,
            },
        ),
        crossing_scenario("tiny", 50, 707, MODERATE_PS, gaussian(0.05, 0.1, 0.1)),
    ]
}

pub fn suite_scenario(name: &str) -> Result<Scenario> {
    scenario_suite()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Scenario(format!("unknown suite scenario `{name}`")))
}
