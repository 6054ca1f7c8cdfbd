//! Propensity score model: design encoding, maximum-likelihood logistic
//! regression by Newton iterations (IRLS), Wald inference and overlap checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::{CovariateColumn, ObservationTable, VariableKind};
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// Absolute change in deviance below which the fit has converged.
pub const DEVIANCE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 25;
/// Any coefficient beyond this magnitude is treated as separation.
pub const SEPARATION_BOUND: f64 = 30.0;
pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignWarning {
    /// A non-intercept column takes a single value.
    ConstantColumn(String),
    /// A declared categorical level never occurs; its indicator is all zero.
    UnobservedLevel(String),
}

impl std::fmt::Display for DesignWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DesignWarning::ConstantColumn(c) => write!(f, "design column `{c}` is constant"),
            DesignWarning::UnobservedLevel(c) => write!(f, "design column `{c}` is all zero: level never observed"),
        }
    }
}

/// Row-major `n × p` predictor grid with named columns, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<String>,
    values: Vec<f64>,
    rows: usize,
    warnings: Vec<DesignWarning>,
}

impl DesignMatrix {
    /// Builds a design from raw row-major values. The caller names every
    /// column, including the intercept if one is wanted.
    pub fn from_rows(columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let p = columns.len();
        if p == 0 || values.len() % p != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not fill rows of {p} columns",
                values.len()
            )));
        }
        Ok(Self {
            rows: values.len() / p,
            columns,
            values,
            warnings: Vec::new(),
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.n_cols()).copied()
    }

    pub fn warnings(&self) -> &[DesignWarning] {
        &self.warnings
    }

    /// Linear predictor `x_i · β` for every row.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), beta)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Encodes covariates into predictors: intercept, then covariates in schema
/// order; categoricals expand to indicators for every non-reference level.
pub fn encode_design(table: &ObservationTable) -> DesignMatrix {
    let mut columns = vec![INTERCEPT.to_string()];
    for spec in &table.schema().covariates {
        match &spec.kind {
            VariableKind::Categorical { levels } => {
                columns.extend(levels[1..].iter().map(|l| format!("{}: {l}", spec.name)));
            }
            _ => columns.push(spec.name.clone()),
        }
    }
    let p = columns.len();
    let n = table.len();
    let mut values = vec![0.0; n * p];
    for i in 0..n {
        values[i * p] = 1.0;
    }
    let mut offset = 1;
    for (spec, col) in table.schema().covariates.iter().zip(table.covariates()) {
        match (col, &spec.kind) {
            (CovariateColumn::Numeric(x), _) => {
                for (i, &v) in x.iter().enumerate() {
                    values[i * p + offset] = v;
                }
                offset += 1;
            }
            (CovariateColumn::Categorical(idx), VariableKind::Categorical { levels }) => {
                for (i, &l) in idx.iter().enumerate() {
                    if l > 0 {
                        values[i * p + offset + l - 1] = 1.0;
                    }
                }
                offset += levels.len() - 1;
            }
            (CovariateColumn::Categorical(_), _) => unreachable!("validated table"),
        }
    }

    let mut design = DesignMatrix {
        columns,
        values,
        rows: n,
        warnings: Vec::new(),
    };
    let mut offset = 1;
    for spec in &table.schema().covariates {
        let width = match &spec.kind {
            VariableKind::Categorical { levels } => levels.len() - 1,
            _ => 1,
        };
        for j in offset..offset + width {
            let (first, constant) = {
                let mut col = design.column(j);
                let first = col.next();
                (first, first.is_none_or(|f| col.all(|v| v == f)))
            };
            if constant {
                let name = design.columns[j].clone();
                let is_zero = first.is_none_or(|f| f == 0.0);
                if matches!(spec.kind, VariableKind::Categorical { .. }) && is_zero {
                    design.warnings.push(DesignWarning::UnobservedLevel(name));
                } else {
                    design.warnings.push(DesignWarning::ConstantColumn(name));
                }
            }
        }
        offset += width;
    }
    design
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    Separation,
    DevianceIncrease,
}

/// A fitted propensity model. When `converged` is false the coefficients are
/// the last iterate and should not be used for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse Fisher information at the final iterate, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub deviance: f64,
    /// Deviance at the start value followed by the deviance after every step.
    pub deviance_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub status: FitStatus,
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli deviance `−2 log L` of a logit-link linear predictor.
pub fn deviance(eta: &[f64], z: &[u8]) -> f64 {
    2.0 * eta
        .iter()
        .zip(z)
        .map(|(&e, &zi)| softplus(e) - f64::from(zi) * e)
        .sum::<f64>()
}

fn information(design: &DesignMatrix, mu: &[f64]) -> DMatrix<f64> {
    let p = design.n_cols();
    let mut h = DMatrix::<f64>::zeros(p, p);
    for (i, &m) in mu.iter().enumerate() {
        let w = m * (1.0 - m);
        let x = design.row(i);
        for a in 0..p {
            let wa = w * x[a];
            for b in 0..=a {
                h[(a, b)] += wa * x[b];
            }
        }
    }
    h.fill_upper_triangle_with_lower_triangle();
    h
}

/// Numerical rank from the eigenvalues of the column-normalized Gram matrix.
fn design_rank(design: &DesignMatrix) -> usize {
    let p = design.n_cols();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for i in 0..design.n_rows() {
        let x = design.row(i);
        for a in 0..p {
            for b in 0..=a {
                gram[(a, b)] += x[a] * x[b];
            }
        }
    }
    gram.fill_upper_triangle_with_lower_triangle();
    let scale: Vec<f64> = (0..p).map(|j| gram[(j, j)].sqrt()).collect();
    let zero_columns = scale.iter().filter(|&&s| s == 0.0).count();
    for a in 0..p {
        for b in 0..p {
            if scale[a] > 0.0 && scale[b] > 0.0 {
                gram[(a, b)] /= scale[a] * scale[b];
            }
        }
    }
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let nonzero = eig.iter().filter(|&&v| v > max * 1e-12).count();
    nonzero.min(p - zero_columns)
}

/// Maximum-likelihood logistic regression of `z` on `design` by Newton
/// iterations from β = 0.
///
/// Stops when the deviance changes by less than [`DEVIANCE_TOLERANCE`] or
/// after [`MAX_ITERATIONS`] steps. A coefficient beyond [`SEPARATION_BOUND`]
/// or an increase in deviance ends the fit early with `converged == false`.
pub fn fit_logistic(design: &DesignMatrix, z: &[u8]) -> Result<PropensityModel> {
    let n = design.n_rows();
    let p = design.n_cols();
    if z.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} design rows", z.len())));
    }
    if z.iter().any(|&v| v > 1) {
        return Err(Error::Degenerate("treatment not binary".into()));
    }
    let treated = z.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::Degenerate("both treatment values must be present".into()));
    }
    let rank = design_rank(design);
    if rank < p {
        return Err(Error::RankDeficient { rank, columns: p });
    }

    let zf: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
    let mut beta = vec![0.0; p];
    let mut eta = design.linear_predictor(&beta);
    let mut dev = deviance(&eta, z);
    let mut trace = vec![dev];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let h = information(design, &mu);
        let mut grad = DVector::<f64>::zeros(p);
        for i in 0..n {
            let r = zf[i] - mu[i];
            for (g, &x) in grad.iter_mut().zip(design.row(i)) {
                *g += x * r;
            }
        }
        let Some(chol) = h.cholesky() else {
            status = FitStatus::Separation;
            break;
        };
        let step = chol.solve(&grad);
        for (b, s) in beta.iter_mut().zip(step.iter()) {
            *b += s;
        }
        eta = design.linear_predictor(&beta);
        let next = deviance(&eta, z);
        trace.push(next);
        if beta.iter().any(|b| !b.is_finite() || b.abs() > SEPARATION_BOUND) {
            status = FitStatus::Separation;
            dev = next;
            break;
        }
        if next > dev + 1e-10 * (1.0 + dev.abs()) {
            status = FitStatus::DevianceIncrease;
            dev = next;
            break;
        }
        let change = (dev - next).abs();
        dev = next;
        if change < DEVIANCE_TOLERANCE {
            status = FitStatus::Converged;
            break;
        }
    }

    let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let covariance = information(design, &mu)
        .try_inverse()
        .map(|inv| {
            let sym = (&inv + inv.transpose()) * 0.5;
            (0..p).map(|a| (0..p).map(|b| sym[(a, b)]).collect()).collect()
        })
        .unwrap_or_else(|| vec![vec![f64::NAN; p]; p]);
    let scores = eta.iter().map(|&e| clamp_score(logistic(e))).collect();

    Ok(PropensityModel {
        columns: design.columns().to_vec(),
        coefficients: beta,
        covariance,
        scores,
        deviance: dev,
        deviance_trace: trace,
        iterations,
        converged: status == FitStatus::Converged,
        status,
    })
}

fn clamp_score(e: f64) -> f64 {
    e.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// Scores `1/(1+exp(−x·β))` for every row, clamped to `[1e−12, 1−1e−12]`.
pub fn predict_scores(model: &PropensityModel, design: &DesignMatrix) -> Result<Vec<f64>> {
    if design.columns() != model.columns.as_slice() {
        return Err(Error::ColumnMismatch {
            expected: model.columns.len(),
            got: design.n_cols(),
        });
    }
    Ok(design
        .linear_predictor(&model.coefficients)
        .into_iter()
        .map(|e| clamp_score(logistic(e)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
}

/// Two-sided normal tail probability of `|estimate / std_error|`.
pub fn wald_p_value(estimate: f64, std_error: f64) -> f64 {
    if estimate == 0.0 {
        return 1.0;
    }
    let z = (estimate / std_error).abs();
    erfc(z / std::f64::consts::SQRT_2)
}

pub fn wald_inference(model: &PropensityModel) -> Result<Vec<CoefficientRow>> {
    if !model.converged {
        return Err(Error::NotConverged(format!(
            "fit stopped with status {:?} after {} iterations",
            model.status, model.iterations
        )));
    }
    Ok(model
        .columns
        .iter()
        .zip(&model.coefficients)
        .enumerate()
        .map(|(j, (term, &estimate))| {
            let std_error = model.covariance[j][j].max(0.0).sqrt();
            CoefficientRow {
                term: term.clone(),
                estimate,
                std_error,
                p_value: wald_p_value(estimate, std_error),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOverlap {
    pub arm: u8,
    pub n: usize,
    pub below: usize,
    pub above: usize,
    pub fraction_outside: f64,
    pub min: f64,
    pub max: f64,
    /// Score quantiles at [`OVERLAP_QUANTILES`].
    pub quantiles: Vec<f64>,
}

pub const OVERLAP_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
/// Fraction of an arm outside the thresholds that counts as poor overlap.
pub const POOR_OVERLAP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub thresholds: (f64, f64),
    pub arms: Vec<ArmOverlap>,
    pub poor_overlap: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn overlap_report(scores: &[f64], z: &[u8], thresholds: (f64, f64)) -> OverlapReport {
    let (lo, hi) = thresholds;
    let arms: Vec<ArmOverlap> = (0..2u8)
        .map(|arm| {
            let mut s: Vec<f64> = scores
                .iter()
                .zip(z)
                .filter(|(_, &zi)| zi == arm)
                .map(|(&e, _)| e)
                .collect();
            s.sort_by(f64::total_cmp);
            let below = s.iter().filter(|&&e| e < lo).count();
            let above = s.iter().filter(|&&e| e > hi).count();
            let n = s.len();
            ArmOverlap {
                arm,
                n,
                below,
                above,
                fraction_outside: if n == 0 { 0.0 } else { (below + above) as f64 / n as f64 },
                min: s.first().copied().unwrap_or(f64::NAN),
                max: s.last().copied().unwrap_or(f64::NAN),
                quantiles: OVERLAP_QUANTILES.iter().map(|&q| quantile(&s, q)).collect(),
            }
        })
        .collect();
    let poor_overlap = arms.iter().any(|a| a.fraction_outside > POOR_OVERLAP_FRACTION);
    OverlapReport {
        thresholds,
        arms,
        poor_overlap,
    }
}
