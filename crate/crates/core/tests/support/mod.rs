//! Independent reference implementations for the integration and
//! acceptance tests. Nothing here calls into the library's algorithms.

#![allow(dead_code)]

use crossmatch::matching::{Estimand, MatchSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OraclePairs = Vec<(usize, usize, f64)>;

/// Exhaustive O(N²) distance scan.
pub fn brute_force_match(
    scores: &[f64],
    z: &[u8],
    spec: &MatchSpec,
    estimand: Estimand,
) -> (OraclePairs, Vec<usize>) {
    let n = z.len();
    let focal_ok = |i: usize| match estimand {
        Estimand::Ate => true,
        Estimand::Att => z[i] == 1,
        Estimand::Atnt => z[i] == 0,
    };
    if !spec.with_replacement {
        return brute_force_greedy(scores, z, spec, &focal_ok);
    }
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for i in (0..n).filter(|&i| focal_ok(i)) {
        let dists: Vec<(usize, f64)> = (0..n)
            .filter(|&j| z[j] != z[i])
            .map(|j| (j, (scores[i] - scores[j]).abs()))
            .collect();
        let dmin = dists.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        if let Some(c) = spec.caliper {
            if dmin > c {
                unmatched.push(i);
                continue;
            }
        }
        let mut limit = if spec.allow_ties { dmin + spec.tie_tolerance } else { dmin };
        if let Some(c) = spec.caliper {
            limit = limit.min(c);
        }
        let chosen: Vec<usize> = dists.iter().filter(|d| d.1 <= limit).map(|d| d.0).collect();
        if spec.allow_ties {
            let w = 1.0 / chosen.len() as f64;
            pairs.extend(chosen.iter().map(|&j| (i, j, w)));
        } else {
            pairs.push((i, chosen[0], 1.0));
        }
    }
    (pairs, unmatched)
}

fn brute_force_greedy(
    scores: &[f64],
    z: &[u8],
    spec: &MatchSpec,
    focal_ok: &dyn Fn(usize) -> bool,
) -> (OraclePairs, Vec<usize>) {
    let n = z.len();
    let mut order: Vec<(f64, usize)> = (0..n)
        .filter(|&i| focal_ok(i))
        .map(|i| {
            let d = (0..n)
                .filter(|&j| z[j] != z[i])
                .map(|j| (scores[i] - scores[j]).abs())
                .fold(f64::INFINITY, f64::min);
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut used = vec![false; n];
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (_, i) in order {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if z[j] == z[i] || used[j] {
                continue;
            }
            let d = (scores[i] - scores[j]).abs();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        match best {
            Some((d, j)) if spec.caliper.is_none_or(|c| d <= c) => {
                used[j] = true;
                pairs.push((i, j, 1.0));
            }
            _ => unmatched.push(i),
        }
    }
    pairs.sort_by_key(|p| (p.0, p.1));
    unmatched.sort_unstable();
    (pairs, unmatched)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = b.len();
    for col in 0..p {
        let pivot = (col..p).max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..p {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Newton-Raphson on the Bernoulli log-likelihood, iterated until the step
/// is negligible. Returns `None` on divergence.
pub fn newton_logistic_oracle(rows: &[Vec<f64>], z: &[u8]) -> Option<Vec<f64>> {
    let p = rows[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (x, &zi) in rows.iter().zip(z) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            for a in 0..p {
                grad[a] += x[a] * (f64::from(zi) - mu);
                for b in 0..p {
                    hess[a][b] += mu * (1.0 - mu) * x[a] * x[b];
                }
            }
        }
        let step = gauss_solve(hess, grad)?;
        let size: f64 = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 30.0) {
            return None;
        }
        if size < 1e-13 {
            return Some(beta);
        }
    }
    None
}

/// A random matching instance with `2 ≤ n ≤ max_n`, both arms present and a
/// mix of continuous, grid-valued (exact ties) and near-tied scores.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=max_n);
    let style = rng.random_range(0..3);
    let treated_share = rng.random_range(0.1..0.9);
    let mut z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < treated_share)).collect();
    z[0] = 0;
    z[n - 1] = 1;
    let scores = (0..n)
        .map(|_| match style {
            0 => rng.random_range(0.001..0.999),
            1 => f64::from(rng.random_range(1..64u32)) / 64.0,
            _ => {
                let base = f64::from(rng.random_range(1..40u32)) / 40.0;
                base + f64::from(rng.random_range(0..3u32)) * 3e-9
            }
        })
        .collect();
    (scores, z)
}

pub fn random_spec(rng: &mut ChaCha8Rng, z: &[u8], estimand: Estimand) -> MatchSpec {
    let tie_tolerance = [0.0, 1e-8, 1e-3][rng.random_range(0..3)];
    let caliper = [None, None, Some(0.005), Some(0.05)][rng.random_range(0..4)];
    let treated = z.iter().filter(|&&v| v == 1).count();
    let controls = z.len() - treated;
    let feasible = match estimand {
        Estimand::Att => treated <= controls,
        Estimand::Atnt => controls <= treated,
        Estimand::Ate => treated == controls,
    };
    let with_replacement = !(feasible && rng.random_range(0..5) == 0);
    MatchSpec {
        with_replacement,
        allow_ties: with_replacement && rng.random_bool(0.7),
        tie_tolerance,
        caliper,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small logistic-regression table: intercept plus up to three
/// continuous/binary columns, labels drawn from a known logit model.
pub fn random_logit_table(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u8>) {
    loop {
        let n = rng.random_range(30..=200);
        let p = rng.random_range(1..=4);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let binary: Vec<bool> = (0..p).map(|j| j > 0 && rng.random_bool(0.3)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|j| match (j, binary[j]) {
                        (0, _) => 1.0,
                        (_, true) => f64::from(u8::from(rng.random_bool(0.4))),
                        (_, false) => rng.random_range(-2.0..3.0),
                    })
                    .collect()
            })
            .collect();
        let z: Vec<u8> = rows
            .iter()
            .map(|x| {
                let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                u8::from(rng.random::<f64>() < sigmoid(eta))
            })
            .collect();
        let ones = z.iter().filter(|&&v| v == 1).count();
        if ones < 3 || ones > n - 3 {
            continue;
        }
        if newton_logistic_oracle(&rows, &z).is_some() {
            return (rows, z);
        }
    }
}
