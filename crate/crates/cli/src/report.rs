//! Plain-text report of a completed run, in reading order: pre-match
//! balance, propensity model, matching, post-match balance, estimates.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use crossmatch::balance::{BalanceRecord, IMBALANCE_THRESHOLD};
use crossmatch::export::{read_json, read_records, KCountRecord, OverlapRecord, PairRecord};
use crossmatch::propensity::CoefficientRow;
use crossmatch::EffectEstimate;

use crate::pipeline::{read_manifest, Manifest, ARTIFACTS};

fn count(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn cell(mean: Option<f64>, sd: Option<f64>, n: Option<f64>, pct: Option<f64>) -> String {
    match (mean, sd, n, pct) {
        (Some(m), Some(s), _, _) => format!("{m:.2} ({s:.2})"),
        (_, _, Some(c), Some(p)) => format!("{} ({p:.1}%)", count(c)),
        (_, _, Some(c), None) => count(c),
        _ => String::new(),
    }
}

fn balance_section(out: &mut String, records: &[BalanceRecord]) -> Vec<String> {
    let mut flagged = Vec::new();
    let _ = writeln!(out, "{:<28} {:<12} {:>20} {:>20} {:>9}", "variable", "level", "arm 0", "arm 1", "SMD (%)");
    for r in records {
        let smd = match (r.smd, r.flagged) {
            (Some(s), Some(true)) => {
                flagged.push(r.variable.clone());
                format!("{s} *")
            }
            (Some(s), _) => format!("{s}  "),
            _ => String::new(),
        };
        // per-level rows sit under their categorical's header row
        let name = if !r.level.is_empty() && r.smd.is_none() {
            ""
        } else {
            r.variable.as_str()
        };
        let _ = writeln!(
            out,
            "{:<28} {:<12} {:>20} {:>20} {:>9}",
            name,
            r.level,
            cell(r.arm0_mean, r.arm0_sd, r.arm0_count, r.arm0_percent),
            cell(r.arm1_mean, r.arm1_sd, r.arm1_count, r.arm1_percent),
            smd
        );
    }
    let _ = writeln!(out, "(* SMD >= {IMBALANCE_THRESHOLD}%)");
    flagged
}

fn files<'a>(manifest: &'a Manifest, name: &str) -> Result<&'a [String]> {
    match manifest.files(name) {
        Some(f) if !f.is_empty() => Ok(f),
        _ => bail!("manifest lists no `{name}` artifact"),
    }
}

pub fn render(dir: &Path) -> Result<String> {
    let manifest = read_manifest(dir)?;
    let missing: Vec<&str> = ARTIFACTS
        .iter()
        .copied()
        .filter(|a| manifest.files(a).is_none())
        .collect();
    if !manifest.complete || !missing.is_empty() {
        bail!(
            "run in {} is incomplete (missing: {}){}",
            dir.display(),
            missing.join(", "),
            manifest.error.as_ref().map(|e| format!("; error: {e}")).unwrap_or_default()
        );
    }
    let format = manifest.format;
    let path = |name: &str| -> Result<std::path::PathBuf> { Ok(dir.join(&files(&manifest, name)?[0])) };

    let pre: Vec<BalanceRecord> = read_records(path("balance_pre")?, format)?;
    let coefficients: Vec<CoefficientRow> = read_records(path("coefficients")?, format)?;
    let overlap: Vec<OverlapRecord> = read_records(path("overlap")?, format)?;
    let match_files = files(&manifest, "match")?;
    let pairs: Vec<PairRecord> = read_records(dir.join(&match_files[0]), format)?;
    let k_counts: Vec<KCountRecord> = read_records(dir.join(&match_files[1]), format)?;
    let post: Vec<BalanceRecord> = read_records(path("balance_post")?, format)?;
    let estimate: EffectEstimate = read_json(path("effect_estimate")?)?;

    let mut out = String::new();
    let _ = writeln!(out, "Propensity score matching report");
    let _ = writeln!(out, "Estimand: {}", manifest.estimand);

    let _ = writeln!(out, "\n== Pre-match balance ==");
    balance_section(&mut out, &pre);

    let _ = writeln!(out, "\n== Propensity model ==");
    let _ = writeln!(out, "{:<32} {:>10} {:>10} {:>8}", "term", "estimate", "std_error", "p_value");
    for c in &coefficients {
        let _ = writeln!(
            out,
            "{:<32} {:>10.3} {:>10.3} {:>8.3}",
            c.term, c.estimate, c.std_error, c.p_value
        );
    }
    for o in &overlap {
        let _ = writeln!(
            out,
            "arm {}: n = {}, scores in [{:.3}, {:.3}], median {:.3}, {:.1}% outside [{}, {}]",
            o.arm,
            o.n,
            o.min,
            o.max,
            o.q50,
            100.0 * o.fraction_outside,
            o.lo,
            o.hi
        );
    }
    if overlap.iter().any(|o| o.poor_overlap) {
        let _ = writeln!(out, "WARNING: poor overlap between the arms");
    }

    let _ = writeln!(out, "\n== Matching ==");
    let focal: BTreeSet<usize> = pairs.iter().map(|p| p.focal_id).collect();
    let matched: BTreeSet<usize> = pairs.iter().map(|p| p.match_id).collect();
    let tied = pairs.iter().filter(|p| p.weight < 1.0).map(|p| p.focal_id).collect::<BTreeSet<_>>();
    let max_k = k_counts.iter().map(|k| k.k).fold(0.0, f64::max);
    let _ = writeln!(out, "focal units matched:       {}", focal.len());
    let _ = writeln!(out, "pairs:                     {}", pairs.len());
    let _ = writeln!(out, "focal units with ties:     {}", tied.len());
    let _ = writeln!(out, "distinct matched units:    {}", matched.len());
    let _ = writeln!(out, "largest reuse count (K):   {}", count(max_k));

    let _ = writeln!(out, "\n== Post-match balance ==");
    let flagged = balance_section(&mut out, &post);
    if !flagged.is_empty() {
        let _ = writeln!(
            out,
            "WARNING: residual imbalance after matching (SMD >= {IMBALANCE_THRESHOLD}%): {}",
            flagged.join(", ")
        );
    }

    let _ = writeln!(out, "\n== Estimates ==");
    let _ = writeln!(out, "{} = {:.4}", estimate.estimand, estimate.tau_hat);
    let _ = writeln!(out, "focal units: {}", estimate.n_focal);
    let _ = writeln!(
        out,
        "Abadie-Imbens SE = {:.4}, 95% interval [{:.4}, {:.4}]",
        estimate.ai_se,
        estimate.tau_hat - 1.96 * estimate.ai_se,
        estimate.tau_hat + 1.96 * estimate.ai_se
    );
    match estimate.bootstrap_se {
        Some(se) => {
            let _ = writeln!(
                out,
                "bootstrap SE = {se:.4}, 95% interval [{:.4}, {:.4}] (B = {}, seed = {}, dropped = {})",
                estimate.tau_hat - 1.96 * se,
                estimate.tau_hat + 1.96 * se,
                estimate.bootstrap_replicates,
                estimate.seed.unwrap_or_default(),
                estimate.dropped_replicates
            );
        }
        None => {
            let _ = writeln!(out, "bootstrap SE: not requested");
        }
    }
    Ok(out)
}
