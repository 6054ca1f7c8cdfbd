//! The staged analysis run behind `fit`, `match`, `balance` and `estimate`.
//!
//! Artifacts are written in a fixed order. `warnings.txt` and then
//! `manifest.json` are written last, whether or not the run succeeded, so an
//! incomplete manifest marks a failed or interrupted run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crossmatch::balance::{balance_table, ps_histogram, BalanceTable, HISTOGRAM_BINS};
use crossmatch::effects::{estimate_from_analysis, point_estimate, unit_effects, Analysis};
use crossmatch::export::{
    k_count_records, overlap_records, pair_records, write_csv_records, write_json, write_records,
};
use crossmatch::matching::expand_matched_sample;
use crossmatch::propensity::{encode_design, fit_logistic, overlap_report, wald_inference};
use crossmatch::{load_table, nearest_neighbor_match, BootstrapConfig, Estimand, Format, MatchSpec, Schema};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const WARNINGS: &str = "warnings.txt";
pub const OVERLAP_THRESHOLDS: (f64, f64) = (0.01, 0.99);

/// Artifact names in write order.
pub const ARTIFACTS: [&str; 7] = [
    "coefficients",
    "overlap",
    "balance_pre",
    "match",
    "balance_post",
    "histograms",
    "effect_estimate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Fit,
    Match,
    Balance,
    Estimate,
}

impl Stage {
    fn artifact_count(self) -> usize {
        match self {
            Stage::Fit => 2,
            Stage::Match => 4,
            Stage::Balance => 6,
            Stage::Estimate => 7,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Match => "match",
            Stage::Balance => "balance",
            Stage::Estimate => "estimate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub estimand: Estimand,
    pub spec: MatchSpec,
    pub bootstrap: Option<usize>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub estimand: Estimand,
    pub format: Format,
    pub expected: usize,
    pub complete: bool,
    pub artifacts: Vec<ArtifactEntry>,
    pub warnings: usize,
    pub error: Option<String>,
}

impl Manifest {
    pub fn files(&self, name: &str) -> Option<&[String]> {
        self.artifacts
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.files.as_slice())
    }
}

struct Run<'a> {
    config: &'a RunConfig,
    artifacts: Vec<ArtifactEntry>,
    warnings: Vec<String>,
}

impl Run<'_> {
    fn file(&self, stem: &str) -> String {
        format!("{stem}.{}", self.config.format.extension())
    }

    fn path(&self, file: &str) -> PathBuf {
        self.config.out.join(file)
    }

    fn done(&mut self, name: &str, files: Vec<String>) {
        self.artifacts.push(ArtifactEntry {
            name: name.into(),
            files,
        });
    }

    fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.warnings.push(message);
    }

    fn write_balance(&mut self, name: &str, table: &BalanceTable) -> Result<()> {
        let file = self.file(name);
        write_records(self.path(&file), &table.records(), self.config.format)?;
        self.done(name, vec![file]);
        Ok(())
    }
}

/// Runs the pipeline up to `stage` and writes the warnings file and manifest.
/// Fails unless every artifact of the stage was written.
pub fn run_command(config: &RunConfig, stage: Stage) -> Result<()> {
    let manifest = run_pipeline(config, stage)?;
    match manifest.error {
        Some(e) => bail!(e),
        None => Ok(()),
    }
}

pub fn run_pipeline(config: &RunConfig, stage: Stage) -> Result<Manifest> {
    fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create output directory {}", config.out.display()))?;
    let mut run = Run {
        config,
        artifacts: Vec::new(),
        warnings: Vec::new(),
    };
    let error = execute(&mut run, stage).err().map(|e| format!("{e:#}"));

    let mut text = run.warnings.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(run.path(WARNINGS), text).context("cannot write warnings")?;
    let expected = stage.artifact_count();
    let manifest = Manifest {
        command: stage.name().into(),
        estimand: config.estimand,
        format: config.format,
        expected,
        complete: error.is_none() && run.artifacts.len() == expected,
        warnings: run.warnings.len(),
        artifacts: run.artifacts,
        error,
    };
    write_json(config.out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn execute(run: &mut Run, stage: Stage) -> Result<()> {
    let config = run.config;
    if config.bootstrap.is_some_and(|b| b < 2) {
        bail!("--bootstrap needs at least 2 replicates");
    }
    let schema = Schema::from_config_file(&config.schema)?;
    let table = load_table(&config.data, &schema)?;
    let z = table.treatment();

    let design = encode_design(&table);
    for w in design.warnings() {
        run.warn(w.to_string());
    }
    let model = fit_logistic(&design, z)?;
    let coefficients = wald_inference(&model)?;
    let file = run.file("coefficients");
    write_records(run.path(&file), &coefficients, config.format)?;
    run.done("coefficients", vec![file]);

    let overlap = overlap_report(&model.scores, z, OVERLAP_THRESHOLDS);
    if overlap.poor_overlap {
        for arm in &overlap.arms {
            if arm.fraction_outside > crossmatch::propensity::POOR_OVERLAP_FRACTION {
                let outside = 100.0 * arm.fraction_outside;
                run.warn(format!(
                    "poor overlap: {outside:.1}% of arm {} has a propensity score outside [{}, {}]",
                    arm.arm, OVERLAP_THRESHOLDS.0, OVERLAP_THRESHOLDS.1
                ));
            }
        }
    }
    let file = run.file("overlap");
    write_records(run.path(&file), &overlap_records(&overlap), config.format)?;
    run.done("overlap", vec![file]);
    if stage == Stage::Fit {
        return Ok(());
    }

    let pre = balance_table(&table, None, Some(&model.scores))?;
    run.write_balance("balance_pre", &pre)?;

    let matches = nearest_neighbor_match(&model.scores, z, &config.spec, config.estimand)?;
    if !matches.unmatched.is_empty() {
        run.warn(format!(
            "{} focal unit(s) left unmatched by the caliper",
            matches.unmatched.len()
        ));
    }
    let (pairs_file, k_file) = (run.file("matches"), run.file("k_counts"));
    write_records(run.path(&pairs_file), &pair_records(&matches), config.format)?;
    write_records(run.path(&k_file), &k_count_records(&matches), config.format)?;
    run.done("match", vec![pairs_file, k_file]);
    if stage == Stage::Match {
        return Ok(());
    }

    let post = balance_table(&table, Some(&matches), Some(&model.scores))?;
    for row in post.flagged() {
        run.warn(format!(
            "residual imbalance after matching: `{}` has SMD {}%",
            row.variable, row.smd
        ));
    }
    run.write_balance("balance_post", &post)?;

    let weights = expand_matched_sample(&table, &matches).weights;
    let hist_pre = ps_histogram(&model.scores, z, None, HISTOGRAM_BINS)?;
    let hist_post = ps_histogram(&model.scores, z, Some(&weights), HISTOGRAM_BINS)?;
    let files = vec!["histogram_pre.csv".to_string(), "histogram_post.csv".to_string()];
    write_csv_records(run.path(&files[0]), &hist_pre.records())?;
    write_csv_records(run.path(&files[1]), &hist_post.records())?;
    run.done("histograms", files);
    if stage == Stage::Balance {
        return Ok(());
    }

    let effects = unit_effects(&matches, table.outcome(), z)?;
    let tau_hat = point_estimate(&effects, config.estimand)?;
    let analysis = Analysis {
        design,
        model,
        matches,
        unit_effects: effects,
        tau_hat,
    };
    let bootstrap = config.bootstrap.map(|replicates| BootstrapConfig {
        replicates,
        seed: config.seed,
        workers: config.workers,
    });
    let estimate = estimate_from_analysis(&table, &analysis, &config.spec, config.estimand, bootstrap.as_ref())?;
    if estimate.dropped_replicates > 0 {
        run.warn(format!(
            "{} of {} bootstrap replicates failed and were dropped",
            estimate.dropped_replicates, estimate.bootstrap_replicates
        ));
    }
    let file = "effect_estimate.json".to_string();
    write_json(run.path(&file), &estimate)?;
    run.done("effect_estimate", vec![file]);
    Ok(())
}

/// Reads and checks the manifest of a run directory.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("no manifest in {}", dir.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))?)
}
