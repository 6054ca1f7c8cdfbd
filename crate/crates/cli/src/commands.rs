use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use crossmatch::export::{write_json, write_records};
use crossmatch::synthlab::suite_scenario;
use crossmatch::{descriptive_summary, generate, true_estimands, validate_schema, Format, RawTable, Scenario, Schema};

pub fn describe(data: &Path, schema: &Path, out: &Path, format: Format) -> Result<()> {
    let schema = Schema::from_config_file(schema)?;
    let file = fs::File::open(data).with_context(|| format!("cannot open {}", data.display()))?;
    let raw = RawTable::from_reader(std::io::BufReader::new(file), &schema)?;
    let violations = validate_schema(&raw);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        bail!("{} violation(s) in {}", violations.len(), data.display());
    }
    let table = raw.into_table()?;
    let summary = descriptive_summary(&table, None)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("summary.{}", format.extension()));
    write_records(&path, &summary.records(), format)?;
    let [n0, n1] = table.arm_counts();
    println!("{} units: {n0} in arm 0, {n1} in arm 1", table.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn resolve_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(Scenario::from_config_file(path)?);
    }
    Ok(suite_scenario(spec)?)
}

/// Writes `data.csv`, `schema.toml`, the resolved `scenario.toml`, the
/// counterfactual sidecar and `truth.json`.
pub fn simulate(spec: &str, seed: Option<u64>, n: Option<usize>, out: &Path, format: Format) -> Result<()> {
    let mut scenario = resolve_scenario(spec)?;
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    if let Some(n) = n {
        scenario = scenario.with_n(n);
    }
    let data = generate(&scenario)?;
    let truth = true_estimands(&data.units)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    data.table.write_csv_file(out.join("data.csv"))?;
    fs::write(out.join("schema.toml"), scenario.schema()?.to_config_string())?;
    fs::write(out.join("scenario.toml"), scenario.to_config_string())?;
    write_records(
        out.join(format!("counterfactuals.{}", format.extension())),
        &data.counterfactual_records(),
        format,
    )?;
    write_json(out.join("truth.json"), &truth)?;
    if data.clamped > 0 {
        eprintln!(
            "warning: {} unit(s) had outcome probabilities clamped to [0, 1]",
            data.clamped
        );
    }
    println!(
        "{}: n = {}, seed = {}, ATE = {:.6}, ATT = {:.6}, ATNT = {:.6}",
        scenario.name, scenario.n, scenario.seed, truth.ate, truth.att, truth.atnt
    );
    Ok(())
}
