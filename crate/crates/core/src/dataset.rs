//! Observational tables: schema, loading, validation and descriptive summaries.
//!
//! A table holds one binary action column, one numeric outcome column and any
//! number of covariates. Covariates are continuous, binary (0/1) or categorical
//! with an ordered list of levels whose first entry is the reference level.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Continuous,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Binary,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }
}

/// Column roles of an observational table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<VariableSpec>,
}

impl Schema {
    pub fn new(
        treatment: impl Into<String>,
        outcome: impl Into<String>,
        covariates: Vec<VariableSpec>,
    ) -> Result<Self> {
        let schema = Self {
            treatment: treatment.into(),
            outcome: outcome.into(),
            covariates,
        };
        schema.check()?;
        Ok(schema)
    }

    /// Parses the key-value schema file format (TOML).
    pub fn from_config_str(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        schema.check()?;
        Ok(schema)
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("schema is always representable as TOML")
    }

    fn check(&self) -> Result<()> {
        if self.treatment == self.outcome {
            return Err(Error::Schema(format!(
                "treatment and outcome share the name `{}`",
                self.treatment
            )));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        seen.insert(&self.treatment);
        seen.insert(&self.outcome);
        for var in &self.covariates {
            if var.name.is_empty() {
                return Err(Error::Schema("empty covariate name".into()));
            }
            if !seen.insert(&var.name) {
                return Err(Error::Schema(format!("duplicate column name `{}`", var.name)));
            }
            if let VariableKind::Categorical { levels } = &var.kind {
                let distinct: HashSet<&String> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Schema(format!(
                        "categorical `{}` has duplicate levels",
                        var.name
                    )));
                }
                if levels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical `{}` needs at least two levels",
                        var.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Names of all columns in file order: treatment, outcome, covariates.
    pub fn column_names(&self) -> Vec<&str> {
        let mut names = vec![self.treatment.as_str(), self.outcome.as_str()];
        names.extend(self.covariates.iter().map(|v| v.name.as_str()));
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateColumn {
    /// Continuous values, or 0/1 for binary covariates.
    Numeric(Vec<f64>),
    /// Level indices into the declared level list.
    Categorical(Vec<usize>),
}

impl CovariateColumn {
    pub fn len(&self) -> usize {
        match self {
            CovariateColumn::Numeric(v) => v.len(),
            CovariateColumn::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            CovariateColumn::Numeric(v) => {
                CovariateColumn::Numeric(rows.iter().map(|&r| v[r]).collect())
            }
            CovariateColumn::Categorical(v) => {
                CovariateColumn::Categorical(rows.iter().map(|&r| v[r]).collect())
            }
        }
    }
}

/// A validated observational table. Unit ids are row positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    schema: Schema,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    covariates: Vec<CovariateColumn>,
}

impl ObservationTable {
    /// Builds a table from typed columns, enforcing every table invariant.
    pub fn from_columns(
        schema: Schema,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        covariates: Vec<CovariateColumn>,
    ) -> Result<Self> {
        schema.check()?;
        let table = Self {
            schema,
            treatment,
            outcome,
            covariates,
        };
        let violations = table.violations();
        if violations.is_empty() {
            Ok(table)
        } else {
            Err(Error::InvalidTable(violations))
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let n = self.treatment.len();
        let mut out = Vec::new();
        if self.outcome.len() != n {
            out.push(Violation::table(format!(
                "outcome has {} rows, treatment has {n}",
                self.outcome.len()
            )));
        }
        if self.covariates.len() != self.schema.covariates.len() {
            out.push(Violation::table(format!(
                "{} covariate columns for {} declared covariates",
                self.covariates.len(),
                self.schema.covariates.len()
            )));
            return out;
        }
        for (row, &z) in self.treatment.iter().enumerate() {
            if z > 1 {
                out.push(Violation::cell(row, &self.schema.treatment, "treatment not binary"));
            }
        }
        for (row, y) in self.outcome.iter().enumerate() {
            if !y.is_finite() {
                out.push(Violation::cell(row, &self.schema.outcome, "non-finite outcome"));
            }
        }
        for (spec, col) in self.schema.covariates.iter().zip(&self.covariates) {
            if col.len() != n {
                out.push(Violation::table(format!(
                    "covariate `{}` has {} rows, expected {n}",
                    spec.name,
                    col.len()
                )));
                continue;
            }
            match (&spec.kind, col) {
                (VariableKind::Continuous, CovariateColumn::Numeric(v)) => {
                    for (row, x) in v.iter().enumerate() {
                        if !x.is_finite() {
                            out.push(Violation::cell(row, &spec.name, "non-finite value"));
                        }
                    }
                }
                (VariableKind::Binary, CovariateColumn::Numeric(v)) => {
                    for (row, &x) in v.iter().enumerate() {
                        if x != 0.0 && x != 1.0 {
                            out.push(Violation::cell(row, &spec.name, "binary value not in {0,1}"));
                        }
                    }
                }
                (VariableKind::Categorical { levels }, CovariateColumn::Categorical(v)) => {
                    for (row, &level) in v.iter().enumerate() {
                        if level >= levels.len() {
                            out.push(Violation::cell(row, &spec.name, "level index out of range"));
                        }
                    }
                }
                _ => out.push(Violation::table(format!(
                    "covariate `{}` storage does not match its kind",
                    spec.name
                ))),
            }
        }
        out.extend(arm_violations(&self.treatment));
        out
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariates(&self) -> &[CovariateColumn] {
        &self.covariates
    }

    /// Unit counts as `[arm 0, arm 1]`.
    pub fn arm_counts(&self) -> [usize; 2] {
        let treated = self.treatment.iter().filter(|&&z| z == 1).count();
        [self.len() - treated, treated]
    }

    /// Rows in the given order (repeats allowed). The result is not revalidated,
    /// so an arm may be empty; callers that resample must check `arm_counts`.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            treatment: rows.iter().map(|&r| self.treatment[r]).collect(),
            outcome: rows.iter().map(|&r| self.outcome[r]).collect(),
            covariates: self.covariates.iter().map(|c| c.select(rows)).collect(),
        }
    }

    /// Same rows with a replaced outcome vector.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Self::from_columns(
            self.schema.clone(),
            self.treatment.clone(),
            outcome,
            self.covariates.clone(),
        )
    }

    /// Same rows with every treatment label flipped.
    pub fn with_flipped_treatment(&self) -> Self {
        Self {
            treatment: self.treatment.iter().map(|&z| 1 - z).collect(),
            ..self.clone()
        }
    }

    /// Writes the table as CSV with a header row, in schema column order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.schema.column_names())?;
        let mut record: Vec<String> = Vec::with_capacity(2 + self.covariates.len());
        for row in 0..self.len() {
            record.clear();
            record.push(self.treatment[row].to_string());
            record.push(self.outcome[row].to_string());
            for (spec, col) in self.schema.covariates.iter().zip(&self.covariates) {
                record.push(match (col, &spec.kind) {
                    (CovariateColumn::Numeric(v), _) => v[row].to_string(),
                    (CovariateColumn::Categorical(v), VariableKind::Categorical { levels }) => {
                        levels[v[row]].clone()
                    }
                    (CovariateColumn::Categorical(v), _) => v[row].to_string(),
                });
            }
            out.write_record(&record)?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn arm_violations(treatment: &[u8]) -> Vec<Violation> {
    let mut out = Vec::new();
    if treatment.len() < 2 {
        out.push(Violation::table(format!(
            "table has {} rows, at least 2 required",
            treatment.len()
        )));
    }
    for arm in 0..2u8 {
        if !treatment.contains(&arm) {
            out.push(Violation::table(format!("arm {arm} empty")));
        }
    }
    out
}

/// One failed table invariant. `row` and `column` are absent for table-level
/// problems such as an empty arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub row: Option<usize>,
    pub column: Option<String>,
    pub reason: String,
}

impl Violation {
    fn cell(row: usize, column: &str, reason: impl Into<String>) -> Self {
        Self {
            row: Some(row),
            column: Some(column.to_string()),
            reason: reason.into(),
        }
    }

    fn table(reason: impl Into<String>) -> Self {
        Self {
            row: None,
            column: None,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.row, &self.column) {
            (Some(row), Some(col)) => write!(f, "row {row}, column `{col}`: {}", self.reason),
            (None, Some(col)) => write!(f, "column `{col}`: {}", self.reason),
            _ => f.write_str(&self.reason),
        }
    }
}

/// Unvalidated cells as read from a file, restricted to the schema's columns
/// in schema order.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub schema: Schema,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut positions = Vec::new();
        for name in schema.column_names() {
            let pos = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
            positions.push(pos);
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            rows.push(
                positions
                    .iter()
                    .map(|&p| record.get(p).unwrap_or("").trim().to_string())
                    .collect(),
            );
        }
        Ok(Self {
            schema: schema.clone(),
            rows,
        })
    }

    /// Converts to a typed table, or returns every violation found.
    pub fn into_table(self) -> Result<ObservationTable> {
        let (parsed, violations) = parse_raw(&self);
        if !violations.is_empty() {
            return Err(Error::InvalidTable(violations));
        }
        let (treatment, outcome, covariates) = parsed;
        ObservationTable::from_columns(self.schema, treatment, outcome, covariates)
    }
}

type Parsed = (Vec<u8>, Vec<f64>, Vec<CovariateColumn>);

fn parse_raw(raw: &RawTable) -> (Parsed, Vec<Violation>) {
    let schema = &raw.schema;
    let n = raw.rows.len();
    let mut violations = Vec::new();
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut covariates: Vec<CovariateColumn> = schema
        .covariates
        .iter()
        .map(|spec| match spec.kind {
            VariableKind::Categorical { .. } => CovariateColumn::Categorical(Vec::with_capacity(n)),
            _ => CovariateColumn::Numeric(Vec::with_capacity(n)),
        })
        .collect();

    for (row, cells) in raw.rows.iter().enumerate() {
        match parse_number(&cells[0]) {
            Ok(z) if z == 0.0 || z == 1.0 => treatment.push(z as u8),
            Ok(_) => {
                violations.push(Violation::cell(row, &schema.treatment, "treatment not binary"));
                treatment.push(0);
            }
            Err(reason) => {
                violations.push(Violation::cell(row, &schema.treatment, reason));
                treatment.push(0);
            }
        }
        match parse_number(&cells[1]) {
            Ok(y) => outcome.push(y),
            Err(reason) => {
                violations.push(Violation::cell(row, &schema.outcome, reason));
                outcome.push(0.0);
            }
        }
        for ((spec, col), cell) in schema.covariates.iter().zip(&mut covariates).zip(&cells[2..]) {
            match (&spec.kind, col) {
                (VariableKind::Continuous, CovariateColumn::Numeric(v)) => match parse_number(cell)
                {
                    Ok(x) => v.push(x),
                    Err(reason) => {
                        violations.push(Violation::cell(row, &spec.name, reason));
                        v.push(0.0);
                    }
                },
                (VariableKind::Binary, CovariateColumn::Numeric(v)) => match parse_number(cell) {
                    Ok(x) if x == 0.0 || x == 1.0 => v.push(x),
                    Ok(_) => {
                        violations.push(Violation::cell(row, &spec.name, "binary value not in {0,1}"));
                        v.push(0.0);
                    }
                    Err(reason) => {
                        violations.push(Violation::cell(row, &spec.name, reason));
                        v.push(0.0);
                    }
                },
                (VariableKind::Categorical { levels }, CovariateColumn::Categorical(v)) => {
                    if cell.is_empty() {
                        violations.push(Violation::cell(row, &spec.name, "missing value"));
                        v.push(0);
                    } else if let Some(idx) = levels.iter().position(|l| l == cell) {
                        v.push(idx);
                    } else {
                        violations.push(Violation::cell(
                            row,
                            &spec.name,
                            format!("categorical value `{cell}` not among declared levels"),
                        ));
                        v.push(0);
                    }
                }
                _ => unreachable!("column storage follows the schema"),
            }
        }
    }
    violations.extend(arm_violations(&treatment));
    ((treatment, outcome, covariates), violations)
}

fn parse_number(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("missing value".into());
    }
    match cell.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("unparseable numeric `{cell}`")),
    }
}

/// Lists every invariant violation of a raw table. Empty iff the table would
/// load successfully.
pub fn validate_schema(raw: &RawTable) -> Vec<Violation> {
    parse_raw(raw).1
}

/// Loads and validates a CSV file against a schema. Row order is preserved
/// and unit ids follow it.
pub fn load_table(path: impl AsRef<Path>, schema: &Schema) -> Result<ObservationTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    RawTable::from_reader(std::io::BufReader::new(file), schema)?.into_table()
}

/// Weighted mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    /// Frequency-weighted moments: the variance denominator is `Σw − 1`, which
    /// equals the sample variance when every weight is 1 and equals the
    /// variance of the row-duplicated sample for integer weights. When
    /// `Σw ≤ 1` no dispersion is estimable and `sd` is reported as 0.
    pub fn weighted<I>(values: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64)> + Clone,
    {
        let (mut total, mut sum) = (0.0, 0.0);
        for (x, w) in values.clone() {
            total += w;
            sum += w * x;
        }
        if total <= 0.0 {
            return Self {
                n: total,
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = sum / total;
        let ss: f64 = values
            .into_iter()
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum();
        let sd = if total > 1.0 { (ss / (total - 1.0)).sqrt() } else { 0.0 };
        Self { n: total, mean, sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub count: f64,
    /// Percentage of the arm's total weight.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableStats {
    Continuous {
        overall: Moments,
        arms: [Moments; 2],
    },
    /// Count and percentage of units with value 1.
    Binary {
        overall: LevelCount,
        arms: [LevelCount; 2],
    },
    Categorical {
        levels: Vec<String>,
        overall: Vec<LevelCount>,
        arms: [Vec<LevelCount>; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    pub stats: VariableStats,
}

/// Per-variable statistics, overall and per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Weight totals as `[arm 0, arm 1]`.
    pub arm_totals: [f64; 2],
    pub overall_total: f64,
    pub variables: Vec<VariableSummary>,
}

/// One flat output record per (variable, arm[, level]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub variable: String,
    pub arm: String,
    pub level: Option<String>,
    pub n: f64,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub count: Option<f64>,
    pub percent: Option<f64>,
}

impl Summary {
    pub fn records(&self) -> Vec<SummaryRecord> {
        let arm_labels = ["overall", "0", "1"];
        let totals = [self.overall_total, self.arm_totals[0], self.arm_totals[1]];
        let mut out = Vec::new();
        for var in &self.variables {
            match &var.stats {
                VariableStats::Continuous { overall, arms } => {
                    for (label, m) in arm_labels.iter().zip([overall, &arms[0], &arms[1]]) {
                        out.push(SummaryRecord {
                            variable: var.name.clone(),
                            arm: label.to_string(),
                            level: None,
                            n: m.n,
                            mean: Some(m.mean),
                            sd: Some(m.sd),
                            count: None,
                            percent: None,
                        });
                    }
                }
                VariableStats::Binary { overall, arms } => {
                    for ((label, c), n) in arm_labels.iter().zip([overall, &arms[0], &arms[1]]).zip(totals) {
                        out.push(SummaryRecord {
                            variable: var.name.clone(),
                            arm: label.to_string(),
                            level: Some("1".into()),
                            n,
                            mean: None,
                            sd: None,
                            count: Some(c.count),
                            percent: Some(c.percent),
                        });
                    }
                }
                VariableStats::Categorical {
                    levels,
                    overall,
                    arms,
                } => {
                    for ((label, counts), n) in arm_labels.iter().zip([overall, &arms[0], &arms[1]]).zip(totals) {
                        for (level, c) in levels.iter().zip(counts) {
                            out.push(SummaryRecord {
                                variable: var.name.clone(),
                                arm: label.to_string(),
                                level: Some(level.clone()),
                                n,
                                mean: None,
                                sd: None,
                                count: Some(c.count),
                                percent: Some(c.percent),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Descriptive statistics per variable, stratified by arm and overall.
///
/// With `weights` every row counts `w` times (frequency weights). Each arm
/// must carry positive total weight.
pub fn descriptive_summary(table: &ObservationTable, weights: Option<&[f64]>) -> Result<Summary> {
    let n = table.len();
    let unit;
    let weights = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Dimension(format!("{} weights for {n} rows", w.len())));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Degenerate("weights must be finite and non-negative".into()));
            }
            w
        }
        None => {
            unit = vec![1.0; n];
            &unit
        }
    };
    let z = table.treatment();
    let mut arm_totals = [0.0; 2];
    for (&zi, &w) in z.iter().zip(weights) {
        arm_totals[zi as usize] += w;
    }
    for (arm, &total) in arm_totals.iter().enumerate() {
        if total <= 0.0 {
            return Err(Error::Degenerate(format!("arm {arm} has zero total weight")));
        }
    }
    let overall_total = arm_totals[0] + arm_totals[1];
    let pct = |count: f64, total: f64| LevelCount {
        count,
        percent: 100.0 * count / total,
    };

    let variables = table
        .schema()
        .covariates
        .iter()
        .zip(table.covariates())
        .map(|(spec, col)| {
            let stats = match (&spec.kind, col) {
                (VariableKind::Continuous, CovariateColumn::Numeric(x)) => {
                    let all = x.iter().copied().zip(weights.iter().copied());
                    let arm = |a: u8| {
                        Moments::weighted(
                            x.iter()
                                .zip(weights)
                                .zip(z)
                                .filter(move |(_, &zi)| zi == a)
                                .map(|((&xi, &wi), _)| (xi, wi)),
                        )
                    };
                    VariableStats::Continuous {
                        overall: Moments::weighted(all),
                        arms: [arm(0), arm(1)],
                    }
                }
                (VariableKind::Binary, CovariateColumn::Numeric(x)) => {
                    let mut ones = [0.0; 2];
                    for ((&xi, &wi), &zi) in x.iter().zip(weights).zip(z) {
                        ones[zi as usize] += wi * xi;
                    }
                    VariableStats::Binary {
                        overall: pct(ones[0] + ones[1], overall_total),
                        arms: [pct(ones[0], arm_totals[0]), pct(ones[1], arm_totals[1])],
                    }
                }
                (VariableKind::Categorical { levels }, CovariateColumn::Categorical(x)) => {
                    let mut counts = [vec![0.0; levels.len()], vec![0.0; levels.len()]];
                    for ((&li, &wi), &zi) in x.iter().zip(weights).zip(z) {
                        counts[zi as usize][li] += wi;
                    }
                    let overall = (0..levels.len())
                        .map(|l| pct(counts[0][l] + counts[1][l], overall_total))
                        .collect();
                    let arms = [0, 1].map(|a| {
                        counts[a]
                            .iter()
                            .map(|&c| pct(c, arm_totals[a]))
                            .collect::<Vec<_>>()
                    });
                    VariableStats::Categorical {
                        levels: levels.clone(),
                        overall,
                        arms,
                    }
                }
                _ => unreachable!("validated tables store columns by kind"),
            };
            VariableSummary {
                name: spec.name.clone(),
                stats,
            }
        })
        .collect();

    Ok(Summary {
        arm_totals,
        overall_total,
        variables,
    })
}
