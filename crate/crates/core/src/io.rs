//! Model JSON and data CSV ingestion.
//!
//! Model file:
//!
//! ```json
//! {
//!   "variables": ["q1", "q2"],
//!   "groups": [{"label": "a", "gamma": 1.0, "population_size": 51, "mu": [4, 4]}],
//!   "alpha": [[1.0]],
//!   "D": [[3, 2], [2, 3]],
//!   "C": [[1, 0.2], [0.2, 1]],
//!   "sections": {"A": ["q1"]}
//! }
//! ```
//!
//! `population_size` is a positive integer or `"inf"`. Data files are CSV
//! with header `group,individual,<variables>` (raw) or `group,<variables>`
//! (one row of sample means per group).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::{GroupData, ModelSpec, ObservedSample, PopulationSize};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    variables: Vec<String>,
    groups: Vec<GroupEntry>,
    alpha: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(default)]
    sections: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupEntry {
    label: String,
    gamma: f64,
    population_size: Value,
    mu: Vec<f64>,
}

fn square(field: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<SymMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::parse(field, format!("must be a {dim} x {dim} matrix")));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    SymMatrix::new(field, m)
}

fn population(label: &str, value: &Value) -> Result<PopulationSize> {
    let field = format!("groups[{label}].population_size");
    match value {
        Value::String(s) if s == "inf" => Ok(PopulationSize::Infinite),
        Value::Number(n) => n
            .as_u64()
            .map(PopulationSize::Finite)
            .ok_or_else(|| Error::parse(field, format!("`{n}` is not a non-negative integer"))),
        other => Err(Error::parse(field, format!("expected an integer or \"inf\", got {other}"))),
    }
}

fn unique(field: &str, labels: &[String]) -> Result<()> {
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::parse(field, format!("duplicate label `{l}`")));
        }
    }
    Ok(())
}

/// Parses a model document. Shapes are checked here; model invariants are
/// left to [`ModelSpec::validate`].
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse("model", e.to_string()))?;
    let v0 = file.variables.len();
    let g0 = file.groups.len();
    if v0 == 0 {
        return Err(Error::parse("variables", "at least one variable is required"));
    }
    if g0 == 0 {
        return Err(Error::parse("groups", "at least one group is required"));
    }
    unique("variables", &file.variables)?;
    let labels: Vec<String> = file.groups.iter().map(|g| g.label.clone()).collect();
    unique("groups", &labels)?;

    let d = square("D", &file.d, v0)?;
    let c = square("C", &file.c, v0)?;
    let alpha = square("alpha", &file.alpha, g0)?;
    let mut mu = DMatrix::zeros(g0, v0);
    let mut gamma = Vec::with_capacity(g0);
    let mut pops = Vec::with_capacity(g0);
    for (g, entry) in file.groups.iter().enumerate() {
        if entry.mu.len() != v0 {
            return Err(Error::parse(
                format!("groups[{}].mu", entry.label),
                format!("has {} entries, expected {v0}", entry.mu.len()),
            ));
        }
        mu.row_mut(g).copy_from_slice(&entry.mu);
        gamma.push(entry.gamma);
        pops.push(population(&entry.label, &entry.population_size)?);
    }

    let mut sections = Vec::new();
    for (name, vars) in &file.sections {
        let idx = vars
            .iter()
            .map(|v| {
                file.variables
                    .iter()
                    .position(|x| x == v)
                    .ok_or_else(|| Error::parse(format!("sections.{name}"), format!("unknown variable `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        sections.push((name.clone(), idx));
    }

    Ok(ModelSpec::new(labels, file.variables, d, c, alpha, gamma, mu, pops)?.with_sections(sections))
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    parse_model(&fs::read_to_string(path)?)
}

fn cell(record: &csv::StringRecord, i: usize, line: u64, column: &str) -> Result<f64> {
    let raw = record.get(i).unwrap_or("").trim();
    raw.parse::<f64>()
        .map_err(|_| Error::parse(format!("data line {line}, column `{column}`"), format!("`{raw}` is not a number")))
}

fn group_index(spec: &ModelSpec, token: &str, line: u64) -> Result<usize> {
    let token = token.trim();
    if let Some(g) = spec.group_labels.iter().position(|l| l == token) {
        return Ok(g);
    }
    match token.parse::<usize>() {
        Ok(g) if (1..=spec.g0()).contains(&g) => Ok(g - 1),
        _ => Err(Error::parse(format!("data line {line}, column `group`"), format!("unknown group `{token}`"))),
    }
}

/// Parses a data CSV against a model. Variable columns are matched by name
/// and may appear in any order.
pub fn parse_data(spec: &ModelSpec, text: &str) -> Result<ObservedSample> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::parse("data header", e.to_string()))?.clone();
    if header.get(0) != Some("group") {
        return Err(Error::parse("data header", "first column must be `group`"));
    }
    let raw = header.get(1) == Some("individual");
    let first_var = if raw { 2 } else { 1 };
    let columns: Vec<&str> = header.iter().skip(first_var).collect();
    let mut positions = Vec::with_capacity(spec.v0());
    for label in &spec.variable_labels {
        let pos = columns
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::parse("data header", format!("missing variable column `{label}`")))?;
        positions.push(first_var + pos);
    }
    if columns.len() != spec.v0() {
        return Err(Error::parse("data header", format!("{} variable columns, model has {}", columns.len(), spec.v0())));
    }

    let mut rows: Vec<Vec<DVector<f64>>> = vec![Vec::new(); spec.g0()];
    for (k, record) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let record = record.map_err(|e| Error::parse(format!("data line {line}"), e.to_string()))?;
        let g = group_index(spec, record.get(0).unwrap_or(""), line)?;
        let values = positions
            .iter()
            .zip(&spec.variable_labels)
            .map(|(&i, label)| cell(&record, i, line, label))
            .collect::<Result<Vec<_>>>()?;
        rows[g].push(DVector::from_vec(values));
    }

    let groups = rows
        .into_iter()
        .enumerate()
        .map(|(g, r)| {
            if r.is_empty() {
                Ok(GroupData::Missing)
            } else if raw {
                let m = DMatrix::from_fn(r.len(), spec.v0(), |i, v| r[i][v]);
                Ok(GroupData::Raw(m))
            } else if r.len() == 1 {
                Ok(GroupData::Means(r[0].clone()))
            } else {
                Err(Error::parse("data", format!("group `{}` has more than one row of means", spec.group_labels[g])))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservedSample::new(groups))
}

pub fn load_data(spec: &ModelSpec, path: &Path) -> Result<ObservedSample> {
    parse_data(spec, &fs::read_to_string(path)?)
}
