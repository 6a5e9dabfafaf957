//! CSV ingestion and optional standardization.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use salmoe::Dataset;

/// A CSV file with a header row; cells are parsed on demand.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub records: Vec<csv::StringRecord>,
    source: String,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .with_context(|| format!("cannot open input file {}", path.display()))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let header: Vec<String> = reader
            .headers()
            .with_context(|| format!("cannot read the header of {}", path.display()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut records = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            records.push(
                rec.with_context(|| {
                    format!("parse error in {} at line {}", path.display(), i + 2)
                })?,
            );
        }
        if records.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Self {
            header,
            records,
            source: path.display().to_string(),
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            anyhow!(
                "column '{name}' not found in {} (columns: {})",
                self.source,
                self.header.join(", ")
            )
        })
    }

    /// Parses a numeric column, reporting the line and column of the first bad cell.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(j).unwrap_or("");
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    anyhow!("parse error in {} at line {}, column '{name}': '{cell}' is not a finite number", self.source, i + 2)
                })
            })
            .collect()
    }

    /// Parses a column of positive integer labels.
    pub fn labels(&self, name: &str) -> Result<Vec<usize>> {
        let j = self.index(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(j).unwrap_or("");
                cell.parse::<usize>().ok().filter(|v| *v >= 1).ok_or_else(|| {
                    anyhow!("parse error in {} at line {}, column '{name}': '{cell}' is not a label >= 1", self.source, i + 2)
                })
            })
            .collect()
    }
}

/// Centre and scale of one standardized column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
}

impl Scaling {
    pub fn of(name: &str, v: &[f64]) -> Result<Self> {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) {
            bail!("column '{name}' has zero variance and cannot be standardized");
        }
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.mean + self.sd * v
    }
}

/// Transform applied before fitting: response plus each covariate column by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub y: Scaling,
    pub covariates: BTreeMap<String, Scaling>,
}

/// Column roles and the transform, recorded in report.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub y: String,
    pub x: Vec<String>,
    pub t: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl DataSpec {
    /// Column roles from flags; `t` defaults to `x`.
    pub fn new(y: String, x: Vec<String>, t: Option<Vec<String>>) -> Self {
        let t = t.unwrap_or_else(|| x.clone());
        Self {
            y,
            x,
            t,
            standardization: None,
        }
    }

    /// Estimates the transform on `table`.
    pub fn standardized(mut self, table: &Table) -> Result<Self> {
        let y = Scaling::of(&self.y, &table.column(&self.y)?)?;
        let mut covariates = BTreeMap::new();
        for name in self.x.iter().chain(&self.t) {
            if !covariates.contains_key(name) {
                covariates.insert(name.clone(), Scaling::of(name, &table.column(name)?)?);
            }
        }
        self.standardization = Some(Standardization { y, covariates });
        Ok(self)
    }

    fn covariate(&self, table: &Table, name: &str) -> Result<Vec<f64>> {
        let v = table.column(name)?;
        Ok(match &self.standardization {
            Some(s) => {
                let sc = s
                    .covariates
                    .get(name)
                    .ok_or_else(|| anyhow!("no recorded scaling for column '{name}'"))?;
                v.iter().map(|x| sc.apply(*x)).collect()
            }
            None => v,
        })
    }

    fn rows(&self, table: &Table, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let cols = names
            .iter()
            .map(|c| self.covariate(table, c))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..table.n())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect())
    }

    /// Covariate rows (without intercepts) on the fitting scale.
    pub fn design_rows(&self, table: &Table) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        Ok((self.rows(table, &self.x)?, self.rows(table, &self.t)?))
    }

    /// Response on the fitting scale.
    pub fn response(&self, table: &Table) -> Result<Vec<f64>> {
        let y = table.column(&self.y)?;
        Ok(match &self.standardization {
            Some(s) => y.iter().map(|v| s.y.apply(*v)).collect(),
            None => y,
        })
    }

    pub fn dataset(&self, table: &Table) -> Result<Dataset> {
        let y = self.response(table)?;
        let (x, t) = self.design_rows(table)?;
        Ok(Dataset::from_rows(y, &x, &t)?)
    }
}
