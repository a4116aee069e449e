//! File formats: CSV matrices and labels, JSON models, selection reports and
//! ground truth. External labels are 1-based; in memory they are 0-based.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::losses::LossKind;
use crate::model::{ClusterStructure, Factorization};
use crate::selection::{Score, SelectionReport};
use crate::sim::GroundTruth;
use crate::solver::{FitConfig, FitResult, Variant};

fn parse_records(text: &str) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        out.push(rec?);
    }
    Ok(out)
}

/// Parses a numeric CSV table. A first row with any non-numeric field is taken
/// as a header and returned separately.
pub fn parse_matrix(text: &str) -> Result<(DMatrix<f64>, Option<Vec<String>>)> {
    let mut records = parse_records(text)?;
    let mut header = None;
    if let Some(first) = records.first() {
        if first.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(first.iter().map(str::to_string).collect());
            records.remove(0);
        }
    }
    if records.is_empty() {
        return Err(CrlError::Parse("no data rows".into()));
    }
    let cols = records[0].len();
    let mut data = Vec::with_capacity(records.len() * cols);
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != cols {
            return Err(CrlError::Parse(format!("row {} has {} fields, expected {cols}", i + 1, rec.len())));
        }
        for (j, f) in rec.iter().enumerate() {
            if f.is_empty() {
                return Err(CrlError::Parse(format!("missing value at row {}, column {}", i + 1, j + 1)));
            }
            let v: f64 = f.parse().map_err(|_| CrlError::Parse(format!("bad number `{f}` at row {}, column {}", i + 1, j + 1)))?;
            data.push(v);
        }
    }
    Ok((DMatrix::from_row_slice(records.len(), cols, &data), header))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(parse_matrix(&read_text(path)?)?.0)
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .map_err(|e| CrlError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?
        .read_to_string(&mut s)?;
    Ok(s)
}

/// Writes a matrix as CSV with shortest round-trip float formatting.
pub fn write_matrix<W: Write>(w: W, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if let Some(h) = header {
        wtr.write_record(h)?;
    }
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    write_matrix(File::create(path)?, m, header)
}

/// Reads one positive integer label per row (first column), with an optional
/// header; returns 0-based labels.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut records = parse_records(text)?;
    if records.first().is_some_and(|r| r.get(0).is_some_and(|f| f.parse::<usize>().is_err())) {
        records.remove(0);
    }
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let f = rec.get(0).unwrap_or("");
            match f.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(CrlError::Parse(format!("row {}: labels must be positive integers, got `{f}`", i + 1))),
            }
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&read_text(path)?)
}

pub fn write_labels<W: Write>(w: W, labels: &[usize]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["label"])?;
    for &l in labels {
        wtr.write_record([(l + 1).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    write_labels(File::create(path)?, labels)
}

/// Cluster assignment in a model file: one group per row of `S` (row-wise
/// fits) or one level per entry (rank-wise fits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Assign {
    Rows(Vec<usize>),
    Entries(Vec<Vec<usize>>),
}

/// Serialized fit. `v` is `m × r` in row-major order. For row-wise fits
/// `centroids` lists the distinct rows of `S`; for rank-wise fits it lists the
/// distinct levels of each column. Assignments are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub loss: LossKind,
    pub variant: Variant,
    pub q: usize,
    pub r: usize,
    pub p: usize,
    pub m: usize,
    pub alpha: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub assign: Assign,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub config: FitConfig,
    pub seed: u64,
}

impl ModelFile {
    pub fn from_fit(res: &FitResult, cfg: &FitConfig) -> Self {
        let f = &res.factorization;
        let (p, r) = f.s.shape();
        let m = f.v.nrows();
        let (centroids, assign) = match cfg.variant {
            Variant::RowWise => {
                let cs = ClusterStructure::from_rows(&f.s);
                let cents = cs.mu.row_iter().map(|row| row.iter().copied().collect()).collect();
                (cents, Assign::Rows(cs.labels.iter().map(|l| l + 1).collect()))
            }
            Variant::RankWise => {
                let mut levels: Vec<Vec<f64>> = vec![Vec::new(); r];
                let mut assign = vec![vec![0usize; r]; p];
                for k in 0..r {
                    for j in 0..p {
                        let v = f.s[(j, k)];
                        let pos = match levels[k].iter().position(|&u| u == v) {
                            Some(pos) => pos,
                            None => {
                                levels[k].push(v);
                                levels[k].len() - 1
                            }
                        };
                        assign[j][k] = pos + 1;
                    }
                }
                (levels, Assign::Entries(assign))
            }
        };
        ModelFile {
            loss: res.loss_kind,
            variant: cfg.variant,
            q: cfg.q,
            r,
            p,
            m,
            alpha: f.alpha.iter().copied().collect(),
            v: f.v.transpose().iter().copied().collect(),
            centroids,
            assign,
            objective_trace: res.objective_trace.clone(),
            converged: res.converged,
            config: cfg.clone(),
            seed: cfg.kmeans.seed,
        }
    }

    /// Rebuilds `S`, `V` and `α`.
    pub fn factorization(&self) -> Result<Factorization> {
        let (p, m, r) = (self.p, self.m, self.r);
        if self.v.len() != m * r || self.alpha.len() != m {
            return Err(CrlError::Parse("V or alpha has the wrong length".into()));
        }
        let bad = || CrlError::Parse("assignment refers to a missing centroid".into());
        let mut s = DMatrix::zeros(p, r);
        match &self.assign {
            Assign::Rows(a) => {
                if a.len() != p {
                    return Err(CrlError::Parse("assignment length differs from p".into()));
                }
                for (j, &g) in a.iter().enumerate() {
                    let c = g.checked_sub(1).and_then(|g| self.centroids.get(g)).ok_or_else(bad)?;
                    if c.len() != r {
                        return Err(CrlError::Parse("centroid length differs from r".into()));
                    }
                    for k in 0..r {
                        s[(j, k)] = c[k];
                    }
                }
            }
            Assign::Entries(a) => {
                if a.len() != p || self.centroids.len() != r {
                    return Err(CrlError::Parse("rank-wise assignment has the wrong shape".into()));
                }
                for (j, row) in a.iter().enumerate() {
                    if row.len() != r {
                        return Err(CrlError::Parse("rank-wise assignment has the wrong shape".into()));
                    }
                    for (k, &g) in row.iter().enumerate() {
                        s[(j, k)] = *g.checked_sub(1).and_then(|g| self.centroids[k].get(g)).ok_or_else(bad)?;
                    }
                }
            }
        }
        let v = DMatrix::from_row_slice(m, r, &self.v);
        Ok(Factorization { s, v, alpha: DVector::from_vec(self.alpha.clone()), r })
    }

    pub fn coefficients(&self) -> Result<DMatrix<f64>> {
        let f = self.factorization()?;
        Ok(&f.s * f.v.transpose())
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

/// Selection report as CSV rows `(q, r, score, loss, penalty, status)`.
pub fn write_report_csv<W: Write>(w: W, report: &SelectionReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["q", "r", "score", "loss", "penalty", "status"])?;
    for c in &report.candidates {
        let (score, status) = match &c.score {
            Score::Value(v) if (c.q, c.r) == report.winner => (v.to_string(), "selected".to_string()),
            Score::Value(v) => (v.to_string(), "scored".to_string()),
            Score::Eliminated(why) => (String::new(), format!("eliminated: {why}")),
        };
        let num = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        wtr.write_record([c.q.to_string(), c.r.to_string(), score, num(c.loss), num(c.penalty), status])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_star: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    centers: Option<DMatrix<f64>>,
}

/// Ground truth as JSON with 1-based labels.
pub fn save_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let t = TruthFile { labels: truth.labels.iter().map(|l| l + 1).collect(), b_star: truth.b_star.clone(), centers: truth.centers.clone() };
    save_json(path, &t)
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    let t: TruthFile = load_json(path)?;
    let labels = t
        .labels
        .iter()
        .map(|&l| l.checked_sub(1).ok_or_else(|| CrlError::Parse("labels must be positive".into())))
        .collect::<Result<_>>()?;
    Ok(GroundTruth { labels, b_star: t.b_star, centers: t.centers })
}
