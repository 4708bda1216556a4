//! UNR1 (per-point label distributions) and LBL1 (per-point ids) text formats.
//!
//! ```text
//! UNR1 <N> <L>
//! p_0 ... p_{L-1}        one row per point, summing to 1
//!
//! LBL1 <N>
//! id                     one per line; -1 marks boundary points in segmentations
//! ```

use std::path::Path;

use crate::textio::{self, write_sig, Lines};
use crate::{Error, Result};

/// Row sums must be within this of 1.
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryFile {
    pub n_labels: usize,
    /// Row-major `N x L`.
    pub probabilities: Vec<f64>,
}

impl UnaryFile {
    pub fn new(n_labels: usize, probabilities: Vec<f64>) -> Result<Self> {
        if n_labels == 0 || probabilities.len() % n_labels != 0 {
            return Err(Error::invalid(format!("{} values do not form rows of {n_labels}", probabilities.len())));
        }
        for (i, row) in probabilities.chunks_exact(n_labels).enumerate() {
            check_row(row).map_err(|m| Error::invalid(format!("row {i}: {m}")))?;
        }
        Ok(UnaryFile { n_labels, probabilities })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len() / self.n_labels
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("UNR1 {} {}\n", self.len(), self.n_labels);
        for row in self.probabilities.chunks_exact(self.n_labels) {
            for (c, &v) in row.iter().enumerate() {
                if c > 0 {
                    s.push(' ');
                }
                write_sig(&mut s, v, 9);
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let head = lines.next_fields()?;
        if head.len() != 3 || head[0] != "UNR1" {
            return Err(lines.error("expected header `UNR1 <N> <L>`"));
        }
        let n = lines.parse_usize(head[1])?;
        let l = lines.parse_usize(head[2])?;
        if l == 0 {
            return Err(lines.error("label count must be positive"));
        }
        let mut probs = Vec::with_capacity(n * l);
        for _ in 0..n {
            let f = lines.next_fields()?;
            if f.len() != l {
                return Err(lines.error(format!("expected {l} probabilities, found {}", f.len())));
            }
            let row = f.iter().map(|t| lines.parse_f64(t)).collect::<Result<Vec<f64>>>()?;
            check_row(&row).map_err(|m| lines.error(m))?;
            probs.extend(row);
        }
        lines.expect_end()?;
        Ok(UnaryFile { n_labels: l, probabilities: probs })
    }
}

fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("probability {v} outside [0, 1]"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(format!("probabilities sum to {s}, not 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub ids: Vec<i64>,
}

impl LabelFile {
    pub fn to_text(&self) -> String {
        let mut s = format!("LBL1 {}\n", self.ids.len());
        for id in &self.ids {
            s.push_str(&id.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let head = lines.next_fields()?;
        if head.len() != 2 || head[0] != "LBL1" {
            return Err(lines.error("expected header `LBL1 <N>`"));
        }
        let n = lines.parse_usize(head[1])?;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let f = lines.next_fields()?;
            if f.len() != 1 {
                return Err(lines.error(format!("expected one id, found {} fields", f.len())));
            }
            ids.push(lines.parse_i64(f[0])?);
        }
        lines.expect_end()?;
        Ok(LabelFile { ids })
    }

    /// Ids as labels in `0..n_labels`.
    pub fn labels(&self, n_labels: usize) -> Result<Vec<usize>> {
        self.ids
            .iter()
            .map(|&v| {
                usize::try_from(v)
                    .ok()
                    .filter(|&c| c < n_labels)
                    .ok_or_else(|| Error::invalid(format!("label {v} out of range for {n_labels} labels")))
            })
            .collect()
    }
}

pub fn write_unary(path: &Path, u: &UnaryFile) -> Result<()> {
    std::fs::write(path, u.to_text())?;
    Ok(())
}

pub fn read_unary(path: &Path) -> Result<UnaryFile> {
    UnaryFile::parse(&textio::source_name(path), &textio::read_file(path)?)
}

pub fn write_labels(path: &Path, l: &LabelFile) -> Result<()> {
    std::fs::write(path, l.to_text())?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelFile> {
    LabelFile::parse(&textio::source_name(path), &textio::read_file(path)?)
}
