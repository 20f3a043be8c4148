use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::types::{OrderId, WorkerId};

/// Worker-by-order value matrix with row and column labels. Unavailable
/// workers' rows hold `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub values: Vec<f64>,
    pub available: Vec<bool>,
    pub workers: Vec<WorkerId>,
    pub orders: Vec<OrderId>,
}

fn default_labels(rows: usize, cols: usize) -> (Vec<WorkerId>, Vec<OrderId>) {
    ((0..rows as u32).map(WorkerId).collect(), (0..cols as u32).map(OrderId).collect())
}

impl QMatrix {
    /// Builds a matrix labelled `0..rows` / `0..cols`, masking rows whose
    /// availability flag is false.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, available: Vec<bool>) -> Result<Self> {
        let (workers, orders) = default_labels(rows, cols);
        Self::labelled(values, available, workers, orders)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("QMatrix", "ragged rows"));
        }
        let available = rows.iter().map(|r| r.iter().any(|v| v.is_finite()) || cols == 0).collect();
        Self::new(rows.len(), cols, rows.concat(), available)
    }

    pub fn labelled(
        mut values: Vec<f64>,
        available: Vec<bool>,
        workers: Vec<WorkerId>,
        orders: Vec<OrderId>,
    ) -> Result<Self> {
        let (rows, cols) = (workers.len(), orders.len());
        if values.len() != rows * cols || available.len() != rows {
            return Err(Error::shape("QMatrix", format!("{} values, {} flags for {rows}x{cols}", values.len(), available.len())));
        }
        for (r, avail) in available.iter().enumerate() {
            if !avail {
                values[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            }
        }
        Ok(Self { rows, cols, values, available, workers, orders })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn finite_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.values, self.rows, self.cols, out)
    }
}

/// Stage-2 utilities: order columns plus a reject utility per worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub order_utilities: Vec<f64>,
    pub reject_utilities: Vec<f64>,
}

impl UtilityMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.order_utilities[r * self.cols + c]
    }
}

/// Per-worker choice distribution over `cols` orders plus a trailing reject
/// column. Unavailable rows are one-hot on reject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    pub rows: usize,
    /// Number of order columns; each row has `cols + 1` entries.
    pub cols: usize,
    pub probs: Vec<f64>,
    pub available: Vec<bool>,
    pub workers: Vec<WorkerId>,
    pub orders: Vec<OrderId>,
}

impl ProbabilityMatrix {
    pub fn width(&self) -> usize {
        self.cols + 1
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.probs[r * self.width()..(r + 1) * self.width()]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.probs[r * self.width() + c]
    }

    pub fn reject(&self, r: usize) -> f64 {
        self.get(r, self.cols)
    }

    /// Row softmax of `[M, N]` with unavailable rows forced one-hot.
    pub fn from_utilities(u: &UtilityMatrix, available: &[bool]) -> Result<Self> {
        let (workers, orders) = default_labels(u.rows, u.cols);
        Self::from_utilities_labelled(u, available, workers, orders)
    }

    pub fn from_utilities_labelled(
        u: &UtilityMatrix,
        available: &[bool],
        workers: Vec<WorkerId>,
        orders: Vec<OrderId>,
    ) -> Result<Self> {
        if available.len() != u.rows || workers.len() != u.rows || orders.len() != u.cols {
            return Err(Error::shape("ProbabilityMatrix", "label or availability length mismatch"));
        }
        let width = u.cols + 1;
        let mut probs = vec![0.0; u.rows * width];
        for r in 0..u.rows {
            let row = &mut probs[r * width..(r + 1) * width];
            if !available[r] {
                row[u.cols] = 1.0;
                continue;
            }
            row[..u.cols].copy_from_slice(&u.order_utilities[r * u.cols..(r + 1) * u.cols]);
            row[u.cols] = u.reject_utilities[r];
            softmax_in_place(row);
        }
        Ok(Self { rows: u.rows, cols: u.cols, probs, available: available.to_vec(), workers, orders })
    }

    /// Wraps explicit probabilities; each row must be a distribution.
    pub fn from_probs(rows: usize, cols: usize, probs: Vec<f64>, available: Vec<bool>) -> Result<Self> {
        let (workers, orders) = default_labels(rows, cols);
        let p = Self { rows, cols, probs, available, workers, orders };
        if p.probs.len() != rows * (cols + 1) || p.available.len() != rows {
            return Err(Error::shape("ProbabilityMatrix", "probability or availability length mismatch"));
        }
        p.check_rows(1e-9)?;
        Ok(p)
    }

    pub fn check_rows(&self, tol: f64) -> Result<()> {
        for r in 0..self.rows {
            let row = self.row(r);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > tol {
                return Err(Error::Numeric(format!("row {r} is not a distribution (sum {sum})")));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.probs, self.rows, self.width(), out)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Headerless numeric CSV, one matrix row per line.
pub fn write_matrix_csv<W: Write>(values: &[f64], rows: usize, cols: usize, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in 0..rows {
        w.write_record(values[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unavailable_rows_masked() {
        let q = QMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![true, false]).unwrap();
        assert_eq!(q.get(0, 1), 2.0);
        assert_eq!(q.get(1, 0), f64::NEG_INFINITY);
        assert_eq!(q.finite_count(), 2);
    }

    #[test]
    fn probabilities_from_utilities() {
        let u = UtilityMatrix { rows: 2, cols: 1, order_utilities: vec![0.0, 3.0], reject_utilities: vec![0.0, -1.0] };
        let p = ProbabilityMatrix::from_utilities(&u, &[true, false]).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.row(1), &[0.0, 1.0]);
        p.check_rows(1e-12).unwrap();
    }

    #[test]
    fn csv_dump() {
        let q = QMatrix::new(1, 2, vec![1.5, -2.0], vec![true]).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.5,-2\n");
    }
}
