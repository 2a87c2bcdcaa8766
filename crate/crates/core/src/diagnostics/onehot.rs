use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-normalized class-mean encodings and their Gram matrix
/// `A[i][j] = e_i . e_j`.
///
/// Rows are stored in a canonical (lexicographic) order, so the matrix does
/// not depend on how classes were numbered.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    pub means: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl EncodingMatrix {
    /// From one (unnormalized) class-mean vector per row.
    pub fn from_class_means(means: &[Vec<f64>]) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Degenerate("no classes".into()));
        }
        let dim = means[0].len();
        let mut rows = Vec::with_capacity(means.len());
        for (class, m) in means.iter().enumerate() {
            if m.len() != dim {
                return Err(Error::Data(format!("class {class} mean has dim {}, expected {dim}", m.len())));
            }
            let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DegenerateEncoding { class });
            }
            rows.push(m.iter().map(|v| v / norm).collect::<Vec<f64>>());
        }
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n = rows.len();
        let means = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        let gram = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum()
            }
        });
        Ok(Self { means, gram })
    }

    /// Averages encodings per label, in ascending label order.
    pub fn from_encodings(encodings: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        if encodings.len() != labels.len() || encodings.is_empty() {
            return Err(Error::Data(format!(
                "{} encodings for {} labels",
                encodings.len(),
                labels.len()
            )));
        }
        let dim = encodings[0].len();
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (e, &l) in encodings.iter().zip(labels) {
            let entry = sums.entry(l).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, v) in entry.0.iter_mut().zip(e) {
                *s += v;
            }
            entry.1 += 1;
        }
        let means: Vec<Vec<f64>> = sums
            .into_values()
            .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
            .collect();
        Self::from_class_means(&means)
    }

    pub fn n_classes(&self) -> usize {
        self.gram.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneHotness {
    pub value: f64,
    /// The determinant was nonzero but below 1e-300 and is reported as 0.
    pub underflow: bool,
}

/// `|det(A - I)|` via pivoted LU. Near zero when the class means are close
/// to orthonormal.
pub fn one_hotness(enc: &EncodingMatrix) -> OneHotness {
    let n = enc.n_classes();
    let m = &enc.gram - DMatrix::<f64>::identity(n, n);
    let u = m.lu().u();
    let diag = u.diagonal();
    if diag.iter().any(|&d| d == 0.0) {
        return OneHotness {
            value: 0.0,
            underflow: false,
        };
    }
    // log-domain product so that underflow is detected rather than silent
    let log_det: f64 = diag.iter().map(|d| d.abs().ln()).sum();
    if log_det < 1e-300f64.ln() {
        OneHotness {
            value: 0.0,
            underflow: true,
        }
    } else {
        OneHotness {
            value: log_det.exp(),
            underflow: false,
        }
    }
}
