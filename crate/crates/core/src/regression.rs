//! Codebook targets and linear regression between feature spaces.
//!
//! Regressing class-clustered source features onto class-clustered targets
//! gives a classifier for free; regressing onto targets without class
//! structure does not.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::error::{Error, Result};
use crate::models::{read_blob, write_blob};
use crate::rng::stream;

/// Default codeword dimension.
pub const DEFAULT_DIM: usize = 128;
/// Default per-sample noise std.
pub const DEFAULT_SIGMA: f64 = 0.1;
/// Default ridge penalty.
pub const DEFAULT_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `n_classes x dim`, uniform on `[0, 1]`.
    pub codewords: Array2<f64>,
    pub sigma: f64,
    /// `n x dim` noisy copies of the codewords, grouped by class.
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
}

pub fn generate_codebook(n_classes: usize, dim: usize, sigma: f64, samples_per_class: usize, seed: u64) -> Result<Codebook> {
    if dim < 2 {
        return Err(Error::Config {
            field: "dim".into(),
            reason: format!("must be >= 2, got {dim}"),
        });
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config {
            field: "sigma".into(),
            reason: format!("must be >= 0, got {sigma}"),
        });
    }
    let mut rng = stream(seed, &[0xC0DE, 1]);
    let codewords = Array2::from_shape_simple_fn((n_classes, dim), || rng.gen_range(0.0..1.0));
    let noise = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = stream(seed, &[0xC0DE, 2]);
    let n = n_classes * samples_per_class;
    let mut samples = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        for k in 0..samples_per_class {
            let mut row = samples.row_mut(c * samples_per_class + k);
            for (v, &w) in row.iter_mut().zip(codewords.row(c)) {
                *v = w + noise.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    Ok(Codebook {
        codewords,
        sigma,
        samples,
        labels,
    })
}

impl Codebook {
    pub fn n_classes(&self) -> usize {
        self.codewords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.codewords.ncols()
    }

    /// Target matrix whose row `i` is the codeword of `labels[i]`.
    pub fn targets_for(&self, labels: &[usize]) -> Array2<f64> {
        let mut y = Array2::zeros((labels.len(), self.dim()));
        for (i, &l) in labels.iter().enumerate() {
            y.row_mut(i).assign(&self.codewords.row(l));
        }
        y
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let desc = json!({
            "tag": "codebook",
            "n_classes": self.n_classes(),
            "dim": self.dim(),
            "sigma": self.sigma,
        });
        write_blob(w, &desc, self.codewords.as_slice().expect("standard layout"))
    }

    /// Loads the codewords; samples are not stored.
    pub fn load<R: Read>(r: R) -> Result<Codebook> {
        let (desc, params) = read_blob(r)?;
        let field = |k: &str| desc.get(k).and_then(|v| v.as_u64()).map(|v| v as usize);
        match (desc.get("tag").and_then(|t| t.as_str()), field("n_classes"), field("dim")) {
            (Some("codebook"), Some(n), Some(d)) if n * d == params.len() => Ok(Codebook {
                codewords: Array2::from_shape_vec((n, d), params).expect("length checked"),
                sigma: desc.get("sigma").and_then(|v| v.as_f64()).unwrap_or(0.0),
                samples: Array2::zeros((0, d)),
                labels: Vec::new(),
            }),
            _ => Err(Error::Format("EEGM blob does not hold a codebook".into())),
        }
    }
}

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    /// `n_features x n_targets`.
    pub weights: Array2<f64>,
    pub lambda: f64,
    /// Mean squared training residual per target entry.
    pub mse: f64,
}

/// Ridge regression without intercept, `argmin |XW - Y|^2 + lambda |W|^2`,
/// solved through the Cholesky factor of the normal equations.
pub fn fit_linear_regressor(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64) -> Result<LinearRegressor> {
    if x.nrows() != y.nrows() {
        return Err(Error::Data(format!("X has {} rows, Y has {}", x.nrows(), y.nrows())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config {
            field: "lambda".into(),
            reason: format!("must be >= 0, got {lambda}"),
        });
    }
    let xm = to_na(x);
    let ym = to_na(y);
    let xt = xm.transpose();
    let mut gram = &xt * &xm;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let scale = gram.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("X^T X is not positive definite; use lambda > 0".into()))?;
    let pivots = chol.l_dirty().diagonal();
    let min_pivot = pivots.iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
    if !(min_pivot > scale * 1e-12) {
        return Err(Error::Singular(format!(
            "X^T X is numerically rank deficient (pivot {min_pivot:.3e}); use lambda > 0"
        )));
    }
    let w = chol.solve(&(&xt * &ym));
    let resid = &xm * &w - &ym;
    let mse = resid.iter().map(|v| v * v).sum::<f64>() / resid.len().max(1) as f64;
    Ok(LinearRegressor {
        weights: from_na(&w),
        lambda,
        mse,
    })
}

impl LinearRegressor {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let desc = json!({
            "tag": "regressor",
            "n_features": self.weights.nrows(),
            "n_targets": self.weights.ncols(),
            "lambda": self.lambda,
            "mse": self.mse,
        });
        let flat: Vec<f64> = self.weights.iter().copied().collect();
        write_blob(w, &desc, &flat)
    }

    pub fn load<R: Read>(r: R) -> Result<LinearRegressor> {
        let (desc, params) = read_blob(r)?;
        let field = |k: &str| desc.get(k).and_then(|v| v.as_u64()).map(|v| v as usize);
        match (desc.get("tag").and_then(|t| t.as_str()), field("n_features"), field("n_targets")) {
            (Some("regressor"), Some(p), Some(q)) if p * q == params.len() => Ok(LinearRegressor {
                weights: Array2::from_shape_vec((p, q), params).expect("length checked"),
                lambda: desc.get("lambda").and_then(|v| v.as_f64()).unwrap_or(0.0),
                mse: desc.get("mse").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
            }),
            _ => Err(Error::Format("EEGM blob does not hold a regressor".into())),
        }
    }
}

/// Class means of the rows of `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestClassMean {
    pub classes: Vec<usize>,
    pub means: Array2<f64>,
}

impl NearestClassMean {
    pub fn fit(features: ArrayView2<f64>, labels: &[usize]) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "{} rows for {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let mut groups: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (row, &l) in features.rows().into_iter().zip(labels) {
            let g = groups.entry(l).or_insert_with(|| (vec![0.0; features.ncols()], 0));
            for (s, v) in g.0.iter_mut().zip(row) {
                *s += v;
            }
            g.1 += 1;
        }
        if groups.len() < 2 {
            return Err(Error::Degenerate(format!("{} class(es); need at least 2", groups.len())));
        }
        let classes: Vec<usize> = groups.keys().copied().collect();
        let mut means = Array2::zeros((classes.len(), features.ncols()));
        for (i, (s, n)) in groups.into_values().enumerate() {
            for (m, v) in means.row_mut(i).iter_mut().zip(s) {
                *m = v / n as f64;
            }
        }
        Ok(Self { classes, means })
    }

    /// Nearest mean in Euclidean distance; ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, m) in self.means.rows().into_iter().enumerate() {
            let d: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        self.classes[best.1]
    }

    pub fn accuracy(&self, features: ArrayView2<f64>, labels: &[usize]) -> f64 {
        let hits = features
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(r, &l)| self.predict(r.as_slice().unwrap_or(&r.to_vec())) == l)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Nearest-class-mean accuracy on the data the means were computed from.
pub fn class_separability(features: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let ncm = NearestClassMean::fit(features, labels)?;
    Ok(ncm.accuracy(features, labels))
}

/// Fits `x_train -> y_train`, maps `x_test`, and classifies each prediction
/// by the nearest class mean of the held-out targets `y_test`. Class structure
/// that only exists in the particular training targets therefore does not
/// count.
pub fn regress_then_classify(
    (x_train, y_train, labels_train): (ArrayView2<f64>, ArrayView2<f64>, &[usize]),
    (x_test, y_test, labels_test): (ArrayView2<f64>, ArrayView2<f64>, &[usize]),
    lambda: f64,
) -> Result<f64> {
    if labels_train.len() != x_train.nrows() {
        return Err(Error::Data("training labels do not match X".into()));
    }
    let reg = fit_linear_regressor(x_train, y_train, lambda)?;
    let ncm = NearestClassMean::fit(y_test, labels_test)?;
    Ok(ncm.accuracy(reg.predict(x_test).view(), labels_test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, &[]);
        Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
    }

    #[test]
    fn noiseless_codebook_is_perfectly_separable() {
        let cb = generate_codebook(40, 16, 0.0, 5, 1).unwrap();
        assert_eq!(cb.samples, cb.targets_for(&cb.labels));
        assert_eq!(class_separability(cb.samples.view(), &cb.labels).unwrap(), 1.0);
    }

    #[test]
    fn default_codebook_separability() {
        let cb = generate_codebook(40, DEFAULT_DIM, DEFAULT_SIGMA, 50, 2).unwrap();
        assert!(class_separability(cb.samples.view(), &cb.labels).unwrap() >= 0.99);
        assert_eq!(cb, generate_codebook(40, DEFAULT_DIM, DEFAULT_SIGMA, 50, 2).unwrap());
        assert!(cb.codewords.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn identity_targets() {
        let x = gaussian(50, 6, 3);
        let reg = fit_linear_regressor(x.view(), x.view(), 0.0).unwrap();
        for ((i, j), &w) in reg.weights.indexed_iter() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((w - expect).abs() < 1e-10);
        }
        assert!(reg.mse < 1e-20);
    }

    #[test]
    fn rank_deficient_needs_ridge() {
        let mut x = gaussian(30, 5, 4);
        let col = x.column(0).to_owned();
        x.column_mut(4).assign(&col);
        let y = gaussian(30, 2, 5);
        assert!(matches!(fit_linear_regressor(x.view(), y.view(), 0.0), Err(Error::Singular(_))));
        assert!(fit_linear_regressor(x.view(), y.view(), 1e-3).is_ok());
    }

    #[test]
    fn matches_gradient_descent() {
        let x = gaussian(80, 5, 6);
        let y = gaussian(80, 3, 7);
        let reg = fit_linear_regressor(x.view(), y.view(), 0.0).unwrap();
        let mut w = Array2::<f64>::zeros((5, 3));
        let n = x.nrows() as f64;
        for _ in 0..20_000 {
            let grad = x.t().dot(&(x.dot(&w) - &y)) / n;
            w = w - grad * 0.5;
        }
        for (a, b) in reg.weights.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn separability_errors_and_shuffles() {
        let f = gaussian(10, 3, 8);
        assert!(matches!(class_separability(f.view(), &[0; 10]), Err(Error::Degenerate(_))));
        let cb = generate_codebook(10, 32, 0.1, 40, 9).unwrap();
        let mut labels = cb.labels.clone();
        let mut rng = stream(10, &[]);
        use rand::seq::SliceRandom;
        labels.shuffle(&mut rng);
        let acc = class_separability(cb.samples.view(), &labels).unwrap();
        assert!(acc < 0.25, "{acc}");
    }

    #[test]
    fn blobs_round_trip() {
        let cb = generate_codebook(4, 3, 0.1, 2, 11).unwrap();
        let mut buf = Vec::new();
        cb.save(&mut buf).unwrap();
        let back = Codebook::load(buf.as_slice()).unwrap();
        for (a, b) in back.codewords.iter().zip(&cb.codewords) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(LinearRegressor::load(buf.as_slice()).is_err());
        let reg = fit_linear_regressor(gaussian(10, 3, 1).view(), gaussian(10, 2, 2).view(), 0.1).unwrap();
        let mut buf = Vec::new();
        reg.save(&mut buf).unwrap();
        assert_eq!(LinearRegressor::load(buf.as_slice()).unwrap().weights.dim(), (3, 2));
    }
}
