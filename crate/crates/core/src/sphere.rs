//! Feature matrices on the unit hypersphere and the pairwise cosine/angle
//! kernels every objective is built from.
//!
//! Rows are class feature vectors. Objectives operate on the row-normalized
//! view, and every kernel here has a matching `backward` so gradients can be
//! pulled back to the raw (unnormalized) matrix.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Rows with an L2 norm at or below this are rejected as degenerate.
pub const ROW_NORM_FLOOR: f64 = 1e-12;

/// Off-diagonal cosines are clamped to `[-1 + eps, 1 - eps]` so that the
/// arccos derivative stays finite.
pub const COS_CLAMP_EPS: f64 = 1e-7;

/// An N x D matrix of class feature vectors, N >= 2, D >= 1, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(Error::TooFewPoints(n));
        }
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Array2::zeros((n, d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: (n, d),
                    actual: (i, row.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                data[[i, j]] = v;
            }
        }
        Self::new(data)
    }

    /// Standard-normal entries; rows are direction-uniform once normalized.
    pub fn random_normal<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        let data = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        Self::new(data)
    }

    pub fn n_classes(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn row_norms(&self) -> Array1<f64> {
        self.data.map_axis(Axis(1), |r| r.dot(&r).sqrt())
    }

    /// Reads one row per line, comma separated, no header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| Error::Parse {
                        line: idx + 1,
                        message: format!("{s:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// Writes shortest round-trip decimals, so `read_csv` recovers the exact bits.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        for row in self.data.rows() {
            let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Row-normalized features. Keeps the original row norms for the backward pass.
#[derive(Debug, Clone)]
pub struct NormalizedFeatureMatrix {
    data: Array2<f64>,
    norms: Array1<f64>,
}

impl NormalizedFeatureMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn norms(&self) -> &Array1<f64> {
        &self.norms
    }

    pub fn n_classes(&self) -> usize {
        self.data.nrows()
    }

    /// Pulls a gradient with respect to the normalized rows back to the raw
    /// rows: `(g - (g . e_hat) e_hat) / |e|`.
    pub fn backward(&self, grad_hat: &Array2<f64>) -> Array2<f64> {
        let mut out = grad_hat.clone();
        for ((mut g, e), &r) in out
            .rows_mut()
            .into_iter()
            .zip(self.data.rows())
            .zip(self.norms.iter())
        {
            let radial = g.dot(&e);
            g.scaled_add(-radial, &e);
            g /= r;
        }
        out
    }

    /// Re-wraps as a plain feature matrix (rows of unit norm).
    pub fn to_features(&self) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.clone(),
        }
    }
}

pub fn normalize(features: &FeatureMatrix) -> Result<NormalizedFeatureMatrix> {
    let norms = features.row_norms();
    if let Some(i) = norms.iter().position(|&r| r <= ROW_NORM_FLOOR) {
        return Err(Error::ZeroNormRow(i));
    }
    let mut data = features.data.clone();
    for (mut row, &r) in data.rows_mut().into_iter().zip(norms.iter()) {
        row /= r;
    }
    Ok(NormalizedFeatureMatrix { data, norms })
}

/// Symmetric pairwise cosine matrix with clamped off-diagonal entries.
#[derive(Debug, Clone)]
pub struct CosineMatrix {
    data: Array2<f64>,
    raw: Array2<f64>,
}

impl CosineMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Whether the unclamped cosine of pair (i, j) fell outside the clamp range.
    /// Clamped entries carry no gradient.
    pub fn is_clamped(&self, i: usize, j: usize) -> bool {
        i != j && self.raw[[i, j]].abs() >= 1.0 - COS_CLAMP_EPS
    }

    /// Given `pair_grad[i][j] = dL/dCos_ij` for each unordered off-diagonal
    /// pair (symmetric, diagonal ignored), returns dL/dE_hat.
    pub fn backward(&self, nf: &NormalizedFeatureMatrix, pair_grad: &Array2<f64>) -> Array2<f64> {
        let n = self.data.nrows();
        let mut w = pair_grad.clone();
        for i in 0..n {
            w[[i, i]] = 0.0;
            for j in 0..n {
                if self.is_clamped(i, j) {
                    w[[i, j]] = 0.0;
                }
            }
        }
        w.dot(nf.data())
    }

    /// Off-diagonal entries in row-major upper-triangle order.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.data.nrows();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.data[[i, j]]);
            }
        }
        out
    }
}

pub fn cosine_matrix(nf: &NormalizedFeatureMatrix) -> CosineMatrix {
    let gram = nf.data().dot(&nf.data().t());
    let n = gram.nrows();
    // symmetrize so (i, j) and (j, i) agree bit for bit
    let raw = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (gram[[i, j]] + gram[[j, i]]));
    let lo = -1.0 + COS_CLAMP_EPS;
    let hi = 1.0 - COS_CLAMP_EPS;
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else {
            raw[[i, j]].clamp(lo, hi)
        }
    });
    CosineMatrix { data, raw }
}

/// Pairwise angles in radians, `[0, pi]`, zero diagonal.
#[derive(Debug, Clone)]
pub struct AngleMatrix {
    data: Array2<f64>,
}

impl AngleMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Smallest angle from row `i` to any other row.
    pub fn nearest(&self, i: usize) -> f64 {
        self.data
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &a)| a)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest off-diagonal angle overall.
    pub fn min_off_diagonal(&self) -> f64 {
        (0..self.data.nrows())
            .map(|i| self.nearest(i))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn angle_matrix(cos: &CosineMatrix) -> AngleMatrix {
    let mut data = cos.data().mapv(f64::acos);
    data.diag_mut().fill(0.0);
    AngleMatrix { data }
}

/// Minimum pairwise angle (radians) of the normalized rows.
pub fn min_pairwise_angle(features: &FeatureMatrix) -> Result<f64> {
    let nf = normalize(features)?;
    Ok(angle_matrix(&cosine_matrix(&nf)).min_off_diagonal())
}
