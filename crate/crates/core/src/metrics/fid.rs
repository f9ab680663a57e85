use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::par::Exec;

/// Eigenvalues below `-NEGATIVE_EIGEN_TOLERANCE * scale` are treated as a
/// failed square root rather than rounding noise.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-10;
/// Diagonal regulariser added to both covariances on the retry.
pub const FID_EPSILON: f64 = 1e-6;

/// Rows per partial sum; fixed so parallel and sequential runs add in the
/// same order.
const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Real,
    Generated,
}

/// `M x F` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    values: Vec<f64>,
    rows: usize,
    dim: usize,
    source: FeatureSource,
}

impl FeatureSet {
    pub fn new(rows: &[Vec<f64>], source: FeatureSource) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("feature rows have different lengths".into()));
        }
        Self::from_flat(rows.iter().flatten().copied().collect(), rows.len(), dim, source)
    }

    pub fn from_flat(values: Vec<f64>, rows: usize, dim: usize, source: FeatureSource) -> Result<Self> {
        if values.len() != rows * dim || dim == 0 {
            return Err(Error::Shape(format!(
                "{} values cannot form a {rows} x {dim} feature matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {} of the {source:?} set", i / dim)));
        }
        Ok(Self {
            values,
            rows,
            dim,
            source,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }
}

/// Mean and unbiased covariance of the rows.
pub fn mean_and_covariance(set: &FeatureSet, exec: Exec) -> (DVector<f64>, DMatrix<f64>) {
    let f = set.dim;
    let chunks: Vec<(usize, usize)> = (0..set.rows)
        .step_by(CHUNK_ROWS)
        .map(|s| (s, (s + CHUNK_ROWS).min(set.rows)))
        .collect();
    let sums = exec.map(&chunks, |&(s, e)| {
        let mut acc = DVector::<f64>::zeros(f);
        for i in s..e {
            acc += DVector::from_column_slice(set.row(i));
        }
        acc
    });
    let mut mean = DVector::<f64>::zeros(f);
    for s in &sums {
        mean += s;
    }
    mean /= set.rows as f64;
    let scatters = exec.map(&chunks, |&(s, e)| {
        let mut centred = DMatrix::<f64>::zeros(f, e - s);
        for (c, i) in (s..e).enumerate() {
            centred.set_column(c, &(DVector::from_column_slice(set.row(i)) - &mean));
        }
        &centred * centred.transpose()
    });
    let mut cov = DMatrix::<f64>::zeros(f, f);
    for s in &scatters {
        cov += s;
    }
    cov /= (set.rows - 1) as f64;
    (mean, cov)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Tr((A B)^{1/2})` for symmetric PSD `A`, `B`, computed as the sum of
/// square roots of the eigenvalues of `A^{1/2} B A^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> std::result::Result<f64, String> {
    let ea = SymmetricEigen::new(symmetrize(a));
    let scale_a = ea.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(v) = ea.eigenvalues.iter().find(|&&v| v < -NEGATIVE_EIGEN_TOLERANCE * scale_a) {
        return Err(format!("covariance has eigenvalue {v:e} (scale {scale_a:e})"));
    }
    let roots = ea.eigenvalues.map(|v| v.max(0.0).sqrt());
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&roots) * ea.eigenvectors.transpose();
    let inner = symmetrize(&(&sqrt_a * b * &sqrt_a));
    let ei = SymmetricEigen::new(inner);
    let scale = ei.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(v) = ei.eigenvalues.iter().find(|&&v| v < -NEGATIVE_EIGEN_TOLERANCE * scale) {
        return Err(format!("covariance product has eigenvalue {v:e} (scale {scale:e})"));
    }
    Ok(ei.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum())
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// `|mu_r - mu_f|^2 + Tr(S_r + S_f - 2 (S_r S_f)^{1/2})`.
pub fn fid(real: &FeatureSet, fake: &FeatureSet) -> Result<f64> {
    fid_with(real, fake, Exec::default())
}

pub fn fid_with(real: &FeatureSet, fake: &FeatureSet, exec: Exec) -> Result<f64> {
    if real.dim != fake.dim {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            real.dim, fake.dim
        )));
    }
    if real.rows < 2 || fake.rows < 2 {
        return Err(Error::InvalidInput("FID needs at least 2 rows per feature set".into()));
    }
    let (mu_r, cov_r) = mean_and_covariance(real, exec);
    let (mu_f, cov_f) = mean_and_covariance(fake, exec);
    let diff = (&mu_r - &mu_f).norm_squared();
    let tr_sqrt = match trace_sqrt_product(&cov_r, &cov_f) {
        Ok(t) => t,
        Err(first) => {
            let eps = DMatrix::<f64>::identity(real.dim, real.dim) * FID_EPSILON;
            trace_sqrt_product(&(&cov_r + &eps), &(&cov_f + &eps)).map_err(|second| {
                Error::MatrixSqrt(format!(
                    "{first}; retry with {FID_EPSILON:e} * I regulariser: {second}"
                ))
            })?
        }
    };
    let value = diff + cov_r.trace() + cov_f.trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>]) -> FeatureSet {
        FeatureSet::new(rows, FeatureSource::Real).unwrap()
    }

    fn grid() -> Vec<Vec<f64>> {
        (0..40)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.7).sin(), (t * 1.3).cos() + 0.1 * t, (t * 0.11).sin() * 2.0]
            })
            .collect()
    }

    #[test]
    fn identical_sets_give_zero() {
        let a = set(&grid());
        assert!(fid(&a, &a).unwrap() < 1e-9);
    }

    #[test]
    fn mean_shift_only() {
        let a = grid();
        let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + 3.0, r[1], r[2] - 4.0]).collect();
        let v = fid(&set(&a), &set(&b)).unwrap();
        assert!((v - 25.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn rank_deficient_covariances_still_work() {
        // All rows on a line: covariance of rank 1.
        let a: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let v = fid(&set(&a), &set(&a)).unwrap();
        assert!(v < 1e-6, "{v}");
    }

    #[test]
    fn errors() {
        let a = set(&grid());
        let b = set(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(fid(&a, &b).is_err());
        let single = set(&[vec![1.0, 2.0, 3.0]]);
        assert!(fid(&a, &single).is_err());
        assert!(FeatureSet::new(&[vec![f64::NAN]], FeatureSource::Generated).is_err());
    }

    #[test]
    fn modes_agree_bitwise() {
        let rows: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let other: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[1] * 2.0, r[0] + 1.0]).collect();
        let (a, b) = (set(&rows), set(&other));
        assert_eq!(
            fid_with(&a, &b, Exec::Sequential).unwrap().to_bits(),
            fid_with(&a, &b, Exec::Parallel).unwrap().to_bits()
        );
    }
}
