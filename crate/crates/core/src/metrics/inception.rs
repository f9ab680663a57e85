use crate::error::{Error, Result};
use crate::par::Exec;

/// Tolerance on row sums of a probability matrix.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// `M x C` class probabilities, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    values: Vec<f64>,
    rows: usize,
    classes: usize,
}

impl ClassProbabilities {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || classes == 0 {
            return Err(Error::InvalidInput("class probabilities are empty".into()));
        }
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Shape("probability rows have different lengths".into()));
        }
        Self::from_flat(rows.iter().flatten().copied().collect(), rows.len(), classes)
    }

    pub fn from_flat(values: Vec<f64>, rows: usize, classes: usize) -> Result<Self> {
        if values.len() != rows * classes || rows == 0 || classes == 0 {
            return Err(Error::Shape(format!(
                "{} values cannot form a {rows} x {classes} probability matrix",
                values.len()
            )));
        }
        for (i, row) in values.chunks_exact(classes).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "probability row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "probability row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { values, rows, classes })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }
}

fn split_score(p: &ClassProbabilities, start: usize, end: usize) -> f64 {
    let c = p.classes;
    let n = (end - start) as f64;
    let mut marginal = vec![0.0; c];
    for i in start..end {
        for (m, v) in marginal.iter_mut().zip(p.row(i)) {
            *m += v;
        }
    }
    for m in &mut marginal {
        *m /= n;
    }
    let mut kl = 0.0;
    for i in start..end {
        for (v, m) in p.row(i).iter().zip(&marginal) {
            if *v > 0.0 {
                kl += v * (v.ln() - m.ln());
            }
        }
    }
    (kl / n).exp()
}

/// Inception Score: split the rows into `splits` contiguous groups, score
/// each as `exp(mean KL(p(y|x) || p(y)))` against the group marginal, and
/// return the mean and (population) standard deviation over groups.
pub fn inception_score(probs: &ClassProbabilities, splits: usize) -> Result<(f64, f64)> {
    inception_score_with(probs, splits, Exec::default())
}

pub fn inception_score_with(probs: &ClassProbabilities, splits: usize, exec: Exec) -> Result<(f64, f64)> {
    if splits == 0 || splits > probs.rows {
        return Err(Error::InvalidInput(format!(
            "need 1 <= splits <= rows, got {splits} splits for {} rows",
            probs.rows
        )));
    }
    let m = probs.rows;
    let scores = exec.map_range(splits, |k| split_score(probs, k * m / splits, (k + 1) * m / splits));
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rows_score_one_and_one_hot_scores_c() {
        let c = 7;
        let uniform = ClassProbabilities::new(&vec![vec![1.0 / c as f64; c]; 70]).unwrap();
        let (m, s) = inception_score(&uniform, 10).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && s.abs() < 1e-12);

        let one_hot: Vec<Vec<f64>> = (0..70)
            .map(|i| (0..c).map(|k| if k == i % c { 1.0 } else { 0.0 }).collect())
            .collect();
        let (m, _) = inception_score(&ClassProbabilities::new(&one_hot).unwrap(), 10).unwrap();
        assert!((m - c as f64).abs() < 1e-9, "{m}");
    }

    #[test]
    fn off_simplex_rows_and_bad_splits_are_rejected() {
        assert!(ClassProbabilities::new(&[vec![0.5, 0.6]]).is_err());
        assert!(ClassProbabilities::new(&[vec![1.1, -0.1]]).is_err());
        let p = ClassProbabilities::new(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert!(inception_score(&p, 3).is_err());
        assert!(inception_score(&p, 0).is_err());
    }

    #[test]
    fn modes_agree() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let a = ((i * 7 % 11) as f64 + 1.0) / 12.0;
                vec![a, 1.0 - a]
            })
            .collect();
        let p = ClassProbabilities::new(&rows).unwrap();
        assert_eq!(
            inception_score_with(&p, 5, Exec::Sequential).unwrap(),
            inception_score_with(&p, 5, Exec::Parallel).unwrap()
        );
    }
}
