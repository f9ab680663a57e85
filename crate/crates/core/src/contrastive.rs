//! NT-Xent contrastive loss over two paired embedding branches.
//!
//! The `2N` samples are stacked as `u = [e; e']`, so sample `i` and sample
//! `i + N` form a positive pair. Similarities are cosine similarities of the
//! raw embeddings (there is no projection head), scaled by `1 / tau`. The
//! softmax denominator for sample `i` runs over every `k != i`, positive
//! included.
//!
//! All functions operate on candle tensors of any float dtype and stay
//! differentiable with respect to the embedding entries.

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};

/// Added to the diagonal of the similarity logits; `exp` of it underflows to
/// exactly zero in both f32 and f64.
const SELF_MASK: f64 = -1.0e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    First,
    Second,
}

impl Branch {
    fn name(self) -> &'static str {
        match self {
            Branch::First => "first",
            Branch::Second => "second",
        }
    }
}

/// `N x d` embeddings with finite entries and no all-zero row.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    rows: Tensor,
    branch: Branch,
}

impl EmbeddingBatch {
    pub fn new(rows: Tensor, branch: Branch) -> Result<Self> {
        let (n, _) = rows
            .dims2()
            .map_err(|_| Error::Shape(format!("embedding batch must be 2-D, got {:?}", rows.dims())))?;
        if n == 0 {
            return Err(Error::InvalidInput("embedding batch is empty (N = 0)".into()));
        }
        check_rows(&rows, branch.name())?;
        Ok(Self { rows, branch })
    }

    /// Builds an f64 batch from plain rows.
    pub fn from_rows(rows: &[Vec<f64>], branch: Branch) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let t = Tensor::from_vec(flat, (rows.len(), d), &candle_core::Device::Cpu)?;
        Self::new(t, branch)
    }

    pub fn len(&self) -> usize {
        self.rows.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.dims()[1]
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    temperature: f64,
}

impl ContrastiveConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be a positive finite number, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(dot.is_finite() && na.is_finite() && nb.is_finite()) {
        return Err(Error::NonFinite("cosine similarity input".into()));
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Block-stacks two branches into `u = [e; e']`.
pub fn stack_pair(e: &EmbeddingBatch, e_prime: &EmbeddingBatch) -> Result<Tensor> {
    if e.rows.dims() != e_prime.rows.dims() {
        return Err(Error::Shape(format!(
            "branches differ in shape: {:?} vs {:?}",
            e.rows.dims(),
            e_prime.rows.dims()
        )));
    }
    if e.rows.dtype() != e_prime.rows.dtype() {
        return Err(Error::Shape(format!(
            "branches differ in dtype: {:?} vs {:?}",
            e.rows.dtype(),
            e_prime.rows.dtype()
        )));
    }
    Ok(Tensor::cat(&[&e.rows, &e_prime.rows], 0)?)
}

/// Row-wise log-probabilities `log softmax_{k != i}(sim(u_i, u_k) / tau)`.
/// Diagonal entries are meaningless and must not be read.
fn masked_log_probs(u: &Tensor, tau: f64) -> Result<Tensor> {
    let m = u.dims()[0];
    let norms = u.sqr()?.sum_keepdim(1)?.sqrt()?;
    let unit = u.broadcast_div(&norms)?;
    let logits = (unit.matmul(&unit.t()?)? / tau)?;
    let mask = (Tensor::eye(m, u.dtype(), u.device())? * SELF_MASK)?;
    let logits = (logits + mask)?;
    Ok(candle_nn::ops::log_softmax(&logits, D::Minus1)?)
}

/// Loss of a single sample `i` with positive partner `j` in the stacked
/// matrix `u` (`2N x d`).
pub fn nt_xent_sample_loss(u: &Tensor, i: usize, j: usize, tau: f64) -> Result<f64> {
    ContrastiveConfig::new(tau)?;
    let (m, _) = u
        .dims2()
        .map_err(|_| Error::Shape(format!("stacked embeddings must be 2-D, got {:?}", u.dims())))?;
    if i == j {
        return Err(Error::InvalidPair(i));
    }
    if i >= m || j >= m {
        return Err(Error::InvalidInput(format!(
            "pair ({i}, {j}) out of range for {m} stacked samples"
        )));
    }
    check_rows(u, "stacked")?;
    let lp = masked_log_probs(&u.to_dtype(DType::F64)?, tau)?;
    let v = lp.get(i)?.get(j)?.to_scalar::<f64>()?;
    Ok(-v)
}

/// Mean of the per-sample loss over all `2N` samples, positives at
/// `(i, i + N)` and `(i + N, i)`. Returns a scalar tensor in the input dtype.
pub fn nt_xent_batch_loss(
    e: &EmbeddingBatch,
    e_prime: &EmbeddingBatch,
    config: &ContrastiveConfig,
) -> Result<Tensor> {
    let u = stack_pair(e, e_prime)?;
    let n = e.len();
    let lp = masked_log_probs(&u, config.temperature)?;
    let partners: Vec<u32> = (0..2 * n).map(|i| ((i + n) % (2 * n)) as u32).collect();
    let partners = Tensor::from_vec(partners, (2 * n, 1), u.device())?;
    let positive = lp.gather(&partners, 1)?;
    Ok(positive.mean_all()?.neg()?)
}

/// Validating wrapper over [`nt_xent_batch_loss`] for raw `N x d` tensors.
pub fn nt_xent(e: &Tensor, e_prime: &Tensor, tau: f64) -> Result<Tensor> {
    let config = ContrastiveConfig::new(tau)?;
    let e = EmbeddingBatch::new(e.clone(), Branch::First)?;
    let e_prime = EmbeddingBatch::new(e_prime.clone(), Branch::Second)?;
    nt_xent_batch_loss(&e, &e_prime, &config)
}

fn check_rows(rows: &Tensor, branch: &'static str) -> Result<()> {
    let values = rows.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?;
    for (row, v) in values.iter().enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{branch} branch row {row}")));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroNorm { row, branch });
        }
    }
    Ok(())
}
