//! Straight-line reference implementations used as test oracles.

#![allow(dead_code)]

use rand::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// NT-Xent by the definition: for every stacked sample `i` with partner
/// `j`, `-log(exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau))`, averaged.
pub fn nt_xent_oracle(e: &[Vec<f64>], e_prime: &[Vec<f64>], tau: f64) -> f64 {
    let n = e.len();
    let u: Vec<&Vec<f64>> = e.iter().chain(e_prime.iter()).collect();
    let mut total = 0.0;
    for i in 0..2 * n {
        let j = if i < n { i + n } else { i - n };
        let mut denom = 0.0;
        for k in 0..2 * n {
            if k != i {
                denom += (cos(u[i], u[k]) / tau).exp();
            }
        }
        total += -((cos(u[i], u[j]) / tau).exp() / denom).ln();
    }
    total / (2 * n) as f64
}

pub fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if dot(&r, &r) > 1e-3 {
                break r;
            }
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Word-level relevance `R(Q_j, D_i)` of caption `i` (valid words only)
/// against image `j` regions.
pub fn damsm_word_score(words: &[Vec<f64>], regions: &[Vec<f64>], g1: f64, g2: f64) -> f64 {
    let t = words.len();
    let r = regions.len();
    // s[w][k] = word w . region k, normalised over words for each region
    let mut s = vec![vec![0.0; r]; t];
    for k in 0..r {
        let col: Vec<f64> = (0..t).map(|w| dot(&words[w], &regions[k])).collect();
        for (w, v) in softmax(&col).into_iter().enumerate() {
            s[w][k] = v;
        }
    }
    let mut acc = 0.0;
    for w in 0..t {
        let alpha = softmax(&s[w].iter().map(|v| g1 * v).collect::<Vec<_>>());
        let d = words[w].len();
        let mut c = vec![0.0; d];
        for k in 0..r {
            for x in 0..d {
                c[x] += alpha[k] * regions[k][x];
            }
        }
        acc += (g2 * cos(&c, &words[w])).exp();
    }
    acc.ln()
}

/// `-mean_i log softmax_j(g3 * score[i][j])[i]`.
pub fn diagonal_nll(score: &[Vec<f64>], g3: f64) -> f64 {
    let b = score.len();
    let mut total = 0.0;
    for i in 0..b {
        let p = softmax(&score[i].iter().map(|v| g3 * v).collect::<Vec<_>>());
        total -= p[i].ln();
    }
    total / b as f64
}

/// The four DAMSM terms `[word i->t, word t->i, sentence i->t, sentence t->i]`.
/// `words[i]` holds only the valid words of caption `i`.
pub fn damsm_oracle(
    global: &[Vec<f64>],
    regions: &[Vec<Vec<f64>>],
    sentence: &[Vec<f64>],
    words: &[Vec<Vec<f64>>],
    g: (f64, f64, f64),
) -> [f64; 4] {
    let b = global.len();
    let word: Vec<Vec<f64>> = (0..b)
        .map(|cap| (0..b).map(|img| damsm_word_score(&words[cap], &regions[img], g.0, g.1)).collect())
        .collect();
    let word_t: Vec<Vec<f64>> = (0..b).map(|img| (0..b).map(|cap| word[cap][img]).collect()).collect();
    let sent: Vec<Vec<f64>> = (0..b)
        .map(|img| (0..b).map(|cap| cos(&global[img], &sentence[cap])).collect())
        .collect();
    let sent_t: Vec<Vec<f64>> = (0..b).map(|cap| (0..b).map(|img| sent[img][cap]).collect()).collect();
    [
        diagonal_nll(&word_t, g.2),
        diagonal_nll(&word, g.2),
        diagonal_nll(&sent, g.2),
        diagonal_nll(&sent_t, g.2),
    ]
}

/// Inception Score with explicit loops: contiguous splits, `exp` of the
/// mean KL to the split marginal, population standard deviation.
pub fn inception_oracle(p: &[Vec<f64>], splits: usize) -> (f64, f64) {
    let m = p.len();
    let c = p[0].len();
    let mut scores = Vec::new();
    for s in 0..splits {
        let part = &p[s * m / splits..(s + 1) * m / splits];
        let mut marginal = vec![0.0; c];
        for row in part {
            for k in 0..c {
                marginal[k] += row[k] / part.len() as f64;
            }
        }
        let mut kl = 0.0;
        for row in part {
            for k in 0..c {
                if row[k] > 0.0 {
                    kl += row[k] * (row[k].ln() - marginal[k].ln());
                }
            }
        }
        scores.push((kl / part.len() as f64).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    (mean, var.sqrt())
}

/// Fréchet distance of two 2-D Gaussians: for 2x2 `M` with real
/// non-negative eigenvalues, `tr sqrt(M) = sqrt(tr M + 2 sqrt(det M))`.
pub fn frechet_2d(mu1: [f64; 2], s1: [[f64; 2]; 2], mu2: [f64; 2], s2: [[f64; 2]; 2]) -> f64 {
    let prod = [
        [
            s1[0][0] * s2[0][0] + s1[0][1] * s2[1][0],
            s1[0][0] * s2[0][1] + s1[0][1] * s2[1][1],
        ],
        [
            s1[1][0] * s2[0][0] + s1[1][1] * s2[1][0],
            s1[1][0] * s2[0][1] + s1[1][1] * s2[1][1],
        ],
    ];
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let tr_sqrt = (prod[0][0] + prod[1][1] + 2.0 * det(prod).sqrt()).sqrt();
    let dm = (mu1[0] - mu2[0]).powi(2) + (mu1[1] - mu2[1]).powi(2);
    dm + s1[0][0] + s1[1][1] + s2[0][0] + s2[1][1] - 2.0 * tr_sqrt
}

/// Unbiased sample mean and covariance, two passes.
pub fn sample_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mu = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mu[k] += r[k] / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mu[a]) * (r[b] - mu[b]) / (n - 1.0);
            }
        }
    }
    (mu, cov)
}
