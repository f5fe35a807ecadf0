use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::Var;
use crate::encoders::tokenizer::{is_special, EOS, MASK};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const VCG_MASK_RATIO: f64 = 0.60;
pub const PROB_CLAMP: f64 = 1e-7;

/// Symmetric contrastive loss over the B×B similarity matrix `τ·V·Cᵀ`:
/// half the mean video→caption cross entropy plus half the mean
/// caption→video cross entropy, with matched pairs on the diagonal.
pub fn vcc_loss<'t, F: Scalar>(video: Var<'t, F>, caption: Var<'t, F>, tau: Var<'t, F>) -> Result<Var<'t, F>> {
    if video.shape() != caption.shape() {
        return Err(Error::Shape(format!(
            "video embeddings {:?} and caption embeddings {:?} differ",
            video.shape(),
            caption.shape()
        )));
    }
    if video.rows() == 0 {
        return Err(Error::EmptyInput("contrastive batch is empty".into()));
    }
    let b = video.rows();
    let diag: Vec<usize> = (0..b).collect();
    let sims = video.matmul_t(caption).scale_by(tau);
    let v2c = sims.cross_entropy_rows(&diag).mean();
    let c2v = sims.transpose().cross_entropy_rows(&diag).mean();
    Ok(v2c.add(c2v).scale(F::of(0.5)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MiningMode {
    /// Sample j ≠ i with probability ∝ exp(sim[i][j]).
    #[default]
    Stochastic,
    /// argmax over j ≠ i, ties to the lower index.
    Deterministic,
}

/// One negative column per row of `sims`, never the diagonal. Callers mine
/// the other direction by passing the transpose.
pub fn mine_hard_negatives<F: Scalar, R: Rng + ?Sized>(
    sims: &Matrix<F>,
    rng: &mut R,
    mode: MiningMode,
) -> Result<Vec<usize>> {
    let b = sims.rows();
    if b < 2 {
        return Err(Error::InsufficientBatch(b));
    }
    if sims.cols() != b {
        return Err(Error::Shape(format!("similarity matrix must be square, got {:?}", sims.shape())));
    }
    (0..b)
        .map(|i| {
            let row = sims.row(i);
            let others = (0..b).filter(move |&j| j != i);
            let best = others
                .clone()
                .fold(None::<usize>, |acc, j| match acc {
                    Some(k) if row[k] >= row[j] => Some(k),
                    _ => Some(j),
                })
                .expect("b >= 2");
            match mode {
                MiningMode::Deterministic => Ok(best),
                MiningMode::Stochastic => {
                    let mx = row[best].f64();
                    let weights: Vec<(usize, f64)> = others.map(|j| (j, (row[j].f64() - mx).exp())).collect();
                    let total: f64 = weights.iter().map(|w| w.1).sum();
                    if !total.is_finite() || total <= 0.0 {
                        return Err(Error::NonFinite {
                            component: "hard negative mining".into(),
                        });
                    }
                    let mut u = rng.random::<f64>() * total;
                    for &(j, w) in &weights {
                        if u < w {
                            return Ok(j);
                        }
                        u -= w;
                    }
                    Ok(weights.last().expect("b >= 2").0)
                }
            }
        })
        .collect()
}

/// Column 1 of the row-wise normalized exponential of n×2 match logits.
pub fn match_probabilities<'t, F: Scalar>(logits: Var<'t, F>) -> Var<'t, F> {
    logits.softmax_rows(None).slice_cols(1, 2)
}

/// Mean binary cross entropy of n×1 probabilities against 0/1 labels.
/// Probabilities are clamped to `[1e-7, 1 − 1e-7]` before the logarithm.
pub fn bce_loss<'t, F: Scalar>(p: Var<'t, F>, labels: &[bool]) -> Result<Var<'t, F>> {
    if p.shape() != (labels.len(), 1) || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} labels for probabilities of shape {:?}",
            labels.len(),
            p.shape()
        )));
    }
    let tape = p.tape();
    let pc = p.clamp(F::of(PROB_CLAMP), F::of(1.0 - PROB_CLAMP));
    let y = Matrix::from_vec(labels.len(), 1, labels.iter().map(|&l| if l { F::one() } else { F::zero() }).collect());
    let not_y = y.map(|v| F::one() - v);
    let one = tape.constant(Matrix::filled(labels.len(), 1, F::one()));
    let pos = tape.constant(y).mul(pc.ln());
    let neg = tape.constant(not_y).mul(one.sub(pc).ln());
    Ok(pos.add(neg).mean().scale(-F::one()))
}

/// Masked input plus the masked positions and their original ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedTokens {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// `round(n · ratio)` with halves rounded up, at least 1, at most `n`.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio + 0.5).floor() as usize).clamp(1, n.max(1))
}

/// Ordinary words and [EOS] are maskable; other reserved ids are not.
fn maskable(id: u32) -> bool {
    !is_special(id) || id == EOS
}

/// Positions eligible for masking, in order.
pub fn mask_positions(ids: &[u32]) -> Vec<usize> {
    (0..ids.len()).filter(|&i| maskable(ids[i])).collect()
}

/// Replaces `mask_count` uniformly chosen maskable positions by [MASK].
/// Positions are returned ascending.
pub fn vcg_mask<R: Rng + ?Sized>(ids: &[u32], ratio: f64, rng: &mut R) -> Result<MaskedTokens> {
    vcg_mask_within(ids, &mask_positions(ids), ratio, rng)
}

/// As [`vcg_mask`], restricted to the given candidate positions.
pub(crate) fn vcg_mask_within<R: Rng + ?Sized>(
    ids: &[u32],
    candidates: &[usize],
    ratio: f64,
    rng: &mut R,
) -> Result<MaskedTokens> {
    if candidates.is_empty() {
        return Err(Error::NoMaskableToken);
    }
    let k = mask_count(candidates.len(), ratio);
    let mut positions: Vec<usize> = sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    positions.sort_unstable();
    let mut masked = ids.to_vec();
    let targets = positions
        .iter()
        .map(|&p| std::mem::replace(&mut masked[p], MASK))
        .collect();
    Ok(MaskedTokens {
        ids: masked,
        positions,
        targets,
    })
}

/// Mean negative log-likelihood of `targets` at rows `positions` of
/// `logits` (len × vocab).
pub fn vcg_nll<'t, F: Scalar>(logits: Var<'t, F>, positions: &[usize], targets: &[u32]) -> Result<Var<'t, F>> {
    if positions.is_empty() || positions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} masked positions with {} targets",
            positions.len(),
            targets.len()
        )));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= logits.rows()) {
        return Err(Error::Shape(format!("masked position {p} beyond {} logit rows", logits.rows())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= logits.cols()) {
        return Err(Error::InvalidToken {
            id: t,
            vocab_size: logits.cols(),
        });
    }
    let rows = logits.tape().gather_rows(logits, positions);
    let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    Ok(rows.cross_entropy_rows(&t).mean())
}
