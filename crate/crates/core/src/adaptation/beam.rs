use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BEAM: usize = 3;

/// Next-token log-probabilities given the tokens generated so far.
pub trait StepScorer {
    fn log_probs(&mut self, generated: &[u32]) -> Result<Vec<f64>>;
}

impl<T: FnMut(&[u32]) -> Result<Vec<f64>>> StepScorer for T {
    fn log_probs(&mut self, generated: &[u32]) -> Result<Vec<f64>> {
        self(generated)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Generated tokens, ending with `eos` when finished.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Tokens without the trailing end marker.
    pub fn content(&self) -> &[u32] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Higher log-probability first; ties go to the lexicographically smaller
/// token sequence.
fn better(a: &BeamHypothesis, b: &BeamHypothesis) -> std::cmp::Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search without length normalization.
///
/// Each step expands every live hypothesis over the vocabulary and keeps
/// the best `live` candidates overall; candidates ending in `eos` move to
/// the finished pool, so the live set shrinks as hypotheses finish. Stops
/// when nothing is live or `max_len` tokens were generated, and returns the
/// best finished hypothesis (or the best live one if none finished).
pub fn beam_search(scorer: &mut impl StepScorer, beam: usize, max_len: usize, eos: u32) -> Result<BeamHypothesis> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    if beam < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut width = beam;
    for _ in 0..max_len {
        let mut cands = Vec::with_capacity(live.len() * 8);
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            for (t, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                if !l.is_finite() {
                    return Err(Error::NonFinite {
                        component: "decoder log-probabilities".into(),
                    });
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t as u32);
                cands.push(BeamHypothesis {
                    finished: t as u32 == eos,
                    tokens,
                    log_prob: h.log_prob + l,
                });
            }
        }
        cands.sort_by(better);
        cands.truncate(width);
        live.clear();
        for c in cands {
            if c.finished {
                finished.push(c);
                width -= 1;
            } else {
                live.push(c);
            }
        }
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        // Live scores only fall, so they can no longer overtake.
        if live.is_empty() || live.iter().all(|h| h.log_prob < best_done) {
            break;
        }
    }
    let pool = if finished.is_empty() { &mut live } else { &mut finished };
    pool.sort_by(better);
    Ok(pool.swap_remove(0))
}

/// Stepwise argmax decoding, ties to the lower token index.
pub fn greedy_decode(scorer: &mut impl StepScorer, max_len: usize, eos: u32) -> Result<BeamHypothesis> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut h = BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while h.tokens.len() < max_len {
        let lp = scorer.log_probs(&h.tokens)?;
        let (t, &l) = lp
            .iter()
            .enumerate()
            .fold(None::<(usize, &f64)>, |acc, (i, l)| match acc {
                Some((_, b)) if *b >= *l => acc,
                _ => Some((i, l)),
            })
            .ok_or_else(|| Error::EmptyInput("empty vocabulary".into()))?;
        h.tokens.push(t as u32);
        h.log_prob += l;
        if t as u32 == eos {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}
