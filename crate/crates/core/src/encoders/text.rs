use super::tokenizer::{TextTokens, CLS};
use super::{EncoderConfig, EncoderOutput, Modality};
use crate::autograd::{AttentionMask, Var};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, LayerNorm, ParamId, TransformerLayer};
use crate::scalar::Scalar;

/// How the text encoder runs.
#[derive(Clone, Copy)]
pub enum TextMode<'t, F: Scalar> {
    /// Bidirectional self-attention only; cross-attention is skipped.
    Unimodal,
    /// Bidirectional self-attention plus cross-attention to the condition.
    Match(Var<'t, F>),
    /// Causal self-attention plus cross-attention to the condition.
    Generate(Var<'t, F>),
}

/// BERT-style text encoder whose layers all carry a cross-attention
/// sublayer that is active only in the multimodal modes.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    token_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
}

impl TextEncoder {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, config: EncoderConfig, vocab_size: usize) -> Self {
        TextEncoder {
            token_emb: init.normal("text.token_emb", vocab_size, config.hidden),
            pos_emb: init.normal("text.pos_emb", config.max_len, config.hidden),
            layers: (0..config.layers)
                .map(|l| {
                    TransformerLayer::new(
                        init,
                        &format!("text.layer{l}"),
                        config.hidden,
                        config.heads,
                        config.ffn_hidden,
                        Some(config.hidden),
                    )
                })
                .collect(),
            final_ln: LayerNorm::new(init, "text.final_ln", config.hidden),
            vocab_size,
            config,
        }
    }

    pub fn token_embedding(&self) -> ParamId {
        self.token_emb
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            Some(&id) => Err(Error::InvalidToken {
                id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Runs the stack over `ids` exactly as given. Keys past `valid_len` are
    /// masked out. Sequences longer than the position table are cut.
    pub fn forward<'t, F: Scalar>(
        &self,
        g: Graph<'t, F>,
        ids: &[u32],
        valid_len: usize,
        mode: TextMode<'t, F>,
    ) -> Result<(Var<'t, F>, bool)> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("text sequence is empty".into()));
        }
        self.check_ids(ids)?;
        let truncated = ids.len() > self.config.max_len;
        let ids = &ids[..ids.len().min(self.config.max_len)];
        let valid_len = valid_len.min(ids.len());
        let n = ids.len();
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pos: Vec<usize> = (0..n).collect();
        let mut x = g
            .tape
            .gather_rows(g.p(self.token_emb), &idx)
            .add(g.tape.gather_rows(g.p(self.pos_emb), &pos));

        let padding = (valid_len < n).then(|| AttentionMask::key_prefix(n, n, valid_len));
        let causal = matches!(mode, TextMode::Generate(_)).then(|| AttentionMask::causal(n));
        let mask = match (padding, causal) {
            (Some(p), Some(c)) => Some(p.and(&c)),
            (p, c) => p.or(c),
        };
        let cond = match mode {
            TextMode::Unimodal => None,
            TextMode::Match(c) | TextMode::Generate(c) => Some(c),
        };
        for layer in &self.layers {
            x = layer.forward(g, x, mask.as_ref(), cond);
        }
        Ok((self.final_ln.forward(g, x), truncated))
    }

    /// Prepends [CLS] and encodes without cross-attention.
    pub fn encode<'t, F: Scalar>(&self, g: Graph<'t, F>, tokens: &TextTokens) -> Result<EncoderOutput<'t, F>> {
        self.encode_with(g, tokens, TextMode::Unimodal)
    }

    /// Prepends [CLS] and runs in the given mode; padding rows are dropped
    /// from the output.
    pub fn encode_with<'t, F: Scalar>(
        &self,
        g: Graph<'t, F>,
        tokens: &TextTokens,
        mode: TextMode<'t, F>,
    ) -> Result<EncoderOutput<'t, F>> {
        let mut ids = Vec::with_capacity(tokens.ids.len() + 1);
        ids.push(CLS);
        ids.extend_from_slice(&tokens.ids);
        let (seq, truncated) = self.forward(g, &ids, tokens.valid_len + 1, mode)?;
        let keep = (tokens.valid_len + 1).min(seq.rows());
        let sequence = if keep < seq.rows() { seq.slice_rows(0, keep) } else { seq };
        Ok(EncoderOutput {
            sequence,
            modality: Modality::Text,
            truncated: truncated && tokens.valid_len + 1 > self.config.max_len,
        })
    }

    /// Encodes a batch after padding it to a common length.
    pub fn encode_batch<'t, F: Scalar>(
        &self,
        g: Graph<'t, F>,
        batch: &[TextTokens],
    ) -> Result<Vec<EncoderOutput<'t, F>>> {
        TextTokens::pad_batch(batch).iter().map(|t| self.encode(g, t)).collect()
    }
}
