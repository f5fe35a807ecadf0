use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::fusion::Slot;
use crate::nn::{Graph, Init, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;

use super::ModalityGroup;

pub const TAU_INIT: f64 = 14.29;
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 100.0;

/// Learnable contrastive temperature, stored as a 1×1 parameter.
#[derive(Clone, Copy, Debug)]
pub struct Temperature {
    pub id: ParamId,
}

impl Temperature {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>) -> Self {
        Temperature {
            id: init.constant("tau", 1, 1, F::of(TAU_INIT)),
        }
    }

    pub fn var<'t, F: Scalar>(&self, g: Graph<'t, F>) -> Var<'t, F> {
        g.p(self.id)
    }

    pub fn value<F: Scalar>(&self, store: &ParamStore<F>) -> F {
        store.value(self.id).item()
    }

    pub fn clamp<F: Scalar>(&self, store: &mut ParamStore<F>) {
        let v = store.value_mut(self.id);
        let t = v.item().max(F::of(TAU_MIN)).min(F::of(TAU_MAX));
        v.set(0, 0, t);
    }
}

/// Video-side and caption-side maps into the shared embedding space.
///
/// The video-side weight covers the full [subtitle | vision | audio] width;
/// a group uses only the row blocks of its own modalities, so the same
/// weights serve every group.
#[derive(Clone, Debug)]
pub struct ProjectionHeads {
    video_weight: ParamId,
    video_bias: Option<ParamId>,
    /// Row offset and width of each slot's block, in [`Slot::ORDER`].
    blocks: [(usize, usize); 3],
    pub caption: Linear,
    pub embed_dim: usize,
}

impl ProjectionHeads {
    /// `dims` are the global-feature widths of subtitle, vision and audio.
    pub fn new<F: Scalar>(
        init: &mut Init<'_, F>,
        dims: [usize; 3],
        caption_dim: usize,
        embed_dim: usize,
        bias: bool,
    ) -> Self {
        let mut blocks = [(0, 0); 3];
        let mut off = 0;
        for (b, d) in blocks.iter_mut().zip(dims) {
            *b = (off, d);
            off += d;
        }
        ProjectionHeads {
            video_weight: init.normal("proj.video.weight", off, embed_dim),
            video_bias: bias.then(|| init.constant("proj.video.bias", 1, embed_dim, F::zero())),
            blocks,
            caption: if bias {
                Linear::new(init, "proj.caption", caption_dim, embed_dim)
            } else {
                Linear::no_bias(init, "proj.caption", caption_dim, embed_dim)
            },
            embed_dim,
        }
    }

    /// Width of the concatenated global features the group feeds in.
    pub fn video_input_width(&self, group: ModalityGroup) -> usize {
        group.slots().iter().map(|&s| self.block(s).1).sum()
    }

    fn block(&self, slot: Slot) -> (usize, usize) {
        let i = Slot::ORDER.iter().position(|&s| s == slot).expect("slot in order");
        self.blocks[i]
    }

    /// `globals` is the group's global features concatenated in canonical
    /// order (1 × width). Returns a unit row.
    pub fn video<'t, F: Scalar>(&self, g: Graph<'t, F>, group: ModalityGroup, globals: Var<'t, F>) -> Result<Var<'t, F>> {
        let width = self.video_input_width(group);
        if globals.cols() != width {
            return Err(Error::Shape(format!(
                "{} video projection expects width {width}, got {}",
                group.label(),
                globals.cols()
            )));
        }
        let w = g.p(self.video_weight);
        let rows: Vec<Var<'t, F>> = group
            .slots()
            .iter()
            .map(|&s| {
                let (off, d) = self.block(s);
                w.slice_rows(off, off + d)
            })
            .collect();
        let w = if rows.len() == 1 { rows[0] } else { g.tape.concat_rows(&rows) };
        let mut y = globals.matmul(w);
        if let Some(b) = self.video_bias {
            y = y.add_row(g.p(b));
        }
        Ok(y.l2_normalize_rows())
    }

    pub fn caption<'t, F: Scalar>(&self, g: Graph<'t, F>, global: Var<'t, F>) -> Var<'t, F> {
        self.caption.forward(g, global).l2_normalize_rows()
    }
}

/// Two-layer perceptron over the fused [CLS] feature giving match logits.
#[derive(Clone, Debug)]
pub struct MatchHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl MatchHead {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, dim: usize) -> Self {
        MatchHead {
            hidden: Linear::new(init, "match_head.hidden", dim, dim),
            out: Linear::new(init, "match_head.out", dim, 2),
        }
    }

    /// n × 2 logits; column 1 is "matched".
    pub fn logits<'t, F: Scalar>(&self, g: Graph<'t, F>, cls: Var<'t, F>) -> Var<'t, F> {
        self.out.forward(g, self.hidden.forward(g, cls).gelu())
    }

    /// n × 1 match probabilities.
    pub fn probability<'t, F: Scalar>(&self, g: Graph<'t, F>, cls: Var<'t, F>) -> Var<'t, F> {
        self.logits(g, cls).softmax_rows(None).slice_cols(1, 2)
    }
}
