use rand::Rng;

use crate::autograd::Var;
use crate::encoders::tokenizer::{BOS, EOS};
use crate::encoders::TextTokens;
use crate::error::{Error, Result};
use crate::fusion::{fuse_decode, fuse_encode, ConditionFeatures, ModalityOutputs, Slot};
use crate::matrix::Matrix;
use crate::model::{ClipInputs, OmniModel};
use crate::nn::Graph;
use crate::scalar::Scalar;

use super::losses::vcg_mask_within;
use super::{bce_loss, mask_positions, mine_hard_negatives, vcc_loss, CaptionSource, LossBundle, MiningMode, ModalityGroup};

/// Objectives enabled for one group and its weight in the total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupPlan {
    pub group: ModalityGroup,
    pub ret: bool,
    pub cap: bool,
    pub qa: bool,
    pub weight: f64,
}

impl GroupPlan {
    pub fn new(group: ModalityGroup) -> Self {
        GroupPlan {
            group,
            ret: false,
            cap: false,
            qa: false,
            weight: 1.0,
        }
    }

    /// Contrastive, matching and generation, as in the single-group loss.
    pub fn full(group: ModalityGroup) -> Self {
        GroupPlan {
            ret: true,
            cap: true,
            ..Self::new(group)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub mining: MiningMode,
    pub mask_ratio: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            mining: MiningMode::Stochastic,
            mask_ratio: super::VCG_MASK_RATIO,
        }
    }
}

/// Union of the slots the plans need.
pub fn needed_slots(plans: &[GroupPlan]) -> Vec<Slot> {
    Slot::ORDER
        .into_iter()
        .filter(|&s| plans.iter().any(|p| p.group.uses(s)))
        .collect()
}

pub fn encode_modalities<'t, F: Scalar>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    batch: &[ClipInputs<F>],
    slots: &[Slot],
) -> Result<Vec<ModalityOutputs<'t, F>>> {
    batch.iter().map(|c| model.encode_modalities(g, c, slots)).collect()
}

/// One caption per clip from the group's caption source. Single-modality
/// sources hold several captions; one is drawn uniformly.
pub fn group_captions<F: Scalar, R: Rng + ?Sized>(
    batch: &[ClipInputs<F>],
    group: ModalityGroup,
    rng: &mut R,
) -> Result<Vec<TextTokens>> {
    let source = group.caption_source();
    batch
        .iter()
        .map(|clip| {
            let caps = clip.captions(source);
            let missing = || Error::MissingCaption {
                group: group.label().into(),
                variant: source.name().into(),
            };
            match (source, caps.len()) {
                (_, 0) => Err(missing()),
                (CaptionSource::Omni, _) | (_, 1) => Ok(caps[0].clone()),
                (_, n) => Ok(caps[rng.random_range(0..n)].clone()),
            }
        })
        .collect()
}

/// B × embed_dim unit video embeddings.
pub fn video_embeddings<'t, F: Scalar>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    outputs: &[ModalityOutputs<'t, F>],
    group: ModalityGroup,
) -> Result<Var<'t, F>> {
    let rows = outputs
        .iter()
        .map(|o| model.video_embedding(g, o, group))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.tape.concat_rows(&rows))
}

/// B × embed_dim unit caption embeddings.
pub fn caption_embeddings<'t, F: Scalar>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    captions: &[TextTokens],
) -> Result<Var<'t, F>> {
    let rows = captions
        .iter()
        .map(|c| model.caption_embedding(g, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.tape.concat_rows(&rows))
}

pub fn conditions<'t, F: Scalar>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    outputs: &[ModalityOutputs<'t, F>],
    group: ModalityGroup,
) -> Result<Vec<ConditionFeatures<'t, F>>> {
    outputs.iter().map(|o| model.condition(g, o, group)).collect()
}

/// Matching loss over the B positives plus one mined negative per positive
/// in each direction. `sims` are the (detached) scaled similarities with
/// videos on rows and captions on columns.
pub fn vcm_for_group<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    captions: &[TextTokens],
    conds: &[ConditionFeatures<'t, F>],
    sims: &Matrix<F>,
    mining: MiningMode,
    rng: &mut R,
) -> Result<Var<'t, F>> {
    let b = captions.len();
    if conds.len() != b {
        return Err(Error::Shape(format!("{b} captions with {} conditions", conds.len())));
    }
    let neg_caption = mine_hard_negatives(sims, rng, mining)?;
    let neg_video = mine_hard_negatives(&sims.transpose(), rng, mining)?;
    let mut pairs = Vec::with_capacity(3 * b);
    pairs.extend((0..b).map(|i| (i, i, true)));
    pairs.extend((0..b).map(|i| (i, neg_video[i], false)));
    pairs.extend((0..b).map(|i| (neg_caption[i], i, false)));
    let cls = pairs
        .iter()
        .map(|&(c, v, _)| fuse_encode(g, &model.text, &captions[c], &conds[v]).map(|o| o.global()))
        .collect::<Result<Vec<_>>>()?;
    let p = model.match_head.probability(g, g.tape.concat_rows(&cls));
    let labels: Vec<bool> = pairs.iter().map(|p| p.2).collect();
    bce_loss(p, &labels)
}

fn check_len<F: Scalar>(model: &OmniModel<F>, ids: &[u32]) -> Result<()> {
    let max = model.text.config.max_len;
    if ids.len() > max {
        return Err(Error::Config(format!(
            "decoder sequence of {} tokens exceeds text max_len {max}",
            ids.len()
        )));
    }
    Ok(())
}

/// Masked-position cross entropy pooled over a batch of decoded sequences.
fn pooled_nll<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    seqs: &[(Vec<u32>, Vec<usize>)],
    conds: &[ConditionFeatures<'t, F>],
    ratio: f64,
    rng: &mut R,
) -> Result<Var<'t, F>> {
    let mut rows = Vec::with_capacity(seqs.len());
    let mut targets = Vec::new();
    for ((ids, candidates), cond) in seqs.iter().zip(conds) {
        check_len(model, ids)?;
        let masked = vcg_mask_within(ids, candidates, ratio, rng)?;
        let logits = fuse_decode(g, &model.text, &model.caption_head, &masked.ids, cond)?;
        rows.push(g.tape.gather_rows(logits, &masked.positions));
        targets.extend(masked.targets.iter().map(|&t| t as usize));
    }
    Ok(g.tape.concat_rows(&rows).cross_entropy_rows(&targets).mean())
}

/// Generation loss: each caption is decoded as `[BOS] caption [EOS]` with
/// [MASK] at the masked positions.
pub fn vcg_for_group<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    captions: &[TextTokens],
    conds: &[ConditionFeatures<'t, F>],
    ratio: f64,
    rng: &mut R,
) -> Result<Var<'t, F>> {
    let seqs: Vec<(Vec<u32>, Vec<usize>)> = captions
        .iter()
        .map(|c| {
            let mut ids = Vec::with_capacity(c.len() + 2);
            ids.push(BOS);
            ids.extend_from_slice(c.valid());
            ids.push(EOS);
            let cand = mask_positions(&ids);
            (ids, cand)
        })
        .collect();
    pooled_nll(g, model, &seqs, conds, ratio, rng)
}

/// Answer loss: `[BOS] question [SEP] answer [EOS]`, masking only within
/// the answer and its [EOS].
pub fn qa_for_group<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    batch: &[ClipInputs<F>],
    conds: &[ConditionFeatures<'t, F>],
    ratio: f64,
    rng: &mut R,
) -> Result<Var<'t, F>> {
    let seqs = batch
        .iter()
        .map(|clip| {
            let qa = clip.qa.as_ref().ok_or_else(|| Error::MissingCaption {
                group: conds.first().map_or("", |c| c.group.label()).into(),
                variant: "qa".into(),
            })?;
            let (ids, start) = qa.sequence();
            Ok((ids.clone(), (start..ids.len()).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    pooled_nll(g, model, &seqs, conds, ratio, rng)
}

/// Loss terms of one group.
pub struct GroupTerms<'t, F: Scalar> {
    pub vcc: Option<Var<'t, F>>,
    pub vcm: Option<Var<'t, F>>,
    pub vcg: Option<Var<'t, F>>,
    pub qa: Option<Var<'t, F>>,
}

impl<'t, F: Scalar> GroupTerms<'t, F> {
    pub fn total(&self, g: Graph<'t, F>) -> Var<'t, F> {
        [self.vcc, self.vcm, self.vcg, self.qa]
            .into_iter()
            .flatten()
            .reduce(|a, b| a.add(b))
            .unwrap_or_else(|| g.tape.scalar(F::zero()))
    }

    fn bundle(&self, group: ModalityGroup) -> Result<LossBundle> {
        let v = |t: Option<Var<'t, F>>, name: &str| -> Result<f64> {
            let x = t.map_or(0.0, |t| t.item().f64());
            if x.is_finite() {
                Ok(x)
            } else {
                Err(Error::NonFinite {
                    component: format!("{} {name}", group.label()),
                })
            }
        };
        let (vcc, vcm, vcg, qa) = (v(self.vcc, "vcc")?, v(self.vcm, "vcm")?, v(self.vcg, "vcg")?, v(self.qa, "qa")?);
        let total = vcc + vcm + vcg + qa;
        Ok(LossBundle {
            vcc,
            vcm,
            vcg,
            qa,
            per_group: [(group.label().to_string(), total)].into(),
            total,
        })
    }
}

/// Computes one group's enabled terms. Random draws happen in a fixed
/// order: caption choice, negatives (both directions), generation masks,
/// answer masks.
pub fn group_terms<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    batch: &[ClipInputs<F>],
    outputs: &[ModalityOutputs<'t, F>],
    plan: &GroupPlan,
    opts: &LossOptions,
    rng: &mut R,
) -> Result<GroupTerms<'t, F>> {
    let group = plan.group;
    let mut terms = GroupTerms {
        vcc: None,
        vcm: None,
        vcg: None,
        qa: None,
    };
    let captions = if plan.ret || plan.cap { group_captions(batch, group, rng)? } else { Vec::new() };
    let conds = conditions(g, model, outputs, group)?;
    if plan.ret {
        let v = video_embeddings(g, model, outputs, group)?;
        let c = caption_embeddings(g, model, &captions)?;
        let tau = model.tau.var(g);
        terms.vcc = Some(vcc_loss(v, c, tau)?);
        let sims = v.value().matmul_nt(&c.value()).map(|s| s * tau.item());
        terms.vcm = Some(vcm_for_group(g, model, &captions, &conds, &sims, opts.mining, rng)?);
    }
    if plan.cap {
        terms.vcg = Some(vcg_for_group(g, model, &captions, &conds, opts.mask_ratio, rng)?);
    }
    if plan.qa {
        terms.qa = Some(qa_for_group(g, model, batch, &conds, opts.mask_ratio, rng)?);
    }
    Ok(terms)
}

/// Σ weight·L_group over the plans, with every group computed on the same
/// batch and encoder outputs. Returns the differentiable total and the
/// recorded terms.
pub fn grouped_loss<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    batch: &[ClipInputs<F>],
    plans: &[GroupPlan],
    opts: &LossOptions,
    rng: &mut R,
) -> Result<(Var<'t, F>, LossBundle)> {
    if plans.is_empty() {
        return Err(Error::Config("no modality group requested".into()));
    }
    if plans.iter().any(|p| p.ret) && batch.len() < 2 {
        return Err(Error::InsufficientBatch(batch.len()));
    }
    let outputs = encode_modalities(g, model, batch, &needed_slots(plans))?;
    let mut total: Option<Var<'t, F>> = None;
    let mut parts = Vec::with_capacity(plans.len());
    for plan in plans {
        let terms = group_terms(g, model, batch, &outputs, plan, opts, rng)?;
        let weighted = terms.total(g).scale(F::of(plan.weight));
        total = Some(match total {
            Some(t) => t.add(weighted),
            None => weighted,
        });
        parts.push((plan.group, plan.weight, terms.bundle(plan.group)?));
    }
    let bundle = LossBundle::combine(&parts);
    bundle.check_finite()?;
    Ok((total.expect("plans non-empty"), bundle))
}

/// Contrastive + matching + generation on the full-modality group.
pub fn om_loss<'t, F: Scalar, R: Rng + ?Sized>(
    g: Graph<'t, F>,
    model: &OmniModel<F>,
    batch: &[ClipInputs<F>],
    opts: &LossOptions,
    rng: &mut R,
) -> Result<(Var<'t, F>, LossBundle)> {
    grouped_loss(g, model, batch, &[GroupPlan::full(ModalityGroup::Vast)], opts, rng)
}
