//! Contrastive, matching and generation objectives, their equal-weight sum
//! and the modality-grouped total.

mod grouped;
mod heads;
mod losses;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Slot;
use crate::scalar::Scalar;

pub use grouped::{
    caption_embeddings, conditions, encode_modalities, group_captions, group_terms, grouped_loss, needed_slots,
    om_loss, qa_for_group, vcg_for_group, vcm_for_group, video_embeddings, GroupPlan, GroupTerms, LossOptions,
};
pub use heads::{MatchHead, ProjectionHeads, Temperature, TAU_INIT, TAU_MAX, TAU_MIN};
pub use losses::{
    bce_loss, mask_count, mask_positions, match_probabilities, mine_hard_negatives, vcc_loss, vcg_mask,
    vcg_nll, MaskedTokens, MiningMode, PROB_CLAMP, VCG_MASK_RATIO,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModalityGroup {
    #[serde(rename = "vt")]
    Vt,
    #[serde(rename = "at")]
    At,
    #[serde(rename = "vat")]
    Vat,
    #[serde(rename = "vst")]
    Vst,
    #[serde(rename = "vast")]
    Vast,
}

/// Which caption variant a group is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaptionSource {
    Vision,
    Audio,
    Omni,
}

impl CaptionSource {
    pub fn name(self) -> &'static str {
        match self {
            CaptionSource::Vision => "vision",
            CaptionSource::Audio => "audio",
            CaptionSource::Omni => "omni",
        }
    }
}

impl ModalityGroup {
    pub const ALL: [ModalityGroup; 5] = [
        ModalityGroup::Vt,
        ModalityGroup::At,
        ModalityGroup::Vat,
        ModalityGroup::Vst,
        ModalityGroup::Vast,
    ];

    /// Objective-string tag.
    pub fn tag(self) -> &'static str {
        match self {
            ModalityGroup::Vt => "vt",
            ModalityGroup::At => "at",
            ModalityGroup::Vat => "vat",
            ModalityGroup::Vst => "vst",
            ModalityGroup::Vast => "vast",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModalityGroup::Vt => "V-T",
            ModalityGroup::At => "A-T",
            ModalityGroup::Vat => "VA-T",
            ModalityGroup::Vst => "VS-T",
            ModalityGroup::Vast => "VAS-T",
        }
    }

    /// Video-side modalities, canonical order.
    pub fn slots(self) -> &'static [Slot] {
        match self {
            ModalityGroup::Vt => &[Slot::Vision],
            ModalityGroup::At => &[Slot::Audio],
            ModalityGroup::Vat => &[Slot::Vision, Slot::Audio],
            ModalityGroup::Vst => &[Slot::Subtitle, Slot::Vision],
            ModalityGroup::Vast => &[Slot::Subtitle, Slot::Vision, Slot::Audio],
        }
    }

    pub fn uses(self, slot: Slot) -> bool {
        self.slots().contains(&slot)
    }

    pub fn caption_source(self) -> CaptionSource {
        match self {
            ModalityGroup::Vt => CaptionSource::Vision,
            ModalityGroup::At => CaptionSource::Audio,
            _ => CaptionSource::Omni,
        }
    }
}

impl fmt::Display for ModalityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModalityGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ModalityGroup::ALL
            .into_iter()
            .find(|g| g.tag().eq_ignore_ascii_case(s) || g.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown modality group {s:?}")))
    }
}

/// `ret` = contrastive + matching, `cap` = generation, `qa` = prefix-conditioned answering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Ret,
    Cap,
    Qa,
}

/// Parsed objective string such as `ret%vat%vt + cap%vat%vt`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectiveSpec {
    pub terms: Vec<(ObjectiveKind, Vec<ModalityGroup>)>,
}

impl ObjectiveSpec {
    /// Groups in first-mention order with the objectives enabled for each.
    pub fn plan(&self) -> Vec<GroupPlan> {
        let mut out: Vec<GroupPlan> = Vec::new();
        for (kind, groups) in &self.terms {
            for &group in groups {
                let idx = match out.iter().position(|p| p.group == group) {
                    Some(i) => i,
                    None => {
                        out.push(GroupPlan::new(group));
                        out.len() - 1
                    }
                };
                match kind {
                    ObjectiveKind::Ret => out[idx].ret = true,
                    ObjectiveKind::Cap => out[idx].cap = true,
                    ObjectiveKind::Qa => out[idx].qa = true,
                }
            }
        }
        out
    }

    pub fn uses(&self, kind: ObjectiveKind) -> bool {
        self.terms.iter().any(|(k, _)| *k == kind)
    }
}

impl FromStr for ObjectiveSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for term in s.split('+') {
            let mut parts = term.trim().split('%');
            let kind = match parts.next().map(str::trim) {
                Some("ret") => ObjectiveKind::Ret,
                Some("cap") => ObjectiveKind::Cap,
                Some("qa") => ObjectiveKind::Qa,
                other => return Err(Error::Config(format!("unknown objective {other:?} in {s:?}"))),
            };
            let groups = parts.map(str::parse).collect::<Result<Vec<ModalityGroup>>>()?;
            if groups.is_empty() {
                return Err(Error::Config(format!("objective term {term:?} names no group")));
            }
            terms.push((kind, groups));
        }
        Ok(ObjectiveSpec { terms })
    }
}

impl fmt::Display for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .terms
            .iter()
            .map(|(k, gs)| {
                let k = match k {
                    ObjectiveKind::Ret => "ret",
                    ObjectiveKind::Cap => "cap",
                    ObjectiveKind::Qa => "qa",
                };
                std::iter::once(k).chain(gs.iter().map(|g| g.tag())).collect::<Vec<_>>().join("%")
            })
            .collect();
        f.write_str(&terms.join(" + "))
    }
}

/// Named scalar losses of one step. `total` is the weighted sum of the
/// per-group losses, which equals `vcc + vcm + vcg + qa`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub vcc: f64,
    pub vcm: f64,
    pub vcg: f64,
    pub qa: f64,
    pub per_group: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossBundle {
    /// Single-group bundle from its three terms; fails on a non-finite term.
    pub fn from_terms<F: Scalar>(vcc: F, vcm: F, vcg: F) -> Result<Self> {
        for (name, v) in [("vcc", vcc), ("vcm", vcm), ("vcg", vcg)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { component: name.into() });
            }
        }
        let total = vcc.f64() + vcm.f64() + vcg.f64();
        Ok(LossBundle {
            vcc: vcc.f64(),
            vcm: vcm.f64(),
            vcg: vcg.f64(),
            qa: 0.0,
            per_group: BTreeMap::from([(ModalityGroup::Vast.label().to_string(), total)]),
            total,
        })
    }

    /// Weighted sum of per-group bundles.
    pub fn combine(groups: &[(ModalityGroup, f64, LossBundle)]) -> Self {
        let mut out = LossBundle {
            vcc: 0.0,
            vcm: 0.0,
            vcg: 0.0,
            qa: 0.0,
            per_group: BTreeMap::new(),
            total: 0.0,
        };
        for (group, w, b) in groups {
            out.vcc += w * b.vcc;
            out.vcm += w * b.vcm;
            out.vcg += w * b.vcg;
            out.qa += w * b.qa;
            out.per_group.insert(group.label().to_string(), b.total);
            out.total += w * b.total;
        }
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [("vcc", self.vcc), ("vcm", self.vcm), ("vcg", self.vcg), ("qa", self.qa)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { component: name.into() });
            }
        }
        for (g, v) in &self.per_group {
            if !v.is_finite() {
                return Err(Error::NonFinite { component: g.clone() });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_grammar() {
        let spec: ObjectiveSpec = "ret%vat%vt + cap%vat%vt".parse().unwrap();
        assert_eq!(
            spec.terms,
            vec![
                (ObjectiveKind::Ret, vec![ModalityGroup::Vat, ModalityGroup::Vt]),
                (ObjectiveKind::Cap, vec![ModalityGroup::Vat, ModalityGroup::Vt]),
            ]
        );
        assert_eq!(spec.to_string(), "ret%vat%vt + cap%vat%vt");
        let plan = spec.plan();
        assert_eq!(plan.len(), 2);
        assert!(plan.iter().all(|p| p.ret && p.cap && !p.qa));

        let mixed: ObjectiveSpec = "ret%vast%vat%vst + cap%vast".parse().unwrap();
        let plan = mixed.plan();
        assert_eq!(plan.iter().map(|p| p.group).collect::<Vec<_>>(), vec![
            ModalityGroup::Vast,
            ModalityGroup::Vat,
            ModalityGroup::Vst
        ]);
        assert!(plan[0].cap && !plan[1].cap);

        assert!("ret".parse::<ObjectiveSpec>().is_err());
        assert!("mlm%vt".parse::<ObjectiveSpec>().is_err());
        assert!("ret%xyz".parse::<ObjectiveSpec>().is_err());
    }

    #[test]
    fn group_caption_sources() {
        use CaptionSource::*;
        let expect = [Vision, Audio, Omni, Omni, Omni];
        for (g, e) in ModalityGroup::ALL.iter().zip(expect) {
            assert_eq!(g.caption_source(), e);
        }
        assert_eq!("VA-T".parse::<ModalityGroup>().unwrap(), ModalityGroup::Vat);
    }

    #[test]
    fn bundle_sums() {
        let b = LossBundle::from_terms(0.5f64, 0.7, 1.3).unwrap();
        assert!((b.total - 2.5).abs() < 1e-12);
        match LossBundle::from_terms(0.5f64, f64::NAN, 1.0) {
            Err(Error::NonFinite { component }) => assert_eq!(component, "vcm"),
            other => panic!("unexpected {other:?}"),
        }

        let groups: Vec<_> = ModalityGroup::ALL
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let t = (i + 1) as f64;
                (g, 1.0, LossBundle { vcc: t, vcm: 0.0, vcg: 0.0, qa: 0.0, per_group: BTreeMap::new(), total: t })
            })
            .collect();
        assert_eq!(LossBundle::combine(&groups).total, 15.0);
    }
}
