use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CaptionSet;
use crate::error::{Error, Result};
use crate::encoders::split_words;

/// Substituted for an empty subtitle.
pub const NO_SUBTITLE: &str = "(no subtitle)";

const SLOTS: [&str; 3] = ["{vision_caps}", "{audio_caps}", "{subtitle}"];
const CAPTION_SEPARATOR: &str = "; ";

const DEFAULT_TEMPLATE: &str = "Vision captions: {vision_caps}\n\
Audio captions: {audio_caps}\n\
Subtitle: {subtitle}\n\
Combine the above into one fluent caption describing what is seen, heard and said.";

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "on", "in", "is", "are", "be", "can", "from", "to", "and", "with", "this", "that",
    "it", "there", "here", "at", "by", "for", "as", "we", "i", "you", "now", "some",
];

/// Instruction text with exactly one each of `{vision_caps}`, `{audio_caps}`
/// and `{subtitle}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    template: String,
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        for slot in SLOTS {
            let n = template.matches(slot).count();
            if n != 1 {
                return Err(Error::Config(format!("prompt template must contain {slot} exactly once, found {n}")));
            }
        }
        Ok(PromptTemplate { template })
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }

    pub fn render(&self, vision_caps: &str, audio_caps: &str, subtitle: &str) -> String {
        // Single pass so slot-like text inside captions is never re-substituted.
        let mut out = String::with_capacity(self.template.len() + 256);
        for piece in self.pieces() {
            match piece {
                Piece::Lit(s) => out.push_str(s),
                Piece::Slot(k) => out.push_str([vision_caps, audio_caps, subtitle][k]),
            }
        }
        out
    }

    fn pieces(&self) -> Vec<Piece<'_>> {
        let mut positions: Vec<(usize, usize)> = SLOTS
            .iter()
            .enumerate()
            .map(|(k, s)| (self.template.find(s).expect("validated slot"), k))
            .collect();
        positions.sort_unstable();
        let mut pieces = Vec::new();
        let mut cursor = 0;
        for (pos, k) in positions {
            pieces.push(Piece::Lit(&self.template[cursor..pos]));
            pieces.push(Piece::Slot(k));
            cursor = pos + SLOTS[k].len();
        }
        pieces.push(Piece::Lit(&self.template[cursor..]));
        pieces
    }

    /// Recovers the three slot values from a rendered prompt.
    pub fn parse_slots(&self, prompt: &str) -> Option<[String; 3]> {
        let pieces = self.pieces();
        let mut slots: [String; 3] = Default::default();
        let mut rest = prompt;
        let mut pending: Option<usize> = None;
        for piece in pieces {
            match piece {
                Piece::Slot(k) => pending = Some(k),
                Piece::Lit(lit) => match pending.take() {
                    None => rest = rest.strip_prefix(lit)?,
                    Some(k) if lit.is_empty() => {
                        slots[k] = rest.to_string();
                        rest = "";
                    }
                    Some(k) => {
                        let at = rest.find(lit)?;
                        slots[k] = rest[..at].to_string();
                        rest = &rest[at + lit.len()..];
                    }
                },
            }
        }
        Some(slots)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        PromptTemplate::new(s)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> String {
        t.template
    }
}

enum Piece<'a> {
    Lit(&'a str),
    Slot(usize),
}

/// Picks 3 vision and 3 audio captions uniformly without replacement and
/// fills the template.
pub fn assemble_omni_prompt<R: Rng + ?Sized>(
    caps: &CaptionSet,
    subtitle: &str,
    template: &PromptTemplate,
    rng: &mut R,
) -> Result<String> {
    const PICK: usize = 3;
    for (kind, list) in [("vision", &caps.vision), ("audio", &caps.audio)] {
        if list.len() < PICK {
            return Err(Error::InsufficientCaptions {
                kind,
                needed: PICK,
                found: list.len(),
            });
        }
    }
    let mut pick = |list: &[String]| -> String {
        sample(rng, list.len(), PICK)
            .into_iter()
            .map(|i| list[i].as_str())
            .collect::<Vec<_>>()
            .join(CAPTION_SEPARATOR)
    };
    let vision = pick(&caps.vision);
    let audio = pick(&caps.audio);
    let subtitle = if subtitle.trim().is_empty() { NO_SUBTITLE } else { subtitle };
    Ok(template.render(&vision, &audio, subtitle))
}

/// Something that turns an instruction prompt into one omni-modality caption.
pub trait CaptionIntegrator {
    fn integrate(&self, prompt: &str) -> std::result::Result<String, String>;
}

pub fn compose_omni_caption(prompt: &str, client: &dyn CaptionIntegrator) -> Result<String> {
    if prompt.trim().is_empty() {
        return Err(Error::EmptyInput("prompt is empty".into()));
    }
    client.integrate(prompt).map_err(|message| Error::Integration {
        prompt: prompt.to_string(),
        message,
    })
}

/// Lowercased alphanumeric words that are not stopwords, in order.
pub fn content_words(text: &str) -> Vec<String> {
    split_words(text)
        .into_iter()
        .filter(|w| w.chars().all(char::is_alphanumeric) && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Deterministic integrator: the deduplicated content words of the three
/// slots, in slot order, joined into one sentence.
#[derive(Clone, Debug, Default)]
pub struct StubIntegrator {
    pub template: PromptTemplate,
}

impl StubIntegrator {
    pub fn new(template: PromptTemplate) -> Self {
        StubIntegrator { template }
    }
}

impl CaptionIntegrator for StubIntegrator {
    fn integrate(&self, prompt: &str) -> std::result::Result<String, String> {
        let [vision, audio, subtitle] = self
            .template
            .parse_slots(prompt)
            .ok_or_else(|| "prompt does not match the template".to_string())?;
        let subtitle = if subtitle == NO_SUBTITLE { String::new() } else { subtitle };
        let mut words: Vec<String> = Vec::new();
        for w in [vision, audio, subtitle].iter().flat_map(|s| content_words(s)) {
            if !words.contains(&w) {
                words.push(w);
            }
        }
        if words.is_empty() {
            return Err("no content words in prompt".into());
        }
        Ok(words.join(" "))
    }
}
