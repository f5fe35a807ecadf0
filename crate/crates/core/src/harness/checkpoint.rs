//! Checkpoint file: `OMNIVLCK` magic, `u32` format version, `u64` header
//! length, a JSON header, then every tensor as little-endian `f64` in
//! header order (parameters, then first and second optimizer moments).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelConfig, OmniModel};
use crate::scalar::Scalar;

use super::optim::AdamW;

const MAGIC: &[u8; 8] = b"OMNIVLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &rand_chacha::ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<rand_chacha::ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Format("malformed rng state".into());
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad())?
            .try_into()
            .map_err(|_| bad())?;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    scalar: String,
    step: usize,
    seed: u64,
    tau: f64,
    rng: RngState,
    config_digest: String,
    model: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    optimizer_t: Option<u64>,
    weight_decay: f64,
}

/// Splits a checkpoint into its header and tensor payload.
fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let truncated = || Error::Format("checkpoint is truncated".into());
    if bytes.len() >= 8 && &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    if bytes.len() < 20 {
        return Err(truncated());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[20..];
    if hlen > body.len() as u64 {
        return Err(truncated());
    }
    let (json, rest) = body.split_at(hlen as usize);
    let header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    Ok((header, rest))
}

/// Scalar type tag (`f32` or `f64`) a checkpoint file was written with.
pub fn checkpoint_scalar(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(&bytes)?.0.scalar)
}

/// Everything needed to continue training or evaluate.
#[derive(Clone, Debug)]
pub struct Checkpoint<F: Scalar> {
    pub model: OmniModel<F>,
    pub optimizer: Option<AdamW<F>>,
    pub step: usize,
    pub seed: u64,
    pub rng: RngState,
    pub config_digest: String,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.model.params;
        let header = Header {
            scalar: F::NAME.into(),
            step: self.step,
            seed: self.seed,
            tau: self.model.tau.value(store).f64(),
            rng: self.rng.clone(),
            config_digest: self.config_digest.clone(),
            model: self.model.config.clone(),
            vocab: self.model.vocab.words().to_vec(),
            tensors: store
                .ids()
                .map(|id| {
                    let (rows, cols) = store.value(id).shape();
                    TensorEntry {
                        name: store.name(id).to_string(),
                        rows,
                        cols,
                    }
                })
                .collect(),
            optimizer_t: self.optimizer.as_ref().map(|o| o.t),
            weight_decay: self.optimizer.as_ref().map_or(0.0, |o| o.weight_decay),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * 3 * store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |m: &Matrix<F>| {
            for &x in m.data() {
                out.extend_from_slice(&x.f64().to_le_bytes());
            }
        };
        store.ids().for_each(|id| put(store.value(id)));
        if let Some(o) = &self.optimizer {
            o.m.iter().for_each(&mut put);
            o.v.iter().for_each(&mut put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Format("checkpoint is truncated".into());
        let (header, body) = parse_header(bytes)?;
        if header.scalar != F::NAME {
            return Err(Error::Format(format!(
                "checkpoint holds {} values, loader expects {}",
                header.scalar,
                F::NAME
            )));
        }
        let mut data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let n_param: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
        let copies = if header.optimizer_t.is_some() { 3 } else { 1 };
        if body.len() != 8 * n_param * copies {
            return Err(truncated());
        }

        let vocab = Vocabulary::from_tokens(header.vocab.iter().cloned())
            .map_err(|e| Error::Format(format!("checkpoint vocabulary: {e}")))?;
        let mut model = OmniModel::<F>::new(header.model.clone(), vocab, 0)
            .map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;
        let ids: Vec<_> = model.params.ids().collect();
        if ids.len() != header.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model has {}",
                header.tensors.len(),
                ids.len()
            )));
        }
        for (&id, t) in ids.iter().zip(&header.tensors) {
            if model.params.name(id) != t.name || model.params.value(id).shape() != (t.rows, t.cols) {
                return Err(Error::Format(format!("checkpoint tensor {} does not match the model", t.name)));
            }
        }
        let mut take = |shape: (usize, usize)| {
            Matrix::from_vec(shape.0, shape.1, data.by_ref().take(shape.0 * shape.1).map(F::of).collect())
        };
        for &id in &ids {
            let shape = model.params.value(id).shape();
            *model.params.value_mut(id) = take(shape);
        }
        let optimizer = match header.optimizer_t {
            Some(t) => {
                let shapes: Vec<_> = ids.iter().map(|&id| model.params.value(id).shape()).collect();
                let m = shapes.iter().map(|&s| take(s)).collect();
                let v = shapes.iter().map(|&s| take(s)).collect();
                Some(AdamW {
                    weight_decay: header.weight_decay,
                    t,
                    m,
                    v,
                })
            }
            None => None,
        };
        header.rng.restore()?;
        Ok(Checkpoint {
            model,
            optimizer,
            step: header.step,
            seed: header.seed,
            rng: header.rng,
            config_digest: header.config_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Vocabulary;
    use rand::SeedableRng;

    fn tiny() -> Checkpoint<f64> {
        let mut config = ModelConfig::default();
        config.text.layers = 1;
        config.vision.encoder.layers = 1;
        config.audio.encoder.layers = 1;
        let vocab = Vocabulary::build(["a red fox", "a blue owl"]);
        let model = OmniModel::new(config, vocab, 3).unwrap();
        let mut optimizer = AdamW::new(&model.params, 0.01);
        optimizer.t = 4;
        optimizer.m[0].data_mut()[0] = 0.25;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        rand::Rng::random::<u64>(&mut rng);
        Checkpoint {
            model,
            optimizer: Some(optimizer),
            step: 4,
            seed: 9,
            rng: RngState::capture(&rng),
            config_digest: "d".into(),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = tiny();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        for id in ck.model.params.ids() {
            assert_eq!(ck.model.params.value(id), back.model.params.value(id));
        }
        assert_eq!(ck.optimizer, back.optimizer);
        assert_eq!((back.step, back.seed), (4, 9));
        let mut a = ck.rng.restore().unwrap();
        let mut b = back.rng.restore().unwrap();
        assert_eq!(rand::Rng::random::<u64>(&mut a), rand::Rng::random::<u64>(&mut b));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn damaged_files_are_format_errors() {
        let bytes = tiny().to_bytes().unwrap();
        for cut in [0, 5, 19, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut other = bytes.clone();
        other[8] = 9;
        assert!(matches!(Checkpoint::<f64>::from_bytes(&other), Err(Error::Format(m)) if m.contains("version")));
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::<f64>::from_bytes(b"garbage-bytes-here-xx"), Err(Error::Format(_))));
    }
}
