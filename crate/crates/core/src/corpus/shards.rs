//! Corpus directory layout:
//!
//! ```text
//! <dir>/manifest                  JSON: schema version, shard list, counts
//! <dir>/shard-00000.jsonl         one clip record per line
//! <dir>/blobs/<clip_id>.frames.bin
//! <dir>/blobs/<clip_id>.waveform.bin
//! ```
//!
//! Blobs are little-endian: `u32` rank, `rank` × `u32` dims, then `f32` data.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_corpus, CaptionSet, Concept, FrameStack, OmniClip};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest";
const BLOB_DIR: &str = "blobs";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub total_clips: usize,
    pub shards: Vec<ShardEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipRecord {
    clip_id: String,
    duration_s: f64,
    sample_rate: u32,
    subtitle: String,
    captions: CaptionSet,
    concept: Option<Concept>,
    frames: String,
    waveform: String,
}

fn write_blob(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * (1 + dims.len() + data.len()));
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, clip_id: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let corrupt = |message: String| Error::CorruptCorpus {
        clip_id: clip_id.to_string(),
        message,
    };
    let bytes = fs::read(path).map_err(|e| corrupt(format!("cannot read blob {}: {e}", path.display())))?;
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(4 * i..4 * i + 4).map(|b| b.try_into().unwrap()) };
    let rank = word(0).map(u32::from_le_bytes).ok_or_else(|| corrupt("blob header truncated".into()))? as usize;
    let dims: Vec<usize> = (0..rank)
        .map(|i| word(1 + i).map(|w| u32::from_le_bytes(w) as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| corrupt("blob dims truncated".into()))?;
    let n: usize = dims.iter().product();
    let offset = 4 * (1 + rank);
    if bytes.len() != offset + 4 * n {
        return Err(corrupt(format!(
            "blob {} holds {} bytes, header promises {}",
            path.display(),
            bytes.len(),
            offset + 4 * n
        )));
    }
    let data = bytes[offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

/// Writes `ceil(len / shard_size)` shards plus sidecar blobs and the manifest.
pub fn write_shards(corpus: &[OmniClip], dir: &Path, shard_size: usize) -> Result<Manifest> {
    if shard_size == 0 {
        return Err(Error::Config("shard_size must be at least 1".into()));
    }
    validate_corpus(corpus)?;
    let blobs = dir.join(BLOB_DIR);
    fs::create_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
    let mut shards = Vec::new();
    for (k, chunk) in corpus.chunks(shard_size).enumerate() {
        let file = format!("shard-{k:05}.jsonl");
        let path = dir.join(&file);
        let handle = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(handle);
        for clip in chunk {
            if clip.clip_id.contains(['/', '\\']) || clip.clip_id.starts_with('.') {
                return Err(Error::CorruptCorpus {
                    clip_id: clip.clip_id.clone(),
                    message: "clip id is not a valid file stem".into(),
                });
            }
            let frames = format!("{BLOB_DIR}/{}.frames.bin", clip.clip_id);
            let waveform = format!("{BLOB_DIR}/{}.waveform.bin", clip.clip_id);
            let f = &clip.frames;
            write_blob(&dir.join(&frames), &[f.t, f.h, f.w, f.c], &f.data)?;
            write_blob(&dir.join(&waveform), &[clip.waveform.len()], &clip.waveform)?;
            let record = ClipRecord {
                clip_id: clip.clip_id.clone(),
                duration_s: clip.duration_s,
                sample_rate: clip.sample_rate,
                subtitle: clip.subtitle.clone(),
                captions: clip.captions.clone(),
                concept: clip.concept.clone(),
                frames,
                waveform,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        shards.push(ShardEntry {
            file,
            count: chunk.len(),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        total_clips: corpus.len(),
        shards,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "corpus schema version {} is not supported (expected {SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

pub fn read_shards(dir: &Path) -> Result<Vec<OmniClip>> {
    let manifest = read_manifest(dir)?;
    let mut corpus = Vec::with_capacity(manifest.total_clips);
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        let handle = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut count = 0;
        for line in BufReader::new(handle).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(&line)?;
            let (fdims, fdata) = read_blob(&dir.join(&rec.frames), &rec.clip_id)?;
            let [t, h, w, c] = fdims[..] else {
                return Err(Error::CorruptCorpus {
                    clip_id: rec.clip_id,
                    message: format!("frames blob has rank {}, expected 4", fdims.len()),
                });
            };
            let frames = FrameStack::new(t, h, w, c, fdata).map_err(|e| Error::CorruptCorpus {
                clip_id: rec.clip_id.clone(),
                message: e.to_string(),
            })?;
            let (_, waveform) = read_blob(&dir.join(&rec.waveform), &rec.clip_id)?;
            corpus.push(OmniClip {
                clip_id: rec.clip_id,
                duration_s: rec.duration_s,
                frames,
                waveform,
                sample_rate: rec.sample_rate,
                subtitle: rec.subtitle,
                captions: rec.captions,
                concept: rec.concept,
            });
            count += 1;
        }
        if count != shard.count {
            return Err(Error::Format(format!(
                "shard {} holds {count} records, manifest lists {}",
                shard.file, shard.count
            )));
        }
    }
    validate_corpus(&corpus)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};
    use proptest::prelude::*;

    fn tiny(n: usize, seed: u64) -> Vec<OmniClip> {
        generate_synthetic_corpus(&SynthConfig {
            n_clips: n,
            n_concepts: n.min(4),
            seed,
            frame_shape: (4, 4, 1),
            sample_rate: 1000,
            mean_duration_s: 0.2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn shard_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny(10, 1);
        let m = write_shards(&corpus, dir.path(), 4).unwrap();
        let counts: Vec<_> = m.shards.iter().map(|s| s.count).collect();
        assert_eq!(counts, vec![4, 4, 2]);
        assert_eq!(m.shards[2].file, "shard-00002.jsonl");
        assert_eq!(read_shards(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn missing_blob_names_clip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny(3, 2);
        write_shards(&corpus, dir.path(), 2).unwrap();
        fs::remove_file(dir.path().join("blobs/clip00001.waveform.bin")).unwrap();
        match read_shards(dir.path()) {
            Err(Error::CorruptCorpus { clip_id, .. }) => assert_eq!(clip_id, "clip00001"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_shard_size_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_shards(&tiny(2, 1), dir.path(), 0), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn roundtrip_identity(n in 1usize..9, seed in 0u64..1000, shard in 1usize..5) {
            let dir = tempfile::tempdir().unwrap();
            let corpus = tiny(n, seed);
            write_shards(&corpus, dir.path(), shard).unwrap();
            prop_assert_eq!(read_shards(dir.path()).unwrap(), corpus);
        }
    }
}
