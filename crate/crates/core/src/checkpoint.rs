//! Single-file model checkpoints: a plain-text manifest (configuration,
//! vocabulary and tensor list) followed by every tensor as row-major
//! little-endian `f64` values in manifest order.

use std::fmt::Write as _;
use std::path::Path;

use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{ModelConfig, ModelParams, TagStreams, Tagger};

pub const MAGIC: &str = "MEDSEQ-CHECKPOINT v1";
const END: &str = "end_manifest";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(tagger: &Tagger) -> Vec<u8> {
    let c = &tagger.config;
    let v = &tagger.vocab;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "word_dim = {}", c.word_dim);
    let _ = writeln!(m, "clamp_dim = {}", c.clamp_dim);
    let _ = writeln!(m, "ctakes_dim = {}", c.ctakes_dim);
    let _ = writeln!(m, "augment = {}", c.augment);
    let streams = match c.tag_streams {
        TagStreams::Separate => "separate",
        TagStreams::Merged => "merged",
    };
    let _ = writeln!(m, "tag_streams = {streams}");
    let _ = writeln!(m, "hidden_fraction = {}", c.hidden_fraction);
    let _ = writeln!(
        m,
        "hidden_override = {}",
        c.hidden_override.map_or("none".to_string(), |h| h.to_string())
    );
    let _ = writeln!(m, "hidden = {}", c.hidden());
    let _ = writeln!(m, "num_labels = {}", c.num_labels);
    let _ = writeln!(m, "mask_transitions = {}", c.mask_transitions);
    let _ = writeln!(m, "seed = {}", c.seed);
    let _ = writeln!(m, "vocab_size = {}", v.len());
    let _ = writeln!(m, "vocab = {}", v.words().join(" "));
    let counts: Vec<String> = v.counts().iter().map(u64::to_string).collect();
    let _ = writeln!(m, "vocab_counts = {}", counts.join(" "));
    for (name, r, cols) in tagger.params.tensor_shapes() {
        let _ = writeln!(m, "tensor = {name} {r} {cols}");
    }
    let _ = writeln!(m, "{END}");

    let mut out = m.into_bytes();
    for t in tagger.params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Tagger> {
    let marker = format!("\n{END}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| bad("manifest terminator not found"))?;
    let manifest = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not UTF-8"))?;
    let data = &bytes[split + marker.len()..];

    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    let mut keys: Vec<(&str, &str)> = Vec::new();
    let mut tensors: Vec<(String, usize, usize)> = Vec::new();
    for line in lines {
        let (k, v) = line
            .split_once(" = ")
            .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
            .ok_or_else(|| bad(format!("malformed manifest line {line:?}")))?;
        if k == "tensor" {
            let f: Vec<&str> = v.split(' ').collect();
            let dims = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad tensor line {line:?}")));
            if f.len() != 3 {
                return Err(bad(format!("bad tensor line {line:?}")));
            }
            tensors.push((f[0].to_string(), dims(f[1])?, dims(f[2])?));
        } else {
            keys.push((k, v));
        }
    }
    let get = |k: &str| {
        keys.iter()
            .find(|(key, _)| *key == k)
            .map(|(_, v)| *v)
            .ok_or_else(|| bad(format!("missing key {k}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| bad(format!("bad value for {k}: {v:?}")))
    }
    let key_num = |k: &str| -> Result<usize> { num(k, get(k)?) };
    let key_bool = |k: &str| -> Result<bool> { num(k, get(k)?) };

    let config = ModelConfig {
        word_dim: key_num("word_dim")?,
        clamp_dim: key_num("clamp_dim")?,
        ctakes_dim: key_num("ctakes_dim")?,
        augment: key_bool("augment")?,
        tag_streams: match get("tag_streams")? {
            "separate" => TagStreams::Separate,
            "merged" => TagStreams::Merged,
            other => return Err(bad(format!("unknown tag stream mode {other:?}"))),
        },
        hidden_fraction: num("hidden_fraction", get("hidden_fraction")?)?,
        hidden_override: match get("hidden_override")? {
            "none" => None,
            v => Some(num("hidden_override", v)?),
        },
        num_labels: key_num("num_labels")?,
        mask_transitions: key_bool("mask_transitions")?,
        seed: num("seed", get("seed")?)?,
    };
    config
        .validate()
        .map_err(|e| bad(format!("invalid configuration: {e}")))?;
    if key_num("hidden")? != config.hidden() {
        return Err(bad("hidden size disagrees with the configuration"));
    }

    let words: Vec<&str> = get("vocab")?.split(' ').filter(|w| !w.is_empty()).collect();
    let counts: Vec<u64> = get("vocab_counts")?
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|c| num("vocab_counts", c))
        .collect::<Result<_>>()?;
    if words.len() != key_num("vocab_size")? || counts.len() != words.len() {
        return Err(bad("vocabulary size disagrees with the manifest"));
    }
    let vocab = Vocabulary::from_counted(words.iter().copied().zip(counts.iter().copied()));
    if vocab.len() != words.len() || vocab.words() != words.as_slice() {
        return Err(bad("vocabulary has duplicates or misplaced reserved entries"));
    }

    let mut params = ModelParams::init(&config, Matrix::zeros(vocab.len(), config.word_dim))?;
    let expected: Vec<(String, usize, usize)> = params
        .tensor_shapes()
        .into_iter()
        .map(|(n, r, c)| (n.to_string(), r, c))
        .collect();
    if expected != tensors {
        return Err(bad("tensor list does not match the configuration"));
    }
    let total: usize = tensors.iter().map(|(_, r, c)| r * c).sum();
    if data.len() != 8 * total {
        return Err(bad(format!("expected {} data bytes, found {}", 8 * total, data.len())));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    Ok(Tagger { config, vocab, params })
}

pub fn save_checkpoint(tagger: &Tagger, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(tagger)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Tagger> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::init_uniform;

    fn tagger(augment: bool, streams: TagStreams) -> Tagger {
        let config = ModelConfig {
            word_dim: 5,
            clamp_dim: 3,
            ctakes_dim: 2,
            augment,
            tag_streams: streams,
            mask_transitions: true,
            hidden_fraction: 0.37,
            seed: 11,
            ..ModelConfig::default()
        };
        let vocab = Vocabulary::from_counted([("aspirin", 4), ("po", 2), ("daily", 1)]);
        let emb = init_uniform(vocab.len(), 5, 3);
        let mut t = Tagger::new(config, vocab, emb.values).unwrap();
        t.params.crf.start[2] = -1.0 / 3.0;
        t
    }

    #[test]
    fn round_trip_is_exact() {
        for (aug, st) in [
            (false, TagStreams::Separate),
            (true, TagStreams::Separate),
            (true, TagStreams::Merged),
        ] {
            let t = tagger(aug, st);
            let back = decode_checkpoint(&encode_checkpoint(&t)).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let t = tagger(true, TagStreams::Separate);
        save_checkpoint(&t, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), t);
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&tagger(false, TagStreams::Separate));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(b"garbage").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("word_dim = 5", "word_dim = 6");
        let mut edited = text.split("end_manifest").next().unwrap().as_bytes().to_vec();
        edited.extend_from_slice(&bytes[bytes.windows(13).position(|w| w == b"end_manifest\n").unwrap()..]);
        assert!(decode_checkpoint(&edited).is_err());
    }
}
