//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! "DBFCKPT1"  u32 version
//! u32 n  n x u32 config words
//! u32 count  count x tensor
//! u32 count  count x tensor        optimizer moments ("adamw.m.*", "adamw.v.*")
//! u64 step
//! u32 len  len bytes               u64 epoch, ChaCha8 seed[32], u64 stream, u128 word_pos
//! ```
//!
//! A tensor is `u16 name_len, name, u8 rank, rank x u32 dims, f32 data`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adamw::{AdamWState, Moments};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TlVit, TlVitParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DBFCKPT1";
pub const VERSION: u32 = 1;

const M_PREFIX: &str = "adamw.m.";
const V_PREFIX: &str = "adamw.v.";
const RNG_BLOB_LEN: usize = 8 + 32 + 8 + 16;

/// Everything needed to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: TlVitParams<Tensor<f32>>,
    pub optimizer: AdamWState<f32>,
    /// Completed epochs.
    pub epoch: u64,
    /// Shuffle generator positioned at the start of epoch `epoch + 1`.
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn model(&self) -> Result<TlVit<f32>> {
        TlVit::new(self.config, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let words = self.config.to_words();
        put_u32(&mut out, words.len() as u32);
        for w in words {
            put_u32(&mut out, w);
        }

        let mut tensors = Vec::new();
        self.params
            .visit(&mut |name, _, t| tensors.push((name.to_string(), t)));
        write_tensors(&mut out, &tensors);

        let mut moments = Vec::new();
        if let Some(Moments { m, v }) = &self.optimizer.moments {
            m.visit(&mut |name, _, t| moments.push((format!("{M_PREFIX}{name}"), t)));
            v.visit(&mut |name, _, t| moments.push((format!("{V_PREFIX}{name}"), t)));
        }
        write_tensors(&mut out, &moments);
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());

        put_u32(&mut out, RNG_BLOB_LEN as u32);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let n_words = r.u32("config length")? as usize;
        if n_words != ModelConfig::WORDS {
            return Err(Error::Format(format!(
                "config has {n_words} fields, expected {}",
                ModelConfig::WORDS
            )));
        }
        let words = (0..n_words)
            .map(|_| r.u32("config"))
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig::from_words(&words)?;
        config.validate()?;

        let tensors = read_tensors(&mut r)?;
        let params = assemble(&config, tensors, "")?;

        let moment_tensors = read_tensors(&mut r)?;
        let step = r.u64("step counter")?;
        let moments = if moment_tensors.is_empty() {
            None
        } else {
            let (m, v): (Vec<_>, Vec<_>) = moment_tensors
                .into_iter()
                .partition(|(name, _)| name.starts_with(M_PREFIX));
            Some(Moments {
                m: assemble(&config, m, M_PREFIX)?,
                v: assemble(&config, v, V_PREFIX)?,
            })
        };

        let blob_len = r.u32("rng blob length")? as usize;
        if blob_len != RNG_BLOB_LEN {
            return Err(Error::Format(format!(
                "rng blob is {blob_len} bytes, expected {RNG_BLOB_LEN}"
            )));
        }
        let epoch = r.u64("epoch")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos =
            u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        Ok(Checkpoint {
            config,
            params,
            optimizer: AdamWState { moments, step },
            epoch,
            rng,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_tensors(out: &mut Vec<u8>, tensors: &[(String, &Tensor<f32>)]) {
    put_u32(out, tensors.len() as u32);
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            put_u32(out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated checkpoint while reading {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let data = r
            .take(bytes, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Places named tensors into a parameter tree for `config`, checking every
/// name and shape.
fn assemble(
    config: &ModelConfig,
    tensors: Vec<(String, Tensor<f32>)>,
    prefix: &str,
) -> Result<TlVitParams<Tensor<f32>>> {
    let shapes = TlVitParams::shapes(config);
    let expected = shapes.len();
    if tensors.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} {}tensors, config implies {expected}",
            tensors.len(),
            prefix
        )));
    }
    let mut iter = tensors.into_iter();
    shapes.try_map(&mut |name, _, shape| {
        let (found_name, t) = iter.next().expect("count checked");
        let want = format!("{prefix}{name}");
        if found_name != want {
            return Err(Error::Format(format!(
                "expected tensor `{want}`, found `{found_name}`"
            )));
        }
        if t.shape() != shape.as_slice() {
            return Err(Error::TensorShape {
                name: want,
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and requires its tensors to fit `config`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.params.audit(config)?;
    Ok(Checkpoint {
        config: *config,
        ..ckpt
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let config = ModelConfig::tiny();
        let model = TlVit::<f32>::init(config, 3).unwrap();
        let mut optimizer = AdamWState::for_params(model.params());
        optimizer.step = 7;
        if let Some(m) = optimizer.moments.as_mut() {
            m.v.head.bias.data_mut()[0] = 0.25;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(1);
        rng.next_u64();
        Checkpoint {
            config,
            params: model.into_params(),
            optimizer,
            epoch: 2,
            rng,
        }
    }

    // ln_eps travels as f32, so configs compare through their encoding.
    fn assert_same(a: &Checkpoint, b: &Checkpoint) {
        assert_eq!(a.config.to_words(), b.config.to_words());
        assert_eq!(a.params, b.params);
        assert_eq!(a.optimizer, b.optimizer);
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.rng, b.rng);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_same(&back, &ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn fresh_optimizer_round_trips() {
        let ck = Checkpoint {
            optimizer: AdamWState::default(),
            ..sample()
        };
        assert_same(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), &ck);
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            assert!(
                Checkpoint::from_bytes(&bytes[..cut]).is_err(),
                "cut at {cut}"
            );
        }
    }
}
