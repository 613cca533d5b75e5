use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::{AdamState, RngState, TrainConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::gfn::{DiscParams, GfnParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GFNC";
pub const CHECKPOINT_VERSION: u16 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

const DTYPE_F64: u8 = 0;
const DTYPE_U64: u8 = 1;

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed iterations.
    pub iteration: u64,
    pub generator: GfnParams,
    pub generator_adam: AdamState,
    /// Present when adversarial training is enabled.
    pub discriminator: Option<(DiscParams, AdamState)>,
    pub rng: RngState,
}

enum Values {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

struct Array {
    dims: Vec<u32>,
    values: Values,
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
    count_at: usize,
}

impl Writer {
    fn new() -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let count_at = buf.len();
        buf.extend_from_slice(&0u32.to_le_bytes());
        Writer { buf, count: 0, count_at }
    }

    fn header(&mut self, name: &str, dtype: u8, dims: &[usize]) {
        self.count += 1;
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(dtype);
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.header(name, DTYPE_F64, &t.shape());
        for v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn words(&mut self, name: &str, values: &[u64]) {
        self.header(name, DTYPE_U64, &[values.len()]);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn adam(&mut self, prefix: &str, names: &[String], state: &AdamState) {
        self.words(&format!("{prefix}.step"), &[state.step]);
        for (name, m) in names.iter().zip(&state.m) {
            self.tensor(&format!("{prefix}.m.{name}"), m);
        }
        for (name, v) in names.iter().zip(&state.v) {
            self.tensor(&format!("{prefix}.v.{name}"), v);
        }
    }

    fn finish(mut self, config_json: &str) -> Vec<u8> {
        let count = self.count.to_le_bytes();
        self.buf[self.count_at..self.count_at + 4].copy_from_slice(&count);
        self.buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(config_json.as_bytes());
        let sum = CRC64.checksum(&self.buf);
        self.buf.extend_from_slice(&sum.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn array(&mut self) -> std::result::Result<(String, Array), CheckpointError> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("array name is not UTF-8".into()))?;
        let dtype = self.u8()?;
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let count = count.ok_or_else(|| CheckpointError::Malformed(format!("{name}: dims overflow")))?;
        let raw = self.take(count.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let words = raw.chunks_exact(8).map(|c| c.try_into().unwrap());
        let values = match dtype {
            DTYPE_F64 => Values::F64(words.map(f64::from_le_bytes).collect()),
            DTYPE_U64 => Values::U64(words.map(u64::from_le_bytes).collect()),
            other => return Err(CheckpointError::Malformed(format!("{name}: unknown dtype tag {other}"))),
        };
        Ok((name, Array { dims, values }))
    }
}

struct Layout {
    arrays: BTreeMap<String, Array>,
    config: String,
}

fn parse_layout(bytes: &[u8]) -> std::result::Result<Layout, CheckpointError> {
    let mut r = Reader { bytes, pos: 6 };
    let count = r.u32()?;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let (name, array) = r.array()?;
        if arrays.insert(name.clone(), array).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate array {name}")));
        }
    }
    let len = r.u32()? as usize;
    let config = String::from_utf8(r.take(len)?.to_vec())
        .map_err(|_| CheckpointError::Malformed("config snapshot is not UTF-8".into()))?;
    r.take(8)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    Ok(Layout { arrays, config })
}

impl Layout {
    fn take(&mut self, name: &str) -> std::result::Result<Array, CheckpointError> {
        self.arrays
            .remove(name)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing array {name}")))
    }

    fn fill(&mut self, name: &str, dst: &mut Tensor) -> std::result::Result<(), CheckpointError> {
        let a = self.take(name)?;
        let dims: Vec<usize> = a.dims.iter().map(|&d| d as usize).collect();
        if dims != dst.shape() {
            return Err(CheckpointError::Malformed(format!(
                "{name}: stored shape {dims:?}, expected {:?}",
                dst.shape()
            )));
        }
        match a.values {
            Values::F64(v) => dst.data_mut().copy_from_slice(&v),
            Values::U64(_) => return Err(CheckpointError::Malformed(format!("{name}: expected f64 values"))),
        }
        Ok(())
    }

    fn words(&mut self, name: &str, len: usize) -> std::result::Result<Vec<u64>, CheckpointError> {
        match self.take(name)? {
            Array {
                values: Values::U64(v),
                ..
            } if v.len() == len => Ok(v),
            _ => Err(CheckpointError::Malformed(format!("{name}: expected {len} u64 values"))),
        }
    }

    fn adam(&mut self, prefix: &str, names: &[String], like: &[&Tensor]) -> std::result::Result<AdamState, CheckpointError> {
        let mut state = AdamState::new(like.iter().copied());
        state.step = self.words(&format!("{prefix}.step"), 1)?[0];
        for (name, m) in names.iter().zip(&mut state.m) {
            self.fill(&format!("{prefix}.m.{name}"), m)?;
        }
        for (name, v) in names.iter().zip(&mut state.v) {
            self.fill(&format!("{prefix}.v.{name}"), v)?;
        }
        Ok(state)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        let gen_named = self.generator.named_tensors();
        let gen_names: Vec<String> = gen_named.iter().map(|(n, _)| n.clone()).collect();
        for (name, t) in &gen_named {
            w.tensor(name, t);
        }
        w.adam("adam.gen", &gen_names, &self.generator_adam);
        if let Some((disc, adam)) = &self.discriminator {
            let named = disc.named_tensors();
            let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
            for (name, t) in &named {
                w.tensor(name, t);
            }
            w.adam("adam.disc", &names, adam);
        }
        w.words("state.iteration", &[self.iteration]);
        w.words("state.rng", &[self.rng.seed, self.rng.next_iteration]);
        let config = serde_json::to_string_pretty(&self.config)?;
        Ok(w.finish(&config))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 {
            return Err(CheckpointError::Truncated.into());
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        if bytes.len() < 6 + 4 + 4 + 8 {
            return Err(CheckpointError::Truncated.into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = CRC64.checksum(body);
        if stored != computed {
            // A file cut short usually also fails the checksum; report the cause
            // that explains it.
            return Err(match parse_layout(bytes) {
                Err(CheckpointError::Truncated) => CheckpointError::Truncated,
                _ => CheckpointError::Checksum { stored, computed },
            }
            .into());
        }
        let mut layout = parse_layout(bytes)?;
        let config: TrainConfig = serde_json::from_str(&layout.config)
            .map_err(|e| CheckpointError::Malformed(format!("config snapshot: {e}")))?;

        let mut generator = GfnParams::zeros(config.model)?;
        let gen_names: Vec<String> = generator.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, t) in gen_names.iter().zip(generator.tensors_mut()) {
            layout.fill(name, t)?;
        }
        let gen_like: Vec<&Tensor> = generator.named_tensors().into_iter().map(|(_, t)| t).collect();
        let generator_adam = layout.adam("adam.gen", &gen_names, &gen_like)?;

        let discriminator = if config.adversarial_enabled {
            let mut disc = DiscParams::zeros((config.patch_size, config.patch_size));
            let names: Vec<String> = disc.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (name, t) in names.iter().zip(disc.tensors_mut()) {
                layout.fill(name, t)?;
            }
            let like: Vec<&Tensor> = disc.named_tensors().into_iter().map(|(_, t)| t).collect();
            let adam = layout.adam("adam.disc", &names, &like)?;
            Some((disc, adam))
        } else {
            None
        };
        let iteration = layout.words("state.iteration", 1)?[0];
        let rng = layout.words("state.rng", 2)?;
        if let Some(extra) = layout.arrays.keys().next() {
            return Err(CheckpointError::Malformed(format!("unexpected array {extra}")).into());
        }
        Ok(Checkpoint {
            config,
            iteration,
            generator,
            generator_adam,
            discriminator,
            rng: RngState {
                seed: rng[0],
                next_iteration: rng[1],
            },
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
