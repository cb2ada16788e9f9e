//! Binary tensor container and checkpoints.
//!
//! Tensor layout (all integers little-endian):
//!
//! ```text
//! "STEK" | version u16 | dtype u8 (0 = f32, 1 = f64) | rank u8 | extents u64 × rank | data
//! ```
//!
//! A checkpoint is a TOML header terminated by a `---` line, followed by
//! named tensors, each as `name_len u32 | name utf-8 | tensor container`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::spec_string::parse_stack;
use crate::ste::{Activation, LayerWeights, StackSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"STEK";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_END: &str = "\n---\n";
const CHECKPOINT_TAG: &str = "# stekit checkpoint\n";

/// A tensor read from disk in whichever precision it was written.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            AnyTensor::F32(_) => "f32",
            AnyTensor::F64(_) => "f64",
        }
    }

    /// Wraps a tensor in its own precision.
    pub fn from_real<R: Real>(t: &Tensor<R>) -> Self {
        if R::DTYPE_CODE == f32::DTYPE_CODE {
            AnyTensor::F32(t.cast())
        } else {
            AnyTensor::F64(t.cast())
        }
    }

    /// Converts to the working precision (exact when widening).
    pub fn to_real<R: Real>(&self) -> Tensor<R> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub fn encode_tensor<R: Real>(t: &Tensor<R>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(R::DTYPE_CODE);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.reserve(t.len() * R::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Raw little-endian element bytes of a tensor.
pub fn payload_bytes<R: Real>(t: &Tensor<R>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * R::BYTES);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, field: &'static str, msg: String) -> Result<T> {
        Err(Error::Format {
            path: self.path.to_path_buf(),
            field,
            msg,
        })
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return self.fail(
                field,
                format!(
                    "truncated: expected {} bytes, got {} (offset {})",
                    n, remaining, self.pos
                ),
            );
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensor(&mut self) -> Result<AnyTensor> {
        let magic = self.take(4, "magic")?;
        if magic != MAGIC {
            return self.fail("magic", format!("expected \"STEK\", found {magic:?}"));
        }
        let version = u16::from_le_bytes(self.take(2, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return self.fail("version", format!("unsupported format version {version}"));
        }
        let dtype = self.take(1, "dtype")?[0];
        let rank = self.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = u64::from_le_bytes(self.take(8, "extents")?.try_into().unwrap());
            if e == 0 || e > usize::MAX as u64 {
                return self.fail("extents", format!("invalid extent {e}"));
            }
            shape.push(e as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e));
        let Some(count) = count else {
            return self.fail("extents", format!("element count overflows for {shape:?}"));
        };
        match dtype {
            0 => Ok(AnyTensor::F32(self.elements(shape, count)?)),
            1 => Ok(AnyTensor::F64(self.elements(shape, count)?)),
            other => self.fail("dtype", format!("unknown dtype code {other}")),
        }
    }

    fn elements<R: Real>(&mut self, shape: Vec<usize>, count: usize) -> Result<Tensor<R>> {
        let Some(n) = count.checked_mul(R::BYTES) else {
            return self.fail("data", format!("element count {count} too large"));
        };
        let raw = self.take(n, "data")?;
        let data = raw.chunks_exact(R::BYTES).map(R::read_le).collect();
        Tensor::new(shape, data)
    }
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<AnyTensor> {
    let mut r = Reader { bytes, pos: 0, path };
    let t = r.tensor()?;
    if r.pos != bytes.len() {
        return r.fail(
            "data",
            format!("{} trailing bytes after tensor", bytes.len() - r.pos),
        );
    }
    Ok(t)
}

pub fn write_tensor<R: Real>(path: impl AsRef<Path>, t: &Tensor<R>) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_tensor(&bytes, path)
}

/// Named tensors plus a TOML header.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: toml::Table,
    pub entries: Vec<(String, AnyTensor)>,
}

impl Checkpoint {
    pub fn new(header: toml::Table) -> Self {
        Checkpoint {
            header,
            entries: Vec::new(),
        }
    }

    pub fn push<R: Real>(&mut self, name: impl Into<String>, t: &Tensor<R>) {
        self.entries.push((name.into(), AnyTensor::from_real(t)));
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn header_str(&self, key: &str) -> Option<&str> {
        self.header.get(key).and_then(|v| v.as_str())
    }

    /// Encoder-only checkpoint: `stack`/`activation` in the header, entries
    /// `layer{i}.kernel` and `layer{i}.bias`.
    pub fn from_stack<R: Real>(stack: &StackSpec, weights: &[LayerWeights<R>]) -> Self {
        let mut header = toml::Table::new();
        header.insert("stack".into(), stack.to_string().into());
        header.insert(
            "activation".into(),
            activation_name(stack.activation).to_string().into(),
        );
        let mut ck = Checkpoint::new(header);
        for (i, w) in weights.iter().enumerate() {
            ck.push(format!("layer{i}.kernel"), &w.kernel);
            ck.push(format!("layer{i}.bias"), &w.bias);
        }
        ck
    }

    /// Reads the stack spec and layer weights written by [`from_stack`].
    ///
    /// [`from_stack`]: Checkpoint::from_stack
    pub fn stack_weights<R: Real>(&self) -> Result<(StackSpec, Vec<LayerWeights<R>>)> {
        let text = self
            .header_str("stack")
            .ok_or_else(|| Error::Config("checkpoint header has no 'stack' key".into()))?;
        let mut stack = parse_stack(text)?;
        if let Some(a) = self.header_str("activation") {
            stack.activation = parse_activation(a)?;
        }
        let mut weights = Vec::with_capacity(stack.depth());
        for i in 0..stack.depth() {
            let get = |suffix: &str| {
                let name = format!("layer{i}.{suffix}");
                self.get(&name)
                    .map(|t| t.to_real::<R>())
                    .ok_or_else(|| Error::Config(format!("checkpoint has no entry '{name}'")))
            };
            weights.push(LayerWeights {
                kernel: get("kernel")?,
                bias: get("bias")?,
            });
        }
        Ok((stack, weights))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::from(CHECKPOINT_TAG.as_bytes());
        let header = toml::to_string(&self.header).expect("toml table serialises");
        out.extend_from_slice(header.trim_end().as_bytes());
        out.extend_from_slice(HEADER_END.as_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match t {
                AnyTensor::F32(t) => encode_tensor(t, &mut out),
                AnyTensor::F64(t) => encode_tensor(t, &mut out),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |field: &'static str, msg: String| Error::Format {
            path: path.to_path_buf(),
            field,
            msg,
        };
        if !bytes.starts_with(CHECKPOINT_TAG.as_bytes()) {
            return Err(fail("header", "missing checkpoint tag line".into()));
        }
        let end = bytes
            .windows(HEADER_END.len())
            .position(|w| w == HEADER_END.as_bytes())
            .ok_or_else(|| fail("header", "no '---' terminator".into()))?;
        let text = std::str::from_utf8(&bytes[CHECKPOINT_TAG.len()..end])
            .map_err(|e| fail("header", e.to_string()))?;
        let header: toml::Table = text.parse().map_err(|e| fail("header", format!("{e}")))?;
        let mut r = Reader {
            bytes,
            pos: end + HEADER_END.len(),
            path,
        };
        let mut entries = Vec::new();
        while r.pos < bytes.len() {
            let len = u32::from_le_bytes(r.take(4, "entry name length")?.try_into().unwrap());
            let name = std::str::from_utf8(r.take(len as usize, "entry name")?)
                .map_err(|e| fail("entry name", e.to_string()))?
                .to_string();
            let t = r.tensor()?;
            entries.push((name, t));
        }
        Ok(Checkpoint { header, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path: PathBuf = path.as_ref().to_path_buf();
        let bytes = fs::read(&path)?;
        Self::from_bytes(&bytes, &path)
    }
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::None => "none",
        Activation::Gelu => "gelu",
    }
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "none" => Ok(Activation::None),
        "gelu" => Ok(Activation::Gelu),
        other => Err(Error::Config(format!(
            "unknown activation '{other}' (expected none or gelu)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::ste::InitMode;

    #[test]
    fn header_bytes() {
        let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let mut out = Vec::new();
        encode_tensor(&t, &mut out);
        assert_eq!(&out[..4], b"STEK");
        assert_eq!(&out[4..6], &[1, 0]);
        assert_eq!(out[6], 0);
        assert_eq!(out[7], 2);
        assert_eq!(&out[8..16], &2u64.to_le_bytes());
        assert_eq!(&out[16..24], &1u64.to_le_bytes());
        assert_eq!(&out[24..28], &1.0f32.to_le_bytes());
        assert_eq!(out.len(), 32);
    }

    #[test]
    fn truncated_reports_byte_counts() {
        let t = Tensor::<f64>::zeros(&[3, 2]);
        let mut out = Vec::new();
        encode_tensor(&t, &mut out);
        out.truncate(out.len() - 5);
        let err = decode_tensor(&out, Path::new("x.stek")).unwrap_err().to_string();
        assert!(err.contains("x.stek"), "{err}");
        assert!(err.contains("expected 48 bytes, got 43"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let err = decode_tensor(b"NOPE\x01\x00\x01\x00", Path::new("m"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let stack: StackSpec = "(2:1)-(4:3)".parse().unwrap();
        let ws = stack
            .init_weights::<f64>(8, InitMode::ScaledUniform, &mut Rng::new(3))
            .unwrap();
        let ck = Checkpoint::from_stack(&stack, &ws);
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("ck")).unwrap();
        assert_eq!(back, ck);
        let (s2, w2) = back.stack_weights::<f64>().unwrap();
        assert_eq!(s2, stack);
        assert_eq!(w2, ws);
    }
}
