//! Raw tensor files and checkpoints.
//!
//! Raw tensor layout (little endian):
//!
//! ```text
//! b"SGDT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank | u8 pad=0
//! rank x u64 dims | scalars
//! ```
//!
//! A checkpoint is a text manifest followed by concatenated raw tensors:
//!
//! ```text
//! sgdvit-checkpoint 1
//! manifest-bytes <N>
//! <N bytes of manifest lines>
//! <raw tensors>
//! ```
//!
//! Manifest lines are either `meta <key> <value>` or
//! `tensor <name> offset=<o> bytes=<b> dtype=<f32|f64> shape=<d0,d1,..>`,
//! offsets counted from the first byte after the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"SGDT";
pub const VERSION: u8 = 1;
const CHECKPOINT_HEADER: &str = "sgdvit-checkpoint 1";

fn header_len(rank: usize) -> usize {
    8 + 8 * rank
}

pub fn encode_tensor<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(t.rank()) + t.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, T::DTYPE as u8, t.rank() as u8, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes one raw tensor from the front of `bytes`, converting the stored
/// scalar type to `T`. Returns the tensor and the number of bytes consumed.
pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let fmt = |m: &str| TensorError::Format(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fmt("missing SGDT magic"));
    }
    if bytes[4] != VERSION {
        return Err(TensorError::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| TensorError::Format(format!("unknown dtype {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    if rank == 0 {
        return Err(fmt("rank 0"));
    }
    let head = header_len(rank);
    if bytes.len() < head {
        return Err(fmt("truncated header"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize)
        .collect();
    let n = numel(&shape);
    let end = head + n * dtype.size();
    if bytes.len() < end {
        return Err(fmt("truncated data"));
    }
    let body = &bytes[head..end];
    let data: Vec<T> = match dtype {
        DType::F32 => body.chunks_exact(4).map(|c| T::c(f32::read_le(c) as f64)).collect(),
        DType::F64 => body.chunks_exact(8).map(|c| T::c(f64::read_le(c))).collect(),
    };
    Ok((Tensor::new(shape, data)?, end))
}

pub fn write_tensor<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let (t, used) = decode_tensor(&bytes)?;
    if used != bytes.len() {
        return Err(TensorError::Format(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}

/// Parameter set plus free-form string metadata.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint<T> {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: usize,
    pub bytes: usize,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl<T: Element> Checkpoint<T> {
    pub fn new(params: ParamStore<T>) -> Self {
        Checkpoint { meta: BTreeMap::new(), params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let mut data = Vec::new();
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in self.params.iter() {
            let raw = encode_tensor(t);
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!(
                "tensor {name} offset={} bytes={} dtype={} shape={}\n",
                data.len(),
                raw.len(),
                T::DTYPE.name(),
                shape.join(",")
            ));
            data.extend_from_slice(&raw);
        }
        let mut out = format!("{CHECKPOINT_HEADER}\nmanifest-bytes {}\n", manifest.len()).into_bytes();
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&data);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, entries, data) = parse_manifest(bytes)?;
        let mut params = ParamStore::new();
        for e in entries {
            let end = e.offset.checked_add(e.bytes).filter(|&end| end <= data.len());
            let Some(end) = end else {
                return Err(TensorError::Format(format!("tensor `{}` extends past end of file", e.name)));
            };
            let (t, used) = decode_tensor::<T>(&data[e.offset..end])?;
            if used != e.bytes || t.shape() != e.shape.as_slice() {
                return Err(TensorError::Format(format!("tensor `{}` disagrees with its manifest entry", e.name)));
            }
            params.add(e.name, t)?;
        }
        Ok(Checkpoint { meta, params })
    }
}

type Parsed<'a> = (BTreeMap<String, String>, Vec<ManifestEntry>, &'a [u8]);

fn parse_manifest(bytes: &[u8]) -> Result<Parsed<'_>> {
    let bad = |m: String| TensorError::Format(m);
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header line".into()))?;
        *pos += nl + 1;
        String::from_utf8(rest[..nl].to_vec()).map_err(|_| bad("header is not utf-8".into()))
    };
    if next_line(&mut pos)? != CHECKPOINT_HEADER {
        return Err(bad("not an sgdvit checkpoint".into()));
    }
    let len_line = next_line(&mut pos)?;
    let len: usize = len_line
        .strip_prefix("manifest-bytes ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad manifest length line `{len_line}`")))?;
    let manifest = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest = std::str::from_utf8(manifest).map_err(|_| bad("manifest is not utf-8".into()))?;
    let mut meta = BTreeMap::new();
    let mut entries = Vec::new();
    for line in manifest.lines() {
        let mut parts = line.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("meta"), Some(k), v) => {
                meta.insert(k.to_string(), v.unwrap_or("").to_string());
            }
            (Some("tensor"), Some(name), Some(fields)) => entries.push(parse_entry(name, fields)?),
            _ => return Err(bad(format!("bad manifest line `{line}`"))),
        }
    }
    Ok((meta, entries, &bytes[pos + len..]))
}

fn parse_entry(name: &str, fields: &str) -> Result<ManifestEntry> {
    let bad = || TensorError::Format(format!("bad manifest entry for `{name}`: {fields}"));
    let mut kv = BTreeMap::new();
    for f in fields.split_whitespace() {
        let (k, v) = f.split_once('=').ok_or_else(bad)?;
        kv.insert(k, v);
    }
    let num = |k: &str| kv.get(k).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
    let dtype = match kv.get("dtype").copied() {
        Some("f32") => DType::F32,
        Some("f64") => DType::F64,
        _ => return Err(bad()),
    };
    let shape = kv
        .get("shape")
        .ok_or_else(bad)?
        .split(',')
        .map(|d| d.parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ManifestEntry { name: name.to_string(), offset: num("offset")?, bytes: num("bytes")?, dtype, shape })
}

/// Reads only the manifest of a checkpoint file (no tensor decoding).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<(BTreeMap<String, String>, Vec<ManifestEntry>)> {
    let bytes = fs::read(path)?;
    let (meta, entries, _) = parse_manifest(&bytes)?;
    Ok((meta, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_header_layout() {
        let t = Tensor::<f32>::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"SGDT");
        assert_eq!(&b[4..8], &[1, 0, 2, 0]);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(b.len(), 24 + 6 * 4);
        assert_eq!(f32::from_le_bytes(b[24..28].try_into().unwrap()), 1.0);
    }

    #[test]
    fn f64_file_widens_or_narrows() {
        let t = Tensor::<f64>::new([3], vec![0.5, -1.0, 2.25]).unwrap();
        let (back, used) = decode_tensor::<f32>(&encode_tensor(&t)).unwrap();
        assert_eq!(used, 16 + 24);
        assert_eq!(back.data(), &[0.5f32, -1.0, 2.25]);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f32>::ones([4]).unwrap();
        let mut b = encode_tensor(&t);
        assert!(decode_tensor::<f32>(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode_tensor::<f32>(&b).is_err());
    }

    #[test]
    fn checkpoint_round_trip_keeps_order_and_meta() {
        let mut store = ParamStore::<f32>::new();
        store.add("b.weight", Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        store.add("a.bias", Tensor::from_f64([2], &[-1.0, 0.5]).unwrap()).unwrap();
        let mut ck = Checkpoint::new(store);
        ck.meta.insert("variant".into(), "sat_dyn".into());
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.meta["variant"], "sat_dyn");
        let names: Vec<_> = back.params.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, vec!["b.weight", "a.bias"]);
        assert_eq!(back.params.by_name("b.weight").unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
