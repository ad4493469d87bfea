//! Named parameter collections and the `CVMX` checkpoint archive.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::{Gradients, Graph, Tensor};
use crate::error::{arg_err, Error, Result};
use crate::Scalar;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"CVMX";
pub const ARCHIVE_VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

/// Ordered, uniquely named tensors plus scalar metadata (layer counts, sizes).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    meta: BTreeMap<String, f64>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if name.starts_with(META_PREFIX) {
            return arg_err(format!(
                "parameter name {name} uses the reserved meta prefix"
            ));
        }
        if self.index.contains_key(&name) {
            return arg_err(format!("duplicate parameter {name}"));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn set_meta(&mut self, key: &str, value: f64) {
        self.meta.insert(key.to_string(), value);
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.get(key).copied()
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta(key)
            .filter(|v| *v >= 0.0 && v.fract() == 0.0)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("missing or invalid metadata {key}")))
    }

    /// Gradients for every parameter, in store order; parameters the graph
    /// never touched get zeros.
    pub fn grads_from(&self, graph: &Graph<T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(
                |(name, t)| match graph.bound_param(name).and_then(|v| grads.get(v)) {
                    Some(g) => Tensor::new(t.shape().to_vec(), g.to_vec()).expect("grad shape"),
                    None => Tensor::zeros(t.shape()),
                },
            )
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut entries: Vec<ArchiveEntry> = self
            .meta
            .iter()
            .map(|(k, &v)| ArchiveEntry {
                name: format!("{META_PREFIX}{k}"),
                shape: vec![],
                data: vec![v as f32],
            })
            .collect();
        entries.extend(self.iter().map(|(n, t)| ArchiveEntry {
            name: n.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| x.to_f64_lossy() as f32).collect(),
        }));
        Archive { entries }
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let mut store = Self::new();
        for e in &archive.entries {
            if let Some(key) = e.name.strip_prefix(META_PREFIX) {
                store.set_meta(key, e.data[0] as f64);
            } else {
                let shape = if e.shape.is_empty() {
                    vec![1]
                } else {
                    e.shape.clone()
                };
                let data = e.data.iter().map(|&x| T::lit(x as f64)).collect();
                store.insert(e.name.clone(), Tensor::new(shape, data)?)?;
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn fan_in_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// In-memory form of a `CVMX` file: magic, `u32` version, `u32` entry count,
/// then per entry `u32` name length, UTF-8 name, `u32` rank, `u32` dims and
/// little-endian `f32` payload. Rank-0 entries carry one value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<ArchiveEntry>,
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl Archive {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(ARCHIVE_MAGIC)?;
        w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let n: usize = e.shape.iter().product();
            if n != e.data.len() {
                return Err(Error::Shape(format!("archive entry {} payload", e.name)));
            }
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &x in &e.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Format("not a CVMX archive".into()));
        }
        let version = read_u32(r)?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {version}"
            )));
        }
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("archive entry name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(ArchiveEntry { name, shape, data });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_layout_is_bit_exact() {
        let mut store = ParamStore::<f32>::new();
        store
            .insert("w", Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap())
            .unwrap();
        store.set_meta("layers", 3.0);
        let mut bytes = Vec::new();
        store.to_archive().write_to(&mut bytes).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"CVMX");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&11u32.to_le_bytes());
        expect.extend_from_slice(b"meta.layers");
        expect.extend_from_slice(&0u32.to_le_bytes());
        expect.extend_from_slice(&3f32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(b"w");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1f32.to_le_bytes());
        expect.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(bytes, expect);
        let back =
            ParamStore::<f32>::from_archive(&Archive::read_from(&mut &bytes[..]).unwrap()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(store.insert("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let bytes = b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00";
        assert!(Archive::read_from(&mut &bytes[..]).is_err());
    }
}
