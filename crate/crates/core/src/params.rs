//! Named parameter storage, freeze partitions, and the on-disk archive used
//! by checkpoints.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Weight,
    /// Running statistic, updated by forward passes rather than gradients.
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub kind: ParamKind,
    pub trainable: bool,
}

/// Ordered map of named arrays. Iteration order is lexicographic so
/// archives and digests are reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_weight(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                kind: ParamKind::Weight,
                trainable: true,
            },
        );
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                kind: ParamKind::Buffer,
                trainable: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.names().filter(move |n| n.starts_with(prefix))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total element count of trainable-kind arrays (buffers excluded).
    pub fn weight_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.len())
            .sum()
    }

    /// Marks exactly the named weights as non-trainable and every other
    /// weight as trainable. Buffers are never trainable.
    pub fn set_freeze<S: AsRef<str>>(&mut self, frozen: &[S]) -> Result<()> {
        let frozen: BTreeSet<&str> = frozen.iter().map(AsRef::as_ref).collect();
        if let Some(unknown) = frozen.iter().find(|n| !self.params.contains_key(**n)) {
            return Err(Error::UnknownParameter(unknown.to_string()));
        }
        for (name, p) in &mut self.params {
            p.trainable = p.kind == ParamKind::Weight && !frozen.contains(name.as_str());
        }
        Ok(())
    }

    /// True when every weight under `prefix` is frozen (and at least one exists).
    pub fn is_frozen(&self, prefix: &str) -> bool {
        let mut any = false;
        for (_, p) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            if p.kind == ParamKind::Weight {
                any = true;
                if p.trainable {
                    return false;
                }
            }
        }
        any
    }

    /// Copy of the entries under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterSet {
        ParameterSet {
            params: self
                .params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        }
    }

    /// Overwrites values of matching names from `other`; every name in
    /// `other` must already exist with the same shape.
    pub fn load_from(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, p) in &other.params {
            let slot = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if slot.value.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "{name}: checkpoint shape {:?} vs model shape {:?}",
                    p.value.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = p.value.clone();
        }
        Ok(())
    }

    /// Puts every weight onto `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph) -> Binding {
        let vars = self
            .params
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(n, p)| (n.clone(), graph.leaf(p.value.clone(), p.trainable)))
            .collect();
        Binding { vars }
    }

    /// Little-endian binary archive: magic, entry count, then per entry the
    /// name, kind, trainable flag, shape and `f64` data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match p.kind {
                ParamKind::Weight => 0,
                ParamKind::Buffer => 1,
            });
            out.push(p.trainable as u8);
            out.extend_from_slice(&(p.value.shape().len() as u64).to_le_bytes());
            for d in p.value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptArchive {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(ARCHIVE_MAGIC.len()).ok_or_else(|| corrupt("truncated"))? != ARCHIVE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let count = cur.u64().ok_or_else(|| corrupt("truncated"))?;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.u64().ok_or_else(|| corrupt("truncated"))? as usize;
            let name = std::str::from_utf8(cur.take(name_len).ok_or_else(|| corrupt("truncated"))?)
                .map_err(|_| corrupt("non-utf8 name"))?
                .to_string();
            let kind = match cur.take(1).ok_or_else(|| corrupt("truncated"))?[0] {
                0 => ParamKind::Weight,
                1 => ParamKind::Buffer,
                _ => return Err(corrupt("bad kind tag")),
            };
            let trainable = cur.take(1).ok_or_else(|| corrupt("truncated"))?[0] != 0;
            let ndim = cur.u64().ok_or_else(|| corrupt("truncated"))? as usize;
            let shape = (0..ndim)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| corrupt("truncated"))?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 8).ok_or_else(|| corrupt("truncated"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(
                name,
                Param {
                    value: Tensor::from_vec(&shape, data)?,
                    kind,
                    trainable,
                },
            );
        }
        if cur.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// SHA-256 over the archive bytes, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

const ARCHIVE_MAGIC: &[u8; 8] = b"SSLHARP1";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Graph leaves for one forward/backward pass over a [`ParameterSet`].
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
