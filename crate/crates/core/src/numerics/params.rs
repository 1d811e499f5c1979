//! Named parameter collections, their optimizer state and the binary
//! checkpoint encoding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CISP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Name suffixes of non-trainable entries (batchnorm running statistics).
const BUFFER_SUFFIXES: [&str; 3] = [".running_mean", ".running_var", ".num_batches"];

pub fn is_buffer_name(name: &str) -> bool {
    BUFFER_SUFFIXES.iter().any(|s| name.ends_with(s))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S = f32> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Option<Tensor<S>>,
    /// Adam first moment.
    pub m: Tensor<S>,
    /// Adam second moment.
    pub v: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn trainable(&self) -> bool {
        !is_buffer_name(&self.name)
    }
}

/// Ordered collection of one network's parameters.
///
/// Iteration order is insertion order. Batchnorm running statistics are
/// stored alongside the weights (see [`is_buffer_name`]) so a checkpoint
/// carries everything inference needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S = f32> {
    params: Vec<Param<S>>,
    index: BTreeMap<String, usize>,
    pub seed: u64,
    pub step: u64,
}

/// Graph handles for every entry of a store, index-aligned with it.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        Self { params: Vec::new(), index: BTreeMap::new(), seed, step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value, grad: None, m, v });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>> {
        Ok(&self.params[self.position(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<S>> {
        let i = self.position(name)?;
        Ok(&mut self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.get(name)?.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable()).map(|p| p.value.len()).sum()
    }

    /// Adds every entry to `graph` as a leaf. Trainable entries receive
    /// gradients when `requires_grad` is set; buffers never do.
    pub fn bind(&self, graph: &mut Graph<S>, requires_grad: bool) -> Result<Binding> {
        let vars = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone(), requires_grad && p.trainable()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Binding { vars })
    }

    /// Copies gradients out of `graph`. Trainable entries the loss did not
    /// reach get a zero gradient.
    pub fn load_grads(&mut self, graph: &Graph<S>, binding: &Binding) -> Result<()> {
        if binding.vars.len() != self.params.len() {
            return Err(Error::Invalid("binding does not belong to this store".into()));
        }
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if !p.trainable() {
                continue;
            }
            let grad = match graph.grad(v) {
                Some(g) => Tensor::new(p.value.shape(), g.to_vec())?,
                None => Tensor::zeros(p.value.shape()),
            };
            p.grad = Some(grad);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().fill(S::zero());
            }
        }
    }

    /// Converts every tensor (values, grads and moments) to another precision.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                    m: p.m.cast(),
                    v: p.v.cast(),
                })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
            step: self.step,
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &e in t.shape() {
        put_u32(out, e as u32);
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl ParamStore<f32> {
    /// Checkpoint layout (all integers little-endian):
    ///
    /// ```text
    /// "CISP" | version u32 | count u32 | step u64 | seed u64
    /// count × record          parameter values
    /// count × record          first moments
    /// count × record          second moments
    /// record = name_len u32 | name utf-8 | rank u32 | rank × extent u32 | f32 values
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, self.params.len() as u32);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for p in &self.params {
            put_record(&mut out, &p.name, &p.value);
        }
        for p in &self.params {
            put_record(&mut out, &p.name, &p.m);
        }
        for p in &self.params {
            put_record(&mut out, &p.name, &p.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.fail(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(4, &format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let step = r.u64()?;
        let seed = r.u64()?;
        let mut store = ParamStore::new(seed);
        store.step = step;
        for _ in 0..count {
            let (name, t) = r.record()?;
            store.insert(&name, t).map_err(|e| r.fail(r.pos, &e.to_string()))?;
        }
        for slot in 0..2 {
            for i in 0..count {
                let at = r.pos;
                let (name, t) = r.record()?;
                let p = &mut store.params[i];
                if name != p.name || t.shape() != p.value.shape() {
                    return Err(r.fail(at, &format!("moment record `{name}` does not match `{}`", p.name)));
                }
                if slot == 0 {
                    p.m = t;
                } else {
                    p.v = t;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes"));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, detail: &str) -> Error {
        Error::Checkpoint { offset, detail: detail.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.pos, &format!("truncated, wanted {n} more bytes"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw_name = self.take(len)?;
        let name = match core::str::from_utf8(raw_name) {
            Ok(s) => s.to_string(),
            Err(_) => return Err(self.fail(at + 4, "name is not utf-8")),
        };
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(self.fail(at, &format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = self.take(count.checked_mul(4).ok_or_else(|| self.fail(at, "overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new(42);
        s.insert("conv.weight", Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.25 - 1.0)).unwrap();
        s.insert("conv.bias", Tensor::from_fn(&[2], |i| i as f32)).unwrap();
        s.insert("bn.running_var", Tensor::full(&[2], 1.0)).unwrap();
        s.step = 17;
        s.get_mut("conv.bias").unwrap().m = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new(0);
        s.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(matches!(s.insert("a", Tensor::zeros(&[1])), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn buffers_are_not_trainable() {
        let s = sample_store();
        assert!(!s.get("bn.running_var").unwrap().trainable());
        assert_eq!(s.num_trainable(), 20);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let s = sample_store();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"CISP");
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample_store().to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 17);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 42);
        // first record: name length then the name
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 11);
        assert_eq!(&bytes[32..43], b"conv.weight");
    }

    #[test]
    fn corrupt_checkpoints_report_offsets() {
        let bytes = sample_store().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ParamStore::from_bytes(&bad), Err(Error::Checkpoint { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(ParamStore::from_bytes(truncated), Err(Error::Checkpoint { .. })));
        let mut long = bytes.clone();
        long.push(0);
        match ParamStore::from_bytes(&long) {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("unexpected {other:?}"),
        }
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(ParamStore::from_bytes(&version), Err(Error::Checkpoint { offset: 4, .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 1..4), any::<u32>()),
                1..5,
            ),
            seed in any::<u64>(),
            step in any::<u64>(),
        ) {
            let mut s = ParamStore::new(seed);
            s.step = step;
            for (i, (shape, bits)) in tensors.iter().enumerate() {
                let t = Tensor::from_fn(shape, |k| f32::from_bits(bits.wrapping_add(k as u32 * 7919) & 0x7f7f_ffff));
                s.insert(&format!("p{i}.weight"), t).unwrap();
            }
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), s.to_bytes());
            for (a, b) in back.iter().zip(s.iter()) {
                let ab: Vec<u32> = a.value.data().iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = b.value.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
