use std::io::{Read, Write};

use crate::{Real, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CADATENS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Zeroed gradient buffers, one per parameter.
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Overwrites values from `entries`, matching by name and shape.
    pub fn load_named(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        for id in self.ids() {
            let name = &self.names[id.0];
            let (_, t) = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != self.tensors[id.0].shape() {
                return Err(TensorError::Checkpoint(format!(
                    "tensor {name}: shape {:?} != {:?}",
                    t.shape(),
                    self.tensors[id.0].shape()
                )));
            }
            self.tensors[id.0] = t.cast();
        }
        Ok(())
    }
}

/// Writes tensors in the flat binary checkpoint layout: magic, version,
/// count, then per tensor `name_len, name, rank, dims..., f32 data` with all
/// integers as little-endian u32.
pub fn write_checkpoint<W: Write, T: Real>(mut w: W, entries: &[(&str, &Tensor<T>)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let a = Tensor::<f32>::matrix(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-7, -1e7]).unwrap();
        let b = Tensor::<f32>::row(vec![0.5; 4]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("enc.w", &a), ("b", &b)]).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "enc.w");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].1, b);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOTACKPT\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(TensorError::Checkpoint(_))));
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(vec![2, 2]));
        let wrong = vec![("w".to_string(), Tensor::<f32>::zeros(vec![3, 2]))];
        assert!(store.load_named(&wrong).is_err());
        let right = vec![("w".to_string(), Tensor::<f32>::row(vec![1.0; 4]))];
        // same element count but different shape is still rejected
        assert!(store.load_named(&right).is_err());
    }
}
