//! JSON checkpoint archive.
//!
//! ```json
//! { "format": "crowngen-checkpoint", "version": 1,
//!   "config": { ... model/optimizer settings, free-form ... },
//!   "epoch": 40,
//!   "tensors": [ { "name": "enc0.wq", "shape": [128, 128], "data": [...] } ],
//!   "adam": { "cfg": {...}, "step": 120, "m": [[...]], "v": [[...]] } }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a reload
//! restores every parameter bit for bit. Readers reject unknown `format`
//! strings and any `version` newer than [`VERSION`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamState, ParamStore};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const FORMAT: &str = "crowngen-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config: serde_json::Value,
    pub epoch: u32,
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(params: &ParamStore, adam: Option<&AdamState>, config: serde_json::Value, epoch: u32) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config,
            epoch,
            tensors: params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.into(),
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
            adam: adam.cloned(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != FORMAT {
            return Err(TensorError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version > VERSION {
            return Err(TensorError::Checkpoint(format!("version {} is newer than {VERSION}", ck.version)));
        }
        for t in &ck.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(TensorError::Checkpoint(format!("tensor {} does not match its shape", t.name)));
            }
        }
        Ok(ck)
    }

    /// Overwrites `params` by name; every parameter must be present with the
    /// same shape.
    pub fn restore_into(&self, params: &mut ParamStore) -> Result<()> {
        for i in 0..params.len() {
            let name = params.name(i).to_string();
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != params.get(i).shape {
                return Err(TensorError::Checkpoint(format!(
                    "tensor {name}: stored shape {:?}, model shape {:?}",
                    t.shape,
                    params.get(i).shape
                )));
            }
            *params.get_mut(i) = Tensor::new(t.shape.clone(), t.data.clone())?.with_grad();
        }
        if self.tensors.len() != params.len() {
            return Err(TensorError::Checkpoint(format!(
                "{} stored tensors for {} parameters",
                self.tensors.len(),
                params.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::AdamConfig;

    fn params() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("a", Tensor::matrix(2, 3, vec![0.1, 1.0 / 3.0, -2.5e-7, 1e300, -0.0, std::f64::consts::PI]));
        p.add("b", Tensor::matrix(1, 1, vec![42.0]));
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let p = params();
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.m[0][1] = 1.0 / 7.0;
        let ck = Checkpoint::new(&p, Some(&adam), serde_json::json!({"d_model": 8}), 3);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let mut q = params();
        q.get_mut(0).data.iter_mut().for_each(|x| *x = 0.0);
        back.restore_into(&mut q).unwrap();
        for ((_, x), (_, y)) in p.iter().zip(q.iter()) {
            assert!(x.data.iter().zip(&y.data).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn rejects_foreign_or_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = Checkpoint::new(&params(), None, serde_json::Value::Null, 0);
        ck.version = VERSION + 1;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TensorError::Checkpoint(_))));
        ck.version = VERSION;
        ck.format = "other".into();
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TensorError::Checkpoint(_))));

        let ck = Checkpoint::new(&params(), None, serde_json::Value::Null, 0);
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(&[3, 2]));
        other.add("b", Tensor::zeros(&[1, 1]));
        assert!(matches!(ck.restore_into(&mut other), Err(TensorError::Checkpoint(_))));
        assert!(matches!(Checkpoint::load(&dir.path().join("none.json")), Err(TensorError::Io { .. })));
    }
}
