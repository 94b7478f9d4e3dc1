//! The three networks, their parameters, and the checkpoint archive.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::alpha_net::AlphaNet;
use crate::config::ModelConfig;
use crate::error::{OtvmError, Result};
use crate::nn::{ModuleKind, ParamStore};
use crate::refine::Refine;
use crate::tensor::Tensor;
use crate::trainer::Stage;
use crate::trimap_prop::TrimapProp;

pub const FORMAT_VERSION: &str = "1";

pub struct Otvm {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub prop: TrimapProp,
    pub alpha: AlphaNet,
    pub refine: Refine,
    /// Training stages already applied to these weights, in order.
    pub stages_done: Vec<Stage>,
}

impl Otvm {
    /// Freshly initialised weights; a pure function of the config.
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut store = ParamStore::new();
        let rng = |k: u64| {
            ChaCha8Rng::seed_from_u64(
                cfg.init_seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(k),
            )
        };
        let prop = TrimapProp::new(cfg, &mut store, &mut rng(1));
        let alpha = AlphaNet::new(cfg, &mut store, &mut rng(2));
        let refine = Refine::new(cfg, &mut store, &mut rng(3));
        Self {
            cfg: cfg.clone(),
            store,
            prop,
            alpha,
            refine,
            stages_done: Vec::new(),
        }
    }

    /// Parameter values of one module, in store order.
    pub fn module_snapshot(&self, m: ModuleKind) -> Vec<Tensor> {
        self.store
            .entries()
            .iter()
            .filter(|e| e.module == m)
            .map(|e| e.value.clone())
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut raw: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.store.len());
        for e in self.store.entries() {
            let bytes: Vec<u8> = e
                .value
                .data()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            raw.push((e.name.clone(), e.value.shape().to_vec(), bytes));
        }
        let mut views = Vec::with_capacity(raw.len());
        for (name, shape, bytes) in &raw {
            let view = TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map_err(|e| OtvmError::Checkpoint(format!("{e:?}")))?;
            views.push((name.clone(), view));
        }
        let mut meta = HashMap::new();
        meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
        meta.insert(
            "preset".to_string(),
            serde_json::to_string(&self.cfg.preset)?,
        );
        meta.insert("model".to_string(), serde_json::to_string(&self.cfg)?);
        meta.insert(
            "stages".to_string(),
            serde_json::to_string(&self.stages_done)?,
        );
        let bytes = safetensors::serialize(views, &Some(meta))
            .map_err(|e| OtvmError::Checkpoint(format!("{e:?}")))?;
        canonical_header(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = |e: safetensors::SafeTensorError| OtvmError::Checkpoint(format!("{e:?}"));
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(ck)?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| OtvmError::Checkpoint("missing header metadata".into()))?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| OtvmError::Checkpoint(format!("header lacks `{k}`")))
        };
        if get("format_version")? != FORMAT_VERSION {
            return Err(OtvmError::Checkpoint(format!(
                "unsupported format version {}",
                get("format_version")?
            )));
        }
        let cfg: ModelConfig = serde_json::from_str(get("model")?)?;
        let stages: Vec<Stage> = serde_json::from_str(get("stages")?)?;
        let mut model = Self::new(&cfg);
        model.stages_done = stages;
        let st = SafeTensors::deserialize(bytes).map_err(ck)?;
        if st.len() != model.store.len() {
            return Err(OtvmError::Checkpoint(format!(
                "{} tensors stored, model has {}",
                st.len(),
                model.store.len()
            )));
        }
        for id in 0..model.store.len() {
            let name = model.store.entry(id).name.clone();
            let view = st
                .tensor(&name)
                .map_err(|e| OtvmError::Checkpoint(format!("{name}: {e:?}")))?;
            if view.dtype() != Dtype::F64 || view.shape() != model.store.get(id).shape() {
                return Err(OtvmError::Checkpoint(format!(
                    "{name}: dtype or shape mismatch"
                )));
            }
            let data: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.store.get_mut(id).data_mut().copy_from_slice(&data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Rewrite the JSON header with sorted keys so identical weights give
/// identical bytes (the metadata map iterates in random order).
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = || OtvmError::Checkpoint("malformed header".into());
    let n = u64::from_le_bytes(
        bytes
            .get(..8)
            .ok_or_else(bad)?
            .try_into()
            .map_err(|_| bad())?,
    ) as usize;
    let header: serde_json::Value = serde_json::from_slice(bytes.get(8..8 + n).ok_or_else(bad)?)?;
    let mut text = serde_json::to_string(&header)?.into_bytes();
    text.resize(text.len().div_ceil(8) * 8, b' ');
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_round_trips() {
        let cfg = ModelConfig::toy();
        let a = Otvm::new(&cfg);
        let b = Otvm::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a.store.len(), b.store.len());
        for id in 0..a.store.len() {
            assert_eq!(a.store.get(id), b.store.get(id));
        }
        assert_eq!(a.cfg, b.cfg);
    }

    #[test]
    fn corrupted_archive_rejected() {
        let a = Otvm::new(&ModelConfig::toy());
        let mut bytes = a.to_bytes().unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(Otvm::from_bytes(&bytes).is_err());
    }
}
