//! Parameter checkpoints as JSON: the model configuration plus every tensor
//! with its name, shape and values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::{DsHgcn, ModelConfig, ModelParams};
use crate::numerics::Matrix;

pub const FORMAT: &str = "dshgcn-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub params: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(model: &ModelConfig, params: &ModelParams<Matrix>) -> Self {
        Self {
            format: FORMAT.into(),
            model: model.clone(),
            params: params
                .entries()
                .into_iter()
                .map(|(name, _, m)| TensorRecord { name, rows: m.rows(), cols: m.cols(), values: m.data().to_vec() })
                .collect(),
        }
    }

    /// Rebuilds the model and checks every tensor's name and shape.
    pub fn restore(&self) -> Result<(DsHgcn, ModelParams<Matrix>)> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        let model = DsHgcn::new(self.model.clone())?;
        let mut params = model.init_params(0);
        let names: Vec<String> = params.entries().into_iter().map(|(n, _, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", names.len(), self.params.len())));
        }
        for ((slot, name), record) in params.values_mut().into_iter().zip(&names).zip(&self.params) {
            if &record.name != name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", record.name)));
            }
            if (record.rows, record.cols) != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: configuration implies shape {:?}, stored shape is {:?}",
                    slot.shape(),
                    (record.rows, record.cols)
                )));
            }
            *slot = Matrix::from_vec(record.rows, record.cols, record.values.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok((model, params))
    }

    /// Checks that a dataset can be fed to this checkpoint.
    pub fn check_compatible(&self, manifest: &DatasetManifest) -> Result<()> {
        let m = &self.model;
        let mismatch = |what: &str, ckpt: usize, data: usize| {
            Err(Error::Checkpoint(format!("{what}: checkpoint has {ckpt}, dataset has {data}")))
        };
        if m.dims != manifest.dims() {
            return Err(Error::Checkpoint(format!(
                "feature dimensions: checkpoint has {:?}, dataset has {:?}",
                m.dims,
                manifest.dims()
            )));
        }
        if m.students != manifest.students_per_snapshot {
            return mismatch("students per snapshot", m.students, manifest.students_per_snapshot);
        }
        if m.classes != manifest.n_classes {
            return mismatch("classes", m.classes, manifest.n_classes);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FeatureDims;
    use crate::hypergraph::AttentionMode;
    use crate::model::Ablation;

    fn config() -> ModelConfig {
        ModelConfig {
            dims: FeatureDims { emotional: 3, attentional: 2, upper_body: 2 },
            hidden: 4,
            students: 2,
            max_students: 4,
            classes: 2,
            hyper_layers: 2,
            freq_layers: 1,
            attention: AttentionMode::PerLayer,
            ablation: Ablation::None,
        }
    }

    #[test]
    fn save_load_restore_is_exact() {
        let model = DsHgcn::new(config()).unwrap();
        let params = model.init_params(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::new(&config(), &params).save(&path).unwrap();
        let (_, restored) = Checkpoint::load(&path).unwrap().restore().unwrap();
        assert_eq!(restored, params);
    }

    #[test]
    fn hidden_width_mismatch_is_rejected() {
        let params = DsHgcn::new(config()).unwrap().init_params(0);
        let mut ckpt = Checkpoint::new(&config(), &params);
        ckpt.model.hidden = 5;
        let err = ckpt.restore().unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn renamed_or_truncated_tensors_are_rejected() {
        let params = DsHgcn::new(config()).unwrap().init_params(0);
        let mut ckpt = Checkpoint::new(&config(), &params);
        ckpt.params[0].name = "other".into();
        assert!(ckpt.restore().is_err());
        let mut ckpt = Checkpoint::new(&config(), &params);
        ckpt.params.pop();
        assert!(ckpt.restore().is_err());
        let mut ckpt = Checkpoint::new(&config(), &params);
        ckpt.params[3].values.pop();
        assert!(ckpt.restore().is_err());
    }
}
