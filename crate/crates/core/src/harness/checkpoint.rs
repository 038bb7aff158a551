//! Versioned JSON model checkpoints: parameter name -> shape + row-major
//! values, with the architecture config embedded.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::gnn::{GnnConfig, GnnModel};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: GnnConfig,
    params: BTreeMap<String, ParamEntry>,
}

pub fn save_checkpoint(model: &GnnModel, path: &Path) -> Result<()> {
    let params = model
        .export_params()
        .into_iter()
        .map(|(name, t)| {
            let shape = vec![t.nrows(), t.ncols()];
            let data = t.iter().cloned().collect();
            (name, ParamEntry { shape, data })
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: model.cfg().clone(),
        params,
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, &file)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GnnModel> {
    let r = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(r)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let mut params: HashMap<String, Tensor> = HashMap::new();
    for (name, entry) in file.params {
        if entry.shape.len() != 2 || entry.shape[0] * entry.shape[1] != entry.data.len() {
            return Err(Error::Config(format!("malformed checkpoint entry {name}")));
        }
        let t = Tensor::from_shape_vec((entry.shape[0], entry.shape[1]), entry.data)
            .map_err(|e| Error::Config(format!("entry {name}: {e}")))?;
        params.insert(name, t);
    }
    GnnModel::from_params(file.config, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_bitwise() {
        let cfg = GnnConfig {
            layers: 2,
            feat: 6,
            j_powers: 1,
            ..GnnConfig::default()
        };
        let model = GnnModel::new(cfg, 5).unwrap();
        let dir = std::env::temp_dir().join("qapmatch_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for (a, b) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(a, b);
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = std::env::temp_dir().join("qapmatch_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, r#"{"version":9,"config":{"layers":1,"feat":2,"j_powers":0,"input_feature":"degree","bn_mode":"batch_stats"},"params":{}}"#).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Config(_))));
        std::fs::remove_file(&path).unwrap();
    }
}
