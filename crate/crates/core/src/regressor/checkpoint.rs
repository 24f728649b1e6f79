//! Versioned JSON checkpoint format for regressor parameters. Tensors are
//! shape-tagged f64 arrays; the config travels with the weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::regressor::model::RegressorParams;
use crate::regressor::RegressorError;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: RegressorParams,
}

pub fn save(path: &Path, params: &RegressorParams) -> Result<(), RegressorError> {
    let checkpoint = Checkpoint { format_version: FORMAT_VERSION, params: params.clone() };
    let json = serde_json::to_string(&checkpoint)
        .map_err(|e| RegressorError::Checkpoint(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RegressorParams, RegressorError> {
    let json = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint =
        serde_json::from_str(&json).map_err(|e| RegressorError::Checkpoint(e.to_string()))?;
    if checkpoint.format_version != FORMAT_VERSION {
        return Err(RegressorError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            checkpoint.format_version
        )));
    }
    checkpoint.params.config.validate()?;
    Ok(checkpoint.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::model::RegressorConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip_is_exact() {
        let config = RegressorConfig { d: 16, heads: 2, ffn_dim: 16, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = RegressorParams::init(&config, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&path, &params).unwrap();
        let loaded = load(&path).unwrap();
        for ((na, ta), (nb, tb)) in params.tensors().iter().zip(loaded.tensors()) {
            assert_eq!(na, &nb);
            assert_eq!(ta, &tb, "tensor {na} changed in round trip");
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"format_version\":99,\"params\":{}}").unwrap();
        assert!(load(&path).is_err());
    }
}
