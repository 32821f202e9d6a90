//! Trained-model container.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "format": "ptl-checkpoint/1",
//!   "seed": 0,
//!   "config": { ...every TrainConfig field... },
//!   "parameter_sets": [ { "delta", "alpha", "beta", "gamma", "omega", "x0" }, ... ],
//!   "net": {
//!     "spec": { "layer_widths": [...], "m": 2, "h": 256 },
//!     "trunk": { "weights": [array...], "biases": [array...] },
//!     "heads": [array...]
//!   },
//!   "final_loss": 1.2e-5
//! }
//! ```
//!
//! Arrays use ndarray's serde form `{"v": 1, "dim": [..], "data": [..]}` with
//! row-major data. Weight matrices are `out x in`. The last trunk layer has
//! `m * h` outputs, read row-major into `H` (`H[r, c] = a[r * h + c]`).
//! Floats are written with round-trip precision, so a reload is bitwise exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::MultiHeadNet;
use crate::ode::DuffingParams;
use crate::training::{TrainConfig, TrainOutcome};
use crate::transfer::FrozenTrunk;

pub const FORMAT_TAG: &str = "ptl-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub parameter_sets: Vec<DuffingParams>,
    pub net: MultiHeadNet,
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, parameter_sets: Vec<DuffingParams>, outcome: &TrainOutcome) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            seed: config.seed,
            config,
            parameter_sets,
            net: outcome.net.clone(),
            final_loss: outcome.final_loss(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag {:?} (expected {FORMAT_TAG:?})",
                self.format
            )));
        }
        self.net.spec.validate()?;
        self.net.trunk.check_shapes(&self.net.spec)?;
        if let Some(w) = self.net.heads.iter().find(|w| w.len() != self.net.spec.h) {
            return Err(Error::Checkpoint(format!(
                "head has {} weights, trunk width is {}",
                w.len(),
                self.net.spec.h
            )));
        }
        if self.parameter_sets.len() != self.net.heads.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter sets for {} heads",
                self.parameter_sets.len(),
                self.net.heads.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT_TAG) => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format tag {other:?} (expected {FORMAT_TAG:?})"
                )))
            }
            None => return Err(Error::Checkpoint("missing format tag".into())),
        }
        let ckpt: Self = serde_json::from_value(value)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    /// Frozen trunk on `n` uniform points over the training domain.
    pub fn frozen_trunk(&self, n: usize) -> Result<FrozenTrunk> {
        FrozenTrunk::on_uniform_grid(
            self.net.spec.clone(),
            self.net.trunk.clone(),
            self.config.t_lo,
            self.config.t_hi,
            n,
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{MultiHeadNet, TrunkSpec};
    use crate::training::{sample_parameter_sets, stream_rng, TrainStatus};

    fn tiny() -> Checkpoint {
        let config = TrainConfig {
            heads: 2,
            layer_widths: vec![5, 6],
            hidden_columns: 3,
            ..Default::default()
        };
        let spec = TrunkSpec::new(config.layer_widths.clone(), 2, 3).unwrap();
        let net = MultiHeadNet::init(spec, 2, &mut stream_rng(1, 1)).unwrap();
        let outcome = TrainOutcome {
            net,
            history: vec![],
            status: TrainStatus::Completed,
        };
        let sets = sample_parameter_sets(&config);
        Checkpoint::new(config, sets, &outcome)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ckpt = tiny();
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.hash().unwrap(), ckpt.hash().unwrap());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.json");
        let ckpt = tiny();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert!(matches!(Checkpoint::load(&dir.path().join("missing.json")), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_wrong_tag_and_shapes() {
        let mut ckpt = tiny();
        ckpt.format = "ptl-checkpoint/0".into();
        let text = serde_json::to_string(&ckpt).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Checkpoint(_))));

        let mut ckpt = tiny();
        ckpt.net.heads.pop();
        assert!(Checkpoint::from_json(&serde_json::to_string(&ckpt).unwrap()).is_err());

        let mut ckpt = tiny();
        ckpt.net.trunk.weights[1] = ndarray::Array2::zeros((2, 2));
        assert!(Checkpoint::from_json(&serde_json::to_string(&ckpt).unwrap()).is_err());
    }

    #[test]
    fn hash_depends_on_content() {
        let a = tiny();
        let mut b = tiny();
        b.net.heads[0].0[0] += 1e-12;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
