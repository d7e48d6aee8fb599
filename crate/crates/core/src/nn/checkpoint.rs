use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, TrainedModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "canopy-network";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON container: header, layer parameters with batch-norm running
/// statistics, the training configuration (optimizer and seed) and history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(model: TrainedModel) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.to_string(), version: CHECKPOINT_VERSION, model }
    }

    fn check(self, origin: &str) -> Result<TrainedModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("{origin}: not a network checkpoint (format {:?})", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "{origin}: checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        // re-run structural validation on the deserialized layers
        Network::from_layers(self.model.network.layers().to_vec())?;
        Ok(self.model)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), &Checkpoint::new(model.clone()))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    ckpt.check(&path.display().to_string())
}
