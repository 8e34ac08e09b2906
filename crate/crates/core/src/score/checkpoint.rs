use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ScoreModel};
use crate::error::{Error, Result};
use crate::sde::dataset::{read_f64, read_u32, read_u64};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with enough metadata to rebuild the model.
///
/// Layout: magic, `u32` version, `u64` header length, JSON header, `u64`
/// parameter count, then the parameters as little-endian `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub dim: usize,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub step: u64,
    #[serde(skip)]
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn capture(model: &dyn ScoreModel, seed: u64, step: u64) -> Self {
        Self {
            model: model.config(),
            dim: model.dim(),
            shapes: model.params().shapes().to_vec(),
            seed,
            step,
            params: model.params().as_slice().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<Box<dyn ScoreModel>> {
        let m = self.model.with_params(self.dim, self.params.clone())?;
        if m.params().shapes() != self.shapes.as_slice() {
            return Err(Error::Format("checkpoint shapes do not match its model kind".into()));
        }
        Ok(m)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(self)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(r)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let mut ck: Checkpoint = serde_json::from_slice(&header)?;
        let n = read_u64(r)? as usize;
        let expected: usize = ck.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if n != expected {
            return Err(Error::Format(format!("{n} parameters stored, header describes {expected}")));
        }
        ck.params = (0..n).map(|_| read_f64(r)).collect::<Result<_>>()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
