use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"SMDP";
pub const DATASET_VERSION: u32 = 1;

/// `N` trajectories of `steps + 1` states each, stored as `[N, M+1, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    grid: TimeGrid,
    states: Tensor,
    seed: u64,
    spec_name: String,
    spec_params: serde_json::Value,
}

/// Human-readable description written next to every binary container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub spec: String,
    pub params: serde_json::Value,
    pub trajectories: usize,
    pub steps: usize,
    pub dim: usize,
    pub t0: f64,
    pub dt: f64,
    pub seed: u64,
}

impl TrajectorySet {
    pub fn new(
        grid: TimeGrid,
        dim: usize,
        data: Vec<f64>,
        seed: u64,
        spec_name: String,
        spec_params: serde_json::Value,
    ) -> Result<Self> {
        let per = (grid.steps + 1) * dim;
        if dim == 0 || per == 0 || !data.len().is_multiple_of(per) || data.is_empty() {
            return Err(Error::invalid(format!(
                "{} values do not form whole trajectories of {} states x {dim}",
                data.len(),
                grid.steps + 1
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("trajectory data at flat index {i}")));
        }
        let n = data.len() / per;
        let states = Tensor::new(&[n, grid.steps + 1, dim], data)?;
        Ok(Self {
            grid,
            states,
            seed,
            spec_name,
            spec_params,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec_name(&self) -> &str {
        &self.spec_name
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    /// State `m` of trajectory `n`.
    pub fn state(&self, n: usize, m: usize) -> &[f64] {
        let d = self.dim();
        let off = (n * (self.grid.steps + 1) + m) * d;
        &self.states.data()[off..off + d]
    }

    pub fn trajectory(&self, n: usize) -> &[f64] {
        self.states.row(n)
    }

    /// The first `k` trajectories.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!("prefix of {k} from {} trajectories", self.len())));
        }
        Ok(Self {
            grid: self.grid,
            states: self.states.slice_rows(0, k),
            seed: self.seed,
            spec_name: self.spec_name.clone(),
            spec_params: self.spec_params.clone(),
        })
    }

    /// Prefix holding `fraction` of the trajectories, at least one.
    pub fn fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("dataset fraction {fraction} outside (0, 1]")));
        }
        let k = ((self.len() as f64 * fraction).round() as usize).max(1);
        self.prefix(k)
    }

    /// Keeps every `stride`-th time step, coarsening `dt` accordingly.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 || stride > self.grid.steps {
            return Err(Error::invalid(format!("subsample stride {stride}")));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..=self.grid.steps).step_by(stride).collect();
        let grid = TimeGrid::new(self.grid.t0, self.grid.dt * stride as f64, keep.len() - 1)?;
        let mut data = Vec::with_capacity(self.len() * keep.len() * self.dim());
        for n in 0..self.len() {
            for &m in &keep {
                data.extend_from_slice(self.state(n, m));
            }
        }
        Self::new(grid, self.dim(), data, self.seed, self.spec_name.clone(), self.spec_params.clone())
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            spec: self.spec_name.clone(),
            params: self.spec_params.clone(),
            trajectories: self.len(),
            steps: self.grid.steps,
            dim: self.dim(),
            t0: self.grid.t0,
            dt: self.grid.dt,
            seed: self.seed,
        }
    }

    /// Path of the JSON sidecar belonging to a container at `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn write_container<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        for v in [self.len(), self.grid.steps, self.dim()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.grid.t0.to_le_bytes())?;
        w.write_all(&self.grid.dt.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.states.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a container. Spec name and parameters are not part of the
    /// binary layout and come back empty; [`TrajectorySet::load`] restores
    /// them from the sidecar.
    pub fn read_container<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let n = read_u64(r)? as usize;
        let m = read_u64(r)? as usize;
        let d = read_u64(r)? as usize;
        let t0 = read_f64(r)?;
        let dt = read_f64(r)?;
        let seed = read_u64(r)?;
        let count = n
            .checked_mul(m + 1)
            .and_then(|v| v.checked_mul(d))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let grid = TimeGrid::new(t0, dt, m).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(grid, d, data, seed, String::new(), serde_json::Value::Null)
    }

    /// Writes the container and its sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_container(&mut w)?;
        w.flush()?;
        let side = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(Self::sidecar_path(path), side)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut set = Self::read_container(&mut BufReader::new(File::open(path)?))?;
        let side_path = Self::sidecar_path(path);
        if side_path.exists() {
            let side: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(side_path)?)?;
            if side.trajectories != set.len() || side.steps != set.steps() || side.dim != set.dim() {
                return Err(Error::Format("sidecar disagrees with container header".into()));
            }
            set.spec_name = side.spec;
            set.spec_params = side.params;
        }
        Ok(set)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
