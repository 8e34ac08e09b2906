use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::InferenceMode;
use crate::physics::{GrfSpectrum, SpectralProfile};
use crate::score::{ConvConfig, GridConfig, ModelConfig};
use crate::training::{LossKind, Phase, TrainPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ToySde,
    AffineSde,
    HeatEquation,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ToySde => "toy-sde",
            ExperimentKind::AffineSde => "affine-sde",
            ExperimentKind::HeatEquation => "heat-equation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyParams {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self { lambda1: 7.0, lambda2: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineParams {
    pub lambda: f64,
    pub g: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self { lambda: 0.5, g: 0.04 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatParams {
    pub size: usize,
    pub alpha: f64,
    pub g: f64,
    pub profile: SpectralProfile,
    pub grf_exponent: f64,
    pub grf_spectrum: GrfSpectrum,
    /// Drop the reverse physics step so the score learns the whole update.
    pub score_only: bool,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            size: 16,
            alpha: 1.0,
            g: 0.1,
            profile: SpectralProfile::PaperLiteral,
            grf_exponent: 4.0,
            grf_spectrum: GrfSpectrum::PowerLaw,
            score_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SystemParams {
    pub toy: ToyParams,
    pub affine: AffineParams,
    pub heat: HeatParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub trajectories: usize,
    /// Leading fraction of the trajectories used for training.
    pub fraction: f64,
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
    /// Held-out trajectories for reconstruction metrics.
    pub test_trajectories: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { trajectories: 2500, fraction: 1.0, t0: 0.0, dt: 0.02, steps: 500, test_trajectories: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    pub modes: Vec<InferenceMode>,
    /// Score multiplier for SDE inference; the mode default when unset.
    pub c: Option<f64>,
    /// Trajectories inferred per mode.
    pub samples: usize,
    /// End states are spread uniformly over this interval (1D systems).
    pub x_end_range: [f64; 2],
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            modes: vec![InferenceMode::Ode, InferenceMode::Sde],
            c: None,
            samples: 1000,
            x_end_range: [-0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub q_tolerance: f64,
    /// Trajectories leaving this interval count as escaped.
    pub escape_box: [f64; 2],
    /// Samples per evaluation time for the score-field error.
    pub score_samples: usize,
    /// Spacing of the evaluation times for the score-field error.
    pub score_time_step: f64,
    /// Reverse-physics-only inversion and the score-only variant are
    /// reported next to the model for the heat experiment.
    pub baselines: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            q_tolerance: crate::metrics::Q_TOLERANCE,
            escape_box: [-1.25, 1.25],
            score_samples: 20,
            score_time_step: 0.1,
            baselines: true,
        }
    }
}

/// A complete experiment description; one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub system: SystemParams,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub inference: InferenceSettings,
    pub eval: EvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(ExperimentKind::ToySde, LossKind::MultiStep, false)
    }
}

impl ExperimentConfig {
    /// Documented defaults for an experiment and loss, at reduced or full scale.
    pub fn preset(kind: ExperimentKind, loss: LossKind, paper_scale: bool) -> Self {
        let (data, model, inference) = match kind {
            ExperimentKind::ToySde => (DataConfig::default(), ModelConfig::Mlp, InferenceSettings::default()),
            ExperimentKind::AffineSde => (
                DataConfig { trajectories: 1000, dt: 0.05, steps: 200, ..DataConfig::default() },
                ModelConfig::Mlp,
                InferenceSettings { modes: vec![], ..InferenceSettings::default() },
            ),
            ExperimentKind::HeatEquation => {
                let size = if paper_scale { 32 } else { 16 };
                let conv = if paper_scale { ConvConfig::paper_scale(size) } else { ConvConfig { size, ..ConvConfig::default() } };
                (
                    DataConfig {
                        trajectories: if paper_scale { 2500 } else { 250 },
                        dt: 0.2 / 32.0,
                        steps: 32,
                        test_trajectories: if paper_scale { 500 } else { 50 },
                        ..DataConfig::default()
                    },
                    ModelConfig::Conv(conv),
                    InferenceSettings { samples: 0, ..InferenceSettings::default() },
                )
            }
        };
        let mut system = SystemParams::default();
        system.heat.size = if paper_scale { 32 } else { 16 };
        Self {
            experiment: kind,
            seed: 0,
            system,
            data,
            model,
            train: default_plan(kind, loss, paper_scale),
            inference,
            eval: EvalSettings::default(),
        }
    }

    /// Preset with the GRID model in place of the MLP.
    pub fn grid_preset(loss: LossKind, paper_scale: bool) -> Self {
        let mut c = Self::preset(ExperimentKind::ToySde, loss, paper_scale);
        c.model = ModelConfig::Grid(GridConfig::default());
        c.train = grid_plan(loss, paper_scale);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        if !(d.fraction > 0.0 && d.fraction <= 1.0) {
            return Err(Error::Config(format!("data.fraction must lie in (0, 1], got {}", d.fraction)));
        }
        if !(d.dt > 0.0) || d.steps == 0 || d.trajectories == 0 {
            return Err(Error::Config("data needs dt > 0, steps >= 1 and trajectories >= 1".into()));
        }
        if self.experiment == ExperimentKind::HeatEquation {
            let size = self.system.heat.size;
            if let ModelConfig::Conv(c) = &self.model {
                if c.size != size {
                    return Err(Error::Config(format!("model.size {} differs from system.heat.size {size}", c.size)));
                }
            }
            if d.test_trajectories == 0 {
                return Err(Error::Config("heat experiment needs data.test_trajectories >= 1".into()));
            }
        } else if matches!(self.model, ModelConfig::Conv(_)) {
            return Err(Error::Config("conv model needs the heat experiment".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_json(v: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&v, &cfg.to_json(), "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides; keys are dotted paths into the JSON
    /// document, with numeric segments indexing arrays. Values parse as JSON
    /// and fall back to plain strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut doc = self.to_json();
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        Self::from_json(doc)
    }

    /// SHA-256 of the canonical JSON of `parts` of this config.
    pub fn hash_of(&self, parts: &[&str]) -> String {
        let doc = self.to_json();
        let mut h = Sha256::new();
        for p in parts {
            h.update(p.as_bytes());
            h.update(doc.get(*p).map(|v| v.to_string()).unwrap_or_default().as_bytes());
        }
        hex(&h.finalize())
    }

    /// Hash of everything that determines the dataset.
    pub fn data_hash(&self) -> String {
        self.hash_of(&["experiment", "seed", "system", "data"])
    }

    /// Hash of everything that determines the trained model.
    pub fn train_hash(&self) -> String {
        self.hash_of(&["experiment", "seed", "system", "data", "model", "train"])
    }

    /// Hash of the whole config.
    pub fn config_hash(&self) -> String {
        self.hash_of(&["experiment", "seed", "system", "data", "model", "train", "inference", "eval"])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the dotted paths of object keys in `input` that `parsed` lacks.
fn unknown_keys(input: &Value, parsed: &Value, prefix: &str, out: &mut Vec<String>) {
    match (input, parsed) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get(k) {
                    Some(w) => unknown_keys(v, w, &path, out),
                    None => out.push(path),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                unknown_keys(v, w, &format!("{prefix}.{i}"), out);
            }
        }
        _ => {}
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let segs: Vec<&str> = key.split('.').collect();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::Config(format!("`{seg}` in `{key}` must index an array")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} in `{key}` out of range ({len} items)")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                match cur {
                    Value::Object(map) => {
                        if last {
                            map.insert(seg.to_string(), value);
                            return Ok(());
                        }
                        map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
                    }
                    _ => unreachable!(),
                }
            }
            _ => return Err(Error::Config(format!("`{key}` descends into a scalar at `{seg}`"))),
        };
    }
    Err(Error::Config("empty override key".into()))
}

/// Training schedule for an experiment and loss.
pub fn default_plan(kind: ExperimentKind, loss: LossKind, paper_scale: bool) -> TrainPlan {
    let phases = match (kind, paper_scale) {
        (ExperimentKind::ToySde, true) => toy_paper_phases(loss),
        (ExperimentKind::ToySde, false) => toy_desk_phases(loss),
        (ExperimentKind::AffineSde, _) => vec![
            Phase { epochs: if paper_scale { 500 } else { 60 }, lr: 1e-3, batch: 256, ..Phase::default() },
            Phase { epochs: if paper_scale { 500 } else { 30 }, lr: 1e-4, batch: 256, ..Phase::default() },
        ],
        (ExperimentKind::HeatEquation, _) => heat_phases(loss, 32, paper_scale),
    };
    TrainPlan {
        loss,
        phases,
        time_jitter: kind == ExperimentKind::HeatEquation,
        ..TrainPlan::default()
    }
}

fn toy_paper_phases(loss: LossKind) -> Vec<Phase> {
    match loss {
        LossKind::MultiStep => vec![
            Phase { epochs: 1000, lr: 1e-3, batch: 512, stride: 5, ..Phase::default() },
            Phase { epochs: 9000, lr: 1e-4, batch: 512, window: 2, window_max: Some(10), window_every: 1000, ..Phase::default() },
        ],
        LossKind::Ism | LossKind::SsmVr => vec![
            Phase { epochs: 2000, lr: 1e-3, batch: 10_000, ..Phase::default() },
            Phase { epochs: 2000, lr: 1e-4, batch: 10_000, ..Phase::default() },
        ],
        _ => vec![
            Phase { epochs: 250, lr: 1e-3, batch: 256, stride: 5, ..Phase::default() },
            Phase { epochs: 250, lr: 1e-4, batch: 256, ..Phase::default() },
            Phase { epochs: 750, lr: 1e-5, batch: 256, ..Phase::default() },
        ],
    }
}

fn toy_desk_phases(loss: LossKind) -> Vec<Phase> {
    let refine = |window_max: Option<usize>| Phase {
        epochs: 45,
        lr: 1e-4,
        batch: 512,
        window: 2,
        window_max,
        window_every: 5,
        lr_decay: 0.4,
        lr_decay_every: 15,
        windows_per_epoch: Some(150_000),
        ..Phase::default()
    };
    let coarse = Phase { epochs: 150, lr: 1e-3, batch: 512, stride: 5, ..Phase::default() };
    match loss {
        LossKind::MultiStep => vec![coarse, refine(Some(10))],
        LossKind::Ism | LossKind::SsmVr => vec![
            Phase { epochs: 60, lr: 1e-3, batch: 2000, windows_per_epoch: Some(100_000), ..Phase::default() },
            Phase { epochs: 60, lr: 1e-4, batch: 2000, windows_per_epoch: Some(100_000), ..Phase::default() },
        ],
        _ => vec![coarse, refine(None)],
    }
}

/// GRID schedules: cells only learn where data passes, so every epoch
/// covers the full dataset.
fn grid_plan(loss: LossKind, paper_scale: bool) -> TrainPlan {
    let scale = if paper_scale { 4 } else { 1 };
    let phases = match loss {
        LossKind::MultiStep => vec![
            Phase { epochs: 20 * scale, lr: 1e-2, batch: 512, ..Phase::default() },
            Phase { epochs: 18 * scale, lr: 1e-3, batch: 512, window: 2, window_max: Some(10), window_every: 2 * scale, ..Phase::default() },
        ],
        _ => vec![
            Phase { epochs: 20 * scale, lr: 1e-2, batch: 512, ..Phase::default() },
            Phase { epochs: 18 * scale, lr: 1e-3, batch: 512, ..Phase::default() },
        ],
    };
    TrainPlan { loss, phases, ..TrainPlan::default() }
}

/// Heat schedule: windows grow from 6 to `s_max` in steps of 2 every two
/// epochs, then a finetuning phase with halving learning rate.
pub fn heat_phases(loss: LossKind, s_max: usize, paper_scale: bool) -> Vec<Phase> {
    let cap = if paper_scale { None } else { Some(64) };
    let (grow, finetune) = if paper_scale { (2, 80) } else { (2, 40) };
    match loss {
        LossKind::MultiStep => {
            let start = 6.min(s_max);
            let growth = (s_max - start).div_ceil(2) * grow + grow;
            vec![
                Phase {
                    epochs: growth,
                    lr: 1e-4,
                    batch: 16,
                    window: start,
                    window_max: Some(s_max),
                    window_step: 2,
                    window_every: grow,
                    windows_per_epoch: cap,
                    ..Phase::default()
                },
                Phase {
                    epochs: finetune,
                    lr: 1e-4,
                    batch: 16,
                    window: s_max,
                    lr_decay: 0.5,
                    lr_decay_every: finetune / 4,
                    windows_per_epoch: cap,
                    ..Phase::default()
                },
            ]
        }
        _ => vec![Phase {
            epochs: finetune,
            lr: 1e-4,
            batch: 16,
            lr_decay: 0.5,
            lr_decay_every: finetune / 4,
            windows_per_epoch: cap.map(|c| c * 8),
            ..Phase::default()
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = ExperimentConfig::default();
        let o = c
            .with_overrides(&[
                "seed=7".into(),
                "data.fraction=0.1".into(),
                "train.phases.1.epochs=3".into(),
                "inference.modes=[\"ode\"]".into(),
                "train.loss=one-step".into(),
            ])
            .unwrap();
        assert_eq!(o.seed, 7);
        assert_eq!(o.data.fraction, 0.1);
        assert_eq!(o.train.phases[1].epochs, 3);
        assert_eq!(o.inference.modes, vec![InferenceMode::Ode]);
        assert_eq!(o.train.loss, LossKind::OneStep);
        assert!(c.with_overrides(&["seed".into()]).is_err());
        assert!(c.with_overrides(&["train.phases.9.epochs=1".into()]).is_err());
        assert!(c.with_overrides(&["seed=\"x\"".into()]).is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let c = ExperimentConfig::default();
        for key in ["bogus=1", "data.trajectory=5", "train.phases.0.epoch=2", "model.width=3"] {
            assert!(matches!(c.with_overrides(&[key.into()]), Err(Error::Config(_))), "{key}");
        }
        let grid = c.with_overrides(&["model={\"kind\": \"grid\", \"t_cells\": 4}".into()]);
        assert!(grid.is_ok(), "{grid:?}");
    }

    #[test]
    fn hashes_separate_stages() {
        let a = ExperimentConfig::default();
        let b = a.with_overrides(&["inference.samples=10".into()]).unwrap();
        assert_eq!(a.data_hash(), b.data_hash());
        assert_eq!(a.train_hash(), b.train_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        let c = a.with_overrides(&["train.phases.0.lr=0.5".into()]).unwrap();
        assert_eq!(a.data_hash(), c.data_hash());
        assert_ne!(a.train_hash(), c.train_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in [ExperimentKind::ToySde, ExperimentKind::AffineSde, ExperimentKind::HeatEquation] {
            for loss in [LossKind::OneStep, LossKind::MultiStep, LossKind::Ism] {
                for paper in [false, true] {
                    let c = ExperimentConfig::preset(kind, loss, paper);
                    c.validate().unwrap();
                    assert_eq!(ExperimentConfig::from_json(c.to_json()).unwrap(), c);
                }
            }
        }
        ExperimentConfig::grid_preset(LossKind::MultiStep, false).validate().unwrap();
        let heat = ExperimentConfig::preset(ExperimentKind::HeatEquation, LossKind::MultiStep, false);
        assert_eq!(heat.train.phases[0].window_at(0), 6);
        assert_eq!(heat.train.phases[0].window_at(heat.train.phases[0].epochs - 1), 32);
    }

    #[test]
    fn mismatched_sizes_are_config_errors() {
        let mut c = ExperimentConfig::preset(ExperimentKind::HeatEquation, LossKind::MultiStep, false);
        c.system.heat.size = 8;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut t = ExperimentConfig::default();
        t.data.fraction = 0.0;
        assert!(t.validate().is_err());
    }
}
