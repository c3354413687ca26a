//! Run configuration: plain-text TOML with `[network]`, `[graph]`,
//! `[training]`, and `[data]` sections. The canonical serialized form (field
//! order of the structs below) is what checkpoint digests are computed over,
//! so reformatting or commenting a config file does not invalidate its
//! checkpoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::CellKind;
use crate::graph::ConnectionKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// How the per-joint groups are rewritten before the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    /// No recurrence: groups pass straight through (ablation baseline).
    Baseline,
    /// Plain recurrent update.
    Fb,
    /// Recurrent update with the context consistency gate.
    FbPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCfg {
    /// Input image height and width; must be 4x the feature extent.
    pub input: [usize; 2],
    /// Feature/heatmap height and width.
    pub features: [usize; 2],
    pub joints: usize,
    pub channels_per_joint: usize,
    /// Stack width the backbone emits; a 1x1 projection bridges it to
    /// `joints * channels_per_joint` when they differ.
    pub backbone_channels: usize,
    /// Width of the aggregated representation (and of the pyramid).
    pub agg_channels: usize,
    /// Hidden width of the heatmap head.
    pub head_channels: usize,
    #[serde(default = "default_stacks")]
    pub stacks: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// `convrnn`, `convgru`, or `convlstm`.
    #[serde(default = "default_cell")]
    pub cell: String,
    #[serde(default = "default_mode")]
    pub mode: BoostMode,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_omega_sq")]
    pub omega_sq: f64,
    /// Ground-truth heatmap spread, in heatmap pixels.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Heatmap pixels per normalized depth unit when forming 3D errors.
    #[serde(default = "default_depth_unit")]
    pub depth_unit: f64,
}

fn default_stacks() -> usize {
    2
}
fn default_kernel() -> usize {
    3
}
fn default_cell() -> String {
    "convlstm".into()
}
fn default_mode() -> BoostMode {
    BoostMode::FbPlus
}
fn default_gamma() -> f64 {
    0.1
}
fn default_omega_sq() -> f64 {
    2.0
}
fn default_sigma() -> f64 {
    1.0
}
fn default_depth_unit() -> f64 {
    8.0
}

impl NetworkCfg {
    /// The configured base cell. The gated variant is selected through
    /// `mode`, not spelled here.
    pub fn cell_kind(&self) -> Result<CellKind, ConfigError> {
        match CellKind::parse(&self.cell) {
            Some(CellKind::ConvLstmCcg) | None => Err(invalid(format!(
                "cell must be one of convrnn, convgru, convlstm; got `{}`",
                self.cell
            ))),
            Some(kind) => Ok(kind),
        }
    }

    /// Cell actually run by the boosting block under the configured mode.
    pub fn effective_kind(&self) -> Result<CellKind, ConfigError> {
        let base = self.cell_kind()?;
        match self.mode {
            BoostMode::FbPlus if base != CellKind::ConvLstm => Err(invalid(
                "mode fb_plus requires cell = \"convlstm\"".to_string(),
            )),
            BoostMode::FbPlus => Ok(CellKind::ConvLstmCcg),
            _ => Ok(base),
        }
    }

    pub fn grouped_channels(&self) -> usize {
        self.joints * self.channels_per_joint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphCfg {
    /// Shipped graph name (`body16`, `hand21`, `figure7`, ...) or a path to
    /// a graph config file.
    pub source: String,
    #[serde(default = "default_connection")]
    pub connection: String,
}

fn default_connection() -> String {
    "bidirectional".into()
}

impl GraphCfg {
    pub fn connection_kind(&self) -> Result<ConnectionKind, ConfigError> {
        ConnectionKind::parse(&self.connection)
            .ok_or_else(|| invalid(format!("unknown connection `{}`", self.connection)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingCfg {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Multiply the rate by `lr_decay` every this many steps; 0 disables.
    #[serde(default)]
    pub lr_decay_every: usize,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_lr_decay() -> f64 {
    1.0
}
fn default_log_every() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    /// Dataset root; `train/` and `test/` subdirectories live below it.
    #[serde(default = "default_dir")]
    pub dir: String,
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    /// Projection scale: figure units to pixels, as a fraction of the
    /// smaller image extent.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Half-range of the per-bone swing angles, radians.
    #[serde(default = "default_angle")]
    pub angle: f64,
    /// Root-relative depth is divided by this before storage.
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    /// Probability that one limb of a sample renders faint.
    #[serde(default = "default_faint_prob")]
    pub faint_prob: f64,
    /// Intensity multiplier for the faint limb.
    #[serde(default = "default_faint_level")]
    pub faint_level: f64,
    /// Half-range of the global translation, image pixels.
    #[serde(default = "default_translate")]
    pub translate: f64,
    /// Global scale is drawn from [1 - j, 1 + j].
    #[serde(default = "default_scale_jitter")]
    pub scale_jitter: f64,
    /// Half-range of the global rotation, radians.
    #[serde(default = "default_rotate")]
    pub rotate: f64,
    /// Background noise amplitude.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_dir() -> String {
    "data".into()
}
fn default_scale() -> f64 {
    0.3
}
fn default_angle() -> f64 {
    0.45
}
fn default_depth_scale() -> f64 {
    1.0
}
fn default_faint_prob() -> f64 {
    0.4
}
fn default_faint_level() -> f64 {
    0.22
}
fn default_translate() -> f64 {
    3.0
}
fn default_scale_jitter() -> f64 {
    0.1
}
fn default_rotate() -> f64 {
    0.35
}
fn default_noise() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub network: NetworkCfg,
    pub graph: GraphCfg,
    pub training: TrainingCfg,
    pub data: DataCfg,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Config, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; digests and checkpoints are computed over this,
    /// not the file the config was read from.
    pub fn to_text(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.network;
        if n.joints == 0 || n.channels_per_joint == 0 {
            return Err(invalid("joints and channels_per_joint must be positive"));
        }
        if n.backbone_channels == 0 || n.agg_channels == 0 || n.head_channels == 0 {
            return Err(invalid("channel widths must be positive"));
        }
        if n.stacks < 1 {
            return Err(invalid("stacks must be at least 1"));
        }
        if n.kernel == 0 || n.kernel % 2 == 0 {
            return Err(invalid(format!("kernel must be odd, got {}", n.kernel)));
        }
        for d in 0..2 {
            if n.features[d] == 0 || n.input[d] != n.features[d] * 4 {
                return Err(invalid(format!(
                    "input {:?} must be exactly 4x the feature extent {:?}",
                    n.input, n.features
                )));
            }
            if n.features[d] % 2 != 0 {
                return Err(invalid("feature extents must be even for the pyramid"));
            }
        }
        if n.gamma < 0.0 {
            return Err(invalid(format!("gamma must be non-negative, got {}", n.gamma)));
        }
        if !(n.omega_sq > 0.0) {
            return Err(invalid(format!("omega_sq must be positive, got {}", n.omega_sq)));
        }
        if !(n.sigma > 0.0) {
            return Err(invalid(format!("sigma must be positive, got {}", n.sigma)));
        }
        if !(n.depth_unit > 0.0) {
            return Err(invalid("depth_unit must be positive"));
        }
        n.effective_kind()?;
        self.graph.connection_kind()?;

        let t = &self.training;
        if t.steps == 0 || t.batch == 0 {
            return Err(invalid("steps and batch must be positive"));
        }
        if !(t.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", t.momentum)));
        }
        if !(t.lr_decay > 0.0) {
            return Err(invalid("lr_decay must be positive"));
        }
        if t.log_every == 0 {
            return Err(invalid("log_every must be positive"));
        }

        let d = &self.data;
        if !(d.scale > 0.0) {
            return Err(invalid("data scale must be positive"));
        }
        if !(d.depth_scale > 0.0) {
            return Err(invalid("depth_scale must be positive"));
        }
        if d.angle < 0.0 || d.translate < 0.0 || d.rotate < 0.0 || d.noise < 0.0 {
            return Err(invalid("data ranges must be non-negative"));
        }
        if !(0.0..=1.0).contains(&d.faint_prob) || d.faint_level < 0.0 {
            return Err(invalid("faint parameters out of range"));
        }
        if !(0.0..1.0).contains(&d.scale_jitter) {
            return Err(invalid("scale_jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Small seven-joint setup for overfit checks and fast local runs.
pub const DESK: &str = r#"
[network]
input = [48, 48]
features = [12, 12]
joints = 7
channels_per_joint = 4
backbone_channels = 28
agg_channels = 24
head_channels = 8
stacks = 2
mode = "fb_plus"
depth_unit = 6.0

[graph]
source = "figure7"
connection = "bidirectional"

[training]
steps = 2000
batch = 8
learning_rate = 0.5
init_seed = 101
shuffle_seed = 202

[data]
seed = 7
train = 8
test = 0
"#;

/// Benchmark setup for the directional comparisons: smaller maps, more
/// samples.
pub const BENCH: &str = r#"
[network]
input = [32, 32]
features = [8, 8]
joints = 7
channels_per_joint = 3
backbone_channels = 21
agg_channels = 16
head_channels = 6
stacks = 1
mode = "fb"
depth_unit = 4.0

[graph]
source = "figure7"
connection = "bidirectional"

[training]
steps = 600
batch = 8
learning_rate = 0.05
init_seed = 11
shuffle_seed = 22

[data]
seed = 70
train = 2000
test = 400
"#;

/// Full-scale shape preset: 256x256 input, 64x64x256 stack, 21 joints with
/// 16 channels each behind a 1x1 projection.
pub const FULL: &str = r#"
[network]
input = [256, 256]
features = [64, 64]
joints = 21
channels_per_joint = 16
backbone_channels = 256
agg_channels = 256
head_channels = 32
stacks = 2
mode = "fb_plus"
depth_unit = 32.0

[graph]
source = "hand21"
connection = "bidirectional"

[training]
steps = 10000
batch = 4
learning_rate = 0.01
init_seed = 1
shuffle_seed = 2

[data]
seed = 3
train = 2000
test = 400
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, text) in [("desk", DESK), ("bench", BENCH), ("full", FULL)] {
            let cfg = Config::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(cfg.network.stacks >= 1, "{name}");
        }
    }

    #[test]
    fn paper_defaults_apply() {
        let cfg = Config::parse(DESK).unwrap();
        assert_eq!(cfg.network.gamma, 0.1);
        assert_eq!(cfg.network.omega_sq, 2.0);
        assert_eq!(cfg.network.sigma, 1.0);
        assert_eq!(cfg.training.momentum, 0.9);
        let bench = Config::parse(BENCH).unwrap();
        assert_eq!(bench.network.stacks, 1);
    }

    #[test]
    fn full_preset_matches_reference_shapes() {
        let cfg = Config::parse(FULL).unwrap();
        assert_eq!(cfg.network.input, [256, 256]);
        assert_eq!(cfg.network.features, [64, 64]);
        assert_eq!(cfg.network.backbone_channels, 256);
        assert_eq!(cfg.network.grouped_channels(), 336);
    }

    #[test]
    fn canonical_text_round_trips() {
        let cfg = Config::parse(DESK).unwrap();
        let text = cfg.to_text().unwrap();
        let again = Config::parse(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_text().unwrap());
    }

    #[test]
    fn fb_plus_requires_convlstm() {
        let mut cfg = Config::parse(DESK).unwrap();
        cfg.network.cell = "convgru".into();
        let err = cfg.validate().map(|_| ()).unwrap_err();
        assert!(err.to_string().contains("fb_plus"));
        cfg.network.mode = BoostMode::Fb;
        cfg.validate().unwrap();
        assert_eq!(cfg.network.effective_kind().unwrap(), CellKind::ConvGru);
    }

    #[test]
    fn gated_token_rejected_as_cell() {
        let mut cfg = Config::parse(DESK).unwrap();
        cfg.network.cell = "convlstm_ccg".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mismatched_pyramid_rejected() {
        let mut cfg = Config::parse(DESK).unwrap();
        cfg.network.input = [48, 40];
        assert!(cfg.validate().is_err());
        cfg.network.input = [48, 48];
        cfg.network.features = [12, 10];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn negative_gamma_rejected() {
        let mut cfg = Config::parse(DESK).unwrap();
        cfg.network.gamma = -0.1;
        let err = cfg.validate().map(|_| ()).unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn unknown_section_field_rejected() {
        let text = DESK.replace("depth_unit = 6.0", "depth_unit = 6.0\nbogus = 1");
        assert!(Config::parse(&text).is_err());
    }
}
