//! Run configuration: flat `key = value` text with dotted section keys.
//!
//! A `#` starts a comment anywhere on a line; blank lines are skipped.
//! Unknown keys are hard errors so a typo can never silently fall back to
//! a default. Omitting `--config` entirely means "all defaults". The
//! effective configuration (after CLI overrides) has a canonical text
//! form whose SHA-256 lands in every run manifest, so two runs with the
//! same hash saw byte-for-byte the same settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use vecprobe::model::{HyperParams, TrainConfig};
use vecprobe::seeding::seed_stream;
use vecprobe::synth::{ScenarioKind, SynthSpec};

use crate::error::CliError;

/// Every key with its default, as accepted by the parser. Optional path
/// keys ship commented out because they default to unset.
pub const DEFAULT_CONFIG_TEXT: &str = "\
# vecprobe run configuration. `key = value` lines; `#` starts a comment;
# unknown keys are rejected.

seed = 0                        # root seed; every random stream derives from it
jobs = 0                        # worker-thread cap; 0 means all cores

# data.tracks = tracks.csv      # track table (required by ingest)
# data.map = map.json           # map polylines (required by ingest)
data.out = out                  # artifact directory
# data.dataset = out/dataset.json        # dataset cache; defaults to <out>/dataset.json
# data.checkpoint = out/checkpoint.json  # model checkpoint; defaults to <out>/checkpoint.json
# data.scenario = highway       # split name; defaults to the tracks file stem
data.split_fraction = 0.2       # held-out fraction of case ids

horizons.t_h = 10               # observed frames per case
horizons.t_f = 30               # predicted frames per case
horizons.hz = 10                # frame rate; only 10 is supported
horizons.stride = 10            # case window stride, frames

model.hidden = 64               # encoder width
model.layers = 3                # subgraph layers
model.heads = 1                 # attention heads; only 1 is supported
model.layer_norm = true
model.max_seg_len = 2.0         # map chord cap, meters

train.batch_size = 64
train.initial_lr = 0.001
train.lr_decay_factor = 0.3
train.decay_every_epochs = 5
train.epochs = 30

attribution.sigma = 10.0        # baseline noise standard deviation
attribution.steps = 64          # integration steps
attribution.cases = 8           # test cases dumped by `attribute`

sweep.sigmas = 0,10,20,30,40,50
sweep.cases = 32                # test cases scored per sweep point

synth.kind = straight-lane      # straight-lane | curved-lane | merge | crossing
synth.agents = 3                # agents per episode
synth.speed_min = 3.0
synth.speed_max = 8.0
synth.duration = 60             # frames per episode
synth.noise_std = 0.1           # positional noise, meters
synth.episodes = 8

# cross.scenarios = runs/a,runs/b  # dirs each holding tracks.csv + map.json
cross.seeds = 0                 # training seeds averaged in the cross matrix

render.cases = 0                # test-split indices drawn by `render`
";

/// Untyped `key = value` pairs straight off the file.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got {:?}",
                    idx + 1,
                    raw_line.trim()
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", idx + 1)));
            }
            if value.is_empty() {
                return Err(CliError::Config(format!(
                    "line {}: key {key:?} has an empty value; delete the line to use the default",
                    idx + 1
                )));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Fully typed, validated settings for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub tracks: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scenario: Option<String>,
    pub split_fraction: f64,
    pub t_h: usize,
    pub t_f: usize,
    pub hz: usize,
    pub stride: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub layer_norm: bool,
    pub max_seg_len: f64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_every_epochs: usize,
    pub epochs: usize,
    pub sigma: f64,
    pub steps: usize,
    pub attribution_cases: usize,
    pub sweep_sigmas: Vec<f64>,
    pub sweep_cases: usize,
    pub synth_kind: ScenarioKind,
    pub synth_agents: usize,
    pub synth_speed_min: f64,
    pub synth_speed_max: f64,
    pub synth_duration: usize,
    pub synth_noise_std: f64,
    pub synth_episodes: usize,
    pub cross_scenarios: Vec<PathBuf>,
    pub cross_seeds: Vec<u64>,
    pub render_cases: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            tracks: None,
            map: None,
            out: PathBuf::from("out"),
            dataset: None,
            checkpoint: None,
            scenario: None,
            split_fraction: 0.2,
            t_h: 10,
            t_f: 30,
            hz: 10,
            stride: 10,
            hidden: 64,
            layers: 3,
            heads: 1,
            layer_norm: true,
            max_seg_len: 2.0,
            batch_size: 64,
            initial_lr: 0.001,
            lr_decay_factor: 0.3,
            decay_every_epochs: 5,
            epochs: 30,
            sigma: 10.0,
            steps: 64,
            attribution_cases: 8,
            sweep_sigmas: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            sweep_cases: 32,
            synth_kind: ScenarioKind::StraightLane,
            synth_agents: 3,
            synth_speed_min: 3.0,
            synth_speed_max: 8.0,
            synth_duration: 60,
            synth_noise_std: 0.1,
            synth_episodes: 8,
            cross_scenarios: Vec::new(),
            cross_seeds: vec![0],
            render_cases: vec![0],
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::Config(format!("key {key:?}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|item| parse_as::<T>(key, item.trim()))
        .collect()
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let mut entries = raw.entries;
        let mut cfg = RunConfig::default();
        // Scalar settings, consumed one key at a time; whatever remains
        // afterwards is by definition unknown.
        if let Some(v) = entries.remove("seed") {
            cfg.seed = parse_as("seed", &v)?;
        }
        if let Some(v) = entries.remove("jobs") {
            cfg.jobs = parse_as("jobs", &v)?;
        }
        if let Some(v) = entries.remove("data.tracks") {
            cfg.tracks = Some(PathBuf::from(v));
        }
        if let Some(v) = entries.remove("data.map") {
            cfg.map = Some(PathBuf::from(v));
        }
        if let Some(v) = entries.remove("data.out") {
            cfg.out = PathBuf::from(v);
        }
        if let Some(v) = entries.remove("data.dataset") {
            cfg.dataset = Some(PathBuf::from(v));
        }
        if let Some(v) = entries.remove("data.checkpoint") {
            cfg.checkpoint = Some(PathBuf::from(v));
        }
        if let Some(v) = entries.remove("data.scenario") {
            cfg.scenario = Some(v);
        }
        if let Some(v) = entries.remove("data.split_fraction") {
            cfg.split_fraction = parse_as("data.split_fraction", &v)?;
        }
        if let Some(v) = entries.remove("horizons.t_h") {
            cfg.t_h = parse_as("horizons.t_h", &v)?;
        }
        if let Some(v) = entries.remove("horizons.t_f") {
            cfg.t_f = parse_as("horizons.t_f", &v)?;
        }
        if let Some(v) = entries.remove("horizons.hz") {
            cfg.hz = parse_as("horizons.hz", &v)?;
        }
        if let Some(v) = entries.remove("horizons.stride") {
            cfg.stride = parse_as("horizons.stride", &v)?;
        }
        if let Some(v) = entries.remove("model.hidden") {
            cfg.hidden = parse_as("model.hidden", &v)?;
        }
        if let Some(v) = entries.remove("model.layers") {
            cfg.layers = parse_as("model.layers", &v)?;
        }
        if let Some(v) = entries.remove("model.heads") {
            cfg.heads = parse_as("model.heads", &v)?;
        }
        if let Some(v) = entries.remove("model.layer_norm") {
            cfg.layer_norm = parse_as("model.layer_norm", &v)?;
        }
        if let Some(v) = entries.remove("model.max_seg_len") {
            cfg.max_seg_len = parse_as("model.max_seg_len", &v)?;
        }
        if let Some(v) = entries.remove("train.batch_size") {
            cfg.batch_size = parse_as("train.batch_size", &v)?;
        }
        if let Some(v) = entries.remove("train.initial_lr") {
            cfg.initial_lr = parse_as("train.initial_lr", &v)?;
        }
        if let Some(v) = entries.remove("train.lr_decay_factor") {
            cfg.lr_decay_factor = parse_as("train.lr_decay_factor", &v)?;
        }
        if let Some(v) = entries.remove("train.decay_every_epochs") {
            cfg.decay_every_epochs = parse_as("train.decay_every_epochs", &v)?;
        }
        if let Some(v) = entries.remove("train.epochs") {
            cfg.epochs = parse_as("train.epochs", &v)?;
        }
        if let Some(v) = entries.remove("attribution.sigma") {
            cfg.sigma = parse_as("attribution.sigma", &v)?;
        }
        if let Some(v) = entries.remove("attribution.steps") {
            cfg.steps = parse_as("attribution.steps", &v)?;
        }
        if let Some(v) = entries.remove("attribution.cases") {
            cfg.attribution_cases = parse_as("attribution.cases", &v)?;
        }
        if let Some(v) = entries.remove("sweep.sigmas") {
            cfg.sweep_sigmas = parse_list("sweep.sigmas", &v)?;
        }
        if let Some(v) = entries.remove("sweep.cases") {
            cfg.sweep_cases = parse_as("sweep.cases", &v)?;
        }
        if let Some(v) = entries.remove("synth.kind") {
            cfg.synth_kind = v
                .parse::<ScenarioKind>()
                .map_err(|e| CliError::Config(format!("key \"synth.kind\": {e}")))?;
        }
        if let Some(v) = entries.remove("synth.agents") {
            cfg.synth_agents = parse_as("synth.agents", &v)?;
        }
        if let Some(v) = entries.remove("synth.speed_min") {
            cfg.synth_speed_min = parse_as("synth.speed_min", &v)?;
        }
        if let Some(v) = entries.remove("synth.speed_max") {
            cfg.synth_speed_max = parse_as("synth.speed_max", &v)?;
        }
        if let Some(v) = entries.remove("synth.duration") {
            cfg.synth_duration = parse_as("synth.duration", &v)?;
        }
        if let Some(v) = entries.remove("synth.noise_std") {
            cfg.synth_noise_std = parse_as("synth.noise_std", &v)?;
        }
        if let Some(v) = entries.remove("synth.episodes") {
            cfg.synth_episodes = parse_as("synth.episodes", &v)?;
        }
        if let Some(v) = entries.remove("cross.scenarios") {
            cfg.cross_scenarios = v.split(',').map(|p| PathBuf::from(p.trim())).collect();
        }
        if let Some(v) = entries.remove("cross.seeds") {
            cfg.cross_seeds = parse_list("cross.seeds", &v)?;
        }
        if let Some(v) = entries.remove("render.cases") {
            cfg.render_cases = parse_list("render.cases", &v)?;
        }
        if !entries.is_empty() {
            let keys: Vec<&str> = entries.keys().map(String::as_str).collect();
            return Err(CliError::Config(format!(
                "unknown config key(s): {}",
                keys.join(", ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    // Negated float comparisons reject NaN along with the out-of-range
    // values; `<=` would wave NaN through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), CliError> {
        if self.heads != 1 {
            return Err(CliError::Config(format!(
                "model.heads = {}: only single-head attention is supported",
                self.heads
            )));
        }
        if self.hz != 10 {
            return Err(CliError::Config(format!(
                "horizons.hz = {}: the pipeline is fixed at 10 Hz",
                self.hz
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "data.split_fraction = {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        if self.t_h < 2 || self.t_f < 1 || self.stride < 1 {
            return Err(CliError::Config(format!(
                "horizons t_h = {}, t_f = {}, stride = {} (need t_h >= 2, t_f >= 1, stride >= 1)",
                self.t_h, self.t_f, self.stride
            )));
        }
        if self.hidden < 1 || self.layers < 1 || !(self.max_seg_len > 0.0) {
            return Err(CliError::Config(format!(
                "model hidden = {}, layers = {}, max_seg_len = {} (need positive values)",
                self.hidden, self.layers, self.max_seg_len
            )));
        }
        if self.batch_size < 1
            || self.epochs < 1
            || self.decay_every_epochs < 1
            || !(self.initial_lr > 0.0)
            || !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0)
        {
            return Err(CliError::Config(format!(
                "train batch_size = {}, epochs = {}, decay_every_epochs = {}, initial_lr = {}, \
                 lr_decay_factor = {} (need positive sizes, positive lr, decay factor in (0, 1])",
                self.batch_size,
                self.epochs,
                self.decay_every_epochs,
                self.initial_lr,
                self.lr_decay_factor
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(CliError::Config(format!(
                "attribution.sigma = {} must be finite and non-negative",
                self.sigma
            )));
        }
        if self.steps < 1 || self.attribution_cases < 1 || self.sweep_cases < 1 {
            return Err(CliError::Config(format!(
                "attribution.steps = {}, attribution.cases = {}, sweep.cases = {} must be >= 1",
                self.steps, self.attribution_cases, self.sweep_cases
            )));
        }
        if self.sweep_sigmas.is_empty()
            || self
                .sweep_sigmas
                .iter()
                .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(CliError::Config(
                "sweep.sigmas must be a non-empty list of finite non-negative values".into(),
            ));
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.out.join("dataset.json"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.json"))
    }

    /// Split name: explicit setting, else the tracks file stem.
    pub fn scenario_name(&self) -> String {
        if let Some(name) = &self.scenario {
            return name.clone();
        }
        self.tracks
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string())
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            hidden: self.hidden,
            layers: self.layers,
            t_h: self.t_h,
            t_f: self.t_f,
            layer_norm: self.layer_norm,
            max_seg_len: self.max_seg_len,
        }
    }

    /// Training settings with the root seed fanned out to the "train" stream.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            lr_decay_factor: self.lr_decay_factor,
            decay_every_epochs: self.decay_every_epochs,
            epoch_count: self.epochs,
            seed: seed_stream(self.seed, "train"),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            kind: self.synth_kind,
            agent_count: self.synth_agents,
            speed_min: self.synth_speed_min,
            speed_max: self.synth_speed_max,
            duration: self.synth_duration,
            noise_std: self.synth_noise_std,
            seed: seed_stream(self.seed, "synth"),
            episodes: self.synth_episodes,
        }
    }

    /// Canonical text form of the effective settings; the manifest hash is
    /// the SHA-256 of exactly this string.
    pub fn canonical(&self) -> String {
        fn join<T: std::fmt::Display>(items: &[T]) -> String {
            items
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("attribution.cases", self.attribution_cases.to_string());
        kv("attribution.sigma", self.sigma.to_string());
        kv("attribution.steps", self.steps.to_string());
        kv(
            "cross.scenarios",
            join(
                &self
                    .cross_scenarios
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        kv("cross.seeds", join(&self.cross_seeds));
        kv(
            "data.checkpoint",
            self.checkpoint_path().display().to_string(),
        );
        kv("data.dataset", self.dataset_path().display().to_string());
        kv(
            "data.map",
            self.map
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("data.out", self.out.display().to_string());
        kv("data.scenario", self.scenario_name());
        kv("data.split_fraction", self.split_fraction.to_string());
        kv(
            "data.tracks",
            self.tracks
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("horizons.hz", self.hz.to_string());
        kv("horizons.stride", self.stride.to_string());
        kv("horizons.t_f", self.t_f.to_string());
        kv("horizons.t_h", self.t_h.to_string());
        kv("jobs", self.jobs.to_string());
        kv("model.heads", self.heads.to_string());
        kv("model.hidden", self.hidden.to_string());
        kv("model.layer_norm", self.layer_norm.to_string());
        kv("model.layers", self.layers.to_string());
        kv("model.max_seg_len", self.max_seg_len.to_string());
        kv("render.cases", join(&self.render_cases));
        kv("seed", self.seed.to_string());
        kv("sweep.cases", self.sweep_cases.to_string());
        kv("sweep.sigmas", join(&self.sweep_sigmas));
        kv("synth.agents", self.synth_agents.to_string());
        kv("synth.duration", self.synth_duration.to_string());
        kv("synth.episodes", self.synth_episodes.to_string());
        kv("synth.kind", self.synth_kind.to_string());
        kv("synth.noise_std", self.synth_noise_std.to_string());
        kv("synth.speed_max", self.synth_speed_max.to_string());
        kv("synth.speed_min", self.synth_speed_min.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv(
            "train.decay_every_epochs",
            self.decay_every_epochs.to_string(),
        );
        kv("train.epochs", self.epochs.to_string());
        kv("train.initial_lr", self.initial_lr.to_string());
        kv("train.lr_decay_factor", self.lr_decay_factor.to_string());
        s
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_round_trips_to_default_config() {
        let raw = RawConfig::parse(DEFAULT_CONFIG_TEXT).unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let raw = RawConfig::parse("model.hiden = 32\n").unwrap();
        let err = RunConfig::from_raw(raw).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("model.hiden"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines_are_config_errors() {
        assert_eq!(
            RawConfig::parse("seed = 1\nseed = 2\n")
                .unwrap_err()
                .exit_code(),
            2
        );
        assert_eq!(RawConfig::parse("just words\n").unwrap_err().exit_code(), 2);
        assert_eq!(RawConfig::parse("seed =\n").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn trailing_comments_and_blank_lines_are_ignored() {
        let raw = RawConfig::parse("\n# full line\nseed = 9  # trailing\n\n").unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn heads_and_hz_are_locked() {
        let raw = RawConfig::parse("model.heads = 2\n").unwrap();
        assert!(RunConfig::from_raw(raw)
            .unwrap_err()
            .to_string()
            .contains("single-head"));
        let raw = RawConfig::parse("horizons.hz = 25\n").unwrap();
        assert!(RunConfig::from_raw(raw)
            .unwrap_err()
            .to_string()
            .contains("10 Hz"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let raw = RawConfig::parse("train.epochs = many\n").unwrap();
        let err = RunConfig::from_raw(raw).unwrap_err();
        assert!(err.to_string().contains("train.epochs"), "{err}");
        let raw = RawConfig::parse("synth.kind = zigzag\n").unwrap();
        let err = RunConfig::from_raw(raw).unwrap_err();
        assert!(err.to_string().contains("synth.kind"), "{err}");
    }

    #[test]
    fn hash_depends_on_effective_settings_only() {
        let a = RunConfig::from_raw(RawConfig::parse("seed = 3 # pick\n").unwrap()).unwrap();
        let b = RunConfig::from_raw(RawConfig::parse("\nseed = 3\n").unwrap()).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig::from_raw(RawConfig::parse("seed = 4\n").unwrap()).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn derived_paths_follow_out_dir() {
        let mut cfg = RunConfig {
            out: PathBuf::from("runs/x"),
            ..RunConfig::default()
        };
        assert_eq!(cfg.dataset_path(), PathBuf::from("runs/x/dataset.json"));
        assert_eq!(
            cfg.checkpoint_path(),
            PathBuf::from("runs/x/checkpoint.json")
        );
        cfg.dataset = Some(PathBuf::from("elsewhere.json"));
        assert_eq!(cfg.dataset_path(), PathBuf::from("elsewhere.json"));
    }

    #[test]
    fn scenario_name_falls_back_to_tracks_stem() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.scenario_name(), "scenario");
        cfg.tracks = Some(PathBuf::from("data/highway_a.csv"));
        assert_eq!(cfg.scenario_name(), "highway_a");
        cfg.scenario = Some("named".into());
        assert_eq!(cfg.scenario_name(), "named");
    }

    #[test]
    fn seed_streams_are_distinct() {
        let cfg = RunConfig::default();
        let train = cfg.train_config().seed;
        let synth = cfg.synth_spec().seed;
        assert_ne!(train, synth);
        assert_ne!(train, cfg.seed);
    }
}
