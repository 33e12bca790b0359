//! Effective run settings. Each value comes from the command line if given,
//! else from the TOML config file, else from the built-in default.
//!
//! Config file layout (every key optional):
//!
//! ```toml
//! seed = 7
//! n = [1, 3, 5]
//! edge_policy = "zero_pad"      # zero_pad | clamp | skip
//! input_size = 64
//! loss_log_base = "10"          # "10" | "e"
//! out = "runs/a"
//! max_steps = 5000
//! batch_size = 32
//! lr = 1e-4
//! cell_size = 30.0              # arc-seconds
//! r_squared = "squared_pearson" # squared_pearson | efficiency
//!
//! [paths]
//! imagery = "scene/imagery.bgrd"
//! day = "scene/day.asc"
//! night = "scene/night.asc"
//! ambient = "run/ambient.asc"
//! manifest = "run/manifest.json"
//! checkpoint = "run/model.pgck"
//! predictions = "run/predictions.csv"
//!
//! [model]
//! conv_channels = [8, 16]
//! dropout = 0.5
//!
//! [train]
//! eval_every = 100
//! patience = 20
//! dropout_enabled = true
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//!
//! [synth]
//! rows = 48
//! cols = 48
//! pixels_per_cell = 8
//! correlation_length = 2.0
//! pop_scale = 3000.0
//! confound_fraction = 0.0
//! confound_multiplier = 5.0
//! pixel_noise_sd = 0.02
//! day_night_jitter = 0.2
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use popgrid::estimator::{LogBase, ModelConfig, TrainConfig};
use popgrid::eval::RSquaredDefinition;
use popgrid::patch::{EdgePolicy, NeighborSpec};
use popgrid::synth::SceneSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_OUT: &str = "popgrid_out";
pub const DEFAULT_CELL_SIZE: f64 = 30.0;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub n: Option<Vec<usize>>,
    pub edge_policy: Option<EdgePolicy>,
    pub input_size: Option<usize>,
    pub loss_log_base: Option<toml::Value>,
    pub out: Option<PathBuf>,
    pub max_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub cell_size: Option<f64>,
    pub r_squared: Option<RSquaredDefinition>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub train: TrainFile,
    #[serde(default)]
    pub synth: SynthFile,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub imagery: Option<PathBuf>,
    pub day: Option<PathBuf>,
    pub night: Option<PathBuf>,
    pub ambient: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

impl Paths {
    fn entries_mut(&mut self) -> [&mut Option<PathBuf>; 7] {
        [
            &mut self.imagery,
            &mut self.day,
            &mut self.night,
            &mut self.ambient,
            &mut self.manifest,
            &mut self.checkpoint,
            &mut self.predictions,
        ]
    }

    /// Fills every unset entry from `base`.
    fn or(mut self, mut base: Paths) -> Paths {
        for (mine, theirs) in self.entries_mut().into_iter().zip(base.entries_mut()) {
            if mine.is_none() {
                *mine = theirs.take();
            }
        }
        self
    }
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub conv_channels: Option<Vec<usize>>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub eval_every: Option<usize>,
    pub patience: Option<usize>,
    pub dropout_enabled: Option<bool>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub pixels_per_cell: Option<usize>,
    pub correlation_length: Option<f64>,
    pub pop_scale: Option<f64>,
    pub confound_fraction: Option<f64>,
    pub confound_multiplier: Option<f64>,
    pub pixel_noise_sd: Option<f64>,
    pub day_night_jitter: Option<f64>,
}

impl SynthFile {
    /// Fields of `self` win over `base`.
    pub fn or(self, base: SynthFile) -> SynthFile {
        SynthFile {
            rows: self.rows.or(base.rows),
            cols: self.cols.or(base.cols),
            pixels_per_cell: self.pixels_per_cell.or(base.pixels_per_cell),
            correlation_length: self.correlation_length.or(base.correlation_length),
            pop_scale: self.pop_scale.or(base.pop_scale),
            confound_fraction: self.confound_fraction.or(base.confound_fraction),
            confound_multiplier: self.confound_multiplier.or(base.confound_multiplier),
            pixel_noise_sd: self.pixel_noise_sd.or(base.pixel_noise_sd),
            day_night_jitter: self.day_night_jitter.or(base.day_night_jitter),
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<Vec<usize>>,
    pub edge_policy: Option<EdgePolicy>,
    pub input_size: Option<usize>,
    pub loss_log_base: Option<LogBase>,
    pub out: Option<PathBuf>,
    pub max_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub cell_size: Option<f64>,
    pub r_squared: Option<RSquaredDefinition>,
    pub paths: Paths,
    pub synth: SynthFile,
}

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub n: Vec<usize>,
    pub edge_policy: EdgePolicy,
    pub input_size: usize,
    pub loss_log_base: LogBase,
    pub out: PathBuf,
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cell_size: f64,
    pub r_squared: RSquaredDefinition,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneSpec,
}

impl Settings {
    pub fn neighbor_specs(&self) -> Result<Vec<NeighborSpec>, CliError> {
        self.n
            .iter()
            .map(|&n| NeighborSpec::new(n, self.edge_policy).map_err(|e| CliError::Usage(e.to_string())))
            .collect()
    }

    /// The single neighborhood of a one-`n` stage.
    pub fn neighbor_spec(&self) -> Result<NeighborSpec, CliError> {
        match self.neighbor_specs()?.as_slice() {
            [one] => Ok(*one),
            _ => Err(CliError::Usage(format!(
                "this stage takes one neighborhood size, got {:?}",
                self.n
            ))),
        }
    }

    pub fn require(&self, path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
        match path {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(CliError::Usage(format!("{flag}: {} does not exist", p.display()))),
            None => Err(CliError::Usage(format!("missing {flag}"))),
        }
    }
}

pub fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut cfg: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for p in cfg.paths.entries_mut().into_iter().flatten() {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    if let Some(out) = cfg.out.as_mut() {
        if out.is_relative() {
            *out = dir.join(&*out);
        }
    }
    Ok(cfg)
}

fn log_base_from_toml(v: &toml::Value) -> Result<LogBase, CliError> {
    let s = match v {
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    s.parse()
        .map_err(|_| CliError::Usage(format!("loss_log_base must be \"10\" or \"e\", got {v}")))
}

/// Merges flags over the file over defaults. `default_n` is the
/// neighborhood set used when neither source names one.
pub fn resolve(file: FileConfig, flags: Overrides, default_n: &[usize]) -> Result<Settings, CliError> {
    let usage = |m: String| CliError::Usage(m);
    let file_base = match &file.loss_log_base {
        Some(v) => Some(log_base_from_toml(v)?),
        None => None,
    };

    let model_default = ModelConfig::default();
    let train_default = TrainConfig::default();
    let seed = flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let input_size = flags.input_size.or(file.input_size).unwrap_or(model_default.input_size);
    let loss_log_base = flags.loss_log_base.or(file_base).unwrap_or_default();
    let max_steps = flags.max_steps.or(file.max_steps).unwrap_or(train_default.max_steps);
    let batch_size = flags.batch_size.or(file.batch_size).unwrap_or(train_default.batch_size);
    let lr = flags.lr.or(file.lr).unwrap_or(train_default.learning_rate);

    let model = ModelConfig {
        input_size,
        conv_channels: file.model.conv_channels.unwrap_or(model_default.conv_channels),
        dropout: file.model.dropout.unwrap_or(model_default.dropout),
    };
    model.validate().map_err(|e| usage(e.to_string()))?;
    let train = TrainConfig {
        learning_rate: lr,
        beta1: file.train.beta1.unwrap_or(train_default.beta1),
        beta2: file.train.beta2.unwrap_or(train_default.beta2),
        epsilon: file.train.epsilon.unwrap_or(train_default.epsilon),
        batch_size,
        max_steps,
        seed,
        dropout_enabled: file.train.dropout_enabled.unwrap_or(train_default.dropout_enabled),
        loss_base: loss_log_base,
        eval_every: file.train.eval_every.unwrap_or(train_default.eval_every),
        patience: file.train.patience.unwrap_or(train_default.patience),
    };
    train.validate().map_err(|e| usage(e.to_string()))?;

    let synth = flags.synth.or(file.synth);
    let d = SceneSpec::default();
    let scene = SceneSpec {
        n_rows: synth.rows.unwrap_or(d.n_rows),
        n_cols: synth.cols.unwrap_or(d.n_cols),
        pixels_per_cell: synth.pixels_per_cell.unwrap_or(d.pixels_per_cell),
        seed,
        correlation_length: synth.correlation_length.unwrap_or(d.correlation_length),
        pop_scale: synth.pop_scale.unwrap_or(d.pop_scale),
        confound_fraction: synth.confound_fraction.unwrap_or(d.confound_fraction),
        confound_multiplier: synth.confound_multiplier.unwrap_or(d.confound_multiplier),
        pixel_noise_sd: synth.pixel_noise_sd.unwrap_or(d.pixel_noise_sd),
        day_night_jitter: synth.day_night_jitter.unwrap_or(d.day_night_jitter),
    };
    scene.validate().map_err(|e| usage(e.to_string()))?;

    let mut n = flags.n.or(file.n).unwrap_or_else(|| default_n.to_vec());
    n.sort_unstable();
    n.dedup();
    let cell_size = flags.cell_size.or(file.cell_size).unwrap_or(DEFAULT_CELL_SIZE);
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(usage(format!("cell size {cell_size} must be positive")));
    }

    let settings = Settings {
        seed,
        n,
        edge_policy: flags.edge_policy.or(file.edge_policy).unwrap_or_default(),
        input_size,
        loss_log_base,
        out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        max_steps,
        batch_size,
        lr,
        cell_size,
        r_squared: flags.r_squared.or(file.r_squared).unwrap_or_default(),
        paths: flags.paths.or(file.paths),
        model,
        train,
        scene,
    };
    settings.neighbor_specs()?;
    Ok(settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> FileConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_when_nothing_is_given() {
        let s = resolve(FileConfig::default(), Overrides::default(), &[1]).unwrap();
        assert_eq!(s.seed, DEFAULT_SEED);
        assert_eq!(s.n, vec![1]);
        assert_eq!(s.input_size, 64);
        assert_eq!(s.lr, 1e-4);
        assert_eq!(s.batch_size, 32);
        assert_eq!(s.max_steps, 5000);
        assert_eq!(s.loss_log_base, LogBase::Ten);
        assert_eq!(s.edge_policy, EdgePolicy::ZeroPad);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = parse(
            "seed = 3\nlr = 0.01\nn = [5, 3]\nloss_log_base = \"e\"\n[synth]\nrows = 10\ncols = 12\n",
        );
        let flags = Overrides {
            seed: Some(9),
            synth: SynthFile {
                rows: Some(20),
                ..SynthFile::default()
            },
            ..Overrides::default()
        };
        let s = resolve(file, flags, &[1]).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.train.seed, 9);
        assert_eq!(s.lr, 0.01);
        assert_eq!(s.n, vec![3, 5]);
        assert_eq!(s.loss_log_base, LogBase::E);
        assert_eq!(s.scene.n_rows, 20);
        assert_eq!(s.scene.n_cols, 12);
        assert_eq!(s.batch_size, 32);
    }

    #[test]
    fn integer_log_base_is_accepted() {
        let s = resolve(parse("loss_log_base = 10"), Overrides::default(), &[1]).unwrap();
        assert_eq!(s.loss_log_base, LogBase::Ten);
        assert!(resolve(parse("loss_log_base = 2"), Overrides::default(), &[1]).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_sizes_are_usage_errors() {
        assert!(toml::from_str::<FileConfig>("sed = 3").is_err());
        let err = resolve(parse("n = [4]"), Overrides::default(), &[1]).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn relative_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "out = \"o\"\n[paths]\nday = \"d.asc\"\n").unwrap();
        let cfg = read_config(&p).unwrap();
        assert_eq!(cfg.paths.day.unwrap(), dir.path().join("d.asc"));
        assert_eq!(cfg.out.unwrap(), dir.path().join("o"));
    }
}
