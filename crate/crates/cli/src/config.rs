//! `key = value` run configuration.
//!
//! Every key has a default; a config file and then command-line flags
//! override it. Path keys left empty resolve under `out_dir`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use motinv_core::diffusion::NoiseSchedule;
use motinv_core::{
    DenoiserSpec, EmbeddingShapeConfig, InferenceStrategy, InversionConfig, PretrainConfig, Spatial,
};

use crate::error::CliError;

/// Environment variable that sets the default `out_dir`.
pub const OUT_DIR_ENV: &str = "MOTINV_OUT_DIR";

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

pub const KEYS: &[Key] = &[
    key(
        "out_dir",
        "motinv-out",
        "directory for every default output path",
    ),
    key("corpus_dir", "", "synthetic training set [out_dir/corpus]"),
    key("params", "", "denoiser checkpoint [out_dir/denoiser.mden]"),
    key("reference", "", "reference video [out_dir/source.mvid]"),
    key(
        "embeddings",
        "",
        "motion embeddings, or none [out_dir/motion.memb]",
    ),
    key("output", "", "generated video [out_dir/generated.mvid]"),
    key("report", "", "evaluation report [out_dir/report.txt]"),
    key("ppm", "false", "also export PPM frames next to each video"),
    key("base_channels", "32", "channels of the finest level"),
    key("height", "16", "frame height"),
    key("width", "16", "frame width"),
    key("frames", "8", "frames per video"),
    key(
        "channel_mults",
        "1,2",
        "channel multiplier per level, finest first",
    ),
    key(
        "modules_per_level",
        "1",
        "temporal modules per level and path",
    ),
    key("vocab", "4", "number of prompt ids"),
    key("time_dim", "32", "timestep embedding width"),
    key("timesteps", "200", "diffusion steps T"),
    key("beta_start", "0.0001", "first noise variance"),
    key("beta_end", "0.02", "last noise variance"),
    key(
        "appearances",
        "4",
        "appearance seeds per corpus script; seed k uses prompt id k",
    ),
    key(
        "source_pan_x",
        "1.5",
        "reference video pan, x pixels per frame",
    ),
    key(
        "source_pan_y",
        "0",
        "reference video pan, y pixels per frame",
    ),
    key(
        "source_appearance",
        "0",
        "appearance seed of the reference video",
    ),
    key("pretrain_steps", "10000", "denoiser training steps"),
    key("pretrain_lr", "0.002", "denoiser learning rate"),
    key("pretrain_seed", "0", "denoiser init and data order seed"),
    key("invert_steps", "400", "embedding optimisation steps"),
    key("invert_lr", "0.01", "embedding learning rate"),
    key("invert_beta1", "0.9", "first moment coefficient"),
    key("invert_beta2", "0.999", "second moment coefficient"),
    key(
        "invert_clip",
        "1.0",
        "global gradient norm clip, 0 disables",
    ),
    key("invert_seed", "0", "seed of the (t, noise) stream"),
    key(
        "qk_spatial",
        "one_d",
        "query/key embedding extent: one_d or two_d",
    ),
    key(
        "v_spatial",
        "two_d",
        "value embedding extent: one_d or two_d",
    ),
    key(
        "inference_strategy",
        "differential",
        "differential, normalize or vanilla",
    ),
    key("source_prompt", "0", "prompt id used while inverting"),
    key("prompt", "1", "prompt id used while generating"),
    key("sample_seed", "0", "initial noise seed"),
    key("sample_steps", "50", "sampler steps"),
    key(
        "log_every",
        "50",
        "progress line cadence in steps, 0 disables",
    ),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Default of `key`, with `out_dir` taken from the environment when set.
pub fn default_value(key: &Key) -> String {
    if key.name == "out_dir" {
        if let Ok(v) = std::env::var(OUT_DIR_ENV) {
            if !v.is_empty() {
                return v;
            }
        }
    }
    key.default.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|k| (k.name, default_value(k))).collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) -> Result<(), CliError> {
        let k = find_key(name)
            .ok_or_else(|| CliError::Config(format!("unknown config key {name:?}")))?;
        self.values.insert(k.name, value.into());
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in Self::parse(&text)? {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unregistered key {name}"))
    }

    pub fn parse_value<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.get(name);
        raw.parse()
            .map_err(|e| CliError::Config(format!("{name} = {raw:?}: {e}")))
    }

    pub fn flag(&self, name: &str) -> Result<bool, CliError> {
        match self.get(name) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Config(format!(
                "{name} = {other:?}: expected true or false"
            ))),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    /// Path key, falling back to `out_dir/<file>` when empty.
    pub fn path(&self, name: &str, file: &str) -> PathBuf {
        match self.get(name) {
            "" => self.out_dir().join(file),
            p => PathBuf::from(p),
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.path("corpus_dir", "corpus")
    }

    pub fn params_path(&self) -> PathBuf {
        self.path("params", "denoiser.mden")
    }

    pub fn reference_path(&self) -> PathBuf {
        self.path("reference", "source.mvid")
    }

    /// `None` when embeddings are disabled with `none`.
    pub fn embeddings_path(&self) -> Option<PathBuf> {
        match self.get("embeddings") {
            "none" => None,
            _ => Some(self.path("embeddings", "motion.memb")),
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.path("output", "generated.mvid")
    }

    pub fn report_path(&self) -> PathBuf {
        self.path("report", "report.txt")
    }

    pub fn spec(&self) -> Result<DenoiserSpec, CliError> {
        let mults = self
            .get("channel_mults")
            .split(',')
            .map(|m| {
                m.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::Config(format!("channel_mults entry {m:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let spec = DenoiserSpec {
            image_channels: 3,
            base_channels: self.parse_value("base_channels")?,
            height: self.parse_value("height")?,
            width: self.parse_value("width")?,
            frames: self.parse_value("frames")?,
            channel_mults: mults,
            modules_per_level: self.parse_value("modules_per_level")?,
            vocab: self.parse_value("vocab")?,
            time_dim: self.parse_value("time_dim")?,
        };
        spec.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        NoiseSchedule::linear(
            self.parse_value("timesteps")?,
            self.parse_value("beta_start")?,
            self.parse_value("beta_end")?,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn shape_config(&self) -> Result<EmbeddingShapeConfig, CliError> {
        let mut c = EmbeddingShapeConfig::new(
            self.parse_value::<Spatial>("qk_spatial")?,
            self.parse_value::<Spatial>("v_spatial")?,
        );
        c.inference_strategy = self.parse_value::<InferenceStrategy>("inference_strategy")?;
        Ok(c)
    }

    pub fn inversion(&self) -> Result<InversionConfig, CliError> {
        let cfg = InversionConfig {
            steps: self.parse_value("invert_steps")?,
            lr: self.parse_value("invert_lr")?,
            beta1: self.parse_value("invert_beta1")?,
            beta2: self.parse_value("invert_beta2")?,
            clip_norm: self.parse_value("invert_clip")?,
            seed: self.parse_value("invert_seed")?,
            shape: self.shape_config()?,
            log_every: self.parse_value("log_every")?,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pretraining(&self) -> Result<PretrainConfig, CliError> {
        let cfg = PretrainConfig {
            steps: self.parse_value("pretrain_steps")?,
            lr: self.parse_value("pretrain_lr")?,
            seed: self.parse_value("pretrain_seed")?,
            log_every: self.parse_value("log_every")?,
            ..PretrainConfig::default()
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.name, self.get(k.name)))
            .collect()
    }
}
