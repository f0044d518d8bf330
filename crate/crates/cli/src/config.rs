//! Run configuration: a TOML file with `[data]`, `[arch]`, `[train]`,
//! `[eval]` and `[paths]` sections, command-line overrides, and per-preset
//! defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weak_disentangle::datasets::{ArchiveFormat, NoiseKind};
use weak_disentangle::evaluation::DEFAULT_ALPHAS;
use weak_disentangle::factors::Preset;
use weak_disentangle::networks::ArchConfig;
use weak_disentangle::prior::DEFAULT_VARIANCE_FLOOR;
use weak_disentangle::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// Values as written in the file; `None` falls back to the preset default.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    seed: Option<u64>,
    data: RawData,
    arch: RawArch,
    train: RawTrain,
    eval: RawEval,
    paths: RawPaths,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawData {
    samples_per_combination: Option<usize>,
    size: Option<usize>,
    noise: Option<String>,
    noise_level: Option<f64>,
    format: Option<String>,
    stride: Option<usize>,
    tau: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawArch {
    latent_dim: Option<usize>,
    conv_channels: Option<Vec<usize>>,
    kernel: Option<usize>,
    stride: Option<usize>,
    mlp_width: Option<usize>,
    mlp_depth: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawTrain {
    beta: Option<f64>,
    gamma: Option<f64>,
    warmup_epochs: Option<usize>,
    full_epochs: Option<usize>,
    batch_absae: Option<usize>,
    batch_rel: Option<usize>,
    learning_rate: Option<f64>,
    refresh_every: Option<usize>,
    variance_floor: Option<f64>,
    checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawEval {
    alphas: Option<Vec<f64>>,
    depths: Option<Vec<usize>>,
    taus: Option<Vec<usize>>,
    trials: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPaths {
    data: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    reports: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataSection {
    pub samples_per_combination: usize,
    pub size: usize,
    pub noise: NoiseKind,
    pub noise_level: f64,
    pub format: String,
    pub stride: usize,
    /// Labeled samples per combination used to fit the training prior.
    pub tau: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchSection {
    pub latent_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub mlp_width: usize,
    pub mlp_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSection {
    pub alphas: Vec<f64>,
    pub depths: Vec<usize>,
    pub taus: Vec<usize>,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub data: DataSection,
    pub arch: ArchSection,
    pub train: TrainConfig,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub eval: EvalSection,
    pub paths: Paths,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `section.key=value` assignments; values are parsed as TOML and fall
    /// back to plain strings.
    pub set: Vec<String>,
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for s in sections {
        cursor = cursor
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{s}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides and fills in defaults.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for s in &overrides.set {
            apply_set(&mut table, s)?;
        }
        let mut raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if overrides.preset.is_some() {
            raw.preset = overrides.preset.clone();
        }
        if overrides.seed.is_some() {
            raw.seed = overrides.seed;
        }
        let out = overrides.out.clone().unwrap_or_else(|| PathBuf::from("run"));
        Self::resolve(raw, &out)
    }

    fn resolve(raw: RawConfig, out: &Path) -> CliResult<Self> {
        let preset: Preset = raw.preset.as_deref().unwrap_or("dsprites").parse()?;
        let shapes = preset == Preset::Shapes3d;
        let seed = raw.seed.unwrap_or(0);

        let d = raw.data;
        let noise: NoiseKind = d.noise.as_deref().unwrap_or("none").parse()?;
        let format = d.format.unwrap_or_else(|| "native".into());
        format.parse::<ArchiveFormat>()?;
        let data = DataSection {
            samples_per_combination: d.samples_per_combination.unwrap_or(50),
            size: d.size.unwrap_or(64),
            noise,
            noise_level: d.noise_level.unwrap_or_else(|| noise.default_level()),
            format,
            stride: d.stride.unwrap_or(1),
            tau: d.tau.unwrap_or(30),
        };

        let a = raw.arch;
        let base = ArchConfig::new(if shapes { 16 } else { 8 }, 1, 1, 1);
        let arch = ArchSection {
            latent_dim: a.latent_dim.unwrap_or(base.latent_dim),
            conv_channels: a.conv_channels.unwrap_or(base.conv_channels),
            kernel: a.kernel.unwrap_or(base.kernel),
            stride: a.stride.unwrap_or(base.stride),
            mlp_width: a.mlp_width.unwrap_or(base.mlp_width),
            mlp_depth: a.mlp_depth.unwrap_or(base.mlp_depth),
        };

        let t = raw.train;
        let dt = TrainConfig::default();
        let train = TrainConfig {
            beta: t.beta.unwrap_or(dt.beta),
            gamma: t.gamma.unwrap_or(dt.gamma),
            warmup_epochs: t.warmup_epochs.unwrap_or(if shapes { 5000 } else { dt.warmup_epochs }),
            full_epochs: t.full_epochs.unwrap_or(if shapes { 10000 } else { dt.full_epochs }),
            batch_absae: t.batch_absae.unwrap_or(dt.batch_absae),
            batch_rel: t.batch_rel.unwrap_or(dt.batch_rel),
            learning_rate: t.learning_rate.unwrap_or(if shapes { 1e-5 } else { dt.learning_rate }),
            refresh_every: t.refresh_every.unwrap_or(dt.refresh_every),
            variance_floor: t.variance_floor.unwrap_or(DEFAULT_VARIANCE_FLOOR),
            seed,
        };
        train.validate()?;

        let e = raw.eval;
        let eval = EvalSection {
            alphas: e.alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
            depths: e.depths.unwrap_or_else(|| vec![1, 5, 10]),
            taus: e.taus.unwrap_or_else(|| vec![10, 20, 30]),
            trials: e.trials.unwrap_or(if shapes { 5000 } else { 10000 }),
        };

        let p = raw.paths;
        let paths = Paths {
            data: p.data.unwrap_or_else(|| out.join("data")),
            checkpoint: p.checkpoint.unwrap_or_else(|| out.join("checkpoint.wdck")),
            reports: p.reports.unwrap_or_else(|| out.join("reports")),
        };

        Ok(RunConfig {
            preset,
            seed,
            data,
            arch,
            train,
            checkpoint_every: t.checkpoint_every.unwrap_or(100),
            eval,
            paths,
        })
    }

    pub fn archive_format(&self) -> ArchiveFormat {
        self.data.format.parse().expect("validated when resolving")
    }

    /// Architecture for images of the given shape.
    pub fn arch_config(
        &self,
        height: usize,
        width: usize,
        channels: usize,
        arity: usize,
        relations: usize,
    ) -> ArchConfig {
        ArchConfig {
            conv_channels: self.arch.conv_channels.clone(),
            kernel: self.arch.kernel,
            stride: self.arch.stride,
            mlp_width: self.arch.mlp_width,
            mlp_depth: self.arch.mlp_depth,
            ..ArchConfig::new(self.arch.latent_dim, height, width, channels)
        }
        .with_relations(arity, relations)
    }

    /// SHA-256 of the configuration without its paths, so relocating a run
    /// keeps the digest.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("paths");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, overrides: Overrides) -> CliResult<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, text).unwrap();
        RunConfig::load(Some(&path), &overrides)
    }

    #[test]
    fn defaults_follow_preset() {
        let c = RunConfig::load(None, &Overrides::default()).unwrap();
        assert_eq!((c.preset, c.arch.latent_dim, c.data.size), (Preset::Dsprites, 8, 64));
        assert_eq!(
            (c.train.warmup_epochs, c.train.full_epochs, c.train.learning_rate),
            (1000, 5000, 1e-4)
        );
        assert_eq!(c.eval.depths, vec![1, 5, 10]);
        assert_eq!(c.eval.taus, vec![10, 20, 30]);
        assert_eq!(c.eval.alphas, vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9]);
        let s = load("preset = \"shapes3d\"", Overrides::default()).unwrap();
        assert_eq!(
            (s.arch.latent_dim, s.train.learning_rate, s.eval.trials),
            (16, 1e-5, 5000)
        );
        assert_eq!((s.train.warmup_epochs, s.train.full_epochs), (5000, 10000));
    }

    #[test]
    fn flags_override_file() {
        let c = load(
            "seed = 3\n[train]\nwarmup_epochs = 7\n[eval]\ntrials = 9\n",
            Overrides {
                seed: Some(5),
                set: vec!["train.warmup_epochs=2".into(), "paths.data=/tmp/x".into()],
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(
            (c.seed, c.train.seed, c.train.warmup_epochs, c.eval.trials),
            (5, 5, 2, 9)
        );
        assert_eq!(c.paths.data, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(matches!(
            load("[train]\nbogus = 1\n", Overrides::default()),
            Err(CliError::Config(_))
        ));
        let err = load("preset = \"mnist\"", Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("mnist"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn digest_ignores_paths() {
        let a = RunConfig::load(
            None,
            &Overrides {
                out: Some("a".into()),
                ..Overrides::default()
            },
        )
        .unwrap();
        let b = RunConfig::load(
            None,
            &Overrides {
                out: Some("b".into()),
                ..Overrides::default()
            },
        )
        .unwrap();
        let c = RunConfig::load(
            None,
            &Overrides {
                seed: Some(1),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
