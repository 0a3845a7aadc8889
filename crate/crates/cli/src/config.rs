//! The TOML run configuration shared by `train`, `eval` and `experiment`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use skelact::model::ModelConfig;
use skelact::rng;
use skelact::skeleton::io::{load_dataset_dir, MANIFEST_FILE};
use skelact::skeleton::{generate_synthetic_dataset, Dataset, SyntheticSpec};
use skelact::training::{noisy_copy, TrainConfig};

/// Name of the effective configuration written next to the outputs.
pub const EFFECTIVE_CONFIG: &str = "config.toml";

/// Keys whose contents are validated by their own parser.
const OPAQUE_KEYS: &[&str] = &["model.topology"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// A dataset directory with a manifest; synthetic data is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Fraction of each class held out for validation from synthetic data.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Gaussian noise added to every training and validation coordinate.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub fractions: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            sigmas: vec![0.0, 0.02, 0.05, 0.1],
            seeds: vec![0, 1, 2],
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_val_fraction() -> f64 {
    0.25
}

impl RunConfig {
    pub fn new(model: ModelConfig) -> Self {
        RunConfig {
            data_dir: None,
            output_dir: default_output_dir(),
            val_fraction: default_val_fraction(),
            noise_sigma: 0.0,
            synthetic: SyntheticSpec::default(),
            model,
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }

    /// Parses TOML, reporting every unrecognised key at once.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text)?;
        let mut schema = RunConfig::new(ModelConfig::new(2));
        schema.data_dir = Some(PathBuf::new());
        let schema = toml::Value::try_from(&schema)?;
        let mut unknown = Vec::new();
        unknown_keys(&user, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            bail!("unknown configuration keys: {}", unknown.join(", "));
        }
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        ensure!(
            self.noise_sigma >= 0.0,
            "noise_sigma {} must be non-negative",
            self.noise_sigma
        );
        match &self.data_dir {
            Some(dir) => ensure!(
                dir.join(MANIFEST_FILE).is_file(),
                "data_dir {} has no {MANIFEST_FILE}",
                dir.display()
            ),
            None => ensure!(
                self.synthetic.class_count == self.model.classes,
                "synthetic.class_count {} differs from model.classes {}",
                self.synthetic.class_count,
                self.model.classes
            ),
        }
        Ok(())
    }

    /// Creates the output directory and writes the effective configuration there.
    pub fn prepare_output(&self) -> Result<()> {
        std::fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating {}", self.output_dir.display()))?;
        let path = self.output_dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Training and validation sets, with the configured noise applied.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, val) = match &self.data_dir {
            Some(dir) => load_dataset_dir(dir, self.model.classes)?,
            None => {
                generate_synthetic_dataset(&self.synthetic)?.split_holdout(self.val_fraction)?
            }
        };
        if self.noise_sigma == 0.0 {
            return Ok((train, val));
        }
        let seed = self.train.seed;
        Ok((
            noisy_copy(&train, self.noise_sigma, rng::derive_seed(seed, 1))?,
            noisy_copy(&val, self.noise_sigma, rng::derive_seed(seed, 2))?,
        ))
    }
}

fn unknown_keys(user: &toml::Value, schema: &toml::Value, path: &str, out: &mut Vec<String>) {
    match (user, schema) {
        (toml::Value::Table(u), toml::Value::Table(s)) => {
            for (key, value) in u {
                let p = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                if OPAQUE_KEYS.contains(&p.as_str()) {
                    continue;
                }
                match s.get(key) {
                    Some(expected) => unknown_keys(value, expected, &p, out),
                    None => out.push(p),
                }
            }
        }
        (toml::Value::Array(u), toml::Value::Array(s)) => {
            if let Some(expected) = s.first() {
                for (i, value) in u.iter().enumerate() {
                    unknown_keys(value, expected, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nclasses = 8\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg, RunConfig::new(ModelConfig::new(8)));
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let text = "colour = 1\n[model]\nclasses = 8\nsegmnts = 3\n[[model.backbone.blocks]]\nin_channels = 3\nout_channels = 4\nstrid = 2\n[train]\nepochz = 3\n";
        let msg = RunConfig::parse(text).unwrap_err().to_string();
        for key in [
            "colour",
            "model.segmnts",
            "model.backbone.blocks[0].strid",
            "train.epochz",
        ] {
            assert!(msg.contains(key), "{key} missing from {msg}");
        }
    }

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.train.epochs = 7;
        cfg.train.lr_drop_epochs = vec![3];
        cfg.noise_sigma = 0.02;
        let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn mismatched_synthetic_classes_are_rejected() {
        let text = "[model]\nclasses = 5\n";
        assert!(RunConfig::parse(text).is_err());
    }

    #[test]
    fn missing_data_dir_is_rejected() {
        let text = "data_dir = \"/nonexistent/skelact\"\n[model]\nclasses = 8\n";
        let msg = RunConfig::parse(text).unwrap_err().to_string();
        assert!(msg.contains("manifest"), "{msg}");
    }
}
