use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Motion, SyntheticSpec};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Synthetic dataset request for the `synth` command. The generator seed
/// is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_per_class: usize,
    pub classes: Vec<Motion>,
    pub duration_us: u64,
    pub event_rate: f64,
    pub noise_rate: f64,
    pub sensor_height: u32,
    pub sensor_width: u32,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            n_per_class: 16,
            classes: s.classes,
            duration_us: s.duration_us,
            event_rate: s.event_rate,
            noise_rate: s.noise_rate,
            sensor_height: s.sensor_height,
            sensor_width: s.sensor_width,
        }
    }
}

impl SynthSection {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes.clone(),
            duration_us: self.duration_us,
            event_rate: self.event_rate,
            noise_rate: self.noise_rate,
            sensor_height: self.sensor_height,
            sensor_width: self.sensor_width,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// JSON-lines manifest of the training split.
    pub train: Option<PathBuf>,
    /// JSON-lines manifest of the held-out split.
    pub eval: Option<PathBuf>,
    /// Sensor geometry for CSV event files, which carry no header.
    pub csv_sensor_height: Option<u32>,
    pub csv_sensor_width: Option<u32>,
    pub synthetic: Option<SynthSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Whole-run configuration file. Every section is optional and falls back
/// to defaults; unknown keys anywhere are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    /// Reads a config file; paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.data.train);
        rebase(&mut cfg.data.eval);
        rebase(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.data.synthetic {
            s.spec(0).validate()?;
        }
        Ok(())
    }

    /// The run seed: the command-line value wins over `train.seed`.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag {
            self.train.seed = Some(s);
        }
        self.train
            .seed
            .ok_or_else(|| Error::Config("a seed is required: set train.seed or pass --seed".into()))
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output
            .dir
            .as_deref()
            .ok_or_else(|| Error::Config("output.dir is not set".into()))
    }
}
