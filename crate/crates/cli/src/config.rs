//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Every key must
//! be known; a later assignment of the same key overrides an earlier one.

use std::path::{Path, PathBuf};

use dpmil_core::fusion::FusionObjective;
use dpmil_core::pipeline::PipelineConfig;
use dpmil_core::resample::ResampleConfig;
use dpmil_core::synthdata::Resolution;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Pipeline configuration with every stage seeded from the global seed.
    pub fn seeded(&self) -> PipelineConfig {
        self.pipeline.with_seed(self.seed)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let err = |msg: String| CliError::Config {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `section.key = value`, found {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let p = &mut self.pipeline;
        let t = &mut p.task;
        match key {
            "run.seed" => self.seed = num(v)?,
            "run.out" => self.out = PathBuf::from(v),

            "gen.bags_per_class" => {
                let n: Vec<usize> = v.split(',').map(|x| num(x.trim())).collect::<Result<_, _>>()?;
                p.gen.bags_per_class = n
                    .try_into()
                    .map_err(|_| format!("{key} needs four comma-separated counts"))?;
            }
            "gen.instances_min" => p.gen.instances_per_bag.0 = num(v)?,
            "gen.instances_max" => p.gen.instances_per_bag.1 = num(v)?,
            "gen.noise_fraction" => p.gen.noise_fraction = num(v)?,
            "gen.class_center_separation" => p.gen.class_center_separation = num(v)?,
            "gen.cluster_spread" => p.gen.cluster_spread = num(v)?,
            "gen.background_offset" => p.gen.background_offset = num(v)?,
            "gen.background_spread" => p.gen.background_spread = Some(num(v)?),
            "gen.feature_dim" => p.gen.feature_dim = num(v)?,
            "gen.resolution" => {
                p.gen.resolution = Resolution::from_tag(v).ok_or_else(|| format!("unknown resolution {v:?}"))?
            }

            "split.ratio" => p.split_ratio = num(v)?,

            "coteach.enabled" => t.use_coteach = flag(v)?,
            "coteach.epochs" => t.coteach.epochs = num(v)?,
            "coteach.batch_size" => t.coteach.batch_size = num(v)?,
            "coteach.lr0" => t.coteach.lr0 = num(v)?,
            "coteach.power" => t.coteach.power = num(v)?,
            "coteach.forget_rate" => t.coteach.forget_rate = num(v)?,
            "coteach.ramp_epochs" => t.coteach.ramp_epochs = num(v)?,
            "coteach.conf_threshold" => t.coteach.conf_threshold = num(v)?,
            "coteach.hidden" => {
                t.coteach.hidden = v.split(',').map(|x| num(x.trim())).collect::<Result<_, _>>()?;
            }

            "resample.enabled" => t.coteach.resample = flag(v)?.then(ResampleConfig::default),
            "resample.target_per_class" => resample(&mut t.coteach.resample, key)?.target_per_class = Some(num(v)?),
            "resample.augment_sigma" => resample(&mut t.coteach.resample, key)?.augment_sigma = num(v)?,

            "lof.enabled" => t.use_lof = flag(v)?,
            "lof.k" => t.lof.k = num(v)?,
            "lof.theta" => t.lof.theta = num(v)?,
            "lof.cap_per_class" => t.lof.cap_per_class = num(v)?,

            "mil.alpha" => t.mil.alpha = num(v)?,
            "mil.epochs" => t.mil.epochs = num(v)?,
            "mil.batch_size" => t.mil.batch_size = num(v)?,
            "mil.lr0" => t.mil.lr0 = num(v)?,
            "mil.power" => t.mil.power = num(v)?,
            "mil.resample" => t.mil.resample = flag(v)?.then(ResampleConfig::default),

            "fusion.grid_step" => p.fusion.grid_step = num(v)?,
            "fusion.objective" => {
                p.fusion.objective = FusionObjective::from_name(v).ok_or_else(|| format!("unknown objective {v:?}"))?
            }
            "fusion.binary_alpha" => p.fusion.binary_alpha = num(v)?,

            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, found {v:?}")),
    }
}

fn resample<'a>(r: &'a mut Option<ResampleConfig>, key: &str) -> Result<&'a mut ResampleConfig, String> {
    r.as_mut().ok_or_else(|| format!("{key} set while resampling is disabled"))
}
