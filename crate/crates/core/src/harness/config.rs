use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::midlevel::{MidlevelConfig, RepresentationSpec};
use crate::sac::SacConfig;
use crate::scene::{CameraConfig, EnvironmentName, SceneConfig, SpeedMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub environment: String,
    pub representation: String,
    pub train_speed: String,
    pub eval_speeds: Vec<String>,
    pub train_fps: f64,
    pub eval_fps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            environment: "straight_road".into(),
            representation: "ego+obj".into(),
            train_speed: "normal".into(),
            eval_speeds: vec!["low".into(), "high".into()],
            train_fps: 12.0,
            eval_fps: vec![6.0, 8.0, 10.0, 12.0],
            seeds: vec![0, 1, 2],
            eval_episodes: 100,
            eval_seed: 1_000_003,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Composition lists swept by the sweep subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub composition: Vec<String>,
    pub complementarity: Vec<String>,
    /// Compositions evaluated across frame rates.
    pub fps: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            composition: ["ego", "obj", "raw", "ego+obj"].map(String::from).to_vec(),
            complementarity: [
                "seg2",
                "depth2",
                "ego+obj",
                "ego+obj+seg2",
                "ego+obj+depth2",
                "ego+obj+seg2+depth2",
            ]
            .map(String::from)
            .to_vec(),
            fps: ["seg2", "depth2", "ego+obj"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub sweep: SweepSection,
    pub camera: CameraConfig,
    pub midlevel: MidlevelConfig,
    pub scene: SceneConfig,
    pub sac: SacConfig,
}

/// Reference configuration with every default spelled out.
pub const REFERENCE_CONFIG: &str = include_str!("reference.toml");

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn environment(&self) -> Result<EnvironmentName, HarnessError> {
        self.experiment
            .environment
            .parse()
            .map_err(|e: crate::scene::SceneError| HarnessError::Config(e.to_string()))
    }

    pub fn representation(&self) -> Result<RepresentationSpec, HarnessError> {
        parse_representation(&self.experiment.representation)
    }

    pub fn train_speed(&self) -> Result<SpeedMode, HarnessError> {
        speed(&self.experiment.train_speed)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.experiment;
        self.environment()?;
        self.representation()?;
        self.train_speed()?;
        for s in &e.eval_speeds {
            speed(s)?;
        }
        for fps in std::iter::once(&e.train_fps).chain(&e.eval_fps) {
            if !(1.0..=60.0).contains(fps) {
                return Err(HarnessError::Config(format!("fps must lie in [1, 60], got {fps}")));
            }
        }
        if e.seeds.is_empty() {
            return Err(HarnessError::Config("seeds list is empty".into()));
        }
        if e.eval_episodes == 0 {
            return Err(HarnessError::Config("eval_episodes must be at least 1".into()));
        }
        for r in self
            .sweep
            .composition
            .iter()
            .chain(&self.sweep.complementarity)
            .chain(&self.sweep.fps)
        {
            parse_representation(r)?;
        }
        let s = &self.sac;
        if s.batch_size == 0 || s.buffer_capacity < s.batch_size {
            return Err(HarnessError::Config("sac.buffer_capacity must be at least sac.batch_size > 0".into()));
        }
        if s.initial_alpha <= 0.0 {
            return Err(HarnessError::Config("sac.initial_alpha must be positive".into()));
        }
        if self.camera.width == 0 || self.camera.height == 0 || !(self.camera.hfov_deg > 0.0 && self.camera.hfov_deg < 180.0) {
            return Err(HarnessError::Config("camera needs positive size and 0 < hfov_deg < 180".into()));
        }
        if !(self.midlevel.flow_scale > 0.0 && self.midlevel.far_plane > 0.0) {
            return Err(HarnessError::Config("midlevel.flow_scale and far_plane must be positive".into()));
        }
        Ok(())
    }
}

pub fn parse_representation(s: &str) -> Result<RepresentationSpec, HarnessError> {
    s.parse()
        .map_err(|e: crate::midlevel::MidlevelError| HarnessError::Config(e.to_string()))
}

pub fn speed(name: &str) -> Result<SpeedMode, HarnessError> {
    SpeedMode::preset(name).map_err(|e| HarnessError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_matches_defaults() {
        let cfg = ExperimentConfig::from_toml(REFERENCE_CONFIG).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn every_default_carries_provenance() {
        for line in REFERENCE_CONFIG.lines() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') || l.starts_with('[') {
                continue;
            }
            let key = l.split('=').next().unwrap().trim();
            if ["output_dir", "seed"].contains(&key) {
                continue;
            }
            assert!(l.contains("(published)") || l.contains("(chosen)"), "untagged default: {l}");
        }
    }

    #[test]
    fn rejects_bad_values() {
        let bad_token = ExperimentConfig::from_toml("[experiment]\nrepresentation = \"ego+flo\"\n").unwrap_err();
        assert!(bad_token.to_string().contains("`flo`"), "{bad_token}");
        assert_eq!(bad_token.exit_code(), 2);
        let unknown = ExperimentConfig::from_toml("[camera]\nzoom = 2\n").unwrap_err();
        assert!(unknown.to_string().contains("zoom"), "{unknown}");
        assert!(ExperimentConfig::from_toml("[experiment]\neval_speeds = [\"fast\"]\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\neval_fps = [0.5]\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\neval_fps = [61.0]\n").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nseeds = []\n").is_err());
        for env in ["straight_road", "s_turn", "h_shaped", "three_way"] {
            ExperimentConfig::from_toml(&format!("[experiment]\nenvironment = \"{env}\"\n")).unwrap();
        }
    }
}
