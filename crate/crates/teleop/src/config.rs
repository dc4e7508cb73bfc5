//! TOML config files for robot parameters, mapping, gains and courses.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wip_core::course::CourseSpec;
use wip_core::linalg::Mat4;
use wip_core::mapping::{MappingConfig, MappingMode};
use wip_core::model::RobotParams;
use wip_core::synthesis::{
    synthesize, CostWeights, GainConvention, GainSet, DEFAULT_SAMPLE_TIME, HARDWARE_BALANCE_GAIN,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: wip_core::Error },
    #[error("gain synthesis failed: {0}")]
    Synthesis(wip_core::Error),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })
}

fn invalid(path: &Path) -> impl FnOnce(wip_core::Error) -> ConfigError + '_ {
    move |source| ConfigError::Invalid { path: path.to_owned(), source }
}

pub fn load_params(path: &Path) -> Result<RobotParams, ConfigError> {
    let p: RobotParams = parse(path)?;
    p.validate().map_err(invalid(path))?;
    Ok(p)
}

pub fn load_mapping(path: &Path) -> Result<MappingConfig, ConfigError> {
    let m: MappingConfig = parse(path)?;
    m.validate().map_err(invalid(path))?;
    Ok(m)
}

pub fn load_course(path: &Path) -> Result<CourseSpec, ConfigError> {
    let c: CourseSpec = parse(path)?;
    c.validate().map_err(invalid(path))?;
    Ok(c)
}

/// Where the balance gain comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    /// Riccati synthesis from `weights` on the loaded robot parameters.
    #[default]
    Synthesized,
    /// The explicit `k` vector, passed through `convention` and `scale`.
    Explicit,
    /// The hardware preset vector, passed through `convention` and `scale`.
    Hardware,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsFile {
    /// Diagonal of Q over `[x_w, pitch, xdot_w, pitch_rate]`.
    pub q: [f64; 4],
    pub r: f64,
}

impl Default for WeightsFile {
    fn default() -> Self {
        let w = CostWeights::default();
        WeightsFile { q: [w.q.0[0][0], w.q.0[1][1], w.q.0[2][2], w.q.0[3][3]], r: w.r }
    }
}

impl From<WeightsFile> for CostWeights {
    fn from(w: WeightsFile) -> Self {
        CostWeights { q: Mat4::diag(w.q), r: w.r }
    }
}

/// On-disk gain description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsFile {
    pub source: GainSource,
    pub k: Option<[f64; 4]>,
    pub convention: GainConvention,
    pub scale: f64,
    pub weights: WeightsFile,
    pub sample_time: f64,
    pub hip_kp: f64,
    pub hip_kd: f64,
    pub yaw_kp: f64,
    pub yaw_kd: f64,
}

impl Default for GainsFile {
    fn default() -> Self {
        GainsFile {
            source: GainSource::Synthesized,
            k: None,
            convention: GainConvention::Native,
            scale: 1.0,
            weights: WeightsFile::default(),
            sample_time: DEFAULT_SAMPLE_TIME,
            hip_kp: GainSet::HIP_KP,
            hip_kd: GainSet::HIP_KD,
            yaw_kp: GainSet::YAW_KP,
            yaw_kd: GainSet::YAW_KD,
        }
    }
}

impl GainsFile {
    pub fn resolve(&self, p: &RobotParams) -> Result<GainSet, ConfigError> {
        let k = match self.source {
            GainSource::Synthesized => {
                synthesize(p, &self.weights.into(), self.sample_time).map_err(ConfigError::Synthesis)?.k
            }
            GainSource::Explicit => {
                let k = self.k.ok_or(ConfigError::Synthesis(wip_core::Error::InvalidConfig(
                    "source = \"explicit\" needs a k vector",
                )))?;
                self.convention.adapt(k, self.scale)
            }
            GainSource::Hardware => self.convention.adapt(HARDWARE_BALANCE_GAIN, self.scale),
        };
        let g = GainSet { k, hip_kp: self.hip_kp, hip_kd: self.hip_kd, yaw_kp: self.yaw_kp, yaw_kd: self.yaw_kd };
        g.validate().map_err(ConfigError::Synthesis)?;
        Ok(g)
    }
}

pub fn load_gains(path: &Path, p: &RobotParams) -> Result<GainSet, ConfigError> {
    let f: GainsFile = parse(path)?;
    f.resolve(p).map_err(|e| match e {
        ConfigError::Synthesis(source) => ConfigError::Invalid { path: path.to_owned(), source },
        other => other,
    })
}

/// Mapping argument: a preset name or a file.
pub fn resolve_mapping(arg: &str) -> Result<MappingConfig, ConfigError> {
    match arg {
        "velocity" => Ok(MappingConfig::default()),
        "acceleration" => Ok(MappingConfig::default().with_mode(MappingMode::Acceleration)),
        "sprint" => Ok(MappingConfig::sprint()),
        path => load_mapping(Path::new(path)),
    }
}

/// Course argument: a preset name or a file.
pub fn resolve_course(arg: &str) -> Result<CourseSpec, ConfigError> {
    match arg {
        "3-cone" | "three-cone" => Ok(CourseSpec::three_cone()),
        "straight-line" | "straight" => Ok(CourseSpec::straight_line()),
        path => load_course(Path::new(path)),
    }
}
