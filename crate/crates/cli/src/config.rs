//! Run configuration: defaults, JSON file, flag overrides and validation.

use hrg_core::noise::alpha;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Largest finest lattice a command may allocate.
pub const MAX_POINTS: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub l: usize,
    pub d: usize,
    #[serde(rename = "Nmax")]
    pub nmax: usize,
    pub g: f64,
    pub r: f64,
    pub kappa_s: f64,
    pub seed: u64,
    pub samples: usize,
    pub output_dir: PathBuf,
    pub dense_cap: usize,
    pub condition_threshold: f64,
    /// κ weight of the convergence distances.
    pub distance_kappa: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            l: 3,
            d: 2,
            nmax: 4,
            g: 0.1,
            r: 1.0,
            kappa_s: hrg_core::norms::DEFAULT_KAPPA_S,
            seed: 20261016,
            samples: 1000,
            output_dir: PathBuf::from("hrg-out"),
            dense_cap: hrg_core::operators::DEFAULT_DENSE_CAP,
            condition_threshold: hrg_core::linalg::DEFAULT_CONDITION_THRESHOLD,
            distance_kappa: 0.6,
        }
    }
}

/// Values given on the command line; each one overrides the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub l: Option<usize>,
    pub d: Option<usize>,
    pub nmax: Option<usize>,
    pub g: Option<f64>,
    pub r: Option<f64>,
    pub kappa_s: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub dense_cap: Option<usize>,
    pub condition_threshold: Option<f64>,
    pub distance_kappa: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Partial file contents: absent keys keep their defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(rename = "L")]
    l: Option<usize>,
    d: Option<usize>,
    #[serde(rename = "Nmax")]
    nmax: Option<usize>,
    g: Option<f64>,
    r: Option<f64>,
    kappa_s: Option<f64>,
    seed: Option<u64>,
    samples: Option<usize>,
    output_dir: Option<PathBuf>,
    dense_cap: Option<usize>,
    condition_threshold: Option<f64>,
    distance_kappa: Option<f64>,
}

/// Builds the config from `base` (command defaults), then the file at
/// `path`, then `flags`, and validates the result.
pub fn load_config(
    base: RunConfig,
    path: Option<&Path>,
    flags: &Overrides,
) -> Result<RunConfig, ConfigError> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            if text.trim().is_empty() {
                FileConfig::default()
            } else {
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_path_buf(),
                    source,
                })?
            }
        }
        None => FileConfig::default(),
    };
    let c = RunConfig {
        l: flags.l.or(file.l).unwrap_or(base.l),
        d: flags.d.or(file.d).unwrap_or(base.d),
        nmax: flags.nmax.or(file.nmax).unwrap_or(base.nmax),
        g: flags.g.or(file.g).unwrap_or(base.g),
        r: flags.r.or(file.r).unwrap_or(base.r),
        kappa_s: flags.kappa_s.or(file.kappa_s).unwrap_or(base.kappa_s),
        seed: flags.seed.or(file.seed).unwrap_or(base.seed),
        samples: flags.samples.or(file.samples).unwrap_or(base.samples),
        output_dir: flags
            .output_dir
            .clone()
            .or(file.output_dir)
            .unwrap_or(base.output_dir),
        dense_cap: flags.dense_cap.or(file.dense_cap).unwrap_or(base.dense_cap),
        condition_threshold: flags
            .condition_threshold
            .or(file.condition_threshold)
            .unwrap_or(base.condition_threshold),
        distance_kappa: flags
            .distance_kappa
            .or(file.distance_kappa)
            .unwrap_or(base.distance_kappa),
    };
    let problems = c.violations();
    if problems.is_empty() {
        Ok(c)
    } else {
        Err(ConfigError::Invalid(problems))
    }
}

impl RunConfig {
    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.l < 3 || self.l.is_multiple_of(2) {
            v.push(format!("L must be odd and at least 3 (got {})", self.l));
        }
        if !(1..=3).contains(&self.d) {
            v.push(format!("d must be 1, 2 or 3 (got {})", self.d));
        }
        if self.nmax < 1 {
            v.push("Nmax must be at least 1".into());
        }
        // g = 0 is the noiseless problem; commands that need Ω_g reject it.
        if !(0.0..=1.0).contains(&self.g) {
            v.push(format!("g must lie in [0, 1] (got {})", self.g));
        }
        if self.r.is_nan() || self.r < 1.0 || self.r.is_infinite() {
            v.push(format!("r must be at least 1 (got {})", self.r));
        }
        let a = alpha(self.d.clamp(1, 3));
        if !(self.kappa_s > 0.0 && self.kappa_s < a) {
            v.push(format!(
                "kappa_s must lie in (0, {a}) (got {})",
                self.kappa_s
            ));
        }
        if !(self.distance_kappa > 0.0 && self.distance_kappa < a) {
            v.push(format!(
                "distance_kappa must lie in (0, {a}) (got {})",
                self.distance_kappa
            ));
        }
        if self.samples < 1 {
            v.push("samples must be at least 1".into());
        }
        if self.dense_cap < 1 {
            v.push("dense_cap must be at least 1".into());
        }
        if self.condition_threshold.is_nan() || self.condition_threshold <= 1.0 {
            v.push(format!(
                "condition_threshold must exceed 1 (got {})",
                self.condition_threshold
            ));
        }
        if self.l >= 3 && (1..=3).contains(&self.d) {
            let points = (self.l as u128).checked_pow((self.nmax * self.d) as u32);
            if points.is_none_or(|p| p > MAX_POINTS) {
                v.push(format!("L^(Nmax d) exceeds the cap of {MAX_POINTS} points"));
            }
        }
        v
    }

    /// SHA-256 of the canonical JSON of the config with `output_dir` cleared,
    /// so the hash names the experiment rather than where it was written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serialises");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}
