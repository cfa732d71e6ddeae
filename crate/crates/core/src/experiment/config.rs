use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::DEFAULT_GRID_STEP;
use crate::source::{NoiseModel, SourceConfig};

/// Centre indices for the three-point CFI table when none are given.
pub const DEFAULT_CENTERING: [usize; 2] = [2, 7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub phases: Vec<f64>,
    /// Detected rounds per phase point.
    pub rounds: u32,
    /// Tomography shots per setting.
    pub shots: u32,
    pub noise: NoiseModel,
    pub seed: u64,
    pub grid_step: f64,
    /// Skip tomography and give Alice the ideal singlet as her model.
    pub ideal_calibration: bool,
    /// Explicit CFI centre indices; `None` uses the defaults that fit.
    pub centering: Option<Vec<usize>>,
    pub abort_threshold: f64,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub endpoint: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phases: (0..=10).map(|k| k as f64 * PI / 10.0).collect(),
            rounds: 100_000,
            shots: 10_000,
            noise: NoiseModel::ideal(),
            seed: 0,
            grid_step: DEFAULT_GRID_STEP,
            ideal_calibration: false,
            centering: None,
            abort_threshold: 0.95,
            output_dir: PathBuf::from("out"),
            endpoint: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: not a number: {v:?}")))
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: not a valid integer: {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: not a boolean: {other:?}"))),
    }
}

pub(crate) fn parse_list<T, F: Fn(&str, &str) -> Result<T>>(key: &str, v: &str, f: F) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| f(key, s)).collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn source(&self) -> SourceConfig {
        SourceConfig { noise: self.noise, seed: self.seed }
    }

    /// Sets one `key = value` entry, as found in a config file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "phases" => self.phases = parse_list(key, value, parse_f64)?,
            "rounds" => self.rounds = parse_int(key, value)?,
            "shots" => self.shots = parse_int(key, value)?,
            "werner_p" => self.noise.werner_p = parse_f64(key, value)?,
            "gamma" => self.noise.dephasing_gamma = parse_f64(key, value)?,
            "eta0" => self.noise.detector_eta0 = parse_f64(key, value)?,
            "eta1" => self.noise.detector_eta1 = parse_f64(key, value)?,
            "seed" => self.seed = parse_int(key, value)?,
            "grid_step" => self.grid_step = parse_f64(key, value)?,
            "ideal" => self.ideal_calibration = parse_bool(key, value)?,
            "centering" => self.centering = Some(parse_list(key, value, parse_int)?),
            "abort_threshold" => self.abort_threshold = parse_f64(key, value)?,
            "out" => self.output_dir = PathBuf::from(value.trim()),
            "endpoint" => self.endpoint = Some(value.trim().to_string()),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file on top of `self`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Centre indices actually used for the CFI table.
    pub fn effective_centering(&self) -> Vec<usize> {
        match &self.centering {
            Some(c) => c.clone(),
            None => DEFAULT_CENTERING.iter().copied().filter(|&c| c >= 1 && c + 1 < self.phases.len()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.phases.is_empty() || self.phases.len() > u16::MAX as usize {
            return bad(format!("{} phase points", self.phases.len()));
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return bad("phases must be finite".into());
        }
        if self.phases.iter().any(|p| !(0.0..=PI).contains(p)) {
            return bad("phases must lie in [0, pi]".into());
        }
        if self.phases.windows(2).any(|w| w[0] >= w[1]) {
            return bad("phases must be strictly increasing".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.shots == 0 {
            return bad("shots must be positive".into());
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.1) {
            return bad(format!("grid_step {} outside (0, 0.1]", self.grid_step));
        }
        if !(0.0..=1.0).contains(&self.abort_threshold) {
            return bad(format!("abort_threshold {} outside [0, 1]", self.abort_threshold));
        }
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(c) = self.effective_centering().into_iter().find(|&c| c == 0 || c + 1 >= self.phases.len()) {
            return bad(format!("centering index {c} has no neighbour on both sides"));
        }
        Ok(())
    }

    /// Every setting that changes results, in a fixed order. Paths and the
    /// transport endpoint are left out.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "phases={} rounds={} shots={} werner_p={} gamma={} eta0={} eta1={} seed={} grid_step={} ideal={} \
             centering={} abort_threshold={}",
            join(&self.phases),
            self.rounds,
            self.shots,
            self.noise.werner_p,
            self.noise.dephasing_gamma,
            self.noise.detector_eta0,
            self.noise.detector_eta1,
            self.seed,
            self.grid_step,
            self.ideal_calibration,
            join(&self.effective_centering()),
            self.abort_threshold,
        );
        s
    }

    /// First 64 bits of SHA-256 over [`Self::canonical`].
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().unwrap())
    }

    /// Comment line written at the top of every output file.
    pub fn header_line(&self) -> String {
        format!("# sqrs-v1 config_hash={:016x} {}", self.hash(), self.canonical())
    }
}
