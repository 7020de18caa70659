//! Run configuration: a TOML file with `[system]`, `[truncation]` and `[run]`
//! sections. Every key is optional; defaults reproduce the driven three-level
//! toy model.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{FloquetModel, SystemSpec, Truncation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub levels: Vec<f64>,
    pub omega: f64,
    pub lambda: f64,
    pub hbar: f64,
    pub mass: f64,
    pub density: f64,
    pub coupling_strengths: Vec<f64>,
    /// Overlap rows, each entry `[re, im]`. Empty means the toy-model overlaps.
    pub coupling_vectors: Vec<Vec<[f64; 2]>>,
    pub drive_profile: Vec<i32>,
}

impl Default for SystemSection {
    fn default() -> Self {
        let s = SystemSpec::toy_model();
        SystemSection {
            levels: s.levels,
            omega: s.omega,
            lambda: s.lambda_drive,
            hbar: s.hbar,
            mass: s.mass,
            density: s.density,
            coupling_strengths: s.coupling_strengths,
            coupling_vectors: Vec::new(),
            drive_profile: s.drive_profile,
        }
    }
}

/// A geometric β sequence `start · ratio^k`, `k = 0..count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometric {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Inverse temperatures in units of `1/(E_2 − E_1)`.
    pub beta_list: Vec<f64>,
    /// Alternative to `beta_list`, same units.
    pub beta_geometric: Option<Geometric>,
    /// β → 0 extrapolation sequence, same units.
    pub beta0_sequence: Geometric,
    pub lambda_list: Vec<f64>,
    /// Finite-difference step for the β = 0 curvature, same units.
    pub beta_fd: f64,
    /// High-temperature slope grid, same units.
    pub slope_grid: Vec<f64>,
    /// Probe momentum for the β → ∞ limit, in units of `sqrt(2m(E_2 − E_1))`.
    pub p_min: f64,
    /// Momenta probed by the unitarity checks.
    pub unitarity_points: usize,
    pub converge_e_cut: Vec<f64>,
    pub converge_nu_cut: Vec<u32>,
    pub converge_beta: Vec<f64>,
    pub dump_p: f64,
    pub dump_j_in: usize,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            beta_list: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            beta_geometric: None,
            beta0_sequence: Geometric { start: 0.05, ratio: 0.5, count: 5 },
            lambda_list: (0..=8).map(|k| 0.25 * k as f64).collect(),
            beta_fd: 0.005,
            slope_grid: crate::ness::DEFAULT_SLOPE_GRID.to_vec(),
            p_min: crate::rates::DEFAULT_P_MIN,
            unitarity_points: 20,
            converge_e_cut: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            converge_nu_cut: vec![1, 2, 3, 4],
            converge_beta: vec![0.1, 0.5, 5.0],
            dump_p: 1.3,
            dump_j_in: 1,
            output_dir: None,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub truncation: Truncation,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn spec(&self) -> SystemSpec {
        let s = &self.system;
        let coupling_vectors = if s.coupling_vectors.is_empty() {
            SystemSpec::toy_model().coupling_vectors
        } else {
            s.coupling_vectors
                .iter()
                .map(|row| row.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
                .collect()
        };
        SystemSpec {
            levels: s.levels.clone(),
            omega: s.omega,
            lambda_drive: s.lambda,
            hbar: s.hbar,
            mass: s.mass,
            density: s.density,
            coupling_strengths: s.coupling_strengths.clone(),
            coupling_vectors,
            drive_profile: s.drive_profile.clone(),
        }
    }

    /// Validates everything a model construction would, plus the run options.
    pub fn validate(&self) -> Result<()> {
        let spec = self.spec();
        FloquetModel::new(spec.clone(), self.truncation.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if spec.level_gap() == 0.0 {
            return Err(Error::Config("levels 1 and 2 coincide; no beta scale".into()));
        }
        let r = &self.run;
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            match v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                Some(x) => Err(Error::Config(format!("{name} entries must be positive, got {x}"))),
                None => Ok(()),
            }
        };
        positive("beta_list", &r.beta_list)?;
        positive("converge_beta", &r.converge_beta)?;
        positive("converge_e_cut", &r.converge_e_cut)?;
        positive("slope_grid", &r.slope_grid)?;
        positive("beta_fd", &[r.beta_fd])?;
        positive("p_min", &[r.p_min])?;
        positive("dump_p", &[r.dump_p])?;
        for g in r.beta_geometric.iter().chain(std::iter::once(&r.beta0_sequence)) {
            if !(g.start > 0.0 && g.ratio > 0.0 && g.ratio < 1.0 && g.count >= 2) {
                return Err(Error::Config(format!("bad geometric sequence {g:?}")));
            }
        }
        if r.lambda_list.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda_list entries must be >= 0".into()));
        }
        if r.slope_grid.len() < 3 {
            return Err(Error::Config("slope_grid needs at least 3 points".into()));
        }
        spec.level_index(r.dump_j_in).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// `1/(E_2 − E_1)`, the unit of every β in the run section.
    pub fn beta_unit(&self) -> f64 {
        1.0 / self.spec().level_gap().abs()
    }

    /// Absolute inverse temperatures for the rate/NESS/diagnostic sweeps.
    pub fn betas(&self) -> Vec<f64> {
        let u = self.beta_unit();
        match &self.run.beta_geometric {
            Some(g) => crate::diagnostics::geometric_sequence(g.start * u, g.ratio, g.count),
            None => self.run.beta_list.iter().map(|b| b * u).collect(),
        }
    }

    pub fn beta0_sequence(&self) -> Vec<f64> {
        let g = &self.run.beta0_sequence;
        crate::diagnostics::geometric_sequence(g.start * self.beta_unit(), g.ratio, g.count)
    }

    pub fn slope_grid(&self) -> Vec<f64> {
        self.run.slope_grid.iter().map(|b| b * self.beta_unit()).collect()
    }

    pub fn beta_fd(&self) -> f64 {
        self.run.beta_fd * self.beta_unit()
    }

    /// Canonical text of the resolved configuration: sorted keys, shortest
    /// round-trip floats, output and cache locations left out.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.run.output_dir = None;
        c.run.cache_dir = None;
        if c.system.coupling_vectors.is_empty() {
            c.system.coupling_vectors = SystemSpec::toy_model()
                .coupling_vectors
                .iter()
                .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                .collect();
        }
        // serde_json maps are ordered by key.
        serde_json::to_value(&c).map(|v| v.to_string()).unwrap_or_default()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Hash of everything a scattering solve depends on: the system and `nu_cut`.
pub fn solver_key(model: &FloquetModel) -> String {
    let text = serde_json::json!({ "spec": model.spec, "nu_cut": model.trunc.nu_cut }).to_string();
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_toy_model() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.spec(), SystemSpec::toy_model());
        assert_eq!(c.truncation, Truncation::default());
        assert_eq!(c.beta_unit(), 2.0);
    }

    #[test]
    fn hash_is_canonical() {
        let a = RunConfig::from_toml("[system]\nomega = 1.35\n[run]\noutput_dir = \"x\"").unwrap();
        let b = RunConfig::from_toml("[run]\ncache_dir = \"y\"\n[system]\nlambda = 0.5").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::from_toml("[system]\nlambda = 0.6").unwrap();
        assert_ne!(a.hash(), c.hash());
        let explicit = RunConfig::from_toml(
            "[system]\ncoupling_vectors = [[[0.5773502691896258, 0.0], [0.5773502691896258, 0.0], [0.5773502691896258, 0.0]], \
             [[-0.28867513459481287, -0.5], [0.5773502691896258, 0.0], [-0.28867513459481287, 0.5]], \
             [[-0.28867513459481287, 0.5], [0.5773502691896258, 0.0], [-0.28867513459481287, -0.5]]]",
        );
        assert!(explicit.is_ok());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[system]\nomega = -1.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[system]\nbogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[truncation]\nquad_points = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[run]\nbeta_list = [0.0]"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("not toml ["), Err(Error::Config(_))));
        assert_eq!(Error::Config(String::new()).exit_code(), 2);
    }

    #[test]
    fn betas_are_in_gap_units() {
        let c = RunConfig::from_toml("[run]\nbeta_list = [1.0, 20.0]").unwrap();
        assert_eq!(c.betas(), vec![2.0, 40.0]);
        let c = RunConfig::from_toml("[run]\nbeta_geometric = { start = 0.4, ratio = 0.5, count = 3 }").unwrap();
        assert_eq!(c.betas(), vec![0.8, 0.4, 0.2]);
        assert_eq!(c.beta0_sequence()[0], 0.1);
    }
}
