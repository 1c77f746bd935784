//! TOML run configurations for the CLI subcommands.
//!
//! Every subcommand takes `--config <file>` plus `--seed`, `--paths` and
//! `--out` overrides; the effective (post-override) configuration is what
//! gets hashed into the report metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use allencahn_core::linalg::SolverConfig;
use allencahn_core::noise::{ModeKind, NoiseMode, NoiseModel};

use crate::error::{Error, Result};

fn default_true() -> bool {
    true
}

fn one_f64() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn two_four() -> Vec<f64> {
    vec![2.0, 4.0]
}

fn sine_product_name() -> String {
    "sine-product".into()
}

fn mesh_reference_name() -> String {
    "mesh".into()
}

fn default_out_dir() -> String {
    "out".into()
}

/// One noise mode `f_n` with weight `lambda_n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFile {
    /// "identity", "damped-identity" or "tabulated".
    #[serde(default = "identity_name")]
    pub kind: String,
    #[serde(default = "one_f64")]
    pub lambda: f64,
    /// Tabulated modes only: strictly increasing abscissae.
    #[serde(default)]
    pub ys: Vec<f64>,
    /// Tabulated modes only: values f(ys).
    #[serde(default)]
    pub vals: Vec<f64>,
}

fn identity_name() -> String {
    "identity".into()
}

impl ModeFile {
    pub fn to_mode(&self) -> Result<NoiseMode<f64>> {
        let kind = match self.kind.as_str() {
            "identity" => ModeKind::Identity,
            "damped-identity" => ModeKind::DampedIdentity,
            "tabulated" => ModeKind::Tabulated {
                ys: self.ys.clone(),
                vals: self.vals.clone(),
            },
            other => {
                return Err(Error::Invalid(format!(
                    "unknown mode kind {other:?} (expected identity, damped-identity or tabulated)"
                )))
            }
        };
        if !matches!(kind, ModeKind::Tabulated { .. }) && !(self.ys.is_empty() && self.vals.is_empty())
        {
            return Err(Error::Invalid(format!(
                "mode kind {:?} does not take a table",
                self.kind
            )));
        }
        Ok(NoiseMode {
            lambda: self.lambda,
            kind,
        })
    }
}

fn single_identity() -> Vec<ModeFile> {
    vec![ModeFile {
        kind: identity_name(),
        lambda: 1.0,
        ys: Vec::new(),
        vals: Vec::new(),
    }]
}

/// The model: cubic switch, explicit reaction coefficient and noise modes.
/// "Noise off" is expressed as a single mode with `lambda = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default = "default_true")]
    pub cubic: bool,
    #[serde(default = "one_f64")]
    pub reaction: f64,
    /// Lipschitz bound C_F checked against tabulated modes.
    #[serde(default = "one_f64")]
    pub lipschitz: f64,
    #[serde(default = "single_identity")]
    pub modes: Vec<ModeFile>,
}

impl Default for ModelFile {
    fn default() -> Self {
        Self {
            cubic: true,
            reaction: 1.0,
            lipschitz: 1.0,
            modes: single_identity(),
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> Result<NoiseModel<f64>> {
        if self.modes.is_empty() {
            return Err(Error::Invalid(
                "model needs at least one mode; use lambda = 0 to silence the noise".into(),
            ));
        }
        let modes = self
            .modes
            .iter()
            .map(ModeFile::to_mode)
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseModel::new(modes, self.lipschitz)?)
    }

    pub fn is_silent(&self) -> bool {
        self.modes.iter().all(|m| m.lambda == 0.0)
    }
}

/// Optional linear/nonlinear solver knobs; unset fields keep core defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    pub cg_rel_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub newton_damping: Option<f64>,
}

impl SolverFile {
    pub fn to_solver(&self) -> SolverConfig<f64> {
        let mut s = SolverConfig::default();
        if let Some(v) = self.cg_rel_tol {
            s.cg_rel_tol = v;
        }
        if self.cg_max_iter.is_some() {
            s.cg_max_iter = self.cg_max_iter;
        }
        if let Some(v) = self.newton_tol {
            s.newton_tol = v;
        }
        if let Some(v) = self.newton_max_iter {
            s.newton_max_iter = v;
        }
        if let Some(v) = self.newton_damping {
            s.newton_damping = v;
        }
        s
    }
}

/// Acceptance thresholds checked by the CLI; the process exits 0 only when
/// every configured threshold is met.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceFile {
    /// Every fitted slope must be at least this.
    pub min_slope: Option<f64>,
    /// Every fitted slope must be at most this.
    pub max_slope: Option<f64>,
    /// Probe only: max/min spread of the stability ratios.
    pub max_ratio_spread: Option<f64>,
}

impl AcceptanceFile {
    pub fn is_empty(&self) -> bool {
        self.min_slope.is_none() && self.max_slope.is_none() && self.max_ratio_spread.is_none()
    }
}

/// `simulate` subcommand: one or more single-path runs with snapshot dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub n: u32,
    pub steps: usize,
    #[serde(default = "one_f64")]
    pub t_horizon: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// First path index to simulate.
    #[serde(default)]
    pub path_index: u64,
    /// Number of consecutive path indices to simulate.
    #[serde(default = "one_usize")]
    pub paths: usize,
    /// Snapshots are stored every this many steps (plus j = 0 and j = J).
    #[serde(default = "one_usize")]
    pub checkpoint_stride: usize,
    /// "sine-product" or "zero".
    #[serde(default = "sine_product_name")]
    pub initial: String,
    #[serde(default = "two_four")]
    pub q_list: Vec<f64>,
    #[serde(default)]
    pub allow_tau_above_h2: bool,
    #[serde(default = "default_out_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub solver: SolverFile,
}

impl SimulateFile {
    pub fn validate(&self) -> Result<()> {
        validate_initial(&self.initial)?;
        validate_exponents("q_list", &self.q_list)?;
        if self.paths == 0 {
            return Err(Error::Invalid("paths must be at least 1".into()));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::Invalid("checkpoint_stride must be at least 1".into()));
        }
        self.model.to_model()?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(p) = o.paths {
            self.paths = p;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.display().to_string();
        }
    }
}

/// `spatial-study` subcommand: fixed fine time step, mesh family, and either
/// a fine-mesh reference run or the closed-form heat+reaction solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialFile {
    #[serde(default = "spatial_levels")]
    pub levels: Vec<u32>,
    #[serde(default = "spatial_ref_n")]
    pub reference_n: u32,
    #[serde(default = "spatial_t")]
    pub t_horizon: f64,
    /// Step count J shared by every level; tau = t_horizon / steps.
    #[serde(default = "spatial_steps")]
    pub steps: usize,
    /// Errors are evaluated every this many steps (plus j = J).
    #[serde(default = "one_usize")]
    pub checkpoint_stride: usize,
    #[serde(default = "sixty_four")]
    pub m_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "two_four")]
    pub p_list: Vec<f64>,
    #[serde(default = "two_four")]
    pub q_list: Vec<f64>,
    #[serde(default = "sine_product_name")]
    pub initial: String,
    /// "mesh" compares against a reference run on `reference_n`;
    /// "exact-heat" compares against e^{(r - 3 pi^2) t} v (deterministic
    /// runs only: cubic off, all lambdas zero, one path).
    #[serde(default = "mesh_reference_name")]
    pub reference: String,
    #[serde(default)]
    pub allow_tau_above_h2: bool,
    #[serde(default = "default_out_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub acceptance: AcceptanceFile,
}

fn spatial_levels() -> Vec<u32> {
    vec![4, 8, 16]
}

fn spatial_ref_n() -> u32 {
    32
}

fn spatial_t() -> f64 {
    0.01
}

fn spatial_steps() -> usize {
    100
}

fn sixty_four() -> usize {
    64
}

impl SpatialFile {
    pub fn tau(&self) -> f64 {
        self.t_horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        validate_initial(&self.initial)?;
        validate_exponents("p_list", &self.p_list)?;
        validate_exponents("q_list", &self.q_list)?;
        if self.levels.is_empty() {
            return Err(Error::Invalid("levels must not be empty".into()));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("levels must be strictly increasing".into()));
        }
        if self.steps == 0 || self.m_paths == 0 || self.checkpoint_stride == 0 {
            return Err(Error::Invalid(
                "steps, m_paths and checkpoint_stride must be at least 1".into(),
            ));
        }
        match self.reference.as_str() {
            "mesh" => {
                for &n in &self.levels {
                    let nested = n < self.reference_n
                        && self.reference_n % n == 0
                        && (self.reference_n / n).is_power_of_two();
                    if !nested {
                        return Err(Error::Invalid(format!(
                            "level n={n} does not nest dyadically below reference_n={}",
                            self.reference_n
                        )));
                    }
                }
            }
            "exact-heat" => {
                if self.model.cubic || !self.model.is_silent() {
                    return Err(Error::Invalid(
                        "reference = \"exact-heat\" needs cubic = false and all lambdas zero"
                            .into(),
                    ));
                }
                if self.initial != "sine-product" {
                    return Err(Error::Invalid(
                        "reference = \"exact-heat\" needs the sine-product initial state".into(),
                    ));
                }
                if self.m_paths != 1 {
                    return Err(Error::Invalid(
                        "reference = \"exact-heat\" is deterministic; set m_paths = 1".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Invalid(format!(
                    "unknown reference {other:?} (expected \"mesh\" or \"exact-heat\")"
                )))
            }
        }
        self.model.to_model()?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(p) = o.paths {
            self.m_paths = p;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.display().to_string();
        }
    }
}

/// `temporal-study` subcommand: tau_l = T 4^{-l} with n_l = n0 2^l so that
/// h is proportional to sqrt(tau), against a fine-tau reference run or the
/// exact solution of the linear multiplicative model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalFile {
    #[serde(default = "two_u32")]
    pub n0: u32,
    /// Level exponents l; level l runs tau = T 4^{-l} on the n0 2^l mesh.
    #[serde(default = "temporal_levels")]
    pub levels: Vec<u32>,
    /// Reference exponent; the reference runs tau = T 4^{-ref_level}.
    #[serde(default = "six_u32")]
    pub ref_level: u32,
    /// Reference mesh; defaults to n0 2^ref_level when unset.
    #[serde(default)]
    pub ref_n: Option<u32>,
    #[serde(default = "temporal_t")]
    pub t_horizon: f64,
    #[serde(default = "sixty_four")]
    pub m_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "two_four")]
    pub p_list: Vec<f64>,
    #[serde(default = "two_four")]
    pub q_list: Vec<f64>,
    #[serde(default = "sine_product_name")]
    pub initial: String,
    /// "mesh" compares against the fine-tau reference run; "exact-linear"
    /// compares against the exact transform solution of the linear model
    /// (cubic off, one identity mode) started from the principal discrete
    /// eigenvector on the fixed n0 mesh.
    #[serde(default = "mesh_reference_name")]
    pub reference: String,
    #[serde(default)]
    pub allow_tau_above_h2: bool,
    #[serde(default = "default_out_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub acceptance: AcceptanceFile,
}

fn two_u32() -> u32 {
    2
}

fn six_u32() -> u32 {
    6
}

fn temporal_levels() -> Vec<u32> {
    vec![1, 2, 3, 4]
}

fn temporal_t() -> f64 {
    0.1
}

impl TemporalFile {
    pub fn level_n(&self, level: u32) -> u32 {
        self.n0 << level
    }

    pub fn level_steps(&self, level: u32) -> usize {
        1usize << (2 * level)
    }

    pub fn reference_n(&self) -> u32 {
        self.ref_n.unwrap_or(self.n0 << self.ref_level)
    }

    pub fn validate(&self) -> Result<()> {
        validate_initial(&self.initial)?;
        validate_exponents("p_list", &self.p_list)?;
        validate_exponents("q_list", &self.q_list)?;
        if self.levels.is_empty() {
            return Err(Error::Invalid("levels must not be empty".into()));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("levels must be strictly increasing".into()));
        }
        if self.n0 == 0 || self.m_paths == 0 {
            return Err(Error::Invalid("n0 and m_paths must be at least 1".into()));
        }
        let lmax = *self.levels.last().expect("nonempty");
        if self.ref_level <= lmax {
            return Err(Error::Invalid(format!(
                "ref_level = {} must exceed the finest study level {lmax}",
                self.ref_level
            )));
        }
        if self.ref_level > 10 {
            return Err(Error::Invalid(
                "ref_level above 10 (over 10^6 reference steps) is not supported".into(),
            ));
        }
        if self.level_n(*self.levels.first().expect("nonempty")) < 2 {
            return Err(Error::Invalid(
                "coarsest level mesh needs n >= 2 for interior dofs".into(),
            ));
        }
        match self.reference.as_str() {
            "mesh" => {
                let rn = self.reference_n();
                for &l in &self.levels {
                    let n = self.level_n(l);
                    let nested =
                        n == rn || (n < rn && rn % n == 0 && (rn / n).is_power_of_two());
                    if !nested {
                        return Err(Error::Invalid(format!(
                            "level mesh n={n} does not nest into reference mesh n={rn}"
                        )));
                    }
                }
            }
            "exact-linear" => {
                if self.model.cubic
                    || self.model.modes.len() != 1
                    || self.model.modes[0].kind != "identity"
                {
                    return Err(Error::Invalid(
                        "reference = \"exact-linear\" needs cubic = false and a single identity mode"
                            .into(),
                    ));
                }
            }
            other => {
                return Err(Error::Invalid(format!(
                    "unknown reference {other:?} (expected \"mesh\" or \"exact-linear\")"
                )))
            }
        }
        self.model.to_model()?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(p) = o.paths {
            self.m_paths = p;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.display().to_string();
        }
    }
}

/// One probe mode: weight plus the (time-constant) integrand field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeModeFile {
    #[serde(default = "one_f64")]
    pub lambda: f64,
    /// "sine-product" or "ones" (all interior dof coefficients 1).
    #[serde(default = "sine_product_name")]
    pub integrand: String,
}

fn probe_modes() -> Vec<ProbeModeFile> {
    vec![ProbeModeFile {
        lambda: 1.0,
        integrand: sine_product_name(),
    }]
}

/// `probe-regularity` subcommand: stability ratio of the discrete stochastic
/// convolution across a ladder of step counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFile {
    #[serde(default = "eight_u32")]
    pub n: u32,
    #[serde(default = "probe_j_list")]
    pub j_list: Vec<usize>,
    #[serde(default = "four_f64")]
    pub p: f64,
    #[serde(default = "four_f64")]
    pub q: f64,
    #[serde(default = "two_fifty_six")]
    pub m_paths: usize,
    #[serde(default = "one_f64")]
    pub t_horizon: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "probe_modes")]
    pub modes: Vec<ProbeModeFile>,
    #[serde(default = "default_out_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub acceptance: AcceptanceFile,
}

fn eight_u32() -> u32 {
    8
}

fn four_f64() -> f64 {
    4.0
}

fn two_fifty_six() -> usize {
    256
}

fn probe_j_list() -> Vec<usize> {
    vec![8, 16, 32, 64]
}

impl ProbeFile {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Invalid("probe needs at least one mode".into()));
        }
        for m in &self.modes {
            if !matches!(m.integrand.as_str(), "sine-product" | "ones") {
                return Err(Error::Invalid(format!(
                    "unknown integrand {:?} (expected \"sine-product\" or \"ones\")",
                    m.integrand
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(p) = o.paths {
            self.m_paths = p;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.display().to_string();
        }
    }
}

/// CLI-level overrides applied on top of the parsed file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

fn validate_initial(name: &str) -> Result<()> {
    match name {
        "sine-product" | "zero" => Ok(()),
        other => Err(Error::Invalid(format!(
            "unknown initial {other:?} (expected \"sine-product\" or \"zero\")"
        ))),
    }
}

fn validate_exponents(what: &str, list: &[f64]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Invalid(format!("{what} must not be empty")));
    }
    for &e in list {
        if !(e >= 2.0) || !e.is_finite() {
            return Err(Error::Invalid(format!(
                "{what} entries must be finite and at least 2, got {e}"
            )));
        }
    }
    Ok(())
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| Error::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Short content hash of the effective configuration, for report metadata.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}
