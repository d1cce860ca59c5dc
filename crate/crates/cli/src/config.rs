//! Run configuration: a TOML file with a fixed field tree. Unknown keys are
//! rejected and every numeric field is range-checked at load time.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use metts_core::ensemble::{
    uniform_grid, ClampPolicy, EnsembleConfig, PreEvolution, SmoothingConfig, StopRules,
};
use metts_core::tdvp::{EvolverConfig, Solver};
use metts_core::{Boundary, LstmShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub ansatz: AnsatzSection,
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub pre_evolution: PreEvolutionSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub smoothing: SmoothingSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_sites: usize,
    #[serde(default = "default_boundary")]
    pub boundary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzSection {
    pub d1: usize,
    pub d2: usize,
    /// Scale of the random layer-1 input weights at initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for AnsatzSection {
    fn default() -> Self {
        Self {
            d1: 10,
            d2: 2,
            init_scale: default_init_scale(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub dtau: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    #[serde(default = "default_reg_shift")]
    pub reg_shift: f64,
    #[serde(default = "default_reg_floor")]
    pub reg_floor: f64,
    #[serde(default = "default_pinv_cutoff")]
    pub pinv_cutoff: f64,
    /// `"ntk"` or `"sr"`.
    #[serde(default = "default_solver")]
    pub solver: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreEvolutionSection {
    pub enabled: bool,
    #[serde(default = "default_pre_dt")]
    pub dt: f64,
    #[serde(default = "default_t_pre", alias = "T_pre")]
    pub t_pre: f64,
}

impl Default for PreEvolutionSection {
    fn default() -> Self {
        Self {
            enabled: false,
            dt: default_pre_dt(),
            t_pre: default_t_pre(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_states: usize,
    pub master_seed: u64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_sigma2_floor")]
    pub sigma2_floor: f64,
    /// `"extend_completed"` or `"exclude"`.
    #[serde(default = "default_clamp")]
    pub clamp_policy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    pub window: usize,
    pub order: usize,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            window: 21,
            order: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub beta_grid: BetaGrid,
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            beta_grid: BetaGrid::default(),
            directory: default_directory(),
        }
    }
}

/// Uniform grid `start, start + step, …, stop`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 3.0,
            step: 0.05,
        }
    }
}

fn default_boundary() -> String {
    "periodic".into()
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_reg_shift() -> f64 {
    1e-4
}
fn default_reg_floor() -> f64 {
    1e-10
}
fn default_pinv_cutoff() -> f64 {
    1e-10
}
fn default_solver() -> String {
    "ntk".into()
}
fn default_pre_dt() -> f64 {
    0.01
}
fn default_t_pre() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    10.0
}
fn default_sigma2_floor() -> f64 {
    1e-6
}
fn default_clamp() -> String {
    "extend_completed".into()
}
fn default_directory() -> PathBuf {
    PathBuf::from("metts-out")
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be a positive finite number, got {v}");
    }
    Ok(())
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        bail!("{name} must be a nonnegative finite number, got {v}");
    }
    Ok(())
}

pub fn parse_boundary(s: &str) -> Result<Boundary> {
    match s {
        "open" => Ok(Boundary::Open),
        "periodic" => Ok(Boundary::Periodic),
        other => bail!("model.boundary must be \"open\" or \"periodic\", got \"{other}\""),
    }
}

pub fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Open => "open",
        Boundary::Periodic => "periodic",
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Loads `path`, applies `key.path=value` overrides (values in TOML
    /// syntax, bare strings allowed) and validates the result.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut table: toml::Table = toml::from_str(&text).context("invalid config")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.n_sites < 2 {
            bail!("model.n_sites must be at least 2, got {}", m.n_sites);
        }
        parse_boundary(&m.boundary)?;
        let a = &self.ansatz;
        if a.d1 == 0 {
            bail!("ansatz.d1 must be positive");
        }
        if a.d2 == 0 {
            bail!("ansatz.d2 must be positive");
        }
        nonnegative("ansatz.init_scale", a.init_scale)?;
        let e = &self.evolution;
        positive("evolution.dtau", e.dtau)?;
        if e.n_steps == 0 {
            bail!("evolution.n_steps must be positive");
        }
        if e.n_samples == 0 {
            bail!("evolution.n_samples must be positive");
        }
        nonnegative("evolution.reg_shift", e.reg_shift)?;
        nonnegative("evolution.reg_floor", e.reg_floor)?;
        nonnegative("evolution.pinv_cutoff", e.pinv_cutoff)?;
        self.solver()?;
        let p = &self.pre_evolution;
        if p.enabled {
            positive("pre_evolution.dt", p.dt)?;
            nonnegative("pre_evolution.t_pre", p.t_pre)?;
        }
        let en = &self.ensemble;
        if en.n_states == 0 {
            bail!("ensemble.n_states must be positive");
        }
        positive("ensemble.theta", en.theta)?;
        positive("ensemble.sigma2_floor", en.sigma2_floor)?;
        self.clamp()?;
        let s = &self.smoothing;
        if s.window < 3 || s.window.is_multiple_of(2) {
            bail!(
                "smoothing.window must be odd and at least 3, got {}",
                s.window
            );
        }
        if s.order >= s.window {
            bail!(
                "smoothing.order must be below smoothing.window, got {} >= {}",
                s.order,
                s.window
            );
        }
        let g = &self.output.beta_grid;
        nonnegative("output.beta_grid.start", g.start)?;
        positive("output.beta_grid.step", g.step)?;
        if !(g.stop >= g.start && g.stop.is_finite()) {
            bail!(
                "output.beta_grid.stop must be finite and >= start, got {}",
                g.stop
            );
        }
        Ok(())
    }

    pub fn boundary(&self) -> Boundary {
        parse_boundary(&self.model.boundary).expect("validated")
    }

    pub fn solver(&self) -> Result<Solver> {
        match self.evolution.solver.as_str() {
            "ntk" => Ok(Solver::NtkTrick),
            "sr" => Ok(Solver::DirectSr),
            other => bail!("evolution.solver must be \"ntk\" or \"sr\", got \"{other}\""),
        }
    }

    pub fn clamp(&self) -> Result<ClampPolicy> {
        self.ensemble.clamp_policy.parse().map_err(|_| {
            anyhow::anyhow!(
                "ensemble.clamp_policy must be \"extend_completed\" or \"exclude\", got \"{}\"",
                self.ensemble.clamp_policy
            )
        })
    }

    pub fn beta_grid(&self) -> Result<Vec<f64>> {
        let g = &self.output.beta_grid;
        Ok(uniform_grid(g.start, g.stop, g.step)?)
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig> {
        let e = &self.evolution;
        let evolver = EvolverConfig {
            reg_shift: e.reg_shift,
            reg_floor: e.reg_floor,
            pinv_cutoff: e.pinv_cutoff,
            ..EvolverConfig::imaginary(e.dtau, e.n_samples).with_solver(self.solver()?)
        };
        let beta_grid = self.beta_grid()?;
        let p = &self.pre_evolution;
        Ok(EnsembleConfig {
            n_states: self.ensemble.n_states,
            master_seed: self.ensemble.master_seed,
            shape: LstmShape::with_hidden(self.model.n_sites, self.ansatz.d1, self.ansatz.d2),
            init_scale: self.ansatz.init_scale,
            evolver,
            n_steps: e.n_steps,
            pre_evolution: p.enabled.then_some(PreEvolution {
                dt: p.dt,
                t_pre: p.t_pre,
            }),
            rules: StopRules {
                smoothing: SmoothingConfig {
                    window: self.smoothing.window,
                    order: self.smoothing.order,
                    sigma2_floor: self.ensemble.sigma2_floor,
                    ..SmoothingConfig::default()
                },
                theta: self.ensemble.theta,
                beta_target: *beta_grid.last().expect("nonempty grid"),
            },
            beta_grid,
            clamp: self.clamp()?,
        })
    }

    /// Canonical TOML text; the basis of both hashes.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form of the whole config.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    /// Hash of the fields that determine a single member's evolution. It
    /// leaves out the ensemble size and the output section, so growing the
    /// ensemble or changing the grid reuses existing members.
    pub fn member_hash(&self) -> String {
        let mut c = self.clone();
        c.ensemble.n_states = 0;
        c.ensemble.clamp_policy.clear();
        c.output = OutputSection::default();
        c.hash()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override '{spec}' must look like section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = path.split_last().expect("split yields one element");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override '{spec}': '{p}' is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
