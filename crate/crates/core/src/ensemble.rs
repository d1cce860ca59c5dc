//! Ensemble of imaginary-time evolved product states and the weighted
//! thermal average built from it.
//!
//! Each member starts from a Gaussian product state, optionally evolves in
//! real time, and then evolves in imaginary time. Its inverse temperature is
//! reconstructed from the energy moments,
//! `β(τ) = −∫₀^τ dτ' σ⁻²(τ') dE/dτ'`, so the optimizer's own time scale never
//! enters. The unnormalized member norm follows from
//! `ln Z(β) = ln Z(0) − ∫₀^β E(β') dβ'`, and the thermal energy is the
//! `Z`-weighted member average.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ansatz::{random_cps, LstmShape, LstmWavefunction};
use crate::error::{Error, Result};
use crate::lattice::XyChain;
use crate::signal::{
    cumulative_trapezoid, derivative_savgol, invert_map, monotone_prefix, savgol, Pchip,
};
use crate::tdvp::{Evolver, EvolverConfig, StepRecord, TimeMode};

/// Smoothing and reparameterization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingConfig {
    pub window: usize,
    pub order: usize,
    /// Lower bound applied to `σ²` before dividing.
    pub sigma2_floor: f64,
    /// Consecutive floored steps after which a member counts as converged.
    pub floor_run: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window: 21,
            order: 3,
            sigma2_floor: 1e-6,
            floor_run: 10,
        }
    }
}

/// Why a member stopped contributing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermReason {
    /// Reached the target inverse temperature, or the variance stayed at the
    /// floor (converged to an eigenstate).
    Completed,
    /// `|Δβ/Δτ|` exceeded the threshold.
    Threshold,
    /// `β(τ)` stopped increasing.
    Spike,
    /// A step produced non-finite values or a degenerate solve.
    StepRejected,
    /// The step budget ran out before any other condition.
    StepBudget,
}

impl TermReason {
    pub const ALL: [TermReason; 5] = [
        TermReason::Completed,
        TermReason::Threshold,
        TermReason::Spike,
        TermReason::StepRejected,
        TermReason::StepBudget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TermReason::Completed => "completed",
            TermReason::Threshold => "threshold",
            TermReason::Spike => "spike",
            TermReason::StepRejected => "step_rejected",
            TermReason::StepBudget => "step_budget",
        }
    }
}

impl fmt::Display for TermReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How members contribute beyond the largest `β` they reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClampPolicy {
    /// Completed members keep contributing their final energy; all other
    /// members are dropped beyond their range.
    ExtendCompleted,
    /// Every member is dropped beyond its range.
    Exclude,
}

impl fmt::Display for ClampPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClampPolicy::ExtendCompleted => "extend_completed",
            ClampPolicy::Exclude => "exclude",
        })
    }
}

impl FromStr for ClampPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extend_completed" => Ok(ClampPolicy::ExtendCompleted),
            "exclude" => Ok(ClampPolicy::Exclude),
            other => Err(Error::InvalidArgument(format!(
                "unknown clamp policy '{other}' (expected extend_completed or exclude)"
            ))),
        }
    }
}

/// Recorded steps of one member plus the smoothed moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord<f64>>,
    /// Smoothed `⟨H⟩`, aligned with the finite prefix of `steps`.
    pub smoothed_energy: Vec<f64>,
    /// Smoothed `⟨H²⟩`, aligned with `smoothed_energy`.
    pub smoothed_h2: Vec<f64>,
}

impl Trajectory {
    pub fn new(steps: Vec<StepRecord<f64>>) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn taus(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.tau).collect()
    }

    /// Number of leading records with finite moments.
    pub fn finite_len(&self) -> usize {
        self.steps
            .iter()
            .take_while(|s| s.energy.is_finite() && s.h2.is_finite())
            .count()
    }
}

/// Output of [`reparameterize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Reparam {
    /// `β` at every finite record.
    pub beta: Vec<f64>,
    /// Unfloored `σ² = ⟨H²⟩_s − ⟨H⟩_s²` from the smoothed moments.
    pub sigma2: Vec<f64>,
    /// Length of the strictly increasing prefix of `beta`.
    pub usable_len: usize,
}

/// Maps the trajectory onto inverse temperatures and fills its smoothed
/// moments. Only the leading records with finite moments are used.
pub fn reparameterize(traj: &mut Trajectory, cfg: &SmoothingConfig) -> Result<Reparam> {
    let m = traj.finite_len();
    let taus: Vec<f64> = traj.steps[..m].iter().map(|s| s.tau).collect();
    let e: Vec<f64> = traj.steps[..m].iter().map(|s| s.energy).collect();
    let h2: Vec<f64> = traj.steps[..m].iter().map(|s| s.h2).collect();
    let es = savgol(&e, cfg.window, cfg.order)?;
    let h2s = savgol(&h2, cfg.window, cfg.order)?;
    // Differentiating relative to the first value keeps a constant input
    // exactly constant (zero derivative, no rounding residue).
    let rel: Vec<f64> = e.iter().map(|v| v - e[0]).collect();
    let de = derivative_savgol(&rel, &taus, cfg.window, cfg.order)?;
    let sigma2: Vec<f64> = es.iter().zip(&h2s).map(|(e, h)| h - e * e).collect();
    let integrand: Vec<f64> = de
        .iter()
        .zip(&sigma2)
        .map(|(d, s)| -d / s.max(cfg.sigma2_floor))
        .collect();
    let mut beta = cumulative_trapezoid(&taus, &integrand);
    // Measure from the first record even if the trajectory starts at τ ≠ 0.
    let b0 = beta[0];
    beta.iter_mut().for_each(|b| *b -= b0);
    let usable_len = monotone_prefix(&beta);
    traj.smoothed_energy = es;
    traj.smoothed_h2 = h2s;
    Ok(Reparam {
        beta,
        sigma2,
        usable_len,
    })
}

/// First index `k` with `|β_k − β_{k−1}| / (τ_k − τ_{k−1}) > theta`.
pub fn threshold_cut(beta: &[f64], taus: &[f64], theta: f64) -> Option<usize> {
    let n = beta.len().min(taus.len());
    (1..n).find(|&k| {
        let slope = (beta[k] - beta[k - 1]) / (taus[k] - taus[k - 1]);
        !(slope.abs() <= theta)
    })
}

/// Settings that decide when a member stops.
#[derive(Clone, Debug, PartialEq)]
pub struct StopRules {
    pub smoothing: SmoothingConfig,
    /// Threshold `Θ` on `|dβ/dτ|`.
    pub theta: f64,
    /// Inverse temperature at which a member is complete.
    pub beta_target: f64,
}

/// Post-hoc analysis of a trajectory prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    pub beta: Vec<f64>,
    pub usable_len: usize,
    /// Earliest stopping event, if any.
    pub reason: Option<TermReason>,
}

/// Applies the stopping rules to `traj`. Used both while evolving (on the
/// prefix recorded so far) and afterwards, so a stored trajectory always
/// reproduces the decision that ended it.
pub fn assess(traj: &mut Trajectory, rules: &StopRules) -> Assessment {
    let rejected = traj.steps.last().is_some_and(|s| s.terminated);
    let m = traj.finite_len();
    if m < rules.smoothing.window {
        traj.smoothed_energy = traj.steps[..m].iter().map(|s| s.energy).collect();
        traj.smoothed_h2 = traj.steps[..m].iter().map(|s| s.h2).collect();
        return Assessment {
            beta: vec![0.0; m.min(1)],
            usable_len: m.min(1),
            reason: rejected.then_some(TermReason::StepRejected),
        };
    }
    let rep = match reparameterize(traj, &rules.smoothing) {
        Ok(r) => r,
        Err(_) => {
            return Assessment {
                beta: vec![0.0],
                usable_len: 1,
                reason: Some(TermReason::StepRejected),
            }
        }
    };
    let taus = traj.taus();
    // Candidate events as (index, reason); the usable prefix ends at the
    // earliest one.
    let mut events: Vec<(usize, TermReason)> = Vec::new();
    if rep.usable_len < m {
        events.push((rep.usable_len, TermReason::Spike));
    }
    if let Some(k) = threshold_cut(&rep.beta, &taus[..m], rules.theta) {
        events.push((k, TermReason::Threshold));
    }
    let floor = rules.smoothing.sigma2_floor;
    let run = rules.smoothing.floor_run.max(1);
    let mut streak = 0;
    for (k, s) in rep.sigma2.iter().enumerate() {
        streak = if *s <= floor { streak + 1 } else { 0 };
        if streak == run {
            events.push(((k + 1 - run).max(1), TermReason::Completed));
            break;
        }
    }
    if let Some(k) = rep.beta[..rep.usable_len]
        .iter()
        .position(|&b| b >= rules.beta_target)
    {
        events.push((k + 1, TermReason::Completed));
    }
    if m < traj.steps.len() || rejected {
        events.push((m, TermReason::StepRejected));
    }
    events.sort_by_key(|&(k, r)| (k, r));
    let (usable_len, reason) = match events.first() {
        Some(&(k, r)) => (k.min(rep.usable_len), Some(r)),
        None => (rep.usable_len, None),
    };
    Assessment {
        beta: rep.beta,
        usable_len: usable_len.max(1),
        reason,
    }
}

/// Importance-weight table of one member on a refined `β` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    pub beta: Vec<f64>,
    pub energy: Vec<f64>,
    pub log_z: Vec<f64>,
}

/// Energy and weight of one member at one `β`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemberPoint {
    pub energy: f64,
    pub log_z: f64,
}

/// One evolved and analyzed ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMember {
    pub id: u64,
    pub seed: u64,
    pub trajectory: Trajectory,
    /// `β` at every finite record.
    pub beta_of_tau: Vec<f64>,
    pub usable_len: usize,
    pub term_reason: TermReason,
    pub weights: WeightTable,
}

/// Subintervals per knot interval in the weight integral.
pub const WEIGHT_REFINEMENT: usize = 8;

impl EnsembleMember {
    /// Analyzes recorded steps. `n_steps` is the budget the evolution ran
    /// with, used to tell a spent budget from an early stop.
    pub fn analyze(
        id: u64,
        seed: u64,
        steps: Vec<StepRecord<f64>>,
        rules: &StopRules,
        n_steps: usize,
    ) -> Result<Self> {
        let mut trajectory = Trajectory::new(steps);
        let a = assess(&mut trajectory, rules);
        let term_reason = match a.reason {
            Some(r) => r,
            None if trajectory.steps.len() >= n_steps => TermReason::StepBudget,
            None => TermReason::StepRejected,
        };
        let weights = weight_table(&trajectory, &a.beta, a.usable_len)?;
        Ok(Self {
            id,
            seed,
            trajectory,
            beta_of_tau: a.beta,
            usable_len: a.usable_len,
            term_reason,
            weights,
        })
    }

    /// Largest `β` covered by the usable prefix, or `None` if the member
    /// has no usable record.
    pub fn beta_max(&self) -> Option<f64> {
        self.weights.beta.last().copied()
    }

    /// Energy and `ln Z` at `beta` under `policy`; `None` when the member
    /// does not contribute there.
    pub fn point(&self, beta: f64, policy: ClampPolicy) -> Option<MemberPoint> {
        let t = &self.weights;
        let hi = *t.beta.last()?;
        if beta < 0.0 {
            return None;
        }
        if beta > hi {
            if policy == ClampPolicy::ExtendCompleted && self.term_reason == TermReason::Completed {
                let e = *t.energy.last()?;
                let lz = *t.log_z.last()?;
                return Some(MemberPoint {
                    energy: e,
                    log_z: lz - (beta - hi) * e,
                });
            }
            return None;
        }
        if t.beta.len() == 1 {
            return Some(MemberPoint {
                energy: t.energy[0],
                log_z: t.log_z[0],
            });
        }
        let j = match t.beta.partition_point(|&b| b <= beta) {
            0 => 0,
            p => (p - 1).min(t.beta.len() - 2),
        };
        let f = (beta - t.beta[j]) / (t.beta[j + 1] - t.beta[j]);
        let e = t.energy[j] + f * (t.energy[j + 1] - t.energy[j]);
        let log_z = t.log_z[j] - 0.5 * (beta - t.beta[j]) * (t.energy[j] + e);
        Some(MemberPoint { energy: e, log_z })
    }
}

/// Refined `(β, E, ln Z)` table over the usable prefix: `E(β)` comes from
/// inverting `β(τ)` and interpolating the smoothed energy in `τ`, and
/// `ln Z(β) = −∫₀^β E` by the trapezoid rule with `ln Z(0) = 0`.
pub fn weight_table(traj: &Trajectory, beta: &[f64], usable_len: usize) -> Result<WeightTable> {
    let u = usable_len.min(beta.len()).min(traj.smoothed_energy.len());
    if u == 0 {
        return Ok(WeightTable {
            beta: vec![],
            energy: vec![],
            log_z: vec![],
        });
    }
    let es = &traj.smoothed_energy[..u];
    if u == 1 {
        return Ok(WeightTable {
            beta: vec![beta[0]],
            energy: vec![es[0]],
            log_z: vec![0.0],
        });
    }
    let taus: Vec<f64> = traj.steps[..u].iter().map(|s| s.tau).collect();
    let tau_of_beta = invert_map(&taus, &beta[..u])?;
    let e_of_tau = Pchip::new(taus.clone(), es.to_vec())?;
    let mut bf = Vec::with_capacity((u - 1) * WEIGHT_REFINEMENT + 1);
    let mut ef = Vec::with_capacity(bf.capacity());
    for k in 0..u - 1 {
        for r in 0..WEIGHT_REFINEMENT {
            let b = if r == 0 {
                beta[k]
            } else {
                beta[k] + (beta[k + 1] - beta[k]) * r as f64 / WEIGHT_REFINEMENT as f64
            };
            let e = if r == 0 {
                es[k]
            } else {
                e_of_tau.eval(tau_of_beta.eval(b)?)?
            };
            bf.push(b);
            ef.push(e);
        }
    }
    bf.push(beta[u - 1]);
    ef.push(es[u - 1]);
    let log_z = cumulative_trapezoid(&bf, &ef)
        .into_iter()
        .map(|v| -v)
        .collect();
    Ok(WeightTable {
        beta: bf,
        energy: ef,
        log_z,
    })
}

/// `ln Z` of a member on `grid`, `None` where it does not contribute.
pub fn importance_weights(
    member: &EnsembleMember,
    grid: &[f64],
    policy: ClampPolicy,
) -> Vec<Option<f64>> {
    grid.iter()
        .map(|&b| member.point(b, policy).map(|p| p.log_z))
        .collect()
}

/// Weighted ensemble energy on a grid of inverse temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalCurve {
    pub betas: Vec<f64>,
    /// `NaN` where no member contributes.
    pub energy: Vec<f64>,
    pub n_contributing: Vec<usize>,
    /// Delta-method standard error of the weighted mean.
    pub std_error: Vec<f64>,
    pub exact: Option<Vec<f64>>,
}

impl ThermalCurve {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Grid points without contributing members.
    pub fn omitted(&self) -> Vec<f64> {
        self.betas
            .iter()
            .zip(&self.n_contributing)
            .filter(|(_, &n)| n == 0)
            .map(|(&b, _)| b)
            .collect()
    }

    pub fn with_exact<F: Fn(f64) -> f64>(mut self, f: F) -> Self {
        self.exact = Some(self.betas.iter().map(|&b| f(b)).collect());
        self
    }
}

/// `Σ_i Z_i E_i / Σ_i Z_i` at every grid point, with weights assembled in
/// log space. Members are reduced in the order given.
pub fn thermal_average(
    members: &[EnsembleMember],
    grid: &[f64],
    policy: ClampPolicy,
) -> ThermalCurve {
    let mut energy = Vec::with_capacity(grid.len());
    let mut n_contributing = Vec::with_capacity(grid.len());
    let mut std_error = Vec::with_capacity(grid.len());
    let mut pts: Vec<MemberPoint> = Vec::with_capacity(members.len());
    for &b in grid {
        pts.clear();
        pts.extend(
            members
                .iter()
                .filter_map(|m| m.point(b, policy))
                .filter(|p| p.energy.is_finite() && p.log_z.is_finite()),
        );
        if pts.is_empty() {
            energy.push(f64::NAN);
            n_contributing.push(0);
            std_error.push(f64::NAN);
            continue;
        }
        let m = pts
            .iter()
            .map(|p| p.log_z)
            .fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = pts.iter().map(|p| (p.log_z - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mean = pts.iter().zip(&w).map(|(p, w)| w * p.energy).sum::<f64>() / total;
        let var = pts
            .iter()
            .zip(&w)
            .map(|(p, w)| (w / total).powi(2) * (p.energy - mean).powi(2))
            .sum::<f64>();
        energy.push(mean);
        n_contributing.push(pts.len());
        std_error.push(var.sqrt());
    }
    ThermalCurve {
        betas: grid.to_vec(),
        energy,
        n_contributing,
        std_error,
        exact: None,
    }
}

/// Lower and upper limit of the error integral.
pub const ERROR_WINDOW: (f64, f64) = (1.0, 2.5);

/// `ε = ∫ |E_est(β) − E_exact(β)| dβ` over [`ERROR_WINDOW`], trapezoid on the
/// curve's reported points with the estimate linearly interpolated at the
/// window ends.
pub fn error_metric<F: Fn(f64) -> f64>(curve: &ThermalCurve, exact: F) -> Result<f64> {
    error_metric_on(curve, exact, ERROR_WINDOW.0, ERROR_WINDOW.1)
}

pub fn error_metric_on<F: Fn(f64) -> f64>(
    curve: &ThermalCurve,
    exact: F,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .betas
        .iter()
        .zip(&curve.energy)
        .filter(|(_, e)| e.is_finite())
        .map(|(&b, &e)| (b, e))
        .collect();
    let first = pts.first().map(|p| p.0).unwrap_or(f64::NAN);
    let last = pts.last().map(|p| p.0).unwrap_or(f64::NAN);
    if !(first <= lo && last >= hi) {
        return Err(Error::OutOfRange {
            query: if first > lo { lo } else { hi },
            lo: first,
            hi: last,
        });
    }
    let interp = |q: f64| -> f64 {
        let k = pts.partition_point(|p| p.0 <= q).clamp(1, pts.len() - 1);
        let (b0, e0) = pts[k - 1];
        let (b1, e1) = pts[k];
        if b1 == b0 {
            e0
        } else {
            e0 + (q - b0) / (b1 - b0) * (e1 - e0)
        }
    };
    let mut nodes = vec![(lo, interp(lo))];
    nodes.extend(pts.iter().copied().filter(|p| p.0 > lo && p.0 < hi));
    nodes.push((hi, interp(hi)));
    let mut eps = 0.0;
    for w in nodes.windows(2) {
        let d0 = (w[0].1 - exact(w[0].0)).abs();
        let d1 = (w[1].1 - exact(w[1].0)).abs();
        eps += 0.5 * (w[1].0 - w[0].0) * (d0 + d1);
    }
    Ok(eps)
}

/// Real-time evolution applied before the imaginary-time run.
#[derive(Clone, Debug, PartialEq)]
pub struct PreEvolution {
    pub dt: f64,
    pub t_pre: f64,
}

impl PreEvolution {
    pub fn n_steps(&self) -> usize {
        if self.t_pre <= 0.0 {
            0
        } else {
            (self.t_pre / self.dt).round() as usize
        }
    }
}

/// Everything needed to evolve and analyze an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub n_states: usize,
    pub master_seed: u64,
    pub shape: LstmShape,
    /// Scale of the random layer-1 weights in the product-state network.
    pub init_scale: f64,
    /// Imaginary-time evolver settings.
    pub evolver: EvolverConfig<f64>,
    pub n_steps: usize,
    pub pre_evolution: Option<PreEvolution>,
    pub rules: StopRules,
    pub beta_grid: Vec<f64>,
    pub clamp: ClampPolicy,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.evolver.validate()?;
        if self.evolver.mode != TimeMode::Imaginary {
            return bad("ensemble evolver must run in imaginary time".into());
        }
        if self.n_states == 0 {
            return bad("n_states must be positive".into());
        }
        if !(self.rules.theta > 0.0) {
            return bad(format!("theta must be positive, got {}", self.rules.theta));
        }
        if !(self.rules.smoothing.sigma2_floor > 0.0) {
            return bad("sigma2_floor must be positive".into());
        }
        if let Some(pre) = &self.pre_evolution {
            if !(pre.dt > 0.0) || !(pre.t_pre >= 0.0) {
                return bad("pre-evolution needs dt > 0 and t_pre >= 0".into());
            }
        }
        if self.beta_grid.is_empty()
            || monotone_prefix(&self.beta_grid) != self.beta_grid.len()
            || self.beta_grid[0] < 0.0
        {
            return bad("beta grid must be nonnegative and strictly increasing".into());
        }
        Ok(())
    }
}

/// Seed of member `id`: a SplitMix64 step over the master seed and the id.
pub fn member_seed(master_seed: u64, id: u64) -> u64 {
    let mut z = master_seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw output of one member's evolution.
#[derive(Clone, Debug)]
pub struct MemberRun {
    pub id: u64,
    pub seed: u64,
    pub steps: Vec<StepRecord<f64>>,
    pub final_state: LstmWavefunction<f64>,
}

/// Builds, pre-evolves and imaginary-time evolves member `id`.
pub fn run_member(model: &XyChain<f64>, cfg: &EnsembleConfig, id: u64) -> Result<MemberRun> {
    let seed = member_seed(cfg.master_seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps = random_cps::<f64, _>(&mut rng, model.n_sites());
    let mut w = LstmWavefunction::product_state(cfg.shape, &amps, &mut rng, cfg.init_scale)?;
    if let Some(pre) = &cfg.pre_evolution {
        let steps = pre.n_steps();
        if steps > 0 {
            let real = EvolverConfig {
                dtau: pre.dt,
                mode: TimeMode::Real,
                ..cfg.evolver.clone()
            };
            let ev = Evolver::new(model, real)?;
            let hist = ev.evolve(&mut w, &mut rng, steps, |_| false)?;
            if hist.last().is_some_and(|r| r.terminated) {
                return Ok(MemberRun {
                    id,
                    seed,
                    steps: vec![],
                    final_state: w,
                });
            }
        }
    }
    let ev = Evolver::new(model, cfg.evolver.clone())?;
    let rules = cfg.rules.clone();
    let steps = ev.evolve(&mut w, &mut rng, cfg.n_steps, |hist| {
        let mut t = Trajectory::new(hist.to_vec());
        assess(&mut t, &rules).reason.is_some()
    })?;
    Ok(MemberRun {
        id,
        seed,
        steps,
        final_state: w,
    })
}

/// Members and curve of a finished ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub members: Vec<EnsembleMember>,
    pub curve: ThermalCurve,
}

/// Counts of termination reasons, in [`TermReason::ALL`] order.
pub fn tally(members: &[EnsembleMember]) -> Vec<(TermReason, usize)> {
    TermReason::ALL
        .iter()
        .map(|&r| (r, members.iter().filter(|m| m.term_reason == r).count()))
        .collect()
}

/// Fails if no member contributes at the first grid point.
pub fn check_coverage(members: &[EnsembleMember], curve: &ThermalCurve) -> Result<()> {
    if curve.n_contributing.first().copied().unwrap_or(0) == 0 {
        let causes: Vec<String> = tally(members)
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(r, n)| format!("{r}: {n}"))
            .collect();
        return Err(Error::NoContributingMembers(format!(
            "no member reaches beta = {}; termination reasons {{{}}}",
            curve.betas.first().copied().unwrap_or(f64::NAN),
            causes.join(", ")
        )));
    }
    Ok(())
}

/// Evolves all members in parallel and reduces them in id order.
pub fn run_ensemble(model: &XyChain<f64>, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let members = (0..cfg.n_states as u64)
        .into_par_iter()
        .map(|id| {
            let run = run_member(model, cfg, id)?;
            EnsembleMember::analyze(id, run.seed, run.steps, &cfg.rules, cfg.n_steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = thermal_average(&members, &cfg.beta_grid, cfg.clamp);
    check_coverage(&members, &curve)?;
    Ok(EnsembleResult { members, curve })
}

/// Uniform grid `start, start + step, …` up to `stop` (inclusive within
/// rounding).
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid grid start={start} stop={stop} step={step}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    // Rounding to 12 decimals removes the accumulated binary residue, so
    // 29 × 0.05 becomes 1.45 rather than 1.4500000000000002.
    Ok((0..=n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}
