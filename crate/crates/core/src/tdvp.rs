//! Stochastic-reconfiguration evolution in imaginary or real time.
//!
//! One step samples a batch, builds centered log-derivatives `Ō` and local
//! energies `Ē`, and solves for a parameter update in real coordinates. With
//! the stacked real design matrix `X = [√w Re Ō; √w Im Ō]` we have
//! `Re S = XᵀX` and
//!
//! * imaginary time: `g = ∂E/∂r = Xᵀ v`, `v = 2 [√w Re Ē; √w Im Ē]`, and the
//!   update is `r ← r − Δτ (S + ε diag S + δ)⁺ g`;
//! * real time: `f = Im⟨Ō* Ē⟩ = Xᵀ v`, `v = [√w Im Ē; −√w Re Ē]`, and the
//!   update is `r ← r + Δt (S + ε diag S + δ)⁺ f`, the real-coordinate form
//!   of `θ̇ = −i S⁻¹ F`, i.e. evolution under `e^{−iHt}`.
//!
//! The kernel-trick solver works in sample space instead,
//! `Δr = Xᵀ (XXᵀ + λ)⁺ v`, which equals `(XᵀX)⁺ Xᵀ v` when `λ = 0`. The
//! sample-space system has dimension `2 n_samples` because real and
//! imaginary parts of every row are stacked.
//!
//! The imaginary-time step follows the natural-gradient form
//! `Δr = −Δτ S⁻¹ ∂E/∂r`. Since `∂E/∂r = 2 Re⟨Ō*Ē⟩`, one step of size `Δτ`
//! approximates `e^{−2ΔτH}`; the inverse temperature of a trajectory is
//! recovered afterwards from its energy moments, not from `τ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_traits::{Float, Zero};
use rand::Rng;

use crate::ansatz::LstmWavefunction;
use crate::error::{Error, Result};
use crate::grad::{self, stacked_real, Batch, LocalEnergyBatch, LogDerivativeBatch};
use crate::lattice::XyChain;
use crate::linalg::shifted_solve;
use crate::scalar::{Real, C};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeMode {
    Imaginary,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    /// Solve in parameter space with the geometric tensor.
    DirectSr,
    /// Solve in sample space with the neural tangent kernel.
    NtkTrick,
}

/// How each step's batch is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// `n_samples` autoregressive samples.
    Sampled,
    /// All `2^N` configurations weighted by `|ψ|²` (small chains only).
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolverConfig<T> {
    /// Step size `Δτ` (imaginary) or `Δt` (real).
    pub dtau: T,
    pub n_samples: usize,
    /// Relative diagonal shift `ε`.
    pub reg_shift: T,
    /// Absolute diagonal shift `δ`.
    pub reg_floor: T,
    /// Relative eigenvalue cutoff of the pseudoinverse.
    pub pinv_cutoff: T,
    pub mode: TimeMode,
    pub solver: Solver,
    pub batch: BatchMode,
}

impl<T: Real> EvolverConfig<T> {
    pub fn imaginary(dtau: T, n_samples: usize) -> Self {
        Self {
            dtau,
            n_samples,
            reg_shift: T::lit(1e-4),
            reg_floor: T::lit(1e-10),
            pinv_cutoff: T::lit(1e-10),
            mode: TimeMode::Imaginary,
            solver: Solver::NtkTrick,
            batch: BatchMode::Sampled,
        }
    }

    pub fn real(dt: T, n_samples: usize) -> Self {
        Self {
            mode: TimeMode::Real,
            ..Self::imaginary(dt, n_samples)
        }
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_batch(mut self, batch: BatchMode) -> Self {
        self.batch = batch;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.dtau > T::zero()) || !Float::is_finite(self.dtau) {
            return bad("dtau must be positive");
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if !(self.reg_shift >= T::zero()) || !(self.reg_floor >= T::zero()) {
            return bad("regularization must be nonnegative");
        }
        if !(self.pinv_cutoff >= T::zero()) || self.pinv_cutoff >= T::one() {
            return bad("pinv_cutoff must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Measurement and bookkeeping of one step. Moments are those of the state
/// before the update, at time `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub tau: T,
    pub energy: T,
    pub h2: T,
    pub grad_norm: T,
    pub terminated: bool,
    /// Batch averages of the evolver's diagonal observables.
    pub observables: Vec<T>,
}

/// Diagonal observable evaluated on sampled configurations.
pub type DiagonalObservable = Arc<dyn Fn(&[u8]) -> f64 + Send + Sync>;

/// Update direction in real coordinates.
#[derive(Clone, Debug)]
pub struct Direction<T: Real> {
    pub delta: DVector<T>,
    pub rank: usize,
    /// Dimension of the linear system that was solved.
    pub solve_dim: usize,
    pub grad_norm: T,
}

/// Computes the update direction from centered `Ō`, `Ē`. The parameter
/// change is `−Δτ · delta` in imaginary time and `+Δt · delta` in real time.
pub fn update_direction<T: Real>(
    o: &LogDerivativeBatch<T>,
    e: &LocalEnergyBatch<T>,
    cfg: &EvolverConfig<T>,
) -> Direction<T> {
    let x = stacked_real(o);
    let n = o.o.nrows();
    let two = T::lit(2.0);
    let mut grad_rhs = DVector::<T>::zeros(2 * n);
    for a in 0..n {
        let s = Float::sqrt(o.weights[a]);
        grad_rhs[a] = two * s * e.e[a].re;
        grad_rhs[n + a] = two * s * e.e[a].im;
    }
    let gradient = x.tr_mul(&grad_rhs);
    let grad_norm = gradient.norm();
    let v = match cfg.mode {
        TimeMode::Imaginary => grad_rhs,
        TimeMode::Real => {
            let mut v = DVector::<T>::zeros(2 * n);
            for a in 0..n {
                let s = Float::sqrt(o.weights[a]);
                v[a] = s * e.e[a].im;
                v[n + a] = -s * e.e[a].re;
            }
            v
        }
    };
    let p = x.ncols();
    match cfg.solver {
        Solver::DirectSr => {
            let rhs = if cfg.mode == TimeMode::Imaginary {
                gradient
            } else {
                x.tr_mul(&v)
            };
            let mut s = x.tr_mul(&x);
            let mut min_shift = T::infinity();
            for mu in 0..p {
                let d = s[(mu, mu)];
                let add = cfg.reg_shift * d + cfg.reg_floor;
                min_shift = Float::min(min_shift, add);
                s[(mu, mu)] = d + add;
            }
            let sol = shifted_solve(s, &rhs, cfg.pinv_cutoff, min_shift);
            Direction {
                delta: sol.x,
                rank: sol.rank,
                solve_dim: p,
                grad_norm,
            }
        }
        Solver::NtkTrick => {
            let mut t: DMatrix<T> = &x * x.transpose();
            let trace = t.trace();
            let shift = cfg.reg_shift * trace / T::lit(p as f64) + cfg.reg_floor;
            for a in 0..2 * n {
                t[(a, a)] += shift;
            }
            let sol = shifted_solve(t, &v, cfg.pinv_cutoff, shift);
            Direction {
                delta: x.tr_mul(&sol.x),
                rank: sol.rank,
                solve_dim: 2 * n,
                grad_norm,
            }
        }
    }
}

/// Runs the step loop for one wavefunction.
#[derive(Clone)]
pub struct Evolver<'a, T> {
    pub model: &'a XyChain<T>,
    pub cfg: EvolverConfig<T>,
    pub observables: Vec<DiagonalObservable>,
}

impl<T> fmt::Debug for Evolver<'_, T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Evolver")
            .field("model", &self.model)
            .field("cfg", &self.cfg)
            .field("observables", &self.observables.len())
            .finish()
    }
}

impl<'a, T: Real> Evolver<'a, T> {
    pub fn new(model: &'a XyChain<T>, cfg: EvolverConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            cfg,
            observables: Vec::new(),
        })
    }

    pub fn with_observable(mut self, obs: DiagonalObservable) -> Self {
        self.observables.push(obs);
        self
    }

    fn batch<R: Rng + ?Sized>(&self, w: &LstmWavefunction<T>, rng: &mut R) -> Result<Batch<T>> {
        match self.cfg.batch {
            BatchMode::Sampled => Batch::sampled(w, rng, self.cfg.n_samples),
            BatchMode::Exhaustive => Batch::exhaustive(w),
        }
    }

    fn terminated_record(&self, tau: T, energy: T, h2: T) -> StepRecord<T> {
        StepRecord {
            tau,
            energy,
            h2,
            grad_norm: T::nan(),
            terminated: true,
            observables: Vec::new(),
        }
    }

    /// One step with the stochastic-reconfiguration solver.
    pub fn sr_step<R: Rng + ?Sized>(
        &self,
        w: &mut LstmWavefunction<T>,
        rng: &mut R,
        tau: T,
    ) -> Result<StepRecord<T>> {
        self.step_with(w, rng, tau, Solver::DirectSr)
    }

    /// One step with the kernel-trick solver.
    pub fn ntk_step<R: Rng + ?Sized>(
        &self,
        w: &mut LstmWavefunction<T>,
        rng: &mut R,
        tau: T,
    ) -> Result<StepRecord<T>> {
        self.step_with(w, rng, tau, Solver::NtkTrick)
    }

    /// One step with the configured solver.
    pub fn step<R: Rng + ?Sized>(
        &self,
        w: &mut LstmWavefunction<T>,
        rng: &mut R,
        tau: T,
    ) -> Result<StepRecord<T>> {
        self.step_with(w, rng, tau, self.cfg.solver)
    }

    /// Non-finite amplitudes or energies and degenerate solves do not raise
    /// errors; they produce a record with `terminated = true` and leave `w`
    /// unchanged.
    fn step_with<R: Rng + ?Sized>(
        &self,
        w: &mut LstmWavefunction<T>,
        rng: &mut R,
        tau: T,
        solver: Solver,
    ) -> Result<StepRecord<T>> {
        let batch = match self.batch(w, rng) {
            Ok(b) => b,
            Err(Error::SamplingFailed { .. }) | Err(Error::NonFinite(_)) => {
                return Ok(self.terminated_record(tau, T::nan(), T::nan()))
            }
            Err(e) => return Err(e),
        };
        let (o, e) = match grad::evaluate_batch(w, self.model, &batch, true) {
            Ok((Some(o), e)) => (o, e),
            Ok((None, _)) => unreachable!("derivatives requested"),
            Err(Error::NonFinite(_)) => return Ok(self.terminated_record(tau, T::nan(), T::nan())),
            Err(err) => return Err(err),
        };
        let energy = e.mean.re;
        let h2 = e.second_moment();
        if !e.is_finite()
            || !o
                .o
                .iter()
                .all(|z| Float::is_finite(z.re) && Float::is_finite(z.im))
        {
            return Ok(self.terminated_record(tau, energy, h2));
        }
        let observables = self
            .observables
            .iter()
            .map(|f| {
                batch
                    .configs
                    .iter()
                    .zip(&batch.weights)
                    .fold(T::zero(), |acc, (x, &wt)| {
                        acc + wt * T::lit(f(x.as_slice()))
                    })
            })
            .collect();
        let (o, e) = grad::center(o, e);
        let cfg = EvolverConfig {
            solver,
            ..self.cfg.clone()
        };
        let dir = update_direction(&o, &e, &cfg);
        let zero_force = e.e.iter().all(|z| z.is_zero());
        if (dir.rank == 0 && !zero_force) || !dir.delta.iter().all(|v| Float::is_finite(*v)) {
            return Ok(StepRecord {
                grad_norm: dir.grad_norm,
                observables,
                ..self.terminated_record(tau, energy, h2)
            });
        }
        let scale = match self.cfg.mode {
            TimeMode::Imaginary => -self.cfg.dtau,
            TimeMode::Real => self.cfg.dtau,
        };
        let backup = w.params().to_vec();
        for (k, p) in w.params_mut().iter_mut().enumerate() {
            *p += C::new(scale * dir.delta[2 * k], scale * dir.delta[2 * k + 1]);
        }
        let terminated = !w.is_finite();
        if terminated {
            w.params_mut().copy_from_slice(&backup);
        }
        Ok(StepRecord {
            tau,
            energy,
            h2,
            grad_norm: dir.grad_norm,
            terminated,
            observables,
        })
    }

    /// Iterates steps from `tau = 0`. Stops after `n_steps`, after a
    /// terminated step, or when `stop` returns true for the history so far.
    /// The returned history includes the record that triggered the stop.
    pub fn evolve<R, F>(
        &self,
        w: &mut LstmWavefunction<T>,
        rng: &mut R,
        n_steps: usize,
        mut stop: F,
    ) -> Result<Vec<StepRecord<T>>>
    where
        R: Rng + ?Sized,
        F: FnMut(&[StepRecord<T>]) -> bool,
    {
        let mut history = Vec::with_capacity(n_steps);
        let mut tau = T::zero();
        for _ in 0..n_steps {
            let rec = self.step(w, rng, tau)?;
            let done = rec.terminated;
            history.push(rec);
            if done || stop(&history) {
                break;
            }
            tau += self.cfg.dtau;
        }
        Ok(history)
    }

    /// `(⟨H⟩, ⟨H²⟩)` estimated from the configured batch mode.
    pub fn moments<R: Rng + ?Sized>(&self, w: &LstmWavefunction<T>, rng: &mut R) -> Result<(T, T)> {
        let batch = self.batch(w, rng)?;
        let e = grad::local_energies(w, self.model, &batch)?;
        Ok((e.mean.re, e.second_moment()))
    }
}

/// `(⟨H⟩, ⟨H²⟩)` from `n_samples` autoregressive samples:
/// `Re mean(E_loc)` and `mean(|E_loc|²)`.
pub fn estimate_moments<T: Real, R: Rng + ?Sized>(
    w: &LstmWavefunction<T>,
    model: &XyChain<T>,
    rng: &mut R,
    n_samples: usize,
) -> Result<(T, T)> {
    let batch = Batch::sampled(w, rng, n_samples)?;
    let e = grad::local_energies(w, model, &batch)?;
    Ok((e.mean.re, e.second_moment()))
}

/// Exact `(⟨H⟩, ⟨H²⟩)` by enumerating every configuration.
pub fn exact_moments<T: Real>(w: &LstmWavefunction<T>, model: &XyChain<T>) -> Result<(T, T)> {
    let batch = Batch::exhaustive(w)?;
    let e = grad::local_energies(w, model, &batch)?;
    Ok((e.mean.re, e.second_moment()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{random_cps, LstmShape};
    use crate::lattice::Boundary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type W = LstmWavefunction<f64>;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn config_validation() {
        assert!(EvolverConfig::imaginary(-1.0, 10).validate().is_err());
        assert!(EvolverConfig::imaginary(0.1, 1).validate().is_err());
        assert!(EvolverConfig::imaginary(0.1, 2).validate().is_ok());
    }

    #[test]
    fn eigenstate_is_a_fixed_point() {
        // |1111⟩ is an eigenstate with E = 0 and no connected configurations.
        let n = 4;
        let amps = vec![[C::new(0.0, 0.0), C::new(1.0, 0.0)]; n];
        let mut w = W::product_state(LstmShape::new(n), &amps, &mut rng(1), 0.3).unwrap();
        let model = XyChain::new(n, Boundary::Periodic).unwrap();
        let before = w.clone();
        for solver in [Solver::DirectSr, Solver::NtkTrick] {
            let ev = Evolver::new(
                &model,
                EvolverConfig::imaginary(0.01, 16).with_solver(solver),
            )
            .unwrap();
            let rec = ev.step(&mut w, &mut rng(2), 0.0).unwrap();
            assert!(!rec.terminated);
            assert_eq!(rec.energy, 0.0);
            assert_eq!(rec.h2, 0.0);
            assert_eq!(w, before);
        }
    }

    #[test]
    fn ntk_solve_dimension_tracks_samples() {
        let n = 4;
        let mut w = W::random(LstmShape::new(n), &mut rng(3), 0.3).unwrap();
        let model = XyChain::new(n, Boundary::Open).unwrap();
        let cfg = EvolverConfig::imaginary(0.01, 8);
        let batch = Batch::sampled(&w, &mut rng(4), 8).unwrap();
        let (o, e) = grad::evaluate_batch(&w, &model, &batch, true).unwrap();
        let (o, e) = grad::center(o.unwrap(), e);
        let d = update_direction(&o, &e, &cfg);
        assert_eq!(d.solve_dim, 16);
        assert!(d.solve_dim < 2 * w.n_params());
        let ev = Evolver::new(&model, cfg).unwrap();
        ev.ntk_step(&mut w, &mut rng(5), 0.0).unwrap();
    }

    fn relative_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / a.norm()
    }

    #[test]
    fn direct_and_kernel_solvers_agree_without_regularization() {
        for (n_samples, hidden, mode) in [
            (6usize, 2usize, TimeMode::Imaginary),
            (30, 2, TimeMode::Imaginary),
            (12, 3, TimeMode::Real),
            (400, 1, TimeMode::Imaginary),
        ] {
            let n = 4;
            let w = W::random(
                LstmShape::with_hidden(n, hidden, 2),
                &mut rng(n_samples as u64),
                0.5,
            )
            .unwrap();
            let model = XyChain::new(n, Boundary::Periodic).unwrap();
            let batch = Batch::sampled(&w, &mut rng(9), n_samples).unwrap();
            let (o, e) = grad::evaluate_batch(&w, &model, &batch, true).unwrap();
            let (o, e) = grad::center(o.unwrap(), e);
            let mut cfg = EvolverConfig::imaginary(0.01, n_samples);
            cfg.mode = mode;
            cfg.reg_shift = 0.0;
            cfg.reg_floor = 0.0;
            cfg.pinv_cutoff = 1e-10;
            let direct = update_direction(&o, &e, &cfg.clone().with_solver(Solver::DirectSr));
            let kernel = update_direction(&o, &e, &cfg.with_solver(Solver::NtkTrick));
            assert_eq!(direct.rank, kernel.rank);
            let gap = relative_gap(&direct.delta, &kernel.delta);
            assert!(gap < 1e-8, "samples {n_samples}: gap {gap}");
        }
    }

    #[test]
    fn imaginary_time_lowers_energy_monotonically() {
        let n = 4;
        let model = XyChain::new(n, Boundary::Periodic).unwrap();
        let mut r = rng(12);
        let amps = random_cps::<f64, _>(&mut r, n);
        let mut w = W::product_state(LstmShape::with_hidden(n, 4, 2), &amps, &mut r, 0.3).unwrap();
        let cfg = EvolverConfig::imaginary(2e-3, 2)
            .with_batch(BatchMode::Exhaustive)
            .with_solver(Solver::NtkTrick);
        let ev = Evolver::new(&model, cfg).unwrap();
        let hist = ev.evolve(&mut w, &mut r, 150, |_| false).unwrap();
        assert_eq!(hist.len(), 150);
        for pair in hist.windows(2) {
            assert!(
                pair[1].energy <= pair[0].energy + 1e-9,
                "{} -> {}",
                pair[0].energy,
                pair[1].energy
            );
            assert!(pair[1].tau > pair[0].tau);
        }
        assert!(hist.last().unwrap().energy < hist[0].energy - 0.05);
    }

    #[test]
    fn two_site_chain_reaches_ground_energy() {
        let model = XyChain::new(2, Boundary::Open).unwrap();
        let mut r = rng(5);
        let amps = random_cps::<f64, _>(&mut r, 2);
        let mut w = W::product_state(LstmShape::with_hidden(2, 4, 2), &amps, &mut r, 0.5).unwrap();
        let cfg = EvolverConfig::imaginary(1e-3, 2)
            .with_batch(BatchMode::Exhaustive)
            .with_solver(Solver::NtkTrick);
        let ev = Evolver::new(&model, cfg).unwrap();
        let hist = ev.evolve(&mut w, &mut r, 2000, |_| false).unwrap();
        let mut prev = f64::INFINITY;
        for rec in &hist {
            assert!(rec.energy <= prev + 1e-9);
            prev = rec.energy;
        }
        let (e, _) = exact_moments(&w, &model).unwrap();
        assert!(e < -0.99, "final energy {e}");
    }

    #[test]
    fn real_time_conserves_energy() {
        let n = 4;
        let model = XyChain::new(n, Boundary::Periodic).unwrap();
        let mut r = rng(21);
        let mut w = W::random(LstmShape::with_hidden(n, 4, 2), &mut r, 0.4).unwrap();
        let cfg = EvolverConfig::real(1e-3, 2).with_batch(BatchMode::Exhaustive);
        let ev = Evolver::new(&model, cfg).unwrap();
        let hist = ev.evolve(&mut w, &mut r, 100, |_| false).unwrap();
        let e0 = hist[0].energy;
        let (e_final, _) = exact_moments(&w, &model).unwrap();
        for rec in &hist {
            assert!((rec.energy - e0).abs() < 1e-2);
        }
        assert!((e_final - e0).abs() < 1e-2);
        assert!(w
            .born_distribution()
            .unwrap()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn real_time_follows_the_schrodinger_propagator() {
        use nalgebra::SymmetricEigen;
        use num_complex::Complex64;
        let n = 3;
        let model = XyChain::new(n, Boundary::Open).unwrap();
        let mut r = rng(31);
        let amps = random_cps::<f64, _>(&mut r, n);
        let mut w = W::product_state(LstmShape::with_hidden(n, 6, 3), &amps, &mut r, 0.3).unwrap();
        let dense = |w: &W| -> Vec<Complex64> {
            (0..1 << n)
                .map(|i| {
                    w.log_amplitude(&crate::SpinConfiguration::from_index(n, i))
                        .unwrap()
                        .exp()
                })
                .collect()
        };
        let psi0 = dense(&w);
        let (dt, steps) = (1e-3, 400);
        let ev = Evolver::new(
            &model,
            EvolverConfig::real(dt, 2).with_batch(BatchMode::Exhaustive),
        )
        .unwrap();
        ev.evolve(&mut w, &mut r, steps, |_| false).unwrap();
        let psi = dense(&w);
        let eig = SymmetricEigen::new(model.dense_hamiltonian().unwrap());
        let t = dt * steps as f64;
        let propagate = |sign: f64| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(0.0, 0.0); 1 << n];
            for k in 0..1 << n {
                let v = eig.eigenvectors.column(k);
                let c: Complex64 = v.iter().zip(&psi0).map(|(a, p)| p * a).sum();
                let phase = Complex64::new(0.0, -sign * eig.eigenvalues[k] * t).exp();
                for (o, a) in out.iter_mut().zip(v.iter()) {
                    *o += c * phase * a;
                }
            }
            out
        };
        let fidelity = |a: &[Complex64], b: &[Complex64]| {
            let ov: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
            let na: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
            ov.norm_sqr() / (na * nb)
        };
        let forward = fidelity(&psi, &propagate(1.0));
        let backward = fidelity(&psi, &propagate(-1.0));
        assert!(forward > 0.995, "fidelity {forward}");
        assert!(forward > backward + 0.01, "{forward} vs {backward}");
    }

    #[test]
    fn evolve_edge_cases() {
        let n = 4;
        let model = XyChain::new(n, Boundary::Open).unwrap();
        let mut w = W::random(LstmShape::new(n), &mut rng(2), 0.3).unwrap();
        let before = w.clone();
        let ev = Evolver::new(&model, EvolverConfig::imaginary(0.01, 8)).unwrap();
        assert!(ev
            .evolve(&mut w, &mut rng(1), 0, |_| true)
            .unwrap()
            .is_empty());
        assert_eq!(w, before);
        assert_eq!(
            ev.evolve(&mut w, &mut rng(1), 10, |_| true).unwrap().len(),
            1
        );
    }

    #[test]
    fn evolution_is_deterministic_across_thread_counts() {
        let n = 5;
        let model = XyChain::new(n, Boundary::Open).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut r = rng(99);
                let amps = random_cps::<f64, _>(&mut r, n);
                let mut w = W::product_state(LstmShape::new(n), &amps, &mut r, 0.3).unwrap();
                let ev = Evolver::new(&model, EvolverConfig::imaginary(0.02, 32)).unwrap();
                let hist = ev.evolve(&mut w, &mut r, 5, |_| false).unwrap();
                (hist, w)
            })
        };
        let (h1, w1) = run(1);
        let (h3, w3) = run(3);
        assert_eq!(h1, h3);
        assert_eq!(w1, w3);
    }

    #[test]
    fn moment_estimators() {
        // Uniform state on N=4 periodic: mean number of anti-aligned bonds is 2.
        let n = 4;
        let model = XyChain::new(n, Boundary::Periodic).unwrap();
        let a = 1.0 / 2f64.sqrt();
        let w = W::product_state(
            LstmShape::new(n),
            &vec![[C::new(a, 0.0), C::new(a, 0.0)]; n],
            &mut rng(0),
            0.3,
        )
        .unwrap();
        let (e, _) = exact_moments(&w, &model).unwrap();
        assert!((e - 2.0).abs() < 1e-12);
        let (e_mc, _) = estimate_moments(&w, &model, &mut rng(3), 20_000).unwrap();
        assert!((e_mc - 2.0).abs() < 0.05);

        // Eigenstate: zero variance.
        let up = W::product_state(
            LstmShape::new(n),
            &vec![[C::new(0.0, 0.0), C::new(1.0, 0.0)]; n],
            &mut rng(0),
            0.3,
        )
        .unwrap();
        let (e, h2) = exact_moments(&up, &model).unwrap();
        assert!((h2 - e * e).abs() < 1e-10);

        // Random CPS average of the energy is close to Tr H / 2^N = 0.
        let mut r = rng(17);
        let draws = 400;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let amps = random_cps::<f64, _>(&mut r, n);
            let w = W::product_state(LstmShape::new(n), &amps, &mut r, 0.0).unwrap();
            let (e, _) = exact_moments(&w, &model).unwrap();
            sum += e;
            sq += e * e;
        }
        let mean = sum / draws as f64;
        let stderr = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!(mean.abs() < 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn observables_are_recorded() {
        let n = 4;
        let model = XyChain::new(n, Boundary::Open).unwrap();
        let mut w = W::random(LstmShape::new(n), &mut rng(2), 0.3).unwrap();
        let mz: DiagonalObservable =
            Arc::new(|x: &[u8]| x.iter().map(|&s| if s == 1 { 0.5 } else { -0.5 }).sum());
        let ev = Evolver::new(
            &model,
            EvolverConfig::imaginary(0.01, 2).with_batch(BatchMode::Exhaustive),
        )
        .unwrap()
        .with_observable(mz);
        let rec = ev.step(&mut w, &mut rng(3), 0.0).unwrap();
        assert_eq!(rec.observables.len(), 1);
        assert!(rec.observables[0].abs() <= 2.0);
    }
}
