//! Reference results for the XY chain (`J = 1/2`, unit fermion hopping).
//!
//! * Free fermions: after Jordan-Wigner the chain is a tight-binding model
//!   with single-particle energies `ε = 2 cos k`. Open chains have
//!   `k = mπ/(N+1)`. Periodic chains couple the fermion boundary condition to
//!   the particle-number parity, and the partition function is
//!   `Z = ½ (Z_A⁺ + Z_A⁻ + Z_P⁺ − Z_P⁻)` with `Z^± = Π_k (1 ± e^{−βε_k})`
//!   over antiperiodic (`k = 2π(m+½)/N`) and periodic (`k = 2πm/N`) momenta.
//! * Exact diagonalization in fixed-magnetization sectors, N ≤ 12.
//! * Exact imaginary-time evolution `e^{−τH}|φ⟩` in the sector eigenbases.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Boundary, XyChain};

/// Largest chain handled by [`Spectrum`].
pub const ED_MAX_SITES: usize = 12;

fn check_sites(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewSites(n));
    }
    Ok(())
}

/// Single-particle energies of the open chain.
pub fn open_modes(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|m| 2.0 * (m as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
        .collect()
}

fn ring_modes(n: usize, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|m| 2.0 * (2.0 * std::f64::consts::PI * (m as f64 + shift) / n as f64).cos())
        .collect()
}

/// `ln(1 + e^{−x})`.
fn log1p_exp_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `ln|1 − e^{−x}|` for `x ≠ 0`.
fn log_abs_1m_exp_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-(-x).exp_m1()).ln()
    } else {
        -x + (-x.exp_m1()).ln()
    }
}

/// One signed term `s e^{L}` of the partition function and `dL/dβ`.
#[derive(Clone, Copy, Debug)]
struct Term {
    sign: f64,
    log: f64,
    dlog: f64,
}

/// `Π_k (1 + e^{−βε_k})`.
fn plus_term(modes: &[f64], beta: f64) -> Term {
    let mut log = 0.0;
    let mut dlog = 0.0;
    for &e in modes {
        let x = beta * e;
        log += log1p_exp_neg(x);
        // d/dβ ln(1 + e^{−βε}) = −ε / (e^{βε} + 1)
        dlog -= e * if x > 0.0 {
            (-x).exp() / (1.0 + (-x).exp())
        } else {
            1.0 / (1.0 + x.exp())
        };
    }
    Term {
        sign: 1.0,
        log,
        dlog,
    }
}

/// `Π_k (1 − e^{−βε_k})`, or `None` when a zero mode makes it vanish.
fn minus_term(modes: &[f64], beta: f64) -> Option<Term> {
    let mut log = 0.0;
    let mut dlog = 0.0;
    let mut sign = 1.0;
    for &e in modes {
        let x = beta * e;
        if x.abs() < 1e-300 || e.abs() < 1e-12 {
            return None;
        }
        log += log_abs_1m_exp_neg(x);
        if x < 0.0 {
            sign = -sign;
        }
        // d/dβ ln|1 − e^{−βε}| = ε / (e^{βε} − 1)
        dlog += e / x.exp_m1();
    }
    Some(Term { sign, log, dlog })
}

fn partition_terms(n: usize, beta: f64, boundary: Boundary) -> Vec<Term> {
    match boundary {
        Boundary::Open => vec![plus_term(&open_modes(n), beta)],
        Boundary::Periodic => {
            let anti = ring_modes(n, 0.5);
            let per = ring_modes(n, 0.0);
            let half = std::f64::consts::LN_2;
            let mut terms = vec![plus_term(&anti, beta)];
            terms.extend(minus_term(&anti, beta));
            terms.push(plus_term(&per, beta));
            if let Some(mut t) = minus_term(&per, beta) {
                t.sign = -t.sign;
                terms.push(t);
            }
            for t in &mut terms {
                t.log -= half;
            }
            terms
        }
    }
}

/// `(ln Z, E)` from signed terms, shifted by the largest exponent.
fn combine(terms: &[Term]) -> (f64, f64) {
    let m = terms
        .iter()
        .map(|t| t.log)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut dz = 0.0;
    for t in terms {
        let v = t.sign * (t.log - m).exp();
        z += v;
        dz += v * t.dlog;
    }
    (m + z.ln(), -dz / z)
}

/// Thermal energy `Tr[H e^{−βH}] / Tr[e^{−βH}]` from free fermions.
pub fn free_fermion_energy(n: usize, beta: f64, boundary: Boundary) -> Result<f64> {
    check_sites(n)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    Ok(combine(&partition_terms(n, beta, boundary)).1)
}

/// `ln Tr[e^{−βH}]` from free fermions.
pub fn free_fermion_log_z(n: usize, beta: f64, boundary: Boundary) -> Result<f64> {
    check_sites(n)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    if beta == 0.0 {
        return Ok(n as f64 * std::f64::consts::LN_2);
    }
    Ok(combine(&partition_terms(n, beta, boundary)).0)
}

/// Eigen-decomposition of one fixed-magnetization block.
#[derive(Clone, Debug)]
struct Sector {
    /// Basis indices of the block, increasing.
    states: Vec<usize>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

/// Full spectrum and eigenvectors of an XY chain, block by block.
#[derive(Clone, Debug)]
pub struct Spectrum {
    n_sites: usize,
    sectors: Vec<Sector>,
}

impl Spectrum {
    pub fn new(model: &XyChain<f64>) -> Result<Self> {
        let n = model.n_sites();
        if n > ED_MAX_SITES {
            return Err(Error::TooManySites {
                n,
                max: ED_MAX_SITES,
            });
        }
        let element = model.hop_element();
        let dim = 1usize << n;
        let mut sectors = Vec::with_capacity(n + 1);
        for up in 0..=n {
            let states: Vec<usize> = (0..dim).filter(|s| s.count_ones() as usize == up).collect();
            let mut h = DMatrix::<f64>::zeros(states.len(), states.len());
            for (row, &s) in states.iter().enumerate() {
                for (j, k) in model.bonds() {
                    if (s >> j) & 1 != (s >> k) & 1 {
                        let t = s ^ (1 << j) ^ (1 << k);
                        let col = states
                            .binary_search(&t)
                            .expect("swap conserves magnetization");
                        h[(row, col)] += element;
                    }
                }
            }
            let eig = SymmetricEigen::new(h);
            sectors.push(Sector {
                states,
                values: eig.eigenvalues,
                vectors: eig.eigenvectors,
            });
        }
        Ok(Self {
            n_sites: n,
            sectors,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// All `2^N` eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .sectors
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `(ln Z, E)` at inverse temperature `beta`.
    pub fn thermal(&self, beta: f64) -> (f64, f64) {
        thermal_from_levels(&self.eigenvalues(), beta)
    }

    pub fn energy(&self, beta: f64) -> f64 {
        if beta == 0.0 {
            return 0.0;
        }
        self.thermal(beta).1
    }

    pub fn log_z(&self, beta: f64) -> f64 {
        self.thermal(beta).0
    }

    /// Moments and log-norm of `e^{−τH}|φ₀⟩` at every `τ` in `taus`.
    pub fn evolve(&self, phi0: &[Complex64], taus: &[f64]) -> Result<Vec<ExactPoint>> {
        let dim = 1usize << self.n_sites;
        if phi0.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                got: phi0.len(),
            });
        }
        if !phi0.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        // Weights |c_k|² of φ₀ on every eigenvector.
        let mut levels = Vec::with_capacity(dim);
        for s in &self.sectors {
            for k in 0..s.values.len() {
                let v = s.vectors.column(k);
                let c: Complex64 = s
                    .states
                    .iter()
                    .zip(v.iter())
                    .map(|(&b, &a)| phi0[b] * a)
                    .sum();
                let w = c.norm_sqr();
                if w > 0.0 {
                    levels.push((s.values[k], w));
                }
            }
        }
        if levels.is_empty() {
            return Err(Error::InvalidArgument("initial state is zero".into()));
        }
        Ok(taus
            .iter()
            .map(|&tau| {
                let m = levels
                    .iter()
                    .map(|&(e, w)| w.ln() - 2.0 * tau * e)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (mut z, mut e1, mut e2) = (0.0, 0.0, 0.0);
                for &(e, w) in &levels {
                    let p = (w.ln() - 2.0 * tau * e - m).exp();
                    z += p;
                    e1 += p * e;
                    e2 += p * e * e;
                }
                ExactPoint {
                    tau,
                    energy: e1 / z,
                    h2: e2 / z,
                    log_norm: m + z.ln(),
                }
            })
            .collect())
    }
}

/// `(ln Σ e^{−βE}, ⟨E⟩)` over a list of levels.
pub fn thermal_from_levels(levels: &[f64], beta: f64) -> (f64, f64) {
    let m = levels
        .iter()
        .map(|&e| -beta * e)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut e1 = 0.0;
    for &e in levels {
        let p = (-beta * e - m).exp();
        z += p;
        e1 += p * e;
    }
    (m + z.ln(), e1 / z)
}

/// Exact moments of `e^{−τH}|φ₀⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactPoint {
    pub tau: f64,
    pub energy: f64,
    pub h2: f64,
    /// `ln⟨φ(τ)|φ(τ)⟩`, including the norm of `φ₀`.
    pub log_norm: f64,
}

/// Thermal energy by exact diagonalization, N ≤ 12.
pub fn ed_energy(n: usize, beta: f64, boundary: Boundary) -> Result<f64> {
    check_sites(n)?;
    let model = XyChain::<f64>::new(n, boundary)?;
    Ok(Spectrum::new(&model)?.energy(beta))
}

/// Exact `e^{−τH}|φ₀⟩` trajectory.
pub fn exact_imaginary_evolution(
    model: &XyChain<f64>,
    phi0: &[Complex64],
    taus: &[f64],
) -> Result<Vec<ExactPoint>> {
    Spectrum::new(model)?.evolve(phi0, taus)
}

/// Dense product state `⊗_i (a_i(0)|0⟩ + a_i(1)|1⟩)` in the basis of
/// [`crate::SpinConfiguration::from_index`].
pub fn product_state_vector(amps: &[[Complex64; 2]]) -> Vec<Complex64> {
    let n = amps.len();
    (0..1usize << n)
        .map(|idx| {
            amps.iter()
                .enumerate()
                .fold(Complex64::new(1.0, 0.0), |acc, (i, a)| {
                    acc * a[(idx >> i) & 1]
                })
        })
        .collect()
}
