//! Logarithmic derivatives, local energies and the Monte Carlo estimators
//! built from them.
//!
//! Every complex parameter `θ_k = a_k + i b_k` contributes two real
//! coordinates, `2k ↦ a_k` and `2k+1 ↦ b_k`. The log-derivative matrix holds
//! `O[s, μ] = ∂ ln ψ(x_s) / ∂r_μ`, which is complex because `ln ψ` is. This is
//! required because the split-activation LSTM is not holomorphic, so a single
//! complex derivative per parameter does not exist.
//!
//! Derivatives come from two reverse sweeps through the recorded forward
//! pass, one for `Re ln ψ` and one for `Im ln ψ`. For a real objective `L`
//! the adjoint of a complex intermediate `z` is stored as
//! `∂L/∂Re z + i ∂L/∂Im z`; with that convention the adjoint of `y = a b`
//! is `ȳ conj(b)` for `a`, and linear maps pull back through their
//! conjugate transpose.
//!
//! Averages are weighted: sampled batches carry uniform weights `1/n`,
//! exhaustive batches carry `|ψ(x)|² / Σ|ψ|²`.

use nalgebra::{DMatrix, DVector};
use num_traits::{Float, Zero};
use rand::Rng;
use rayon::prelude::*;

use crate::ansatz::{LstmWavefunction, Tape, LOCAL_DIM};
use crate::error::{Error, Result};
use crate::lattice::{SpinConfiguration, XyChain};
use crate::scalar::{cplx, is_finite_c, Real, Scalar, C};

/// Configurations with normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub configs: Vec<SpinConfiguration>,
    pub weights: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn uniform(configs: Vec<SpinConfiguration>) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let w = T::one() / T::lit(configs.len() as f64);
        let weights = vec![w; configs.len()];
        Ok(Self { configs, weights })
    }

    /// Autoregressive samples with uniform weights.
    pub fn sampled<R: Rng + ?Sized>(
        w: &LstmWavefunction<T>,
        rng: &mut R,
        count: usize,
    ) -> Result<Self> {
        Self::uniform(w.sample(rng, count)?)
    }

    /// Every configuration with weight `|ψ(x)|²/Σ|ψ|²`; configurations with
    /// zero weight are dropped.
    pub fn exhaustive(w: &LstmWavefunction<T>) -> Result<Self> {
        let n = w.n_sites();
        let probs = w.born_distribution()?;
        let mut configs = Vec::new();
        let mut weights = Vec::new();
        for (idx, p) in probs.into_iter().enumerate() {
            if p > 0.0 {
                configs.push(SpinConfiguration::from_index(n, idx));
                weights.push(T::lit(p));
            }
        }
        Ok(Self { configs, weights })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Log-derivative matrix, one row per sample and one column per real
/// coordinate.
#[derive(Clone, Debug)]
pub struct LogDerivativeBatch<T: Real> {
    pub o: DMatrix<C<T>>,
    pub weights: Vec<T>,
    pub centered: bool,
}

/// Local energies of a batch.
#[derive(Clone, Debug)]
pub struct LocalEnergyBatch<T: Real> {
    pub e: Vec<C<T>>,
    pub weights: Vec<T>,
    pub mean: C<T>,
    /// `⟨|E_loc|²⟩ − |⟨E_loc⟩|²`.
    pub variance: T,
    pub centered: bool,
}

impl<T: Real> LocalEnergyBatch<T> {
    pub fn new(e: Vec<C<T>>, weights: Vec<T>) -> Self {
        let (mean, second) = weighted_moments(&e, &weights);
        let variance = Float::max(second - mean.norm_sqr(), T::zero());
        Self {
            e,
            weights,
            mean,
            variance,
            centered: false,
        }
    }

    /// `⟨|E_loc|²⟩`, the estimator of `⟨H²⟩` (before centering).
    pub fn second_moment(&self) -> T {
        weighted_moments(&self.e, &self.weights).1
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|z| is_finite_c(*z))
    }
}

fn weighted_moments<T: Real>(e: &[C<T>], w: &[T]) -> (C<T>, T) {
    let mut mean = C::<T>::zero();
    let mut second = T::zero();
    for (z, &wt) in e.iter().zip(w) {
        mean += *z * wt;
        second += z.norm_sqr() * wt;
    }
    (mean, second)
}

/// Scratch buffers for one sample's forward/backward pass.
struct Workspace<T> {
    tape: Tape<T>,
    scratch: Tape<T>,
    grad_re: Vec<C<T>>,
    grad_im: Vec<C<T>>,
    back: BackWork<T>,
    y: Vec<u8>,
}

impl<T: Scalar> Workspace<T> {
    fn new(w: &LstmWavefunction<T>) -> Self {
        let s = w.shape();
        Self {
            tape: Tape::new(&s),
            scratch: Tape::new(&s),
            grad_re: vec![C::zero(); w.n_params()],
            grad_im: vec![C::zero(); w.n_params()],
            back: BackWork::new(s.hidden1, s.hidden2),
            y: vec![0; s.n_sites],
        }
    }
}

/// Local energy of `x` reusing the forward record in `ws.tape`, which must
/// hold the pass for `x` with log-amplitude `base`.
fn local_energy_cached<T: Scalar>(
    w: &LstmWavefunction<T>,
    model: &XyChain<T>,
    x: &[u8],
    base: C<T>,
    ws: &mut Workspace<T>,
) -> C<T> {
    let element = model.hop_element();
    let mut acc = C::zero();
    ws.y.copy_from_slice(x);
    let Workspace {
        tape, scratch, y, ..
    } = ws;
    model.for_each_flippable(x, |j, k| {
        y.swap(j, k);
        let first = j.min(k);
        let lp = w.forward_from(y, first, tape, scratch);
        acc += (lp - base).exp() * element;
        y.swap(j, k);
    });
    acc
}

fn log_derivative_row<T: Scalar>(
    w: &LstmWavefunction<T>,
    x: &[u8],
    ws: &mut Workspace<T>,
    row: &mut [C<T>],
) {
    ws.grad_re.iter_mut().for_each(|g| *g = C::zero());
    ws.grad_im.iter_mut().for_each(|g| *g = C::zero());
    backward(
        w,
        x,
        &ws.tape,
        C::new(T::one(), T::zero()),
        &mut ws.grad_re,
        &mut ws.back,
    );
    backward(
        w,
        x,
        &ws.tape,
        C::new(T::zero(), T::one()),
        &mut ws.grad_im,
        &mut ws.back,
    );
    for (k, (gr, gi)) in ws.grad_re.iter().zip(&ws.grad_im).enumerate() {
        row[2 * k] = cplx(gr.re, gi.re);
        row[2 * k + 1] = cplx(gr.im, gi.im);
    }
}

/// `∂ ln ψ(x) / ∂r_μ` for every real coordinate; length `2 · n_params`.
pub fn log_derivative<T: Scalar>(
    w: &LstmWavefunction<T>,
    x: &SpinConfiguration,
) -> Result<Vec<C<T>>> {
    if x.len() != w.n_sites() {
        return Err(Error::LengthMismatch {
            expected: w.n_sites(),
            got: x.len(),
        });
    }
    let mut ws = Workspace::new(w);
    let lp = w.forward(x.as_slice(), &mut ws.tape);
    if !is_finite_c(lp) {
        return Err(Error::NonFinite("forward pass"));
    }
    let mut row = vec![C::zero(); 2 * w.n_params()];
    log_derivative_row(w, x.as_slice(), &mut ws, &mut row);
    Ok(row)
}

/// Log-derivative matrix of a batch with uniform weights.
pub fn log_derivatives<T: Real>(
    w: &LstmWavefunction<T>,
    batch: &[SpinConfiguration],
) -> Result<LogDerivativeBatch<T>> {
    let b = Batch::uniform(batch.to_vec())?;
    let results = evaluate_rows(w, None, &b, true)?;
    Ok(assemble_derivatives(&results, &b, 2 * w.n_params()))
}

/// Local energies of a batch.
pub fn local_energies<T: Real>(
    w: &LstmWavefunction<T>,
    model: &XyChain<T>,
    batch: &Batch<T>,
) -> Result<LocalEnergyBatch<T>> {
    Ok(evaluate_batch(w, model, batch, false)?.1)
}

type SampleResult<T> = (C<T>, C<T>, Vec<C<T>>);

fn evaluate_rows<T: Real>(
    w: &LstmWavefunction<T>,
    model: Option<&XyChain<T>>,
    batch: &Batch<T>,
    with_derivatives: bool,
) -> Result<Vec<SampleResult<T>>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = w.n_sites();
    if let Some(model) = model {
        if model.n_sites() != n {
            return Err(Error::LengthMismatch {
                expected: model.n_sites(),
                got: n,
            });
        }
    }
    for x in &batch.configs {
        if x.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: x.len(),
            });
        }
    }
    let cols = if with_derivatives {
        2 * w.n_params()
    } else {
        0
    };
    let results: Vec<SampleResult<T>> = batch
        .configs
        .par_iter()
        .map_init(
            || Workspace::new(w),
            |ws, x| {
                let x = x.as_slice();
                let mut row = vec![C::zero(); cols];
                let lp = w.forward(x, &mut ws.tape);
                let e = match model {
                    Some(m) => local_energy_cached(w, m, x, lp, ws),
                    None => C::zero(),
                };
                if with_derivatives {
                    log_derivative_row(w, x, ws, &mut row);
                }
                (lp, e, row)
            },
        )
        .collect();
    if results.iter().any(|(lp, _, _)| !is_finite_c(*lp)) {
        return Err(Error::NonFinite("forward pass"));
    }
    Ok(results)
}

fn assemble_derivatives<T: Real>(
    results: &[SampleResult<T>],
    batch: &Batch<T>,
    cols: usize,
) -> LogDerivativeBatch<T> {
    let mut o = DMatrix::<C<T>>::zeros(results.len(), cols);
    for (a, (_, _, row)) in results.iter().enumerate() {
        for (mu, v) in row.iter().enumerate() {
            o[(a, mu)] = *v;
        }
    }
    LogDerivativeBatch {
        o,
        weights: batch.weights.clone(),
        centered: false,
    }
}

/// Forward pass, local energy and (when `with_derivatives`) the
/// log-derivative row of every sample, evaluated in parallel. Rows are
/// gathered in batch order, so results do not depend on the worker count.
pub fn evaluate_batch<T: Real>(
    w: &LstmWavefunction<T>,
    model: &XyChain<T>,
    batch: &Batch<T>,
    with_derivatives: bool,
) -> Result<(Option<LogDerivativeBatch<T>>, LocalEnergyBatch<T>)> {
    let results = evaluate_rows(w, Some(model), batch, with_derivatives)?;
    let e: Vec<C<T>> = results.iter().map(|r| r.1).collect();
    let energies = LocalEnergyBatch::new(e, batch.weights.clone());
    let o = with_derivatives.then(|| assemble_derivatives(&results, batch, 2 * w.n_params()));
    Ok((o, energies))
}

/// Subtracts weighted means: columnwise from `O`, scalar from `e`.
pub fn center<T: Real>(
    mut o: LogDerivativeBatch<T>,
    mut e: LocalEnergyBatch<T>,
) -> (LogDerivativeBatch<T>, LocalEnergyBatch<T>) {
    let weights = o.weights.clone();
    for mut col in o.o.column_iter_mut() {
        let mut mean = C::<T>::zero();
        for (v, &wt) in col.iter().zip(&weights) {
            mean += *v * wt;
        }
        for v in col.iter_mut() {
            *v -= mean;
        }
    }
    o.centered = true;
    let mean = e.mean;
    for v in e.e.iter_mut() {
        *v -= mean;
    }
    e.centered = true;
    (o, e)
}

/// `∂E/∂r_μ = 2 Re Σ_s w_s conj(Ō[s, μ]) Ē[s]`.
pub fn energy_gradient<T: Real>(o: &LogDerivativeBatch<T>, e: &LocalEnergyBatch<T>) -> DVector<T> {
    let cols = o.o.ncols();
    let mut g = DVector::<T>::zeros(cols);
    for mu in 0..cols {
        let col = o.o.column(mu);
        let mut acc = T::zero();
        for ((v, es), &wt) in col.iter().zip(&e.e).zip(&o.weights) {
            acc += wt * (v.re * es.re + v.im * es.im);
        }
        g[mu] = acc + acc;
    }
    g
}

/// Geometric tensor `S[μ, ν] = Σ_s w_s conj(Ō[s, μ]) Ō[s, ν]`.
pub fn geometric_tensor<T: Real>(o: &LogDerivativeBatch<T>) -> DMatrix<C<T>> {
    let scaled = weighted_rows(o);
    scaled.ad_mul(&scaled)
}

/// Neural tangent kernel `T[a, b] = Σ_μ conj(Ō[a, μ]) Ō[b, μ]`, with rows
/// rescaled by `sqrt(n w_s)` so that for uniform weights it is the plain Gram
/// matrix and its nonzero spectrum divided by `n` equals that of `S`.
pub fn ntk<T: Real>(o: &LogDerivativeBatch<T>) -> DMatrix<C<T>> {
    let n = T::lit(o.o.nrows() as f64);
    let mut scaled = o.o.clone();
    for (a, mut row) in scaled.row_iter_mut().enumerate() {
        let s = Float::sqrt(n * o.weights[a]);
        row.iter_mut().for_each(|v| *v = v.scale(s));
    }
    let k = &scaled * scaled.adjoint();
    k.map(|z| z.conj())
}

fn weighted_rows<T: Real>(o: &LogDerivativeBatch<T>) -> DMatrix<C<T>> {
    let mut scaled = o.o.clone();
    for (a, mut row) in scaled.row_iter_mut().enumerate() {
        let s = Float::sqrt(o.weights[a]);
        row.iter_mut().for_each(|v| *v = v.scale(s));
    }
    scaled
}

/// Real stacked design matrix `X = [√w Re Ō; √w Im Ō]` of shape
/// `(2n, n_coords)`, so that `Re S = Xᵀ X`.
pub(crate) fn stacked_real<T: Real>(o: &LogDerivativeBatch<T>) -> DMatrix<T> {
    let (n, p) = o.o.shape();
    let mut x = DMatrix::<T>::zeros(2 * n, p);
    for mu in 0..p {
        for a in 0..n {
            let s = Float::sqrt(o.weights[a]);
            let v = o.o[(a, mu)];
            x[(a, mu)] = v.re * s;
            x[(n + a, mu)] = v.im * s;
        }
    }
    x
}

/// Adjoint buffers carried between sites during the reverse sweep.
struct BackWork<T> {
    dh1: Vec<C<T>>,
    dc1: Vec<C<T>>,
    dh2: Vec<C<T>>,
    dc2: Vec<C<T>>,
    dz1: Vec<C<T>>,
    dz2: Vec<C<T>>,
    dh1_total: Vec<C<T>>,
    dh2_total: Vec<C<T>>,
}

impl<T: Scalar> BackWork<T> {
    fn new(h1: usize, h2: usize) -> Self {
        Self {
            dh1: vec![C::zero(); h1],
            dc1: vec![C::zero(); h1],
            dh2: vec![C::zero(); h2],
            dc2: vec![C::zero(); h2],
            dz1: vec![C::zero(); 4 * h1],
            dz2: vec![C::zero(); 4 * h2],
            dh1_total: vec![C::zero(); h1],
            dh2_total: vec![C::zero(); h2],
        }
    }

    fn reset(&mut self) {
        for v in [&mut self.dh1, &mut self.dc1, &mut self.dh2, &mut self.dc2] {
            v.iter_mut().for_each(|z| *z = C::zero());
        }
    }
}

#[inline]
fn sigmoid_back<T: Scalar>(g: C<T>, a: C<T>) -> C<T> {
    cplx(
        g.re * a.re * (T::one() - a.re),
        g.im * a.im * (T::one() - a.im),
    )
}

#[inline]
fn tanh_back<T: Scalar>(g: C<T>, a: C<T>) -> C<T> {
    cplx(
        g.re * (T::one() - a.re * a.re),
        g.im * (T::one() - a.im * a.im),
    )
}

/// Backpropagates one LSTM layer at one site. `dh` is the total adjoint of
/// the hidden state, `dc` carries the cell adjoint in and out, `dz` receives
/// the pre-activation adjoints.
#[inline]
fn cell_backward<T: Scalar>(
    h: usize,
    gates: &[C<T>],
    tc: &[C<T>],
    c_prev: Option<&[C<T>]>,
    dh: &[C<T>],
    dc: &mut [C<T>],
    dz: &mut [C<T>],
) {
    for k in 0..h {
        let ig = gates[k];
        let fg = gates[h + k];
        let gg = gates[2 * h + k];
        let og = gates[3 * h + k];
        let d_o = dh[k] * tc[k].conj();
        let d_tc = dh[k] * og.conj();
        let d_c = dc[k] + tanh_back(d_tc, tc[k]);
        let cp = c_prev.map_or(C::zero(), |c| c[k]);
        let d_f = d_c * cp.conj();
        let d_i = d_c * gg.conj();
        let d_g = d_c * ig.conj();
        dc[k] = d_c * fg.conj();
        dz[k] = sigmoid_back(d_i, ig);
        dz[h + k] = sigmoid_back(d_f, fg);
        dz[2 * h + k] = tanh_back(d_g, gg);
        dz[3 * h + k] = sigmoid_back(d_o, og);
    }
}

/// Accumulates into `g` the adjoints of all parameters for the real
/// objective whose logit adjoint is `seed` (`1` for `Re ln ψ`, `i` for
/// `Im ln ψ`).
fn backward<T: Scalar>(
    w: &LstmWavefunction<T>,
    x: &[u8],
    tape: &Tape<T>,
    seed: C<T>,
    g: &mut [C<T>],
    bw: &mut BackWork<T>,
) {
    let shape = w.shape();
    let (h1n, h2n) = (shape.hidden1, shape.hidden2);
    let l = *w.layout();
    let p = w.params();
    bw.reset();

    for site in (0..shape.n_sites).rev() {
        let s = x[site] as usize;
        let cur = tape.site(site);
        let prev = (site > 0).then(|| tape.site(site - 1));

        // Read-out and site bias. The normalization −½ ln Σ_t e^{2 Re ℓ_t}
        // only depends on real parts and contributes −Re(seed)·p_t.
        let logits = tape.logits[site];
        let adj: [C<T>; LOCAL_DIM] = std::array::from_fn(|t| {
            let p_t = (logits[t].re + logits[t].re).exp();
            let own = if t == s { seed } else { C::zero() };
            own - C::new(seed.re * p_t, T::zero())
        });
        for k in 0..h2n {
            bw.dh2_total[k] = bw.dh2[k];
        }
        for (t, &a) in adj.iter().enumerate() {
            for k in 0..h2n {
                bw.dh2_total[k] += p[l.wout + t * h2n + k].conj() * a;
                g[l.wout + t * h2n + k] += a * cur.h2[k].conj();
            }
            g[l.sb + site * LOCAL_DIM + t] += a;
        }

        // Layer 2.
        cell_backward(
            h2n,
            cur.a2,
            cur.tc2,
            prev.as_ref().map(|v| v.c2),
            &bw.dh2_total,
            &mut bw.dc2,
            &mut bw.dz2,
        );
        bw.dh1_total.copy_from_slice(&bw.dh1);
        bw.dh2.iter_mut().for_each(|z| *z = C::zero());
        for r in 0..4 * h2n {
            let dz = bw.dz2[r];
            if dz.is_zero() {
                continue;
            }
            g[l.b2 + r] += dz;
            let wrow = l.w2 + r * h1n;
            for k in 0..h1n {
                g[wrow + k] += dz * cur.h1[k].conj();
                bw.dh1_total[k] += p[wrow + k].conj() * dz;
            }
            if let Some(prev) = &prev {
                let urow = l.u2 + r * h2n;
                for k in 0..h2n {
                    g[urow + k] += dz * prev.h2[k].conj();
                    bw.dh2[k] += p[urow + k].conj() * dz;
                }
            }
        }

        // Layer 1.
        cell_backward(
            h1n,
            cur.a1,
            cur.tc1,
            prev.as_ref().map(|v| v.c1),
            &bw.dh1_total,
            &mut bw.dc1,
            &mut bw.dz1,
        );
        bw.dh1.iter_mut().for_each(|z| *z = C::zero());
        let input = (site > 0).then(|| x[site - 1] as usize);
        for r in 0..4 * h1n {
            let dz = bw.dz1[r];
            if dz.is_zero() {
                continue;
            }
            g[l.b1 + r] += dz;
            if let Some(sp) = input {
                g[l.w1 + r * LOCAL_DIM + sp] += dz;
            }
            if let Some(prev) = &prev {
                let urow = l.u1 + r * h1n;
                for k in 0..h1n {
                    g[urow + k] += dz * prev.h1[k].conj();
                    bw.dh1[k] += p[urow + k].conj() * dz;
                }
            }
        }
    }
}
