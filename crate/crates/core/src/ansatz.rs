//! Two-layer complex LSTM autoregressive wavefunction.
//!
//! The amplitude factorizes into per-site conditionals,
//! `ln ψ(x) = Σ_i ℓ_i(x_i | x_{<i})`, where the logits `ℓ_i` come from a
//! linear read-out of the second LSTM layer plus a per-site bias, shifted by
//! a real constant so that `|e^{ℓ_i(0)}|² + |e^{ℓ_i(1)}|² = 1`. The raw
//! read-out is unnormalized; after the shift `ψ` is normalized and ancestral
//! sampling draws exactly from `|ψ|²`.
//!
//! # Cell convention
//!
//! All weights and biases are complex. Gate nonlinearities act separately on
//! the real and imaginary parts of the pre-activation ("split" activation):
//!
//! ```text
//! σ̃(z) = σ(Re z) + i σ(Im z),      tanh̃(z) = tanh(Re z) + i tanh(Im z)
//!
//! i = σ̃(W_i u + U_i h + b_i)       f = σ̃(W_f u + U_f h + b_f)
//! g = tanh̃(W_g u + U_g h + b_g)    o = σ̃(W_o u + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g               h' = o ⊙ tanh̃(c')
//! ```
//!
//! Products are complex products. The map is therefore not holomorphic in
//! the parameters, and derivatives are taken with respect to the real and
//! imaginary part of every parameter separately (see [`crate::grad`]).
//!
//! Layer 1 reads the one-hot encoding of the previous spin (a zero vector at
//! the first site), layer 2 reads the layer-1 hidden state, and both start
//! from zero hidden and cell states.

use num_traits::{Float, Zero};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::SpinConfiguration;
use crate::scalar::{cplx, is_finite_c, Scalar, C};

/// Number of LSTM gates (input, forget, cell, output).
const GATES: usize = 4;
/// Local Hilbert space dimension.
pub const LOCAL_DIM: usize = 2;

/// Network dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LstmShape {
    pub n_sites: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl LstmShape {
    /// Default widths: 10 units in layer 1, 2 in layer 2.
    pub fn new(n_sites: usize) -> Self {
        Self {
            n_sites,
            hidden1: 10,
            hidden2: 2,
        }
    }

    pub fn with_hidden(n_sites: usize, hidden1: usize, hidden2: usize) -> Self {
        Self {
            n_sites,
            hidden1,
            hidden2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_sites == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "all LSTM dimensions must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Offsets of the named parameter blocks in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub w1: usize,
    pub u1: usize,
    pub b1: usize,
    pub w2: usize,
    pub u2: usize,
    pub b2: usize,
    pub wout: usize,
    pub sb: usize,
    pub total: usize,
}

impl Layout {
    fn new(s: &LstmShape) -> Self {
        let (h1, h2) = (s.hidden1, s.hidden2);
        let w1 = 0;
        let u1 = w1 + GATES * h1 * LOCAL_DIM;
        let b1 = u1 + GATES * h1 * h1;
        let w2 = b1 + GATES * h1;
        let u2 = w2 + GATES * h2 * h1;
        let b2 = u2 + GATES * h2 * h2;
        let wout = b2 + GATES * h2;
        let sb = wout + LOCAL_DIM * h2;
        let total = sb + s.n_sites * LOCAL_DIM;
        Self {
            w1,
            u1,
            b1,
            w2,
            u2,
            b2,
            wout,
            sb,
            total,
        }
    }
}

/// A named parameter block: `(name, offset, dims)`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub offset: usize,
    pub dims: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Per-site conditional logits `(ℓ_i(0), ℓ_i(1))` along a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalLogits<T>(pub Vec<[C<T>; 2]>);

impl<T: Scalar> ConditionalLogits<T> {
    /// Sum of the entries selected by `x`.
    pub fn select_sum(&self, x: &[u8]) -> C<T> {
        self.0
            .iter()
            .zip(x)
            .fold(C::zero(), |acc, (l, &s)| acc + l[s as usize])
    }
}

/// Complex two-layer LSTM wavefunction.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWavefunction<T> {
    shape: LstmShape,
    layout: Layout,
    params: Vec<C<T>>,
}

impl<T: Scalar> LstmWavefunction<T> {
    /// All parameters zero.
    pub fn zeros(shape: LstmShape) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        Ok(Self {
            shape,
            layout,
            params: vec![C::zero(); layout.total],
        })
    }

    /// Every parameter drawn with independent `N(0, scale²)` real and
    /// imaginary parts.
    pub fn random<R: Rng + ?Sized>(shape: LstmShape, rng: &mut R, scale: f64) -> Result<Self> {
        let mut w = Self::zeros(shape)?;
        for p in w.params.iter_mut() {
            *p = gaussian_c(rng, scale);
        }
        Ok(w)
    }

    /// Product-state initialization.
    ///
    /// Every layer-2 parameter is zero, so the layer-2 hidden state vanishes
    /// at every site and the logits reduce to the site biases, which are set
    /// to `ln a_i(s)`. Hence `ln ψ(x) = Σ_i ln a_i(x_i) + c` with the
    /// constant `c = −½ Σ_i ln(|a_i(0)|² + |a_i(1)|²)` from the per-site
    /// normalization, which vanishes for unit-norm pairs. The layer-2 state
    /// is zero because with zero pre-activations the cell gate is
    /// `tanh̃(0) = 0`, so `c = 0` and `h = o ⊙ tanh̃(0) = 0` regardless of the
    /// other gates.
    ///
    /// Layer-1 parameters are drawn with scale `feature_scale` and the
    /// read-out is the identity on the first `min(2, hidden2)` units. Neither
    /// changes the represented state, but they keep the gradients of the
    /// layer-2 input weights nonzero; with everything zeroed the ansatz sits
    /// on a saddle where only the site biases move. `feature_scale = 0`
    /// gives the fully zeroed network.
    ///
    /// A zero entry of a pair maps to a log-amplitude of
    /// [`ZERO_AMPLITUDE_LOG`], which keeps all parameters finite.
    pub fn product_state<R: Rng + ?Sized>(
        shape: LstmShape,
        amps: &[[C<T>; 2]],
        rng: &mut R,
        feature_scale: f64,
    ) -> Result<Self> {
        if amps.len() != shape.n_sites {
            return Err(Error::LengthMismatch {
                expected: shape.n_sites,
                got: amps.len(),
            });
        }
        let mut w = Self::zeros(shape)?;
        let l = w.layout;
        if feature_scale > 0.0 {
            for p in &mut w.params[l.w1..l.w2] {
                *p = gaussian_c(rng, feature_scale);
            }
        }
        for s in 0..LOCAL_DIM.min(shape.hidden2) {
            w.params[l.wout + s * shape.hidden2 + s] = C::new(T::one(), T::zero());
        }
        for (site, pair) in amps.iter().enumerate() {
            if pair.iter().all(|a| a.is_zero()) || !pair.iter().all(|a| is_finite_c(*a)) {
                return Err(Error::ZeroAmplitude { site });
            }
            for s in 0..LOCAL_DIM {
                w.params[l.sb + site * LOCAL_DIM + s] = log_amplitude_entry(pair[s]);
            }
        }
        Ok(w)
    }

    pub fn shape(&self) -> LstmShape {
        self.shape
    }

    pub fn n_sites(&self) -> usize {
        self.shape.n_sites
    }

    /// Number of complex parameters.
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[C<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [C<T>] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| is_finite_c(*p))
    }

    /// Named blocks in storage order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let s = &self.shape;
        let l = &self.layout;
        let (h1, h2) = (s.hidden1, s.hidden2);
        vec![
            ParamBlock {
                name: "layer1.w_in",
                offset: l.w1,
                dims: vec![GATES * h1, LOCAL_DIM],
            },
            ParamBlock {
                name: "layer1.w_rec",
                offset: l.u1,
                dims: vec![GATES * h1, h1],
            },
            ParamBlock {
                name: "layer1.bias",
                offset: l.b1,
                dims: vec![GATES * h1],
            },
            ParamBlock {
                name: "layer2.w_in",
                offset: l.w2,
                dims: vec![GATES * h2, h1],
            },
            ParamBlock {
                name: "layer2.w_rec",
                offset: l.u2,
                dims: vec![GATES * h2, h2],
            },
            ParamBlock {
                name: "layer2.bias",
                offset: l.b2,
                dims: vec![GATES * h2],
            },
            ParamBlock {
                name: "output.weight",
                offset: l.wout,
                dims: vec![LOCAL_DIM, h2],
            },
            ParamBlock {
                name: "site_bias",
                offset: l.sb,
                dims: vec![s.n_sites, LOCAL_DIM],
            },
        ]
    }

    /// Builds a wavefunction from a flat parameter vector laid out as in
    /// [`blocks`](Self::blocks).
    pub fn from_parts(shape: LstmShape, params: Vec<C<T>>) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        if params.len() != layout.total {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            shape,
            layout,
            params,
        })
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Mutable view of the per-site bias of `site`.
    pub fn site_bias_mut(&mut self, site: usize) -> &mut [C<T>] {
        let o = self.layout.sb + site * LOCAL_DIM;
        &mut self.params[o..o + LOCAL_DIM]
    }

    fn check(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.shape.n_sites {
            return Err(Error::LengthMismatch {
                expected: self.shape.n_sites,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `ln ψ(x)`, normalized so that `Σ_x |ψ(x)|² = 1`.
    pub fn log_amplitude(&self, x: &SpinConfiguration) -> Result<C<T>> {
        self.check(x.as_slice())?;
        let mut tape = Tape::new(&self.shape);
        Ok(self.forward(x.as_slice(), &mut tape))
    }

    /// Normalized logits at every site along the path `x`.
    pub fn conditionals(&self, x: &SpinConfiguration) -> Result<ConditionalLogits<T>> {
        self.check(x.as_slice())?;
        let mut tape = Tape::new(&self.shape);
        self.forward(x.as_slice(), &mut tape);
        Ok(ConditionalLogits(tape.logits.clone()))
    }

    /// Full forward pass recording every intermediate in `tape`; returns
    /// `ln ψ(x)`. `x` must have the right length.
    pub(crate) fn forward(&self, x: &[u8], tape: &mut Tape<T>) -> C<T> {
        tape.ensure(&self.shape);
        let mut acc = C::zero();
        for site in 0..self.shape.n_sites {
            let input = if site == 0 { None } else { Some(x[site - 1]) };
            self.site_step(site, input, tape);
            let l = tape.logits[site];
            acc += l[x[site] as usize];
            tape.prefix[site + 1] = acc;
        }
        acc
    }

    /// `ln ψ(y)` for a configuration that agrees with the configuration
    /// recorded in `tape` on sites `< first_diff`. The recorded states up to
    /// site `first_diff` are reused; `scratch` holds the recomputed suffix.
    pub(crate) fn forward_from(
        &self,
        y: &[u8],
        first_diff: usize,
        tape: &Tape<T>,
        scratch: &mut Tape<T>,
    ) -> C<T> {
        if first_diff == 0 {
            return self.forward(y, scratch);
        }
        scratch.ensure(&self.shape);
        // Logit at `first_diff` depends only on the shared prefix.
        let mut acc = tape.prefix[first_diff] + tape.logits[first_diff][y[first_diff] as usize];
        let n = self.shape.n_sites;
        if first_diff + 1 == n {
            return acc;
        }
        scratch.copy_site_from(tape, first_diff);
        for site in first_diff + 1..n {
            self.site_step(site, Some(y[site - 1]), scratch);
            acc += scratch.logits[site][y[site] as usize];
        }
        acc
    }

    /// Runs both cells at `site`, reading the previous states from
    /// `tape` (zeros at site 0) and writing this site's record.
    fn site_step(&self, site: usize, input: Option<u8>, tape: &mut Tape<T>) {
        let (h1n, h2n) = (self.shape.hidden1, self.shape.hidden2);
        let l = &self.layout;
        let p = &self.params;
        let (prev, cur) = tape.prev_and_current(site);

        // Layer 1 pre-activations.
        let z1 = &mut cur.a1[..];
        for (r, z) in z1.iter_mut().enumerate() {
            let mut acc = p[l.b1 + r];
            if let Some(s) = input {
                acc += p[l.w1 + r * LOCAL_DIM + s as usize];
            }
            if let Some(prev) = &prev {
                let row = &p[l.u1 + r * h1n..l.u1 + (r + 1) * h1n];
                acc += dot(row, prev.h1);
            }
            *z = acc;
        }
        lstm_update(
            h1n,
            prev.as_ref().map(|s| s.c1),
            cur.a1,
            cur.c1,
            cur.tc1,
            cur.h1,
        );

        // Layer 2 pre-activations.
        for r in 0..GATES * h2n {
            let mut acc = p[l.b2 + r] + dot(&p[l.w2 + r * h1n..l.w2 + (r + 1) * h1n], cur.h1);
            if let Some(prev) = &prev {
                acc += dot(&p[l.u2 + r * h2n..l.u2 + (r + 1) * h2n], prev.h2);
            }
            cur.a2[r] = acc;
        }
        lstm_update(
            h2n,
            prev.as_ref().map(|s| s.c2),
            cur.a2,
            cur.c2,
            cur.tc2,
            cur.h2,
        );

        let mut logits = [C::zero(); 2];
        for (s, lg) in logits.iter_mut().enumerate() {
            *lg = p[l.sb + site * LOCAL_DIM + s]
                + dot(&p[l.wout + s * h2n..l.wout + (s + 1) * h2n], cur.h2);
        }
        tape.logits[site] = normalize_pair(logits);
    }

    /// Draws `count` independent configurations by ancestral sampling.
    ///
    /// At each site `P(s) ∝ |exp ℓ_i(s)|²`, evaluated as a logistic function
    /// of `2 (Re ℓ_i(1) − Re ℓ_i(0))`, which cannot overflow.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
    ) -> Result<Vec<SpinConfiguration>> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let n = self.shape.n_sites;
        let mut tape = Tape::new(&self.shape);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = vec![0u8; n];
            for site in 0..n {
                let input = if site == 0 { None } else { Some(x[site - 1]) };
                self.site_step(site, input, &mut tape);
                let p_up = prob_up(tape.logits[site]);
                if !p_up.is_finite() {
                    return Err(Error::SamplingFailed { site });
                }
                let u: f64 = rng.random();
                x[site] = u8::from(u < p_up);
            }
            out.push(SpinConfiguration::new(x)?);
        }
        Ok(out)
    }

    /// Exact normalized Born probabilities over all `2^N` configurations,
    /// indexed as [`SpinConfiguration::from_index`]. Only for small chains.
    pub fn born_distribution(&self) -> Result<Vec<f64>> {
        let n = self.shape.n_sites;
        if n > 20 {
            return Err(Error::TooManySites { n, max: 20 });
        }
        let mut tape = Tape::new(&self.shape);
        let logs: Vec<f64> = (0..1usize << n)
            .map(|idx| {
                let x = SpinConfiguration::from_index(n, idx);
                2.0 * self.forward(x.as_slice(), &mut tape).re.to_f64_lossy()
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite("log amplitudes"));
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

/// Log-amplitude assigned to an exactly zero product-state entry.
pub const ZERO_AMPLITUDE_LOG: f64 = -350.0;

fn log_amplitude_entry<T: Scalar>(a: C<T>) -> C<T> {
    if a.is_zero() {
        cplx(T::lit(ZERO_AMPLITUDE_LOG), T::zero())
    } else {
        a.ln()
    }
}

/// Subtracts `½ ln(|e^{ℓ_0}|² + |e^{ℓ_1}|²)` from both logits.
fn normalize_pair<T: Scalar>(l: [C<T>; 2]) -> [C<T>; 2] {
    let (a, b) = (l[0].re, l[1].re);
    let m = a.max(b);
    let two = T::lit(2.0);
    let half_log_norm = m + ((two * (a - m)).exp() + (two * (b - m)).exp()).ln() / two;
    [
        C::new(l[0].re - half_log_norm, l[0].im),
        C::new(l[1].re - half_log_norm, l[1].im),
    ]
}

/// Probability of spin up from a pair of logits.
pub(crate) fn prob_up<T: Scalar>(logits: [C<T>; 2]) -> f64 {
    let d = 2.0 * (logits[0].re.to_f64_lossy() - logits[1].re.to_f64_lossy());
    if d.is_nan() {
        return f64::NAN;
    }
    1.0 / (1.0 + d.exp())
}

/// Gaussian classical product state: independent standard normal real and
/// imaginary parts, each site's pair normalized to unit 2-norm.
pub fn random_cps<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n_sites: usize) -> Vec<[C<T>; 2]> {
    (0..n_sites)
        .map(|_| loop {
            let pair = [gaussian_c::<T, R>(rng, 1.0), gaussian_c::<T, R>(rng, 1.0)];
            let norm = (pair[0].norm_sqr() + pair[1].norm_sqr()).sqrt();
            if norm > T::zero() {
                break [pair[0] / norm, pair[1] / norm];
            }
        })
        .collect()
}

fn gaussian_c<T: Scalar, R: Rng + ?Sized>(rng: &mut R, scale: f64) -> C<T> {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    cplx(T::lit(re * scale), T::lit(im * scale))
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[C<T>], b: &[C<T>]) -> C<T> {
    let mut re = T::zero();
    let mut im = T::zero();
    for (x, y) in a.iter().zip(b) {
        re = re + x.re * y.re - x.im * y.im;
        im = im + x.re * y.im + x.im * y.re;
    }
    cplx(re, im)
}

#[inline]
fn sigmoid<T: Float>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[inline]
pub(crate) fn split_sigmoid<T: Scalar>(z: C<T>) -> C<T> {
    cplx(sigmoid(z.re), sigmoid(z.im))
}

#[inline]
pub(crate) fn split_tanh<T: Scalar>(z: C<T>) -> C<T> {
    cplx(z.re.tanh(), z.im.tanh())
}

/// Applies the gate nonlinearities in place on `gates` (which holds the
/// pre-activations on entry) and updates cell and hidden state.
#[inline]
fn lstm_update<T: Scalar>(
    h: usize,
    c_prev: Option<&[C<T>]>,
    gates: &mut [C<T>],
    c: &mut [C<T>],
    tc: &mut [C<T>],
    hidden: &mut [C<T>],
) {
    for k in 0..h {
        let ig = split_sigmoid(gates[k]);
        let fg = split_sigmoid(gates[h + k]);
        let gg = split_tanh(gates[2 * h + k]);
        let og = split_sigmoid(gates[3 * h + k]);
        gates[k] = ig;
        gates[h + k] = fg;
        gates[2 * h + k] = gg;
        gates[3 * h + k] = og;
        let cp = c_prev.map_or(C::zero(), |cp| cp[k]);
        c[k] = fg * cp + ig * gg;
        tc[k] = split_tanh(c[k]);
        hidden[k] = og * tc[k];
    }
}

/// Per-site record of a forward pass: activated gates, cell state,
/// `tanh̃(c)` and hidden state of both layers, plus the logits and prefix
/// sums of selected logits.
#[derive(Clone, Debug)]
pub(crate) struct Tape<T> {
    shape: LstmShape,
    stride: usize,
    buf: Vec<C<T>>,
    pub logits: Vec<[C<T>; 2]>,
    /// `prefix[i] = Σ_{j<i} ℓ_j(x_j)`.
    pub prefix: Vec<C<T>>,
}

/// Borrowed view of one site's record.
pub(crate) struct SiteRecord<'a, T> {
    pub a1: &'a mut [C<T>],
    pub c1: &'a mut [C<T>],
    pub tc1: &'a mut [C<T>],
    pub h1: &'a mut [C<T>],
    pub a2: &'a mut [C<T>],
    pub c2: &'a mut [C<T>],
    pub tc2: &'a mut [C<T>],
    pub h2: &'a mut [C<T>],
}

/// Read-only view of the states carried between sites.
pub(crate) struct CarriedState<'a, T> {
    pub c1: &'a [C<T>],
    pub h1: &'a [C<T>],
    pub c2: &'a [C<T>],
    pub h2: &'a [C<T>],
}

impl<T: Scalar> Tape<T> {
    pub fn new(shape: &LstmShape) -> Self {
        let stride = 7 * shape.hidden1 + 7 * shape.hidden2;
        Self {
            shape: *shape,
            stride,
            buf: vec![C::zero(); stride * shape.n_sites],
            logits: vec![[C::zero(); 2]; shape.n_sites],
            prefix: vec![C::zero(); shape.n_sites + 1],
        }
    }

    fn ensure(&mut self, shape: &LstmShape) {
        if self.shape != *shape {
            *self = Self::new(shape);
        }
    }

    fn split_site<'a>(shape: &LstmShape, rec: &'a mut [C<T>]) -> SiteRecord<'a, T> {
        let (h1, h2) = (shape.hidden1, shape.hidden2);
        let (a1, rest) = rec.split_at_mut(GATES * h1);
        let (c1, rest) = rest.split_at_mut(h1);
        let (tc1, rest) = rest.split_at_mut(h1);
        let (hh1, rest) = rest.split_at_mut(h1);
        let (a2, rest) = rest.split_at_mut(GATES * h2);
        let (c2, rest) = rest.split_at_mut(h2);
        let (tc2, hh2) = rest.split_at_mut(h2);
        SiteRecord {
            a1,
            c1,
            tc1,
            h1: hh1,
            a2,
            c2,
            tc2,
            h2: hh2,
        }
    }

    fn carried<'a>(shape: &LstmShape, rec: &'a [C<T>]) -> CarriedState<'a, T> {
        let (h1, h2) = (shape.hidden1, shape.hidden2);
        let o_c1 = GATES * h1;
        let o_h1 = o_c1 + 2 * h1;
        let o_a2 = o_h1 + h1;
        let o_c2 = o_a2 + GATES * h2;
        let o_h2 = o_c2 + 2 * h2;
        CarriedState {
            c1: &rec[o_c1..o_c1 + h1],
            h1: &rec[o_h1..o_h1 + h1],
            c2: &rec[o_c2..o_c2 + h2],
            h2: &rec[o_h2..o_h2 + h2],
        }
    }

    /// Previous site's carried state (None at site 0) and this site's
    /// writable record.
    fn prev_and_current(
        &mut self,
        site: usize,
    ) -> (Option<CarriedState<'_, T>>, SiteRecord<'_, T>) {
        let stride = self.stride;
        let shape = self.shape;
        if site == 0 {
            let cur = Self::split_site(&shape, &mut self.buf[..stride]);
            return (None, cur);
        }
        let (head, tail) = self.buf.split_at_mut(site * stride);
        let prev = Self::carried(&shape, &head[(site - 1) * stride..]);
        let cur = Self::split_site(&shape, &mut tail[..stride]);
        (Some(prev), cur)
    }

    pub fn site(&self, site: usize) -> SiteView<'_, T> {
        let (h1, h2) = (self.shape.hidden1, self.shape.hidden2);
        let rec = &self.buf[site * self.stride..(site + 1) * self.stride];
        let (a1, rest) = rec.split_at(GATES * h1);
        let (c1, rest) = rest.split_at(h1);
        let (tc1, rest) = rest.split_at(h1);
        let (hh1, rest) = rest.split_at(h1);
        let (a2, rest) = rest.split_at(GATES * h2);
        let (c2, rest) = rest.split_at(h2);
        let (tc2, hh2) = rest.split_at(h2);
        SiteView {
            a1,
            c1,
            tc1,
            h1: hh1,
            a2,
            c2,
            tc2,
            h2: hh2,
        }
    }

    fn copy_site_from(&mut self, other: &Tape<T>, site: usize) {
        let r = site * self.stride..(site + 1) * self.stride;
        self.buf[r.clone()].copy_from_slice(&other.buf[r]);
    }
}

/// Read-only counterpart of [`SiteRecord`].
pub(crate) struct SiteView<'a, T> {
    pub a1: &'a [C<T>],
    pub c1: &'a [C<T>],
    pub tc1: &'a [C<T>],
    pub h1: &'a [C<T>],
    pub a2: &'a [C<T>],
    pub c2: &'a [C<T>],
    pub tc2: &'a [C<T>],
    pub h2: &'a [C<T>],
}
