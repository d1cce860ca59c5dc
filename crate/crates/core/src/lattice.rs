//! Spin-1/2 XY chain, `H = J Σ_j (σˣ_j σˣ_{j+1} + σʸ_j σʸ_{j+1})` with `J = 1/2`
//! by default.
//!
//! In the σᶻ basis the Hamiltonian is purely off-diagonal: every anti-aligned
//! bond `(j, j+1)` connects `x` to the configuration with the two spins
//! swapped, with matrix element `2J`.
//!
//! The sum over bonds runs `j = 1..N` with site `N+1` identified with site 1,
//! i.e. periodic boundaries are the default. That reading rests only on the
//! upper limit of the bond sum, so open chains are supported as well.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar, C};

/// Largest chain for which a dense `2^N` matrix is built.
pub const DENSE_MAX_SITES: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Periodic,
    Open,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Periodic => f.write_str("periodic"),
            Boundary::Open => f.write_str("open"),
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" | "pbc" => Ok(Boundary::Periodic),
            "open" | "obc" => Ok(Boundary::Open),
            other => Err(Error::InvalidArgument(format!(
                "boundary must be 'periodic' or 'open', got '{other}'"
            ))),
        }
    }
}

/// Computational basis state. `0` is spin down, `1` is spin up.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfiguration(Vec<u8>);

impl SpinConfiguration {
    pub fn new(sites: Vec<u8>) -> Result<Self> {
        if let Some((site, &value)) = sites.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidSpin { site, value });
        }
        Ok(Self(sites))
    }

    /// Parses a string such as `"1010"`.
    pub fn parse(s: &str) -> Result<Self> {
        let sites = s
            .bytes()
            .enumerate()
            .map(|(site, b)| match b {
                b'0' => Ok(0),
                b'1' => Ok(1),
                other => Err(Error::InvalidSpin { site, value: other }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(sites))
    }

    /// Configuration encoded by the bits of `index`, site `i` ↔ bit `i`.
    pub fn from_index(n_sites: usize, index: usize) -> Self {
        Self((0..n_sites).map(|i| ((index >> i) & 1) as u8).collect())
    }

    pub fn index(&self) -> usize {
        basis_index(&self.0)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_up(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Display for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl AsRef<[u8]> for SpinConfiguration {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub(crate) fn basis_index(x: &[u8]) -> usize {
    x.iter()
        .enumerate()
        .fold(0usize, |acc, (i, &s)| acc | ((s as usize) << i))
}

/// XY chain Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct XyChain<T> {
    n_sites: usize,
    boundary: Boundary,
    coupling: T,
}

impl<T: Scalar> XyChain<T> {
    /// Chain with the standard coupling `J = 1/2`.
    pub fn new(n_sites: usize, boundary: Boundary) -> Result<Self> {
        Self::with_coupling(n_sites, boundary, T::lit(0.5))
    }

    pub fn with_coupling(n_sites: usize, boundary: Boundary, coupling: T) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::TooFewSites(n_sites));
        }
        if !coupling.is_finite() {
            return Err(Error::NonFinite("coupling"));
        }
        Ok(Self {
            n_sites,
            boundary,
            coupling,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn coupling(&self) -> T {
        self.coupling
    }

    /// Off-diagonal element of a swap move.
    pub fn hop_element(&self) -> T {
        self.coupling + self.coupling
    }

    /// Bonds `(j, j+1)` in order. A periodic `N = 2` chain lists the same pair
    /// twice, matching the bond sum literally.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_sites;
        let count = match self.boundary {
            Boundary::Periodic => n,
            Boundary::Open => n - 1,
        };
        (0..count).map(move |j| (j, (j + 1) % n))
    }

    pub fn check(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.n_sites {
            return Err(Error::LengthMismatch {
                expected: self.n_sites,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Calls `f(j, k)` for every bond whose two spins are anti-aligned.
    #[inline]
    pub fn for_each_flippable(&self, x: &[u8], mut f: impl FnMut(usize, usize)) {
        for (j, k) in self.bonds() {
            if x[j] != x[k] {
                f(j, k);
            }
        }
    }

    /// Every `x'` with `⟨x|H|x'⟩ ≠ 0`, one entry per bond.
    pub fn connected_states(&self, x: &SpinConfiguration) -> Result<Vec<(SpinConfiguration, T)>> {
        self.check(x.as_slice())?;
        let element = self.hop_element();
        let mut out = Vec::new();
        self.for_each_flippable(x.as_slice(), |j, k| {
            let mut y = x.0.clone();
            y.swap(j, k);
            out.push((SpinConfiguration(y), element));
        });
        Ok(out)
    }

    /// `E_loc(x) = Σ_{x'} ⟨x|H|x'⟩ exp(logψ(x') − logψ(x))`.
    ///
    /// A non-finite log-amplitude yields a non-finite result; callers decide
    /// whether to reject the sample.
    pub fn local_energy<F>(&self, logpsi: F, x: &SpinConfiguration) -> Result<C<T>>
    where
        F: Fn(&[u8]) -> C<T>,
    {
        self.check(x.as_slice())?;
        let base = logpsi(x.as_slice());
        let element = self.hop_element();
        let mut acc = C::new(T::zero(), T::zero());
        let mut y = x.0.clone();
        self.for_each_flippable(x.as_slice(), |j, k| {
            y.swap(j, k);
            acc += (logpsi(&y) - base).exp() * element;
            y.swap(j, k);
        });
        Ok(acc)
    }
}

impl<T: Real> XyChain<T> {
    /// Dense `2^N × 2^N` matrix in the basis of [`SpinConfiguration::from_index`].
    pub fn dense_hamiltonian(&self) -> Result<DMatrix<T>> {
        if self.n_sites > DENSE_MAX_SITES {
            return Err(Error::TooManySites {
                n: self.n_sites,
                max: DENSE_MAX_SITES,
            });
        }
        let dim = 1usize << self.n_sites;
        let element = self.hop_element();
        let mut h = DMatrix::<T>::zeros(dim, dim);
        for row in 0..dim {
            for (j, k) in self.bonds() {
                let (bj, bk) = ((row >> j) & 1, (row >> k) & 1);
                if bj != bk {
                    let col = row ^ (1 << j) ^ (1 << k);
                    h[(row, col)] += element;
                }
            }
        }
        Ok(h)
    }
}
