use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Float;

use crate::scalar::Real;

/// Solution of a symmetric system through the eigenvalue pseudoinverse.
pub(crate) struct PinvSolution<T: Real> {
    pub x: DVector<T>,
    /// Number of eigenvalues kept above the cutoff.
    pub rank: usize,
}

/// `x = A⁺ b` keeping eigenvalues `λ > rel_cutoff · λ_max`. Returns rank 0
/// when the spectrum is non-positive or not finite.
pub(crate) fn pinv_solve<T: Real>(a: DMatrix<T>, b: &DVector<T>, rel_cutoff: T) -> PinvSolution<T> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let lmax = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(T::zero(), |m, v| Float::max(m, v));
    let mut x = DVector::<T>::zeros(n);
    if !Float::is_finite(lmax) || lmax <= T::zero() {
        return PinvSolution { x, rank: 0 };
    }
    let cut = rel_cutoff * lmax;
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cut {
            let v = eig.eigenvectors.column(k);
            let coeff = v.dot(b) / lambda;
            x.axpy(coeff, &v, T::one());
            rank += 1;
        }
    }
    PinvSolution { x, rank }
}

/// Same result as [`pinv_solve`] for `a = M + D` with `M` positive
/// semidefinite and `D` diagonal with entries at least `min_shift`. When
/// `min_shift > rel_cutoff · tr(a)` no eigenvalue can fall below the cutoff
/// (`λ_max ≤ tr a`), so the pseudoinverse is the inverse and a Cholesky
/// factorization replaces the eigendecomposition.
pub(crate) fn shifted_solve<T: Real>(
    a: DMatrix<T>,
    b: &DVector<T>,
    rel_cutoff: T,
    min_shift: T,
) -> PinvSolution<T> {
    let n = a.nrows();
    let trace = a.trace();
    if Float::is_finite(trace) && min_shift > rel_cutoff * trace {
        if let Some(ch) = a.clone().cholesky() {
            return PinvSolution {
                x: ch.solve(b),
                rank: n,
            };
        }
    }
    pinv_solve(a, b, rel_cutoff)
}
