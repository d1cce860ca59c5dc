//! Savitzky-Golay smoothing and shape-preserving interpolation.

use nalgebra::DMatrix;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Filter weights for every evaluation position of one window.
///
/// `value[p]` and `slope[p]` hold the weights of the least-squares
/// polynomial (and of its derivative, per unit sample spacing) evaluated at
/// position `p` of the window.
struct SavgolWeights<T> {
    window: usize,
    value: Vec<Vec<T>>,
    slope: Vec<Vec<T>>,
}

fn check_window(len: usize, window: usize, order: usize) -> Result<()> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "window must be odd, got {window}"
        )));
    }
    if order >= window {
        return Err(Error::InvalidArgument(format!(
            "order {order} must be smaller than window {window}"
        )));
    }
    if len < window {
        return Err(Error::TooShort { len, window });
    }
    Ok(())
}

impl<T: Real> SavgolWeights<T> {
    fn new(window: usize, order: usize) -> Self {
        let half = (window / 2).max(1) as f64;
        let mut value = Vec::with_capacity(window);
        let mut slope = Vec::with_capacity(window);
        for p in 0..window {
            // Offsets are scaled by the half width to keep the Vandermonde
            // matrix well conditioned.
            let v = DMatrix::<f64>::from_fn(window, order + 1, |j, k| {
                ((j as f64 - p as f64) / half).powi(k as i32)
            });
            let pinv = v
                .svd(true, true)
                .pseudo_inverse(1e-14)
                .expect("SVD with both factors computed");
            value.push(pinv.row(0).iter().map(|&c| T::lit(c)).collect());
            slope.push(if order >= 1 {
                pinv.row(1).iter().map(|&c| T::lit(c / half)).collect()
            } else {
                vec![T::zero(); window]
            });
        }
        Self {
            window,
            value,
            slope,
        }
    }

    /// Applies the weights of `table` at every index: interior points use
    /// the centered window, edge points the first or last full window.
    fn apply(&self, values: &[T], table: &[Vec<T>]) -> Vec<T> {
        let n = values.len();
        let half = self.window / 2;
        (0..n)
            .map(|i| {
                let start = i.saturating_sub(half).min(n - self.window);
                let w = &table[i - start];
                w.iter()
                    .zip(&values[start..start + self.window])
                    .fold(T::zero(), |acc, (&c, &y)| acc + c * y)
            })
            .collect()
    }
}

/// Least-squares local polynomial smoothing of uniformly spaced samples.
///
/// Points within `window / 2` of either end take the value of the
/// polynomial fitted to the first (or last) full window.
pub fn savgol<T: Real>(values: &[T], window: usize, order: usize) -> Result<Vec<T>> {
    check_window(values.len(), window, order)?;
    let w = SavgolWeights::<T>::new(window, order);
    Ok(w.apply(values, &w.value))
}

/// Derivative of the local polynomial fit with respect to `taus`.
///
/// The grid must be uniform: every spacing has to lie within 1% of the mean
/// spacing.
pub fn derivative_savgol<T: Real>(
    values: &[T],
    taus: &[T],
    window: usize,
    order: usize,
) -> Result<Vec<T>> {
    if values.len() != taus.len() {
        return Err(Error::LengthMismatch {
            expected: values.len(),
            got: taus.len(),
        });
    }
    check_window(values.len(), window, order)?;
    if order == 0 {
        return Err(Error::InvalidArgument("derivative needs order >= 1".into()));
    }
    let h = uniform_spacing(taus)?;
    let w = SavgolWeights::<T>::new(window, order);
    Ok(w.apply(values, &w.slope)
        .into_iter()
        .map(|d| d / h)
        .collect())
}

fn uniform_spacing<T: Real>(taus: &[T]) -> Result<T> {
    let n = taus.len();
    let h = (taus[n - 1] - taus[0]) / T::lit((n - 1) as f64);
    if !(h > T::zero()) || !Float::is_finite(h) {
        return Err(Error::InvalidArgument("taus must be increasing".into()));
    }
    let tol = T::lit(0.01) * h;
    for (k, pair) in taus.windows(2).enumerate() {
        let d = pair[1] - pair[0];
        if !(Float::abs(d - h) <= tol) {
            return Err(Error::InvalidArgument(format!(
                "non-uniform spacing at index {k}: {d} vs mean {h}"
            )));
        }
    }
    Ok(h)
}

/// Length of the longest strictly increasing prefix.
pub fn monotone_prefix<T: Real>(values: &[T]) -> usize {
    if values.is_empty() || !Float::is_finite(values[0]) {
        return 0;
    }
    1 + values
        .windows(2)
        .take_while(|p| p[1] > p[0] && Float::is_finite(p[1]))
        .count()
}

/// Cumulative trapezoid integral, starting at zero.
pub fn cumulative_trapezoid<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = T::zero();
    for k in 0..x.len() {
        if k > 0 {
            acc += T::lit(0.5) * (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
        }
        out.push(acc);
    }
    out
}

/// Piecewise-cubic Hermite interpolant with Fritsch-Carlson slopes.
///
/// Monotone data gives a monotone interpolant, and the curve never leaves
/// the range of the two knots bracketing a query.
#[derive(Clone, Debug, PartialEq)]
pub struct Pchip<T> {
    x: Vec<T>,
    y: Vec<T>,
    d: Vec<T>,
}

fn same_sign<T: Real>(a: T, b: T) -> bool {
    (a > T::zero() && b > T::zero()) || (a < T::zero() && b < T::zero())
}

impl<T: Real> Pchip<T> {
    /// `x` must be strictly increasing with at least two knots.
    pub fn new(x: Vec<T>, y: Vec<T>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let n = x.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "interpolation needs two knots".into(),
            ));
        }
        if monotone_prefix(&x) != n || !y.iter().all(|v| Float::is_finite(*v)) {
            return Err(Error::InvalidArgument(
                "knots must be finite with strictly increasing abscissae".into(),
            ));
        }
        let h: Vec<T> = x.windows(2).map(|p| p[1] - p[0]).collect();
        let delta: Vec<T> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![T::zero(); n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Ok(Self { x, y, d });
        }
        let two = T::lit(2.0);
        for k in 1..n - 1 {
            if same_sign(delta[k - 1], delta[k]) {
                let w1 = two * h[k] + h[k - 1];
                let w2 = h[k] + two * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { x, y, d })
    }

    pub fn domain(&self) -> (T, T) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn knots(&self) -> (&[T], &[T]) {
        (&self.x, &self.y)
    }

    /// Value at `q`; queries outside the knot range are errors.
    pub fn eval(&self, q: T) -> Result<T> {
        let (lo, hi) = self.domain();
        if !(q >= lo && q <= hi) {
            return Err(Error::OutOfRange {
                query: q.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
        let k = match self.x.partition_point(|&v| v <= q) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        };
        let h = self.x[k + 1] - self.x[k];
        let t = (q - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        Ok(h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1])
    }
}

/// Three-point end slope, limited to keep the end interval monotone.
fn end_slope<T: Real>(h0: T, h1: T, delta0: T, delta1: T) -> T {
    let d = ((T::lit(2.0) * h0 + h1) * delta0 - h0 * delta1) / (h0 + h1);
    if !same_sign(d, delta0) {
        T::zero()
    } else if !same_sign(delta0, delta1) && Float::abs(d) > T::lit(3.0) * Float::abs(delta0) {
        T::lit(3.0) * delta0
    } else {
        d
    }
}

/// Inverse of a strictly increasing map `τ ↦ β`, as an interpolant of `τ`
/// over `β`.
pub fn invert_map<T: Real>(taus: &[T], betas: &[T]) -> Result<Pchip<T>> {
    if taus.len() != betas.len() {
        return Err(Error::LengthMismatch {
            expected: taus.len(),
            got: betas.len(),
        });
    }
    Pchip::new(betas.to_vec(), taus.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn poly(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    #[test]
    fn polynomials_up_to_order_are_reproduced() {
        for (window, order) in [(5, 2), (11, 3), (21, 3), (41, 4)] {
            for deg in 0..=order {
                let coeffs: Vec<f64> = (0..=deg)
                    .map(|k| 0.3 * (k as f64 + 1.0) * (-1f64).powi(k as i32))
                    .collect();
                let xs: Vec<f64> = (0..80).map(|i| i as f64 * 0.05).collect();
                let ys: Vec<f64> = xs.iter().map(|&x| poly(&coeffs, x)).collect();
                let s = savgol(&ys, window, order).unwrap();
                for (a, b) in s.iter().zip(&ys) {
                    assert!(
                        (a - b).abs() < 1e-10,
                        "window {window} order {order} deg {deg}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_and_short_inputs() {
        let c = vec![2.5; 30];
        for (a, b) in savgol(&c, 21, 3).unwrap().iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            savgol(&c[..10], 21, 3),
            Err(Error::TooShort {
                len: 10,
                window: 21
            })
        ));
        assert!(savgol(&c, 20, 3).is_err());
        assert!(savgol(&c, 5, 5).is_err());
    }

    #[test]
    fn noisy_sine_is_denoised() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let xs: Vec<f64> = (0..201)
            .map(|i| i as f64 * 2.0 * std::f64::consts::PI / 200.0)
            .collect();
        let clean: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let noisy: Vec<f64> = clean.iter().map(|y| y + noise.sample(&mut rng)).collect();
        let smooth = savgol(&noisy, 21, 3).unwrap();
        let rms = |a: &[f64]| {
            (a.iter()
                .zip(&clean)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / 201.0)
                .sqrt()
        };
        assert!(
            rms(&smooth) * 2.0 <= rms(&noisy),
            "{} vs {}",
            rms(&smooth),
            rms(&noisy)
        );
    }

    #[test]
    fn derivative_examples() {
        let taus: Vec<f64> = (0..50).map(|i| 0.1 * i as f64).collect();
        let ramp: Vec<f64> = taus.iter().map(|t| 3.0 * t - 1.0).collect();
        for d in derivative_savgol(&ramp, &taus, 11, 2).unwrap() {
            assert!((d - 3.0).abs() < 1e-9);
        }
        let quad: Vec<f64> = taus.iter().map(|t| 0.7 * t * t).collect();
        let d = derivative_savgol(&quad, &taus, 11, 2).unwrap();
        for (k, t) in taus.iter().enumerate() {
            assert!((d[k] - 1.4 * t).abs() < 1e-8);
        }
        let mut bent = taus.clone();
        bent[20] += 0.01;
        assert!(derivative_savgol(&quad, &bent, 11, 2).is_err());
        assert!(derivative_savgol(&quad, &taus[..49], 11, 2).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences_of_smoothed_data() {
        let taus: Vec<f64> = (0..200).map(|i| 0.02 * i as f64).collect();
        let ys: Vec<f64> = taus
            .iter()
            .map(|t| (1.3 * t).sin() * (-0.2 * t).exp())
            .collect();
        let s = savgol(&ys, 21, 3).unwrap();
        let d = derivative_savgol(&ys, &taus, 21, 3).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 1..199 {
            let fd = (s[k + 1] - s[k - 1]) / (taus[k + 1] - taus[k - 1]);
            num += (fd - d[k]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < 0.05);
    }

    #[test]
    fn monotone_prefix_examples() {
        assert_eq!(monotone_prefix::<f64>(&[]), 0);
        assert_eq!(monotone_prefix(&[0.0, 1.0, 2.0, 1.5, 3.0]), 3);
        assert_eq!(monotone_prefix(&[0.0, 1.0, 2.0, 3.0]), 4);
        assert_eq!(monotone_prefix(&[0.0, 0.0]), 1);
        assert_eq!(monotone_prefix(&[0.0, 1.0, f64::NAN]), 2);
    }

    #[test]
    fn inversion_examples() {
        let taus: Vec<f64> = (0..30).map(|i| 0.05 * i as f64).collect();
        let betas: Vec<f64> = taus.iter().map(|t| 2.0 * t).collect();
        let inv = invert_map(&taus, &betas).unwrap();
        for q in [0.013, 0.5, 1.111, 2.8] {
            assert!((inv.eval(q).unwrap() - q / 2.0).abs() < 1e-9);
        }
        let curved: Vec<f64> = taus.iter().map(|t| t + t * t).collect();
        let inv = invert_map(&taus, &curved).unwrap();
        for (t, b) in taus.iter().zip(&curved) {
            assert_eq!(inv.eval(*b).unwrap(), *t);
        }
        assert!(matches!(inv.eval(100.0), Err(Error::OutOfRange { .. })));
        assert!(inv.eval(-1e-3).is_err());
        assert!(invert_map(&[0.0, 1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let x = [0.0, 0.5, 1.5, 2.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = cumulative_trapezoid(&x, &y);
        for (xi, ci) in x.iter().zip(&c) {
            assert!((ci - (xi * xi + xi)).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn savgol_is_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 25..60),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            shift in 0usize..1000,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| ((i + shift) as f64 * 0.37).sin() * v).collect();
            let comb: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let lhs = savgol(&comb, 21, 3).unwrap();
            let sx = savgol(&xs, 21, 3).unwrap();
            let sy = savgol(&ys, 21, 3).unwrap();
            for k in 0..xs.len() {
                prop_assert!((lhs[k] - (a * sx[k] + b * sy[k])).abs() < 1e-12 * (1.0 + lhs[k].abs()) * 10.0);
            }
        }

        #[test]
        fn inverse_is_monotone(
            steps in proptest::collection::vec(1e-3f64..1.0, 2..40),
            queries in proptest::collection::vec(0.0f64..1.0, 2..50),
        ) {
            let betas: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
            let taus: Vec<f64> = (0..betas.len()).map(|i| 0.01 * i as f64).collect();
            let inv = invert_map(&taus, &betas).unwrap();
            let (lo, hi) = inv.domain();
            let mut qs: Vec<f64> = queries.iter().map(|q| lo + q * (hi - lo)).collect();
            qs.sort_by(f64::total_cmp);
            let vals: Vec<f64> = qs.iter().map(|&q| inv.eval(q).unwrap()).collect();
            for p in vals.windows(2) {
                prop_assert!(p[1] >= p[0]);
            }
        }

        #[test]
        fn derivative_of_smoothed_data_is_finite(ys in proptest::collection::vec(-1e3f64..1e3, 21..80)) {
            let taus: Vec<f64> = (0..ys.len()).map(|i| 0.01 * i as f64).collect();
            let s = savgol(&ys, 21, 3).unwrap();
            prop_assert!(derivative_savgol(&s, &taus, 21, 3).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}
