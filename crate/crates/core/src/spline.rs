//! Isotonic projection and monotone piecewise-cubic (Fritsch–Carlson) interpolation.

use crate::scalar::Scalar;

/// Least-squares non-decreasing fit (pool-adjacent-violators, unit weights).
pub fn isotonic_increasing<T: Scalar>(y: &[T]) -> Vec<T> {
    // blocks of (sum, count)
    let mut blocks: Vec<(T, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / T::from_usize_lossy(c0) > s1 / T::from_usize_lossy(c1) {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in blocks {
        let v = s / T::from_usize_lossy(c);
        out.extend(std::iter::repeat_n(v, c));
    }
    out
}

/// Monotone cubic Hermite interpolant through `(x_k, y_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic<T> {
    x: Vec<T>,
    y: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Scalar> MonotoneCubic<T> {
    /// `x` must be strictly increasing and `y` monotone for the result to be monotone.
    pub fn new(x: Vec<T>, y: Vec<T>) -> Self {
        assert_eq!(x.len(), y.len(), "knot and value lengths differ");
        let n = x.len();
        let mut slopes = vec![T::zero(); n];
        if n >= 2 {
            let secant: Vec<T> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
            slopes[0] = secant[0];
            slopes[n - 1] = secant[n - 2];
            for k in 1..n - 1 {
                let (a, b) = (secant[k - 1], secant[k]);
                slopes[k] = if a * b <= T::zero() { T::zero() } else { (a + b) / T::lit(2.0) };
            }
            for k in 0..n - 1 {
                let d = secant[k];
                if d == T::zero() {
                    slopes[k] = T::zero();
                    slopes[k + 1] = T::zero();
                    continue;
                }
                let a = slopes[k] / d;
                let b = slopes[k + 1] / d;
                let r = a * a + b * b;
                if r > T::lit(9.0) {
                    let tau = T::lit(3.0) / r.sqrt();
                    slopes[k] = tau * a * d;
                    slopes[k + 1] = tau * b * d;
                }
            }
        }
        Self { x, y, slopes }
    }

    pub fn knots(&self) -> &[T] {
        &self.x
    }

    pub fn values(&self) -> &[T] {
        &self.y
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    /// Evaluates the interpolant; constant beyond the end knots.
    pub fn eval(&self, t: T) -> T {
        let n = self.x.len();
        if n == 0 {
            return T::nan();
        }
        if n == 1 || t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = match self.x.iter().position(|&xk| xk > t) {
            Some(p) => p - 1,
            None => n - 2,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// Non-decreasing smooth curve through the horizon-indexed values `y_1..y_n`:
/// isotonic projection followed by monotone cubic interpolation at `j = 1..n`.
pub fn monotone_curve<T: Scalar>(y: &[T]) -> MonotoneCubic<T> {
    let proj = isotonic_increasing(y);
    let x = (1..=y.len()).map(T::from_usize_lossy).collect();
    MonotoneCubic::new(x, proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pava_pools_violators() {
        assert_eq!(isotonic_increasing(&[2.0, 1.0, 3.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(isotonic_increasing(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic_increasing(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn interpolant_hits_knots() {
        let c = monotone_curve(&[1.0, 2.0, 4.0, 4.5]);
        for (j, &v) in [1.0, 2.0, 4.0, 4.5].iter().enumerate() {
            assert_eq!(c.eval((j + 1) as f64), v);
        }
    }

    proptest! {
        #[test]
        fn curve_is_monotone_everywhere(ys in proptest::collection::vec(0.0f64..10.0, 2..25)) {
            let c = monotone_curve(&ys);
            let n = ys.len() as f64;
            let mut prev = c.eval(1.0);
            let mut t = 1.0;
            while t <= n {
                let v = c.eval(t);
                prop_assert!(v >= prev - 1e-12, "dropped at {t}: {prev} -> {v}");
                prev = v;
                t += 0.01;
            }
        }

        #[test]
        fn projection_is_idempotent(ys in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let p = isotonic_increasing(&ys);
            prop_assert_eq!(isotonic_increasing(&p), p.clone());
            // mean is preserved by PAVA
            let s0: f64 = ys.iter().sum();
            let s1: f64 = p.iter().sum();
            prop_assert!((s0 - s1).abs() < 1e-9);
        }
    }
}
