//! Convex hull of the reciprocal curve `y = 1/c` on an integer box.
//!
//! The hull of `{(c, 1/c) : lo ≤ c ≤ hi}` lies above the convex curve and
//! below the secant through its endpoints. The four McCormick inequalities
//! of the bilinear row `c·y = 1` over `[lo, hi] × [1/hi, 1/lo]` describe a
//! looser polytope containing the hull.

/// Relaxation of `c·y = 1` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocalEnvelope {
    /// Lower end of the `c` box.
    pub lo: f64,
    /// Upper end of the `c` box.
    pub hi: f64,
}

/// Envelope of the reciprocal curve over `[lo, hi]` (`0 < lo ≤ hi`).
pub fn reciprocal_envelope(lo: f64, hi: f64) -> ReciprocalEnvelope {
    assert!(
        lo > 0.0 && lo <= hi,
        "reciprocal envelope needs 0 < lo <= hi"
    );
    ReciprocalEnvelope { lo, hi }
}

impl ReciprocalEnvelope {
    /// Secant upper bound `(lo + hi − c)/(lo·hi)`.
    pub fn secant(&self, c: f64) -> f64 {
        (self.lo + self.hi - c) / (self.lo * self.hi)
    }

    /// Tangent to `1/c` at `c0`, evaluated at `c`.
    pub fn tangent(&self, c0: f64, c: f64) -> f64 {
        2.0 / c0 - c / (c0 * c0)
    }

    /// Whether `(c, y)` lies in the convex hull of the curve, up to `tol`.
    pub fn hull_contains(&self, c: f64, y: f64, tol: f64) -> bool {
        c >= self.lo - tol && c <= self.hi + tol && y >= 1.0 / c - tol && y <= self.secant(c) + tol
    }

    /// Whether `(c, y)` satisfies the four McCormick inequalities, up to `tol`.
    pub fn mccormick_contains(&self, c: f64, y: f64, tol: f64) -> bool {
        let (cl, cu) = (self.lo, self.hi);
        let (yl, yu) = (1.0 / self.hi, 1.0 / self.lo);
        let w = 1.0;
        w >= cl * y + c * yl - cl * yl - tol
            && w >= cu * y + c * yu - cu * yu - tol
            && w <= cu * y + c * yl - cu * yl + tol
            && w <= cl * y + c * yu - cl * yu + tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_points_lie_in_both_relaxations() {
        let env = reciprocal_envelope(2.0, 7.0);
        for c in 2..=7 {
            let c = c as f64;
            assert!(env.hull_contains(c, 1.0 / c, 1e-12));
            assert!(env.mccormick_contains(c, 1.0 / c, 1e-12));
            assert!(env.tangent(3.0, c) <= 1.0 / c + 1e-15);
        }
    }

    #[test]
    fn mixtures_lie_in_the_hull() {
        let env = reciprocal_envelope(1.0, 5.0);
        let weights = [0.2, 0.5, 0.3];
        let pts = [1.0, 3.0, 5.0];
        let c: f64 = weights.iter().zip(&pts).map(|(w, p)| w * p).sum();
        let y: f64 = weights.iter().zip(&pts).map(|(w, p)| w / p).sum();
        assert!(env.hull_contains(c, y, 1e-12));
        assert!(env.mccormick_contains(c, y, 1e-12));
        assert!(!env.hull_contains(c, env.secant(c) + 0.1, 1e-12));
    }
}
