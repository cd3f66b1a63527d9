//! Huber M-statistic for matched pairs under a constant additive effect.
//!
//! For pair differences `A_k(β0) = ΔR_k − β0·ΔD_k` (encouraged minus
//! control) the statistic is `Σ ψ(A_k / s)` with Huber's
//! `ψ(x) = max(−c, min(c, x))` and scale `s = median |A_k|`. Under the null the
//! signs of `A_k` are exchangeable, so the statistic has mean zero and
//! variance `Σ ψ²`; the deviate is compared with the normal law. The
//! confidence interval collects every `β0` the two-sided test retains.

use crate::error::{Error, Result};
use crate::stats::{median, normal_quantile};

/// Conventional Huber tuning constant.
pub const DEFAULT_HUBER_C: f64 = 1.345;

/// Huber `ψ` clipped at `±c`.
pub fn huber_psi(x: f64, c: f64) -> f64 {
    x.clamp(-c, c)
}

/// Standardized M-statistic deviate at `beta0`, or `None` when every
/// adjusted difference is zero.
pub fn huber_deviate(dr: &[f64], dd: &[f64], beta0: f64, c: f64) -> Option<f64> {
    let a: Vec<f64> = dr.iter().zip(dd).map(|(r, d)| r - beta0 * d).collect();
    let abs: Vec<f64> = a.iter().map(|v| v.abs()).collect();
    let s = median(&abs);
    if !(s > 0.0) {
        return None;
    }
    let (mut t, mut v) = (0.0, 0.0);
    for x in &a {
        let p = huber_psi(x / s, c);
        t += p;
        v += p * p;
    }
    (v > 0.0).then(|| t / v.sqrt())
}

/// Two-sided confidence interval for the additive effect from pair
/// differences `dr` (outcome) and `dd` (treatment uptake).
///
/// The deviate decreases in `β0` when the uptake differences are mostly
/// positive; the interval end points are the crossings of `±z_{1−α/2}`,
/// located by bracketing outward from the ratio estimate and bisecting.
pub fn huber_ci(dr: &[f64], dd: &[f64], c: f64, alpha: f64) -> Result<(f64, f64)> {
    if dr.len() != dd.len() || dr.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two pairs with matching lengths".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(c > 0.0) {
        return Err(Error::InvalidArgument(
            "need α in (0,1) and a positive tuning constant".into(),
        ));
    }
    let sum_d: f64 = dd.iter().sum();
    if sum_d == 0.0 {
        return Err(Error::InvalidArgument(
            "uptake differences sum to zero".into(),
        ));
    }
    // Orient so that the deviate decreases in β0.
    let sign = sum_d.signum();
    let z = normal_quantile(1.0 - alpha / 2.0);
    let f = |b: f64| huber_deviate(dr, dd, b, c).map(|v| sign * v);
    let centre = dr.iter().sum::<f64>() / sum_d;
    let scale = dr.iter().map(|v| v.abs()).sum::<f64>() / sum_d.abs() + centre.abs() + 1e-8;
    let lower = crossing(&f, centre, -scale, z)?;
    let upper = crossing(&f, centre, scale, -z)?;
    Ok((lower.min(upper), lower.max(upper)))
}

/// Finds `b` with `f(b) = level` starting at `start` and stepping by `step`
/// (doubling) until the level is passed, then bisecting.
fn crossing(f: &dyn Fn(f64) -> Option<f64>, start: f64, step: f64, level: f64) -> Result<f64> {
    let side = |b: f64| -> Result<bool> {
        let v = f(b).ok_or_else(|| Error::InvalidArgument("degenerate pair differences".into()))?;
        // True while the level has not been passed in the search direction.
        Ok(if step < 0.0 { v < level } else { v > level })
    };
    let mut inner = start;
    if !side(inner)? {
        // The start already lies beyond the level; walk back toward the other side.
        let mut outer = start;
        let mut h = -step;
        for _ in 0..200 {
            outer += h;
            if side(outer)? {
                return Ok(bisect(&side, outer, start));
            }
            h *= 2.0;
        }
        return Err(Error::InvalidArgument(
            "failed to bracket the confidence limit".into(),
        ));
    }
    let mut h = step;
    for _ in 0..200 {
        let outer = inner + h;
        if !side(outer)? {
            return Ok(bisect(&side, inner, outer));
        }
        inner = outer;
        h *= 2.0;
    }
    Err(Error::InvalidArgument(
        "failed to bracket the confidence limit".into(),
    ))
}

/// Bisects between `a` (inside) and `b` (outside) to relative precision 1e-10.
fn bisect(side: &dyn Fn(f64) -> Result<bool>, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= 1e-10 * (1.0 + m.abs()) {
            break;
        }
        if side(m).unwrap_or(false) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
