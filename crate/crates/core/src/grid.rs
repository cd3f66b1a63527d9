//! Uniform search grids and confidence sets obtained by test inversion.

use crate::data::Diagnostic;
use crate::error::{Error, Result};

/// Uniform grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// First grid point.
    pub lo: f64,
    /// Last grid point (rounded to a whole number of steps).
    pub hi: f64,
    /// Spacing between points.
    pub step: f64,
}

impl Grid {
    /// Validated constructor.
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
            return Err(Error::InvalidArgument(format!(
                "invalid grid {lo}:{hi}:{step}"
            )));
        }
        if (hi - lo) / step > 1e7 {
            return Err(Error::InvalidArgument(format!(
                "grid {lo}:{hi}:{step} has too many points"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    /// Grid with `points` evenly spaced values from `lo` to `hi`.
    pub fn with_points(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidArgument(
                "a grid needs at least two points".into(),
            ));
        }
        Self::new(lo, hi, (hi - lo) / (points - 1) as f64)
    }

    /// Parses `lo:hi:step`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || Error::InvalidArgument(format!("grid must be lo:hi:step, got `{text}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Self::new(v[0], v[1], v[2])
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    /// Always false; a grid has at least one point.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// The `i`-th grid point, computed as `lo + i·step` to avoid drift.
    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    /// All grid points.
    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Confidence set on a grid: the retained points and their hull.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInterval {
    /// Smallest retained grid point.
    pub lower: Option<f64>,
    /// Largest retained grid point.
    pub upper: Option<f64>,
    /// Number of retained grid points.
    pub retained: usize,
    /// Whether the retained points form one contiguous run on the grid.
    pub connected: bool,
    /// Whether the lowest or highest grid point was retained, meaning the
    /// grid may not bracket the confidence set.
    pub touches_edge: bool,
    /// Findings such as an empty set or a non-contiguous retained set.
    pub diagnostics: Vec<Diagnostic>,
}

impl GridInterval {
    /// Summarises the points of `grid` for which `keep` is true.
    pub fn from_mask(grid: &Grid, keep: &[bool]) -> Self {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i)
            .collect();
        let mut diagnostics = Vec::new();
        if idx.is_empty() {
            diagnostics.push(Diagnostic::warning(
                "empty_confidence_set",
                None,
                "no grid point was retained",
            ));
            return Self {
                lower: None,
                upper: None,
                retained: 0,
                connected: true,
                touches_edge: false,
                diagnostics,
            };
        }
        let (first, last) = (idx[0], idx[idx.len() - 1]);
        let connected = last - first + 1 == idx.len();
        if !connected {
            diagnostics.push(Diagnostic::warning(
                "non_connected_confidence_set",
                None,
                format!(
                    "retained grid points form {} separate runs",
                    count_runs(&idx)
                ),
            ));
        }
        let touches_edge = first == 0 || last + 1 == keep.len();
        if touches_edge {
            diagnostics.push(Diagnostic::warning(
                "grid_edge_retained",
                None,
                "an end point of the grid was retained; widen the grid to bracket the set",
            ));
        }
        Self {
            lower: Some(grid.point(first)),
            upper: Some(grid.point(last)),
            retained: idx.len(),
            connected,
            touches_edge,
            diagnostics,
        }
    }

    /// True when no grid point was retained.
    pub fn is_empty(&self) -> bool {
        self.retained == 0
    }
}

fn count_runs(idx: &[usize]) -> usize {
    1 + idx.windows(2).filter(|w| w[1] != w[0] + 1).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_points() {
        let g = Grid::parse("-1:1:0.5").unwrap();
        assert_eq!(g.points(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(Grid::parse("1:0:0.1").is_err());
        assert!(Grid::parse("0:1").is_err());
        assert_eq!(Grid::new(0.0, 1.0, 1e-3).unwrap().len(), 1001);
    }

    #[test]
    fn mask_summary() {
        let g = Grid::new(0.0, 4.0, 1.0).unwrap();
        let iv = GridInterval::from_mask(&g, &[false, true, true, false, false]);
        assert_eq!(
            (iv.lower, iv.upper, iv.connected, iv.touches_edge),
            (Some(1.0), Some(2.0), true, false)
        );
        let iv = GridInterval::from_mask(&g, &[false, true, false, true, false]);
        assert!(!iv.connected);
        assert!(GridInterval::from_mask(&g, &[false; 5]).is_empty());
    }
}
