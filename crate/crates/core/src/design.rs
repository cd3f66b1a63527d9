//! Design matrices, hat matrices and the regression-assisted quadratic form
//! `v_Qᵀ(I − H_Q)v_Q` with `v_Q[k] = v[k]/√(1 − h_k)`.

use nalgebra::{DMatrix, DVector};

use crate::data::{Diagnostic, Study};
use crate::error::{Error, Result};

/// Which covariates enter the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    /// The all-ones column only.
    E,
    /// Ones plus centered cluster-level covariates of both clusters.
    Q1,
    /// `Q1` plus individual-covariate means residualized on `Q1`.
    Q2,
}

impl DesignKind {
    /// Parses `e`, `q1` or `q2`.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "e" => Ok(Self::E),
            "q1" => Ok(Self::Q1),
            "q2" => Ok(Self::Q2),
            other => Err(Error::InvalidArgument(format!(
                "unknown design `{other}` (expected e, q1 or q2)"
            ))),
        }
    }

    /// Lower-case name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::E => "e",
            Self::Q1 => "q1",
            Self::Q2 => "q2",
        }
    }
}

/// Leverages at or above `1 − LEVERAGE_LIMIT` are rejected.
pub const LEVERAGE_LIMIT: f64 = 1e-12;

/// A `K × p` design matrix with its orthonormal basis, hat matrix and leverages.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// Design kind requested.
    pub kind: DesignKind,
    /// Kept columns of `Q`.
    pub q: DMatrix<f64>,
    /// Names of the kept columns.
    pub column_names: Vec<String>,
    /// Orthonormal basis `U` of the column space (`K × p`).
    pub basis: DMatrix<f64>,
    /// Hat matrix `H = U Uᵀ`.
    pub hat: DMatrix<f64>,
    /// Leverages `h_k = H[k, k]`.
    pub leverage: DVector<f64>,
    /// Names of dropped (collinear) columns.
    pub dropped: Vec<String>,
    /// Findings such as dropped columns.
    pub diagnostics: Vec<Diagnostic>,
}

impl DesignMatrix {
    /// Builds a design from explicit columns, dropping columns that are
    /// numerically dependent on earlier ones (left to right).
    pub fn from_columns(kind: DesignKind, columns: Vec<(String, DVector<f64>)>) -> Result<Self> {
        let k = columns.first().map_or(0, |c| c.1.len());
        let mut kept_cols = Vec::new();
        let mut names = Vec::new();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut dropped = Vec::new();
        let mut diagnostics = Vec::new();
        for (name, col) in columns {
            if col.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "column {name} has length {} instead of {k}",
                    col.len()
                )));
            }
            let norm0 = col.norm();
            let mut r = col.clone();
            // Two passes of modified Gram-Schmidt for stability.
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&r);
                    r.axpy(-c, b, 1.0);
                }
            }
            let nr = r.norm();
            if norm0 == 0.0 || nr <= 1e-9 * norm0 {
                diagnostics.push(Diagnostic::warning(
                    "collinear_column",
                    None,
                    format!(
                        "design column `{name}` is collinear with earlier columns and was dropped"
                    ),
                ));
                dropped.push(name);
                continue;
            }
            basis.push(r / nr);
            kept_cols.push(col);
            names.push(name);
        }
        let p = basis.len();
        if p >= k {
            return Err(Error::InvalidArgument(format!(
                "design has {p} independent columns but only {k} pairs"
            )));
        }
        let u = DMatrix::from_columns(&basis);
        let hat = &u * u.transpose();
        let leverage = DVector::from_fn(k, |i, _| u.row(i).norm_squared());
        Ok(Self {
            kind,
            q: DMatrix::from_columns(&kept_cols),
            column_names: names,
            basis: u,
            hat,
            leverage,
            dropped,
            diagnostics,
        })
    }

    /// Number of rows `K`.
    pub fn k(&self) -> usize {
        self.leverage.len()
    }

    /// Rank `p` of the design.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Fails when a leverage is numerically 1.
    pub fn check_leverage(&self) -> Result<()> {
        match self
            .leverage
            .iter()
            .position(|&h| h >= 1.0 - LEVERAGE_LIMIT)
        {
            Some(row) => Err(Error::Leverage {
                row,
                value: self.leverage[row],
            }),
            None => Ok(()),
        }
    }

    /// Scale factors `1/√(1 − h_k)`.
    pub fn inflation(&self) -> Result<DVector<f64>> {
        self.check_leverage()?;
        Ok(self.leverage.map(|h| 1.0 / (1.0 - h).sqrt()))
    }

    /// `v_Qᵀ(I − H)v_Q` with `v_Q[k] = v[k]/√(1 − h_k)`; clamped at 0.
    pub fn residual_form(&self, v: &[f64]) -> Result<f64> {
        let lam = self.inflation()?;
        let vq = DVector::from_fn(v.len(), |i, _| v[i] * lam[i]);
        let proj = self.basis.transpose() * &vq;
        Ok((vq.norm_squared() - proj.norm_squared()).max(0.0))
    }
}

fn column_of(study: &Study, f: impl Fn(&crate::data::Pair) -> f64) -> DVector<f64> {
    DVector::from_iterator(study.k(), study.pairs().iter().map(f))
}

fn centered(mut v: DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.add_scalar_mut(-m);
    v
}

/// Builds the design matrix of the requested kind for `study`.
///
/// Cluster covariates enter in slot order (`x̃_k1` columns, then `x̃_k2`), so
/// the design does not depend on which cluster was encouraged.
pub fn build_design(study: &Study, kind: DesignKind) -> Result<DesignMatrix> {
    let k = study.k();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "a design needs at least two pairs".into(),
        ));
    }
    let mut cols = vec![("e".to_string(), DVector::from_element(k, 1.0))];
    if kind == DesignKind::E {
        return DesignMatrix::from_columns(kind, cols);
    }
    let q = study.n_cluster_covariates();
    for j in 0..2 {
        for c in 0..q {
            cols.push((
                format!("xt{}_slot{}", c + 1, j + 1),
                centered(column_of(study, |p| p.clusters[j].xt[c])),
            ));
        }
    }
    let q1 = DesignMatrix::from_columns(DesignKind::Q1, cols.clone())?;
    if kind == DesignKind::Q1 {
        return Ok(q1);
    }
    let p = study.n_individual_covariates();
    for j in 0..2 {
        for c in 0..p {
            let x = column_of(study, |pr| pr.clusters[j].xbar[c]);
            let w = &x - &q1.hat * &x;
            cols.push((format!("w{}_slot{}", c + 1, j + 1), w));
        }
    }
    let mut design = DesignMatrix::from_columns(DesignKind::Q2, cols)?;
    design.kind = DesignKind::Q2;
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn e_design(k: usize) -> DesignMatrix {
        DesignMatrix::from_columns(
            DesignKind::E,
            vec![("e".into(), DVector::from_element(k, 1.0))],
        )
        .unwrap()
    }

    #[test]
    fn constant_column_leverage() {
        let d = e_design(3);
        for h in d.leverage.iter() {
            assert_relative_eq!(*h, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn residual_form_is_scaled_sample_variance() {
        let d = e_design(3);
        let s2 = d.residual_form(&[1.0, 2.0, 3.0]).unwrap() / 3.0;
        assert_relative_eq!(s2, 1.0, epsilon = 1e-12);
        assert_eq!(d.residual_form(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn collinear_columns_are_dropped() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let d = DesignMatrix::from_columns(
            DesignKind::Q1,
            vec![
                ("e".into(), DVector::from_element(4, 1.0)),
                ("x".into(), x.clone()),
                ("2x".into(), x * 2.0),
            ],
        )
        .unwrap();
        assert_eq!(d.rank(), 2);
        assert_eq!(d.dropped, vec!["2x".to_string()]);
        assert_eq!(d.diagnostics.len(), 1);
    }

    #[test]
    fn full_rank_design_is_rejected() {
        let r = DesignMatrix::from_columns(
            DesignKind::Q1,
            vec![
                ("e".into(), DVector::from_element(2, 1.0)),
                ("x".into(), DVector::from_vec(vec![0.0, 1.0])),
            ],
        );
        assert!(r.is_err());
    }
}
