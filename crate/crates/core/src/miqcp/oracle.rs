//! Exhaustive enumeration over every integer point of the boxes.

use super::MiqcpProblem;
use crate::error::{Error, Result};

/// Default cap on the number of enumerated points.
pub const DEFAULT_ORACLE_CAP: u128 = 1_000_000;

/// Result of exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    /// No integer point satisfies the norm rows.
    Infeasible,
    /// Exact minimum and its lexicographically smallest minimizer.
    Optimum {
        /// Minimum of `ρ` over the feasible points.
        value: f64,
        /// Minimizing compliance vector.
        co: Vec<i64>,
    },
}

/// Minimizes `ρ` by visiting every point of the boxes in lexicographic order.
///
/// Values are computed through `(Q_final, q_final, constant)`. Only strictly
/// smaller values replace the incumbent, so exact ties keep the
/// lexicographically smallest point.
pub fn enumerate_oracle(problem: &MiqcpProblem, cap: u128) -> Result<OracleOutcome> {
    let size = problem.box_count();
    if size > cap {
        return Err(Error::CapExceeded { size, cap });
    }
    let dim = problem.dim();
    let mut co = problem.lo.clone();
    let mut best: Option<(f64, Vec<i64>)> = None;
    loop {
        if problem.is_feasible(&co) {
            let v = problem.evaluate(&co);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, co.clone()));
            }
        }
        // Odometer with the last coordinate fastest.
        let mut i = dim;
        loop {
            if i == 0 {
                return Ok(match best {
                    None => OracleOutcome::Infeasible,
                    Some((value, co)) => OracleOutcome::Optimum { value, co },
                });
            }
            i -= 1;
            if co[i] < problem.hi[i] {
                co[i] += 1;
                break;
            }
            co[i] = problem.lo[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miqcp::tests::small_instance;

    #[test]
    fn singleton_boxes_give_the_point() {
        let mut inst = small_instance(0.2, 5.0);
        inst.lo = inst.hi.clone();
        let p = MiqcpProblem::from_acer(&inst).unwrap();
        let co = p.hi.clone();
        match enumerate_oracle(&p, 10).unwrap() {
            OracleOutcome::Optimum { value, co: c } => {
                assert_eq!(c, co);
                assert_eq!(value, p.evaluate(&co));
            }
            OracleOutcome::Infeasible => panic!("singleton instance is feasible"),
        }
    }

    #[test]
    fn empty_norm_interval_is_infeasible() {
        let mut inst = small_instance(0.2, 5.0);
        inst.sco = (5.0, 6.0);
        let p = MiqcpProblem::from_acer(&inst).unwrap();
        assert_eq!(
            enumerate_oracle(&p, DEFAULT_ORACLE_CAP).unwrap(),
            OracleOutcome::Infeasible
        );
    }

    #[test]
    fn cap_is_enforced() {
        let p = MiqcpProblem::from_acer(&small_instance(0.2, 5.0)).unwrap();
        assert!(matches!(
            enumerate_oracle(&p, 5),
            Err(Error::CapExceeded { size: 144, cap: 5 })
        ));
    }
}
