use crate::assignment::action::AssignmentAction;
use crate::assignment::lsap::max_weight_matching;
use crate::assignment::matrix::{ProbabilityMatrix, QMatrix};
use crate::error::Result;
use crate::sim::types::{OrderId, WorkerId};

/// Smallest probability used inside a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Per-entry tie-breaking bias ceiling. Among equal-objective matchings it
/// favours pairing low-index workers with low-index orders.
const TIE_EPS: f64 = 1e-10;

pub fn floored_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

fn tie_bias(r: usize, c: usize, rows: usize, cols: usize) -> f64 {
    TIE_EPS * ((c + 1) * (rows - r)) as f64 / (rows * (cols + 1)) as f64
}

/// Stage-1 matching: maximize the summed Q-values of matched pairs, each
/// worker and order used at most once. Non-positive and masked entries are
/// never matched.
pub fn solve_stage1(q: &QMatrix) -> Result<AssignmentAction> {
    let (rows, cols) = (q.rows, q.cols);
    let gains: Vec<f64> = q
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| if v.is_finite() { v - tie_bias(k / cols.max(1), k % cols.max(1), rows, cols) } else { v })
        .collect();
    let matched = max_weight_matching(&gains, rows, cols)?;
    Ok(to_action(&matched, &q.available, &q.workers, &q.orders))
}

/// Stage-2 matching: every available worker takes exactly one column (an
/// order or reject), real orders at most once, maximizing the summed floored
/// log-probabilities.
///
/// Since each available worker picks exactly one column, the objective equals
/// `Σ_i ln P[i, reject]` plus the gain `ln P[i,j] - ln P[i, reject]` of every
/// matched pair, so the problem reduces to an optional-assignment matching on
/// those gains.
pub fn solve_stage2(p: &ProbabilityMatrix) -> Result<AssignmentAction> {
    let (rows, cols) = (p.rows, p.cols);
    let mut gains = vec![f64::NEG_INFINITY; rows * cols];
    for r in 0..rows {
        if !p.available[r] {
            continue;
        }
        let reject = floored_ln(p.reject(r));
        for c in 0..cols {
            gains[r * cols + c] = floored_ln(p.get(r, c)) - reject - tie_bias(r, c, rows, cols);
        }
    }
    let matched = max_weight_matching(&gains, rows, cols)?;
    Ok(to_action(&matched, &p.available, &p.workers, &p.orders))
}

fn to_action(
    matched: &[(usize, usize)],
    available: &[bool],
    workers: &[WorkerId],
    orders: &[OrderId],
) -> AssignmentAction {
    let mut is_matched = vec![false; workers.len()];
    matched.iter().for_each(|&(r, _)| is_matched[r] = true);
    let action = AssignmentAction::new(
        matched.iter().map(|&(r, c)| (workers[r], orders[c])).collect(),
        (0..workers.len()).filter(|&r| available[r] && !is_matched[r]).map(|r| workers[r]).collect(),
    );
    debug_assert!(action.check_structure().is_ok());
    action
}

/// Objective of `action` under stage-1 values (sum of matched entries).
pub fn stage1_objective(q: &QMatrix, action: &AssignmentAction) -> f64 {
    action
        .pairs
        .iter()
        .map(|(w, o)| {
            let r = q.workers.iter().position(|x| x == w).expect("worker label");
            let c = q.orders.iter().position(|x| x == o).expect("order label");
            q.get(r, c)
        })
        .sum()
}

/// Objective of `action` under stage-2 probabilities: the summed floored
/// log-probability of every available worker's chosen column.
pub fn stage2_objective(p: &ProbabilityMatrix, action: &AssignmentAction) -> f64 {
    (0..p.rows)
        .filter(|&r| p.available[r])
        .map(|r| match action.order_for(p.workers[r]) {
            Some(o) => {
                let c = p.orders.iter().position(|x| *x == o).expect("order label");
                floored_ln(p.get(r, c))
            }
            None => floored_ln(p.reject(r)),
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(i: u32) -> WorkerId {
        WorkerId(i)
    }
    fn o(i: u32) -> OrderId {
        OrderId(i)
    }

    #[test]
    fn stage1_small_cases() {
        let q = QMatrix::from_rows(&[vec![5.0, 1.0], vec![2.0, 4.0]]).unwrap();
        let a = solve_stage1(&q).unwrap();
        assert_eq!(a.pairs, vec![(w(0), o(0)), (w(1), o(1))]);
        assert_eq!(stage1_objective(&q, &a), 9.0);

        let masked = QMatrix::from_rows(&[vec![f64::NEG_INFINITY, f64::NEG_INFINITY]]).unwrap();
        let a = solve_stage1(&masked).unwrap();
        assert!(a.pairs.is_empty());
        assert!(a.rejecting.is_empty());

        let negative = QMatrix::from_rows(&[vec![-3.0]]).unwrap();
        let a = solve_stage1(&negative).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.rejecting, vec![w(0)]);

        let empty = QMatrix::new(2, 0, vec![], vec![true, true]).unwrap();
        assert!(solve_stage1(&empty).unwrap().pairs.is_empty());
    }

    #[test]
    fn stage1_ties_prefer_low_indices() {
        let q = QMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(solve_stage1(&q).unwrap().pairs, vec![(w(0), o(0)), (w(1), o(1))]);
    }

    #[test]
    fn stage2_small_cases() {
        let p = ProbabilityMatrix::from_probs(1, 1, vec![0.9, 0.1], vec![true]).unwrap();
        assert_eq!(solve_stage2(&p).unwrap().pairs, vec![(w(0), o(0))]);

        let p = ProbabilityMatrix::from_probs(2, 1, vec![0.8, 0.2, 0.6, 0.4], vec![true, true]).unwrap();
        let a = solve_stage2(&p).unwrap();
        assert_eq!(a.pairs, vec![(w(0), o(0))]);
        assert_eq!(a.rejecting, vec![w(1)]);
        let expected = 0.8f64.ln() + 0.4f64.ln();
        assert!((stage2_objective(&p, &a) - expected).abs() < 1e-12);
        assert!(expected > 0.2f64.ln() + 0.6f64.ln());

        let p = ProbabilityMatrix::from_probs(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![false, false]).unwrap();
        let a = solve_stage2(&p).unwrap();
        assert!(a.pairs.is_empty() && a.rejecting.is_empty());
    }

    #[test]
    fn stage2_handles_zero_probabilities() {
        let p = ProbabilityMatrix::from_probs(1, 2, vec![0.0, 1.0, 0.0], vec![true]).unwrap();
        let a = solve_stage2(&p).unwrap();
        assert_eq!(a.pairs, vec![(w(0), o(1))]);
        let p = ProbabilityMatrix::from_probs(1, 1, vec![0.0, 1.0], vec![true]).unwrap();
        assert_eq!(solve_stage2(&p).unwrap().rejecting, vec![w(0)]);
    }
}
