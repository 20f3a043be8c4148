//! Rectangular linear sum assignment (shortest augmenting path Hungarian).

use crate::error::{Error, Result};

/// Minimizes `Σ cost[i][col(i)]` over injective row-to-column maps of a
/// `rows x cols` row-major matrix with `rows <= cols`. Non-finite entries are
/// forbidden edges. Returns the column chosen by each row.
pub fn solve_min(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::shape("lsap", format!("{rows} rows exceed {cols} columns")));
    }
    if cost.len() != rows * cols {
        return Err(Error::shape("lsap", format!("{} entries for a {rows}x{cols} matrix", cost.len())));
    }
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; rows];
    let mut v = vec![0.0f64; cols];
    let mut col4row = vec![NONE; rows];
    let mut row4col = vec![NONE; cols];

    // Row reduction plus a greedy start: every row takes its cheapest
    // column when that column is still free. Duals stay feasible and the
    // greedy pairs are tight, so only the leftovers need augmenting.
    for i in 0..rows {
        let row = &cost[i * cols..(i + 1) * cols];
        let mut best = (f64::INFINITY, NONE);
        for (j, &c) in row.iter().enumerate() {
            if c < best.0 || (c == best.0 && best.1 != NONE && row4col[best.1] != NONE && row4col[j] == NONE) {
                best = (c, j);
            }
        }
        if best.1 == NONE {
            return Err(Error::Constraint(format!("row {i} has no feasible column")));
        }
        u[i] = best.0;
        if row4col[best.1] == NONE {
            row4col[best.1] = i;
            col4row[i] = best.1;
        }
    }

    // `dist` holds tentative path lengths of unscanned columns; once a
    // column is scanned its length moves to `settled` and `vb` is set to
    // -inf, which makes every later relaxation of it +inf.
    let mut dist = vec![f64::INFINITY; cols];
    let mut settled = vec![f64::INFINITY; cols];
    let mut vb = vec![0.0f64; cols];
    let mut path = vec![NONE; cols];
    let mut scanned_row = vec![false; rows];
    let mut scanned_cols: Vec<usize> = Vec::with_capacity(cols);
    for cur in 0..rows {
        if col4row[cur] != NONE {
            continue;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        vb.copy_from_slice(&v);
        scanned_row.iter_mut().for_each(|b| *b = false);
        scanned_cols.clear();
        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            scanned_row[i] = true;
            let row = &cost[i * cols..(i + 1) * cols];
            let base = min_val - u[i];
            let (mut lowest, mut index) = (f64::INFINITY, NONE);
            for j in 0..cols {
                let r = base + row[j] - vb[j];
                if r < dist[j] {
                    dist[j] = r;
                    path[j] = i;
                }
                if dist[j] < lowest {
                    lowest = dist[j];
                    index = j;
                }
            }
            if index == NONE || !lowest.is_finite() {
                return Err(Error::Constraint(format!("row {cur} has no feasible column")));
            }
            min_val = lowest;
            let j = index;
            settled[j] = dist[j];
            dist[j] = f64::INFINITY;
            vb[j] = f64::NEG_INFINITY;
            scanned_cols.push(j);
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };
        u[cur] += min_val;
        for r in 0..rows {
            if scanned_row[r] && r != cur {
                u[r] += min_val - settled[col4row[r]];
            }
        }
        for &j in &scanned_cols {
            v[j] -= min_val - settled[j];
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur {
                break;
            }
        }
    }
    Ok(col4row)
}

/// Maximum-weight bipartite matching where leaving a vertex unmatched is
/// worth zero. Non-finite weights are forbidden. Returns `(left, right)`
/// pairs sorted by left index; only strictly positive-gain pairs survive.
pub fn max_weight_matching(weights: &[f64], left: usize, right: usize) -> Result<Vec<(usize, usize)>> {
    if weights.len() != left * right {
        return Err(Error::shape("matching", format!("{} entries for a {left}x{right} matrix", weights.len())));
    }
    if left == 0 || right == 0 {
        return Ok(Vec::new());
    }
    // Put the smaller side on the rows. Every row can then be matched, so
    // leaving a vertex unmatched is modelled by clamping gains at zero:
    // an optimal full assignment of the clamped problem, minus its
    // non-positive pairs, is an optimal optional matching.
    let transpose = left > right;
    let (rows, cols) = if transpose { (right, left) } else { (left, right) };
    let gain = |r: usize, c: usize| if transpose { weights[c * right + r] } else { weights[r * right + c] };
    let mut cost = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let w = gain(r, c);
            if w > 0.0 {
                cost[r * cols + c] = -w;
            }
        }
    }
    let assignment = solve_min(&cost, rows, cols)?;
    let mut pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| gain(r, c) > 0.0)
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_min(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn go(cost: &[f64], rows: usize, cols: usize, r: usize, used: &mut Vec<bool>) -> f64 {
            if r == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cols {
                if !used[c] && cost[r * cols + c].is_finite() {
                    used[c] = true;
                    best = best.min(cost[r * cols + c] + go(cost, rows, cols, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(cost, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn square_known_instance() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve_min(&cost, 3, 3).unwrap();
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r * 3 + c]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rows = rng.random_range(1..=4);
            let cols = rng.random_range(rows..=6);
            let cost: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-10.0..10.0)).collect();
            let a = solve_min(&cost, rows, cols).unwrap();
            let mut seen = vec![false; cols];
            for &c in &a {
                assert!(!seen[c]);
                seen[c] = true;
            }
            let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r * cols + c]).sum();
            assert!((total - brute_min(&cost, rows, cols)).abs() < 1e-9);
        }
    }

    #[test]
    fn forbidden_edges_are_avoided() {
        let inf = f64::INFINITY;
        let cost = [inf, 1.0, 0.0, inf];
        assert_eq!(solve_min(&cost, 2, 2).unwrap(), vec![1, 0]);
        assert!(solve_min(&[inf, inf], 1, 2).is_err());
    }

    #[test]
    fn matching_drops_negative_edges() {
        assert!(max_weight_matching(&[-3.0], 1, 1).unwrap().is_empty());
        assert_eq!(max_weight_matching(&[5.0, 1.0, 2.0, 4.0], 2, 2).unwrap(), vec![(0, 0), (1, 1)]);
        // Tall matrix goes through the transposed path.
        let w = [1.0, 9.0, 3.0];
        assert_eq!(max_weight_matching(&w, 3, 1).unwrap(), vec![(1, 0)]);
    }
}
