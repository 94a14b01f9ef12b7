//! Rectangular min-cost assignment (`rows <= cols`) by the Hungarian method
//! with potentials, O(rows² · cols).

/// Row-major cost matrix view.
#[derive(Clone, Copy, Debug)]
pub struct CostMatrix<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> CostMatrix<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix shape");
        assert!(rows <= cols, "assignment needs rows <= cols");
        CostMatrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row; entries are distinct.
    pub cols: Vec<usize>,
    pub cost: f64,
}

/// Hungarian method over the rows in `rows[..]` and the columns not
/// excluded by `col_blocked`. Returns the optimal column per listed row.
fn hungarian(cost: &CostMatrix, rows: &[usize], col_blocked: &[bool]) -> Vec<usize> {
    let cols: Vec<usize> = (0..cost.cols).filter(|&c| !col_blocked[c]).collect();
    let n = rows.len();
    let m = cols.len();
    debug_assert!(n <= m);
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            result[owner[j] - 1] = cols[j - 1];
        }
    }
    result
}

fn total(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    rows.iter().zip(cols).map(|(&r, &c)| cost.get(r, c)).sum()
}

/// Minimum total cost over injective row→column assignments.
pub fn min_assignment_cost(cost: &CostMatrix) -> f64 {
    if cost.rows == 1 {
        return cost.data.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    let rows: Vec<usize> = (0..cost.rows).collect();
    let cols = hungarian(cost, &rows, &vec![false; cost.cols]);
    total(cost, &rows, &cols)
}

/// Optimal assignment, choosing the lexicographically smallest column vector
/// among all assignments whose cost is within `1e-12 · (1 + |opt|)` of the
/// optimum.
pub fn min_cost_assignment(cost: &CostMatrix) -> Assignment {
    let n = cost.rows;
    if n == 0 {
        return Assignment {
            cols: Vec::new(),
            cost: 0.0,
        };
    }
    if n == 1 {
        let (best, value) = cost
            .data
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (c, &x)| if x < acc.1 { (c, x) } else { acc });
        return Assignment {
            cols: vec![best],
            cost: value,
        };
    }
    let opt = min_assignment_cost(cost);
    let tol = 1e-12 * (1.0 + opt.abs());
    let mut blocked = vec![false; cost.cols];
    let mut chosen = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    for r in 0..n {
        let rest: Vec<usize> = ((r + 1)..n).collect();
        let mut picked = None;
        for c in 0..cost.cols {
            if blocked[c] {
                continue;
            }
            blocked[c] = true;
            let tail = hungarian(cost, &rest, &blocked);
            let value = fixed_cost + cost.get(r, c) + total(cost, &rest, &tail);
            blocked[c] = false;
            if value <= opt + tol {
                picked = Some(c);
                break;
            }
        }
        // The optimum is always reachable from an optimal prefix.
        let c = picked.expect("an optimal completion exists");
        blocked[c] = true;
        fixed_cost += cost.get(r, c);
        chosen.push(c);
    }
    let rows: Vec<usize> = (0..n).collect();
    Assignment {
        cost: total(cost, &rows, &chosen),
        cols: chosen,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_assignment() {
        let data = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = min_cost_assignment(&CostMatrix::new(3, 3, &data));
        assert_eq!(a.cost, 5.0);
        assert_eq!(a.cols, vec![1, 0, 2]);
    }

    #[test]
    fn rectangular_assignment() {
        // Two requests, four servers.
        let data = [5.0, 1.0, 9.0, 1.0, 2.0, 8.0, 0.5, 7.0];
        let a = min_cost_assignment(&CostMatrix::new(2, 4, &data));
        assert_eq!(a.cost, 1.5);
        assert_eq!(a.cols, vec![1, 2]);
    }

    #[test]
    fn ties_resolve_to_smallest_vector() {
        // Both requests at distance 1 from both medians.
        let data = [1.0, 1.0, 1.0, 1.0];
        let a = min_cost_assignment(&CostMatrix::new(2, 2, &data));
        assert_eq!(a.cols, vec![0, 1]);
        assert_eq!(a.cost, 2.0);
    }

    #[test]
    fn single_row_takes_first_minimum() {
        let data = [3.0, 1.0, 1.0];
        let a = min_cost_assignment(&CostMatrix::new(1, 3, &data));
        assert_eq!(a.cols, vec![1]);
    }
}
