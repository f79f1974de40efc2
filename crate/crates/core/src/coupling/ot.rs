//! Exact discrete optimal transport by the transportation simplex method.

use crate::error::{Error, Result};

/// Joint distribution with prescribed marginals, and its transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    /// `joint[i][j]`; rows sum to the first marginal, columns to the second.
    pub joint: Vec<Vec<f64>>,
    pub objective: f64,
}

impl CouplingMatrix {
    /// Draw a cell `(i, j)` from `u ~ U(0, 1)`.
    pub fn cell_from_uniform(&self, u: f64) -> (usize, usize) {
        let n = self.joint.first().map_or(0, Vec::len);
        let flat: Vec<f64> = self.joint.iter().flatten().copied().collect();
        let idx = crate::math::index_from_uniform(&flat, u);
        (idx / n, idx % n)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let n = self.joint.first().map_or(0, Vec::len);
        (0..n).map(|j| self.joint.iter().map(|r| r[j]).sum()).collect()
    }
}

fn check_marginal(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "{name} must be a nonempty nonnegative vector"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Optimal plan for marginals `p` (rows) and `q` (columns) under `cost`.
///
/// Northwest-corner start, MODI potentials, Bland's rule for both the entering and
/// the leaving cell, so degenerate pivots cannot cycle.
pub fn discrete_ot_coupling(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> Result<CouplingMatrix> {
    check_marginal(p, "first marginal")?;
    check_marginal(q, "second marginal")?;
    let (m, n) = (p.len(), q.len());
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!("cost must be {m} x {n}")));
    }
    if cost.iter().flatten().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidInput("costs must be finite and nonnegative".into()));
    }
    // Rebalance so both sides carry exactly the same total in floating point.
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let a: Vec<f64> = p.iter().map(|v| v / sp).collect();
    let b: Vec<f64> = q.iter().map(|v| v / sq).collect();

    let mut x = vec![vec![0.0; n]; m];
    let mut basic = vec![vec![false; n]; m];
    {
        let (mut ra, mut rb) = (a.clone(), b.clone());
        let (mut i, mut j) = (0, 0);
        loop {
            let v = ra[i].min(rb[j]).max(0.0);
            x[i][j] = v;
            basic[i][j] = true;
            ra[i] -= v;
            rb[j] -= v;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    let scale = cost.iter().flatten().fold(0.0f64, |s, c| s.max(*c)).max(1.0);
    let eps = 1e-12 * scale;
    let max_pivots = 50 * (m * n + 10);
    for _ in 0..max_pivots {
        let (u, v) = potentials(cost, &basic);
        let entering = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| !basic[i][j] && cost[i][j] - u[i] - v[j] < -eps);
        let Some((ei, ej)) = entering else {
            let objective = (0..m)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| x[i][j] * cost[i][j])
                .sum();
            return Ok(CouplingMatrix { joint: x, objective });
        };
        let path = tree_path(&basic, ei, ej);
        // path[0] is adjacent to the entering cell and loses mass; signs alternate.
        let theta = path
            .iter()
            .step_by(2)
            .map(|&(i, j)| x[i][j])
            .fold(f64::INFINITY, f64::min);
        let leaving = path
            .iter()
            .step_by(2)
            .filter(|&&(i, j)| x[i][j] == theta)
            .min()
            .copied()
            .expect("cycle has a decreasing cell");
        for (k, &(i, j)) in path.iter().enumerate() {
            if k % 2 == 0 {
                x[i][j] = (x[i][j] - theta).max(0.0);
            } else {
                x[i][j] += theta;
            }
        }
        x[ei][ej] = theta;
        basic[ei][ej] = true;
        basic[leaving.0][leaving.1] = false;
        x[leaving.0][leaving.1] = 0.0;
    }
    Err(Error::Numeric("transportation simplex did not terminate".into()))
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on the basis tree.
fn potentials(cost: &[Vec<f64>], basic: &[Vec<bool>]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (basic.len(), basic[0].len());
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    while let Some((is_row, k)) = stack.pop() {
        if is_row {
            for j in 0..n {
                if basic[k][j] && v[j].is_nan() {
                    v[j] = cost[k][j] - u[k];
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i][k] && u[i].is_nan() {
                    u[i] = cost[i][k] - v[k];
                    stack.push((true, i));
                }
            }
        }
    }
    (u, v)
}

/// Basic cells on the tree path from row `ei` to column `ej`, starting next to row `ei`.
fn tree_path(basic: &[Vec<bool>], ei: usize, ej: usize) -> Vec<(usize, usize)> {
    let (m, n) = (basic.len(), basic[0].len());
    // Nodes: rows 0..m, columns m..m+n. BFS from the column node back to the row node,
    // so following parents from row ei walks toward column ej.
    let mut parent = vec![usize::MAX; m + n];
    let start = m + ej;
    parent[start] = start;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == ei {
            break;
        }
        if node < m {
            for j in 0..n {
                if basic[node][j] && parent[m + j] == usize::MAX {
                    parent[m + j] = node;
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i][j] && parent[i] == usize::MAX {
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    let mut path = Vec::new();
    let mut node = ei;
    while node != start {
        let next = parent[node];
        let cell = if node < m { (node, next - m) } else { (next, node - m) };
        path.push(cell);
        node = next;
    }
    path
}
