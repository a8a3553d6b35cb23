//! Exact transportation LP via the network simplex on the bipartite graph.
//!
//! Desk-scale implementation: the basis tree and node potentials are rebuilt
//! from the basic-cell list after every pivot, which keeps the code short and
//! auditable at the support sizes the crate caps itself to. Entering arcs are
//! chosen by the most negative reduced cost, falling back to Bland's rule
//! after a run of degenerate pivots so the method cannot cycle.

use crate::error::{Error, Result};

/// Minimal transport cost between `supply` and `demand` (both positive,
/// equal totals up to roundoff) under the dense cost matrix
/// `cost[i * demand.len() + j]`.
pub(crate) fn transport_min_cost(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<f64> {
    let p = supply.len();
    let q = demand.len();
    assert_eq!(cost.len(), p * q);
    assert!(p > 0 && q > 0);

    // Balance the totals exactly by adjusting the last demand; the
    // discrepancy is pure floating-point noise from the caller.
    let mut demand = demand.to_vec();
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    let last = demand.len() - 1;
    demand[last] += total_supply - total_demand;
    if demand[last] < 0.0 {
        demand[last] = 0.0;
    }

    let mut basis = northwest_corner(supply, &demand);
    let n = p + q;
    let max_cost = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-11 * (1.0 + max_cost);

    let mut bland = false;
    let mut degenerate_run = 0usize;
    let pivot_cap = 100_000 + 200 * n;

    for _ in 0..pivot_cap {
        let (u, v) = potentials(&basis, p, q, cost)?;

        // Entering arc.
        let mut entering: Option<(usize, usize, f64)> = None;
        'scan: for i in 0..p {
            for j in 0..q {
                let rc = cost[i * q + j] - u[i] - v[j];
                if rc < -tol {
                    match entering {
                        Some((_, _, best)) if !bland && rc >= best => {}
                        Some(_) if bland => {}
                        _ => entering = Some((i, j, rc)),
                    }
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej, _)) = entering else {
            // Optimal.
            return Ok(basis
                .cells
                .iter()
                .zip(&basis.flows)
                .map(|(&(i, j), f)| f * cost[i * q + j])
                .sum());
        };

        // Cycle created by the entering arc: tree path from sink ej back to
        // source ei. Flow +delta on the entering cell, alternating -,+ along
        // the path.
        let path = tree_path(&basis, p, q, ei, p + ej)?;
        // path: node sequence from source ei to sink p+ej through the tree.
        // Traversed in reverse (sink to source) the first arc is leaving the
        // sink, i.e. traversed against its flow direction: decreasing.
        let mut delta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (step, &arc_idx) in path.arcs.iter().rev().enumerate() {
            let decreasing = step % 2 == 0;
            if decreasing {
                let f = basis.flows[arc_idx];
                let replace = match leaving {
                    None => true,
                    Some(prev) => {
                        f < delta || (f == delta && basis.cell_key(arc_idx) < basis.cell_key(prev))
                    }
                };
                if replace {
                    delta = f;
                    leaving = Some(arc_idx);
                }
            }
        }
        let leaving = leaving.ok_or_else(|| {
            Error::Invalid("network simplex: cycle without a decreasing arc".into())
        })?;

        if delta <= 0.0 {
            degenerate_run += 1;
            if degenerate_run > 2 * n + 50 {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }

        for (step, &arc_idx) in path.arcs.iter().rev().enumerate() {
            if step % 2 == 0 {
                basis.flows[arc_idx] -= delta;
            } else {
                basis.flows[arc_idx] += delta;
            }
        }
        basis.cells[leaving] = (ei, ej);
        basis.flows[leaving] = delta;
    }

    Err(Error::Invalid(
        "network simplex exceeded its pivot cap".into(),
    ))
}

struct Basis {
    cells: Vec<(usize, usize)>,
    flows: Vec<f64>,
}

impl Basis {
    fn cell_key(&self, idx: usize) -> (usize, usize) {
        self.cells[idx]
    }
}

/// North-west corner starting basis: exactly `p + q - 1` cells forming a
/// staircase (a spanning path of the bipartite node set).
fn northwest_corner(supply: &[f64], demand: &[f64]) -> Basis {
    let p = supply.len();
    let q = demand.len();
    let mut s_rem = supply.to_vec();
    let mut d_rem = demand.to_vec();
    let mut cells = Vec::with_capacity(p + q - 1);
    let mut flows = Vec::with_capacity(p + q - 1);
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let f = s_rem[i].min(d_rem[j]).max(0.0);
        cells.push((i, j));
        flows.push(f);
        s_rem[i] -= f;
        d_rem[j] -= f;
        if i == p - 1 && j == q - 1 {
            break;
        }
        if j == q - 1 || (s_rem[i] <= d_rem[j] && i < p - 1) {
            i += 1;
        } else {
            j += 1;
        }
    }
    Basis { cells, flows }
}

/// Node potentials making every basic cell's reduced cost zero.
fn potentials(basis: &Basis, p: usize, q: usize, cost: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p + q;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (idx, &(i, j)) in basis.cells.iter().enumerate() {
        adj[i].push((p + j, idx));
        adj[p + j].push((i, idx));
    }
    let mut u = vec![f64::NAN; p];
    let mut v = vec![f64::NAN; q];
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    u[0] = 0.0;
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &(next, arc) in &adj[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            let (i, j) = basis.cells[arc];
            if next >= p {
                v[next - p] = cost[i * q + j] - u[i];
            } else {
                u[next] = cost[i * q + j] - v[j];
            }
            stack.push(next);
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Invalid(
            "network simplex: basis does not span the node set".into(),
        ));
    }
    Ok((u, v))
}

struct TreePath {
    /// Basic-arc indices along the tree path from `from` to `to`.
    arcs: Vec<usize>,
}

/// Unique tree path between two nodes of the basis tree (BFS trace).
fn tree_path(basis: &Basis, p: usize, q: usize, from: usize, to: usize) -> Result<TreePath> {
    let n = p + q;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (idx, &(i, j)) in basis.cells.iter().enumerate() {
        adj[i].push((p + j, idx));
        adj[p + j].push((i, idx));
    }
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(from);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(next, arc) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                prev[next] = Some((node, arc));
                queue.push_back(next);
            }
        }
    }
    if !seen[to] {
        return Err(Error::Invalid(
            "network simplex: endpoints not connected in basis".into(),
        ));
    }
    let mut arcs = Vec::new();
    let mut node = to;
    while let Some((parent, arc)) = prev[node] {
        arcs.push(arc);
        node = parent;
    }
    arcs.reverse();
    Ok(TreePath { arcs })
}
