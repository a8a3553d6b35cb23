//! Independent oracles for the integration suite. Everything here is kept
//! deliberately naive: enumeration and direct summation only, no shared code
//! with the implementation paths under test.

/// Exact transportation LP optimum by enumerating every spanning tree of the
/// bipartite support graph (the vertices of the transportation polytope) and
/// keeping the cheapest feasible one. Exponential; intended for supports of
/// at most six atoms per side.
pub fn transport_lp_by_enumeration(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let p = supply.len();
    let q = demand.len();
    let n = p + q;
    let edges: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (0..q).map(move |j| (i, j)))
        .collect();
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(n - 1);
    let mut best = f64::INFINITY;

    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] == x {
            x
        } else {
            let root = find(parent, parent[x]);
            parent[x] = root;
            root
        }
    }

    fn recurse(
        edges: &[(usize, usize)],
        next: usize,
        chosen: &mut Vec<(usize, usize)>,
        parent: Vec<usize>,
        p: usize,
        q: usize,
        supply: &[f64],
        demand: &[f64],
        cost: &[f64],
        best: &mut f64,
    ) {
        let n = p + q;
        if chosen.len() == n - 1 {
            if let Some(value) = tree_cost(chosen, p, q, supply, demand, cost) {
                if value < *best {
                    *best = value;
                }
            }
            return;
        }
        if edges.len() - next < n - 1 - chosen.len() {
            return;
        }
        let (i, j) = edges[next];
        let mut with = parent.clone();
        let (ri, rj) = (find(&mut with, i), find(&mut with, p + j));
        if ri != rj {
            with[ri] = rj;
            chosen.push((i, j));
            recurse(edges, next + 1, chosen, with, p, q, supply, demand, cost, best);
            chosen.pop();
        }
        recurse(edges, next + 1, chosen, parent, p, q, supply, demand, cost, best);
    }

    recurse(
        &edges,
        0,
        &mut chosen,
        (0..n).collect(),
        p,
        q,
        supply,
        demand,
        cost,
        &mut best,
    );
    best
}

/// Flow cost of one spanning tree, solved by peeling leaves; `None` when the
/// tree is an infeasible basis (some flow negative).
fn tree_cost(
    tree: &[(usize, usize)],
    p: usize,
    q: usize,
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
) -> Option<f64> {
    let n = p + q;
    let mut balance = vec![0.0f64; n];
    balance[..p].copy_from_slice(supply);
    for (j, d) in demand.iter().enumerate() {
        balance[p + j] = -d;
    }
    let mut degree = vec![0usize; n];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, &(i, j)) in tree.iter().enumerate() {
        degree[i] += 1;
        degree[p + j] += 1;
        incident[i].push(idx);
        incident[p + j].push(idx);
    }
    let mut removed_edge = vec![false; tree.len()];
    let mut removed_node = vec![false; n];
    let mut total = 0.0;
    for _ in 0..tree.len() {
        let leaf = (0..n).find(|&u| !removed_node[u] && degree[u] == 1)?;
        let edge = *incident[leaf]
            .iter()
            .find(|&&e| !removed_edge[e])
            .expect("leaf has a live edge");
        let (i, j) = tree[edge];
        // Flow source -> sink equals the leaf's outstanding balance.
        let flow = if leaf < p { balance[leaf] } else { -balance[leaf] };
        if flow < -1e-12 {
            return None;
        }
        total += flow * cost[i * q + j];
        // Either way the neighbor absorbs the leaf's outstanding balance.
        let other = if leaf < p { p + j } else { i };
        balance[other] += balance[leaf];
        balance[leaf] = 0.0;
        removed_node[leaf] = true;
        removed_edge[edge] = true;
        degree[leaf] -= 1;
        degree[other] -= 1;
    }
    Some(total)
}

/// Exact optimum for equal-weight couplings of `n` atoms per side: by
/// Birkhoff-von Neumann the optimal coupling is a permutation; enumerate all
/// of them (n <= 8).
pub fn transport_by_permutations(n: usize, cost: &[f64]) -> f64 {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    heap_permutations(&mut indices, n, &mut |perm| {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if total < best {
            best = total;
        }
    });
    best / n as f64
}

fn heap_permutations(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == 1 {
        visit(items);
        return;
    }
    for i in 0..k {
        heap_permutations(items, k - 1, visit);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}
