//! Independent oracles for the integration suites: a dense direct solver
//! for network conductance and exhaustive combinatorics for crossing
//! counts. Nothing here shares code with the library's solvers.

// Each test binary pulls in a subset of these helpers.
#![allow(dead_code)]

use vrh::percolation::SiteField;
use vrh::resistor_network::ResistorGraph;

/// Two-terminal conductance by dense Gaussian elimination with partial
/// pivoting on the interior block of the graph Laplacian. Vertices in
/// components touching neither face are pinned to zero up front; they
/// carry no current either way.
pub fn dense_conductance(graph: &ResistorGraph) -> f64 {
    let n_int = graph.n_interior;
    let n_all = graph.n_vertices();
    let minus: std::collections::HashSet<u32> = graph.gamma_minus.iter().copied().collect();
    let plus: std::collections::HashSet<u32> = graph.gamma_plus.iter().copied().collect();

    // Components by BFS over the full vertex set.
    let mut adj = vec![Vec::new(); n_all];
    for e in &graph.edges {
        adj[e.a as usize].push(e.b as usize);
        adj[e.b as usize].push(e.a as usize);
    }
    let mut comp = vec![usize::MAX; n_all];
    let mut n_comp = 0;
    for start in 0..n_all {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut queue = vec![start];
        comp[start] = n_comp;
        while let Some(u) = queue.pop() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = n_comp;
                    queue.push(v);
                }
            }
        }
        n_comp += 1;
    }
    let mut comp_touches_face = vec![false; n_comp];
    for v in n_int..n_all {
        comp_touches_face[comp[v]] = true;
    }

    let mut a = vec![0.0f64; n_int * n_int];
    let mut b = vec![0.0f64; n_int];
    for e in &graph.edges {
        let (ia, ib) = (e.a as usize, e.b as usize);
        match (ia < n_int, ib < n_int) {
            (true, true) => {
                a[ia * n_int + ia] += e.c;
                a[ib * n_int + ib] += e.c;
                a[ia * n_int + ib] -= e.c;
                a[ib * n_int + ia] -= e.c;
            }
            (true, false) => {
                a[ia * n_int + ia] += e.c;
                if plus.contains(&e.b) {
                    b[ia] += e.c;
                }
            }
            (false, true) => {
                a[ib * n_int + ib] += e.c;
                if plus.contains(&e.a) {
                    b[ib] += e.c;
                }
            }
            (false, false) => {}
        }
    }
    // Pin floating vertices: identity row, zero rhs.
    for i in 0..n_int {
        if !comp_touches_face[comp[i]] {
            for j in 0..n_int {
                a[i * n_int + j] = 0.0;
                a[j * n_int + i] = 0.0;
            }
            a[i * n_int + i] = 1.0;
            b[i] = 0.0;
        }
    }

    // Gaussian elimination with partial pivoting.
    for k in 0..n_int {
        let mut piv = k;
        for r in k + 1..n_int {
            if a[r * n_int + k].abs() > a[piv * n_int + k].abs() {
                piv = r;
            }
        }
        if piv != k {
            for j in 0..n_int {
                a.swap(k * n_int + j, piv * n_int + j);
            }
            b.swap(k, piv);
        }
        let pivot = a[k * n_int + k];
        assert!(pivot.abs() > 1e-14, "unexpected singular pivot at row {k}");
        for r in k + 1..n_int {
            let f = a[r * n_int + k] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in k..n_int {
                a[r * n_int + j] -= f * a[k * n_int + j];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0f64; n_int];
    for k in (0..n_int).rev() {
        let mut s = b[k];
        for j in k + 1..n_int {
            s -= a[k * n_int + j] * x[j];
        }
        x[k] = s / a[k * n_int + k];
    }

    let mut g = 0.0;
    for e in &graph.edges {
        let other = if minus.contains(&e.a) {
            e.b
        } else if minus.contains(&e.b) {
            e.a
        } else {
            continue;
        };
        if (other as usize) < n_int {
            g += e.c * x[other as usize];
        }
    }
    g
}

fn blocks_all_paths(field: &SiteField, removed: &[usize]) -> bool {
    let side = field.side();
    let alive = |a: usize, b: usize| {
        let idx = a * side + b;
        field.occupied[idx] && !removed.contains(&idx)
    };
    let mut seen = vec![false; side * side];
    let mut queue = Vec::new();
    for b in 0..side {
        if alive(0, b) {
            seen[b] = true;
            queue.push((0usize, b));
        }
    }
    let mut head = 0;
    while head < queue.len() {
        let (a, b) = queue[head];
        head += 1;
        if a == side - 1 {
            return false;
        }
        let mut try_push = |na: usize, nb: usize, seen: &mut Vec<bool>| {
            if alive(na, nb) && !seen[na * side + nb] {
                seen[na * side + nb] = true;
                queue.push((na, nb));
            }
        };
        if a > 0 {
            try_push(a - 1, b, &mut seen);
        }
        if a + 1 < side {
            try_push(a + 1, b, &mut seen);
        }
        if b > 0 {
            try_push(a, b - 1, &mut seen);
        }
        if b + 1 < side {
            try_push(a, b + 1, &mut seen);
        }
    }
    true
}

fn any_cut_of_size(field: &SiteField, occupied: &[usize], k: usize, chosen: &mut Vec<usize>, start: usize) -> bool {
    if chosen.len() == k {
        return blocks_all_paths(field, chosen);
    }
    for i in start..occupied.len() {
        chosen.push(occupied[i]);
        if any_cut_of_size(field, occupied, k, chosen, i + 1) {
            chosen.pop();
            return true;
        }
        chosen.pop();
    }
    false
}

/// Smallest set of occupied sites whose removal disconnects the left and
/// right columns of a 2-d field, found by exhaustive subset search. Equal
/// to the maximum number of vertex-disjoint crossings.
pub fn min_vertex_cut_brute(field: &SiteField) -> usize {
    assert_eq!(field.d, 2, "oracle handles planar fields only");
    if blocks_all_paths(field, &[]) {
        return 0;
    }
    let side = field.side();
    let occupied: Vec<usize> = (0..side * side).filter(|&i| field.occupied[i]).collect();
    for k in 1..=side {
        let mut chosen = Vec::with_capacity(k);
        if any_cut_of_size(field, &occupied, k, &mut chosen, 0) {
            return k;
        }
    }
    // Every column is itself a cut, so size `side` always succeeds.
    unreachable!("no cut found up to the grid side");
}
