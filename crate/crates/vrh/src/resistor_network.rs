//! The periodized two-terminal resistor network.
//!
//! Points of a (thinned) configuration inside the open box (-N, N)^d are
//! wired with unit conductances at distance <= r_c. Two lattice faces at
//! x1 = -N and x1 = +N act as contacts: every point of the left contact
//! slab (x1 within r_c of the left face) is wired to every left face
//! vertex with conductance 1/|face|, and likewise on the right. The
//! two-terminal conductance G with the left face grounded and the right
//! face at unit potential converts to a diffusivity lower-bound estimate
//! D_N = 8 N^2 G / |V|, where |V| counts interior plus both face vertex
//! sets.

use crate::point_process::MarkedPointSet;
use crate::stats::mean_se;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One conductor between two vertex ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub c: f64,
}

/// How the contact faces are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStyle {
    /// One vertex per lattice face point, (2N-1)^{d-1} per side, each
    /// coupled to every contact-slab point with conductance 1/|face|.
    Faces,
    /// Each face collapsed to a single superconducting vertex; couplings
    /// merge into one unit conductance per contact-slab point.
    Shorted,
}

/// The assembled network. Vertices 0..n_interior are configuration points;
/// face vertices follow.
#[derive(Debug, Clone)]
pub struct ResistorGraph {
    pub d: usize,
    /// Half box side N.
    pub n: usize,
    pub r_c: f64,
    pub style: BoundaryStyle,
    pub n_interior: usize,
    /// Interior coordinates, stride d.
    pub positions: Vec<f64>,
    /// Vertex ids of the grounded (left) face.
    pub gamma_minus: Vec<u32>,
    /// Vertex ids of the unit-potential (right) face.
    pub gamma_plus: Vec<u32>,
    /// (2N-1)^{d-1}: physical face cardinality, independent of `style`.
    pub gamma_face_count: usize,
    /// Interior ids in the left contact slab x1 in (-N, -N + r_c].
    pub b_minus: Vec<u32>,
    /// Interior ids in the right contact slab x1 in [N - r_c, N).
    pub b_plus: Vec<u32>,
    pub edges: Vec<Edge>,
}

impl ResistorGraph {
    pub fn n_vertices(&self) -> usize {
        self.n_interior + self.gamma_minus.len() + self.gamma_plus.len()
    }

    /// Vertex count entering the diffusivity normalization: interior plus
    /// both physical faces.
    pub fn v_bar(&self) -> usize {
        self.n_interior + 2 * self.gamma_face_count
    }

    /// Copy of the graph with interior-interior edge `k` removed (face
    /// couplings are not eligible). Used for monotonicity experiments.
    pub fn without_interior_edge(&self, k: usize) -> Result<ResistorGraph> {
        let interior: Vec<usize> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                (e.a as usize) < self.n_interior && (e.b as usize) < self.n_interior
            })
            .map(|(i, _)| i)
            .collect();
        let &idx = interior
            .get(k)
            .ok_or_else(|| Error::invalid(format!("interior edge index {k} out of range")))?;
        let mut g = self.clone();
        g.edges.remove(idx);
        Ok(g)
    }

    pub fn n_interior_edges(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| (e.a as usize) < self.n_interior && (e.b as usize) < self.n_interior)
            .count()
    }
}

/// Builds the periodized network from the points of `pts` lying strictly
/// inside (-N, N)^d. Distances are plain Euclidean: the network lives on a
/// hard box regardless of how the sample was generated.
pub fn build_periodized_graph(
    pts: &MarkedPointSet,
    n: usize,
    r_c: f64,
    style: BoundaryStyle,
) -> Result<ResistorGraph> {
    let d = pts.geom.d;
    if n == 0 {
        return Err(Error::invalid("half side N must be >= 1"));
    }
    if !(r_c > 0.0) || !r_c.is_finite() {
        return Err(Error::invalid(format!("connection radius must be positive, got {r_c}")));
    }
    let half = n as f64;
    let mut positions = Vec::new();
    for i in 0..pts.len() {
        let x = pts.position(i);
        if x.iter().all(|&v| v.abs() < half) {
            positions.extend_from_slice(x);
        }
    }
    let n_interior = positions.len() / d;
    let gamma_face_count = (2 * n - 1).pow(d as u32 - 1);
    let face_size = match style {
        BoundaryStyle::Faces => gamma_face_count,
        BoundaryStyle::Shorted => 1,
    };
    let gamma_minus: Vec<u32> =
        (0..face_size).map(|i| (n_interior + i) as u32).collect();
    let gamma_plus: Vec<u32> =
        (0..face_size).map(|i| (n_interior + face_size + i) as u32).collect();

    let mut b_minus = Vec::new();
    let mut b_plus = Vec::new();
    for i in 0..n_interior {
        let x1 = positions[i * d];
        if x1 <= -half + r_c {
            b_minus.push(i as u32);
        }
        if x1 >= half - r_c {
            b_plus.push(i as u32);
        }
    }

    let mut edges = Vec::new();
    if n_interior > 0 {
        // Non-periodic cell list over the interior points.
        let cell = r_c.max(1e-9);
        let m = ((2.0 * half / cell).ceil() as usize).max(1);
        let cell = 2.0 * half / m as f64;
        let cell_of = |x: &[f64]| -> usize {
            let mut id = 0;
            for k in 0..d {
                let c = (((x[k] + half) / cell).floor() as isize).clamp(0, m as isize - 1);
                id = id * m + c as usize;
            }
            id
        };
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); m.pow(d as u32)];
        for i in 0..n_interior {
            buckets[cell_of(&positions[i * d..(i + 1) * d])].push(i as u32);
        }
        let dist = |a: usize, b: usize| -> f64 {
            let mut s = 0.0;
            for k in 0..d {
                let t = positions[a * d + k] - positions[b * d + k];
                s += t * t;
            }
            s.sqrt()
        };
        let mut cells = vec![0isize; d];
        let mut offs = vec![0isize; d];
        for i in 0..n_interior {
            let x = &positions[i * d..(i + 1) * d];
            for k in 0..d {
                cells[k] = (((x[k] + half) / cell).floor() as isize).clamp(0, m as isize - 1);
                offs[k] = -1;
            }
            'cube: loop {
                let mut id = 0usize;
                let mut ok = true;
                for k in 0..d {
                    let c = cells[k] + offs[k];
                    if c < 0 || c >= m as isize {
                        ok = false;
                        break;
                    }
                    id = id * m + c as usize;
                }
                if ok {
                    for &j in &buckets[id] {
                        if (j as usize) > i && dist(i, j as usize) <= r_c {
                            edges.push(Edge { a: i as u32, b: j, c: 1.0 });
                        }
                    }
                }
                let mut k = 0;
                loop {
                    if k == d {
                        break 'cube;
                    }
                    offs[k] += 1;
                    if offs[k] <= 1 {
                        break;
                    }
                    offs[k] = -1;
                    k += 1;
                }
            }
        }
    }
    let coupling = match style {
        BoundaryStyle::Faces => 1.0 / gamma_face_count as f64,
        BoundaryStyle::Shorted => 1.0,
    };
    for &i in &b_minus {
        for &g in &gamma_minus {
            edges.push(Edge { a: i, b: g, c: coupling });
        }
    }
    for &i in &b_plus {
        for &g in &gamma_plus {
            edges.push(Edge { a: i, b: g, c: coupling });
        }
    }
    Ok(ResistorGraph {
        d,
        n,
        r_c,
        style,
        n_interior,
        positions,
        gamma_minus,
        gamma_plus,
        gamma_face_count,
        b_minus,
        b_plus,
        edges,
    })
}

/// Solver knobs for the conjugate-gradient potential solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Convergence when ||r|| <= rel_tol ||b||.
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the number of vertices.
    pub max_iter_factor: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { rel_tol: 1e-10, max_iter_factor: 50 }
    }
}

/// Dirichlet solution: potentials on all vertices with the left face at 0
/// and the right face at 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialSolution {
    pub v: Vec<f64>,
    /// The two faces lie in a common connected component.
    pub conducting: bool,
    pub converged: bool,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Current out of the grounded face: sum over its couplings of c * V.
    pub g_minus: f64,
    /// Current into the unit face: sum over its couplings of c * (1 - V).
    pub g_plus: f64,
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n as u32).collect())
    }
    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            self.0[x as usize] = self.0[self.0[x as usize] as usize];
            x = self.0[x as usize];
        }
        x
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra as usize] = rb;
        }
    }
}

/// Solves the Dirichlet problem by Jacobi-preconditioned conjugate
/// gradients on the interior degrees of freedom. Interior vertices not
/// connected to both faces are assigned: 0 on the grounded side or when
/// floating, 1 on the unit side.
pub fn solve_potentials(graph: &ResistorGraph, opts: &SolveOptions) -> Result<PotentialSolution> {
    let n_all = graph.n_vertices();
    let n_int = graph.n_interior;
    if graph.gamma_minus.is_empty() || graph.gamma_plus.is_empty() {
        return Err(Error::invalid("graph has no boundary faces"));
    }
    let mut uf = UnionFind::new(n_all);
    for e in &graph.edges {
        uf.union(e.a, e.b);
    }
    let root_s = uf.find(graph.gamma_minus[0]);
    let root_t = uf.find(graph.gamma_plus[0]);
    let conducting = root_s == root_t && !graph.b_minus.is_empty() && !graph.b_plus.is_empty();

    let mut v = vec![0.0; n_all];
    for &g in &graph.gamma_plus {
        v[g as usize] = 1.0;
    }
    // Non-conducting components: ground side and floaters stay 0, unit side
    // rises to 1 so the maximum principle holds trivially.
    for i in 0..n_int {
        let r = uf.find(i as u32);
        if r == root_t && root_t != root_s {
            v[i] = 1.0;
        }
    }

    let mut iterations = 0;
    let mut relative_residual = 0.0;
    let mut converged = true;
    if conducting {
        let unknown: Vec<u32> =
            (0..n_int as u32).filter(|&i| uf.find(i) == root_s).collect();
        let slot: std::collections::HashMap<u32, usize> =
            unknown.iter().enumerate().map(|(s, &i)| (i, s)).collect();
        let m = unknown.len();
        let mut diag = vec![0.0; m];
        let mut b = vec![0.0; m];
        // CSR over interior-interior couplings restricted to the unknowns.
        let mut deg = vec![0usize; m + 1];
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        let plus: std::collections::HashSet<u32> = graph.gamma_plus.iter().copied().collect();
        let minus: std::collections::HashSet<u32> = graph.gamma_minus.iter().copied().collect();
        for e in &graph.edges {
            let ia = slot.get(&e.a).copied();
            let ib = slot.get(&e.b).copied();
            match (ia, ib) {
                (Some(sa), Some(sb)) => {
                    diag[sa] += e.c;
                    diag[sb] += e.c;
                    rows.push((sa, sb, e.c));
                    rows.push((sb, sa, e.c));
                    deg[sa + 1] += 1;
                    deg[sb + 1] += 1;
                }
                (Some(sa), None) => {
                    diag[sa] += e.c;
                    if plus.contains(&e.b) {
                        b[sa] += e.c;
                    } else if !minus.contains(&e.b) {
                        unreachable!("edge endpoint neither unknown nor boundary");
                    }
                }
                (None, Some(sb)) => {
                    diag[sb] += e.c;
                    if plus.contains(&e.a) {
                        b[sb] += e.c;
                    } else if !minus.contains(&e.a) {
                        unreachable!("edge endpoint neither unknown nor boundary");
                    }
                }
                (None, None) => {}
            }
        }
        for i in 0..m {
            deg[i + 1] += deg[i];
        }
        let mut csr_col = vec![0u32; rows.len()];
        let mut csr_val = vec![0.0; rows.len()];
        let mut fill = deg.clone();
        for &(r, c, w) in &rows {
            csr_col[fill[r]] = c as u32;
            csr_val[fill[r]] = w;
            fill[r] += 1;
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..m {
                let mut acc = diag[i] * x[i];
                for k in deg[i]..deg[i + 1] {
                    acc -= csr_val[k] * x[csr_col[k] as usize];
                }
                out[i] = acc;
            }
        };
        let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut x = vec![0.0; m];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; m];
        let max_iter = opts.max_iter_factor * n_all;
        let mut r_norm = b_norm;
        while r_norm > opts.rel_tol * b_norm && iterations < max_iter {
            apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break; // numerically singular direction
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..m {
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
            r_norm = r.iter().map(|t| t * t).sum::<f64>().sqrt();
            iterations += 1;
        }
        relative_residual = if b_norm > 0.0 { r_norm / b_norm } else { 0.0 };
        converged = relative_residual <= opts.rel_tol;
        for (s, &i) in unknown.iter().enumerate() {
            v[i as usize] = x[s];
        }
    }

    let mut g_minus = 0.0;
    let mut g_plus = 0.0;
    let minus: std::collections::HashSet<u32> = graph.gamma_minus.iter().copied().collect();
    let plus: std::collections::HashSet<u32> = graph.gamma_plus.iter().copied().collect();
    for e in &graph.edges {
        let (bnd_m, other) = if minus.contains(&e.a) {
            (true, e.b)
        } else if minus.contains(&e.b) {
            (true, e.a)
        } else {
            (false, 0)
        };
        if bnd_m {
            g_minus += e.c * v[other as usize];
            continue;
        }
        let (bnd_p, other) = if plus.contains(&e.a) {
            (true, e.b)
        } else if plus.contains(&e.b) {
            (true, e.a)
        } else {
            (false, 0)
        };
        if bnd_p {
            g_plus += e.c * (1.0 - v[other as usize]);
        }
    }
    Ok(PotentialSolution {
        v,
        conducting,
        converged,
        iterations,
        relative_residual,
        g_minus,
        g_plus,
    })
}

/// Two-terminal conductance: current out of the grounded face. Zero when
/// the faces are not connected.
pub fn conductance(graph: &ResistorGraph, opts: &SolveOptions) -> Result<(f64, PotentialSolution)> {
    let sol = solve_potentials(graph, opts)?;
    let g = if sol.conducting { sol.g_minus } else { 0.0 };
    Ok((g, sol))
}

/// Converts a conductance to the diffusivity lower-bound estimate
/// D_N = 8 N^2 G / |V|.
pub fn diffusion_from_conductance(graph: &ResistorGraph, g: f64) -> f64 {
    let n = graph.n as f64;
    8.0 * n * n * g / graph.v_bar() as f64
}

/// One box-size row of a finite-size scaling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSizeRow {
    pub n: usize,
    pub d_mean: f64,
    pub d_se: f64,
    pub n_samples: usize,
    /// Samples whose faces were not connected (their D is 0, included in
    /// the mean).
    pub n_disconnected: usize,
    /// Samples whose CG solve missed the tolerance.
    pub n_unconverged: usize,
}

/// Finite-size scan of the network diffusivity estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkEstimate {
    pub rows: Vec<NetworkSizeRow>,
    /// Largest-N mean.
    pub d_final: f64,
    pub d_se_final: f64,
    /// The two largest sizes agree within twice the combined SE.
    pub stabilized: bool,
}

/// Estimates D_N over fresh samples at each box size in `n_grid`
/// (ascending). `sampler(sample_index, n)` must return a point set covering
/// (-N, N)^d; disconnected samples count as zero conductance.
pub fn network_diffusion_estimate(
    sampler: impl Fn(u64, usize) -> Result<MarkedPointSet> + Sync,
    n_grid: &[usize],
    r_c: f64,
    n_samples: usize,
    opts: &SolveOptions,
) -> Result<NetworkEstimate> {
    if n_grid.is_empty() || n_samples == 0 {
        return Err(Error::invalid("need at least one box size and one sample"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("box sizes must be strictly increasing"));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let results: Vec<(f64, bool, bool)> = (0..n_samples as u64)
            .into_par_iter()
            .map(|s| -> Result<(f64, bool, bool)> {
                let pts = sampler(s, n)?;
                let graph = build_periodized_graph(&pts, n, r_c, BoundaryStyle::Faces)?;
                let (g, sol) = conductance(&graph, opts)?;
                Ok((
                    diffusion_from_conductance(&graph, g),
                    !sol.conducting,
                    sol.conducting && !sol.converged,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let ds: Vec<f64> = results.iter().map(|r| r.0).collect();
        let (d_mean, d_se) = mean_se(&ds);
        rows.push(NetworkSizeRow {
            n,
            d_mean,
            d_se,
            n_samples,
            n_disconnected: results.iter().filter(|r| r.1).count(),
            n_unconverged: results.iter().filter(|r| r.2).count(),
        });
    }
    let last = rows.len() - 1;
    let stabilized = if rows.len() >= 2 {
        let a = &rows[last - 1];
        let b = &rows[last];
        (a.d_mean - b.d_mean).abs() <= 2.0 * (a.d_se.powi(2) + b.d_se.powi(2)).sqrt()
    } else {
        true
    };
    Ok(NetworkEstimate {
        d_final: rows[last].d_mean,
        d_se_final: rows[last].d_se,
        rows,
        stabilized,
    })
}
