//! Finite observation boxes, torus metric, and neighbor queries.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Centered box `[-side/2, side/2)^d`, optionally with periodic (torus)
/// identification of opposite faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub d: usize,
    pub side: f64,
    pub periodic: bool,
}

impl BoxGeometry {
    pub fn new(d: usize, side: f64, periodic: bool) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid(format!("dimension must be >= 2, got {d}")));
        }
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::invalid(format!("box side must be positive, got {side}")));
        }
        Ok(BoxGeometry { d, side, periodic })
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.d as i32)
    }

    /// Componentwise displacement y - x, reduced to the minimal image when
    /// periodic. The result is written into `out` (length d).
    pub fn displacement(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..self.d {
            let mut dk = y[k] - x[k];
            if self.periodic {
                dk -= self.side * (dk / self.side).round();
            }
            out[k] = dk;
        }
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.d {
            let mut dk = y[k] - x[k];
            if self.periodic {
                dk -= self.side * (dk / self.side).round();
            }
            s += dk * dk;
        }
        s.sqrt()
    }

    /// Maps a coordinate vector into the fundamental domain `[-side/2, side/2)`.
    pub fn wrap(&self, x: &mut [f64]) {
        let h = self.side / 2.0;
        for k in 0..self.d {
            let mut v = (x[k] + h).rem_euclid(self.side) - h;
            // rem_euclid can land exactly on +side/2 through rounding.
            if v >= h {
                v = -h;
            }
            x[k] = v;
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.side / 2.0;
        x.iter().take(self.d).all(|&v| (-h..h).contains(&v))
    }
}

/// Spatial hash over a point set supporting exact fixed-radius neighbor
/// queries. Cell side is `max(1, radius/2)`; a query scans the cells
/// overlapping the ball and filters by exact distance, so results are
/// independent of the hashing resolution.
pub struct NeighborIndex {
    geom: BoxGeometry,
    radius: f64,
    cell: f64,
    cells_per_axis: usize,
    /// cell id -> point indices, CSR layout.
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl NeighborIndex {
    /// Builds an index for queries up to `radius` over `positions`
    /// (flattened, stride d, all inside the box).
    pub fn build(geom: BoxGeometry, positions: &[f64], radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("query radius must be positive, got {radius}")));
        }
        if geom.periodic && radius > geom.side / 2.0 {
            return Err(Error::invalid(format!(
                "query radius {radius} exceeds half the box side {}; torus balls would self-overlap",
                geom.side
            )));
        }
        let cell = (radius / 2.0).max(1.0);
        let cells_per_axis = ((geom.side / cell).floor() as usize).max(1);
        // Recompute the cell side so the grid tiles the box exactly;
        // periodic wrap then maps cell indices cleanly.
        let cell = geom.side / cells_per_axis as f64;
        let n = positions.len() / geom.d;
        let n_cells = cells_per_axis.pow(geom.d as u32);
        let mut counts = vec![0u32; n_cells + 1];
        let cell_of = |p: &[f64]| -> usize {
            let mut id = 0usize;
            for k in 0..geom.d {
                let mut c = ((p[k] + geom.side / 2.0) / cell).floor() as isize;
                c = c.clamp(0, cells_per_axis as isize - 1);
                id = id * cells_per_axis + c as usize;
            }
            id
        };
        for i in 0..n {
            counts[cell_of(&positions[i * geom.d..(i + 1) * geom.d]) + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; n];
        for i in 0..n {
            let c = cell_of(&positions[i * geom.d..(i + 1) * geom.d]);
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Ok(NeighborIndex { geom, radius, cell, cells_per_axis, starts, items })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Indices of all points within distance `r` of `x` (torus metric if the
    /// box is periodic), excluding none. Requires `r <=` build radius.
    pub fn query(&self, positions: &[f64], x: &[f64], r: f64, out: &mut Vec<u32>) {
        debug_assert!(r <= self.radius * (1.0 + 1e-12));
        out.clear();
        let d = self.geom.d;
        let span = (r / self.cell).ceil() as isize + 1;
        let mut base = vec![0isize; d];
        for k in 0..d {
            base[k] = ((x[k] + self.geom.side / 2.0) / self.cell).floor() as isize;
        }
        let m = self.cells_per_axis as isize;
        let mut offs = vec![-span; d];
        loop {
            let mut id = 0usize;
            let mut skip = false;
            for k in 0..d {
                let mut c = base[k] + offs[k];
                if self.geom.periodic {
                    c = c.rem_euclid(m);
                } else if c < 0 || c >= m {
                    skip = true;
                    break;
                }
                id = id * self.cells_per_axis + c as usize;
            }
            if !skip {
                for &i in &self.items[self.starts[id] as usize..self.starts[id + 1] as usize] {
                    let p = &positions[i as usize * d..(i as usize + 1) * d];
                    if self.geom.distance(x, p) <= r {
                        out.push(i);
                    }
                }
            }
            // Odometer over the cell offset cube.
            let mut k = 0;
            loop {
                if k == d {
                    // Canonical order for downstream determinism.
                    out.sort_unstable();
                    out.dedup();
                    return;
                }
                offs[k] += 1;
                if offs[k] <= span {
                    break;
                }
                offs[k] = -span;
                k += 1;
            }
        }
    }
}

/// Surface area of the unit sphere in R^d: 2 pi^{d/2} / Gamma(d/2).
pub fn unit_sphere_area(d: usize) -> f64 {
    match d {
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            let half = d as f64 / 2.0;
            2.0 * std::f64::consts::PI.powf(half) / gamma_fn(half)
        }
    }
}

/// Volume of the radius-r ball in R^d.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_sphere_area(d) * r.powi(d as i32) / d as f64
}

/// Upper incomplete gamma Gamma(d, x) for integer d >= 1:
/// (d-1)! e^{-x} sum_{k<d} x^k / k!.
pub fn upper_gamma_int(d: usize, x: f64) -> f64 {
    let mut fact = 1.0;
    for k in 2..d {
        fact *= k as f64;
    }
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 0..d {
        if k > 0 {
            term *= x / k as f64;
        }
        sum += term;
    }
    fact * (-x).exp() * sum
}

fn gamma_fn(x: f64) -> f64 {
    // Lanczos approximation; only reached for d >= 4.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + G + 0.5;
        for (i, &c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn torus_distance_uses_minimal_image() {
        let g = BoxGeometry::new(2, 10.0, true).unwrap();
        assert_relative_eq!(g.distance(&[-4.9, 0.0], &[4.9, 0.0]), 0.2, epsilon = 1e-12);
        let hard = BoxGeometry::new(2, 10.0, false).unwrap();
        assert_relative_eq!(hard.distance(&[-4.9, 0.0], &[4.9, 0.0]), 9.8, epsilon = 1e-12);
    }

    #[test]
    fn wrap_lands_in_fundamental_domain() {
        let g = BoxGeometry::new(2, 4.0, true).unwrap();
        let mut x = [5.0, -2.0];
        g.wrap(&mut x);
        assert!(g.contains(&x));
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn neighbor_query_matches_brute_force() {
        let mut rng = crate::rng::stream(99, &[1]);
        for &periodic in &[false, true] {
            let g = BoxGeometry::new(2, 20.0, periodic).unwrap();
            let n = 400;
            let mut pos = Vec::with_capacity(n * 2);
            for _ in 0..n * 2 {
                pos.push(rng.gen_range(-10.0..10.0));
            }
            let r = 3.5;
            let idx = NeighborIndex::build(g, &pos, r).unwrap();
            let mut got = Vec::new();
            for probe in 0..40 {
                let x = [pos[probe * 2], pos[probe * 2 + 1]];
                idx.query(&pos, &x, r, &mut got);
                let want: Vec<u32> = (0..n as u32)
                    .filter(|&i| g.distance(&x, &pos[i as usize * 2..i as usize * 2 + 2]) <= r)
                    .collect();
                assert_eq!(got, want, "periodic={periodic} probe={probe}");
            }
        }
    }

    #[test]
    fn incomplete_gamma_small_d() {
        // Gamma(2, x) = (x+1) e^{-x}, Gamma(3, x) = (x^2 + 2x + 2) e^{-x}.
        for &x in &[0.5, 1.0, 5.0, 20.0] {
            assert_relative_eq!(upper_gamma_int(2, x), (x + 1.0) * (-x).exp(), epsilon = 1e-12);
            assert_relative_eq!(
                upper_gamma_int(3, x),
                (x * x + 2.0 * x + 2.0) * (-x).exp(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn incomplete_gamma_matches_quadrature() {
        // Gamma(d, x) = int_x^inf t^{d-1} e^{-t} dt by Simpson on [x, x+60].
        for &(d, x) in &[(2usize, 1.0f64), (3, 2.0), (4, 0.7)] {
            let f = |t: f64| t.powi(d as i32 - 1) * (-t).exp();
            let (a, b, m) = (x, x + 60.0, 60_000);
            let h = (b - a) / m as f64;
            let mut s = f(a) + f(b);
            for i in 1..m {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = s * h / 3.0;
            assert_relative_eq!(upper_gamma_int(d, x), quad, max_relative = 1e-8);
        }
    }

    #[test]
    fn sphere_area_and_ball_volume() {
        assert_relative_eq!(unit_sphere_area(2), 2.0 * std::f64::consts::PI);
        assert_relative_eq!(unit_sphere_area(3), 4.0 * std::f64::consts::PI);
        assert_relative_eq!(ball_volume(2, 2.0), 4.0 * std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(
            ball_volume(3, 1.5),
            4.0 / 3.0 * std::f64::consts::PI * 1.5f64.powi(3),
            epsilon = 1e-12
        );
        // Gamma(5/2) = 3 sqrt(pi) / 4 enters d = 5.
        assert_relative_eq!(
            unit_sphere_area(5),
            8.0 * std::f64::consts::PI.powi(2) / 3.0,
            max_relative = 1e-10
        );
    }
}
