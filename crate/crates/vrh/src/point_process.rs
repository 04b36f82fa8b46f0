//! Marked point processes: the random environments the walk lives in.
//!
//! Supported processes are the homogeneous Poisson point process and the
//! uniformly perturbed integer lattice, both on a finite (optionally
//! periodic) box. Marks (energies) are attached by iid randomization and
//! removed by energy thinning. Palm conditioning produces environments with
//! a distinguished point at the origin, which is where every walk starts.

use crate::geometry::BoxGeometry;
use crate::stats::{mean_se, Moments};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Distribution of a single energy mark on [-1, 1].
///
/// The power family has symmetric law with window mass
/// nu([-E, E]) = E^{1+alpha} for E in [0, 1]; alpha = 0 is the uniform
/// distribution. The point mass puts every mark at zero (unmarked medium).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyLaw {
    PointMass,
    Power { alpha: f64 },
}

impl EnergyLaw {
    pub fn validate(&self) -> Result<()> {
        if let EnergyLaw::Power { alpha } = self {
            if !(*alpha >= 0.0) || !alpha.is_finite() {
                return Err(Error::invalid(format!("power-law alpha must be >= 0, got {alpha}")));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            EnergyLaw::PointMass => 0.0,
            EnergyLaw::Power { alpha } => {
                let u: f64 = rng.gen();
                let magnitude = u.powf(1.0 / (1.0 + alpha));
                if rng.gen::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    }

    /// nu([-e, e]), the probability that a mark lies in the symmetric window.
    pub fn window_mass(&self, e: f64) -> f64 {
        match self {
            EnergyLaw::PointMass => {
                if e >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            EnergyLaw::Power { alpha } => e.clamp(0.0, 1.0).powf(1.0 + alpha),
        }
    }
}

/// A finite sample of a marked point process: positions (flattened, stride
/// d) plus one energy per point, inside a [`BoxGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPointSet {
    pub geom: BoxGeometry,
    positions: Vec<f64>,
    energies: Vec<f64>,
}

impl MarkedPointSet {
    pub fn new(geom: BoxGeometry, positions: Vec<f64>, energies: Vec<f64>) -> Result<Self> {
        if positions.len() != energies.len() * geom.d {
            return Err(Error::invalid(format!(
                "positions/energies length mismatch: {} coordinates for {} marks in dimension {}",
                positions.len(),
                energies.len(),
                geom.d
            )));
        }
        Ok(MarkedPointSet { geom, positions, energies })
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.geom.d..(i + 1) * self.geom.d]
    }

    pub fn energy(&self, i: usize) -> f64 {
        self.energies[i]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Empirical intensity: points per unit volume.
    pub fn intensity(&self) -> f64 {
        self.len() as f64 / self.geom.volume()
    }

    /// Number of points in the centered half-open window [-side/2, side/2)^d.
    pub fn count_in_window(&self, side: f64) -> usize {
        let h = side / 2.0;
        (0..self.len())
            .filter(|&i| self.position(i).iter().all(|&v| -h <= v && v < h))
            .count()
    }
}

/// Samples a homogeneous Poisson point process of intensity `rho` on the
/// box: the count is Poisson(rho |box|), positions are iid uniform. Marks
/// are zero until [`randomize`] assigns them.
pub fn sample_ppp(rho: f64, geom: BoxGeometry, rng: &mut ChaCha8Rng) -> Result<MarkedPointSet> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("intensity must be positive, got {rho}")));
    }
    let mean = rho * geom.volume();
    let n = Poisson::new(mean)
        .map_err(|e| Error::invalid(format!("Poisson({mean}) invalid: {e}")))?
        .sample(rng) as usize;
    let h = geom.side / 2.0;
    let mut positions = Vec::with_capacity(n * geom.d);
    for _ in 0..n * geom.d {
        positions.push(rng.gen_range(-h..h));
    }
    MarkedPointSet::new(geom, positions, vec![0.0; n])
}

/// Samples the uniformly perturbed lattice: one point per unit cell of Z^d,
/// every lattice point shifted by the same uniform offset in [0, 1)^d. The
/// box side must be a positive integer so cells tile the box exactly.
pub fn sample_perturbed_lattice(
    geom: BoxGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<MarkedPointSet> {
    let side = geom.side;
    if side.fract() != 0.0 || side < 1.0 {
        return Err(Error::invalid(format!(
            "perturbed lattice needs an integer box side >= 1, got {side}"
        )));
    }
    let l = side as usize;
    let mut offset = vec![0.0; geom.d];
    for u in offset.iter_mut() {
        *u = rng.gen::<f64>();
    }
    let n = l.pow(geom.d as u32);
    let mut positions = Vec::with_capacity(n * geom.d);
    let mut z = vec![0usize; geom.d];
    loop {
        for k in 0..geom.d {
            positions.push(-side / 2.0 + z[k] as f64 + offset[k]);
        }
        let mut k = 0;
        loop {
            if k == geom.d {
                return MarkedPointSet::new(geom, positions, vec![0.0; n]);
            }
            z[k] += 1;
            if z[k] < l {
                break;
            }
            z[k] = 0;
            k += 1;
        }
    }
}

/// Attaches iid marks drawn from `law` to every point, replacing existing
/// marks. Positions are untouched.
pub fn randomize(pts: &MarkedPointSet, law: EnergyLaw, rng: &mut ChaCha8Rng) -> Result<MarkedPointSet> {
    law.validate()?;
    let energies = (0..pts.len()).map(|_| law.sample(rng)).collect();
    MarkedPointSet::new(pts.geom, pts.positions.clone(), energies)
}

/// Energy thinning: keeps exactly the points with |E| <= e_c. For a
/// nu-randomized Poisson process this produces a Poisson process of
/// intensity nu([-e_c, e_c]) * rho.
pub fn thin_by_energy(pts: &MarkedPointSet, e_c: f64) -> Result<MarkedPointSet> {
    if !(e_c > 0.0 && e_c <= 1.0) {
        return Err(Error::invalid(format!("energy cutoff must lie in (0, 1], got {e_c}")));
    }
    let d = pts.geom.d;
    let mut positions = Vec::new();
    let mut energies = Vec::new();
    for i in 0..pts.len() {
        if pts.energy(i).abs() <= e_c {
            positions.extend_from_slice(pts.position(i));
            energies.push(pts.energy(i));
        }
    }
    let _ = d;
    MarkedPointSet::new(pts.geom, positions, energies)
}

/// How to put a distinguished point at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PalmMode {
    /// Insert a fresh point at the origin with a fresh mark: exact Palm
    /// conditioning for a randomized Poisson process.
    ExactPpp,
    /// Translate the point nearest to a uniformly drawn location to the
    /// origin: finite-volume surrogate, exact for the perturbed lattice
    /// (whose Palm version is the integer lattice itself). Requires a
    /// periodic box so translation stays inside the fundamental domain.
    Recenter,
}

/// A point configuration with a distinguished occupied origin; the starting
/// state of every hopping walk.
#[derive(Debug, Clone)]
pub struct Environment {
    pub pts: MarkedPointSet,
    /// Index of the origin point within `pts`.
    pub origin: usize,
}

impl Environment {
    pub fn origin_energy(&self) -> f64 {
        self.pts.energy(self.origin)
    }
}

/// Palm conditioning of a stationary sample.
pub fn palm_condition(
    pts: &MarkedPointSet,
    law: EnergyLaw,
    mode: PalmMode,
    rng: &mut ChaCha8Rng,
) -> Result<Environment> {
    match mode {
        PalmMode::ExactPpp => {
            law.validate()?;
            let mut positions = pts.positions.clone();
            let mut energies = pts.energies.clone();
            positions.extend(std::iter::repeat(0.0).take(pts.geom.d));
            energies.push(law.sample(rng));
            let origin = energies.len() - 1;
            Ok(Environment { pts: MarkedPointSet::new(pts.geom, positions, energies)?, origin })
        }
        PalmMode::Recenter => {
            if pts.is_empty() {
                return Err(Error::invalid("cannot recenter an empty point set"));
            }
            if !pts.geom.periodic {
                return Err(Error::invalid("recenter Palm conditioning requires a periodic box"));
            }
            let d = pts.geom.d;
            let h = pts.geom.side / 2.0;
            let mut q = vec![0.0; d];
            for v in q.iter_mut() {
                *v = rng.gen_range(-h..h);
            }
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for i in 0..pts.len() {
                let dist = pts.geom.distance(&q, pts.position(i));
                if dist < best_dist {
                    best_dist = dist;
                    best = i;
                }
            }
            let shift: Vec<f64> = pts.position(best).to_vec();
            let mut positions = pts.positions.clone();
            for i in 0..pts.len() {
                let row = &mut positions[i * d..(i + 1) * d];
                for k in 0..d {
                    row[k] -= shift[k];
                }
                pts.geom.wrap(row);
            }
            // Pin the origin exactly; wrap can leave -0.0 or rounding dust.
            for k in 0..d {
                positions[best * d + k] = 0.0;
            }
            Ok(Environment {
                pts: MarkedPointSet::new(pts.geom, positions, pts.energies.clone())?,
                origin: best,
            })
        }
    }
}

/// Empirical kappa-th moment of the unit-cell occupation number.
///
/// Each sample's box is partitioned into floor(side)^d half-open unit
/// cells; the statistic is the per-sample average of count^kappa over
/// cells, and the standard error is taken across samples.
pub fn moment_estimate(samples: &[MarkedPointSet], kappa: u32) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("moment_estimate needs at least one sample"));
    }
    let mut per_sample = Vec::with_capacity(samples.len());
    for pts in samples {
        let d = pts.geom.d;
        let m = pts.geom.side.floor() as usize;
        if m == 0 {
            return Err(Error::invalid("box side must be >= 1 for unit-cell moments"));
        }
        let mut counts = vec![0u64; m.pow(d as u32)];
        let h = pts.geom.side / 2.0;
        'pts: for i in 0..pts.len() {
            let mut id = 0usize;
            for k in 0..d {
                let c = (pts.position(i)[k] + h).floor();
                if c < 0.0 || c >= m as f64 {
                    continue 'pts; // remainder strip when side is not integer
                }
                id = id * m + c as usize;
            }
            counts[id] += 1;
        }
        let mean_pow = counts.iter().map(|&c| (c as f64).powi(kappa as i32)).sum::<f64>()
            / counts.len() as f64;
        per_sample.push(mean_pow);
    }
    Ok(mean_se(&per_sample))
}

/// Ratio xi(C_N) / (rho N^d) for each window side N; converges to 1 for an
/// ergodic process of intensity rho. Every N must fit inside the sample box.
pub fn ergodic_density_check(pts: &MarkedPointSet, rho: f64, n_grid: &[f64]) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("reference intensity must be positive, got {rho}")));
    }
    let mut out = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        if !(n > 0.0) || n > pts.geom.side {
            return Err(Error::invalid(format!(
                "window side {n} must lie in (0, box side {}]",
                pts.geom.side
            )));
        }
        let count = pts.count_in_window(n) as f64;
        out.push(count / (rho * n.powi(pts.geom.d as i32)));
    }
    Ok(out)
}

/// Mark-dependent factor of the exchange-test kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelG {
    One,
    Energy,
    EnergySquared,
}

impl KernelG {
    fn eval(&self, e: f64) -> f64 {
        match self {
            KernelG::One => 1.0,
            KernelG::Energy => e,
            KernelG::EnergySquared => e * e,
        }
    }
}

/// Two-sided Monte Carlo evaluation of the point-shift exchange identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExchangeReport {
    pub kernel: KernelG,
    pub n_samples: usize,
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub rhs_mean: f64,
    pub rhs_se: f64,
    /// (lhs - rhs) / combined SE; near zero when the identity holds.
    pub z_score: f64,
}

/// Tests the mass-transport exchange identity
/// E0 sum_x k(xi, S_x xi) = E0 sum_x k(S_x xi, xi) for the kernel
/// k = exp(-|shift|) g(energy at origin), on Palm-conditioned samples.
///
/// The left side weighs the origin mark, the right side the mark of the
/// shifted-to point. Both sums run over all points of each environment.
pub fn exchange_formula_test(envs: &[Environment], g: KernelG) -> Result<ExchangeReport> {
    if envs.len() < 2 {
        return Err(Error::invalid("exchange test needs at least two Palm samples"));
    }
    let mut lhs = Moments::default();
    let mut rhs = Moments::default();
    for env in envs {
        let d = env.pts.geom.d;
        let zero = vec![0.0; d];
        let e0 = env.origin_energy();
        let mut weight_sum = 0.0;
        let mut weighted_marks = 0.0;
        for i in 0..env.pts.len() {
            let w = (-env.pts.geom.distance(&zero, env.pts.position(i))).exp();
            weight_sum += w;
            weighted_marks += w * g.eval(env.pts.energy(i));
        }
        lhs.push(g.eval(e0) * weight_sum);
        rhs.push(weighted_marks);
    }
    let se = (lhs.se().powi(2) + rhs.se().powi(2)).sqrt();
    let z = if se > 0.0 { (lhs.mean() - rhs.mean()) / se } else { 0.0 };
    Ok(ExchangeReport {
        kernel: g,
        n_samples: envs.len(),
        lhs_mean: lhs.mean(),
        lhs_se: lhs.se(),
        rhs_mean: rhs.mean(),
        rhs_se: rhs.se(),
        z_score: z,
    })
}
