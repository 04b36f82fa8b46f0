//! Event-driven kinetic Monte Carlo for the hopping walk and its
//! diffusivity estimators.
//!
//! The walk sits at an occupied point, waits an Exp(lambda) time where
//! lambda is the total escape rate, then jumps to a neighbor with
//! probability rate/lambda (the embedded chain). Rates are symmetric, so
//! the uniform measure on points is reversible and the embedded chain
//! satisfies detailed balance with weights lambda.

use crate::geometry::{ball_volume, unit_sphere_area, upper_gamma_int, NeighborIndex};
use crate::point_process::Environment;
use crate::rng::{purpose, stream};
use crate::stats::{bootstrap_mean_ci, mean_se};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Hard ceiling on cached per-site jump tables before the cache is reset;
/// affects speed only, never results.
const RATE_CACHE_CAP: usize = 200_000;

/// Default cap on jumps per trajectory; exceeding it marks the trajectory
/// truncated rather than aborting the run.
pub const DEFAULT_JUMP_BUDGET: u64 = 10_000_000;

/// Phonon-assisted hopping rate between marks `ex`, `ey` at distance
/// `dist`: exp(-dist - beta(|ex - ey| + |ex| + |ey|)). Zero at distance
/// zero (no self-jumps).
pub fn hop_rate(dist: f64, ex: f64, ey: f64, beta: f64) -> f64 {
    debug_assert!(beta >= 0.0);
    if dist == 0.0 {
        return 0.0;
    }
    // |ex| + |ey| first: addition order must not depend on the argument
    // order, or detailed balance would break in the last ulp.
    (-dist - beta * (ex.abs() + ey.abs() + (ex - ey).abs())).exp()
}

/// Which rate family the walk uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateLaw {
    /// The full hopping rates at inverse temperature beta.
    Boltzmann { beta: f64 },
    /// Unit rates on pairs within distance r_c whose marks both lie in
    /// [-e_c, e_c]; zero otherwise. The full rates dominate these times
    /// exp(-r_c - 4 beta e_c).
    Cutoff { r_c: f64, e_c: f64 },
}

impl RateLaw {
    pub fn rate(&self, dist: f64, ex: f64, ey: f64) -> f64 {
        match *self {
            RateLaw::Boltzmann { beta } => hop_rate(dist, ex, ey, beta),
            RateLaw::Cutoff { r_c, e_c } => {
                if dist > 0.0 && dist <= r_c && ex.abs() <= e_c && ey.abs() <= e_c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Rate family plus the truncation policy for neighbor sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub law: RateLaw,
    /// Neighbor sums run over points within this radius.
    pub r_max: f64,
    /// A site's escape rate is certified when the density-weighted bound on
    /// the neglected tail is at most this fraction of the computed rate.
    pub tail_tolerance: f64,
}

impl RateModel {
    pub fn new(law: RateLaw, r_max: f64, tail_tolerance: f64) -> Result<Self> {
        match law {
            RateLaw::Boltzmann { beta } => {
                if !(beta >= 0.0) || !beta.is_finite() {
                    return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
                }
            }
            RateLaw::Cutoff { r_c, e_c } => {
                if !(r_c > 0.0) || !(e_c > 0.0) {
                    return Err(Error::invalid(format!(
                        "cutoff scales must be positive, got r_c={r_c}, e_c={e_c}"
                    )));
                }
            }
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::invalid(format!("r_max must be positive, got {r_max}")));
        }
        if !(tail_tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "tail tolerance must be positive, got {tail_tolerance}"
            )));
        }
        Ok(RateModel { law, r_max, tail_tolerance })
    }

    /// Radius actually needed for neighbor queries.
    pub fn reach(&self) -> f64 {
        match self.law {
            RateLaw::Boltzmann { .. } => self.r_max,
            RateLaw::Cutoff { r_c, .. } => r_c.min(self.r_max),
        }
    }

    /// Density-weighted upper bound on the rate mass neglected beyond the
    /// query radius, for a site with mark `e_site` in a medium of intensity
    /// `rho`. Uses rate <= exp(-dist - 2 beta |e_site|) for the full law
    /// and rate <= 1 within r_c for the cutoff law.
    pub fn tail_bound(&self, d: usize, rho: f64, e_site: f64) -> f64 {
        match self.law {
            RateLaw::Boltzmann { beta } => {
                rho * (-2.0 * beta * e_site.abs()).exp()
                    * unit_sphere_area(d)
                    * upper_gamma_int(d, self.r_max)
            }
            RateLaw::Cutoff { r_c, .. } => {
                if self.r_max >= r_c {
                    0.0
                } else {
                    rho * (ball_volume(d, r_c) - ball_volume(d, self.r_max))
                }
            }
        }
    }
}

/// Escape-rate table of one site: neighbors, cumulative rates, and the
/// truncation certificate.
#[derive(Debug, Clone)]
pub struct SiteRates {
    /// Point indices of neighbors with positive rate, ascending.
    pub neighbors: Vec<u32>,
    /// Cumulative rates; last entry equals `lambda`.
    pub prefix: Vec<f64>,
    pub lambda: f64,
    pub tail_bound: f64,
    /// tail_bound <= tail_tolerance * lambda.
    pub certified: bool,
}

impl SiteRates {
    /// Rate to a specific neighbor point, zero if absent.
    pub fn rate_to(&self, point: u32) -> f64 {
        match self.neighbors.binary_search(&point) {
            Ok(i) => self.prefix[i] - if i == 0 { 0.0 } else { self.prefix[i - 1] },
            Err(_) => 0.0,
        }
    }
}

/// Samples the embedded jump: waiting time Exp(lambda) and a target chosen
/// with probability rate/lambda. `None` when the site has no exit.
pub fn embedded_jump(rates: &SiteRates, rng: &mut ChaCha8Rng) -> Option<(u32, f64)> {
    if rates.lambda <= 0.0 {
        return None;
    }
    let u: f64 = rng.gen();
    let dt = -(1.0 - u).ln() / rates.lambda;
    let v: f64 = rng.gen::<f64>() * rates.lambda;
    let k = rates.prefix.partition_point(|&p| p <= v).min(rates.neighbors.len() - 1);
    Some((rates.neighbors[k], dt))
}

/// Per-environment walk state: neighbor index plus lazily built and cached
/// site tables, shared by all trajectories in that environment.
pub struct WalkContext<'a> {
    pub env: &'a Environment,
    pub model: &'a RateModel,
    index: NeighborIndex,
    cache: HashMap<u32, SiteRates>,
    scratch: Vec<u32>,
    /// Distinct sites whose truncation certificate failed.
    pub uncertified_sites: u64,
}

impl<'a> WalkContext<'a> {
    pub fn new(env: &'a Environment, model: &'a RateModel) -> Result<Self> {
        let index = NeighborIndex::build(env.pts.geom, env.pts.positions(), model.reach())?;
        Ok(WalkContext {
            env,
            model,
            index,
            cache: HashMap::new(),
            scratch: Vec::new(),
            uncertified_sites: 0,
        })
    }

    pub fn rates(&mut self, site: u32) -> &SiteRates {
        if !self.cache.contains_key(&site) {
            if self.cache.len() >= RATE_CACHE_CAP {
                self.cache.clear();
            }
            let built = self.build(site);
            if !built.certified {
                self.uncertified_sites += 1;
            }
            self.cache.insert(site, built);
        }
        &self.cache[&site]
    }

    fn build(&mut self, site: u32) -> SiteRates {
        let pts = &self.env.pts;
        let x = pts.position(site as usize);
        let ex = pts.energy(site as usize);
        self.index.query(pts.positions(), x, self.model.reach(), &mut self.scratch);
        let mut neighbors = Vec::new();
        let mut prefix = Vec::new();
        let mut acc = 0.0;
        for &j in &self.scratch {
            if j == site {
                continue;
            }
            let dist = pts.geom.distance(x, pts.position(j as usize));
            let r = self.model.law.rate(dist, ex, pts.energy(j as usize));
            if r > 0.0 {
                acc += r;
                neighbors.push(j);
                prefix.push(acc);
            }
        }
        let tail = self.model.tail_bound(pts.geom.d, pts.intensity(), ex);
        let certified = tail <= self.model.tail_tolerance * acc;
        SiteRates { neighbors, prefix, lambda: acc, tail_bound: tail, certified }
    }
}

/// Summary flags of one walk run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WalkOutcome {
    /// Simulated time reached: `t_max`, or earlier if the jump budget ran out.
    pub t_end: f64,
    pub n_jumps: u64,
    /// Jump budget exhausted before the horizon.
    pub truncated: bool,
    /// The starting site had zero escape rate; the walker never moved.
    pub frozen: bool,
}

/// Runs one trajectory, invoking `on_jump(t, dx)` after each jump with the
/// jump time and minimal-image displacement vector.
pub fn run_walk(
    ctx: &mut WalkContext,
    t_max: f64,
    jump_budget: u64,
    rng: &mut ChaCha8Rng,
    mut on_jump: impl FnMut(f64, &[f64]),
) -> WalkOutcome {
    let d = ctx.env.pts.geom.d;
    let mut dx = vec![0.0; d];
    let mut site = ctx.env.origin as u32;
    let mut t = 0.0;
    let mut n_jumps = 0u64;
    loop {
        let (target, dt) = match embedded_jump(ctx.rates(site), rng) {
            Some(j) => j,
            None => {
                return WalkOutcome { t_end: t_max, n_jumps, truncated: false, frozen: n_jumps == 0 }
            }
        };
        if t + dt >= t_max {
            return WalkOutcome { t_end: t_max, n_jumps, truncated: false, frozen: false };
        }
        t += dt;
        let pts = &ctx.env.pts;
        pts.geom.displacement(pts.position(site as usize), pts.position(target as usize), &mut dx);
        on_jump(t, &dx);
        site = target;
        n_jumps += 1;
        if n_jumps >= jump_budget {
            return WalkOutcome { t_end: t, n_jumps, truncated: true, frozen: false };
        }
    }
}

/// Full event log of one walk: jump times and cumulative displacements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub d: usize,
    /// Strictly increasing jump times.
    pub times: Vec<f64>,
    /// Cumulative displacement after jump i (flattened, stride d).
    pub cumulative: Vec<f64>,
    pub outcome: WalkOutcome,
}

impl Trajectory {
    /// Displacement from the origin at time `t` (piecewise constant,
    /// right-continuous).
    pub fn displacement_at(&self, t: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            vec![0.0; self.d]
        } else {
            self.cumulative[(k - 1) * self.d..k * self.d].to_vec()
        }
    }

    /// (X_t . a)^2 along coordinate `axis`.
    pub fn msd_at(&self, t: f64, axis: usize) -> f64 {
        let x = self.displacement_at(t)[axis];
        x * x
    }
}

/// Simulates one trajectory and keeps the whole event log.
pub fn simulate_walk(
    env: &Environment,
    model: &RateModel,
    t_max: f64,
    jump_budget: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {t_max}")));
    }
    let mut ctx = WalkContext::new(env, model)?;
    let d = env.pts.geom.d;
    let mut times = Vec::new();
    let mut cumulative = Vec::new();
    let mut x = vec![0.0; d];
    let outcome = run_walk(&mut ctx, t_max, jump_budget, rng, |t, dx| {
        for k in 0..d {
            x[k] += dx[k];
        }
        times.push(t);
        cumulative.extend_from_slice(&x);
    });
    Ok(Trajectory { d, times, cumulative, outcome })
}

/// Configuration of the mean-square-displacement estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsdConfig {
    pub axis: usize,
    /// Final horizon; checkpoints sit at t_max / 2^k.
    pub t_max: f64,
    /// Number of dyadic checkpoints (>= 3 for plateau detection).
    pub n_checkpoints: usize,
    pub n_traj_per_env: usize,
    pub jump_budget: u64,
}

impl MsdConfig {
    fn validate(&self, d: usize) -> Result<()> {
        if self.axis >= d {
            return Err(Error::invalid(format!("axis {} out of range for d={d}", self.axis)));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::invalid("t_max must be positive"));
        }
        if self.n_checkpoints < 3 {
            return Err(Error::invalid("need at least 3 checkpoints for plateau detection"));
        }
        if self.n_traj_per_env == 0 {
            return Err(Error::invalid("need at least one trajectory per environment"));
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (0..self.n_checkpoints)
            .map(|k| self.t_max / f64::powi(2.0, (self.n_checkpoints - 1 - k) as i32))
            .collect()
    }
}

/// Diffusivity estimate from the MSD of many walks over many environments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub axis: usize,
    pub t_grid: Vec<f64>,
    /// E[(X_t . a)^2] at each checkpoint.
    pub msd: Vec<f64>,
    pub msd_se: Vec<f64>,
    /// msd / t at the final checkpoint.
    pub d_hat: f64,
    pub d_se: f64,
    /// 95% bootstrap interval over environments for d_hat.
    pub ci95: (f64, f64),
    /// Last three checkpoint estimates of msd/t agree pairwise within two
    /// combined standard errors.
    pub converged: bool,
    pub n_envs: usize,
    pub n_traj_per_env: usize,
    /// Trajectories dropped because the jump budget ran out.
    pub n_truncated: u64,
    /// Trajectories whose starting site had no exit.
    pub n_frozen: u64,
    /// Distinct sites with a failed truncation certificate, summed over
    /// environments.
    pub n_uncertified_sites: u64,
}

struct EnvMsd {
    /// Per-checkpoint mean of (X_t . a)^2 over this environment's valid
    /// trajectories.
    means: Vec<f64>,
    n_valid: usize,
    n_truncated: u64,
    n_frozen: u64,
    n_uncertified: u64,
}

fn env_msd(
    env: &Environment,
    model: &RateModel,
    cfg: &MsdConfig,
    grid: &[f64],
    seed: u64,
    env_tag: u64,
) -> Result<EnvMsd> {
    let mut ctx = WalkContext::new(env, model)?;
    let axis = cfg.axis;
    let mut sums = vec![0.0; grid.len()];
    let mut n_valid = 0usize;
    let mut n_truncated = 0u64;
    let mut n_frozen = 0u64;
    for j in 0..cfg.n_traj_per_env {
        let mut rng = stream(seed, &[purpose::WALK, env_tag, j as u64]);
        let mut x_axis = 0.0f64;
        let mut cursor = 0usize;
        let mut snapshots = vec![0.0; grid.len()];
        let outcome = run_walk(&mut ctx, cfg.t_max, cfg.jump_budget, &mut rng, |t, dx| {
            while cursor < grid.len() && grid[cursor] < t {
                snapshots[cursor] = x_axis;
                cursor += 1;
            }
            x_axis += dx[axis];
        });
        if outcome.truncated {
            n_truncated += 1;
            continue;
        }
        while cursor < grid.len() {
            snapshots[cursor] = x_axis;
            cursor += 1;
        }
        if outcome.frozen {
            n_frozen += 1;
        }
        n_valid += 1;
        for (s, snap) in sums.iter_mut().zip(&snapshots) {
            *s += snap * snap;
        }
    }
    let means = if n_valid > 0 {
        sums.iter().map(|s| s / n_valid as f64).collect()
    } else {
        vec![f64::NAN; grid.len()]
    };
    Ok(EnvMsd { means, n_valid, n_truncated, n_frozen, n_uncertified: ctx.uncertified_sites })
}

/// Estimates the diffusion matrix entry (a . D a) from the long-time MSD
/// per unit time, averaged over Palm environments.
///
/// Statistics: per-environment trajectory means are treated as iid samples;
/// standard errors and the bootstrap interval are taken across
/// environments. Trajectories that exhaust the jump budget are excluded
/// and counted, never silently dropped.
pub fn diffusion_estimate(
    envs: &[Environment],
    model: &RateModel,
    cfg: &MsdConfig,
    seed: u64,
) -> Result<DiffusionEstimate> {
    if envs.is_empty() {
        return Err(Error::invalid("diffusion estimate needs at least one environment"));
    }
    cfg.validate(envs[0].pts.geom.d)?;
    let grid = cfg.t_grid();
    let per_env: Vec<EnvMsd> = envs
        .par_iter()
        .enumerate()
        .map(|(e, env)| env_msd(env, model, cfg, &grid, seed, e as u64))
        .collect::<Result<Vec<_>>>()?;
    let n_truncated: u64 = per_env.iter().map(|e| e.n_truncated).sum();
    let n_frozen: u64 = per_env.iter().map(|e| e.n_frozen).sum();
    let n_uncertified: u64 = per_env.iter().map(|e| e.n_uncertified).sum();
    let usable: Vec<&EnvMsd> = per_env.iter().filter(|e| e.n_valid > 0).collect();
    if usable.len() < 2 {
        return Err(Error::invalid(format!(
            "only {} environments produced complete trajectories; need >= 2",
            usable.len()
        )));
    }
    let mut msd = Vec::with_capacity(grid.len());
    let mut msd_se = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let vals: Vec<f64> = usable.iter().map(|e| e.means[k]).collect();
        let (m, se) = mean_se(&vals);
        msd.push(m);
        msd_se.push(se);
    }
    let last = grid.len() - 1;
    let d_hat = msd[last] / grid[last];
    let d_se = msd_se[last] / grid[last];
    let mut converged = true;
    for i in grid.len() - 3..grid.len() {
        for j in i + 1..grid.len() {
            let di = msd[i] / grid[i];
            let dj = msd[j] / grid[j];
            let se = ((msd_se[i] / grid[i]).powi(2) + (msd_se[j] / grid[j]).powi(2)).sqrt();
            if (di - dj).abs() > 2.0 * se {
                converged = false;
            }
        }
    }
    let finals: Vec<f64> = usable.iter().map(|e| e.means[last] / grid[last]).collect();
    let mut boot_rng = stream(seed, &[purpose::BOOTSTRAP]);
    let ci95 = bootstrap_mean_ci(&finals, 1000, 0.95, &mut boot_rng);
    Ok(DiffusionEstimate {
        axis: cfg.axis,
        t_grid: grid,
        msd,
        msd_se,
        d_hat,
        d_se,
        ci95,
        converged,
        n_envs: usable.len(),
        n_traj_per_env: cfg.n_traj_per_env,
        n_truncated,
        n_frozen,
        n_uncertified_sites: n_uncertified,
    })
}

/// Palm means of the local drift and quadratic rate functionals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiPhiEstimate {
    pub axis: usize,
    /// Mean of sum_x c_{0,x} (x . a)^2: the zero-corrector upper bound for
    /// (a . D a).
    pub psi_mean: f64,
    pub psi_se: f64,
    /// Mean local drift sum_x c_{0,x} x; zero by symmetry.
    pub phi_mean: Vec<f64>,
    pub phi_se: Vec<f64>,
    pub n_envs: usize,
}

/// Estimates E[psi] and E[phi] at the origin over Palm environments.
pub fn psi_phi_estimate(
    envs: &[Environment],
    model: &RateModel,
    axis: usize,
) -> Result<PsiPhiEstimate> {
    if envs.len() < 2 {
        return Err(Error::invalid("psi/phi estimate needs at least two environments"));
    }
    let d = envs[0].pts.geom.d;
    if axis >= d {
        return Err(Error::invalid(format!("axis {axis} out of range for d={d}")));
    }
    let rows: Vec<(f64, Vec<f64>)> = envs
        .par_iter()
        .map(|env| -> Result<(f64, Vec<f64>)> {
            let mut ctx = WalkContext::new(env, model)?;
            let rates = ctx.rates(env.origin as u32).clone();
            let pts = &env.pts;
            let x0 = pts.position(env.origin).to_vec();
            let mut dx = vec![0.0; d];
            let mut psi = 0.0;
            let mut phi = vec![0.0; d];
            let mut prev = 0.0;
            for (i, &j) in rates.neighbors.iter().enumerate() {
                let r = rates.prefix[i] - prev;
                prev = rates.prefix[i];
                pts.geom.displacement(&x0, pts.position(j as usize), &mut dx);
                psi += r * dx[axis] * dx[axis];
                for k in 0..d {
                    phi[k] += r * dx[k];
                }
            }
            Ok((psi, phi))
        })
        .collect::<Result<Vec<_>>>()?;
    let (psi_mean, psi_se) = mean_se(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let mut phi_mean = vec![0.0; d];
    let mut phi_se = vec![0.0; d];
    for k in 0..d {
        let (m, s) = mean_se(&rows.iter().map(|r| r.1[k]).collect::<Vec<_>>());
        phi_mean[k] = m;
        phi_se[k] = s;
    }
    Ok(PsiPhiEstimate { axis, psi_mean, psi_se, phi_mean, phi_se, n_envs: envs.len() })
}

/// The zero-corrector variational upper bound for (a . D a): E[psi] with no
/// corrector term, returned as (bound, standard error).
pub fn variational_upper_bound(
    envs: &[Environment],
    model: &RateModel,
    axis: usize,
) -> Result<(f64, f64)> {
    let est = psi_phi_estimate(envs, model, axis)?;
    Ok((est.psi_mean, est.psi_se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxGeometry;
    use crate::point_process::{
        palm_condition, randomize, sample_perturbed_lattice, sample_ppp, EnergyLaw,
        MarkedPointSet, PalmMode,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_point_env(y: [f64; 2], e0: f64, e1: f64) -> Environment {
        let geom = BoxGeometry::new(2, 100.0, false).unwrap();
        let pts =
            MarkedPointSet::new(geom, vec![0.0, 0.0, y[0], y[1]], vec![e0, e1]).unwrap();
        Environment { pts, origin: 0 }
    }

    #[test]
    fn rate_matches_formula_and_kills_self_jumps() {
        let r = hop_rate(1.5, 0.2, -0.3, 2.0);
        assert_relative_eq!(r, (-1.5f64 - 2.0 * (0.5 + 0.2 + 0.3)).exp(), epsilon = 1e-15);
        assert_eq!(hop_rate(0.0, 0.2, 0.3, 1.0), 0.0);
        // beta = 0 leaves the pure distance kernel.
        assert_relative_eq!(hop_rate(2.0, 0.9, -0.9, 0.0), (-2.0f64).exp());
    }

    proptest! {
        #[test]
        fn rate_is_symmetric_and_beta_monotone(
            dist in 1e-3..20.0f64,
            ex in -1.0..1.0f64,
            ey in -1.0..1.0f64,
            b1 in 0.0..10.0f64,
            b2 in 0.0..10.0f64,
        ) {
            prop_assert_eq!(hop_rate(dist, ex, ey, b1), hop_rate(dist, ey, ex, b1));
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(hop_rate(dist, ex, ey, hi) <= hop_rate(dist, ex, ey, lo));
            prop_assert!(hop_rate(dist, ex, ey, lo) <= 1.0);
        }

        #[test]
        fn full_rate_dominates_scaled_cutoff_rate(
            dist in 1e-3..12.0f64,
            ex in -1.0..1.0f64,
            ey in -1.0..1.0f64,
            beta in 0.0..8.0f64,
            r_c in 0.1..12.0f64,
            e_c in 0.05..1.0f64,
        ) {
            let full = hop_rate(dist, ex, ey, beta);
            let cut = RateLaw::Cutoff { r_c, e_c }.rate(dist, ex, ey);
            let floor = (-r_c - 4.0 * beta * e_c).exp();
            prop_assert!(full >= floor * cut * (1.0 - 1e-12));
        }
    }

    #[test]
    fn two_point_msd_matches_closed_form() {
        // Two sites {0, y} with symmetric jump rate r: the occupancy of y
        // solves p' = r(1 - 2p), so E[(X_t . a)^2] = (y . a)^2 (1 - e^{-2rt})/2.
        let y = [1.5, 0.0];
        let (e0, e1) = (0.2, -0.3);
        let beta = 1.0;
        let env = two_point_env(y, e0, e1);
        let r = hop_rate(1.5, e0, e1, beta);
        let model = RateModel::new(RateLaw::Boltzmann { beta }, 10.0, 0.5).unwrap();
        for (case, &t) in [0.3 / r, 1.0 / r].iter().enumerate() {
            let mut m = crate::stats::Moments::default();
            for i in 0..4000u64 {
                let mut rng = stream(77, &[purpose::WALK, case as u64, i]);
                let traj = simulate_walk(&env, &model, t, 1_000_000, &mut rng).unwrap();
                m.push(traj.msd_at(t, 0));
            }
            let expect = y[0] * y[0] * (1.0 - (-2.0 * r * t).exp()) / 2.0;
            assert!(
                (m.mean() - expect).abs() < 4.0 * m.se(),
                "t={t}: got {} +- {}, want {expect}",
                m.mean(),
                m.se()
            );
        }
    }

    #[test]
    fn embedded_chain_satisfies_detailed_balance() {
        // Three points on a line; lambda_x p(y|x) = c_{x,y} = c_{y,x} =
        // lambda_y p(x|y) holds exactly at the table level.
        let geom = BoxGeometry::new(2, 50.0, false).unwrap();
        let pts = MarkedPointSet::new(
            geom,
            vec![0.0, 0.0, 1.0, 0.0, 2.5, 0.0],
            vec![0.1, -0.4, 0.7],
        )
        .unwrap();
        let env = Environment { pts, origin: 0 };
        let model = RateModel::new(RateLaw::Boltzmann { beta: 1.3 }, 20.0, 1.0).unwrap();
        let mut ctx = WalkContext::new(&env, &model).unwrap();
        for a in 0..3u32 {
            for b in 0..3u32 {
                if a == b {
                    continue;
                }
                let ra = ctx.rates(a).rate_to(b);
                let rb = ctx.rates(b).rate_to(a);
                assert_relative_eq!(ra, rb, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn embedded_jump_frequencies_match_rate_ratios() {
        let geom = BoxGeometry::new(2, 50.0, false).unwrap();
        let pts = MarkedPointSet::new(
            geom,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0],
            vec![0.0, 0.3, -0.6],
        )
        .unwrap();
        let env = Environment { pts, origin: 0 };
        let model = RateModel::new(RateLaw::Boltzmann { beta: 0.8 }, 20.0, 1.0).unwrap();
        let mut ctx = WalkContext::new(&env, &model).unwrap();
        let rates = ctx.rates(0).clone();
        let mut rng = stream(31, &[purpose::WALK]);
        let n = 100_000;
        let mut hits = HashMap::new();
        for _ in 0..n {
            let (target, _) = embedded_jump(&rates, &mut rng).unwrap();
            *hits.entry(target).or_insert(0u32) += 1;
        }
        for (i, &nb) in rates.neighbors.iter().enumerate() {
            let p = rates.rate_to(nb) / rates.lambda;
            let freq = *hits.get(&nb).unwrap_or(&0) as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 5.0 * se, "neighbor {i}: {freq} vs {p}");
        }
    }

    #[test]
    fn small_time_single_jump_probability_recovers_lambda() {
        // Symmetric two-point environment: jump times form a Poisson
        // process of rate lambda, so P(exactly one jump by h) = lambda h
        // e^{-lambda h} and P/h -> lambda as h -> 0.
        let env = two_point_env([2.0, 0.0], 0.1, 0.1);
        let beta = 1.0;
        let lambda = hop_rate(2.0, 0.1, 0.1, beta);
        let model = RateModel::new(RateLaw::Boltzmann { beta }, 10.0, 1.0).unwrap();
        for (case, &h) in [0.5 / lambda, 0.1 / lambda].iter().enumerate() {
            let n = 40_000;
            let mut ones = 0u32;
            for i in 0..n {
                let mut rng = stream(32, &[purpose::WALK, case as u64, i as u64]);
                let traj = simulate_walk(&env, &model, h, 1000, &mut rng).unwrap();
                if traj.outcome.n_jumps == 1 {
                    ones += 1;
                }
            }
            let p_hat = ones as f64 / n as f64;
            let p = lambda * h * (-lambda * h).exp();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((p_hat - p).abs() < 4.0 * se, "h={h}: {p_hat} vs {p}");
        }
        // The analytic curve itself converges to lambda.
        let h_small = 1e-4 / lambda;
        assert_relative_eq!(
            lambda * h_small * (-lambda * h_small).exp() / h_small,
            lambda,
            max_relative = 1e-3
        );
    }

    #[test]
    fn isolated_origin_freezes() {
        let geom = BoxGeometry::new(2, 100.0, false).unwrap();
        let pts = MarkedPointSet::new(geom, vec![0.0, 0.0, 40.0, 40.0], vec![0.0, 0.0]).unwrap();
        let env = Environment { pts, origin: 0 };
        let model = RateModel::new(RateLaw::Cutoff { r_c: 2.0, e_c: 1.0 }, 2.0, 1.0).unwrap();
        let mut rng = stream(33, &[]);
        let traj = simulate_walk(&env, &model, 10.0, 100, &mut rng).unwrap();
        assert!(traj.outcome.frozen);
        assert_eq!(traj.outcome.n_jumps, 0);
        assert_eq!(traj.displacement_at(10.0), vec![0.0, 0.0]);
    }

    #[test]
    fn jump_budget_truncates_and_is_reported() {
        let env = two_point_env([1.0, 0.0], 0.0, 0.0);
        let model = RateModel::new(RateLaw::Cutoff { r_c: 2.0, e_c: 1.0 }, 2.0, 1.0).unwrap();
        let mut rng = stream(34, &[]);
        let traj = simulate_walk(&env, &model, 1e9, 50, &mut rng).unwrap();
        assert!(traj.outcome.truncated);
        assert_eq!(traj.outcome.n_jumps, 50);
        assert!(traj.outcome.t_end < 1e9);
    }

    #[test]
    fn lattice_diffusivity_is_two_per_axis() {
        // Unit-rate nearest-neighbor walk on Z^2: each axis jumps +-1 at
        // rate 1 each way, so E[(X_t^{(1)})^2] = 2t exactly.
        let geom = BoxGeometry::new(2, 32.0, true).unwrap();
        let envs: Vec<Environment> = (0..4)
            .map(|i| {
                let mut rng = stream(35, &[purpose::PALM, i]);
                let pts = sample_perturbed_lattice(geom, &mut rng).unwrap();
                palm_condition(&pts, EnergyLaw::PointMass, PalmMode::Recenter, &mut rng).unwrap()
            })
            .collect();
        let model = RateModel::new(RateLaw::Cutoff { r_c: 1.0, e_c: 1.0 }, 1.0, 1.0).unwrap();
        let cfg = MsdConfig {
            axis: 0,
            t_max: 40.0,
            n_checkpoints: 4,
            n_traj_per_env: 300,
            jump_budget: 1_000_000,
        };
        let est = diffusion_estimate(&envs, &model, &cfg, 36).unwrap();
        assert!(est.converged);
        assert!(
            (est.d_hat - 2.0).abs() < 4.0 * est.d_se.max(0.02),
            "d_hat {} +- {}",
            est.d_hat,
            est.d_se
        );
        assert_eq!(est.n_truncated, 0);
    }

    #[test]
    fn psi_on_lattice_is_exactly_two() {
        let geom = BoxGeometry::new(2, 16.0, true).unwrap();
        let envs: Vec<Environment> = (0..3)
            .map(|i| {
                let mut rng = stream(37, &[purpose::PALM, i]);
                let pts = sample_perturbed_lattice(geom, &mut rng).unwrap();
                palm_condition(&pts, EnergyLaw::PointMass, PalmMode::Recenter, &mut rng).unwrap()
            })
            .collect();
        let model = RateModel::new(RateLaw::Cutoff { r_c: 1.0, e_c: 1.0 }, 1.0, 1.0).unwrap();
        let est = psi_phi_estimate(&envs, &model, 0).unwrap();
        // Four unit-rate neighbors; the two along axis 0 contribute 1 each.
        assert_relative_eq!(est.psi_mean, 2.0, epsilon = 1e-12);
        assert_relative_eq!(est.psi_se, 0.0, epsilon = 1e-12);
        for k in 0..2 {
            assert_relative_eq!(est.phi_mean[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn truncation_certificate_flags_small_radius() {
        let geom = BoxGeometry::new(2, 64.0, true).unwrap();
        let mut rng = stream(38, &[purpose::POSITIONS]);
        let pts = sample_ppp(1.0, geom, &mut rng).unwrap();
        let marked = randomize(&pts, EnergyLaw::Power { alpha: 0.0 }, &mut rng).unwrap();
        let env =
            palm_condition(&marked, EnergyLaw::Power { alpha: 0.0 }, PalmMode::ExactPpp, &mut rng)
                .unwrap();
        // Generous radius: certificate passes at the origin.
        let wide = RateModel::new(RateLaw::Boltzmann { beta: 0.0 }, 25.0, 1e-6).unwrap();
        let mut ctx = WalkContext::new(&env, &wide).unwrap();
        assert!(ctx.rates(env.origin as u32).certified);
        // Tiny radius with a tight tolerance: certificate must fail.
        let narrow = RateModel::new(RateLaw::Boltzmann { beta: 0.0 }, 2.0, 1e-6).unwrap();
        let mut ctx = WalkContext::new(&env, &narrow).unwrap();
        assert!(!ctx.rates(env.origin as u32).certified);
        assert_eq!(ctx.uncertified_sites, 1);
    }

    #[test]
    fn walk_results_are_seed_reproducible() {
        let geom = BoxGeometry::new(2, 32.0, true).unwrap();
        let mut rng = stream(39, &[purpose::POSITIONS]);
        let pts = sample_ppp(1.0, geom, &mut rng).unwrap();
        let marked = randomize(&pts, EnergyLaw::Power { alpha: 0.0 }, &mut rng).unwrap();
        let env =
            palm_condition(&marked, EnergyLaw::Power { alpha: 0.0 }, PalmMode::ExactPpp, &mut rng)
                .unwrap();
        let model = RateModel::new(RateLaw::Boltzmann { beta: 1.0 }, 12.0, 0.1).unwrap();
        let t1 = simulate_walk(&env, &model, 50.0, 100_000, &mut stream(40, &[1])).unwrap();
        let t2 = simulate_walk(&env, &model, 50.0, 100_000, &mut stream(40, &[1])).unwrap();
        assert_eq!(t1.times, t2.times);
        assert_eq!(t1.cumulative, t2.cumulative);
    }
}
