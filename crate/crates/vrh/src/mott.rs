//! The temperature sweep: stretched-exponential decay of the diffusivity.
//!
//! For power-law mark densities the diffusivity admits a lower bound of
//! the form exp(-C beta^{(1+alpha)/(1+alpha+d)}) at large inverse
//! temperature beta. The sweep couples three estimators per beta: the
//! kinetic Monte Carlo diffusivity on Palm environments, the periodized
//! resistor network on energy-thinned samples at the matching cutoff
//! scales, and the analytic chain linking the two. Weighted fits of
//! ln D against beta^{(1+alpha)/(1+alpha+d)} and against beta itself
//! discriminate the stretched law from simple Arrhenius decay.

use crate::geometry::BoxGeometry;
use crate::hopping_walk::{diffusion_estimate, DiffusionEstimate, MsdConfig, RateLaw, RateModel};
use crate::point_process::{
    palm_condition, randomize, sample_ppp, thin_by_energy, EnergyLaw, Environment, PalmMode,
};
use crate::resistor_network::{network_diffusion_estimate, NetworkEstimate, SolveOptions};
use crate::rng::{self, purpose};
use crate::stats::{weighted_line_fit, LineFit};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Exponent (1 + alpha) / (1 + alpha + d) governing the stretched decay.
pub fn mott_exponent(d: usize, alpha: f64) -> f64 {
    (alpha + 1.0) / (alpha + 1.0 + d as f64)
}

/// Cutoff scales tied to one inverse temperature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub beta: f64,
    /// Energy cutoff min(1, c' beta^{-d/(alpha+1+d)}).
    pub e_c: f64,
    /// Hop cutoff c e_c^{-(alpha+1)/d}.
    pub r_c: f64,
    /// Mark mass of the energy window.
    pub delta_c: f64,
    /// Fit abscissa beta^{(alpha+1)/(alpha+1+d)}.
    pub mott_x: f64,
}

/// Builds the cutoff schedule for a grid of inverse temperatures. The two
/// scales balance the window mass against the hop range so that the
/// thinned network keeps a temperature-independent mean degree.
pub fn make_schedule(
    d: usize,
    alpha: f64,
    c_prime: f64,
    c_scale: f64,
    beta_grid: &[f64],
) -> Result<Vec<ScheduleRow>> {
    if d < 2 {
        return Err(Error::invalid("dimension must be >= 2"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("mark exponent must be >= 0, got {alpha}")));
    }
    if !(c_prime > 0.0) || !(c_scale > 0.0) {
        return Err(Error::invalid("schedule constants must be positive"));
    }
    if beta_grid.is_empty() || beta_grid.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::invalid("inverse temperatures must be positive"));
    }
    let dd = d as f64;
    let law = EnergyLaw::Power { alpha };
    let ex = mott_exponent(d, alpha);
    beta_grid
        .iter()
        .map(|&beta| {
            let e_c = (c_prime * beta.powf(-dd / (alpha + 1.0 + dd))).min(1.0);
            let r_c = c_scale * e_c.powf(-(alpha + 1.0) / dd);
            let delta_c = law.window_mass(e_c);
            Ok(ScheduleRow { beta, e_c, r_c, delta_c, mott_x: beta.powf(ex) })
        })
        .collect()
}

/// The full lower-bound chain: window mass times the rate floor
/// exp(-r_c - 4 beta e_c) inside the cutoff window, times the network
/// diffusivity of the thinned configuration.
pub fn lower_bound_chain(row: &ScheduleRow, network_d: f64) -> f64 {
    row.delta_c * (-row.r_c - 4.0 * row.beta * row.e_c).exp() * network_d
}

/// Everything the sweep needs. `beta_grid` and `t_max_grid` run in
/// parallel; walk horizons must grow with beta because jump rates collapse
/// like exp(-4 beta |E|).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MottConfig {
    pub d: usize,
    pub alpha: f64,
    /// Point intensity.
    pub rho: f64,
    /// Energy-cutoff constant c'.
    pub c_prime: f64,
    /// Hop-cutoff constant c.
    pub c_scale: f64,
    pub beta_grid: Vec<f64>,
    pub t_max_grid: Vec<f64>,
    pub n_envs: usize,
    pub n_traj_per_env: usize,
    pub n_checkpoints: usize,
    pub jump_budget: u64,
    /// Neighborhood truncation radius for the walk.
    pub r_max: f64,
    /// Relative tail tolerance certifying the truncation.
    pub tail_tolerance: f64,
    /// Torus side for walk environments; at least 6 r_max so trajectories
    /// cannot feel their own periodic images.
    pub env_box_side: f64,
    pub network_n_grid: Vec<usize>,
    pub network_samples: usize,
    pub axis: usize,
    pub seed: u64,
}

impl MottConfig {
    pub fn validate(&self) -> Result<()> {
        make_schedule(self.d, self.alpha, self.c_prime, self.c_scale, &self.beta_grid)?;
        if self.t_max_grid.len() != self.beta_grid.len() {
            return Err(Error::config(format!(
                "t_max_grid has {} entries for {} inverse temperatures",
                self.t_max_grid.len(),
                self.beta_grid.len()
            )));
        }
        if self.t_max_grid.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::config("walk horizons must be positive"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::config("intensity must be positive"));
        }
        if self.n_envs < 2 || self.n_traj_per_env == 0 {
            return Err(Error::config("need >= 2 environments and >= 1 trajectory each"));
        }
        if self.env_box_side < 6.0 * self.r_max {
            return Err(Error::config(format!(
                "environment box side {} is below 6 r_max = {}",
                self.env_box_side,
                6.0 * self.r_max
            )));
        }
        if self.network_n_grid.is_empty() || self.network_samples == 0 {
            return Err(Error::config("network stage needs box sizes and samples"));
        }
        if self.axis >= self.d {
            return Err(Error::config(format!("axis {} out of range for d = {}", self.axis, self.d)));
        }
        Ok(())
    }

    /// A modest default sweep in two dimensions with uniform marks.
    pub fn default_2d(beta_grid: Vec<f64>, seed: u64) -> MottConfig {
        let t_max_grid = beta_grid.iter().map(|&b| 60.0 * b * b).collect();
        MottConfig {
            d: 2,
            alpha: 0.0,
            rho: 1.0,
            c_prime: 1.0,
            c_scale: 1.5,
            beta_grid,
            t_max_grid,
            n_envs: 48,
            n_traj_per_env: 4,
            n_checkpoints: 8,
            jump_budget: 2_000_000,
            // Relative tail 2 beta (1 + r) e^{-r} stays below 1e-6 up to
            // beta = 80 at this radius.
            r_max: 24.0,
            tail_tolerance: 1e-6,
            env_box_side: 144.0,
            network_n_grid: vec![8, 16, 32],
            network_samples: 8,
            axis: 0,
            seed,
        }
    }
}

/// One inverse temperature: both estimators plus the chain that links
/// them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MottRow {
    pub schedule: ScheduleRow,
    pub t_max: f64,
    pub d_hat: f64,
    pub d_se: f64,
    pub kmc: DiffusionEstimate,
    pub network_d: f64,
    pub network_se: f64,
    pub network: NetworkEstimate,
    pub chain_bound: f64,
}

/// Sweep output: per-beta rows plus the two competing decay fits on
/// ln D.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MottResult {
    pub rows: Vec<MottRow>,
    pub mott_exponent: f64,
    /// Weighted fit of ln D against beta^{(alpha+1)/(alpha+1+d)}.
    pub fit_mott: LineFit,
    /// Weighted fit of ln D against beta.
    pub fit_arrhenius: LineFit,
}

impl MottResult {
    /// R^2 advantage of the stretched-exponential abscissa over plain
    /// Arrhenius.
    pub fn r2_advantage(&self) -> f64 {
        self.fit_mott.r_squared - self.fit_arrhenius.r_squared
    }
}

/// Palm environments for the walk stage: Poisson samples on a torus with
/// power-law marks and a freshly marked point pinned at the origin.
pub fn sample_walk_environments(cfg: &MottConfig, beta_index: usize) -> Result<Vec<Environment>> {
    let law = EnergyLaw::Power { alpha: cfg.alpha };
    let geom = BoxGeometry::new(cfg.d, cfg.env_box_side, true)?;
    (0..cfg.n_envs)
        .map(|e| {
            let tags = [purpose::POSITIONS, beta_index as u64, e as u64];
            let mut rng = rng::stream(cfg.seed, &tags);
            let pts = sample_ppp(cfg.rho, geom.clone(), &mut rng)?;
            let mut rng = rng::stream(cfg.seed, &[purpose::MARKS, beta_index as u64, e as u64]);
            let pts = randomize(&pts, law, &mut rng)?;
            let mut rng = rng::stream(cfg.seed, &[purpose::PALM, beta_index as u64, e as u64]);
            palm_condition(&pts, law, PalmMode::ExactPpp, &mut rng)
        })
        .collect()
}

/// Runs the sweep, invoking `on_row` after each inverse temperature
/// completes.
pub fn run_mott_with(cfg: &MottConfig, mut on_row: impl FnMut(&MottRow)) -> Result<MottResult> {
    cfg.validate()?;
    let schedule = make_schedule(cfg.d, cfg.alpha, cfg.c_prime, cfg.c_scale, &cfg.beta_grid)?;
    let law = EnergyLaw::Power { alpha: cfg.alpha };
    let mut rows = Vec::with_capacity(schedule.len());
    for (i, sched) in schedule.iter().enumerate() {
        let envs = sample_walk_environments(cfg, i)?;
        let model = RateModel::new(
            RateLaw::Boltzmann { beta: sched.beta },
            cfg.r_max,
            cfg.tail_tolerance,
        )?;
        let msd_cfg = MsdConfig {
            axis: cfg.axis,
            t_max: cfg.t_max_grid[i],
            n_checkpoints: cfg.n_checkpoints,
            n_traj_per_env: cfg.n_traj_per_env,
            jump_budget: cfg.jump_budget,
        };
        let kmc = diffusion_estimate(&envs, &model, &msd_cfg, rng::derive_seed(cfg.seed, &[purpose::WALK, i as u64]))?;
        drop(envs);

        // Thinned hard-box samples for the network stage. The boxes are
        // sized by the largest N; the builder restricts to (-N, N)^d.
        let e_c = sched.e_c;
        let sampler = |s: u64, n: usize| {
            let geom = BoxGeometry::new(cfg.d, 2.0 * n as f64, false)?;
            let mut rng = rng::stream(cfg.seed, &[purpose::NETWORK, i as u64, s, n as u64]);
            let pts = sample_ppp(cfg.rho, geom, &mut rng)?;
            let mut rng =
                rng::stream(cfg.seed, &[purpose::NETWORK + 16, i as u64, s, n as u64]);
            let pts = randomize(&pts, law, &mut rng)?;
            thin_by_energy(&pts, e_c)
        };
        let network = network_diffusion_estimate(
            sampler,
            &cfg.network_n_grid,
            sched.r_c,
            cfg.network_samples,
            &SolveOptions::default(),
        )?;
        let row = MottRow {
            schedule: *sched,
            t_max: cfg.t_max_grid[i],
            d_hat: kmc.d_hat,
            d_se: kmc.d_se,
            network_d: network.d_final,
            network_se: network.d_se_final,
            chain_bound: lower_bound_chain(sched, network.d_final),
            kmc,
            network,
        };
        on_row(&row);
        rows.push(row);
    }

    let mut xs_mott = Vec::with_capacity(rows.len());
    let mut xs_beta = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    let mut ws = Vec::with_capacity(rows.len());
    for row in &rows {
        if !(row.d_hat > 0.0) {
            return Err(Error::config(format!(
                "nonpositive diffusivity estimate {} at beta = {}; increase the budget",
                row.d_hat, row.schedule.beta
            )));
        }
        xs_mott.push(row.schedule.mott_x);
        xs_beta.push(row.schedule.beta);
        ys.push(row.d_hat.ln());
        // Delta method: se(ln D) = se(D) / D.
        let se_ln = (row.d_se / row.d_hat).max(1e-12);
        ws.push(1.0 / (se_ln * se_ln));
    }
    let fit_mott = weighted_line_fit(&xs_mott, &ys, &ws)
        .ok_or_else(|| Error::config("need >= 3 distinct inverse temperatures for the fits"))?;
    let fit_arrhenius = weighted_line_fit(&xs_beta, &ys, &ws)
        .ok_or_else(|| Error::config("need >= 3 distinct inverse temperatures for the fits"))?;
    Ok(MottResult {
        rows,
        mott_exponent: mott_exponent(cfg.d, cfg.alpha),
        fit_mott,
        fit_arrhenius,
    })
}

/// Runs the sweep silently.
pub fn run_mott(cfg: &MottConfig) -> Result<MottResult> {
    run_mott_with(cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponent_is_one_third_for_uniform_marks_in_the_plane() {
        assert_relative_eq!(mott_exponent(2, 0.0), 1.0 / 3.0);
        assert_relative_eq!(mott_exponent(3, 1.0), 2.0 / 5.0);
    }

    #[test]
    fn schedule_satisfies_the_scale_identities() {
        let d = 2;
        let alpha = 0.5;
        let (c_prime, c_scale) = (0.8, 1.3);
        let rows = make_schedule(d, alpha, c_prime, c_scale, &[5.0, 20.0, 80.0]).unwrap();
        let dd = d as f64;
        for row in &rows {
            assert!(row.e_c <= 1.0);
            if row.e_c < 1.0 {
                // Unclamped: e_c^{(alpha+1+d)/d} * beta is constant.
                assert_relative_eq!(
                    row.e_c.powf((alpha + 1.0 + dd) / dd) * row.beta,
                    c_prime.powf((alpha + 1.0 + dd) / dd),
                    max_relative = 1e-10
                );
            }
            // Hop scale keeps r_c^d * window mass constant.
            assert_relative_eq!(
                row.r_c.powf(dd) * row.delta_c,
                c_scale.powf(dd),
                max_relative = 1e-10
            );
            assert_relative_eq!(row.delta_c, row.e_c.powf(1.0 + alpha), max_relative = 1e-12);
        }
        assert!(rows.windows(2).all(|w| w[0].e_c > w[1].e_c));
    }

    #[test]
    fn schedule_clamps_the_energy_cutoff_at_one() {
        let rows = make_schedule(2, 0.0, 1.0, 1.0, &[0.5, 1.0]).unwrap();
        assert_relative_eq!(rows[0].e_c, 1.0);
        assert_relative_eq!(rows[1].e_c, 1.0);
        assert_relative_eq!(rows[0].delta_c, 1.0);
    }

    #[test]
    fn chain_bound_multiplies_the_three_factors() {
        let row = ScheduleRow { beta: 10.0, e_c: 0.2, r_c: 2.0, delta_c: 0.5, mott_x: 0.0 };
        let expect = 0.5 * (-2.0f64 - 8.0).exp() * 3.0;
        assert_relative_eq!(lower_bound_chain(&row, 3.0), expect, max_relative = 1e-12);
    }

    #[test]
    fn config_validation_catches_geometry_and_grid_mismatches() {
        let mut cfg = MottConfig::default_2d(vec![2.0, 4.0, 8.0], 1);
        cfg.validate().unwrap();
        cfg.t_max_grid.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = MottConfig::default_2d(vec![2.0, 4.0, 8.0], 1);
        cfg.env_box_side = 5.0 * cfg.r_max;
        assert!(cfg.validate().is_err());
        let mut cfg = MottConfig::default_2d(vec![2.0, 4.0, 8.0], 1);
        cfg.axis = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_sweep_produces_rows_and_fits_deterministically() {
        let cfg = MottConfig {
            d: 2,
            alpha: 0.0,
            rho: 1.0,
            c_prime: 1.0,
            c_scale: 1.5,
            beta_grid: vec![1.0, 2.0, 3.0],
            t_max_grid: vec![30.0, 60.0, 120.0],
            n_envs: 4,
            n_traj_per_env: 2,
            n_checkpoints: 4,
            jump_budget: 500_000,
            r_max: 6.0,
            tail_tolerance: 1e-3,
            env_box_side: 36.0,
            network_n_grid: vec![3, 5],
            network_samples: 2,
            axis: 0,
            seed: 99,
        };
        let mut seen = 0;
        let res = run_mott_with(&cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        assert_eq!(res.rows.len(), 3);
        for row in &res.rows {
            assert!(row.d_hat > 0.0);
            assert!(row.chain_bound >= 0.0);
            assert!(row.chain_bound <= row.network_d);
        }
        assert_relative_eq!(res.mott_exponent, 1.0 / 3.0);
        // Bit-identical rerun.
        let res2 = run_mott(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&res).unwrap(),
            serde_json::to_string(&res2).unwrap()
        );
    }
}
