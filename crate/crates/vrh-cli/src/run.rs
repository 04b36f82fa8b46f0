//! Pipeline dispatch: each subcommand reads its config, runs the library,
//! writes artifacts atomically under `out_dir`, and returns a one-line
//! JSON summary plus any quality flags for `--strict`.

use std::path::Path;

use serde_json::{json, Value};

use vrh::geometry::BoxGeometry;
use vrh::hopping_walk::{diffusion_estimate, hop_rate, simulate_walk, MsdConfig, RateLaw, RateModel};
use vrh::io;
use vrh::mott::{make_schedule, run_mott_with, MottConfig};
use vrh::percolation::{
    choose_percolation_scales, coarse_grain, count_disjoint_lr_crossings,
    crossing_scaling_experiment, SiteField,
};
use vrh::point_process::{
    exchange_formula_test, palm_condition, randomize, sample_perturbed_lattice, sample_ppp,
    thin_by_energy, EnergyLaw, Environment, KernelG, MarkedPointSet, PalmMode,
};
use vrh::resistor_network::{
    build_periodized_graph, conductance, network_diffusion_estimate, BoundaryStyle, SolveOptions,
};
use vrh::rng::{self, purpose};

use crate::config::{Common, KvFile};

pub enum CliError {
    /// Bad flags, bad config file, or invalid parameter values: exit 2.
    Config(String),
    /// Failures while running: exit 1.
    Runtime(String),
}

impl From<vrh::error::Error> for CliError {
    fn from(e: vrh::error::Error) -> CliError {
        use vrh::error::Error::*;
        match e {
            InvalidParameter(_) | Config(_) | Parse { .. } => CliError::Config(e.to_string()),
            Io(_) | Json(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<String> for CliError {
    fn from(msg: String) -> CliError {
        CliError::Config(msg)
    }
}

pub struct Outcome {
    pub summary: Value,
    pub flags: Vec<String>,
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("out_dir: {e}")))
}

/// One marked Poisson environment with the origin pinned by exact Palm
/// conditioning, drawn from streams (tag, index).
fn palm_ppp_env(
    d: usize,
    side: f64,
    rho: f64,
    law: EnergyLaw,
    seed: u64,
    index: u64,
) -> Result<Environment, vrh::error::Error> {
    let geom = BoxGeometry::new(d, side, true)?;
    let mut r = rng::stream(seed, &[purpose::POSITIONS, index]);
    let pts = sample_ppp(rho, geom, &mut r)?;
    let mut r = rng::stream(seed, &[purpose::MARKS, index]);
    let pts = randomize(&pts, law, &mut r)?;
    let mut r = rng::stream(seed, &[purpose::PALM, index]);
    palm_condition(&pts, law, PalmMode::ExactPpp, &mut r)
}

/// Rebuilds the point set with the origin first so the on-disk order
/// carries the conditioning.
fn origin_first(env: &Environment) -> Result<MarkedPointSet, vrh::error::Error> {
    let pts = &env.pts;
    let d = pts.geom.d;
    let mut coords = Vec::with_capacity(pts.len() * d);
    let mut marks = Vec::with_capacity(pts.len());
    let order = std::iter::once(env.origin).chain((0..pts.len()).filter(|&i| i != env.origin));
    for i in order {
        coords.extend_from_slice(pts.position(i));
        marks.push(pts.energy(i));
    }
    MarkedPointSet::new(pts.geom, coords, marks)
}

pub fn gen_env(mut kv: KvFile) -> Result<Outcome, CliError> {
    let common = Common::extract(&mut kv)?;
    let box_side = kv.req_f64("box_side")?;
    let periodic = kv.opt_bool("periodic")?.unwrap_or(true);
    let n_envs = kv.opt_usize("n_envs")?.unwrap_or(1);
    let lattice = kv.opt_bool("lattice")?.unwrap_or(false);
    let palm = kv.opt_str("palm").unwrap_or_else(|| "exact".into());
    kv.finish()?;
    if n_envs == 0 {
        return Err(CliError::Config("key `n_envs`: need at least one environment".into()));
    }
    ensure_out_dir(&common.out_dir)?;

    let mut total_points = 0usize;
    for e in 0..n_envs as u64 {
        let geom = BoxGeometry::new(common.d, box_side, periodic)?;
        let mut r = rng::stream(common.seed, &[purpose::POSITIONS, e]);
        let pts = if lattice {
            sample_perturbed_lattice(geom, &mut r)?
        } else {
            sample_ppp(common.rho, geom, &mut r)?
        };
        let mut r = rng::stream(common.seed, &[purpose::MARKS, e]);
        let pts = randomize(&pts, common.law, &mut r)?;
        let mut r = rng::stream(common.seed, &[purpose::PALM, e]);
        let out = match palm.as_str() {
            "none" => pts,
            "exact" => {
                let env = palm_condition(&pts, common.law, PalmMode::ExactPpp, &mut r)?;
                origin_first(&env)?
            }
            "recenter" => {
                let env = palm_condition(&pts, common.law, PalmMode::Recenter, &mut r)?;
                origin_first(&env)?
            }
            other => {
                return Err(CliError::Config(format!(
                    "key `palm`: expected none, exact, or recenter, got {other:?}"
                )))
            }
        };
        total_points += out.len();
        io::write_points(&common.out_dir.join(format!("env_{e:03}.points")), &out)?;
    }
    Ok(Outcome {
        summary: json!({
            "cmd": "gen-env", "n_envs": n_envs, "total_points": total_points,
            "palm": palm, "seed": common.seed,
        }),
        flags: Vec::new(),
    })
}

pub fn walk(mut kv: KvFile) -> Result<Outcome, CliError> {
    let common = Common::extract(&mut kv)?;
    let beta = kv.req_f64("beta")?;
    let t_max = kv.req_f64("t_max")?;
    let r_max = kv.opt_f64("r_max")?.unwrap_or(20.0);
    let tail_tol = kv.opt_f64("tail_tol")?.unwrap_or(1e-6);
    let n_envs = kv.opt_usize("n_envs")?.unwrap_or(32);
    let n_traj = kv.opt_usize("n_traj")?.unwrap_or(4);
    let n_checkpoints = kv.opt_usize("n_checkpoints")?.unwrap_or(8);
    let jump_budget = kv.opt_u64("jump_budget")?.unwrap_or(2_000_000);
    let box_side = kv.opt_f64("box_side")?.unwrap_or(6.0 * r_max);
    let axis = kv.opt_usize("axis")?.unwrap_or(0);
    kv.finish()?;
    ensure_out_dir(&common.out_dir)?;

    let model = RateModel::new(RateLaw::Boltzmann { beta }, r_max, tail_tol)?;
    let envs = (0..n_envs as u64)
        .map(|e| palm_ppp_env(common.d, box_side, common.rho, common.law, common.seed, e))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = MsdConfig { axis, t_max, n_checkpoints, n_traj_per_env: n_traj, jump_budget };
    let est = diffusion_estimate(&envs, &model, &cfg, rng::derive_seed(common.seed, &[purpose::WALK]))?;

    let rows: Vec<Value> = est
        .t_grid
        .iter()
        .zip(est.msd.iter().zip(&est.msd_se))
        .map(|(t, (m, se))| json!({"t": t, "msd": m, "msd_se": se}))
        .collect();
    io::write_jsonl(&common.out_dir.join("walk_checkpoints.jsonl"), &rows)?;
    io::atomic_write(
        &common.out_dir.join("walk_estimate.json"),
        &format!("{}\n", serde_json::to_string_pretty(&est).map_err(vrh::error::Error::from)?),
    )?;

    let mut flags = Vec::new();
    if !est.converged {
        flags.push("kmc-not-converged".into());
    }
    if est.n_truncated > 0 {
        flags.push("jump-budget-exhausted".into());
    }
    if est.n_uncertified_sites > 0 {
        flags.push("uncertified-truncation".into());
    }
    Ok(Outcome {
        summary: json!({
            "cmd": "walk", "beta": beta, "d_hat": est.d_hat, "d_se": est.d_se,
            "ci95": [est.ci95.0, est.ci95.1], "n_frozen": est.n_frozen, "flags": flags,
        }),
        flags,
    })
}

pub fn network(mut kv: KvFile) -> Result<Outcome, CliError> {
    let common = Common::extract(&mut kv)?;
    let r_c = kv.req_f64("r_c")?;
    let e_c = kv.opt_f64("e_c")?;
    let n_grid = kv.opt_usize_list("n_grid")?.unwrap_or_else(|| vec![8, 16, 32]);
    let samples = kv.opt_usize("samples")?.unwrap_or(8);
    kv.finish()?;
    ensure_out_dir(&common.out_dir)?;

    let sampler = |s: u64, n: usize| -> Result<MarkedPointSet, vrh::error::Error> {
        let geom = BoxGeometry::new(common.d, 2.0 * n as f64, false)?;
        let mut r = rng::stream(common.seed, &[purpose::NETWORK, s, n as u64]);
        let pts = sample_ppp(common.rho, geom, &mut r)?;
        let mut r = rng::stream(common.seed, &[purpose::NETWORK, s, n as u64, 1]);
        let pts = randomize(&pts, common.law, &mut r)?;
        match e_c {
            Some(e_c) => thin_by_energy(&pts, e_c),
            None => Ok(pts),
        }
    };
    let opts = SolveOptions::default();
    let est = network_diffusion_estimate(&sampler, &n_grid, r_c, samples, &opts)?;

    // One materialized instance at the largest size, for inspection.
    let n_big = *n_grid.last().unwrap();
    let example = build_periodized_graph(&sampler(0, n_big)?, n_big, r_c, BoundaryStyle::Faces)?;
    io::write_graph(&common.out_dir.join("network_example.graph"), &example)?;
    io::write_jsonl(&common.out_dir.join("network_rows.jsonl"), &est.rows)?;
    io::atomic_write(
        &common.out_dir.join("network_estimate.json"),
        &format!("{}\n", serde_json::to_string_pretty(&est).map_err(vrh::error::Error::from)?),
    )?;

    let mut flags = Vec::new();
    if !est.stabilized {
        flags.push("network-not-stabilized".into());
    }
    if est.rows.iter().any(|r| r.n_unconverged > 0) {
        flags.push("cg-not-converged".into());
    }
    Ok(Outcome {
        summary: json!({
            "cmd": "network", "d_final": est.d_final, "d_se_final": est.d_se_final,
            "stabilized": est.stabilized, "flags": flags,
        }),
        flags,
    })
}

pub fn percolation(mut kv: KvFile) -> Result<Outcome, CliError> {
    let common = Common::extract(&mut kv)?;
    let e_c = kv.req_f64("e_c")?;
    let p = kv.opt_f64("p")?.unwrap_or(0.8);
    let rho_floor = kv.opt_f64("rho_floor")?.unwrap_or(common.rho);
    let n_samples = kv.opt_usize("n_samples")?.unwrap_or(20_000);
    let n_grid = kv.opt_usize_list("n_grid")?.unwrap_or_else(|| vec![8, 16, 32]);
    let scan_samples = kv.opt_usize("scan_samples")?.unwrap_or(100);
    kv.finish()?;
    ensure_out_dir(&common.out_dir)?;

    let scales = choose_percolation_scales(
        common.d,
        common.rho,
        &common.law,
        e_c,
        p,
        rho_floor,
        n_samples,
        rng::derive_seed(common.seed, &[purpose::THRESHOLD]),
    )?;
    let sampler = |idx: u64, n: usize| -> Result<MarkedPointSet, vrh::error::Error> {
        let side = 2.0 * (scales.r2 * n as f64 + scales.r1);
        let geom = BoxGeometry::new(common.d, side, false)?;
        let mut r = rng::stream(common.seed, &[purpose::FIELD, idx, n as u64]);
        let pts = sample_ppp(common.rho, geom, &mut r)?;
        let mut r = rng::stream(common.seed, &[purpose::MARKS, idx, n as u64]);
        let pts = randomize(&pts, common.law, &mut r)?;
        thin_by_energy(&pts, e_c)
    };
    let scan = crossing_scaling_experiment(&sampler, &scales, &n_grid, scan_samples)?;

    let n_big = *n_grid.last().unwrap();
    let field = coarse_grain(&sampler(0, n_big)?, n_big, scales.r1, scales.r2)?;
    io::write_field(&common.out_dir.join("field_example.field"), &field)?;
    io::write_jsonl(&common.out_dir.join("scaling.jsonl"), &scan.rows)?;
    io::atomic_write(
        &common.out_dir.join("domination.json"),
        &format!("{}\n", serde_json::to_string_pretty(&scales).map_err(vrh::error::Error::from)?),
    )?;

    let mut flags = Vec::new();
    if !scan.monotone {
        flags.push("bad-frequency-not-monotone".into());
    }
    Ok(Outcome {
        summary: json!({
            "cmd": "percolation", "r_p": scales.r_p, "occupancy": scales.report.occupancy,
            "pc2_margin": scales.pc2_margin, "floor_feasible": scales.report.floor_feasible,
            "b_hat": scan.b_hat, "monotone": scan.monotone, "flags": flags,
        }),
        flags,
    })
}

pub fn mott(mut kv: KvFile) -> Result<Outcome, CliError> {
    let common = Common::extract(&mut kv)?;
    let alpha = match common.law {
        EnergyLaw::Power { alpha } => alpha,
        EnergyLaw::PointMass => {
            return Err(CliError::Config(
                "the temperature sweep needs power-law marks (drop `marks = pointmass`)".into(),
            ))
        }
    };
    let beta_grid = kv.req_f64_list("beta_grid")?;
    let mut cfg = MottConfig::default_2d(beta_grid, common.seed);
    cfg.d = common.d;
    cfg.alpha = alpha;
    cfg.rho = common.rho;
    if let Some(v) = kv.opt_f64("c")? {
        cfg.c_scale = v;
    }
    if let Some(v) = kv.opt_f64("c_prime")? {
        cfg.c_prime = v;
    }
    if let Some(v) = kv.opt_f64_list("t_max_grid")? {
        cfg.t_max_grid = v;
    }
    if let Some(v) = kv.opt_usize("n_envs")? {
        cfg.n_envs = v;
    }
    if let Some(v) = kv.opt_usize("n_traj")? {
        cfg.n_traj_per_env = v;
    }
    if let Some(v) = kv.opt_usize("n_checkpoints")? {
        cfg.n_checkpoints = v;
    }
    if let Some(v) = kv.opt_u64("jump_budget")? {
        cfg.jump_budget = v;
    }
    if let Some(v) = kv.opt_f64("r_max")? {
        cfg.r_max = v;
    }
    if let Some(v) = kv.opt_f64("tail_tol")? {
        cfg.tail_tolerance = v;
    }
    if let Some(v) = kv.opt_f64("box_side")? {
        cfg.env_box_side = v;
    }
    if let Some(v) = kv.opt_usize_list("network_n_grid")? {
        cfg.network_n_grid = v;
    }
    if let Some(v) = kv.opt_usize("network_samples")? {
        cfg.network_samples = v;
    }
    if let Some(v) = kv.opt_usize("axis")? {
        cfg.axis = v;
    }
    kv.finish()?;
    ensure_out_dir(&common.out_dir)?;

    let res = run_mott_with(&cfg, |row| {
        eprintln!(
            "beta = {:>6}: d_hat = {:.6e} (se {:.1e}), network = {:.6e}, chain = {:.3e}",
            row.schedule.beta, row.d_hat, row.d_se, row.network_d, row.chain_bound
        );
    })?;

    io::write_mott_csv(&common.out_dir.join("mott.csv"), &res)?;
    io::atomic_write(
        &common.out_dir.join("mott_result.json"),
        &format!("{}\n", serde_json::to_string_pretty(&res).map_err(vrh::error::Error::from)?),
    )?;

    let mut flags = Vec::new();
    for row in &res.rows {
        let beta = row.schedule.beta;
        if !row.kmc.converged {
            flags.push(format!("beta={beta}-kmc-not-converged"));
        }
        if row.kmc.n_truncated > 0 {
            flags.push(format!("beta={beta}-jump-budget-exhausted"));
        }
        if !row.network.stabilized {
            flags.push(format!("beta={beta}-network-not-stabilized"));
        }
    }
    Ok(Outcome {
        summary: json!({
            "cmd": "mott", "exponent": res.mott_exponent,
            "slope": res.fit_mott.slope, "r2": res.fit_mott.r_squared,
            "r2_advantage": res.r2_advantage(), "flags": flags,
        }),
        flags,
    })
}

pub fn selftest() -> Result<Outcome, CliError> {
    let mut checks: Vec<&str> = Vec::new();
    let fail = |name: &str, msg: String| CliError::Runtime(format!("selftest {name}: {msg}"));

    // Point process: empirical intensity of a Poisson draw.
    {
        let geom = BoxGeometry::new(2, 40.0, true).map_err(|e| fail("ppp", e.to_string()))?;
        let mut r = rng::stream(7, &[purpose::POSITIONS]);
        let pts = sample_ppp(1.0, geom, &mut r).map_err(|e| fail("ppp", e.to_string()))?;
        let rate = pts.len() as f64 / 1600.0;
        if (rate - 1.0).abs() > 0.1 {
            return Err(fail("ppp", format!("empirical intensity {rate}")));
        }
        checks.push("point-process");
    }
    // Walk against the two-state closed form.
    {
        let geom = BoxGeometry::new(2, 50.0, false).map_err(|e| fail("walk", e.to_string()))?;
        let pts = MarkedPointSet::new(geom, vec![0.0, 0.0, 2.0, 0.0], vec![0.1, -0.2])
            .map_err(|e| fail("walk", e.to_string()))?;
        let env = Environment { pts, origin: 0 };
        let model = RateModel::new(RateLaw::Boltzmann { beta: 1.0 }, 8.0, 1e-6)
            .map_err(|e| fail("walk", e.to_string()))?;
        let (t, n) = (2.0, 4000u64);
        let mut acc = 0.0;
        for k in 0..n {
            let mut r = rng::stream(7, &[purpose::WALK, k]);
            let traj = simulate_walk(&env, &model, t, 10_000, &mut r)
                .map_err(|e| fail("walk", e.to_string()))?;
            let dx = traj.displacement_at(t)[0];
            acc += dx * dx;
        }
        let mean = acc / n as f64;
        let c = hop_rate(2.0, 0.1, -0.2, 1.0);
        let expect = 2.0 * (1.0 - (-2.0 * c * t).exp());
        if (mean - expect).abs() > 0.2 * expect {
            return Err(fail("walk", format!("msd {mean} vs {expect}")));
        }
        checks.push("hopping-walk");
    }
    // Network: integer lattice closed form (2N-1)/(2N).
    {
        let n = 4i64;
        let mut coords = Vec::new();
        for x in -n + 1..n {
            for y in -n + 1..n {
                coords.push(x as f64);
                coords.push(y as f64);
            }
        }
        let geom =
            BoxGeometry::new(2, 2.0 * n as f64, false).map_err(|e| fail("network", e.to_string()))?;
        let n_pts = coords.len() / 2;
        let pts = MarkedPointSet::new(geom, coords, vec![0.0; n_pts])
            .map_err(|e| fail("network", e.to_string()))?;
        let graph = build_periodized_graph(&pts, n as usize, 1.0, BoundaryStyle::Faces)
            .map_err(|e| fail("network", e.to_string()))?;
        let (g, _) = conductance(&graph, &SolveOptions::default())
            .map_err(|e| fail("network", e.to_string()))?;
        let expect = (2.0 * n as f64 - 1.0) / (2.0 * n as f64);
        if (g - expect).abs() > 1e-9 {
            return Err(fail("network", format!("lattice conductance {g} vs {expect}")));
        }
        checks.push("resistor-network");
    }
    // Percolation: full field crosses on every row.
    {
        let field = SiteField { d: 2, n: 3, r1: 1.0, r2: 1.0, occupied: vec![true; 49] };
        let report = count_disjoint_lr_crossings(&field);
        if report.n_total != 7 || report.harmonic_sum() < report.jensen_bound() - 1e-12 {
            return Err(fail("percolation", format!("{} crossings on the full field", report.n_total)));
        }
        checks.push("percolation");
    }
    // Schedule scale laws, exact on an unclamped grid.
    {
        let rows = make_schedule(2, 0.0, 1.0, 1.5, &[2.0, 4.0, 8.0])
            .map_err(|e| fail("schedule", e.to_string()))?;
        for row in &rows {
            let inv = row.e_c.powf(3.0 / 2.0) * row.beta;
            if (inv - 1.0).abs() > 1e-12 {
                return Err(fail("schedule", format!("E_c scale law off by {}", inv - 1.0)));
            }
            let hop = row.r_c * row.r_c * row.delta_c;
            if (hop - 1.5f64.powi(2)).abs() > 1e-12 {
                return Err(fail("schedule", format!("r_c scale law gives {hop}")));
            }
        }
        checks.push("mott-schedule");
    }
    // Text round trips.
    {
        let geom = BoxGeometry::new(2, 10.0, true).map_err(|e| fail("io", e.to_string()))?;
        let mut r = rng::stream(7, &[purpose::PROBE]);
        let pts = sample_ppp(0.8, geom, &mut r).map_err(|e| fail("io", e.to_string()))?;
        let pts = randomize(&pts, EnergyLaw::Power { alpha: 0.5 }, &mut r)
            .map_err(|e| fail("io", e.to_string()))?;
        let text = io::points_to_string(&pts);
        let back = io::points_from_str(&text).map_err(|e| fail("io", e.to_string()))?;
        if io::points_to_string(&back) != text {
            return Err(fail("io", "points round trip is not byte-identical".into()));
        }
        checks.push("text-io");
    }
    // Palm exchange identity on a small budget.
    {
        let envs: Vec<Environment> = (0..400u64)
            .map(|e| palm_ppp_env(2, 12.0, 1.0, EnergyLaw::Power { alpha: 0.0 }, 7, e))
            .collect::<Result<_, _>>()
            .map_err(|e| fail("exchange", e.to_string()))?;
        let rep = exchange_formula_test(&envs, KernelG::Energy)
            .map_err(|e| fail("exchange", e.to_string()))?;
        if rep.z_score.abs() > 5.0 {
            return Err(fail("exchange", format!("z = {}", rep.z_score)));
        }
        checks.push("palm-exchange");
    }

    Ok(Outcome {
        summary: json!({"cmd": "selftest", "ok": true, "checks": checks}),
        flags: Vec::new(),
    })
}
