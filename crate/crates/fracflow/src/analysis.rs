//! Norms, decay-rate fits, profile errors, and dissipation reports: the
//! machinery that turns trajectories into quantitative checks.

use crate::config::{Grid, ProblemConfig};
use crate::integrator::Trajectory;
use crate::kernel::limit_profile;
use crate::{Error, Result};

/// Discrete Lebesgue norm `(h * sum |u_i|^p)^(1/p)`; `p = f64::INFINITY`
/// selects the max norm over cell centers.
pub fn lp_norm(u: &[f64], p: f64, grid: &Grid) -> Result<f64> {
    if u.len() != grid.n() {
        return Err(Error::Validation(format!(
            "grid function length {} does not match grid size {}",
            u.len(),
            grid.n()
        )));
    }
    if p.is_infinite() {
        return Ok(u.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    if !(p >= 1.0) {
        return Err(Error::Validation(format!(
            "norm index must satisfy p >= 1 (or inf); got {p}"
        )));
    }
    let h = grid.cell_width;
    if p == 1.0 {
        return Ok(h * u.iter().map(|v| v.abs()).sum::<f64>());
    }
    if p == 2.0 {
        return Ok((h * u.iter().map(|v| v * v).sum::<f64>()).sqrt());
    }
    Ok((h * u.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p))
}

/// Least-squares line through `(x_k, y_k)`: returns slope, intercept, and
/// the RMS of the residuals.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "line fit needs at least two matched points; got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        rss += r * r;
    }
    Ok((slope, intercept, (rss / n).sqrt()))
}

/// Log-log decay fit of one norm over a time window, with the two predicted
/// regime exponents for comparison.
#[derive(Debug, Clone)]
pub struct DecayReport {
    pub p: f64,
    pub window: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub n_snapshots: usize,
    /// Large-time prediction `-(N/(2r)) (1 - 1/p)`.
    pub predicted_slope_large_time: f64,
    /// Small-time prediction `-(N/(2 min(r,s))) (1 - 1/p)`.
    pub predicted_slope_small_time: f64,
}

fn holder_factor(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else {
        1.0 - 1.0 / p
    }
}

/// Fit `log ||u(t)||_p` against `log t` over the snapshots inside `window`.
pub fn fit_decay(
    traj: &Trajectory,
    config: &ProblemConfig,
    p: f64,
    window: (f64, f64),
) -> Result<DecayReport> {
    if !(window.0 > 0.0 && window.1 > window.0) {
        return Err(Error::Validation(format!(
            "fit window must satisfy 0 < a < b; got [{}, {}]",
            window.0, window.1
        )));
    }
    let t_min = *traj.times.first().ok_or_else(|| {
        Error::InsufficientData("trajectory holds no snapshots".into())
    })?;
    let t_max = *traj.times.last().unwrap();
    if window.0 < t_min - 1e-12 || window.1 > t_max * (1.0 + 1e-12) {
        return Err(Error::Validation(format!(
            "fit window [{}, {}] is not inside the trajectory range [{t_min}, {t_max}]",
            window.0, window.1
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &t) in traj.times.iter().enumerate() {
        if t >= window.0 * (1.0 - 1e-12) && t <= window.1 * (1.0 + 1e-12) {
            let norm = lp_norm(&traj.snapshots[k], p, &traj.grid)?;
            if !(norm > 0.0) {
                return Err(Error::DegenerateInput(format!(
                    "norm vanishes at t = {t}; log fit undefined"
                )));
            }
            xs.push(t.ln());
            ys.push(norm.ln());
        }
    }
    if xs.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 6 snapshots in the window; found {}",
            xs.len()
        )));
    }
    let (slope, intercept, rms) = fit_line(&xs, &ys)?;
    let nd = config.dimension_f64();
    let fac = holder_factor(p);
    Ok(DecayReport {
        p,
        window,
        slope,
        intercept,
        residual_rms: rms,
        n_snapshots: xs.len(),
        predicted_slope_large_time: -(nd / (2.0 * config.r)) * fac,
        predicted_slope_small_time: -(nd / (2.0 * config.r.min(config.s))) * fac,
    })
}

/// Weighted distance to the self-similar profile at one snapshot time:
/// `t^((N/(2r))(1 - 1/p)) * || u(t) - U_M(t) ||_p`, with `U_M` the mass-M
/// point-source solution of the constant-coefficient flow with coefficient
/// `c_omega`. Requires the profile hypothesis `r < N/2 + c`.
pub fn profile_error(
    traj: &Trajectory,
    config: &ProblemConfig,
    t: f64,
    p: f64,
    mass: f64,
    c_omega: f64,
) -> Result<f64> {
    if !config.profile_hypothesis() {
        return Err(Error::Hypothesis(format!(
            "asymptotic profile requires r < N/2 + c; got r = {}, N/2 + c = {}",
            config.r,
            config.dimension_f64() / 2.0 + config.c
        )));
    }
    let u = traj.snapshot_at(t)?;
    let profile = limit_profile(mass, c_omega, config.r, t, &traj.grid.cell_centers)?;
    let diff: Vec<f64> = u.iter().zip(&profile).map(|(a, b)| a - b).collect();
    let norm = lp_norm(&diff, p, &traj.grid)?;
    let weight = t.powf(config.dimension_f64() / (2.0 * config.r) * holder_factor(p));
    Ok(weight * norm)
}

/// Mass outside the doubled radius: `h * sum over |x_i| > 2R of |u_i|`.
pub fn tail_mass(u: &[f64], big_r: f64, grid: &Grid) -> Result<f64> {
    if !(big_r > 0.0) {
        return Err(Error::Validation(format!(
            "tail radius must be positive; got {big_r}"
        )));
    }
    if 2.0 * big_r >= grid.truncation_radius {
        return Err(Error::Window(format!(
            "tail window 2R = {} reaches past the computational domain L = {}",
            2.0 * big_r,
            grid.truncation_radius
        )));
    }
    if u.len() != grid.n() {
        return Err(Error::Validation("grid function length mismatch".into()));
    }
    let h = grid.cell_width;
    let mut acc = 0.0;
    for (i, &x) in grid.cell_centers.iter().enumerate() {
        if x.abs() > 2.0 * big_r {
            acc += u[i].abs();
        }
    }
    Ok(h * acc)
}

/// One row of the dissipation report: the energy form value against the
/// `||u0||^2 / (2t)` bound.
#[derive(Debug, Clone, Copy)]
pub struct DissipationRow {
    pub t: f64,
    pub energy_form: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Check the dissipation bound `E(u(t), u(t)) <= ||u0||_{L2}^2 / (2t)` at
/// every snapshot. The energy form is twice the stored energy functional.
pub fn energy_dissipation_report(traj: &Trajectory) -> Vec<DissipationRow> {
    let u0_sq = traj.initial_l2 * traj.initial_l2;
    traj.times
        .iter()
        .map(|&t| {
            let step = traj
                .steps
                .iter()
                .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0));
            let energy_form = step.map(|s| 2.0 * s.energy).unwrap_or(f64::NAN);
            let bound = if t > 0.0 { u0_sq / (2.0 * t) } else { f64::INFINITY };
            DissipationRow {
                t,
                energy_form,
                bound,
                pass: energy_form <= bound * (1.0 + 1e-8),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{build_grid, load_config};
    use crate::integrator::{delta_initial, evolve};
    use crate::operator::assemble;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_grid(l: f64, n: usize) -> Grid {
        let cfg = load_config(
            &serde_json::json!({
                "r": 0.5, "s": 0.5, "c": 0.5,
                "inner_radius": 1.0, "truncation_radius": l, "n_cells": n
            })
            .to_string(),
        )
        .unwrap();
        build_grid(&cfg).unwrap()
    }

    #[test]
    fn norm_examples() {
        let g = toy_grid(20.0, 2000);
        let ones = vec![1.0; g.n()];
        assert!((lp_norm(&ones, 1.0, &g).unwrap() - 40.0).abs() < 1e-9);
        let mut delta = vec![0.0; g.n()];
        delta[17] = 1.0 / g.cell_width;
        assert!((lp_norm(&delta, 1.0, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (lp_norm(&delta, f64::INFINITY, &g).unwrap() - 1.0 / g.cell_width).abs() < 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let direct = (g.cell_width * u.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!((lp_norm(&u, 2.0, &g).unwrap() - direct).abs() < 1e-14);
        assert!(lp_norm(&u, 0.5, &g).is_err());
    }

    proptest! {
        /// Interpolation inequality between the 1, p, and max norms.
        #[test]
        fn holder_interpolation(seed in 0u64..500, p in 1.5f64..8.0) {
            let g = toy_grid(2.0, 64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let l1 = lp_norm(&u, 1.0, &g).unwrap();
            let lp = lp_norm(&u, p, &g).unwrap();
            let linf = lp_norm(&u, f64::INFINITY, &g).unwrap();
            prop_assert!(lp <= l1.powf(1.0 / p) * linf.powf(1.0 - 1.0 / p) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn exact_power_law_recovered() {
        let xs: Vec<f64> = (1..=20).map(|k| (k as f64).ln()).collect();
        let ys: Vec<f64> = (1..=20).map(|k| (3.0 * (k as f64).powf(-1.0)).ln()).collect();
        let (slope, intercept, rms) = fit_line(&xs, &ys).unwrap();
        assert!((slope + 1.0).abs() < 1e-12);
        assert!((intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(rms < 1e-12);
    }

    fn short_run() -> (ProblemConfig, Trajectory) {
        let cfg = load_config(
            &serde_json::json!({
                "r": 0.5, "s": 0.5, "c": 0.5,
                "inner_radius": 1.0, "truncation_radius": 10.0, "n_cells": 500
            })
            .to_string(),
        )
        .unwrap();
        let grid = build_grid(&cfg).unwrap();
        let op = assemble(&grid, &cfg).unwrap();
        let u0 = delta_initial(&grid);
        let schedule: Vec<f64> = (0..8).map(|k| 0.02 * 1.6f64.powi(k)).collect();
        let traj = evolve(&op, &u0, &schedule, 0.01, 1e-10).unwrap();
        (cfg, traj)
    }

    #[test]
    fn fit_decay_window_validation() {
        let (cfg, traj) = short_run();
        let t0 = traj.times[0];
        let t_end = *traj.times.last().unwrap();
        assert!(fit_decay(&traj, &cfg, 2.0, (t0, t_end)).is_ok());
        assert!(matches!(
            fit_decay(&traj, &cfg, 2.0, (t0, traj.times[3])),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_decay(&traj, &cfg, 2.0, (t0, t_end * 10.0)).is_err());
    }

    #[test]
    fn predicted_slopes_follow_exponents() {
        let (mut cfg, traj) = short_run();
        cfg.s = 0.25;
        let rep = fit_decay(&traj, &cfg, f64::INFINITY, (traj.times[0], *traj.times.last().unwrap()))
            .unwrap();
        assert!((rep.predicted_slope_large_time + 1.0).abs() < 1e-12);
        assert!((rep.predicted_slope_small_time + 2.0).abs() < 1e-12);
    }

    #[test]
    fn profile_error_of_profile_itself_vanishes() {
        let (cfg, mut traj) = short_run();
        let t = traj.times[5];
        let profile =
            limit_profile(1.0, 1.0, cfg.r, t, &traj.grid.cell_centers).unwrap();
        let k = traj.times.iter().position(|&x| x == t).unwrap();
        traj.snapshots[k] = profile;
        let e = profile_error(&traj, &cfg, t, 1.0, 1.0, 1.0).unwrap();
        assert!(e.abs() <= 1e-12);
    }

    #[test]
    fn profile_error_hypothesis_guard() {
        let (mut cfg, traj) = short_run();
        cfg.r = 0.9;
        cfg.c = 0.1;
        let err = profile_error(&traj, &cfg, traj.times[2], 1.0, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("r < N/2 + c"), "{err}");
    }

    #[test]
    fn profile_error_zero_mass_zero_state() {
        let (cfg, mut traj) = short_run();
        let t = traj.times[3];
        let k = traj.times.iter().position(|&x| x == t).unwrap();
        traj.snapshots[k] = vec![0.0; traj.grid.n()];
        let e = profile_error(&traj, &cfg, t, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn profile_error_p1_bounded_by_two_masses() {
        let (cfg, traj) = short_run();
        for &t in &traj.times {
            let e = profile_error(&traj, &cfg, t, 1.0, 1.0, 1.0).unwrap();
            assert!(e <= 2.0 * 1.0 + 1e-9);
        }
    }

    #[test]
    fn tail_mass_examples() {
        let g = toy_grid(20.0, 2000);
        // supported inside [-R, R] leaves nothing past 2R
        let u: Vec<f64> = g
            .cell_centers
            .iter()
            .map(|&x| if x.abs() < 5.0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(tail_mass(&u, 5.0, &g).unwrap(), 0.0);
        // constant 1: mass past L/2 is exactly L
        let ones = vec![1.0; g.n()];
        let tm = tail_mass(&ones, 5.0, &g).unwrap();
        assert!((tm - 20.0).abs() < 1e-9, "{tm}");
        assert!(matches!(
            tail_mass(&ones, 10.0, &g),
            Err(Error::Window(_))
        ));
    }

    #[test]
    fn dissipation_report_passes_on_gradient_flow() {
        let (_, traj) = short_run();
        let rows = energy_dissipation_report(&traj);
        assert_eq!(rows.len(), traj.times.len());
        for row in &rows {
            assert!(row.pass, "t = {}", row.t);
        }
        // the energy form itself is nonincreasing along the flow
        for w in traj.steps.windows(2) {
            assert!(w[1].energy <= w[0].energy * (1.0 + 1e-10));
        }
    }
}
