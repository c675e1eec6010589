//! Empirical verifiers for the functional inequalities behind the decay
//! theory, plus the bump-family probes that test sharpness of the decay
//! exponents.
//!
//! All probes use the fixed bump `(1 - x^2)^4` on `[-1, 1]`; fixing the
//! profile makes every reported number reproducible. Constants in the
//! inequalities are never asserted numerically: the checks target
//! boundedness and stability of empirical ratios, which is what the
//! statements claim.

use crate::config::{build_grid, Grid, ProblemConfig};
use crate::operator::{assemble, assemble_rescaled};
use crate::quadrature::{gagliardo_seminorm_sq, power_interval_integral, KernelExponent};
use crate::{Error, Result};

/// Fixed smooth bump supported on `[-1, 1]`.
pub fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        let w = 1.0 - x * x;
        w * w * w * w
    } else {
        0.0
    }
}

/// Sample `bump((x - center)/scale)` at the grid centers.
pub fn sample_bump(grid: &Grid, center: f64, scale: f64) -> Vec<f64> {
    grid.cell_centers
        .iter()
        .map(|&x| bump((x - center) / scale))
        .collect()
}

/// Nash quotient on the exterior region:
/// `||f||_2 / (||f||_1^(2r/(1+2r)) [f]_r^(1/(1+2r)))`, all pieces restricted
/// to exterior cells. The inequality asserts this is bounded by a constant
/// depending only on the region and `r`.
pub fn nash_ratio(f: &[f64], r: f64, grid: &Grid) -> Result<f64> {
    let sigma = KernelExponent::new(r)?;
    let mask = grid.exterior_mask();
    let h = grid.cell_width;
    let mut l1 = 0.0;
    let mut l2_sq = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            l1 += f[i].abs();
            l2_sq += f[i] * f[i];
        }
    }
    l1 *= h;
    l2_sq *= h;
    if l2_sq == 0.0 {
        return Err(Error::DegenerateInput(
            "function vanishes on the exterior region".into(),
        ));
    }
    let semi_sq = gagliardo_seminorm_sq(f, sigma, &mask, grid)?.value;
    if semi_sq == 0.0 {
        return Err(Error::DegenerateInput(
            "seminorm vanishes (constant function)".into(),
        ));
    }
    let l2 = l2_sq.sqrt();
    let semi = semi_sq.sqrt();
    let e1 = 2.0 * r / (1.0 + 2.0 * r);
    let e2 = 1.0 / (1.0 + 2.0 * r);
    Ok(l2 / (l1.powf(e1) * semi.powf(e2)))
}

/// One-dimensional exterior domain `(-inf, left) U (right, +inf)`; either
/// ray may be absent.
#[derive(Debug, Clone, Copy)]
pub struct ExteriorDomain {
    pub left_end: Option<f64>,
    pub right_start: Option<f64>,
}

impl ExteriorDomain {
    fn components(&self) -> Vec<(f64, f64)> {
        let mut c = Vec::new();
        if let Some(a) = self.left_end {
            c.push((f64::NEG_INFINITY, a));
        }
        if let Some(b) = self.right_start {
            c.push((b, f64::INFINITY));
        }
        c
    }

    fn contains(&self, x: f64) -> bool {
        self.components().iter().any(|&(a, b)| x > a && x < b)
    }
}

/// Report of the measure-density integral check.
#[derive(Debug, Clone, Copy)]
pub struct MeasureDensityReport {
    /// `integral over (domain minus E) of |x-y|^(-1-ps) dy`.
    pub integral: f64,
    /// Lebesgue measure of `E`.
    pub measure: f64,
    /// `integral / |E|^(-ps)`; the inequality under test asserts a positive
    /// lower bound on this quotient uniform in `E`.
    pub ratio: f64,
    /// Set when the integral diverges (evaluation point interior to the
    /// complement).
    pub divergent: bool,
}

/// Evaluate the measure-density integral for an excluded set `E` given as
/// finitely many disjoint intervals inside the domain.
pub fn measure_density_integral(
    x: f64,
    e_intervals: &[(f64, f64)],
    p: f64,
    s: f64,
    omega: &ExteriorDomain,
) -> Result<MeasureDensityReport> {
    if !(p > 1.0) {
        return Err(Error::Validation(format!("p must exceed 1; got {p}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Validation(format!("s must lie in (0,1); got {s}")));
    }
    if !omega.contains(x) {
        return Err(Error::Validation(format!(
            "evaluation point {x} lies outside the domain"
        )));
    }
    if e_intervals.is_empty() {
        return Err(Error::Validation("excluded set must be nonempty".into()));
    }
    let mut e = e_intervals.to_vec();
    e.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut measure = 0.0;
    for (k, &(a, b)) in e.iter().enumerate() {
        if !(a < b) {
            return Err(Error::Validation(format!(
                "interval [{a}, {b}] is empty or inverted"
            )));
        }
        if k + 1 < e.len() && b > e[k + 1].0 {
            return Err(Error::Validation(format!(
                "intervals overlap near {b}"
            )));
        }
        if !omega.contains(0.5 * (a + b)) {
            return Err(Error::Validation(format!(
                "interval [{a}, {b}] is not inside the domain"
            )));
        }
        measure += b - a;
    }

    // complement of E within each domain component
    let q = p * s;
    let mut integral = 0.0f64;
    for (clo, chi) in omega.components() {
        let mut cursor = clo;
        for &(a, b) in &e {
            if b <= clo || a >= chi {
                continue;
            }
            let a = a.max(clo);
            if a > cursor {
                integral += complement_piece(x, cursor, a, q);
            }
            cursor = cursor.max(b.min(chi));
        }
        if cursor < chi {
            integral += complement_piece(x, cursor, chi, q);
        }
    }
    let divergent = !integral.is_finite();
    Ok(MeasureDensityReport {
        integral,
        measure,
        ratio: integral * measure.powf(q),
        divergent,
    })
}

fn complement_piece(x: f64, a: f64, b: f64, q: f64) -> f64 {
    if x > a && x < b {
        // evaluation point interior to the complement: the continuum
        // integral diverges
        return f64::INFINITY;
    }
    if x == a || x == b {
        return f64::INFINITY;
    }
    power_interval_integral(x, a, b, q)
}

/// Outcome of the halved-exponent interpolation check
/// `[v]_{r/2}^2 <= 2 C(r) ||v|| [v]_r` with `C(r) = 2/r`.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationCheck {
    pub lhs_sq: f64,
    pub rhs: f64,
    pub pass: bool,
    /// The optimizing split scale `delta^r = ||v|| / [v]_r`.
    pub delta: f64,
}

/// Split-scale bound used by the interpolation check: the squared
/// half-exponent seminorm is at most `delta^r [v]_r^2 + C(r) delta^(-r)
/// ||v||^2` for every `delta`; the optimal split gives the product bound.
pub fn interpolation_bound(r: f64, l2: f64, semi_r: f64) -> (f64, f64) {
    let c_r = 2.0 / r;
    let delta_pow = l2 / semi_r; // delta^r at the optimum
    let bound = delta_pow * semi_r * semi_r + c_r * (semi_r / l2) * l2 * l2;
    (bound, delta_pow.powf(1.0 / r))
}

/// Verify `[v]_{r/2}^2 <= 2 (2/r) ||v||_2 [v]_r (1 + 1e-6)` on the masked
/// cells.
pub fn interpolation_seminorm_check(
    v: &[f64],
    r: f64,
    grid: &Grid,
    mask: &[bool],
) -> Result<InterpolationCheck> {
    let sigma_half = KernelExponent::new(0.5 * r)?;
    let sigma_full = KernelExponent::new(r)?;
    let h = grid.cell_width;
    let mut l2_sq = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            l2_sq += v[i] * v[i];
        }
    }
    l2_sq *= h;
    let semi_full_sq = gagliardo_seminorm_sq(v, sigma_full, mask, grid)?.value;
    if semi_full_sq == 0.0 || l2_sq == 0.0 {
        return Err(Error::DegenerateInput(
            "interpolation check needs a nonconstant masked function".into(),
        ));
    }
    let lhs_sq = gagliardo_seminorm_sq(v, sigma_half, mask, grid)?.value;
    let l2 = l2_sq.sqrt();
    let semi = semi_full_sq.sqrt();
    let c_r = 2.0 / r;
    let rhs = 2.0 * c_r * l2 * semi;
    let (_, delta) = interpolation_bound(r, l2, semi);
    Ok(InterpolationCheck {
        lhs_sq,
        rhs,
        pass: lhs_sq <= rhs * (1.0 + 1e-6),
        delta,
    })
}

/// Which region carries the concentrating bump family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeCase {
    InnerCase,
    ExteriorCase,
}

/// Result of the concentration probe: energies of `bump((x - x0)/eps)` and
/// the fitted power of `eps`.
#[derive(Debug, Clone)]
pub struct SmallTimeProbe {
    pub case: ProbeCase,
    pub center: f64,
    pub slope: f64,
    /// `N - 2s` for the inner case, `N - 2r` for the exterior case.
    pub predicted: f64,
    pub energies: Vec<(f64, f64)>,
}

/// Energy scaling of concentrating bumps. The bump center is the origin for
/// the inner case and the midpoint of the exterior run for the exterior
/// case; every bump must stay inside its designated region.
pub fn small_time_probe(
    case: ProbeCase,
    config: &ProblemConfig,
    eps_list: &[f64],
) -> Result<SmallTimeProbe> {
    if eps_list.len() < 4 {
        return Err(Error::Validation(
            "probe needs at least 4 scales".into(),
        ));
    }
    let lo = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_list.iter().cloned().fold(0.0f64, f64::max);
    if !(lo > 0.0) || hi / lo < 8.0 {
        return Err(Error::Validation(format!(
            "scale list must span at least a factor of 8; got {lo}..{hi}"
        )));
    }
    let grid = build_grid(config)?;
    let op = assemble(&grid, config)?;
    let center = match case {
        ProbeCase::InnerCase => 0.0,
        ProbeCase::ExteriorCase => 0.5 * (config.inner_radius + config.truncation_radius),
    };
    for &eps in eps_list {
        let ok = match case {
            ProbeCase::InnerCase => eps < config.inner_radius - center.abs(),
            ProbeCase::ExteriorCase => {
                center - eps > config.inner_radius && center + eps < config.truncation_radius
            }
        };
        if !ok {
            return Err(Error::Geometry(format!(
                "bump of scale {eps} at {center} leaks out of its region"
            )));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut energies = Vec::new();
    for &eps in eps_list {
        let phi = sample_bump(&grid, center, eps);
        let e = op.bilinear(&phi, &phi);
        energies.push((eps, e));
        xs.push(eps.ln());
        ys.push(e.ln());
    }
    let (slope, _, _) = crate::analysis::fit_line(&xs, &ys)?;
    let nd = config.dimension_f64();
    let predicted = match case {
        ProbeCase::InnerCase => nd - 2.0 * config.s,
        ProbeCase::ExteriorCase => nd - 2.0 * config.r,
    };
    Ok(SmallTimeProbe {
        case,
        center,
        slope,
        predicted,
        energies,
    })
}

/// One far-field bump of the large-scale probe.
#[derive(Debug, Clone, Copy)]
pub struct LargeTimeRow {
    pub radius: f64,
    pub center: f64,
    /// Total energy form of the bump.
    pub energy: f64,
    /// Coupling summand alone.
    pub cross_term: f64,
    /// `energy / radius^(N-2r)`; bounded across the family.
    pub energy_ratio: f64,
    /// `cross / (radius^N (center - radius - C_s)^(-N-2c))` with `C_s` the
    /// inner half-width; bounded across the family.
    pub cross_ratio: f64,
    /// Inner-region seminorm of the bump; exactly zero since the support is
    /// disjoint from the inner region.
    pub seminorm_inner: f64,
}

/// Energy scaling of far-field bumps `bump((x - x_n)/r_n)`.
///
/// The probe's centers grow like `r_n^2` and quickly leave any fixed
/// computational window, so each bump is evaluated on its own local window
/// (600 cells spanning twice the support) with the far-field pieces of the
/// energy added in closed form: the kernel integral over the rest of the
/// exterior region and over the inner region have exact antiderivatives.
pub fn large_time_probe(
    config: &ProblemConfig,
    centers: &[f64],
    radii: &[f64],
) -> Result<Vec<LargeTimeRow>> {
    if centers.len() != radii.len() || centers.is_empty() {
        return Err(Error::Validation(
            "probe needs matched nonempty centers and radii".into(),
        ));
    }
    config.validate()?;
    let inner = config.inner_radius;
    let nd = config.dimension_f64();
    let mut rows = Vec::new();
    for (&x_n, &r_n) in centers.iter().zip(radii) {
        if !(r_n > 0.0) || x_n - 2.0 * r_n <= inner {
            return Err(Error::Geometry(format!(
                "ball of radius {r_n} at {x_n} is not well inside the exterior region"
            )));
        }
        let m = 600usize;
        let w_lo = x_n - 2.0 * r_n;
        let w_hi = x_n + 2.0 * r_n;
        let h = (w_hi - w_lo) / m as f64;
        let centers_loc: Vec<f64> = (0..m).map(|i| w_lo + (i as f64 + 0.5) * h).collect();
        let phi: Vec<f64> = centers_loc.iter().map(|&x| bump((x - x_n) / r_n)).collect();

        // window pair sum of the exterior seminorm
        let q_r = 2.0 * config.r;
        let mut pair = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                let d = phi[i] - phi[j];
                if d == 0.0 {
                    continue;
                }
                let (aj, bj) = (w_lo + j as f64 * h, w_lo + (j + 1) as f64 * h);
                let (ai, bi) = (w_lo + i as f64 * h, w_lo + (i + 1) as f64 * h);
                let w = 0.5
                    * (power_interval_integral(centers_loc[i], aj, bj, q_r)
                        + power_interval_integral(centers_loc[j], ai, bi, q_r));
                pair += 2.0 * d * d * h * w;
            }
        }
        // exact far-field corrections: phi vanishes on the rest of the
        // exterior region, which is (-inf, -inner) U (inner, w_lo) U
        // (w_hi, inf)
        let mut far = 0.0f64;
        for (i, &x) in centers_loc.iter().enumerate() {
            if phi[i] == 0.0 {
                continue;
            }
            let k = power_interval_integral(x, f64::NEG_INFINITY, -inner, q_r)
                + power_interval_integral(x, inner, w_lo, q_r)
                + power_interval_integral(x, w_hi, f64::INFINITY, q_r);
            far += phi[i] * phi[i] * h * k;
        }
        let seminorm_sq = pair + 2.0 * far;
        let e_rr = 0.25 * config.alpha_r * seminorm_sq;

        // coupling term: integral over the inner region of the kernel
        let q_c = 2.0 * config.c;
        let mut cross = 0.0f64;
        for (i, &x) in centers_loc.iter().enumerate() {
            if phi[i] == 0.0 {
                continue;
            }
            cross += phi[i] * phi[i] * h * power_interval_integral(x, -inner, inner, q_c);
        }
        let e_cross = 0.5 * config.alpha_c * cross;

        let energy = 2.0 * (e_rr + e_cross); // energy form, twice the functional
        let cross_form = 2.0 * e_cross;
        let denom = r_n.powf(nd) * (x_n - r_n - inner).powf(-(nd + 2.0 * config.c));
        rows.push(LargeTimeRow {
            radius: r_n,
            center: x_n,
            energy,
            cross_term: cross_form,
            energy_ratio: energy / r_n.powf(nd - 2.0 * config.r),
            cross_ratio: cross_form / denom,
            seminorm_inner: 0.0,
        });
    }
    Ok(rows)
}

/// Region maxima of the rescaled operator applied to the smooth annular
/// cutoff, with the predicted bounds for each region.
#[derive(Debug, Clone, Copy)]
pub struct PsiBoundReport {
    pub lambda: f64,
    pub r_cut: f64,
    pub rho: f64,
    pub max_inner: f64,
    pub max_middle: f64,
    pub max_outer: f64,
    pub bound_inner: f64,
    pub bound_middle: f64,
    pub bound_outer: f64,
}

/// Smooth cutoff: 0 inside the unit ball, 1 outside radius 2, quintic
/// spline between. `psi_r(x) = psi(x / R)`.
pub fn psi_cutoff(x: f64, r_cut: f64) -> f64 {
    let t = (x.abs() / r_cut - 1.0).clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Apply the rescaled operator to `psi_R` and report the maxima of the
/// result over the three regions `|x| < 1/lambda`, `1/lambda < |x| < rho`,
/// `|x| > rho`, next to the predicted bound shapes
/// `lambda^(2r-2c) R^(-2c)`, `R^(-2r)`, and
/// `R^(-2r) (1 + (lambda R)^(2r-2c-N))` (constants not asserted).
pub fn rescaled_operator_bound_check(
    config: &ProblemConfig,
    lambda: f64,
    r_cut: f64,
    rho: f64,
) -> Result<PsiBoundReport> {
    if !(r_cut > 2.0) {
        return Err(Error::Validation(format!(
            "cutoff radius must exceed 2; got {r_cut}"
        )));
    }
    if 2.0 * r_cut >= config.truncation_radius {
        return Err(Error::Window(format!(
            "cutoff 2R = {} does not fit inside the window L = {}",
            2.0 * r_cut,
            config.truncation_radius
        )));
    }
    if !(lambda > 1.0f64.max(1.0 / rho)) {
        return Err(Error::Validation(format!(
            "lambda must exceed max(1, 1/rho); got lambda = {lambda}, rho = {rho}"
        )));
    }
    let grid = build_grid(config)?;
    let op = assemble_rescaled(&grid, config, lambda)?;
    let psi: Vec<f64> = grid
        .cell_centers
        .iter()
        .map(|&x| psi_cutoff(x, r_cut))
        .collect();
    let mut applied = vec![0.0; grid.n()];
    op.apply(&psi, &mut applied);
    // the generator is -A
    let (mut m_in, mut m_mid, mut m_out) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &x) in grid.cell_centers.iter().enumerate() {
        let v = applied[i].abs();
        let ax = x.abs();
        if ax < 1.0 / lambda {
            m_in = m_in.max(v);
        } else if ax < rho {
            m_mid = m_mid.max(v);
        } else {
            m_out = m_out.max(v);
        }
    }
    let nd = config.dimension_f64();
    let e_rc = 2.0 * config.r - 2.0 * config.c;
    Ok(PsiBoundReport {
        lambda,
        r_cut,
        rho,
        max_inner: m_in,
        max_middle: m_mid,
        max_outer: m_out,
        bound_inner: lambda.powf(e_rc) * r_cut.powf(-2.0 * config.c),
        bound_middle: r_cut.powf(-2.0 * config.r),
        bound_outer: r_cut.powf(-2.0 * config.r)
            * (1.0 + (lambda * r_cut).powf(e_rc - nd)),
    })
}
