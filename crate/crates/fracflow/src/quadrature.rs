//! Exact cell integrals of the singular kernels `|x-y|^(-1-2s)`.
//!
//! Every operator row and every discrete seminorm reduces to integrals of a
//! power kernel over a cell that does not contain the evaluation point. Those
//! have a closed-form antiderivative, so no quadrature rule is needed here;
//! the only care required is around endpoints and the principal-value
//! convention (the own-cell pair is dropped entirely).

use crate::config::Grid;
use crate::{Error, Result};

/// Jump exponent of one kernel, restricted to (0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelExponent(f64);

impl KernelExponent {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma < 1.0 {
            Ok(KernelExponent(sigma))
        } else {
            Err(Error::Validation(format!(
                "kernel exponent must lie in (0,1); got {sigma}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Antiderivative of `y -> |x-y|^(-1-q)`: `F(y) = sign(x-y) |x-y|^(-q) / q`,
/// with `F(+-inf) = 0`.
fn antiderivative(x: f64, y: f64, q: f64) -> f64 {
    if y.is_infinite() {
        return 0.0;
    }
    let d = x - y;
    d.signum() * d.abs().powf(-q) / q
}

/// `integral over [a, b] of |x-y|^(-1-q) dy` for `x` outside the open
/// interval; any positive exponent `q`. Either endpoint may be infinite.
/// Unchecked: an evaluation point inside or on the interval yields infinity.
/// See [`cell_weight`] for the checked variant with `q = 2 sigma`.
pub fn power_interval_integral(x: f64, a: f64, b: f64, q: f64) -> f64 {
    antiderivative(x, b, q) - antiderivative(x, a, q)
}

/// Exact integral of the kernel `|x-y|^(-1-2s)` over the cell `[a, b]`.
///
/// The evaluation point must lie outside the open cell: strictly inside is a
/// domain error (that pair belongs to the principal-value path), and touching
/// an endpoint makes the integral infinite.
pub fn cell_weight(x: f64, a: f64, b: f64, sigma: KernelExponent) -> Result<f64> {
    if !(a < b) {
        return Err(Error::Validation(format!(
            "cell bounds must satisfy a < b; got [{a}, {b}]"
        )));
    }
    if x == a || x == b {
        return Err(Error::SingularEndpoint(format!(
            "evaluation point {x} touches a cell endpoint of [{a}, {b}]"
        )));
    }
    if x > a && x < b {
        return Err(Error::QuadratureDomain(format!(
            "evaluation point {x} lies inside ({a}, {b}); use the principal-value path"
        )));
    }
    Ok(power_interval_integral(x, a, b, 2.0 * sigma.value()))
}

/// Symmetrized point-to-cell weight for the pair of cells `i`, `j`:
/// the average of the two exact kernel integrals, one factor `h` short of
/// the full pair weight used by the seminorms.
pub fn symmetrized_weight(grid: &Grid, i: usize, j: usize, sigma: KernelExponent) -> Result<f64> {
    let (ai, bi) = grid.cell_bounds(i);
    let (aj, bj) = grid.cell_bounds(j);
    let xi = grid.cell_centers[i];
    let xj = grid.cell_centers[j];
    Ok(0.5 * (cell_weight(xi, aj, bj, sigma)? + cell_weight(xj, ai, bi, sigma)?))
}

/// Result of a discrete seminorm evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SeminormValue {
    pub value: f64,
    /// Set when the mask selected no cells; the value is then zero.
    pub empty_mask: bool,
}

/// Discrete squared Gagliardo seminorm of `f` over the masked cells:
///
/// `sum over masked pairs i != j of (f_i - f_j)^2 * W_ij`,
///
/// where `W_ij = h * (cw(x_i, cell_j) + cw(x_j, cell_i)) / 2` is the
/// symmetrized pair weight. The diagonal pair is omitted (principal-value
/// convention). Summation order is fixed: ascending `i`, ascending `j > i`,
/// each unordered pair contributing twice.
pub fn gagliardo_seminorm_sq(
    f: &[f64],
    sigma: KernelExponent,
    mask: &[bool],
    grid: &Grid,
) -> Result<SeminormValue> {
    let n = grid.n();
    if f.len() != n || mask.len() != n {
        return Err(Error::Validation(format!(
            "grid function and mask must have length {n}; got {} and {}",
            f.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Ok(SeminormValue {
            value: 0.0,
            empty_mask: true,
        });
    }
    let h = grid.cell_width;
    let mut acc = 0.0f64;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        for j in (i + 1)..n {
            if !mask[j] {
                continue;
            }
            let d = f[i] - f[j];
            if d == 0.0 {
                continue;
            }
            let w = h * symmetrized_weight(grid, i, j, sigma)?;
            acc += 2.0 * d * d * w;
        }
    }
    Ok(SeminormValue {
        value: acc,
        empty_mask: false,
    })
}
