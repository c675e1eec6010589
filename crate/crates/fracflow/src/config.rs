//! Problem configuration and the computational grid.
//!
//! The model lives on the symmetric interval `[-L, L]` split into an inner
//! region `(-inner_radius, inner_radius)` and its exterior. Each region
//! carries its own jump exponent (`s` inside, `r` outside) and the two
//! exchange mass through a coupling kernel with exponent `c`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_alpha() -> f64 {
    1.0
}

fn default_dimension() -> u32 {
    1
}

/// Validated problem description, deserialized from a JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Exterior-region jump exponent, in (0,1).
    pub r: f64,
    /// Inner-region jump exponent, in (0,1).
    pub s: f64,
    /// Coupling jump exponent, in (0,1).
    pub c: f64,
    #[serde(default = "default_alpha")]
    pub alpha_r: f64,
    #[serde(default = "default_alpha")]
    pub alpha_s: f64,
    #[serde(default = "default_alpha")]
    pub alpha_c: f64,
    /// Half-width of the inner region.
    pub inner_radius: f64,
    /// Half-width `L` of the computational window `[-L, L]`.
    #[serde(alias = "L")]
    pub truncation_radius: f64,
    /// Number of uniform cells on `[-L, L]`.
    pub n_cells: usize,
    /// Spatial dimension. The solver is one-dimensional; the value is kept
    /// so decay-exponent formulas stay dimension-generic in reports.
    #[serde(default = "default_dimension", alias = "N")]
    pub dimension: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// When true, the simulate command also dumps the assembled matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_matrix: Option<bool>,
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("s", self.s), ("c", self.c)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!(
                    "{name} must lie in (0,1); got {v}"
                )));
            }
        }
        for (name, v) in [
            ("alpha_r", self.alpha_r),
            ("alpha_s", self.alpha_s),
            ("alpha_c", self.alpha_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "{name} must be a finite nonnegative real; got {v}"
                )));
            }
        }
        if !(self.inner_radius > 0.0) {
            return Err(Error::Validation(format!(
                "inner_radius must be positive; got {}",
                self.inner_radius
            )));
        }
        if !(self.truncation_radius > self.inner_radius) {
            return Err(Error::Validation(format!(
                "truncation_radius must exceed inner_radius; got L={} <= inner_radius={}",
                self.truncation_radius, self.inner_radius
            )));
        }
        if self.n_cells < 8 {
            return Err(Error::Validation(format!(
                "n_cells must be at least 8; got {}",
                self.n_cells
            )));
        }
        if self.dimension == 0 {
            return Err(Error::Validation("dimension must be at least 1".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Validation(format!("dt must be positive; got {dt}")));
            }
        }
        if let Some(t_end) = self.t_end {
            if !(t_end > 0.0) {
                return Err(Error::Validation(format!(
                    "t_end must be positive; got {t_end}"
                )));
            }
        }
        if let Some(times) = &self.snapshot_times {
            if times.is_empty() {
                return Err(Error::Validation("snapshot_times must not be empty".into()));
            }
            for w in times.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::Validation(
                        "snapshot_times must be strictly increasing".into(),
                    ));
                }
            }
            if times[0] < 0.0 {
                return Err(Error::Validation("snapshot_times must start at >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn dimension_f64(&self) -> f64 {
        f64::from(self.dimension)
    }

    /// Hypothesis `r < N/2 + c` required by the asymptotic-profile theory.
    /// Profile experiments refuse to run when it fails.
    pub fn profile_hypothesis(&self) -> bool {
        self.r < self.dimension_f64() / 2.0 + self.c
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.truncation_radius / self.n_cells as f64
    }
}

/// Parse and validate a JSON configuration document.
pub fn load_config(text: &str) -> Result<ProblemConfig> {
    let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| {
        Error::Parse(format!(
            "config JSON at line {}, column {}: {}",
            e.line(),
            e.column(),
            e
        ))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Region tag for one grid cell, decided by its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    Inner,
    Exterior,
}

/// Uniform cell partition of `[-L, L]` with per-cell region labels.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct Grid {
    pub cell_centers: Vec<f64>,
    pub cell_width: f64,
    pub labels: Vec<CellLabel>,
    /// Half-open index range `[start, end)` of the contiguous Inner run.
    pub inner_index_range: (usize, usize),
    pub inner_radius: f64,
    pub truncation_radius: f64,
}

impl Grid {
    pub fn n(&self) -> usize {
        self.cell_centers.len()
    }

    /// Cell `[a, b)` boundaries, recomputed so they are bitwise consistent
    /// with the centers.
    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        let l = self.truncation_radius;
        let h = self.cell_width;
        (-l + i as f64 * h, -l + (i + 1) as f64 * h)
    }

    pub fn inner_indices(&self) -> std::ops::Range<usize> {
        self.inner_index_range.0..self.inner_index_range.1
    }

    pub fn exterior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let (lo, hi) = self.inner_index_range;
        (0..lo).chain(hi..self.n())
    }

    pub fn is_inner(&self, i: usize) -> bool {
        self.labels[i] == CellLabel::Inner
    }

    /// Mask vector selecting exterior cells.
    pub fn exterior_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|l| *l == CellLabel::Exterior).collect()
    }

    pub fn inner_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|l| *l == CellLabel::Inner).collect()
    }
}

/// Build the uniform labeled grid for a validated configuration.
///
/// A cell is Inner iff its center lies inside the inner region; the
/// interface is therefore resolved to within one cell width. At least four
/// Inner cells are required so the inner region is not unresolved.
pub fn build_grid(config: &ProblemConfig) -> Result<Grid> {
    config.validate()?;
    let n = config.n_cells;
    let l = config.truncation_radius;
    let h = 2.0 * l / n as f64;
    let centers: Vec<f64> = (0..n).map(|i| -l + (i as f64 + 0.5) * h).collect();
    let labels: Vec<CellLabel> = centers
        .iter()
        .map(|&x| {
            if x.abs() < config.inner_radius {
                CellLabel::Inner
            } else {
                CellLabel::Exterior
            }
        })
        .collect();

    let inner_count = labels.iter().filter(|&&l| l == CellLabel::Inner).count();
    if inner_count < 4 {
        return Err(Error::Resolution(format!(
            "inner region resolved by only {inner_count} cells (need >= 4); \
             increase n_cells or inner_radius/truncation_radius ratio"
        )));
    }

    let first_inner = labels.iter().position(|&l| l == CellLabel::Inner).unwrap();
    let last_inner = labels.iter().rposition(|&l| l == CellLabel::Inner).unwrap();
    // Centers are monotone in |x| toward the edges, so the Inner run is
    // contiguous by construction; verify anyway.
    if labels[first_inner..=last_inner]
        .iter()
        .any(|&l| l != CellLabel::Inner)
    {
        return Err(Error::Resolution("inner cell run is not contiguous".into()));
    }

    Ok(Grid {
        cell_centers: centers,
        cell_width: h,
        labels,
        inner_index_range: (first_inner, last_inner + 1),
        inner_radius: config.inner_radius,
        truncation_radius: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "r": 0.5, "s": 0.5, "c": 0.5,
            "inner_radius": 1.0, "truncation_radius": 20.0, "n_cells": 2000
        })
    }

    #[test]
    fn load_valid_default_config() {
        let cfg = load_config(&base_json().to_string()).unwrap();
        assert_eq!(cfg.alpha_r, 1.0);
        assert_eq!(cfg.alpha_s, 1.0);
        assert_eq!(cfg.alpha_c, 1.0);
        assert_eq!(cfg.dimension, 1);
        // 0.5 < 0.5 + 0.5
        assert!(cfg.profile_hypothesis());
    }

    #[test]
    fn accepts_l_alias() {
        let cfg = load_config(
            r#"{"r":0.5,"s":0.5,"c":0.5,"inner_radius":1,"L":20,"n_cells":2000}"#,
        )
        .unwrap();
        assert_eq!(cfg.truncation_radius, 20.0);
    }

    #[test]
    fn profile_hypothesis_fails_for_large_r_small_c() {
        let mut v = base_json();
        v["r"] = 0.9.into();
        v["c"] = 0.1.into();
        let cfg = load_config(&v.to_string()).unwrap();
        // 0.9 >= 0.5 + 0.1
        assert!(!cfg.profile_hypothesis());
    }

    #[test]
    fn rejects_out_of_range_exponent() {
        let mut v = base_json();
        v["r"] = 1.2.into();
        let err = load_config(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("r must lie in (0,1)"), "{err}");
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = load_config("{\"r\": 0.5,").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut v = base_json();
        v["bogus"] = 1.into();
        assert!(load_config(&v.to_string()).is_err());
    }

    #[test]
    fn grid_with_too_few_inner_cells_rejected() {
        // centers -1.5, -0.5, 0.5, 1.5: only two Inner cells
        let mut v = base_json();
        v["truncation_radius"] = 2.0.into();
        v["n_cells"] = 8.into();
        let cfg = load_config(&v.to_string()).unwrap();
        let grid = build_grid(&cfg).unwrap();
        assert_eq!(grid.inner_indices().len(), 4);

        let mut v = base_json();
        v["truncation_radius"] = 2.0.into();
        v["n_cells"] = 4.into();
        // n_cells = 4 fails config validation outright (minimum 8)
        assert!(load_config(&v.to_string()).is_err());

        // n_cells = 8 at L = 4 leaves 2 inner cells -> resolution error
        let mut v = base_json();
        v["truncation_radius"] = 4.0.into();
        v["n_cells"] = 8.into();
        let cfg = load_config(&v.to_string()).unwrap();
        assert!(matches!(build_grid(&cfg), Err(Error::Resolution(_))));
    }

    #[test]
    fn grid_small_example() {
        let mut v = base_json();
        v["truncation_radius"] = 2.0.into();
        v["n_cells"] = 8.into();
        let cfg = load_config(&v.to_string()).unwrap();
        let g = build_grid(&cfg).unwrap();
        assert_eq!(g.cell_width, 0.5);
        assert_eq!(g.inner_indices().len(), 4);
        assert_eq!(g.exterior_indices().count(), 4);
        let expect = [-1.75, -1.25, -0.75, -0.25, 0.25, 0.75, 1.25, 1.75];
        for (c, e) in g.cell_centers.iter().zip(expect) {
            assert!((c - e).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_default_resolution() {
        let cfg = load_config(&base_json().to_string()).unwrap();
        let g = build_grid(&cfg).unwrap();
        assert_eq!(g.n(), 2000);
        assert!((g.cell_width - 0.02).abs() < 1e-15);
        assert_eq!(g.inner_indices().len(), 100);
        // widths sum to 2L up to accumulated rounding
        let total: f64 = (0..g.n()).map(|_| g.cell_width).sum();
        assert!((total - 40.0).abs() <= 2000.0 * f64::EPSILON * 40.0);
        // labels partition into one contiguous inner run
        let (lo, hi) = g.inner_index_range;
        for i in 0..g.n() {
            let inner = i >= lo && i < hi;
            assert_eq!(g.is_inner(i), inner);
        }
    }
}
