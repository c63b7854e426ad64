//! The log-Laplace equation u + G_D(2u²) = K_D f, its blow-up solution, and
//! path functionals built from the solutions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{blowup_profile, BoundaryFunction, Grid, ScalarField};
use crate::geometry::Domain;
use crate::kernels::{apply_operator, solve_dirichlet};
use crate::paths::PathRecord;

pub const DEFAULT_TOL_LINE: f64 = 1e-8;
pub const DEFAULT_TOL_DISK: f64 = 1e-6;
pub const DEFAULT_OMEGA: f64 = 0.5;
pub const MAX_PICARD: usize = 200;
pub const MAX_NEWTON: usize = 100;
/// Cells next to the boundary that carry the asymptotic profile in the blow-up solution.
pub const PROFILE_CELLS: usize = 3;
pub const MAX_LADDER_EXPONENT: i32 = 20;
pub const DEFAULT_LADDER_TOL_LINE: f64 = 1e-2;
pub const DEFAULT_LADDER_TOL_DISK: f64 = 5e-2;
/// Ladder convergence is measured where the distance to the boundary is at
/// least this fraction of the domain scale.
pub const LADDER_INTERIOR_FRACTION: f64 = 0.125;

pub fn default_tol(domain: &Domain) -> f64 {
    match domain {
        Domain::Interval { .. } => DEFAULT_TOL_LINE,
        Domain::Disk { .. } => DEFAULT_TOL_DISK,
    }
}

pub fn default_ladder_tol(domain: &Domain) -> f64 {
    match domain {
        Domain::Interval { .. } => DEFAULT_LADDER_TOL_LINE,
        Domain::Disk { .. } => DEFAULT_LADDER_TOL_DISK,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLaplaceSolution {
    pub u: ScalarField,
    pub boundary_data: BoundaryFunction,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Serialize)]
struct SolutionMeta<'a> {
    domain: &'a Domain,
    boundary_data: &'a [f64],
    residual: f64,
    iterations: usize,
    nodes: usize,
}

impl LogLaplaceSolution {
    /// Writes `<stem>.csv` (node, u) and `<stem>.json` metadata into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        self.u.write_csv(&dir.join(format!("{stem}.csv")))?;
        let meta = SolutionMeta {
            domain: &self.boundary_data.domain,
            boundary_data: &self.boundary_data.values,
            residual: self.residual_norm,
            iterations: self.iterations,
            nodes: self.u.grid.len(),
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// ‖u + G_D(2u²) − K_D f‖_∞ over the interior nodes.
pub fn residual(grid: &Grid, u: &[f64], bd: &[f64]) -> Result<f64> {
    let src: Vec<f64> = u.iter().map(|v| 2.0 * v * v).collect();
    let g = solve_dirichlet(grid, None, Some(&src), &vec![0.0; bd.len()])?;
    let k = solve_dirichlet(grid, None, None, bd)?;
    Ok(u.iter()
        .zip(&g)
        .zip(&k)
        .map(|((u, g), k)| (u + g - k).abs())
        .fold(0.0, f64::max))
}

/// V_D f on the default grid of `domain`.
#[allow(non_snake_case)]
pub fn solve_VD(domain: &Domain, f: &BoundaryFunction, tol: f64) -> Result<LogLaplaceSolution> {
    if f.domain != *domain {
        return precondition("boundary data on a different domain");
    }
    solve_on_grid(&Grid::default_for(domain), f, tol)
}

/// V_D f on a given grid: damped, clipped Picard iteration followed by Newton
/// once Picard stalls.
pub fn solve_on_grid(grid: &Grid, f: &BoundaryFunction, tol: f64) -> Result<LogLaplaceSolution> {
    f.validate(true)?;
    if !(tol > 0.0) {
        return precondition("tolerance must be positive");
    }
    let bd = f.on_grid(grid)?;
    let kf = solve_dirichlet(grid, None, None, &bd)?;
    let scale = kf.iter().cloned().fold(1.0, f64::max);
    let target = tol * scale;
    let n = grid.len();
    if bd.iter().all(|&v| v == 0.0) {
        let u = ScalarField::new(grid.clone(), vec![0.0; n], bd)?;
        return Ok(LogLaplaceSolution {
            u,
            boundary_data: f.clone(),
            residual_norm: 0.0,
            iterations: 0,
        });
    }

    let zero = vec![0.0; bd.len()];
    let mut u = kf.clone();
    let mut res = f64::INFINITY;
    let mut iterations = 0;
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..MAX_PICARD {
        let src: Vec<f64> = u.iter().map(|v| 2.0 * v * v).collect();
        let g = solve_dirichlet(grid, None, Some(&src), &zero)?;
        res = (0..n).map(|i| (u[i] + g[i] - kf[i]).abs()).fold(0.0, f64::max);
        if res <= target {
            break;
        }
        // stalled: hand over to Newton
        if history.len() >= 5 && res > 0.5 * history[history.len() - 5] {
            break;
        }
        history.push(res);
        for i in 0..n {
            let next = kf[i] - g[i];
            u[i] = ((1.0 - DEFAULT_OMEGA) * u[i] + DEFAULT_OMEGA * next).clamp(0.0, kf[i]);
        }
        iterations += 1;
    }
    let mut newton = 0;
    while res > target {
        if newton == MAX_NEWTON {
            return Err(Error::IterationLimit {
                iterations,
                residual: res,
            });
        }
        u = newton_step(grid, &u, &bd)?;
        for (v, k) in u.iter_mut().zip(&kf) {
            *v = v.clamp(0.0, *k);
        }
        res = residual(grid, &u, &bd)?;
        newton += 1;
        iterations += 1;
    }
    Ok(LogLaplaceSolution {
        u: ScalarField::new(grid.clone(), u, bd)?,
        boundary_data: f.clone(),
        residual_norm: res,
        iterations,
    })
}

/// V_D g for boundary data of either sign, converged to rounding level: Newton
/// from the solution for the positive part until updates stop shrinking.
pub fn solve_precise(grid: &Grid, bd: &[f64]) -> Result<Vec<f64>> {
    if bd.len() != grid.boundary_len() || bd.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("boundary data must be finite and match the grid".into()));
    }
    let pos: Vec<f64> = bd.iter().map(|v| v.max(0.0)).collect();
    let mut u = if pos.iter().all(|&v| v == 0.0) {
        vec![0.0; grid.len()]
    } else {
        let f = BoundaryFunction {
            domain: grid.domain(),
            values: pos.clone(),
        };
        solve_on_grid(grid, &f, 1e-10)?.u.values
    };
    // Newton in correction form; differences of neighbours keep the residual
    // free of the O(κ·eps) error of a direct solve
    let zero = vec![0.0; bd.len()];
    let mut last = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let lap = apply_operator(grid, None, &u, bd);
        let r: Vec<f64> = lap.iter().zip(&u).map(|(a, v)| a - 2.0 * v * v).collect();
        let l: Vec<f64> = u.iter().map(|v| 4.0 * v.max(0.0)).collect();
        let d = solve_dirichlet(grid, Some(&l), Some(&r), &zero)?;
        let scale = u.iter().fold(1e-300, |m: f64, v| m.max(v.abs()));
        let change = d.iter().fold(0.0, |m: f64, v| m.max(v.abs())) / scale;
        if change >= last {
            return Ok(u);
        }
        for (v, dv) in u.iter_mut().zip(&d) {
            *v += dv;
        }
        if change < 1e-16 {
            return Ok(u);
        }
        last = change;
    }
    Err(Error::IterationLimit {
        iterations: MAX_NEWTON,
        residual: last,
    })
}

// ½Δw − 4u w = −2u², the linearization of ½Δu = 2u² at u
fn newton_step(grid: &Grid, u: &[f64], bd: &[f64]) -> Result<Vec<f64>> {
    let l: Vec<f64> = u.iter().map(|v| 4.0 * v).collect();
    let s: Vec<f64> = u.iter().map(|v| 2.0 * v * v).collect();
    solve_dirichlet(grid, Some(&l), Some(&s), bd)
}

/// u_β = V_D β for each β.
pub fn u_beta_table(domain: &Domain, betas: &[f64]) -> Result<Vec<LogLaplaceSolution>> {
    let tol = default_tol(domain);
    betas
        .iter()
        .map(|&b| {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::Data(format!("beta {b} must be finite and nonnegative")));
            }
            solve_VD(domain, &BoundaryFunction::constant(domain, b), tol)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupSolution {
    pub u: ScalarField,
    pub beta_ladder: Vec<f64>,
    /// Relative interior change between the last two ladder rungs.
    pub interior_convergence: f64,
    /// The top ladder rung V_D β_max, a lower bound for `u`.
    pub top_rung: ScalarField,
}

impl BlowupSolution {
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        self.u.write_csv(&dir.join(format!("{stem}.csv")))?;
        let meta = serde_json::json!({
            "domain": self.u.domain(),
            "beta_ladder": self.beta_ladder,
            "interior_convergence": self.interior_convergence,
            "profile_cells": PROFILE_CELLS,
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

fn is_ladder_interior(grid: &Grid, i: usize) -> bool {
    grid.node_dist(i) >= LADDER_INTERIOR_FRACTION * grid.domain().scale()
}

/// The maximal solution u = V_D(∞) of ½Δu = 2u².
///
/// A doubling ladder V_D(2^k) runs until the relative change away from the
/// boundary layer drops below `tol`. The limit itself is computed on the grid with the
/// `PROFILE_CELLS` outermost cells held at the asymptotic profile, which the
/// finite ladder cannot reach there.
pub fn solve_blowup(domain: &Domain, tol: f64) -> Result<BlowupSolution> {
    domain.validate()?;
    let grid = Grid::default_for(domain);
    let vd_tol = default_tol(domain);
    let mut ladder = Vec::new();
    let mut prev: Option<ScalarField> = None;
    let mut change = f64::INFINITY;
    let mut k = 0;
    loop {
        if k > MAX_LADDER_EXPONENT {
            return Err(Error::LadderExhausted {
                beta: 2f64.powi(MAX_LADDER_EXPONENT),
                change,
            });
        }
        let beta = 2f64.powi(k);
        let sol = solve_on_grid(&grid, &BoundaryFunction::constant(domain, beta), vd_tol)?;
        ladder.push(beta);
        if let Some(p) = &prev {
            change = (0..grid.len())
                .filter(|&i| is_ladder_interior(&grid, i))
                .map(|i| (sol.u.values[i] - p.values[i]).abs() / sol.u.values[i])
                .fold(0.0, f64::max);
        }
        log::debug!("ladder beta {beta}: change {change:e}");
        prev = Some(sol.u);
        if change < tol {
            break;
        }
        k += 1;
    }
    let top = prev.expect("ladder has at least one rung");

    let (inner, pin) = shrunk_grid(&grid)?;
    let map = inner_index_map(&grid, &inner);
    let bd = vec![pin; inner.boundary_len()];
    let mut w: Vec<f64> = map.iter().map(|&i| top.values[i]).collect();
    let mut converged = false;
    for _ in 0..MAX_NEWTON {
        let next = newton_step(&inner, &w, &bd)?;
        let rel = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
            .fold(0.0, f64::max);
        w = next;
        if rel < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationLimit {
            iterations: MAX_NEWTON,
            residual: residual(&inner, &w, &bd)?,
        });
    }
    let mut values: Vec<f64> = (0..grid.len())
        .map(|i| blowup_profile(domain, grid.node_dist(i)))
        .collect();
    for (j, &i) in map.iter().enumerate() {
        values[i] = w[j];
    }
    let mut u = ScalarField::new(grid.clone(), values, vec![f64::INFINITY; grid.boundary_len()])?;
    u.blowup = true;
    if let Some(i) = (0..grid.len()).find(|&i| u.values[i] < top.values[i] * (1.0 - 1e-9)) {
        return Err(Error::Invariant(format!(
            "blow-up solution below the ladder at node {i}"
        )));
    }
    Ok(BlowupSolution {
        u,
        beta_ladder: ladder,
        interior_convergence: change,
        top_rung: top,
    })
}

// The grid with PROFILE_CELLS cells removed at the boundary, and the profile
// value on its boundary.
fn shrunk_grid(grid: &Grid) -> Result<(Grid, f64)> {
    let h = grid.spacing();
    let c = PROFILE_CELLS as f64;
    match *grid {
        Grid::Line { a, b, n } => {
            let g = Grid::line(&Domain::interval(a + c * h, b - c * h)?, n - 2 * PROFILE_CELLS)?;
            Ok((g, blowup_profile(&grid.domain(), c * h)))
        }
        Grid::Polar { center, radius, nr, nt } => {
            let inner = Domain::disk(center, radius - c * h)?;
            let g = Grid::polar(&inner, nr - PROFILE_CELLS, nt)?;
            Ok((g, blowup_profile(&grid.domain(), c * h)))
        }
    }
}

// full-grid index of each node of the shrunk grid
fn inner_index_map(grid: &Grid, inner: &Grid) -> Vec<usize> {
    match *grid {
        Grid::Line { .. } => (0..inner.len()).map(|i| i + PROFILE_CELLS).collect(),
        Grid::Polar { .. } => (0..inner.len()).collect(),
    }
}

/// φ(u_β) = 4∫_0^τ u_β(ξ_t) dt along a recorded path.
pub fn phi_functional(path: &PathRecord, u_beta: &ScalarField) -> Result<f64> {
    if let Some(p) = path.points.iter().rev().skip(1).find(|p| !u_beta.domain().contains(**p)) {
        return precondition(format!("path leaves the domain before its exit at {p:?}"));
    }
    Ok(4.0 * path.integral(u_beta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use approx::assert_relative_eq;

    fn unit() -> Domain {
        Domain::unit_interval()
    }

    #[test]
    fn zero_data_gives_zero() {
        let d = unit();
        let s = solve_VD(&d, &BoundaryFunction::constant(&d, 0.0), 1e-10).unwrap();
        assert!(s.u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_beta_matches_perturbation() {
        let d = unit();
        let s = solve_VD(&d, &BoundaryFunction::constant(&d, 0.01), 1e-10).unwrap();
        assert!(s.residual_norm <= 1e-10);
        // β − 2β²x(1−x) + O(β³)
        let v = s.u.eval(pt(0.5));
        assert!((v - 0.00995).abs() < 1e-6, "{v}");
    }

    #[test]
    fn residual_and_monotonicity() {
        let d = unit();
        let sols = u_beta_table(&d, &[0.5, 1.0, 2.0, 4.0, 64.0]).unwrap();
        for s in &sols {
            assert!(s.residual_norm <= 1e-8 * s.boundary_data.values[0].max(1.0));
        }
        for w in sols.windows(2) {
            assert!(w[0].u.values.iter().zip(&w[1].u.values).all(|(a, b)| a <= b));
        }
        let mid = &sols[4].u;
        assert_relative_eq!(mid.eval(pt(0.2)), mid.eval(pt(0.8)), max_relative = 1e-9);
    }

    // 1/z² behaviour: u = 1.5℘, so the half-width integral ∫_1^∞ dt/√(t³−1)
    // fixes u(½) = (3/8)(2I)²
    fn weierstrass_midpoint() -> f64 {
        // t = sec²θ turns the integrand into a bounded function on [0, π/2]
        let f = |th: f64| {
            let c = th.cos();
            let t = 1.0 / (c * c);
            2.0 * t / (t * t + t + 1.0).sqrt()
        };
        let m = 20_000;
        let h = std::f64::consts::FRAC_PI_2 / m as f64;
        let mut s = f(0.0) + 2.0;
        for i in 1..m {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        0.375 * (2.0 * integral).powi(2)
    }

    #[test]
    fn blowup_matches_closed_form() {
        let d = unit();
        let b = solve_blowup(&d, default_ladder_tol(&d)).unwrap();
        let exact = weierstrass_midpoint();
        assert_relative_eq!(exact, 8.8476, max_relative = 1e-4);
        assert_relative_eq!(b.u.eval(pt(0.5)), exact, max_relative = 1e-3);
        let h = b.u.grid.spacing();
        for k in 1..=6 {
            let x = k as f64 * h;
            let p = b.u.eval(pt(x)) * x * x;
            assert!((p - 1.5).abs() <= 0.075, "cell {k}: {p}");
        }
        assert_relative_eq!(b.u.eval(pt(0.1)), b.u.eval(pt(0.9)), max_relative = 1e-9);
        // interior increase along the ladder toward u
        assert!(b.top_rung.eval(pt(0.5)) <= b.u.eval(pt(0.5)));
        assert!(b.beta_ladder.windows(2).all(|w| w[1] == 2.0 * w[0]));
    }

    #[test]
    fn disk_solutions() {
        let d = Domain::unit_disk();
        let s = solve_VD(&d, &BoundaryFunction::constant(&d, 2.0), DEFAULT_TOL_DISK).unwrap();
        assert!(s.residual_norm <= DEFAULT_TOL_DISK * 2.0);
        let c = s.u.eval([0.0, 0.0]);
        assert!(c > 0.0 && c < 2.0);
        assert_relative_eq!(s.u.eval([0.5, 0.0]), s.u.eval([0.0, -0.5]), max_relative = 1e-3);
        let b = solve_blowup(&d, default_ladder_tol(&d)).unwrap();
        assert!(b.u.eval([0.0, 0.0]) >= b.top_rung.eval([0.0, 0.0]));
        let h = b.u.grid.spacing();
        for k in 1..=5 {
            let dist = k as f64 * h;
            let v = b.u.eval([1.0 - dist, 0.0]) * dist * dist;
            assert!((v - 1.5).abs() < 0.075, "ring {k}: {v}");
        }
    }

    #[test]
    fn phi_of_constant_field() {
        let d = unit();
        let g = Grid::default_for(&d);
        let rec = PathRecord {
            times: vec![0.0, 0.1, 0.25],
            points: vec![pt(0.5), pt(0.6), pt(1.0)],
            truncated: false,
        };
        assert_relative_eq!(phi_functional(&rec, &ScalarField::constant(&g, 0.5)).unwrap(), 0.5);
        assert_eq!(phi_functional(&rec, &ScalarField::zeros(&g)).unwrap(), 0.0);
    }
}
