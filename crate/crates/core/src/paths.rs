//! Euler–Maruyama Brownian paths run to the first exit from a domain.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::ScalarField;
use crate::geometry::{radial, Domain, Point};
use crate::rng::{self, Rng};

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_MAX_STEPS: usize = 10_000_000;

/// Sampled path: times and positions, the last entry on the boundary when the
/// path exited.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub truncated: bool,
}

impl PathRecord {
    pub fn exit_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn end(&self) -> Point {
        *self.points.last().unwrap_or(&[f64::NAN, f64::NAN])
    }

    /// ∫_0^τ g(ξ_t) dt by the trapezoidal rule. On the final step a
    /// non-finite boundary value of `g` is replaced by the left endpoint.
    pub fn integral(&self, g: &ScalarField) -> Result<f64> {
        if self.truncated {
            return Err(Error::Truncated { survivors: 1 });
        }
        let mut s = 0.0;
        let mut prev = match self.points.first() {
            Some(&p) => g.eval(p),
            None => return Ok(0.0),
        };
        for k in 1..self.points.len() {
            let dt = self.times[k] - self.times[k - 1];
            let mut cur = g.eval(self.points[k]);
            if !cur.is_finite() {
                cur = prev;
            }
            s += 0.5 * dt * (prev + cur);
            prev = cur;
        }
        Ok(s)
    }
}

/// Exit path from `x` with step `dt`, drawn from replica stream 0 of `seed`.
pub fn sample_exit_path(domain: &Domain, x: Point, dt: f64, seed: u64) -> Result<(Point, PathRecord)> {
    let mut r = rng::stream(seed, 0);
    let rec = sample_drift_path(domain, x, dt, DEFAULT_MAX_STEPS, |_| [0.0, 0.0], &mut r)?;
    Ok((rec.end(), rec))
}

/// Euler–Maruyama path of dξ = b(ξ)dt + dW stopped on leaving `domain`; the exit
/// point and time are placed by linear interpolation across the crossing step.
pub fn sample_drift_path(
    domain: &Domain,
    x: Point,
    dt: f64,
    max_steps: usize,
    drift: impl Fn(Point) -> Point,
    rng: &mut Rng,
) -> Result<PathRecord> {
    if !domain.contains(x) {
        return precondition(format!("start {x:?} is not interior"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return precondition("time step must be positive");
    }
    let two_d = domain.dim() == 2;
    let sd = dt.sqrt();
    let mut times = vec![0.0];
    let mut points = vec![x];
    let mut p = x;
    let mut t = 0.0;
    for _ in 0..max_steps {
        let b = drift(p);
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = if two_d { StandardNormal.sample(rng) } else { 0.0 };
        let q = [p[0] + b[0] * dt + sd * z0, p[1] + b[1] * dt + sd * z1];
        if !domain.contains(q) {
            let s = crossing_fraction(domain, p, q);
            let e = project(domain, [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
            times.push(t + s * dt);
            points.push(e);
            return Ok(PathRecord {
                times,
                points,
                truncated: false,
            });
        }
        t += dt;
        p = q;
        times.push(t);
        points.push(p);
    }
    Ok(PathRecord {
        times,
        points,
        truncated: true,
    })
}

/// Fraction s ∈ [0,1] of the segment p→q at which it meets the boundary.
fn crossing_fraction(domain: &Domain, p: Point, q: Point) -> f64 {
    match *domain {
        Domain::Interval { a, b } => {
            let edge = if q[0] <= a { a } else { b };
            ((edge - p[0]) / (q[0] - p[0])).clamp(0.0, 1.0)
        }
        Domain::Disk { center, radius } => {
            let d = [q[0] - p[0], q[1] - p[1]];
            let m = [p[0] - center[0], p[1] - center[1]];
            let aa = d[0] * d[0] + d[1] * d[1];
            let bb = 2.0 * (m[0] * d[0] + m[1] * d[1]);
            let cc = m[0] * m[0] + m[1] * m[1] - radius * radius;
            if aa == 0.0 {
                return 1.0;
            }
            ((-bb + (bb * bb - 4.0 * aa * cc).max(0.0).sqrt()) / (2.0 * aa)).clamp(0.0, 1.0)
        }
    }
}

fn project(domain: &Domain, p: Point) -> Point {
    match *domain {
        Domain::Interval { a, b } => [if (p[0] - a).abs() < (p[0] - b).abs() { a } else { b }, 0.0],
        Domain::Disk { center, radius } => {
            let r = radial(center, p).max(1e-300);
            [
                center[0] + radius * (p[0] - center[0]) / r,
                center[1] + radius * (p[1] - center[1]) / r,
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::geometry::pt;
    use crate::stats::Estimate;

    #[test]
    fn exit_frequency_and_mean_exit_time() {
        let d = Domain::unit_interval();
        let g = ScalarField::constant(&Grid::default_for(&d), 1.0);
        let mut hits = Vec::new();
        let mut taus = Vec::new();
        for i in 0..20_000 {
            let mut r = rng::stream(11, i);
            let rec = sample_drift_path(&d, pt(0.3), 1e-4, DEFAULT_MAX_STEPS, |_| [0.0, 0.0], &mut r).unwrap();
            hits.push(if rec.end()[0] == 1.0 { 1.0 } else { 0.0 });
            taus.push(rec.integral(&g).unwrap());
        }
        let e = Estimate::of(&hits);
        assert!(e.within(0.3, 3.0), "{e:?}");
        let t = Estimate::of(&taus);
        // G_D 1 (0.3) = 0.21; the discrete-monitoring bias is O(√dt) in τ
        assert!((t.mean - 0.21).abs() < 3.0 * t.se + 0.01, "{t:?}");
    }

    #[test]
    fn seed_repeat_gives_identical_path() {
        let d = Domain::unit_disk();
        let (e1, a) = sample_exit_path(&d, [0.2, 0.1], 1e-3, 5).unwrap();
        let (e2, b) = sample_exit_path(&d, [0.2, 0.1], 1e-3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(e1, e2);
        assert!((radial([0.0, 0.0], e1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let d = Domain::unit_interval();
        assert!(sample_exit_path(&d, pt(1.5), 1e-4, 1).is_err());
        assert!(sample_exit_path(&d, pt(0.5), 0.0, 1).is_err());
        let mut r = rng::stream(1, 0);
        let rec = sample_drift_path(&d, pt(0.5), 1e-8, 10, |_| [0.0, 0.0], &mut r).unwrap();
        assert!(rec.truncated);
        let g = ScalarField::constant(&Grid::default_for(&d), 1.0);
        assert!(rec.integral(&g).is_err());
    }
}
