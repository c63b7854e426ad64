//! Euler paths of h-transformed diffusions with a death clock.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{Grid, ScalarField};
use crate::geometry::{Domain, Point};
use crate::paths::PathRecord;
use crate::rng::{self, Rng};

pub const DEFAULT_BACKBONE_DT: f64 = 2e-5;
pub const DEFAULT_BACKBONE_STEPS: usize = 20_000_000;
const MIN_DT: f64 = 1e-14;
const MAX_REDRAWS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Largest Euler step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Near a boundary where h vanishes the step is at most (c·d)².
    #[serde(default = "default_boundary_factor")]
    pub boundary_factor: f64,
    #[serde(default = "default_steps")]
    pub max_steps: usize,
    /// Stop following a lineage once it has left every observation domain.
    #[serde(default = "default_prune")]
    pub prune: bool,
    /// Keep the path records in the tree.
    #[serde(default)]
    pub keep_paths: bool,
}

fn default_dt() -> f64 {
    DEFAULT_BACKBONE_DT
}
fn default_boundary_factor() -> f64 {
    0.2
}
fn default_steps() -> usize {
    DEFAULT_BACKBONE_STEPS
}
fn default_prune() -> bool {
    true
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_BACKBONE_DT,
            boundary_factor: default_boundary_factor(),
            max_steps: DEFAULT_BACKBONE_STEPS,
            prune: true,
            keep_paths: false,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return precondition("backbone step must be positive");
        }
        if !(self.boundary_factor > 0.0 && self.boundary_factor <= 1.0) {
            return precondition("boundary factor must lie in (0, 1]");
        }
        if self.max_steps == 0 {
            return precondition("max_steps must be positive");
        }
        Ok(())
    }
}

/// How a lineage ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    /// Died in the interior and split its label.
    Split,
    /// Reached ∂D where its h-function is positive.
    Exit,
    /// Left every observation domain; not followed further.
    Pruned,
}

/// First exit of a lineage from an observation domain; `node` is the tree
/// node whose own path made the crossing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub time: f64,
    pub point: Point,
    pub node: usize,
}

// interpolated value and slope of a line field at x
pub(crate) fn value_slope(f: &ScalarField, x: f64) -> (f64, f64) {
    match f.grid {
        Grid::Line { a, n, .. } => {
            let h = f.grid.spacing();
            let t = ((x - a) / h).clamp(0.0, (n + 1) as f64);
            let i = (t.floor() as usize).min(n);
            let lo = if i == 0 { f.boundary[0] } else { f.values[i - 1] };
            let hi = if i == n { f.boundary[1] } else { f.values[i] };
            let w = t - i as f64;
            (lo * (1.0 - w) + hi * w, (hi - lo) / h)
        }
        Grid::Polar { .. } => (f64::NAN, f64::NAN),
    }
}

pub(crate) fn interval(domain: &Domain) -> Result<(f64, f64)> {
    match *domain {
        Domain::Interval { a, b } => Ok((a, b)),
        Domain::Disk { .. } => Err(Error::Unsupported("backbones are implemented on intervals only".into())),
    }
}

// probability that a Brownian bridge of duration dt from x to q touches e,
// both on the same side
fn bridge_touch(x: f64, q: f64, e: f64, dt: f64) -> f64 {
    let (dx, dq) = (x - e, q - e);
    if dx * dq <= 0.0 {
        1.0
    } else {
        (-2.0 * dx * dq / dt).exp()
    }
}

/// One lineage of the h-process of ½Δ − l started at `start` at time `t0`.
pub(crate) struct Walker<'a> {
    pub h: &'a ScalarField,
    pub source: &'a ScalarField,
    pub domain: (f64, f64),
    pub cfg: &'a BackboneConfig,
}

impl Walker<'_> {
    /// Runs until death, exit or pruning. `crossings[j]` is filled when the
    /// path first leaves observation interval `obs[j]`.
    pub fn run(
        &self,
        start: Point,
        t0: f64,
        obs: &[(f64, f64)],
        crossings: &mut [Option<Crossing>],
        node: usize,
        rng: &mut Rng,
    ) -> Result<(PathRecord, Fate)> {
        let (a, b) = self.domain;
        let (ha, hb) = (self.h.boundary[0], self.h.boundary[1]);
        let (absorb_a, absorb_b) = (ha <= 0.0, hb <= 0.0);
        let c = self.cfg.boundary_factor;
        let threshold: f64 = Exp1.sample(rng);
        let mut hazard = 0.0;
        let mut x = start[0];
        if !(x > a && x < b) {
            return precondition(format!("backbone start {start:?} is not interior"));
        }
        let mut t = t0;
        let mut times = vec![t];
        let mut points = vec![start];
        for _ in 0..self.cfg.max_steps {
            if self.cfg.prune && !obs.is_empty() && crossings.iter().all(Option::is_some) {
                return Ok((PathRecord { times, points, truncated: false }, Fate::Pruned));
            }
            let mut dt = self.cfg.dt;
            if absorb_a {
                dt = dt.min((c * (x - a)).powi(2));
            }
            if absorb_b {
                dt = dt.min((c * (b - x)).powi(2));
            }
            let dt = dt.max(MIN_DT);
            let (hv, slope) = value_slope(self.h, x);
            if !(hv > 0.0) {
                return Err(Error::Invariant(format!("h vanishes at {x} along a backbone path")));
            }
            let drift = slope / hv;
            let rate = (self.source.eval([x, 0.0]) / hv).max(0.0);
            let sd = dt.sqrt();
            let mut q = f64::NAN;
            for attempt in 0..=MAX_REDRAWS {
                let z: f64 = StandardNormal.sample(rng);
                q = x + drift * dt + sd * z;
                if !((q <= a && absorb_a) || (q >= b && absorb_b)) {
                    break;
                }
                if attempt == MAX_REDRAWS {
                    return Err(Error::Invariant(format!("h-process pressed against the boundary at {x}")));
                }
            }
            t += dt;
            hazard += rate * dt;
            let exit = if q <= a {
                Some(a)
            } else if q >= b {
                Some(b)
            } else if !absorb_a && rng.random::<f64>() < bridge_touch(x, q, a, dt) {
                Some(a)
            } else if !absorb_b && rng.random::<f64>() < bridge_touch(x, q, b, dt) {
                Some(b)
            } else {
                None
            };
            let end = exit.unwrap_or(q);
            for (j, &(oa, ob)) in obs.iter().enumerate() {
                if crossings[j].is_some() {
                    continue;
                }
                let hit = if end <= oa {
                    Some(oa)
                } else if end >= ob {
                    Some(ob)
                } else if rng.random::<f64>() < bridge_touch(x, end, oa, dt) {
                    Some(oa)
                } else if rng.random::<f64>() < bridge_touch(x, end, ob, dt) {
                    Some(ob)
                } else {
                    None
                };
                if let Some(e) = hit {
                    crossings[j] = Some(Crossing {
                        time: t,
                        point: [e, 0.0],
                        node,
                    });
                }
            }
            times.push(t);
            points.push([end, 0.0]);
            if exit.is_some() {
                return Ok((PathRecord { times, points, truncated: false }, Fate::Exit));
            }
            if hazard >= threshold {
                return Ok((PathRecord { times, points, truncated: false }, Fate::Split));
            }
            x = q;
        }
        Err(Error::Truncated { survivors: 1 })
    }
}

/// h-transformed path from `y` with h = `gamma` and death rate
/// `source`/`gamma`, where ½Δγ − lγ = −Γ (the killing l enters only through
/// that identity). Returns the death position and the path. Reaching the
/// boundary is an invariant violation because γ is a potential.
pub fn gamma_transform_path(
    gamma: &ScalarField,
    source: &ScalarField,
    y: Point,
    cfg: &BackboneConfig,
    seed: u64,
) -> Result<(Point, PathRecord)> {
    cfg.validate()?;
    let domain = interval(&gamma.domain())?;
    if gamma.grid != source.grid {
        return precondition("γ and Γ must share a grid");
    }
    let walker = Walker {
        h: gamma,
        source,
        domain,
        cfg,
    };
    let mut r = rng::stream(seed, 0);
    let (path, fate) = walker.run(y, 0.0, &[], &mut [], 0, &mut r)?;
    match fate {
        Fate::Split => Ok((path.end(), path)),
        _ => Err(Error::Invariant("γ-transformed path reached the boundary".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use crate::stats::ks_two_sample;

    #[test]
    fn slope_of_a_linear_field_is_exact() {
        let d = Domain::unit_interval();
        let g = Grid::line(&d, 9).unwrap();
        let f = ScalarField::from_fn(&g, |p| 3.0 * p[0] + 1.0);
        let (v, s) = value_slope(&f, 0.37);
        assert!((v - 2.11).abs() < 1e-12 && (s - 3.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_death_density() {
        // γ = 2y(1−y), Γ ≡ 2: death density from 0.5 is 8 min(0.5,w)(1 − max(0.5,w))
        let d = Domain::unit_interval();
        let g = Grid::line(&d, 401).unwrap();
        let gamma = ScalarField::from_fn(&g, |p| 2.0 * p[0] * (1.0 - p[0]));
        let source = ScalarField::constant(&g, 2.0);
        let cfg = BackboneConfig {
            dt: 1e-4,
            ..Default::default()
        };
        let runs = 3000;
        let w: Vec<f64> = (0..runs)
            .map(|i| gamma_transform_path(&gamma, &source, pt(0.5), &cfg, 100 + i).unwrap().0[0])
            .collect();
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        // inverse CDF: F = 2w² below 1/2, 1 − 2(1−w)² above
        let mut r = rng::stream(5, 0);
        let exact: Vec<f64> = (0..runs)
            .map(|_| {
                let u: f64 = r.random();
                if u < 0.5 {
                    (u / 2.0).sqrt()
                } else {
                    1.0 - ((1.0 - u) / 2.0).sqrt()
                }
            })
            .collect();
        let ks = ks_two_sample(&w, &exact).unwrap();
        assert!(ks.pass_1pct(), "{ks:?}");
    }

    #[test]
    fn same_seed_same_path() {
        let d = Domain::unit_interval();
        let g = Grid::line(&d, 101).unwrap();
        let gamma = ScalarField::from_fn(&g, |p| 2.0 * p[0] * (1.0 - p[0]));
        let source = ScalarField::constant(&g, 2.0);
        let cfg = BackboneConfig::default();
        let a = gamma_transform_path(&gamma, &source, pt(0.3), &cfg, 9).unwrap();
        let b = gamma_transform_path(&gamma, &source, pt(0.3), &cfg, 9).unwrap();
        assert_eq!(a, b);
    }
}
