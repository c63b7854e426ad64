//! Branching Brownian particles of mass 1/N approximating super-Brownian exit
//! measures, single-ancestor clusters and their Poisson superposition.
//!
//! Each particle carries an exponential clock of rate Λ = branch rate + killing
//! bound. Between rings it moves by an exact Gaussian increment; boundary
//! crossings inside a step are detected with the Brownian-bridge crossing
//! probability, refining the step by bridge bisection down to `dt` when a
//! crossing is plausible. At a ring the particle branches critically
//! (0 or 2 offspring), is killed with probability k(x)/Λ, or carries on.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{BoundaryFunction, ScalarField};
use crate::geometry::{check_chain, radial, Domain, Point};
use crate::loglaplace::{default_tol, solve_VD};
use crate::rng::{self, Rng};

pub const MIN_PARTICLES_PER_MASS: u32 = 100;
pub const DEFAULT_MAX_EVENTS: u64 = 200_000_000;
pub const DEFAULT_REJECTION_BUDGET: u64 = 10_000;
// bridge crossing probabilities below this are treated as zero
const CROSSING_FLOOR: f64 = 1e-12;

/// Atomic initial measure: (location, mass) pairs.
pub type Atoms = Vec<(Point, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Particles per unit mass; the mass quantum is 1/n.
    pub n: u32,
    /// Defaults to 4n.
    #[serde(default)]
    pub branch_rate: Option<f64>,
    /// Time resolution of boundary crossings.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(skip)]
    pub killing: Option<ScalarField>,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

impl SimConfig {
    pub fn new(n: u32) -> Self {
        Self {
            n,
            branch_rate: None,
            dt: None,
            max_events: DEFAULT_MAX_EVENTS,
            killing: None,
        }
    }

    pub fn with_killing(mut self, k: ScalarField) -> Self {
        self.killing = Some(k);
        self
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn rate(&self) -> f64 {
        self.branch_rate.unwrap_or(4.0 * self.n as f64)
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or_else(|| (1e-5f64).min(0.1 / self.rate()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_PARTICLES_PER_MASS {
            return precondition(format!(
                "n = {} below the minimum {MIN_PARTICLES_PER_MASS}",
                self.n
            ));
        }
        let r = self.rate();
        if !(r > 0.0 && r.is_finite()) {
            return precondition("branch rate must be positive");
        }
        let dt = self.step();
        if !(dt > 0.0) || r * dt > 0.1 {
            return precondition(format!("branch_rate·dt = {} exceeds 0.1", r * dt));
        }
        if let Some(k) = &self.killing {
            if k.values.iter().chain(&k.boundary).any(|&v| v < 0.0 || v.is_nan()) {
                return Err(Error::Domain("killing rate must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Finite atomic measure on the boundary (or, for exterior starts, at the start).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExitMeasure {
    pub atoms: Vec<(Point, f64)>,
}

impl ExitMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    /// ⟨X, f⟩.
    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.atoms.iter().map(|(p, m)| m * f(*p)).sum()
    }

    /// Mass carried by atoms at `p` (exact match).
    pub fn mass_at(&self, p: Point) -> f64 {
        self.atoms.iter().filter(|a| a.0 == p).map(|a| a.1).sum()
    }

    pub fn add(&mut self, other: &ExitMeasure) {
        for &(p, m) in &other.atoms {
            self.push(p, m);
        }
    }

    pub fn push(&mut self, p: Point, m: f64) {
        if let Some(a) = self.atoms.iter_mut().find(|a| a.0 == p) {
            a.1 += m;
        } else {
            self.atoms.push((p, m));
        }
    }
}

/// Exit measures of one realization from every domain of a nested chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedExit {
    pub chain: Vec<Domain>,
    pub exits: Vec<ExitMeasure>,
}

impl NestedExit {
    pub fn last(&self) -> &ExitMeasure {
        self.exits.last().expect("chain is nonempty")
    }
}

/// Lattice rounding applied to an initial measure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rounding {
    pub requested_mass: f64,
    pub simulated_mass: f64,
    pub max_atom_error: f64,
}

#[derive(Clone, Copy, Debug)]
struct Particle {
    p: Point,
    level: usize,
}

// Per-level exit tallies in particle counts.
#[derive(Clone, Debug)]
struct Tally {
    dim: usize,
    atoms: Vec<(Point, u64)>,
}

impl Tally {
    fn add(&mut self, p: Point) {
        if self.dim == 1 {
            if let Some(a) = self.atoms.iter_mut().find(|a| a.0 == p) {
                a.1 += 1;
                return;
            }
        }
        self.atoms.push((p, 1));
    }
}

/// Prepared simulation of a domain chain; cheap to share between replicas.
#[derive(Clone, Debug)]
pub struct Simulator {
    chain: Vec<Domain>,
    config: SimConfig,
    rate: f64,
    lambda: f64,
    dt: f64,
}

impl Simulator {
    pub fn new(chain: &[Domain], config: &SimConfig) -> Result<Self> {
        check_chain(chain)?;
        config.validate()?;
        let outer = *chain.last().expect("checked nonempty");
        let kmax = match &config.killing {
            Some(k) => {
                if k.domain() != outer {
                    return precondition("killing field must live on the outermost domain");
                }
                let m = k.max_over(&outer);
                if !m.is_finite() {
                    return precondition("killing rate must be bounded on the domain");
                }
                m.max(0.0)
            }
            None => 0.0,
        };
        let rate = config.rate();
        Ok(Self {
            chain: chain.to_vec(),
            config: config.clone(),
            rate,
            lambda: rate + kmax,
            dt: config.step(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn chain(&self) -> &[Domain] {
        &self.chain
    }

    /// Particle counts per atom and the rounding report.
    pub fn discretize(&self, mu: &[(Point, f64)]) -> Result<(Vec<(Point, u64)>, Rounding)> {
        let n = self.config.n as f64;
        let mut out = Vec::new();
        let mut rep = Rounding::default();
        for &(p, m) in mu {
            if !(m >= 0.0) || !m.is_finite() || p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Data(format!("bad atom {p:?} with mass {m}")));
            }
            let c = (m * n).round() as u64;
            let err = (c as f64 / n - m).abs();
            rep.requested_mass += m;
            rep.simulated_mass += c as f64 / n;
            rep.max_atom_error = rep.max_atom_error.max(err);
            if c > 0 {
                out.push((p, c));
            }
        }
        if rep.max_atom_error > 1e-9 {
            log::warn!(
                "initial masses rounded to the 1/{} lattice (max error {:e})",
                self.config.n,
                rep.max_atom_error
            );
        }
        Ok((out, rep))
    }

    /// One realization from particle counts `start`.
    pub fn run_counts(&self, start: &[(Point, u64)], rng: &mut Rng) -> Result<NestedExit> {
        let dim = self.chain[0].dim();
        let mut run = Run {
            sim: self,
            tallies: vec![
                Tally {
                    dim,
                    atoms: Vec::new()
                };
                self.chain.len()
            ],
            events: 0,
        };
        let mut stack: Vec<Particle> = Vec::new();
        for &(p, c) in start {
            // exterior rule: X_D = δ_p for p outside D
            let mut level = 0;
            while level < self.chain.len() && !self.chain[level].contains(p) {
                for _ in 0..c {
                    run.tallies[level].add(p);
                }
                level += 1;
            }
            if level < self.chain.len() {
                stack.extend(std::iter::repeat_n(Particle { p, level }, c as usize));
            }
        }
        while let Some(part) = stack.pop() {
            run.life(part, &mut stack, rng)?;
        }
        let eps = self.config.epsilon();
        Ok(NestedExit {
            chain: self.chain.clone(),
            exits: run
                .tallies
                .into_iter()
                .map(|t| ExitMeasure {
                    atoms: t.atoms.into_iter().map(|(p, c)| (p, c as f64 * eps)).collect(),
                })
                .collect(),
        })
    }

    pub fn run(&self, mu: &[(Point, f64)], rng: &mut Rng) -> Result<NestedExit> {
        let (counts, _) = self.discretize(mu)?;
        self.run_counts(&counts, rng)
    }

    /// `replicas` independent realizations; replica i uses stream i of `seed`.
    pub fn replicas(&self, mu: &[(Point, f64)], seed: u64, replicas: usize) -> Result<Vec<NestedExit>> {
        let (counts, _) = self.discretize(mu)?;
        (0..replicas)
            .into_par_iter()
            .map(|i| self.run_counts(&counts, &mut rng::stream(seed, i as u64)))
            .collect()
    }
}

struct Run<'a> {
    sim: &'a Simulator,
    tallies: Vec<Tally>,
    events: u64,
}

impl Run<'_> {
    fn life(&mut self, mut part: Particle, stack: &mut Vec<Particle>, rng: &mut Rng) -> Result<()> {
        let sim = self.sim;
        loop {
            if self.events >= sim.config.max_events {
                return Err(Error::Truncated {
                    survivors: stack.len() + 1,
                });
            }
            self.events += 1;
            let t: f64 = Exp1.sample(rng);
            let t = t / sim.lambda;
            let sd = t.sqrt();
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = if self.tallies[0].dim == 2 {
                StandardNormal.sample(rng)
            } else {
                0.0
            };
            let end = [part.p[0] + sd * z0, part.p[1] + sd * z1];
            let res = { let from = part.p; self.segment(&mut part, from, end, t, rng) }; if res {
                return Ok(());
            }
            let u = rng.random::<f64>() * sim.lambda;
            if u < sim.rate {
                if rng.random::<bool>() {
                    stack.push(part);
                    continue;
                }
                return Ok(());
            }
            if let Some(k) = &sim.config.killing {
                if u < sim.rate + k.eval(part.p) {
                    return Ok(());
                }
            }
        }
    }

    // Brownian path from p0 to p1 over time `len`. Returns true once the
    // particle is frozen on the outermost boundary; otherwise part.p = p1.
    fn segment(&mut self, part: &mut Particle, p0: Point, p1: Point, len: f64, rng: &mut Rng) -> bool {
        let d = self.sim.chain[part.level];
        let inside = d.contains(p1);
        let (q, qa) = if inside {
            crossing_probability(&d, p0, p1, len)
        } else {
            (1.0, 0.0)
        };
        if q < CROSSING_FLOOR {
            part.p = p1;
            return false;
        }
        // On the outermost interval only the crossing side matters, and the
        // half-line bridge formula gives it without refinement.
        let last = part.level + 1 == self.sim.chain.len();
        if last && inside && d.dim() == 1 {
            let v = rng.random::<f64>();
            if v < q {
                let e = boundary_point(&d, p0, p1, 0.5, Some(v < qa));
                return self.exit_at(part, e);
            }
            part.p = p1;
            return false;
        }
        if len > self.sim.dt {
            let h = (0.25 * len).sqrt();
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = if d.dim() == 2 { StandardNormal.sample(rng) } else { 0.0 };
            let mid = [
                0.5 * (p0[0] + p1[0]) + h * z0,
                0.5 * (p0[1] + p1[1]) + h * z1,
            ];
            if self.segment(part, p0, mid, 0.5 * len, rng) {
                return true;
            }
            let from = part.p;
            return self.segment(part, from, p1, 0.5 * len, rng);
        }
        let (e, rest) = if !inside {
            let s = segment_exit_fraction(&d, p0, p1);
            (boundary_point(&d, p0, p1, s, None), 1.0 - s)
        } else if rng.random::<f64>() < q {
            let side = rng.random::<f64>() < qa / q;
            (boundary_point(&d, p0, p1, 0.5, Some(side)), 0.5)
        } else {
            part.p = p1;
            return false;
        };
        if self.exit_at(part, e) {
            return true;
        }
        self.segment(part, e, p1, rest * len, rng)
    }

    // records the exit at e and moves to the first enclosing domain containing e
    fn exit_at(&mut self, part: &mut Particle, e: Point) -> bool {
        let chain = &self.sim.chain;
        while part.level < chain.len() && !chain[part.level].contains(e) {
            self.tallies[part.level].add(e);
            part.level += 1;
        }
        part.p = e;
        part.level == chain.len()
    }
}

// Bridge crossing probability over a step, and the share owed to the left end
// of an interval.
fn crossing_probability(d: &Domain, p0: Point, p1: Point, len: f64) -> (f64, f64) {
    match *d {
        Domain::Interval { a, b } => {
            // both exponents below −30: skip the exp calls
            let far = 15.0 * len;
            if (p0[0] - a) * (p1[0] - a) > far && (b - p0[0]) * (b - p1[0]) > far {
                return (0.0, 0.0);
            }
            let qa = (-2.0 * (p0[0] - a) * (p1[0] - a) / len).exp();
            let qb = (-2.0 * (b - p0[0]) * (b - p1[0]) / len).exp();
            (qa + qb - qa * qb, qa)
        }
        Domain::Disk { center, radius } => {
            let d0 = radius - radial(center, p0);
            let d1 = radius - radial(center, p1);
            ((-2.0 * d0 * d1 / len).exp(), 0.0)
        }
    }
}

fn segment_exit_fraction(d: &Domain, p0: Point, p1: Point) -> f64 {
    match *d {
        Domain::Interval { a, b } => {
            let edge = if p1[0] <= a { a } else { b };
            ((edge - p0[0]) / (p1[0] - p0[0])).clamp(0.0, 1.0)
        }
        Domain::Disk { center, radius } => {
            let dd = [p1[0] - p0[0], p1[1] - p0[1]];
            let m = [p0[0] - center[0], p0[1] - center[1]];
            let aa = dd[0] * dd[0] + dd[1] * dd[1];
            if aa == 0.0 {
                return 1.0;
            }
            let bb = 2.0 * (m[0] * dd[0] + m[1] * dd[1]);
            let cc = m[0] * m[0] + m[1] * m[1] - radius * radius;
            ((-bb + (bb * bb - 4.0 * aa * cc).max(0.0).sqrt()) / (2.0 * aa)).clamp(0.0, 1.0)
        }
    }
}

// Boundary point at fraction s of p0→p1; `left` picks the interval end.
fn boundary_point(d: &Domain, p0: Point, p1: Point, s: f64, left: Option<bool>) -> Point {
    let q = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])];
    match *d {
        Domain::Interval { a, b } => {
            let at_a = left.unwrap_or((q[0] - a).abs() < (q[0] - b).abs());
            [if at_a { a } else { b }, 0.0]
        }
        Domain::Disk { center, radius } => {
            let r = radial(center, q).max(1e-300);
            [
                center[0] + radius * (q[0] - center[0]) / r,
                center[1] + radius * (q[1] - center[1]) / r,
            ]
        }
    }
}

/// X_D from μ, replica stream 0 of `seed`.
pub fn simulate_exit(domain: &Domain, mu: &[(Point, f64)], config: &SimConfig, seed: u64) -> Result<ExitMeasure> {
    let sim = Simulator::new(&[*domain], config)?;
    Ok(sim.run(mu, &mut rng::stream(seed, 0))?.exits.remove(0))
}

/// Exit measures along a nested chain from one realization.
pub fn simulate_nested(chain: &[Domain], mu: &[(Point, f64)], config: &SimConfig, seed: u64) -> Result<NestedExit> {
    Simulator::new(chain, config)?.run(mu, &mut rng::stream(seed, 0))
}

/// The particle system's extinction potential V_D(n): a single particle of
/// mass 1/n started at x leaves a nonzero exit measure with probability V_D(n)(x)/n.
pub fn extinction_potential(domain: &Domain, n: u32) -> Result<ScalarField> {
    let f = BoundaryFunction::constant(domain, n as f64);
    Ok(solve_VD(domain, &f, default_tol(domain))?.u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSample {
    pub start: Point,
    pub exit: NestedExit,
    /// ℕ_x(X_D ≠ 0) of the particle system, so that weighted averages of
    /// cluster functionals estimate ℕ_x-integrals.
    pub weight: f64,
    pub epsilon: f64,
    pub attempts: u64,
}

/// Draws single-ancestor clusters conditioned on a nonzero outermost exit.
#[derive(Clone, Debug)]
pub struct ClusterSampler {
    sim: Simulator,
    potential: ScalarField,
    pub budget: u64,
}

impl ClusterSampler {
    pub fn new(chain: &[Domain], config: &SimConfig) -> Result<Self> {
        let sim = Simulator::new(chain, config)?;
        let outer = *chain.last().expect("nonempty");
        let potential = extinction_potential(&outer, config.n)?;
        Ok(Self {
            sim,
            potential,
            budget: DEFAULT_REJECTION_BUDGET,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.sim.config.epsilon()
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// V_D(N), the total ℕ-mass of nonzero clusters at each point.
    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    pub fn sample(&self, x: Point, rng: &mut Rng) -> Result<ClusterSample> {
        let outer = self.sim.chain.last().expect("nonempty");
        if !outer.contains(x) {
            return precondition(format!("cluster start {x:?} is not interior"));
        }
        let eps = self.epsilon();
        let weight = self.potential.eval(x);
        if weight * eps < 1e-3 {
            log::warn!("survival probability {:e} at {x:?}; rejection will be slow", weight * eps);
        }
        let start = [(x, 1u64)];
        for attempt in 1..=self.budget {
            let exit = self.sim.run_counts(&start, rng)?;
            if !exit.last().is_zero() {
                return Ok(ClusterSample {
                    start: x,
                    exit,
                    weight,
                    epsilon: eps,
                    attempts: attempt,
                });
            }
        }
        Err(Error::RejectionBudget {
            attempts: self.budget,
        })
    }

    /// `count` clusters from `x`; cluster i uses stream i of `seed`.
    pub fn sample_many(&self, x: Point, seed: u64, count: usize) -> Result<Vec<ClusterSample>> {
        (0..count)
            .into_par_iter()
            .map(|i| self.sample(x, &mut rng::stream(seed, i as u64)))
            .collect()
    }

    /// Poisson superposition: Poisson(⟨μ, V_D(N)⟩) clusters started at points
    /// drawn ∝ V_D(N)(x_i) μ(x_i), their exits summed.
    pub fn compose(&self, mu: &[(Point, f64)], rng: &mut Rng) -> Result<NestedExit> {
        let weights: Vec<f64> = mu
            .iter()
            .map(|&(p, m)| if m > 0.0 { m * self.potential.eval(p) } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut out = NestedExit {
            chain: self.sim.chain.clone(),
            exits: vec![ExitMeasure::default(); self.sim.chain.len()],
        };
        if total <= 0.0 {
            return Ok(out);
        }
        let n = Poisson::new(total)
            .map_err(|e| Error::Data(format!("Poisson intensity {total}: {e}")))?
            .sample(rng) as u64;
        for _ in 0..n {
            let mut r = rng.random::<f64>() * total;
            let mut i = 0;
            while i + 1 < weights.len() && r >= weights[i] {
                r -= weights[i];
                i += 1;
            }
            let c = self.sample(mu[i].0, rng)?;
            for (acc, e) in out.exits.iter_mut().zip(&c.exit.exits) {
                acc.add(e);
            }
        }
        Ok(out)
    }
}

/// Single cluster from x at mass quantum ε (rounded to 1/n).
pub fn sample_cluster(domain: &Domain, x: Point, epsilon: f64, config: &SimConfig, seed: u64) -> Result<ClusterSample> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return precondition("cluster mass quantum must lie in (0, 0.01]");
    }
    let mut cfg = config.clone();
    cfg.n = (1.0 / epsilon).round() as u32;
    ClusterSampler::new(&[*domain], &cfg)?.sample(x, &mut rng::stream(seed, 0))
}

/// X_D from μ realized as a Poisson superposition of clusters.
pub fn poisson_compose(
    domain: &Domain,
    mu: &[(Point, f64)],
    config: &SimConfig,
    budget: u64,
    seed: u64,
) -> Result<ExitMeasure> {
    let mut s = ClusterSampler::new(&[*domain], config)?;
    s.budget = budget;
    Ok(s.compose(mu, &mut rng::stream(seed, 0))?.exits.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use crate::stats::Estimate;

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(50).validate().is_err());
        let mut c = SimConfig::new(100);
        assert!(c.validate().is_ok());
        c.dt = Some(1e-3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn exterior_atoms_and_zero_measure() {
        let d = Domain::unit_interval();
        let c = SimConfig::new(100);
        let x = simulate_exit(&d, &[(pt(1.5), 0.3)], &c, 1).unwrap();
        assert_eq!(x.atoms, vec![(pt(1.5), 0.3)]);
        assert!(simulate_exit(&d, &[], &c, 1).unwrap().is_zero());
    }

    #[test]
    fn determinism_and_boundary_support() {
        let d = Domain::unit_interval();
        let c = SimConfig::new(100);
        let a = simulate_exit(&d, &[(pt(0.4), 1.0)], &c, 9).unwrap();
        let b = simulate_exit(&d, &[(pt(0.4), 1.0)], &c, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.atoms.iter().all(|(p, _)| p[0] == 0.0 || p[0] == 1.0));
        let disk = Domain::unit_disk();
        let e = simulate_exit(&disk, &[([0.1, 0.2], 0.2)], &c, 3).unwrap();
        assert!(e.atoms.iter().all(|(p, _)| (radial([0.0, 0.0], *p) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mean_exit_mass_is_harmonic() {
        let d = Domain::unit_interval();
        let sim = Simulator::new(&[d], &SimConfig::new(100)).unwrap();
        let reps = sim.replicas(&[(pt(0.3), 1.0)], 5, 3000).unwrap();
        let total: Vec<f64> = reps.iter().map(|r| r.exits[0].total_mass()).collect();
        let right: Vec<f64> = reps.iter().map(|r| r.exits[0].mass_at(pt(1.0))).collect();
        assert!(Estimate::of(&total).within(1.0, 3.0));
        assert!(Estimate::of(&right).within(0.3, 3.0));
    }

    #[test]
    fn identical_nested_domains_give_identical_exits() {
        let d = Domain::unit_interval();
        let ne = simulate_nested(&[d, d], &[(pt(0.5), 0.5)], &SimConfig::new(100), 4).unwrap();
        assert_eq!(ne.exits[0], ne.exits[1]);
        let bad = [Domain::unit_interval(), Domain::interval(0.2, 0.8).unwrap()];
        assert!(matches!(
            simulate_nested(&bad, &[(pt(0.5), 0.5)], &SimConfig::new(100), 4),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn cluster_survival_matches_potential() {
        let d = Domain::unit_interval();
        let s = ClusterSampler::new(&[d], &SimConfig::new(100)).unwrap();
        let cl = s.sample_many(pt(0.5), 2, 2000).unwrap();
        assert!(cl.iter().all(|c| !c.exit.last().is_zero()));
        // attempts are geometric with success probability ε·V_D(N)(x)
        let att: Vec<f64> = cl.iter().map(|c| c.attempts as f64).collect();
        let e = Estimate::of(&att);
        let p = s.epsilon() * s.potential().eval(pt(0.5));
        assert!(e.within(1.0 / p, 3.0), "{e:?} vs {}", 1.0 / p);
    }

    #[test]
    fn compose_of_zero_measure_is_zero() {
        let d = Domain::unit_interval();
        let x = poisson_compose(&d, &[], &SimConfig::new(100), 100, 1).unwrap();
        assert!(x.is_zero());
    }
}
