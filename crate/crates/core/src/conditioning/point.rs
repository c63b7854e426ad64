//! H_x^z: the density of a single point Z drawn from X_D/|X_D| (Z = Δ when
//! X_D = 0).
//!
//! P_μ(Z ∈ dz) = ∫_0^∞ E_μ[⟨X_D, 1_{dz}⟩ e^{−β|X_D|}] dβ, and for each β the
//! integrand is the first moment p_{\{z\}}(μ) with exponent data β. Every
//! quadrature node keeps the exponent and moment fields, so evaluating at a
//! new μ costs one pairing per node.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{BoundaryFunction, ScalarField};
use crate::geometry::{Domain, Point};
use crate::kernels::poisson_field;
use crate::model::Model;
use crate::moments::{MomentContext, MomentSpec};
use crate::paths::{sample_drift_path, DEFAULT_MAX_STEPS};
use crate::rng;
use crate::stats::Estimate;

use super::poisson::point_indicator;

/// Log-spaced trapezoid rule on [lo, hi] with head and tail remainders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaQuadrature {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    /// Largest accepted tail remainder, relative to the integral.
    pub tail_tol: f64,
}

impl Default for BetaQuadrature {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 1e3,
            nodes: 32,
            tail_tol: 5e-2,
        }
    }
}

impl BetaQuadrature {
    /// For the lattice system the integrand decays like e^{−β/N}; the upper
    /// limit is pushed to 60N where that factor is below 1e-26.
    pub fn for_model(model: Model) -> Self {
        match model {
            Model::Continuum => Self::default(),
            Model::Lattice { n } => Self {
                lo: 1e-4,
                hi: 60.0 * n as f64,
                nodes: 160,
                tail_tol: 1e-6,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.nodes >= 3) {
            return precondition("quadrature needs 0 < lo < hi and at least 3 nodes");
        }
        Ok(())
    }

    /// Nodes β_j and trapezoid weights for ∫ g(β) dβ = ∫ g(e^s) e^s ds.
    pub fn rule(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let h = (b - a) / (self.nodes - 1) as f64;
        let betas: Vec<f64> = (0..self.nodes).map(|j| (a + h * j as f64).exp()).collect();
        let weights = betas
            .iter()
            .enumerate()
            .map(|(j, &bt)| if j == 0 || j + 1 == self.nodes { 0.5 * h * bt } else { h * bt })
            .collect();
        (betas, weights)
    }
}

#[derive(Clone, Debug)]
struct Node {
    beta: f64,
    weight: f64,
    exponent: ScalarField,
    first: ScalarField,
}

#[derive(Clone, Debug)]
pub struct HPoint {
    pub domain: Domain,
    pub x: Point,
    pub z: Point,
    pub model: Model,
    pub quadrature: BetaQuadrature,
    nodes: Vec<Node>,
    extinction: ScalarField,
    norm: f64,
    norm_delta: f64,
    /// Tail remainder at the base point, relative to the integral.
    pub tail_fraction: f64,
}

impl HPoint {
    pub fn new(domain: &Domain, x: Point, z: Point, model: Model, quadrature: BetaQuadrature) -> Result<Self> {
        quadrature.validate()?;
        if !domain.contains(x) {
            return precondition(format!("base point {x:?} is not interior"));
        }
        let f = point_indicator(domain, z)?;
        let (betas, weights) = quadrature.rule();
        let mut nodes = Vec::with_capacity(betas.len());
        for (&beta, &weight) in betas.iter().zip(&weights) {
            let spec = MomentSpec::single(domain, BoundaryFunction::constant(domain, beta), vec![f.clone()], vec![0])
                .with_model(model);
            let ctx = MomentContext::new(&spec)?;
            nodes.push(Node {
                beta,
                weight,
                exponent: ctx.potentials[0].clone(),
                first: ctx.field(1)?.clone(),
            });
        }
        let extinction = model.extinction_exponent(domain)?;
        let mut h = Self {
            domain: *domain,
            x,
            z,
            model,
            quadrature,
            nodes,
            extinction,
            norm: 1.0,
            norm_delta: 1.0,
            tail_fraction: 0.0,
        };
        let base = [(x, 1.0)];
        let (value, tail) = h.integral(&base)?;
        if !(value > 0.0) {
            return Err(Error::Quadrature("P_x(Z = z) vanishes".into()));
        }
        h.tail_fraction = tail / value;
        if h.tail_fraction > quadrature.tail_tol {
            return Err(Error::Quadrature(format!(
                "tail remainder {:.2e} of the integral exceeds {:.1e}",
                h.tail_fraction, quadrature.tail_tol
            )));
        }
        h.norm = value;
        h.norm_delta = h.delta_probability(&base);
        Ok(h)
    }

    fn integrand(node: &Node, mu: &[(Point, f64)]) -> f64 {
        let e: f64 = mu.iter().map(|&(p, m)| m * node.exponent.eval(p)).sum();
        let f: f64 = mu.iter().map(|&(p, m)| m * node.first.eval(p)).sum();
        (-e).exp() * f
    }

    // (integral including head and tail, tail remainder)
    fn integral(&self, mu: &[(Point, f64)]) -> Result<(f64, f64)> {
        let vals: Vec<f64> = self.nodes.iter().map(|n| Self::integrand(n, mu)).collect();
        let body: f64 = vals.iter().zip(&self.nodes).map(|(v, n)| v * n.weight).sum();
        // the integrand is bounded and flat below lo
        let head = self.quadrature.lo * vals[0];
        let last = vals.len() - 1;
        let tail = match self.model {
            // e^{−β|X|} with |X| ≥ 1/N: the integrand decays at least like e^{−β/N}
            Model::Lattice { n } => vals[last] * n as f64,
            // power-law decay fitted on the last two nodes
            Model::Continuum => {
                let (b0, b1) = (self.nodes[last - 1].beta, self.nodes[last].beta);
                let (v0, v1) = (vals[last - 1], vals[last]);
                if v1 <= 0.0 || v0 <= 0.0 {
                    0.0
                } else {
                    let alpha = -(v1 / v0).ln() / (b1 / b0).ln();
                    if alpha <= 1.0 {
                        f64::INFINITY
                    } else {
                        v1 * b1 / (alpha - 1.0)
                    }
                }
            }
        };
        Ok((body + head + tail, tail))
    }

    /// P_μ(Z = z).
    pub fn probability(&self, mu: &[(Point, f64)]) -> Result<f64> {
        self.check(mu)?;
        Ok(self.integral(mu)?.0)
    }

    /// P_μ(Z = Δ) = P_μ(X_D = 0).
    pub fn delta_probability(&self, mu: &[(Point, f64)]) -> f64 {
        (-mu.iter().map(|&(p, m)| m * self.extinction.eval(p)).sum::<f64>()).exp()
    }

    /// H_x^z(μ).
    pub fn eval(&self, mu: &[(Point, f64)]) -> Result<f64> {
        Ok(self.probability(mu)? / self.norm)
    }

    /// H_x^Δ(μ) = P_μ(X_D = 0)/P_x(X_D = 0).
    pub fn eval_delta(&self, mu: &[(Point, f64)]) -> Result<f64> {
        self.check(mu)?;
        Ok(self.delta_probability(mu) / self.norm_delta)
    }

    fn check(&self, mu: &[(Point, f64)]) -> Result<()> {
        match mu.iter().find(|a| !self.domain.contains(a.0)) {
            Some(a) => precondition(format!("atom {:?} is not interior", a.0)),
            None => Ok(()),
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.beta).collect()
    }
}

#[allow(non_snake_case)]
pub fn H_point_z(domain: &Domain, x: Point, mu: &[(Point, f64)], z: Point, model: Model, quadrature: BetaQuadrature) -> Result<f64> {
    HPoint::new(domain, x, z, model, quadrature)?.eval(mu)
}

/// The two routes to k_x(y,z)Π_y^z(e^{−φ(u_β)}) up to the factor 1/k_x: the
/// Feynman–Kac path average E_y[e^{−∫ l(ξ)dt}; ξ_τ = z] over `paths` Brownian
/// paths, and the grid solution of ½Δh = l h with h = 1_z on the boundary.
/// Returns (path estimate, grid value).
pub fn feynman_kac_check(
    l: &ScalarField,
    y: Point,
    z: Point,
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<(Estimate, f64)> {
    let domain = l.domain();
    let f = point_indicator(&domain, z)?;
    let grid_value = poisson_field(l, &f)?.eval(y);
    let mut xs = Vec::with_capacity(paths);
    for i in 0..paths {
        let mut r = rng::stream(seed, i as u64);
        let rec = sample_drift_path(&domain, y, dt, DEFAULT_MAX_STEPS, |_| [0.0, 0.0], &mut r)?;
        let hit = rec.end()[0] == z[0] && rec.end()[1] == z[1];
        xs.push(if hit { (-rec.integral(l)?).exp() } else { 0.0 });
    }
    Ok((Estimate::of(&xs), grid_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    #[test]
    fn base_point_is_one_and_masses_add_up() {
        let d = Domain::unit_interval();
        let m = Model::Lattice { n: 100 };
        let q = BetaQuadrature::for_model(m);
        let h1 = HPoint::new(&d, pt(0.5), pt(1.0), m, q).unwrap();
        let h0 = HPoint::new(&d, pt(0.5), pt(0.0), m, q).unwrap();
        assert!((h1.eval(&[(pt(0.5), 1.0)]).unwrap() - 1.0).abs() < 1e-14);
        for mu in [vec![(pt(0.5), 1.0)], vec![(pt(0.3), 0.4), (pt(0.8), 0.2)]] {
            let total = h1.probability(&mu).unwrap() + h0.probability(&mu).unwrap() + h1.delta_probability(&mu);
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
        // by symmetry P_x(Z = 1) = (1 − P_x(X = 0))/2 at the midpoint
        let p = h1.probability(&[(pt(0.5), 1.0)]).unwrap();
        assert!((p - 0.5 * (1.0 - h1.delta_probability(&[(pt(0.5), 1.0)]))).abs() < 1e-6);
    }
}
