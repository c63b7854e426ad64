//! Conditioning on a Poisson sample Y_β of intensity β·X_D: the empty-sample
//! density H^{β,0}, the ρ^β recursion over subsets of marked boundary points,
//! and H^{β,k,z}.
//!
//! The exponent in every Laplace-functional role is u_β = V_D β (the
//! branching property); l_β = 4u_β appears only as a killing rate.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{BoundaryFunction, Grid, ScalarField};
use crate::geometry::{Domain, Point};
use crate::kernels::{harmonic_density_field, solve_dirichlet};
use crate::loglaplace::{default_tol, solve_VD, solve_precise};
use crate::model::Model;
use crate::moments::{MomentContext, MomentSpec};
use crate::partitions::partitions_of_mask;

pub const MAX_RHO_POINTS: usize = 4;

fn pairing(f: &ScalarField, mu: &[(Point, f64)]) -> f64 {
    mu.iter().map(|&(p, m)| m * f.eval(p)).sum()
}

fn check_mu(domain: &Domain, mu: &[(Point, f64)]) -> Result<()> {
    for &(p, m) in mu {
        if !domain.contains(p) {
            return precondition(format!("atom {p:?} is not interior"));
        }
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::Data(format!("atom mass {m}")));
        }
    }
    Ok(())
}

/// Laplace exponent of the constant β on the default grid: u_β for the
/// continuum, −N log(1 − V_D(N(1 − e^{−β/N}))/N) for the lattice system.
pub fn beta_exponent(domain: &Domain, beta: f64, model: Model) -> Result<ScalarField> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Data(format!("beta {beta} must be finite and nonnegative")));
    }
    match model {
        Model::Continuum => Ok(solve_VD(domain, &BoundaryFunction::constant(domain, beta), default_tol(domain))?.u),
        Model::Lattice { .. } => model.laplace_exponent(domain, &BoundaryFunction::constant(domain, beta)),
    }
}

/// H^{β,0}(μ) = e^{−⟨μ,u_β⟩}/e^{−u_β(x)}: the density of {Y_β = ∅}.
#[derive(Clone, Debug)]
pub struct HBeta0 {
    pub domain: Domain,
    pub x: Point,
    pub beta: f64,
    exponent: ScalarField,
}

impl HBeta0 {
    pub fn new(domain: &Domain, x: Point, beta: f64, model: Model) -> Result<Self> {
        if !domain.contains(x) {
            return precondition(format!("base point {x:?} is not interior"));
        }
        Ok(Self {
            domain: *domain,
            x,
            beta,
            exponent: beta_exponent(domain, beta, model)?,
        })
    }

    pub fn eval(&self, mu: &[(Point, f64)]) -> Result<f64> {
        check_mu(&self.domain, mu)?;
        Ok((self.exponent.eval(self.x) - pairing(&self.exponent, mu)).exp())
    }
}

#[allow(non_snake_case)]
pub fn H_beta_0(domain: &Domain, x: Point, mu: &[(Point, f64)], beta: f64, model: Model) -> Result<f64> {
    HBeta0::new(domain, x, beta, model)?.eval(mu)
}

/// Indicator of the boundary point `z` as boundary data.
pub fn point_indicator(domain: &Domain, z: Point) -> Result<BoundaryFunction> {
    match *domain {
        Domain::Interval { a, b } => {
            if z[0] == a {
                BoundaryFunction::endpoints(domain, 1.0, 0.0)
            } else if z[0] == b {
                BoundaryFunction::endpoints(domain, 0.0, 1.0)
            } else {
                precondition(format!("{z:?} is not an endpoint"))
            }
        }
        Domain::Disk { .. } => Err(Error::Unsupported(
            "point conditioning on a disk boundary has no atoms to condition on".into(),
        )),
    }
}

/// H^{β,k,z}(μ) = p_C(μ)/p_C(δ_x) with C = {1_{z_1}, …, 1_{z_k}} and exponent
/// data β: the density of {Y_β = {z_1,…,z_k}}.
#[derive(Clone, Debug)]
pub struct HBetaK {
    pub x: Point,
    pub z: Vec<Point>,
    ctx: MomentContext,
    norm: f64,
}

impl HBetaK {
    pub fn new(domain: &Domain, x: Point, beta: f64, z: &[Point], model: Model) -> Result<Self> {
        if z.is_empty() || z.len() > MAX_RHO_POINTS {
            return Err(Error::Limit(format!("{} sample points (supported 1..={MAX_RHO_POINTS})", z.len())));
        }
        let f = z.iter().map(|&p| point_indicator(domain, p)).collect::<Result<Vec<_>>>()?;
        let spec = MomentSpec::single(domain, BoundaryFunction::constant(domain, beta), f, (0..z.len()).collect())
            .with_model(model);
        let ctx = MomentContext::new(&spec)?;
        let norm = ctx.p_c(&[(x, 1.0)])?;
        if !(norm > 0.0) {
            return Err(Error::Precision("H^{β,k,z} normalization underflows".into()));
        }
        Ok(Self {
            x,
            z: z.to_vec(),
            ctx,
            norm,
        })
    }

    pub fn eval(&self, mu: &[(Point, f64)]) -> Result<f64> {
        Ok(self.ctx.p_c(mu)? / self.norm)
    }
}

/// ρ^β_C fields for every nonempty C ⊆ {1..k} over marked boundary points.
///
/// Continuum: singletons are the ℒ^{l_β} harmonic-measure densities
/// k_x^{l_β}(·, z_i) and ρ_C = G^{l_β}(2 Σ_{A} ρ_A ρ_{C∖A}) over ordered proper
/// splits. Lattice: ρ̃_C = N·E_y[e^{−β|X|} Π_i Z(z_i)] for one particle, which
/// solves the same recursion with l = 4V_D(N(1 − e^{−β/N})) and boundary value
/// N e^{−β/N} wherever all points of C coincide with the boundary point (one
/// particle may carry several sample points).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoTable {
    pub beta: f64,
    pub x: Point,
    pub z: Vec<Point>,
    pub model: Model,
    /// l_β.
    pub kill: ScalarField,
    /// Per-particle or continuum exponent: u_β, or V_D(N(1 − e^{−β/N})) on the lattice.
    pub v: ScalarField,
    fields: Vec<ScalarField>,
}

impl RhoTable {
    pub fn new(domain: &Domain, x: Point, beta: f64, z: &[Point], model: Model) -> Result<Self> {
        let k = z.len();
        if k == 0 || k > MAX_RHO_POINTS {
            return Err(Error::Limit(format!("{k} sample points (supported 1..={MAX_RHO_POINTS})")));
        }
        if !domain.contains(x) {
            return precondition(format!("base point {x:?} is not interior"));
        }
        let grid = Grid::default_for(domain);
        let data = model.map_value(beta);
        let bd = vec![data; grid.boundary_len()];
        let v = ScalarField::new(grid.clone(), solve_precise(&grid, &bd)?, bd)?;
        let kill = v.map(|a| 4.0 * a);
        let zi: Vec<usize> = z.iter().map(|&p| grid.boundary_index(p)).collect();
        for (&p, &i) in z.iter().zip(&zi) {
            let q = grid.boundary_point(i);
            if (q[0] - p[0]).abs() + (q[1] - p[1]).abs() > 1e-12 {
                return precondition(format!("{p:?} is not a boundary node"));
            }
        }
        let full = (1u32 << k) - 1;
        let mut fields: Vec<ScalarField> = vec![ScalarField::zeros(&grid)];
        for mask in 1..=full {
            let f = match model {
                Model::Continuum => {
                    if mask.count_ones() == 1 {
                        harmonic_density_field(&kill, x, zi[mask.trailing_zeros() as usize])?
                    } else {
                        Self::composite(&grid, &kill, &fields, mask, vec![0.0; grid.boundary_len()])?
                    }
                }
                Model::Lattice { n } => {
                    let n = n as f64;
                    let mut bd = vec![0.0; grid.boundary_len()];
                    let first = zi[mask.trailing_zeros() as usize];
                    if (0..k).filter(|&i| mask & (1 << i) != 0).all(|i| zi[i] == first) {
                        bd[first] = n * (-beta / n).exp();
                    }
                    Self::composite(&grid, &kill, &fields, mask, bd)?
                }
            };
            fields.push(f);
        }
        Ok(Self {
            beta,
            x,
            z: z.to_vec(),
            model,
            kill,
            v,
            fields,
        })
    }

    // ½Δρ_C − lρ_C = −2 Σ_{ordered proper A} ρ_A ρ_{C∖A}, ρ_C = bd on ∂D
    fn composite(grid: &Grid, kill: &ScalarField, fields: &[ScalarField], mask: u32, bd: Vec<f64>) -> Result<ScalarField> {
        let mut src = vec![0.0; grid.len()];
        let mut a = (mask - 1) & mask;
        while a > 0 {
            let (p, q) = (&fields[a as usize], &fields[(mask ^ a) as usize]);
            for (s, (x, y)) in src.iter_mut().zip(p.values.iter().zip(&q.values)) {
                *s += 2.0 * x * y;
            }
            a = (a - 1) & mask;
        }
        let values = solve_dirichlet(grid, Some(&kill.values), Some(&src), &bd)?;
        ScalarField::new(grid.clone(), values, bd)
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn full_mask(&self) -> u32 {
        (1u32 << self.k()) - 1
    }

    pub fn field(&self, mask: u32) -> Result<&ScalarField> {
        if mask == 0 || mask > self.full_mask() {
            return precondition(format!("mask {mask:#b} is not a nonempty subset"));
        }
        Ok(&self.fields[mask as usize])
    }

    /// Per-particle survival weight w = E_y e^{−β|X|} = 1 − v/N (lattice only).
    pub fn survival(&self, y: Point) -> Result<f64> {
        match self.model {
            Model::Lattice { n } => Ok(1.0 - self.v.eval(y) / n as f64),
            Model::Continuum => Err(Error::Unsupported("per-particle weights need the lattice model".into())),
        }
    }

    /// ρ_μ^{β,k}. Continuum: e^{−⟨μ,u_β⟩} Σ_π Π_r ⟨μ, ρ_{C_r}⟩. Lattice (μ of
    /// mass multiples of 1/N): Σ over partitions of the marks into blocks
    /// carried by distinct particles of μ.
    pub fn rho_mu(&self, mu: &[(Point, f64)]) -> Result<f64> {
        check_mu(&self.v.domain(), mu)?;
        let full = self.full_mask();
        match self.model {
            Model::Continuum => {
                let damp = (-pairing(&self.v, mu)).exp();
                let mut total = 0.0;
                for blocks in partitions_of_mask(full)? {
                    total += blocks.iter().map(|&b| pairing(&self.fields[b as usize], mu)).product::<f64>();
                }
                Ok(damp * total)
            }
            Model::Lattice { n } => {
                let nf = n as f64;
                let atoms: Vec<(Point, u64)> = mu
                    .iter()
                    .map(|&(p, m)| (p, (m * nf).round() as u64))
                    .filter(|a| a.1 > 0)
                    .collect();
                let mut log_damp = 0.0;
                for &(p, c) in &atoms {
                    log_damp += c as f64 * self.survival(p)?.ln();
                }
                let mut total = 0.0;
                for blocks in partitions_of_mask(full)? {
                    total += self.distinct_carriers(&blocks, &atoms)?;
                }
                Ok(log_damp.exp() * total)
            }
        }
    }

    // Σ over injective maps blocks → particles of Π ρ_B(y)/(N w(y)), by a DP
    // over atoms and the set of blocks already placed
    fn distinct_carriers(&self, blocks: &[u32], atoms: &[(Point, u64)]) -> Result<f64> {
        let m = blocks.len();
        let nf = match self.model {
            Model::Lattice { n } => n as f64,
            Model::Continuum => 1.0,
        };
        let mut dp = vec![0.0; 1 << m];
        dp[0] = 1.0;
        for &(p, c) in atoms {
            let w = self.survival(p)?;
            let g: Vec<f64> = blocks.iter().map(|&b| self.fields[b as usize].eval(p) / (nf * w)).collect();
            let mut next = dp.clone();
            for placed in 0..(1usize << m) {
                if dp[placed] == 0.0 {
                    continue;
                }
                let free = !placed & ((1 << m) - 1);
                let mut t = free;
                while t > 0 {
                    let size = t.count_ones() as u64;
                    if size <= c {
                        // falling factorial c (c−1) … (c − size + 1)
                        let ways: f64 = (0..size).map(|i| (c - i) as f64).product();
                        let prod: f64 = (0..m).filter(|r| t & (1 << r) != 0).map(|r| g[r]).product();
                        next[placed | t] += dp[placed] * ways * prod;
                    }
                    t = (t - 1) & free;
                }
            }
            dp = next;
        }
        Ok(dp[(1 << m) - 1])
    }

    /// H^{β,k,z}(μ) = ρ_μ/ρ_{δ_x}.
    pub fn h(&self, mu: &[(Point, f64)]) -> Result<f64> {
        let norm = self.rho_mu(&[(self.x, 1.0)])?;
        if !(norm > 0.0) {
            return Err(Error::Precision("ρ at the base point underflows".into()));
        }
        Ok(self.rho_mu(mu)? / norm)
    }
}

/// ρ^{β,k}_μ for a target measure; see [`RhoTable::rho_mu`].
pub fn rho_beta_k(domain: &Domain, beta: f64, z: &[Point], x: Point, mu: &[(Point, f64)], model: Model) -> Result<f64> {
    RhoTable::new(domain, x, beta, z, model)?.rho_mu(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    fn d() -> Domain {
        Domain::unit_interval()
    }

    #[test]
    fn beta_zero_and_base_point() {
        let h = HBeta0::new(&d(), pt(0.5), 0.0, Model::Continuum).unwrap();
        assert_eq!(h.eval(&[(pt(0.3), 2.0)]).unwrap(), 1.0);
        let h = HBeta0::new(&d(), pt(0.5), 2.0, Model::Continuum).unwrap();
        assert!((h.eval(&[(pt(0.5), 1.0)]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_beta_singleton_is_the_harmonic_density() {
        let t = RhoTable::new(&d(), pt(0.5), 1e-9, &[pt(1.0)], Model::Continuum).unwrap();
        let h = t.h(&[(pt(0.25), 1.0)]).unwrap();
        assert!((h - 0.5).abs() < 1e-6, "{h}");
    }

    #[test]
    fn continuum_rho_is_proportional_to_moment_fields() {
        let z = [pt(0.0), pt(1.0), pt(1.0)];
        let t = RhoTable::new(&d(), pt(0.5), 1.5, &z, Model::Continuum).unwrap();
        let hk = HBetaK::new(&d(), pt(0.5), 1.5, &z, Model::Continuum).unwrap();
        for mu in [vec![(pt(0.3), 0.7)], vec![(pt(0.2), 0.4), (pt(0.9), 1.1)]] {
            let a = t.h(&mu).unwrap();
            let b = hk.eval(&mu).unwrap();
            assert!((a - b).abs() < 1e-9 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn lattice_rho_matches_moments_including_shared_carriers() {
        let m = Model::Lattice { n: 100 };
        for z in [vec![pt(1.0)], vec![pt(0.0), pt(1.0)], vec![pt(1.0), pt(1.0), pt(0.0)]] {
            let t = RhoTable::new(&d(), pt(0.5), 0.8, &z, m).unwrap();
            let hk = HBetaK::new(&d(), pt(0.5), 0.8, &z, m).unwrap();
            let mu = [(pt(0.3), 0.57), (pt(0.8), 0.2)];
            let a = t.h(&mu).unwrap();
            let b = hk.eval(&mu).unwrap();
            assert!((a - b).abs() < 1e-8 * b, "{z:?}: {a} vs {b}");
        }
    }

    #[test]
    fn permutation_invariance() {
        let m = Model::Lattice { n: 100 };
        let a = HBetaK::new(&d(), pt(0.5), 1.0, &[pt(0.0), pt(1.0), pt(1.0)], m).unwrap();
        let b = HBetaK::new(&d(), pt(0.5), 1.0, &[pt(1.0), pt(0.0), pt(1.0)], m).unwrap();
        let mu = [(pt(0.3), 0.5), (pt(0.6), 0.25)];
        assert!((a.eval(&mu).unwrap() - b.eval(&mu).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn too_many_points() {
        let z = vec![pt(1.0); 5];
        assert!(matches!(RhoTable::new(&d(), pt(0.5), 1.0, &z, Model::Continuum), Err(Error::Limit(_))));
    }
}
