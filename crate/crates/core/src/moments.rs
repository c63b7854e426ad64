//! Moment recursions of exit measures over set partitions, for one domain or a
//! nested chain, and a finite-difference oracle built on the log-Laplace solver.
//!
//! Indices in `MomentSpec::c` are positions 0..|C| of a bitmask; each refers to
//! a test function in `f`, so repeated indices give powers of one functional.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{BoundaryFunction, Grid, ScalarField};
use crate::geometry::{check_chain, Domain, Point};
use crate::kernels::solve_dirichlet;
use crate::loglaplace::solve_precise;
use crate::model::Model;
use crate::partitions::partitions_of_mask;

pub const MAX_MOMENT_ORDER: usize = 6;
pub const MAX_ORACLE_ORDER: usize = 3;
pub const DEFAULT_ORACLE_STEP: f64 = 1e-3;
// relative rounding level of one precise log-Laplace evaluation
const EVAL_NOISE: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    /// Nested domains, innermost first; the last one is D.
    pub chain: Vec<Domain>,
    /// Exponent data on ∂D_j, one per chain domain.
    pub phi: Vec<BoundaryFunction>,
    /// Test functions on ∂D.
    pub f: Vec<BoundaryFunction>,
    pub c: Vec<usize>,
    #[serde(default)]
    pub model: Model,
}

impl MomentSpec {
    pub fn single(domain: &Domain, phi: BoundaryFunction, f: Vec<BoundaryFunction>, c: Vec<usize>) -> Self {
        Self {
            chain: vec![*domain],
            phi: vec![phi],
            f,
            c,
            model: Model::Continuum,
        }
    }

    pub fn with_model(mut self, model: Model) -> Self {
        self.model = model;
        self
    }

    pub fn outer(&self) -> &Domain {
        self.chain.last().expect("validated nonempty")
    }

    pub fn validate(&self) -> Result<()> {
        check_chain(&self.chain)?;
        self.model.validate()?;
        if self.phi.len() != self.chain.len() {
            return precondition("one exponent function per chain domain");
        }
        for (p, d) in self.phi.iter().zip(&self.chain) {
            if p.domain != *d {
                return precondition("exponent data on the wrong domain");
            }
            p.validate(true)?;
        }
        for f in &self.f {
            if f.domain != *self.outer() {
                return precondition("test functions must live on the outer boundary");
            }
            f.validate(true)?;
        }
        if self.c.len() > MAX_MOMENT_ORDER {
            return Err(Error::Limit(format!("|C| = {} above {MAX_MOMENT_ORDER}", self.c.len())));
        }
        if self.c.iter().any(|&i| i >= self.f.len()) {
            return precondition("index in C without a test function");
        }
        Ok(())
    }

    fn full_mask(&self) -> u32 {
        (1u32 << self.c.len()) - 1
    }
}

/// Values of a field on the boundary nodes of `inner`.
fn trace(field: &ScalarField, inner: &Grid) -> Vec<f64> {
    (0..inner.boundary_len())
        .map(|k| field.eval(inner.boundary_point(k)))
        .collect()
}

/// Exponent potentials U^I and moment fields n_A^I = (−1)^{|A|+1}∂_A U^I for
/// every nonempty A ⊆ C, on every level of the chain.
#[derive(Clone, Debug)]
pub struct MomentContext {
    spec: MomentSpec,
    /// U per level, innermost first.
    pub potentials: Vec<ScalarField>,
    // fields[level][mask] = n_mask; index 0 unused
    fields: Vec<Vec<ScalarField>>,
}

// Faà di Bruno: ∂_A F(g) = Σ_{π∈P(A)} F^{(|π|)}(g) Π_{B∈π} ∂_B g, pointwise.
// `outer[k][i]` is F^{(k)} at node i, `inner[mask][i]` is ∂_mask g.
fn compose(outer: &[Vec<f64>], inner: &[Vec<f64>], parts: &[Vec<Vec<u32>>]) -> Vec<Vec<f64>> {
    let len = outer[0].len();
    let mut out = vec![outer[0].clone()];
    for ps in parts.iter().skip(1) {
        let mut acc = vec![0.0; len];
        for p in ps {
            let d = &outer[p.len()];
            for (i, a) in acc.iter_mut().enumerate() {
                if d[i] != 0.0 {
                    *a += d[i] * p.iter().map(|&b| inner[b as usize][i]).product::<f64>();
                }
            }
        }
        out.push(acc);
    }
    out
}

fn derivative_table(len: usize, order: usize, base: &[f64], f: impl Fn(f64, &mut [f64])) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; len]; order + 1];
    let mut buf = vec![0.0; order + 1];
    for (i, &b) in base.iter().enumerate() {
        f(b, &mut buf);
        for k in 0..=order {
            t[k][i] = buf[k];
        }
    }
    t
}

impl MomentContext {
    pub fn new(spec: &MomentSpec) -> Result<Self> {
        spec.validate()?;
        let model = spec.model;
        let k = spec.chain.len();
        let m = spec.c.len();
        let full = spec.full_mask();
        let parts: Vec<Vec<Vec<u32>>> = (0..=full)
            .map(|a| if a == 0 { Ok(Vec::new()) } else { partitions_of_mask(a) })
            .collect::<Result<_>>()?;
        let grids: Vec<Grid> = spec.chain.iter().map(Grid::default_for).collect();
        // raw derivatives ∂_A U at the level above, as fields
        let mut above: Option<Vec<ScalarField>> = None;
        let mut potentials = vec![ScalarField::zeros(&grids[0]); k];
        let mut fields: Vec<Vec<ScalarField>> = vec![Vec::new(); k];
        for j in (0..k).rev() {
            let grid = &grids[j];
            let nb = grid.boundary_len();
            // boundary data h_A
            let mut h: Vec<Vec<f64>> = vec![spec.phi[j].on_grid(grid)?];
            match &above {
                Some(u) => {
                    for (b, t) in h[0].iter_mut().zip(trace(&u[0], grid)) {
                        *b += t;
                    }
                    for mask in 1..=full {
                        h.push(trace(&u[mask as usize], grid));
                    }
                }
                None => {
                    for mask in 1..=full {
                        h.push(if mask.count_ones() == 1 {
                            spec.f[spec.c[mask.trailing_zeros() as usize]].on_grid(grid)?
                        } else {
                            vec![0.0; nb]
                        });
                    }
                }
            }
            let gmap = derivative_table(nb, m, &h[0], |s, o| model.data_map(s, o));
            let g = compose(&gmap, &h, &parts);

            // V_∅ and its derivatives
            let v0 = solve_precise(grid, &g[0])?;
            let l: Vec<f64> = v0.iter().map(|v| 4.0 * v.max(0.0)).collect();
            let mut v: Vec<Vec<f64>> = vec![v0];
            for mask in 1..=full {
                let low = mask & mask.wrapping_neg();
                let mut src = vec![0.0; grid.len()];
                let mut b = (mask - 1) & mask;
                while b > 0 {
                    if b & low != 0 {
                        let (x, y) = (&v[b as usize], &v[(mask ^ b) as usize]);
                        for (s, (p, q)) in src.iter_mut().zip(x.iter().zip(y)) {
                            *s -= 4.0 * p * q;
                        }
                    }
                    b = (b - 1) & mask;
                }
                let has_src = mask.count_ones() > 1;
                v.push(solve_dirichlet(grid, Some(&l), has_src.then_some(&src[..]), &g[mask as usize])?);
            }

            let umap = derivative_table(grid.len(), m, &v[0], |x, o| model.exponent(x, o));
            let u = compose(&umap, &v, &parts);
            let ubd_map = derivative_table(nb, m, &g[0], |x, o| model.exponent(x, o));
            let ubd = compose(&ubd_map, &g, &parts);
            let raw: Vec<ScalarField> = u
                .into_iter()
                .zip(ubd)
                .map(|(vals, bd)| ScalarField::new(grid.clone(), vals, bd))
                .collect::<Result<_>>()?;
            potentials[j] = raw[0].clone();
            fields[j] = raw
                .iter()
                .enumerate()
                .map(|(mask, f)| {
                    if (mask as u32).count_ones().is_multiple_of(2) {
                        f.scaled(-1.0)
                    } else {
                        f.clone()
                    }
                })
                .collect();
            above = Some(raw);
        }
        Ok(Self {
            spec: spec.clone(),
            potentials,
            fields,
        })
    }

    /// n_A on the innermost domain, for A a mask over positions of C.
    pub fn field(&self, mask: u32) -> Result<&ScalarField> {
        if mask == 0 || mask > self.spec.full_mask() {
            return precondition(format!("mask {mask:#b} is not a nonempty subset of C"));
        }
        Ok(&self.fields[0][mask as usize])
    }

    pub fn n_c(&self, x: Point) -> Result<f64> {
        if self.spec.c.is_empty() {
            return precondition("n_C needs a nonempty C");
        }
        if !self.spec.chain[0].contains(x) {
            return precondition(format!("{x:?} is not interior to the innermost domain"));
        }
        Ok(self.field(self.spec.full_mask())?.eval(x))
    }

    pub fn p_c(&self, mu: &[(Point, f64)]) -> Result<f64> {
        self.p_mask(self.spec.full_mask(), mu)
    }

    /// p_A(μ) for a sub-collection A of C.
    pub fn p_mask(&self, mask: u32, mu: &[(Point, f64)]) -> Result<f64> {
        check_measure(&self.spec.chain[0], mu)?;
        if mask > self.spec.full_mask() {
            return precondition(format!("mask {mask:#b} is not a subset of C"));
        }
        let damp = (-mu.iter().map(|&(p, m)| m * self.potentials[0].eval(p)).sum::<f64>()).exp();
        if mask == 0 {
            return Ok(damp);
        }
        let pair = |b: u32| -> f64 {
            let f = &self.fields[0][b as usize];
            mu.iter().map(|&(p, m)| m * f.eval(p)).sum()
        };
        let mut total = 0.0;
        for blocks in partitions_of_mask(mask)? {
            total += blocks.iter().map(|&b| pair(b)).product::<f64>();
        }
        Ok(damp * total)
    }
}

fn check_measure(inner: &Domain, mu: &[(Point, f64)]) -> Result<()> {
    for &(p, m) in mu {
        if !inner.contains(p) {
            return precondition(format!("atom {p:?} is not interior to the innermost domain"));
        }
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::Data(format!("atom mass {m}")));
        }
    }
    Ok(())
}

/// n_C(x) on the innermost domain of the chain.
pub fn moment_n_C(spec: &MomentSpec, x: Point) -> Result<f64> {
    MomentContext::new(spec)?.n_c(x)
}

/// p_C(μ) = e^{−⟨μ,u⟩} Σ_{π(C)} Π_r ⟨μ, n_{C_r}⟩.
pub fn moment_p_C(spec: &MomentSpec, mu: &[(Point, f64)]) -> Result<f64> {
    MomentContext::new(spec)?.p_c(mu)
}

/// Chain versions; identical code paths, kept as separate entry points.
pub fn moment_n_C_extended(spec: &MomentSpec, x: Point) -> Result<f64> {
    moment_n_C(spec, x)
}

pub fn moment_p_C_extended(spec: &MomentSpec, mu: &[(Point, f64)]) -> Result<f64> {
    moment_p_C(spec, mu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    /// |D(h/2) − D(h)|/3 for the central-difference estimates D.
    pub error_estimate: f64,
    pub noise_floor: f64,
    pub step: f64,
}

/// P_μ exp(−Σ_j⟨X_{D_j},φ_j⟩ − Σ_i λ_i⟨X_D,f_{c_i}⟩) through nested solves.
pub fn laplace_functional(spec: &MomentSpec, lambda: &[f64], mu: &[(Point, f64)]) -> Result<f64> {
    let k = spec.chain.len();
    let mut outer: Option<ScalarField> = None;
    for j in (0..k).rev() {
        let grid = Grid::default_for(&spec.chain[j]);
        let mut bd = spec.phi[j].on_grid(&grid)?;
        match &outer {
            Some(o) => {
                for (b, t) in bd.iter_mut().zip(trace(o, &grid)) {
                    *b += t;
                }
            }
            None => {
                for (&lam, &i) in lambda.iter().zip(&spec.c) {
                    for (b, v) in bd.iter_mut().zip(spec.f[i].on_grid(&grid)?) {
                        *b += lam * v;
                    }
                }
            }
        }
        let model = spec.model;
        let g: Vec<f64> = bd.iter().map(|&s| model.map_value(s)).collect();
        let v = solve_precise(&grid, &g)?;
        let u: Vec<f64> = v.iter().map(|&x| model.exponent_value(x)).collect();
        let ub: Vec<f64> = g.iter().map(|&x| model.exponent_value(x)).collect();
        outer = Some(ScalarField::new(grid, u, ub)?);
    }
    let w = outer.expect("nonempty chain");
    Ok((-mu.iter().map(|&(p, m)| m * w.eval(p)).sum::<f64>()).exp())
}

// (−1)^m ∂^m/∂λ_1…∂λ_m of the Laplace functional by a tensor central stencil
fn mixed_difference(spec: &MomentSpec, mu: &[(Point, f64)], h: f64) -> Result<f64> {
    let m = spec.c.len();
    let mut acc = 0.0;
    for signs in 0..(1u32 << m) {
        let lam: Vec<f64> = (0..m).map(|i| if signs & (1 << i) != 0 { -h } else { h }).collect();
        let sign = if signs.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * laplace_functional(spec, &lam, mu)?;
    }
    let parity = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(parity * acc / (2.0 * h).powi(m as i32))
}

/// Independent value of p_C by differentiating the Laplace functional in λ,
/// with one Richardson extrapolation step.
pub fn laplace_derivative_oracle(spec: &MomentSpec, mu: &[(Point, f64)], h: f64) -> Result<OracleValue> {
    spec.validate()?;
    check_measure(&spec.chain[0], mu)?;
    let m = spec.c.len();
    if m > MAX_ORACLE_ORDER {
        return Err(Error::Limit(format!("oracle supports |C| ≤ {MAX_ORACLE_ORDER}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return precondition("step must be positive");
    }
    if m == 0 {
        let v = laplace_functional(spec, &[], mu)?;
        return Ok(OracleValue {
            value: v,
            error_estimate: 0.0,
            noise_floor: EVAL_NOISE,
            step: h,
        });
    }
    let coarse = mixed_difference(spec, mu, h)?;
    let fine = mixed_difference(spec, mu, 0.5 * h)?;
    let value = (4.0 * fine - coarse) / 3.0;
    let error_estimate = (fine - coarse).abs() / 3.0;
    let noise_floor = EVAL_NOISE * (1u32 << m) as f64 / h.powi(m as i32);
    if noise_floor > 1e-2 * value.abs().max(1.0) {
        return Err(Error::Precision(format!(
            "step {h:e} leaves rounding noise {noise_floor:e} in a derivative of order {m}"
        )));
    }
    Ok(OracleValue {
        value,
        error_estimate,
        noise_floor,
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    fn unit() -> Domain {
        Domain::unit_interval()
    }

    fn ones(d: &Domain) -> BoundaryFunction {
        BoundaryFunction::constant(d, 1.0)
    }

    #[test]
    fn hand_values() {
        let d = unit();
        let zero = BoundaryFunction::constant(&d, 0.0);
        let s1 = MomentSpec::single(&d, zero.clone(), vec![ones(&d)], vec![0]);
        assert!((moment_n_C(&s1, pt(0.37)).unwrap() - 1.0).abs() < 1e-12);
        let s2 = MomentSpec::single(&d, zero.clone(), vec![ones(&d)], vec![0, 0]);
        assert!((moment_n_C(&s2, pt(0.5)).unwrap() - 1.0).abs() < 1e-6);
        assert!((moment_p_C(&s2, &[(pt(0.5), 1.0)]).unwrap() - 2.0).abs() < 1e-6);
        let right = BoundaryFunction::endpoints(&d, 0.0, 1.0).unwrap();
        let s3 = MomentSpec::single(&d, zero.clone(), vec![right], vec![0]);
        assert!((moment_n_C(&s3, pt(0.3)).unwrap() - 0.3).abs() < 1e-12);
        let mu = [(pt(0.2), 0.7), (pt(0.6), 1.1)];
        let s4 = MomentSpec::single(&d, zero, vec![ones(&d)], vec![0]);
        assert!((moment_p_C(&s4, &mu).unwrap() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn empty_c_is_the_laplace_functional() {
        let d = unit();
        let s = MomentSpec::single(&d, BoundaryFunction::constant(&d, 2.0), vec![], vec![]);
        let mu = [(pt(0.5), 1.0)];
        let u = crate::loglaplace::solve_VD(&d, &BoundaryFunction::constant(&d, 2.0), 1e-10).unwrap();
        let want = (-u.u.eval(pt(0.5))).exp();
        assert!((moment_p_C(&s, &mu).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn oracle_matches_recursion_and_detects_cancellation() {
        let d = unit();
        let right = BoundaryFunction::endpoints(&d, 0.2, 1.0).unwrap();
        let s = MomentSpec::single(&d, BoundaryFunction::constant(&d, 0.5), vec![ones(&d), right], vec![0, 1, 1]);
        let mu = [(pt(0.4), 1.0)];
        let p = moment_p_C(&s, &mu).unwrap();
        let o = laplace_derivative_oracle(&s, &mu, DEFAULT_ORACLE_STEP).unwrap();
        assert!((p - o.value).abs() <= 1e-6f64.max(3.0 * o.error_estimate), "{p} vs {o:?}");
        assert!(matches!(
            laplace_derivative_oracle(&s, &mu, 1e-6),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn memo_is_reproducible_and_symmetric() {
        let d = unit();
        let a = BoundaryFunction::endpoints(&d, 1.0, 0.3).unwrap();
        let b = BoundaryFunction::endpoints(&d, 0.1, 2.0).unwrap();
        let phi = BoundaryFunction::constant(&d, 1.0);
        let s1 = MomentSpec::single(&d, phi.clone(), vec![a.clone(), b.clone()], vec![0, 1, 1]);
        let s2 = MomentSpec::single(&d, phi, vec![a, b], vec![1, 0, 1]);
        let mu = [(pt(0.3), 0.5), (pt(0.8), 1.0)];
        let x = moment_p_C(&s1, &mu).unwrap();
        assert_eq!(x.to_bits(), moment_p_C(&s1, &mu).unwrap().to_bits());
        assert!((x - moment_p_C(&s2, &mu).unwrap()).abs() < 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn chain_reductions() {
        let d = unit();
        let inner = Domain::interval(0.2, 0.8).unwrap();
        let zero_in = BoundaryFunction::constant(&inner, 0.0);
        // zero exponents: moments through D₁ equal those of D alone
        let chain = MomentSpec {
            chain: vec![inner, d],
            phi: vec![zero_in.clone(), BoundaryFunction::constant(&d, 0.0)],
            f: vec![ones(&d)],
            c: vec![0, 0],
            model: Model::Continuum,
        };
        let plain = MomentSpec::single(&d, BoundaryFunction::constant(&d, 0.0), vec![ones(&d)], vec![0, 0]);
        let a = moment_n_C_extended(&chain, pt(0.5)).unwrap();
        let b = moment_n_C(&plain, pt(0.5)).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        // exponent only on D: u^I is u_β restricted to D₁
        let beta = MomentSpec {
            chain: vec![inner, d],
            phi: vec![zero_in, BoundaryFunction::constant(&d, 2.0)],
            f: vec![],
            c: vec![],
            model: Model::Continuum,
        };
        let ctx = MomentContext::new(&beta).unwrap();
        let ub = crate::loglaplace::solve_VD(&d, &BoundaryFunction::constant(&d, 2.0), 1e-10).unwrap();
        for x in [0.25, 0.5, 0.7] {
            assert!((ctx.potentials[0].eval(pt(x)) - ub.u.eval(pt(x))).abs() < 1e-5);
        }
        let bad = MomentSpec { chain: vec![d, inner], ..beta };
        assert!(matches!(MomentContext::new(&bad), Err(Error::Unsupported(_))));
    }

    #[test]
    fn lattice_model_matches_its_oracle() {
        let d = unit();
        let right = BoundaryFunction::endpoints(&d, 0.0, 1.0).unwrap();
        let s = MomentSpec::single(&d, BoundaryFunction::constant(&d, 1.0), vec![ones(&d), right], vec![0, 1, 1])
            .with_model(Model::Lattice { n: 100 });
        let mu = [(pt(0.5), 1.0)];
        let p = moment_p_C(&s, &mu).unwrap();
        let o = laplace_derivative_oracle(&s, &mu, DEFAULT_ORACLE_STEP).unwrap();
        assert!((p - o.value).abs() <= 1e-6f64.max(3.0 * o.error_estimate), "{p} vs {o:?}");
        // first moment is exactly the mass under either model
        let m1 = MomentSpec::single(&d, BoundaryFunction::constant(&d, 0.0), vec![ones(&d)], vec![0])
            .with_model(Model::Lattice { n: 100 });
        assert!((moment_p_C(&m1, &mu).unwrap() - 1.0).abs() < 1e-12);
    }
}
