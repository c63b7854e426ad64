//! Which exit-measure law the analytic formulas describe: the continuum
//! superprocess, or the branching particle system with mass quantum 1/N
//! started from lattice measures.
//!
//! For the particle system P_μ e^{−⟨X_D,f⟩} = e^{−⟨μ,U_f⟩} with
//! U_f = −N log(1 − V_D(N(1 − e^{−f/N}))/N), exactly. Both models are
//! expressed as the composition exponent ∘ V_D ∘ data map, so that derivative
//! formulas share one code path.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::field::{BoundaryFunction, ScalarField};
use crate::geometry::Domain;
use crate::loglaplace::{default_ladder_tol, default_tol, solve_VD, solve_blowup};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model {
    #[default]
    Continuum,
    Lattice { n: u32 },
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Model::Lattice { n } if n < 1 => precondition("lattice model needs n ≥ 1"),
            _ => Ok(()),
        }
    }

    /// s ↦ g'(s) and its derivatives of order 1..=k, written into out[0..=k].
    pub fn data_map(&self, s: f64, out: &mut [f64]) {
        match *self {
            Model::Continuum => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = s;
                if out.len() > 1 {
                    out[1] = 1.0;
                }
            }
            Model::Lattice { n } => {
                let n = n as f64;
                let e = (-s / n).exp();
                out[0] = -n * (-s / n).exp_m1();
                let mut c = e;
                for v in out.iter_mut().skip(1) {
                    *v = c;
                    c *= -1.0 / n;
                }
            }
        }
    }

    /// v ↦ U(v) and its derivatives of order 1..=k.
    pub fn exponent(&self, v: f64, out: &mut [f64]) {
        match *self {
            Model::Continuum => {
                out.iter_mut().for_each(|x| *x = 0.0);
                out[0] = v;
                if out.len() > 1 {
                    out[1] = 1.0;
                }
            }
            Model::Lattice { n } => {
                let n = n as f64;
                let q = n - v;
                out[0] = -n * (-v / n).ln_1p();
                let mut fact = 1.0;
                let mut pow = q;
                for (k, x) in out.iter_mut().enumerate().skip(1) {
                    *x = n * fact / pow;
                    fact *= k as f64;
                    pow *= q;
                }
            }
        }
    }

    pub fn map_value(&self, s: f64) -> f64 {
        let mut o = [0.0];
        self.data_map(s, &mut o);
        o[0]
    }

    pub fn exponent_value(&self, v: f64) -> f64 {
        let mut o = [0.0];
        self.exponent(v, &mut o);
        o[0]
    }

    /// U_f on the default grid of `domain`.
    pub fn laplace_exponent(&self, domain: &Domain, f: &BoundaryFunction) -> Result<ScalarField> {
        let g = BoundaryFunction {
            domain: *domain,
            values: f.values.iter().map(|&s| self.map_value(s)).collect(),
        };
        let v = solve_VD(domain, &g, default_tol(domain))?.u;
        Ok(v.map(|x| self.exponent_value(x)))
    }

    /// Extinction exponent: P_μ(X_D = 0) = e^{−⟨μ,U⟩}.
    pub fn extinction_exponent(&self, domain: &Domain) -> Result<ScalarField> {
        match *self {
            Model::Continuum => Ok(solve_blowup(domain, default_ladder_tol(domain))?.u),
            Model::Lattice { n } => {
                let v = self.cluster_intensity(domain)?;
                let n = n as f64;
                Ok(v.map(|x| -n * (-(x / n).min(1.0 - 1e-15)).ln_1p()))
            }
        }
    }

    /// ℕ_y(X_D ≠ 0): the blow-up solution, or V_D(N) for the particle system.
    pub fn cluster_intensity(&self, domain: &Domain) -> Result<ScalarField> {
        match *self {
            Model::Continuum => Ok(solve_blowup(domain, default_ladder_tol(domain))?.u),
            Model::Lattice { n } => {
                let f = BoundaryFunction::constant(domain, n as f64);
                Ok(solve_VD(domain, &f, default_tol(domain))?.u)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_tables() {
        let m = Model::Lattice { n: 10 };
        let mut d = [0.0; 4];
        m.data_map(2.0, &mut d);
        let e = (-0.2f64).exp();
        assert!((d[0] - 10.0 * (1.0 - e)).abs() < 1e-13);
        assert!((d[1] - e).abs() < 1e-14);
        assert!((d[2] + e / 10.0).abs() < 1e-14);
        assert!((d[3] - e / 100.0).abs() < 1e-14);
        m.exponent(3.0, &mut d);
        assert!((d[0] + 10.0 * 0.7f64.ln()).abs() < 1e-14);
        assert!((d[1] - 10.0 / 7.0).abs() < 1e-14);
        assert!((d[2] - 10.0 / 49.0).abs() < 1e-14);
        assert!((d[3] - 20.0 / 343.0).abs() < 1e-14);
        let h = 1e-5;
        let fd = (m.exponent_value(3.0 + h) - m.exponent_value(3.0 - h)) / (2.0 * h);
        assert!((fd - 10.0 / 7.0).abs() < 1e-8);
    }
}
