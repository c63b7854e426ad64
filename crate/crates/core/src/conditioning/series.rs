//! The total-mass density H_x^v(μ) = dP_{μ,⟨X_D,1⟩}/dP_{x,⟨X_D,1⟩}(v) and its
//! expansion over the number of surviving ancestors.
//!
//! For the lattice system μ is a set of particles; the n-th series term is the
//! law of the exit count restricted to exactly n ancestors with surviving
//! progeny. Terms are coefficients of t^n in Π_a (p₀(y_a) + t(W_a(s) − p₀(y_a)))^{K_a},
//! read off on the unit circle and inverted by FFT, so the series is exact
//! and its truncation at n_max is a reported diagnostic rather than an error
//! in the value.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::geometry::Point;
use crate::lattice_law::{from_spectrum, MassPgf};

use super::mass::MassGrid;

pub const DEFAULT_N_MAX: usize = 6;

/// H_x^v(μ) on every bin plus the v = 0 branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HvValues {
    /// e^{−⟨μ,U⟩ + U(x)}.
    pub extinction: f64,
    /// Per bin; None where P_x has no mass.
    pub bins: Vec<Option<f64>>,
}

/// Series terms on one bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HvSeriesValue {
    pub value: f64,
    /// Sum of the terms n = 1..=n_max.
    pub truncated: f64,
    /// Per-term contributions n = 1..=n_max.
    pub terms: Vec<f64>,
    /// 1 − truncated/value: the part of the series beyond n_max.
    pub tail_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct HvSeries {
    pgf: MassPgf,
    x_index: usize,
    pub grid: MassGrid,
    pub n_max: usize,
    base: Vec<f64>,
    base_extinction: f64,
}

impl HvSeries {
    pub fn new(pgf: MassPgf, x: Point, grid: MassGrid, n_max: usize) -> Result<Self> {
        if grid.n != pgf.n {
            return precondition("mass grid and generating function use different quanta");
        }
        let x_index = pgf
            .point_index(x)
            .ok_or_else(|| Error::Precondition(format!("base point {x:?} not tabulated")))?;
        let law = pgf.counts_law(&[(x_index, pgf.n as u64)])?;
        let (base, _) = grid.bin_lattice(&law);
        Ok(Self {
            base_extinction: law[0],
            pgf,
            x_index,
            grid,
            n_max,
            base,
        })
    }

    pub fn pgf(&self) -> &MassPgf {
        &self.pgf
    }

    pub fn x(&self) -> Point {
        self.pgf.points[self.x_index]
    }

    /// P_x bin masses (R_x).
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Particle counts of μ at tabulated points.
    pub fn counts(&self, mu: &[(Point, f64)]) -> Result<Vec<(usize, u64)>> {
        let nf = self.pgf.n as f64;
        mu.iter()
            .filter(|a| a.1 > 0.0)
            .map(|&(p, m)| {
                let i = self
                    .pgf
                    .point_index(p)
                    .ok_or_else(|| Error::Precondition(format!("atom {p:?} not tabulated")))?;
                let c = m * nf;
                if (c - c.round()).abs() > 1e-6 {
                    return Err(Error::Data(format!("atom mass {m} is not a multiple of 1/N")));
                }
                Ok((i, c.round() as u64))
            })
            .collect()
    }

    /// H on all bins from one inversion.
    pub fn eval_counts(&self, counts: &[(usize, u64)]) -> Result<HvValues> {
        let law = self.pgf.counts_law(counts)?;
        let (bins, _) = self.grid.bin_lattice(&law);
        Ok(HvValues {
            extinction: law[0] / self.base_extinction,
            bins: bins
                .iter()
                .zip(&self.base)
                .map(|(&p, &q)| (q > 0.0).then(|| p / q))
                .collect(),
        })
    }

    pub fn eval_all(&self, mu: &[(Point, f64)]) -> Result<HvValues> {
        self.eval_counts(&self.counts(mu)?)
    }

    /// H_x^v(μ) with the v = 0 branch at v = 0.
    pub fn eval(&self, mu: &[(Point, f64)], v: f64) -> Result<f64> {
        let h = self.eval_all(mu)?;
        if v == 0.0 {
            return Ok(h.extinction);
        }
        let i = self
            .grid
            .bin_of_mass(v)
            .ok_or_else(|| Error::Precondition(format!("mass {v} outside the bins")))?;
        h.bins[i].ok_or_else(|| Error::Data(format!("bin {i} carries no reference mass")))
    }

    /// Series terms for bin `i`; the sum over all n reproduces `eval`.
    pub fn series(&self, mu: &[(Point, f64)], i: usize) -> Result<HvSeriesValue> {
        let counts = self.counts(mu)?;
        let m = self.pgf.fft_len();
        let deg = self.n_max;
        // coefficients of t^0..t^deg per frequency
        let mut poly = vec![vec![Complex64::new(0.0, 0.0); deg + 1]; m];
        for p in poly.iter_mut() {
            p[0] = Complex64::new(1.0, 0.0);
        }
        for &(a, c) in &counts {
            let w = self.pgf.values(a);
            let p0 = self.pgf.cluster_law(a)[0];
            // (p0 + tQ)^c = Σ_n C(c,n) p0^{c−n} Q^n t^n
            let mut binom = vec![0.0; deg + 1];
            for (n, b) in binom.iter_mut().enumerate() {
                if n as u64 <= c {
                    *b = ln_choose(c, n as u64).exp() * p0.powi((c - n as u64) as i32);
                }
            }
            for (j, pj) in poly.iter_mut().enumerate() {
                let q = w[j] - p0;
                let mut factor = vec![Complex64::new(0.0, 0.0); deg + 1];
                let mut qn = Complex64::new(1.0, 0.0);
                for n in 0..=deg {
                    factor[n] = qn * binom[n];
                    qn *= q;
                }
                let mut out = vec![Complex64::new(0.0, 0.0); deg + 1];
                for (r, &x) in pj.iter().enumerate() {
                    for (s, &y) in factor.iter().enumerate().take(deg + 1 - r) {
                        out[r + s] += x * y;
                    }
                }
                *pj = out;
            }
        }
        let q = self.base[i];
        if q <= 0.0 {
            return Err(Error::Data(format!("bin {i} carries no reference mass")));
        }
        let mut terms = Vec::with_capacity(deg);
        for n in 1..=deg {
            let law = from_spectrum(poly.iter().map(|p| p[n]).collect());
            terms.push(self.grid.bin_lattice(&law).0[i] / q);
        }
        let value = self.eval_counts(&counts)?.bins[i].unwrap_or(0.0);
        let truncated: f64 = terms.iter().sum();
        if value > 0.0 && 1.0 - truncated / value > 0.05 {
            log::warn!("H_v series truncated at n = {deg} misses {:.1}% on bin {i}", 100.0 * (1.0 - truncated / value));
        }
        Ok(HvSeriesValue {
            value,
            truncated,
            terms,
            tail_fraction: if value > 0.0 { 1.0 - truncated / value } else { 0.0 },
        })
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

#[allow(non_snake_case)]
pub fn H_v_series(series: &HvSeries, mu: &[(Point, f64)], v: f64) -> Result<f64> {
    series.eval(mu, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pt, Domain};

    fn series() -> HvSeries {
        let d = Domain::unit_interval();
        let pgf = MassPgf::with_resolution(&d, 100, &[pt(0.5), pt(0.3)], 1024, 4096).unwrap();
        HvSeries::new(pgf, pt(0.5), MassGrid::covering(100, 6.0, 64).unwrap(), 40).unwrap()
    }

    #[test]
    fn base_point_is_one() {
        let s = series();
        let h = s.eval_all(&[(pt(0.5), 1.0)]).unwrap();
        assert!((h.extinction - 1.0).abs() < 1e-12);
        for b in h.bins.iter().flatten() {
            assert!((b - 1.0).abs() < 1e-9);
        }
        assert_eq!(s.eval(&[(pt(0.5), 1.0)], 0.0).unwrap(), h.extinction);
    }

    #[test]
    fn series_terms_sum_to_the_value() {
        let s = series();
        let mu = [(pt(0.3), 0.3), (pt(0.5), 0.2)];
        let r = s.series(&mu, 5).unwrap();
        // with 50 ancestors, 40 terms exhaust the series
        assert!(r.tail_fraction.abs() < 1e-8, "{r:?}");
        assert!(r.terms.iter().all(|&t| t >= -1e-12));
    }
}
