//! Exact laws of the number of exiting particles for the branching particle
//! system, by inverting generating functions.
//!
//! One particle at y leaves Z particles on ∂D with E_y s^Z = 1 − V_D(N(1−s))(y)/N,
//! so solving the log-Laplace equation with complex data on |s| = 1 and an
//! inverse FFT gives P_y(Z = k). Products of generating functions give the laws
//! for lattice initial measures. Intervals and disks (radially) are supported.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{precondition, Error, Result};
use crate::field::{Grid, ScalarField};
use crate::geometry::{radial, Domain, Point};
use crate::kernels::solve_dirichlet;
use crate::loglaplace::solve_precise;

pub const DEFAULT_FFT_LEN: usize = 8192;
pub const DEFAULT_LINE_CELLS: usize = 2048;
pub const DEFAULT_RADIAL_CELLS: usize = 1024;
const NEWTON_TOL: f64 = 1e-13;
const ROUNDING_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 40;

/// Generating functions of single-particle exit counts at a set of points.
#[derive(Clone, Debug)]
pub struct MassPgf {
    pub domain: Domain,
    pub n: u32,
    pub points: Vec<Point>,
    fft_len: usize,
    // w[point][j] = E s_j^Z with s_j = e^{2πij/M}, for j ≤ M/2 (the rest by conjugation)
    w: Vec<Vec<Complex64>>,
}

// Discretized ½Δ on an interval or along the radius of a disk, with the
// boundary value entering the last (and, on an interval, the first) row.
struct Stencil {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    coords: Vec<f64>,
    two_sided: bool,
}

impl Stencil {
    fn new(domain: &Domain, cells: usize) -> Self {
        match *domain {
            Domain::Interval { a, b } => {
                let h = (b - a) / cells as f64;
                let c = 1.0 / (2.0 * h * h);
                let n = cells - 1;
                Self {
                    sub: vec![c; n],
                    diag: vec![-2.0 * c; n],
                    sup: vec![c; n],
                    coords: (1..cells).map(|i| a + i as f64 * h).collect(),
                    two_sided: true,
                }
            }
            Domain::Disk { radius, .. } => {
                let h = radius / cells as f64;
                let c = 1.0 / (2.0 * h * h);
                let mut sub = vec![0.0; cells];
                let mut diag = vec![-2.0 * c; cells];
                let mut sup = vec![c; cells];
                // ½Δ at the center is 2(V₁ − V₀)/h²
                diag[0] = -4.0 * c;
                sup[0] = 4.0 * c;
                for j in 1..cells {
                    let r = j as f64 * h;
                    sub[j] = c * (1.0 - h / (2.0 * r));
                    sup[j] = c * (1.0 + h / (2.0 * r));
                }
                Self {
                    sub,
                    diag,
                    sup,
                    coords: (0..cells).map(|j| j as f64 * h).collect(),
                    two_sided: false,
                }
            }
        }
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    // ½Δ_h v − 2v² at every node, for boundary value `g`
    fn residual(&self, v: &[Complex64], g: Complex64) -> Vec<Complex64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let lo = if i == 0 {
                    if self.two_sided {
                        g
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                } else {
                    v[i - 1]
                };
                let hi = if i + 1 == n { g } else { v[i + 1] };
                lo * self.sub[i] + v[i] * self.diag[i] + hi * self.sup[i] - v[i] * v[i] * 2.0
            })
            .collect()
    }

    // Newton correction: (½Δ_h − 4v)δ = −F
    fn newton_step(&self, v: &[Complex64], f: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        // forward sweep of the Thomas algorithm
        let mut prev_c = Complex64::new(0.0, 0.0);
        let mut prev_d = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let a = if i == 0 { 0.0 } else { self.sub[i] };
            let b = Complex64::new(self.diag[i], 0.0) - v[i] * 4.0;
            let m = b - prev_c * a;
            c[i] = Complex64::new(self.sup[i], 0.0) / m;
            d[i] = (-f[i] - prev_d * a) / m;
            prev_c = c[i];
            prev_d = d[i];
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    fn solve(&self, v: &mut [Complex64], g: Complex64) -> Result<()> {
        let scale = g.norm().max(1.0);
        let mut last = f64::INFINITY;
        for _ in 0..MAX_NEWTON {
            let f = self.residual(v, g);
            let dv = self.newton_step(v, &f);
            let change = dv.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            // updates stopped shrinking: at the rounding floor
            if change >= last && change < ROUNDING_TOL * scale {
                return Ok(());
            }
            for (x, d) in v.iter_mut().zip(&dv) {
                *x += d;
            }
            if change < NEWTON_TOL * scale {
                return Ok(());
            }
            last = change;
        }
        Err(Error::IterationLimit {
            iterations: MAX_NEWTON,
            residual: self.residual(v, g).iter().fold(0.0, |m, z| m.max(z.norm())),
        })
    }

    // linear interpolation at coordinate t, boundary value g at the end(s)
    fn interp(&self, v: &[Complex64], g: Complex64, t: f64) -> Complex64 {
        let h = if self.coords.len() > 1 {
            self.coords[1] - self.coords[0]
        } else {
            1.0
        };
        let first = self.coords[0];
        let n = self.len();
        let node = |i: isize| -> (f64, Complex64) {
            if i < 0 {
                (first - h, g)
            } else if i as usize >= n {
                (first + n as f64 * h, g)
            } else {
                (self.coords[i as usize], v[i as usize])
            }
        };
        let s = (t - first) / h;
        let i = s.floor() as isize;
        let (x0, v0) = node(i);
        let (_, v1) = node(i + 1);
        let w = (t - x0) / h;
        v0 * (1.0 - w) + v1 * w
    }
}

/// Generating function Σ_k x_k s_j^k at s_j = e^{2πij/M}, M = `len` ≥ x.len().
pub fn to_spectrum(x: &[f64], len: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|k| Complex64::new(x.get(k).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    buf
}

/// Coefficients from generating-function values on the unit circle.
pub fn from_spectrum(spectrum: Vec<Complex64>) -> Vec<f64> {
    let len = spectrum.len();
    let mut buf = spectrum;
    // E s^Z = Σ p_k s^k, so p_k = (1/M) Σ_j W(s_j) e^{−2πijk/M}
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    buf.iter().map(|z| z.re / len as f64).collect()
}

fn coordinate(domain: &Domain, p: Point) -> f64 {
    match *domain {
        Domain::Interval { .. } => p[0],
        Domain::Disk { center, .. } => radial(center, p),
    }
}

impl MassPgf {
    pub fn new(domain: &Domain, n: u32, points: &[Point]) -> Result<Self> {
        let cells = match domain {
            Domain::Interval { .. } => DEFAULT_LINE_CELLS,
            Domain::Disk { .. } => DEFAULT_RADIAL_CELLS,
        };
        Self::with_resolution(domain, n, points, cells, DEFAULT_FFT_LEN)
    }

    pub fn with_resolution(domain: &Domain, n: u32, points: &[Point], cells: usize, fft_len: usize) -> Result<Self> {
        domain.validate()?;
        if n == 0 {
            return precondition("n must be positive");
        }
        if cells < 8 || fft_len < 16 || !fft_len.is_power_of_two() {
            return precondition("need ≥ 8 cells and a power-of-two FFT length ≥ 16");
        }
        if let Some(p) = points.iter().find(|p| !domain.contains(**p)) {
            return precondition(format!("point {p:?} is not interior"));
        }
        let st = Stencil::new(domain, cells);
        let nf = n as f64;
        let coords: Vec<f64> = points.iter().map(|&p| coordinate(domain, p)).collect();
        let mut w = vec![vec![Complex64::new(0.0, 0.0); fft_len / 2 + 1]; points.len()];
        let mut v = vec![Complex64::new(0.0, 0.0); st.len()];
        let mut prev = v.clone();
        for j in 0..=fft_len / 2 {
            let th = 2.0 * PI * j as f64 / fft_len as f64;
            let s = Complex64::from_polar(1.0, th);
            let g = (Complex64::new(1.0, 0.0) - s) * nf;
            // secant predictor along the circle
            let guess: Vec<Complex64> = v.iter().zip(&prev).map(|(a, b)| a * 2.0 - b).collect();
            prev = v.clone();
            v = if j >= 2 { guess } else { v };
            st.solve(&mut v, g)?;
            for (wp, &t) in w.iter_mut().zip(&coords) {
                wp[j] = Complex64::new(1.0, 0.0) - st.interp(&v, g, t) / nf;
            }
        }
        Ok(Self {
            domain: *domain,
            n,
            points: points.to_vec(),
            fft_len,
            w,
        })
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.n as f64
    }

    // full spectrum from the half stored for `i`, transformed by `f`
    fn spectrum(&self, i: usize, f: impl Fn(Complex64) -> Complex64) -> Vec<Complex64> {
        let m = self.fft_len;
        let half = &self.w[i];
        (0..m)
            .map(|j| if j <= m / 2 { f(half[j]) } else { f(half[m - j]).conj() })
            .collect()
    }

    /// E s^Z at s_j = e^{2πij/M}, j = 0..M, for one particle at point `i`.
    pub fn values(&self, i: usize) -> Vec<Complex64> {
        self.spectrum(i, |z| z)
    }

    /// Index of `p` among the tabulated points.
    pub fn point_index(&self, p: Point) -> Option<usize> {
        self.points.iter().position(|q| q[0] == p[0] && q[1] == p[1])
    }

    fn invert(&self, spectrum: Vec<Complex64>) -> Vec<f64> {
        from_spectrum(spectrum).into_iter().map(|v| v.max(0.0)).collect()
    }

    /// P_y(Z = k), k = 0..M, for one particle at point `i`.
    pub fn cluster_law(&self, i: usize) -> Vec<f64> {
        self.invert(self.spectrum(i, |z| z))
    }

    /// ℕ^N_y(Z = k) = N·P_y(Z = k) for k ≥ 1, zero at k = 0.
    pub fn excursion_law(&self, i: usize) -> Vec<f64> {
        let nf = self.n as f64;
        let mut q = self.cluster_law(i);
        q[0] = 0.0;
        q.iter_mut().for_each(|v| *v *= nf);
        q
    }

    /// Law of the total exit count from `counts[a]` particles at point `a`.
    pub fn counts_law(&self, counts: &[(usize, u64)]) -> Result<Vec<f64>> {
        let mut spec = vec![Complex64::new(1.0, 0.0); self.fft_len];
        for &(i, c) in counts {
            if i >= self.points.len() {
                return precondition("point index out of range");
            }
            if c == 0 {
                continue;
            }
            let c = i32::try_from(c).map_err(|_| Error::Limit("particle count".into()))?;
            for (s, w) in spec.iter_mut().zip(self.spectrum(i, |z| z.powi(c))) {
                *s *= w;
            }
        }
        Ok(self.invert(spec))
    }

    /// Probability mass in the upper quarter of the FFT range: a wrap-around
    /// (aliasing) indicator for the law of `counts`.
    pub fn alias_mass(&self, counts: &[(usize, u64)]) -> Result<f64> {
        let law = self.counts_law(counts)?;
        Ok(law[3 * self.fft_len / 4..].iter().sum())
    }
}

/// Excursion densities n_k(y) = N·P_y(Z = k), k = 1..=kmax, for one particle
/// of the lattice system on a line grid. They solve the triangular system
/// ½Δn_k − 4u n_k = −2 Σ_{a+b=k; a,b≥1} n_a n_b with n_k = N·1{k=1} on the
/// boundary and u = V_D(N), so every field is a positive Green image and no
/// Fourier inversion is involved.
#[derive(Clone, Debug)]
pub struct ExcursionFields {
    pub n: u32,
    /// V_D(N) = Σ_k n_k.
    pub u: ScalarField,
    fields: Vec<ScalarField>,
    sources: Vec<ScalarField>,
}

impl ExcursionFields {
    pub fn new(domain: &Domain, n: u32, nodes: usize, kmax: usize) -> Result<Self> {
        let grid = Grid::line(domain, nodes)?;
        if n == 0 || kmax == 0 {
            return precondition("excursion fields need n ≥ 1 and kmax ≥ 1");
        }
        let nf = n as f64;
        let u_vals = solve_precise(&grid, &[nf, nf])?;
        let u = ScalarField::new(grid.clone(), u_vals, vec![nf, nf])?;
        let l: Vec<f64> = u.values.iter().map(|v| 4.0 * v).collect();
        let len = grid.len();
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(kmax);
        let mut srcs: Vec<Vec<f64>> = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let mut s = vec![0.0; len];
            for a in 1..=(k - 1) / 2 {
                let (x, y) = (&vals[a - 1], &vals[k - a - 1]);
                for i in 0..len {
                    s[i] += 4.0 * x[i] * y[i];
                }
            }
            if k % 2 == 0 && k >= 2 {
                let x = &vals[k / 2 - 1];
                for i in 0..len {
                    s[i] += 2.0 * x[i] * x[i];
                }
            }
            let bd = if k == 1 { [nf, nf] } else { [0.0, 0.0] };
            let v = solve_dirichlet(&grid, Some(&l), Some(&s), &bd)?;
            vals.push(v);
            srcs.push(s);
        }
        let zero = vec![0.0; 2];
        let mut fields = Vec::with_capacity(kmax);
        let mut sources = Vec::with_capacity(kmax);
        for (k, (v, s)) in vals.into_iter().zip(srcs).enumerate() {
            let bd = if k == 0 { vec![nf, nf] } else { zero.clone() };
            fields.push(ScalarField::new(grid.clone(), v, bd)?);
            // the source at the boundary is the limit along the grid
            let sb = vec![edge_extrapolate(&s, false), edge_extrapolate(&s, true)];
            sources.push(ScalarField::new(grid.clone(), s, sb)?);
        }
        Ok(Self { n, u, fields, sources })
    }

    pub fn kmax(&self) -> usize {
        self.fields.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.u.grid
    }

    /// n_k, k ≥ 1.
    pub fn field(&self, k: usize) -> Result<&ScalarField> {
        if k == 0 || k > self.kmax() {
            return precondition(format!("label {k} outside 1..={}", self.kmax()));
        }
        Ok(&self.fields[k - 1])
    }

    /// Γ_k = 2 Σ_{a+b=k} n_a n_b, the fragmentation source of n_k.
    pub fn source(&self, k: usize) -> Result<&ScalarField> {
        if k == 0 || k > self.kmax() {
            return precondition(format!("label {k} outside 1..={}", self.kmax()));
        }
        Ok(&self.sources[k - 1])
    }

    /// P_y(Z = k) for k = 0..=kmax.
    pub fn law_at(&self, y: Point) -> Vec<f64> {
        let nf = self.n as f64;
        let mut out = Vec::with_capacity(self.kmax() + 1);
        out.push(1.0 - self.u.eval(y) / nf);
        out.extend(self.fields.iter().map(|f| f.eval(y) / nf));
        out
    }
}

// linear extrapolation of interior values to the left or right boundary node
fn edge_extrapolate(v: &[f64], right: bool) -> f64 {
    let n = v.len();
    let (a, b) = if right { (v[n - 1], v[n - 2]) } else { (v[0], v[1]) };
    (2.0 * a - b).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use crate::particle::extinction_potential;

    #[test]
    fn extinction_and_mean_match_the_real_solver() {
        let d = Domain::unit_interval();
        let pgf = MassPgf::with_resolution(&d, 100, &[pt(0.5), pt(0.25)], 2048, 4096).unwrap();
        let q = pgf.cluster_law(0);
        let total: f64 = q.iter().sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
        // P(Z = 0) = 1 − V_D(N)/N
        let v = extinction_potential(&d, 100).unwrap().eval(pt(0.5));
        assert!((q[0] - (1.0 - v / 100.0)).abs() < 1e-5, "{} vs {}", q[0], 1.0 - v / 100.0);
        // critical branching: E Z = 1
        let mean: f64 = q.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - 1.0).abs() < 1e-6, "{mean}");
    }

    #[test]
    fn counts_law_is_a_convolution_power() {
        let d = Domain::unit_interval();
        let pgf = MassPgf::with_resolution(&d, 100, &[pt(0.4)], 1024, 4096).unwrap();
        let q = pgf.cluster_law(0);
        let two = pgf.counts_law(&[(0, 2)]).unwrap();
        for k in [0usize, 1, 5, 40] {
            let c: f64 = (0..=k).map(|j| q[j] * q[k - j]).sum();
            assert!((two[k] - c).abs() < 1e-12, "{k}: {} vs {c}", two[k]);
        }
    }

    #[test]
    fn disk_center_is_radial() {
        let d = Domain::unit_disk();
        let pgf = MassPgf::with_resolution(&d, 100, &[[0.0, 0.0], [0.3, 0.0], [0.0, 0.3]], 256, 8192).unwrap();
        let a = pgf.cluster_law(1);
        let b = pgf.cluster_law(2);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
        let mean: f64 = pgf.cluster_law(0).iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - 1.0).abs() < 1e-4, "{mean}");
    }

    #[test]
    fn spectrum_round_trip() {
        let x = [0.5, 0.25, 0.0, 0.25];
        let s = to_spectrum(&x, 8);
        // generating function at s = 1 is the total
        assert!((s[0].re - 1.0).abs() < 1e-15);
        let back = from_spectrum(s);
        for k in 0..8 {
            assert!((back[k] - x.get(k).copied().unwrap_or(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn excursion_fields_match_the_pgf() {
        let d = Domain::unit_interval();
        let ex = ExcursionFields::new(&d, 100, 1023, 400).unwrap();
        let pgf = MassPgf::with_resolution(&d, 100, &[[0.5, 0.0], [0.25, 0.0]], 1024, 4096).unwrap();
        for (i, y) in [0.5, 0.25].into_iter().enumerate() {
            let a = ex.law_at([y, 0.0]);
            let b = pgf.cluster_law(i);
            let err = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "y = {y}: {err:e}");
        }
        // the fields add up to V_D(N) up to the truncated tail
        let tail: f64 = (1..=400).map(|k| ex.field(k).unwrap().eval([0.5, 0.0])).sum();
        assert!(tail <= ex.u.eval([0.5, 0.0]));
    }
}
