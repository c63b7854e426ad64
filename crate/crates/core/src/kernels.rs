//! Linear kernels of ½Δ − l: harmonic measure, Poisson and Green operators,
//! harmonic-measure densities.
//!
//! Every operator reduces to one Dirichlet solve of ½Δ_h h − l h = −s: a
//! tridiagonal sweep on a line grid and a Jacobi-preconditioned conjugate
//! gradient on the (area-weighted, symmetric) polar grid.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{BoundaryFunction, Grid, ScalarField};
use crate::geometry::{radial, Domain, Point};

const CG_RTOL: f64 = 1e-14;

/// Solves ½Δ_h h − l h = −source with Dirichlet data `boundary`; returns interior values.
pub fn solve_dirichlet(
    grid: &Grid,
    l: Option<&[f64]>,
    source: Option<&[f64]>,
    boundary: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.len();
    if boundary.len() != grid.boundary_len() {
        return Err(Error::Precondition("boundary data length does not match grid".into()));
    }
    if let Some(l) = l {
        if l.len() != n {
            return Err(Error::Precondition("killing field length does not match grid".into()));
        }
        if l.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("killing rate must be nonnegative".into()));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("killing rate not finite at a node".into()));
        }
    }
    if let Some(s) = source {
        if s.len() != n || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("source term malformed".into()));
        }
    }
    if boundary.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("boundary data not finite".into()));
    }
    match *grid {
        Grid::Line { .. } => Ok(solve_line(grid, l, source, boundary)),
        Grid::Polar { .. } => solve_polar(grid, l, source, boundary, None),
    }
}

fn solve_line(grid: &Grid, l: Option<&[f64]>, source: Option<&[f64]>, boundary: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing();
    let h2 = 2.0 * h * h;
    // rows: h[i-1] - (2 + h2 l_i) h[i] + h[i+1] = -h2 s_i
    let mut diag: Vec<f64> = (0..n)
        .map(|i| -(2.0 + h2 * l.map_or(0.0, |l| l[i])))
        .collect();
    let mut rhs: Vec<f64> = (0..n).map(|i| -h2 * source.map_or(0.0, |s| s[i])).collect();
    rhs[0] -= boundary[0];
    rhs[n - 1] -= boundary[1];
    // Thomas sweep with unit off-diagonals
    for i in 1..n {
        let m = 1.0 / diag[i - 1];
        diag[i] -= m;
        rhs[i] -= m * rhs[i - 1];
    }
    let mut x = vec![0.0; n];
    x[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (rhs[i] - x[i + 1]) / diag[i];
    }
    x
}

struct PolarStencil {
    nr: usize,
    nt: usize,
    dr: f64,
    dth: f64,
}

impl PolarStencil {
    fn new(grid: &Grid) -> Self {
        match *grid {
            Grid::Polar { nr, nt, .. } => Self {
                nr,
                nt,
                dr: grid.spacing(),
                dth: grid.dtheta(),
            },
            _ => unreachable!(),
        }
    }

    fn area(&self, j: usize) -> f64 {
        if j == 0 {
            PI * (0.5 * self.dr).powi(2)
        } else {
            j as f64 * self.dr * self.dr * self.dth
        }
    }

    // radial coupling between ring j and j+1, angular coupling on ring j
    fn radial_c(&self, j: usize) -> f64 {
        0.5 * (j as f64 + 0.5) * self.dth
    }

    fn angular_c(&self, j: usize) -> f64 {
        0.5 / (j as f64 * self.dth)
    }

    /// y = M x with M = −(area-weighted ½Δ_h − l), boundary treated as zero.
    fn apply(&self, l: Option<&[f64]>, x: &[f64], y: &mut [f64]) {
        let (nr, nt) = (self.nr, self.nt);
        let idx = |j: usize, k: usize| 1 + (j - 1) * nt + k;
        let c0 = self.radial_c(0);
        let mut center = self.area(0) * l.map_or(0.0, |l| l[0]) * x[0];
        for k in 0..nt {
            center += c0 * (x[0] - x[idx(1, k)]);
        }
        y[0] = center;
        for j in 1..nr {
            let cin = self.radial_c(j - 1);
            let cout = self.radial_c(j);
            let ca = self.angular_c(j);
            let a = self.area(j);
            for k in 0..nt {
                let i = idx(j, k);
                let inner = if j == 1 { x[0] } else { x[idx(j - 1, k)] };
                let outer = if j + 1 < nr { x[idx(j + 1, k)] } else { 0.0 };
                let kp = x[idx(j, (k + 1) % nt)];
                let km = x[idx(j, (k + nt - 1) % nt)];
                y[i] = cin * (x[i] - inner) + cout * x[i] - cout * outer
                    + ca * (2.0 * x[i] - kp - km)
                    + a * l.map_or(0.0, |l| l[i]) * x[i];
            }
        }
    }

    fn diagonal(&self, l: Option<&[f64]>) -> Vec<f64> {
        let (nr, nt) = (self.nr, self.nt);
        let mut d = vec![0.0; 1 + (nr - 1) * nt];
        d[0] = nt as f64 * self.radial_c(0) + self.area(0) * l.map_or(0.0, |l| l[0]);
        for j in 1..nr {
            for k in 0..nt {
                let i = 1 + (j - 1) * nt + k;
                d[i] = self.radial_c(j - 1)
                    + self.radial_c(j)
                    + 2.0 * self.angular_c(j)
                    + self.area(j) * l.map_or(0.0, |l| l[i]);
            }
        }
        d
    }
}

fn solve_polar(
    grid: &Grid,
    l: Option<&[f64]>,
    source: Option<&[f64]>,
    boundary: &[f64],
    guess: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let st = PolarStencil::new(grid);
    let n = grid.len();
    let (nr, nt) = (st.nr, st.nt);
    let mut b = vec![0.0; n];
    for j in 0..nr {
        let a = st.area(j);
        if j == 0 {
            b[0] = a * source.map_or(0.0, |s| s[0]);
            continue;
        }
        for k in 0..nt {
            let i = 1 + (j - 1) * nt + k;
            b[i] = a * source.map_or(0.0, |s| s[i]);
            if j == nr - 1 {
                b[i] += st.radial_c(j) * boundary[k];
            }
        }
    }
    let diag = st.diagonal(l);
    let mut x = guess.map_or_else(|| vec![0.0; n], |g| g.to_vec());
    let mut ax = vec![0.0; n];
    st.apply(l, &x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let max_iter = 20 * n;
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= CG_RTOL * bnorm {
            return Ok(x);
        }
        st.apply(l, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if it + 1 == max_iter {
            return Err(Error::IterationLimit {
                iterations: max_iter,
                residual: rnorm / bnorm,
            });
        }
    }
    Ok(x)
}

/// (½Δ_h − l)h at interior nodes, unweighted.
pub fn apply_operator(grid: &Grid, l: Option<&[f64]>, h: &[f64], boundary: &[f64]) -> Vec<f64> {
    match *grid {
        Grid::Line { n, .. } => {
            let dx = grid.spacing();
            (0..n)
                .map(|i| {
                    let lo = if i == 0 { boundary[0] } else { h[i - 1] };
                    let hi = if i + 1 == n { boundary[1] } else { h[i + 1] };
                    ((hi - h[i]) - (h[i] - lo)) / (2.0 * dx * dx) - l.map_or(0.0, |l| l[i]) * h[i]
                })
                .collect()
        }
        Grid::Polar { nr, nt, .. } => {
            let st = PolarStencil::new(grid);
            let mut y = vec![0.0; h.len()];
            st.apply(l, h, &mut y);
            // boundary coupling and un-weighting
            for k in 0..nt {
                let i = 1 + (nr - 2) * nt + k;
                y[i] -= st.radial_c(nr - 1) * boundary[k];
            }
            for (i, v) in y.iter_mut().enumerate() {
                let j = if i == 0 { 0 } else { (i - 1) / nt + 1 };
                *v = -*v / st.area(j);
            }
            y
        }
    }
}

fn check_field_domain(domain: &Domain, field: &ScalarField) -> Result<()> {
    if field.grid.domain() != *domain {
        return Err(Error::Precondition("field is defined on a different domain".into()));
    }
    Ok(())
}

/// Checks that `x` is interior; points within one cell of the boundary are
/// moved one cell inward with a warning.
pub fn interior_point(grid: &Grid, x: Point) -> Result<Point> {
    let domain = grid.domain();
    if !domain.contains(x) {
        return Err(Error::Precondition(format!("point {x:?} is not interior to {domain:?}")));
    }
    let h = grid.spacing();
    let d = domain.dist_to_boundary(x);
    if d >= h {
        return Ok(x);
    }
    log::warn!("point {x:?} within one cell of the boundary; snapped inward");
    Ok(match domain {
        Domain::Interval { a, b } => {
            if x[0] - a < b - x[0] {
                [a + h, 0.0]
            } else {
                [b - h, 0.0]
            }
        }
        Domain::Disk { center, radius } => {
            let r = radial(center, x);
            let s = (radius - h) / r;
            [center[0] + s * (x[0] - center[0]), center[1] + s * (x[1] - center[1])]
        }
    })
}

fn killing(l: &ScalarField) -> Result<Option<&[f64]>> {
    if l.values.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    if l.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("killing rate must be nonnegative".into()));
    }
    Ok(Some(&l.values))
}

/// The field K_D^l f on the grid of `l`.
pub fn poisson_field(l: &ScalarField, f: &BoundaryFunction) -> Result<ScalarField> {
    f.validate(false)?;
    let bd = f.on_grid(&l.grid)?;
    let values = solve_dirichlet(&l.grid, killing(l)?, None, &bd)?;
    ScalarField::new(l.grid.clone(), values, bd)
}

/// The field G_D^l s on the grid of `l`.
pub fn green_field(l: &ScalarField, s: &ScalarField) -> Result<ScalarField> {
    if s.grid != l.grid {
        return Err(Error::Precondition("source and killing fields on different grids".into()));
    }
    let bd = vec![0.0; l.grid.boundary_len()];
    let values = solve_dirichlet(&l.grid, killing(l)?, Some(&s.values), &bd)?;
    ScalarField::new(l.grid.clone(), values, bd)
}

/// K_D^l f(x) = Π_x^l f(ξ_τ).
pub fn poisson_op(domain: &Domain, l: &ScalarField, f: &BoundaryFunction, x: Point) -> Result<f64> {
    check_field_domain(domain, l)?;
    let x = interior_point(&l.grid, x)?;
    Ok(poisson_field(l, f)?.eval(x))
}

/// G_D^l s(x) = Π_x^l ∫_0^τ s(ξ_t) dt.
pub fn green_op(domain: &Domain, l: &ScalarField, s: &ScalarField, x: Point) -> Result<f64> {
    check_field_domain(domain, l)?;
    let x = interior_point(&l.grid, x)?;
    Ok(green_field(l, s)?.eval(x))
}

/// Harmonic measure m_x: endpoint weights on an interval, the Poisson-kernel
/// density in the boundary angle on a disk.
pub fn harmonic_measure(domain: &Domain, x: Point) -> Result<BoundaryFunction> {
    if !domain.contains(x) {
        return Err(Error::Precondition(format!("point {x:?} is not interior")));
    }
    match *domain {
        Domain::Interval { a, b } => {
            let t = (x[0] - a) / (b - a);
            BoundaryFunction::endpoints(domain, 1.0 - t, t)
        }
        Domain::Disk { center, radius } => {
            let rho = radial(center, x);
            Ok(BoundaryFunction::from_fn(
                domain,
                crate::field::DEFAULT_POLAR_ANGLES,
                |z| {
                    let dz2 = (z[0] - x[0]).powi(2) + (z[1] - x[1]).powi(2);
                    (radius * radius - rho * rho) / (2.0 * PI * dz2)
                },
            ))
        }
    }
}

/// y ↦ dm_y^l/dm_x^l(z) on the grid of `l`, with `z` a boundary grid index.
pub fn harmonic_density_field(l: &ScalarField, x: Point, z: usize) -> Result<ScalarField> {
    let grid = &l.grid;
    if z >= grid.boundary_len() {
        return Err(Error::Precondition("boundary index out of range".into()));
    }
    let x = interior_point(grid, x)?;
    let mut bd = vec![0.0; grid.boundary_len()];
    bd[z] = match grid {
        Grid::Line { .. } => 1.0,
        Grid::Polar { .. } => 1.0 / grid.dtheta(),
    };
    let values = solve_dirichlet(grid, killing(l)?, None, &bd)?;
    let h = ScalarField::new(grid.clone(), values, bd)?;
    let norm = h.eval(x);
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::Precision("harmonic density underflows at the base point".into()));
    }
    Ok(h.scaled(1.0 / norm))
}

/// k_x^l(y, z) = dm_y^l/dm_x^l(z).
pub fn harmonic_density_k(domain: &Domain, l: &ScalarField, x: Point, y: Point, z: Point) -> Result<f64> {
    check_field_domain(domain, l)?;
    if !domain.contains(y) {
        return Err(Error::Precondition(format!("point {y:?} is not interior")));
    }
    let zi = l.grid.boundary_index(z);
    let k = harmonic_density_field(l, x, zi)?;
    Ok(k.eval(interior_point(&l.grid, y)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    fn unit() -> (Domain, Grid) {
        let d = Domain::unit_interval();
        let g = Grid::default_for(&d);
        (d, g)
    }

    #[test]
    fn constant_killing_matches_sinh_ratio() {
        let (d, g) = unit();
        let l = ScalarField::constant(&g, 8.0);
        let f = BoundaryFunction::endpoints(&d, 0.0, 1.0).unwrap();
        let v = poisson_op(&d, &l, &f, pt(0.5)).unwrap();
        let exact = 2f64.sinh() / 4f64.sinh();
        assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
    }

    #[test]
    fn harmonic_extension_of_endpoint_data() {
        let (d, g) = unit();
        let f = BoundaryFunction::endpoints(&d, 2.0, 4.0).unwrap();
        let v = poisson_op(&d, &ScalarField::zeros(&g), &f, pt(0.25)).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn green_of_one_is_exit_time() {
        let (_, g) = unit();
        let gf = green_field(&ScalarField::zeros(&g), &ScalarField::constant(&g, 1.0)).unwrap();
        for (i, v) in gf.values.iter().enumerate() {
            let x = g.node(i)[0];
            assert!((v - x * (1.0 - x)).abs() < 1e-8);
        }
        let g4 = green_field(&ScalarField::zeros(&g), &ScalarField::constant(&g, 4.0)).unwrap();
        // 0.5 falls between nodes: linear interpolation error h²
        assert!((g4.eval(pt(0.5)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn harmonic_density_values() {
        let (d, g) = unit();
        let l0 = ScalarField::zeros(&g);
        let k1 = harmonic_density_k(&d, &l0, pt(0.5), pt(0.25), pt(1.0)).unwrap();
        let k0 = harmonic_density_k(&d, &l0, pt(0.5), pt(0.25), pt(0.0)).unwrap();
        assert!((k1 - 0.5).abs() < 1e-12);
        assert!((k0 - 1.5).abs() < 1e-12);
        let l = ScalarField::constant(&g, 3.0);
        for z in [pt(0.0), pt(1.0)] {
            let k = harmonic_density_k(&d, &l, pt(0.5), pt(0.5), z).unwrap();
            assert!((k - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_density_is_discretely_harmonic() {
        let (_, g) = unit();
        let l = ScalarField::from_fn(&g, |p| 5.0 + 10.0 * p[0]);
        let k = harmonic_density_field(&l, pt(0.5), 1).unwrap();
        let res = apply_operator(&g, Some(&l.values), &k.values, &k.boundary);
        let scale = k.values.iter().cloned().fold(0.0, f64::max) / (g.spacing() * g.spacing());
        assert!(res.iter().all(|r| r.abs() < 1e-10 * scale));
    }

    #[test]
    fn harmonic_measure_interval_and_disk() {
        let d = Domain::unit_interval();
        let m = harmonic_measure(&d, pt(0.3)).unwrap();
        assert!((m.values[1] - 0.3).abs() < 1e-15 && (m.values[0] - 0.7).abs() < 1e-15);
        let c = Domain::unit_disk();
        let m = harmonic_measure(&c, [0.0, 0.0]).unwrap();
        assert!(m.values.iter().all(|v| (v - 0.5 / PI).abs() < 1e-14));
        let m = harmonic_measure(&c, [0.4, -0.2]).unwrap();
        let total: f64 = m.values.iter().sum::<f64>() * 2.0 * PI / m.values.len() as f64;
        assert!((total - 1.0).abs() < 1e-10);
        assert!(harmonic_measure(&d, pt(1.0)).is_err());
    }

    #[test]
    fn disk_poisson_reproduces_harmonic_polynomial() {
        let c = Domain::unit_disk();
        let g = Grid::default_for(&c);
        let f = BoundaryFunction::from_fn(&c, 128, |p| p[0] * p[0] - p[1] * p[1] + p[0]);
        let h = poisson_field(&ScalarField::zeros(&g), &f).unwrap();
        for p in [[0.0, 0.0], [0.3, 0.4], [-0.5, 0.1]] {
            let exact = p[0] * p[0] - p[1] * p[1] + p[0];
            assert!((h.eval(p) - exact).abs() < 2e-3, "{p:?}: {} vs {exact}", h.eval(p));
        }
    }

    #[test]
    fn disk_green_of_one() {
        let c = Domain::unit_disk();
        let g = Grid::default_for(&c);
        let gf = green_field(&ScalarField::zeros(&g), &ScalarField::constant(&g, 1.0)).unwrap();
        // ½Δg = −1 on the unit disk: g = (1 − r²)/2
        for p in [[0.0, 0.0], [0.5, 0.0], [0.2, -0.6]] {
            let exact = 0.5 * (1.0 - p[0] * p[0] - p[1] * p[1]);
            assert!((gf.eval(p) - exact).abs() < 2e-3);
        }
    }

    #[test]
    fn errors() {
        let (d, g) = unit();
        let f = BoundaryFunction::endpoints(&d, 0.0, 1.0).unwrap();
        assert!(matches!(
            poisson_op(&d, &ScalarField::constant(&g, -1.0), &f, pt(0.5)),
            Err(Error::Domain(_))
        ));
        let bad = BoundaryFunction::endpoints(&d, f64::NAN, 1.0).unwrap();
        assert!(matches!(
            poisson_op(&d, &ScalarField::zeros(&g), &bad, pt(0.5)),
            Err(Error::Data(_))
        ));
        assert!(poisson_op(&d, &ScalarField::zeros(&g), &f, pt(1.5)).is_err());
    }
}
