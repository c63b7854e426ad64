//! Grid-backed scalar fields and boundary data.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{radial, Domain, Point};

pub const DEFAULT_LINE_NODES: usize = 2048;
pub const DEFAULT_POLAR_RINGS: usize = 64;
pub const DEFAULT_POLAR_ANGLES: usize = 128;

/// Discretization of a domain.
///
/// `Line` has `n` uniformly spaced interior nodes. `Polar` has a center node,
/// `nr - 1` interior rings of `nt` nodes, and the boundary ring at `r = radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    Line {
        a: f64,
        b: f64,
        n: usize,
    },
    Polar {
        center: Point,
        radius: f64,
        nr: usize,
        nt: usize,
    },
}

impl Grid {
    pub fn line(domain: &Domain, n: usize) -> Result<Grid> {
        match *domain {
            Domain::Interval { a, b } if n >= 3 => Ok(Grid::Line { a, b, n }),
            Domain::Interval { .. } => Err(Error::Precondition("a grid needs at least 3 nodes".into())),
            _ => Err(Error::Precondition("line grid requires an interval".into())),
        }
    }

    pub fn polar(domain: &Domain, nr: usize, nt: usize) -> Result<Grid> {
        match *domain {
            Domain::Disk { center, radius } if nr >= 3 && nt >= 8 => Ok(Grid::Polar {
                center,
                radius,
                nr,
                nt,
            }),
            Domain::Disk { .. } => Err(Error::Precondition("polar grid too coarse".into())),
            _ => Err(Error::Precondition("polar grid requires a disk".into())),
        }
    }

    pub fn default_for(domain: &Domain) -> Grid {
        match *domain {
            Domain::Interval { a, b } => Grid::Line {
                a,
                b,
                n: DEFAULT_LINE_NODES,
            },
            Domain::Disk { center, radius } => Grid::Polar {
                center,
                radius,
                nr: DEFAULT_POLAR_RINGS,
                nt: DEFAULT_POLAR_ANGLES,
            },
        }
    }

    pub fn domain(&self) -> Domain {
        match *self {
            Grid::Line { a, b, .. } => Domain::Interval { a, b },
            Grid::Polar { center, radius, .. } => Domain::Disk { center, radius },
        }
    }

    /// Number of interior unknowns.
    pub fn len(&self) -> usize {
        match *self {
            Grid::Line { n, .. } => n,
            Grid::Polar { nr, nt, .. } => 1 + (nr - 1) * nt,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn boundary_len(&self) -> usize {
        match *self {
            Grid::Line { .. } => 2,
            Grid::Polar { nt, .. } => nt,
        }
    }

    /// Node spacing (radial spacing on the disk).
    pub fn spacing(&self) -> f64 {
        match *self {
            Grid::Line { a, b, n } => (b - a) / (n + 1) as f64,
            Grid::Polar { radius, nr, .. } => radius / nr as f64,
        }
    }

    pub fn dtheta(&self) -> f64 {
        match *self {
            Grid::Line { .. } => 0.0,
            Grid::Polar { nt, .. } => 2.0 * PI / nt as f64,
        }
    }

    pub fn node(&self, i: usize) -> Point {
        match *self {
            Grid::Line { a, .. } => [a + (i + 1) as f64 * self.spacing(), 0.0],
            Grid::Polar { center, nt, .. } => {
                if i == 0 {
                    return center;
                }
                let j = (i - 1) / nt + 1;
                let k = (i - 1) % nt;
                let r = j as f64 * self.spacing();
                let th = k as f64 * self.dtheta();
                [center[0] + r * th.cos(), center[1] + r * th.sin()]
            }
        }
    }

    pub fn nodes(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn boundary_point(&self, k: usize) -> Point {
        match *self {
            Grid::Line { a, b, .. } => [if k == 0 { a } else { b }, 0.0],
            Grid::Polar { center, radius, .. } => {
                let th = k as f64 * self.dtheta();
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
        }
    }

    /// Index of the boundary grid point nearest to `p`.
    pub fn boundary_index(&self, p: Point) -> usize {
        match *self {
            Grid::Line { a, b, .. } => usize::from((p[0] - a).abs() > (p[0] - b).abs()),
            Grid::Polar { center, nt, .. } => {
                let th = angle(center, p);
                ((th / self.dtheta()).round() as usize) % nt
            }
        }
    }

    /// Distance to the boundary of the node with index `i`.
    pub fn node_dist(&self, i: usize) -> f64 {
        self.domain().dist_to_boundary(self.node(i))
    }

    /// True for the `cells` layers of nodes closest to the boundary.
    pub fn is_near_boundary(&self, i: usize, cells: usize) -> bool {
        self.node_dist(i) < (cells as f64 + 0.5) * self.spacing()
    }
}

pub(crate) fn angle(center: Point, p: Point) -> f64 {
    let th = (p[1] - center[1]).atan2(p[0] - center[0]);
    if th < 0.0 {
        th + 2.0 * PI
    } else {
        th
    }
}

/// Leading asymptotics of the maximal solution of ½Δu = 2u² at distance `d` from the boundary.
pub fn blowup_profile(domain: &Domain, d: f64) -> f64 {
    let d = d.max(1e-300);
    match *domain {
        Domain::Interval { .. } => 1.5 / (d * d),
        Domain::Disk { radius, .. } => 1.5 / (d * d) + 0.3 / (radius * d),
    }
}

/// Boundary data: endpoint values on an interval, a periodic angular table on a disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFunction {
    pub domain: Domain,
    pub values: Vec<f64>,
}

impl BoundaryFunction {
    pub fn endpoints(domain: &Domain, at_a: f64, at_b: f64) -> Result<Self> {
        match domain {
            Domain::Interval { .. } => Ok(Self {
                domain: *domain,
                values: vec![at_a, at_b],
            }),
            _ => Err(Error::Precondition("endpoint data requires an interval".into())),
        }
    }

    pub fn constant(domain: &Domain, c: f64) -> Self {
        let n = match domain {
            Domain::Interval { .. } => 2,
            Domain::Disk { .. } => DEFAULT_POLAR_ANGLES,
        };
        Self {
            domain: *domain,
            values: vec![c; n],
        }
    }

    /// Samples `f` at `n` equally spaced boundary angles (disk) or at the endpoints.
    pub fn from_fn(domain: &Domain, n: usize, f: impl Fn(Point) -> f64) -> Self {
        let values = match *domain {
            Domain::Interval { a, b } => vec![f([a, 0.0]), f([b, 0.0])],
            Domain::Disk { center, radius } => (0..n)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / n as f64;
                    f([center[0] + radius * th.cos(), center[1] + radius * th.sin()])
                })
                .collect(),
        };
        Self {
            domain: *domain,
            values,
        }
    }

    pub fn validate(&self, nonnegative: bool) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("boundary data not finite".into()));
        }
        if nonnegative && self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::Data("boundary data must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn value_at(&self, p: Point) -> f64 {
        match self.domain {
            Domain::Interval { a, b } => {
                if (p[0] - a).abs() <= (p[0] - b).abs() {
                    self.values[0]
                } else {
                    self.values[1]
                }
            }
            Domain::Disk { center, .. } => periodic_interp(&self.values, angle(center, p)),
        }
    }

    /// Values on the boundary nodes of `grid`.
    pub fn on_grid(&self, grid: &Grid) -> Result<Vec<f64>> {
        if grid.domain() != self.domain {
            return Err(Error::Precondition("boundary data on a different domain".into()));
        }
        Ok(match *grid {
            Grid::Line { .. } => self.values.clone(),
            Grid::Polar { nt, .. } if nt == self.values.len() => self.values.clone(),
            Grid::Polar { .. } => (0..grid.boundary_len())
                .map(|k| periodic_interp(&self.values, k as f64 * grid.dtheta()))
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            domain: self.domain,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &BoundaryFunction, c: f64) -> Result<Self> {
        if other.domain != self.domain || other.values.len() != self.values.len() {
            return Err(Error::Precondition("incompatible boundary data".into()));
        }
        Ok(Self {
            domain: self.domain,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }
}

fn periodic_interp(values: &[f64], th: f64) -> f64 {
    let n = values.len();
    let t = th / (2.0 * PI) * n as f64;
    let i = t.floor();
    let w = t - i;
    let i = (i as i64).rem_euclid(n as i64) as usize;
    values[i] * (1.0 - w) + values[(i + 1) % n] * w
}

/// Real function on a grid with piecewise-linear (line) or bilinear polar interpolation.
///
/// `values` holds interior nodes, `boundary` the boundary nodes. A `blowup` field
/// may carry infinite boundary values; evaluation within one cell of the boundary
/// then uses [`blowup_profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub boundary: Vec<f64>,
    pub blowup: bool,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || boundary.len() != grid.boundary_len() {
            return Err(Error::Precondition("field size does not match grid".into()));
        }
        if values.len() < 3 {
            return Err(Error::Precondition("a field needs at least 3 nodes".into()));
        }
        Ok(Self {
            grid,
            values,
            boundary,
            blowup: false,
        })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
            boundary: vec![c; grid.boundary_len()],
            blowup: false,
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        let boundary = (0..grid.boundary_len())
            .map(|k| f(grid.boundary_point(k)))
            .collect();
        Self {
            grid: grid.clone(),
            values,
            boundary,
            blowup: false,
        }
    }

    pub fn domain(&self) -> Domain {
        self.grid.domain()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            boundary: self.boundary.iter().map(|&v| f(v)).collect(),
            blowup: self.blowup,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Precondition("fields live on different grids".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            boundary: self
                .boundary
                .iter()
                .zip(&other.boundary)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            blowup: self.blowup || other.blowup,
        })
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest interior value over nodes lying in `region` (and the field's
    /// interpolation onto its boundary). Used to bound killing rates.
    pub fn max_over(&self, region: &Domain) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            let p = self.grid.node(i);
            if region.contains(p) {
                m = m.max(v);
            }
        }
        let probe = match *region {
            Domain::Interval { a, b } => vec![[a, 0.0], [b, 0.0]],
            Domain::Disk { center, radius } => (0..64)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / 64.0;
                    [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
                })
                .collect(),
        };
        for p in probe {
            m = m.max(self.eval(p));
        }
        m
    }

    /// Interpolated value at `p`.
    pub fn eval(&self, p: Point) -> f64 {
        match self.grid {
            Grid::Line { a, n, .. } => {
                let h = self.grid.spacing();
                let t = ((p[0] - a) / h).clamp(0.0, (n + 1) as f64);
                let i = (t.floor() as usize).min(n);
                if self.blowup && (i == 0 || i == n) {
                    return blowup_profile(&self.domain(), self.domain().dist_to_boundary(p));
                }
                let w = t - i as f64;
                let lo = if i == 0 { self.boundary[0] } else { self.values[i - 1] };
                let hi = if i == n { self.boundary[1] } else { self.values[i] };
                lo * (1.0 - w) + hi * w
            }
            Grid::Polar { center, nr, nt, .. } => {
                let r = radial(center, p);
                let t = (r / self.grid.spacing()).min(nr as f64);
                let j = (t.floor() as usize).min(nr - 1);
                if self.blowup && j == nr - 1 {
                    return blowup_profile(&self.domain(), self.domain().dist_to_boundary(p));
                }
                let w = t - j as f64;
                let th = angle(center, p);
                let ring = |j: usize| -> f64 {
                    if j == 0 {
                        self.values[0]
                    } else if j == nr {
                        periodic_interp(&self.boundary, th)
                    } else {
                        let s = &self.values[1 + (j - 1) * nt..1 + j * nt];
                        periodic_interp(s, th)
                    }
                };
                ring(j) * (1.0 - w) + ring(j + 1) * w
            }
        }
    }

    /// CSV dump with columns `node,value`; the node is the coordinate on a line
    /// and the flat index on a polar grid.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "node,value")?;
        for (i, v) in self.values.iter().enumerate() {
            match self.grid {
                Grid::Line { .. } => writeln!(out, "{:.12e},{:.12e}", self.grid.node(i)[0], v)?,
                Grid::Polar { .. } => writeln!(out, "{},{:.12e}", i, v)?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_interpolation_is_exact_for_linear_functions() {
        let d = Domain::unit_interval();
        let g = Grid::line(&d, 16).unwrap();
        let f = ScalarField::from_fn(&g, |p| 2.0 + 3.0 * p[0]);
        for x in [0.0, 0.013, 0.5, 0.77, 1.0] {
            assert!((f.eval([x, 0.0]) - (2.0 + 3.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_nodes_and_interpolation() {
        let d = Domain::unit_disk();
        let g = Grid::polar(&d, 8, 16).unwrap();
        assert_eq!(g.len(), 1 + 7 * 16);
        let f = ScalarField::from_fn(&g, |p| 1.0 + p[0] * p[0] + p[1] * p[1]);
        assert!((f.eval([0.0, 0.0]) - 1.0).abs() < 1e-12);
        // radial interpolation is linear in r, so r² is only approximated
        assert!((f.eval([0.5, 0.0]) - 1.25).abs() < 0.01);
        assert!((f.eval([0.0, 1.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_resampling() {
        let d = Domain::unit_disk();
        let bf = BoundaryFunction::from_fn(&d, 32, |p| p[0]);
        let g = Grid::polar(&d, 8, 64).unwrap();
        let v = bf.on_grid(&g).unwrap();
        assert_eq!(v.len(), 64);
        assert!((v[0] - 1.0).abs() < 1e-12);
    }
}
