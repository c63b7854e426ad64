//! Domains: the unit interval and the disk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points are stored as pairs; on an interval only the first coordinate is used.
pub type Point = [f64; 2];

pub fn pt(x: f64) -> Point {
    [x, 0.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Disk { center: Point, radius: f64 },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        let d = Domain::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_interval() -> Self {
        Domain::Interval { a: 0.0, b: 1.0 }
    }

    pub fn disk(center: Point, radius: f64) -> Result<Self> {
        let d = Domain::Disk { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_disk() -> Self {
        Domain::Disk {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Domain::Interval { a, b } if a.is_finite() && b.is_finite() && a < b => Ok(()),
            Domain::Disk { center, radius }
                if radius.is_finite() && radius > 0.0 && center.iter().all(|c| c.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::Domain(format!("degenerate domain {self:?}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Disk { .. } => 2,
        }
    }

    /// Open-set membership.
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Domain::Interval { a, b } => p[0] > a && p[0] < b,
            Domain::Disk { center, radius } => radial(center, p) < radius,
        }
    }

    /// Unsigned distance to the boundary; zero exactly on the boundary.
    pub fn dist_to_boundary(&self, p: Point) -> f64 {
        match *self {
            Domain::Interval { a, b } => (p[0] - a).abs().min((b - p[0]).abs()),
            Domain::Disk { center, radius } => (radius - radial(center, p)).abs(),
        }
    }

    /// Closure of `self` contained in the closure of `outer`.
    pub fn within(&self, outer: &Domain) -> bool {
        match (*self, *outer) {
            (Domain::Interval { a, b }, Domain::Interval { a: oa, b: ob }) => a >= oa && b <= ob,
            (
                Domain::Disk { center, radius },
                Domain::Disk {
                    center: oc,
                    radius: or,
                },
            ) => radial(oc, center) + radius <= or,
            _ => false,
        }
    }

    /// Diameter-scale length used for tolerances.
    pub fn scale(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Disk { radius, .. } => 2.0 * radius,
        }
    }
}

pub(crate) fn radial(center: Point, p: Point) -> f64 {
    ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt()
}

/// Checks that a list of domains is strictly increasing by inclusion.
pub fn check_chain(chain: &[Domain]) -> Result<()> {
    if chain.is_empty() {
        return Err(Error::Unsupported("empty domain chain".into()));
    }
    for d in chain {
        d.validate()?;
    }
    for w in chain.windows(2) {
        if !w[0].within(&w[1]) {
            return Err(Error::Unsupported(format!(
                "domain chain is not nested: {:?} is not inside {:?}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_and_distance() {
        let d = Domain::unit_interval();
        assert!(d.contains(pt(0.3)));
        assert!(!d.contains(pt(0.0)));
        assert_eq!(d.dist_to_boundary(pt(0.0)), 0.0);
        assert!((d.dist_to_boundary(pt(0.3)) - 0.3).abs() < 1e-15);
        let c = Domain::unit_disk();
        assert!(c.contains([0.5, 0.5]));
        assert!(!c.contains([1.0, 0.0]));
        assert!(c.dist_to_boundary([0.6, 0.0]) > 0.39);
    }

    #[test]
    fn chains() {
        let chain = [
            Domain::interval(0.25, 0.75).unwrap(),
            Domain::unit_interval(),
        ];
        assert!(check_chain(&chain).is_ok());
        let bad = [Domain::interval(0.2, 1.2).unwrap(), Domain::unit_interval()];
        assert!(check_chain(&bad).is_err());
        assert!(Domain::interval(1.0, 0.0).is_err());
    }
}
