//! Conditioning on sampled boundary points: labels are nonempty subsets C of
//! the marks, h = ρ_C from the lattice ρ-table, and side clusters are kept
//! with probability e^{−β|X_D|}.

use serde::{Deserialize, Serialize};

use crate::conditioning::RhoTable;
use crate::error::{precondition, Error, Result};
use crate::field::ScalarField;
use crate::geometry::{Domain, Point};
use crate::model::Model;
use crate::partitions::partitions_of_mask;
use crate::particle::NestedExit;
use crate::rng::Rng;

use super::mass::draw;
use super::path::BackboneConfig;
use super::tree::{dress_backbone, dressing_simulator, empty_exit, kept_cluster, BackboneTree, Dressing, LabelModel};

pub const MAX_BACKBONE_POINTS: usize = 3;

#[derive(Clone, Debug)]
pub struct PointModel {
    table: RhoTable,
    n: u32,
    // Γ_C = 2 Σ_{ordered proper A} ρ_A ρ_{C∖A}, indexed by mask
    sources: Vec<ScalarField>,
}

impl PointModel {
    pub fn new(table: RhoTable) -> Result<Self> {
        let n = match table.model {
            Model::Lattice { n } => n,
            Model::Continuum => {
                return Err(Error::Unsupported("the point backbone is built on the lattice ρ-table".into()));
            }
        };
        if table.k() > MAX_BACKBONE_POINTS {
            return Err(Error::Limit(format!("{} marks (supported up to {MAX_BACKBONE_POINTS})", table.k())));
        }
        let full = table.full_mask();
        let grid = table.field(1)?.grid.clone();
        let mut sources = vec![ScalarField::zeros(&grid)];
        for mask in 1..=full {
            let mut s = ScalarField::zeros(&grid);
            let mut a = (mask - 1) & mask;
            while a > 0 {
                let p = table.field(a)?.zip_with(table.field(mask ^ a)?, |x, y| 2.0 * x * y)?;
                s = s.zip_with(&p, |x, y| x + y)?;
                a = (a - 1) & mask;
            }
            sources.push(s);
        }
        Ok(Self { table, n, sources })
    }

    pub fn table(&self) -> &RhoTable {
        &self.table
    }

    pub fn beta(&self) -> f64 {
        self.table.beta
    }
}

impl LabelModel for PointModel {
    type Label = u32;

    fn n(&self) -> u32 {
        self.n
    }

    fn domain(&self) -> Domain {
        self.table.v.domain()
    }

    fn h(&self, mask: u32) -> Result<&ScalarField> {
        self.table.field(mask)
    }

    fn source(&self, mask: u32) -> Result<&ScalarField> {
        self.table.field(mask)?;
        Ok(&self.sources[mask as usize])
    }

    /// (A, C∖A) with probability ∝ ρ_A ρ_{C∖A}(w).
    fn split(&self, mask: u32, w: Point, rng: &mut Rng) -> Result<(u32, u32)> {
        let mut options = Vec::new();
        let mut weights = Vec::new();
        let mut a = (mask - 1) & mask;
        while a > 0 {
            options.push(a);
            weights.push(self.table.field(a)?.eval(w).max(0.0) * self.table.field(mask ^ a)?.eval(w).max(0.0));
            a = (a - 1) & mask;
        }
        if options.is_empty() {
            return Err(Error::Invariant(format!("label {mask:#b} cannot split")));
        }
        let a = options[draw(&weights, rng)?];
        Ok((a, mask ^ a))
    }
}

/// Marked initial particles and the unmarked remainder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootDraw {
    pub roots: Vec<(Point, u32)>,
    pub unmarked: Vec<(Point, u64)>,
}

/// Blocks of marks placed on distinct particles of μ with probability
/// ∝ Π_a (c_a)_{m_a} Π_B ρ_B(y_B)/(N w(y_B)).
pub fn sample_roots(model: &PointModel, atoms: &[(Point, u64)], rng: &mut Rng) -> Result<RootDraw> {
    if atoms.is_empty() {
        return precondition("the initial configuration has no particles");
    }
    let nf = model.n as f64;
    let mut g = Vec::with_capacity(atoms.len());
    for &(p, _) in atoms {
        let w = model.table.survival(p)?;
        g.push(w);
    }
    // (blocks, atom per block)
    let mut options: Vec<(Vec<u32>, Vec<usize>)> = Vec::new();
    let mut weights = Vec::new();
    for blocks in partitions_of_mask(model.table.full_mask())? {
        let m = blocks.len();
        let mut assign = vec![0usize; m];
        loop {
            let mut wt = 1.0;
            let mut used = vec![0u64; atoms.len()];
            for (b, &a) in blocks.iter().zip(&assign) {
                let (p, c) = atoms[a];
                if used[a] >= c {
                    wt = 0.0;
                    break;
                }
                wt *= (c - used[a]) as f64 * model.table.field(*b)?.eval(p) / (nf * g[a]);
                used[a] += 1;
            }
            if wt > 0.0 {
                options.push((blocks.clone(), assign.clone()));
                weights.push(wt);
            }
            // next assignment in base |atoms|
            let mut i = 0;
            while i < m {
                assign[i] += 1;
                if assign[i] < atoms.len() {
                    break;
                }
                assign[i] = 0;
                i += 1;
            }
            if i == m {
                break;
            }
        }
    }
    let (blocks, assign) = &options[draw(&weights, rng)?];
    let mut left: Vec<u64> = atoms.iter().map(|a| a.1).collect();
    let mut roots = Vec::new();
    for (&b, &a) in blocks.iter().zip(assign) {
        roots.push((atoms[a].0, b));
        left[a] -= 1;
    }
    Ok(RootDraw {
        roots,
        unmarked: atoms.iter().zip(left).filter(|x| x.1 > 0).map(|(&(p, _), c)| (p, c)).collect(),
    })
}

/// One realization of X conditioned by H^{β,k,z}: marked roots grow the
/// backbone, unmarked initial particles and side clusters are tilted by
/// e^{−β|X_D|}.
pub fn point_backbone(
    model: &PointModel,
    atoms: &[(Point, u64)],
    chain: &[Domain],
    cfg: &BackboneConfig,
    rng: &mut Rng,
) -> Result<(NestedExit, BackboneTree<u32>)> {
    let mode = Dressing::Tilted { beta: model.beta() };
    let draw = sample_roots(model, atoms, rng)?;
    let domain = model.domain();
    let mut x0 = empty_exit(chain);
    if !chain.is_empty() {
        let sim = dressing_simulator(&domain, chain, model.n)?;
        for &(p, c) in &draw.unmarked {
            for _ in 0..c {
                let e = kept_cluster(&sim, p, mode, chain.len(), rng)?;
                for (acc, x) in x0.exits.iter_mut().zip(&e.exits) {
                    acc.add(x);
                }
            }
        }
    }
    let mut tree = BackboneTree::grow(model, &draw.roots, chain, x0, cfg, rng)?;
    let out = dress_backbone(&mut tree, mode, rng)?;
    if !cfg.keep_paths {
        tree.strip_paths();
    }
    Ok((out, tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Fate;
    use crate::geometry::pt;
    use crate::rng;

    fn model(beta: f64, z: &[Point]) -> PointModel {
        let d = Domain::unit_interval();
        PointModel::new(RhoTable::new(&d, pt(0.5), beta, z, Model::Lattice { n: 100 }).unwrap()).unwrap()
    }

    #[test]
    fn single_mark_exits_at_its_point() {
        let m = model(1e-6, &[pt(1.0)]);
        let cfg = BackboneConfig {
            prune: false,
            ..Default::default()
        };
        let mut r = rng::stream(1, 0);
        for _ in 0..20 {
            let tree = BackboneTree::grow(&m, &[(pt(0.3), 1)], &[Domain::unit_interval()], empty_exit(&[Domain::unit_interval()]), &cfg, &mut r).unwrap();
            assert_eq!(tree.nodes.len(), 1);
            assert_eq!(tree.nodes[0].fate, Fate::Exit);
            assert_eq!(tree.nodes[0].death, pt(1.0));
        }
    }

    #[test]
    fn two_distinct_marks_split_exactly_once() {
        let m = model(0.5, &[pt(0.0), pt(1.0)]);
        let cfg = BackboneConfig {
            prune: false,
            ..Default::default()
        };
        let d = Domain::unit_interval();
        let mut r = rng::stream(2, 0);
        for _ in 0..20 {
            let tree = BackboneTree::grow(&m, &[(pt(0.5), 3)], &[d], empty_exit(&[d]), &cfg, &mut r).unwrap();
            assert_eq!(tree.nodes.iter().filter(|n| n.fate == Fate::Split).count(), 1);
            let mut ends: Vec<f64> = tree.leaves().map(|n| n.death[0]).collect();
            ends.sort_by(f64::total_cmp);
            assert_eq!(ends, vec![0.0, 1.0]);
        }
    }

    #[test]
    fn marks_land_on_distinct_particles() {
        let m = model(0.5, &[pt(0.0), pt(1.0)]);
        let mut r = rng::stream(3, 0);
        for _ in 0..100 {
            let d = sample_roots(&m, &[(pt(0.5), 1), (pt(0.3), 4)], &mut r).unwrap();
            let marks: u32 = d.roots.iter().map(|x| x.1).fold(0, |a, b| {
                assert_eq!(a & b, 0);
                a | b
            });
            assert_eq!(marks, 3);
            let left: u64 = d.unmarked.iter().map(|x| x.1).sum();
            assert_eq!(left as usize + d.roots.len(), 5);
        }
    }
}
