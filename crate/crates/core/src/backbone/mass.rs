//! Total-mass conditioning: labels are exit counts k, h = n_k.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{convolve, FragKernel};
use crate::error::{precondition, Error, Result};
use crate::field::ScalarField;
use crate::geometry::{Domain, Point};
use crate::lattice_law::ExcursionFields;
use crate::particle::NestedExit;
use crate::rng::{self, Rng};

use super::path::BackboneConfig;
use super::tree::{dress_backbone, dressing_simulator, empty_exit, kept_cluster, BackboneTree, Dressing, LabelModel};

impl LabelModel for ExcursionFields {
    type Label = usize;

    fn n(&self) -> u32 {
        self.n
    }

    fn domain(&self) -> Domain {
        self.u.domain()
    }

    fn h(&self, k: usize) -> Result<&ScalarField> {
        self.field(k)
    }

    fn source(&self, k: usize) -> Result<&ScalarField> {
        ExcursionFields::source(self, k)
    }

    fn split(&self, k: usize, w: Point, rng: &mut Rng) -> Result<(usize, usize)> {
        fragment(self, k, w, rng)
    }
}

/// Index drawn ∝ `weights`.
pub(crate) fn draw(weights: &[f64], rng: &mut Rng) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Data("no positive weight to draw from".into()));
    }
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return Ok(i);
        }
        r -= w;
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).expect("positive total"))
}

/// Split of label k ≥ 2 dying at w: a ∝ n_a(w) n_{k−a}(w), 0 < a < k.
pub fn fragment(fields: &ExcursionFields, k: usize, w: Point, rng: &mut Rng) -> Result<(usize, usize)> {
    if k < 2 {
        return Err(Error::Invariant(format!("label {k} cannot split")));
    }
    let vals: Vec<f64> = (1..k).map(|a| fields.field(a).map(|f| f.eval(w).max(0.0))).collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..k - 1).map(|i| vals[i] * vals[k - 2 - i]).collect();
    let a = draw(&weights, rng)? + 1;
    Ok((a, k - a))
}

/// Split of bin k on a histogram: a ∝ γ_a γ_{k−a} k(k, a) over populated bins.
/// `gamma[a]` is γ at the death position.
pub fn fragment_bins(gamma: &[f64], frag: &FragKernel, k: usize, rng: &mut Rng) -> Result<(usize, usize)> {
    let width = frag.grid.width;
    let weights: Vec<f64> = (1..k)
        .map(|a| {
            let (ga, gb) = (gamma.get(a).copied().unwrap_or(0.0), gamma.get(k - a).copied().unwrap_or(0.0));
            frag.density(k * width, a * width).map_or(0.0, |d| ga * gb * d)
        })
        .collect();
    if weights.iter().all(|&w| w <= 0.0) {
        let covered = weights.iter().filter(|&&w| w > 0.0).count();
        return Err(Error::Data(format!("no populated split of bin {k} ({covered} bins covered)")));
    }
    let a = draw(&weights, rng)? + 1;
    Ok((a, k - a))
}

/// Root label at y conditioned on k ∈ [lo, hi]: k ∝ n_k(y).
pub fn sample_label(fields: &ExcursionFields, y: Point, range: (usize, usize), rng: &mut Rng) -> Result<usize> {
    let (lo, hi) = range;
    if lo == 0 || hi < lo || hi > fields.kmax() {
        return precondition(format!("label range {range:?} outside 1..={}", fields.kmax()));
    }
    let w: Vec<f64> = (lo..=hi).map(|k| fields.field(k).map(|f| f.eval(y).max(0.0))).collect::<Result<_>>()?;
    Ok(lo + draw(&w, rng)?)
}

/// One realization under ℕ_y( · | Z ∈ range), i.e. a single particle at y
/// conditioned on its exit count: the backbone and its dressing by clusters
/// that never reach ∂D. Returns the observed exits and the tree.
pub fn run_conditioned(
    fields: &ExcursionFields,
    y: Point,
    range: (usize, usize),
    chain: &[Domain],
    cfg: &BackboneConfig,
    rng: &mut Rng,
) -> Result<(NestedExit, BackboneTree<usize>)> {
    let k = sample_label(fields, y, range, rng)?;
    let mut tree = BackboneTree::grow(fields, &[(y, k)], chain, empty_exit(chain), cfg, rng)?;
    let out = dress_backbone(&mut tree, Dressing::Extinct, rng)?;
    if !cfg.keep_paths {
        tree.strip_paths();
    }
    Ok((out, tree))
}

/// `replicas` independent runs; run i uses stream i of `seed`.
pub fn run_conditioned_replicas(
    fields: &ExcursionFields,
    y: Point,
    range: (usize, usize),
    chain: &[Domain],
    cfg: &BackboneConfig,
    seed: u64,
    replicas: usize,
) -> Result<Vec<NestedExit>> {
    (0..replicas)
        .into_par_iter()
        .map(|i| run_conditioned(fields, y, range, chain, cfg, &mut rng::stream(seed, i as u64)).map(|r| r.0))
        .collect()
}

/// Initial particles of a forest: the labelled roots and the counts of
/// particles per atom whose clusters die out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestDraw {
    pub total: usize,
    pub roots: Vec<(Point, usize)>,
    pub extinct: Vec<(Point, u64)>,
}

/// Exact sampler of the initial cluster under P_μ( · | Z ∈ range) for a
/// particle configuration μ: the exit counts of the individual particles are
/// drawn one by one given the remaining total, using suffix convolutions of
/// the one-particle laws.
#[derive(Clone, Debug)]
pub struct ForestSampler {
    atoms: Vec<(Point, u64)>,
    // per particle (atoms expanded): atom index
    owner: Vec<usize>,
    laws: Vec<Vec<f64>>,
    // suffix[j] = law of the total of particles j.. ; suffix[len] = δ_0
    suffix: Vec<Vec<f64>>,
}

impl ForestSampler {
    pub fn new(fields: &ExcursionFields, atoms: &[(Point, u64)]) -> Result<Self> {
        let len = fields.kmax() + 1;
        let laws: Vec<Vec<f64>> = atoms.iter().map(|&(p, _)| fields.law_at(p)).collect();
        let owner: Vec<usize> = atoms
            .iter()
            .enumerate()
            .flat_map(|(i, &(_, c))| std::iter::repeat_n(i, c as usize))
            .collect();
        if owner.is_empty() {
            return precondition("the initial configuration has no particles");
        }
        let mut suffix = vec![Vec::new(); owner.len() + 1];
        let mut acc = vec![0.0; len];
        acc[0] = 1.0;
        suffix[owner.len()] = acc.clone();
        for j in (0..owner.len()).rev() {
            acc = convolve(&acc, &laws[owner[j]], len);
            suffix[j] = acc.clone();
        }
        Ok(Self {
            atoms: atoms.to_vec(),
            owner,
            laws,
            suffix,
        })
    }

    /// P_μ(Z = k) for k ≤ kmax.
    pub fn total_law(&self) -> &[f64] {
        &self.suffix[0]
    }

    pub fn sample(&self, range: (usize, usize), rng: &mut Rng) -> Result<ForestDraw> {
        let (lo, hi) = range;
        let law = self.total_law();
        if hi < lo || hi >= law.len() {
            return precondition(format!("count range {range:?} outside 0..{}", law.len()));
        }
        let total = lo + draw(&law[lo..=hi], rng)?;
        let mut left = total;
        let mut roots = Vec::new();
        let mut extinct = vec![0u64; self.atoms.len()];
        for (j, &a) in self.owner.iter().enumerate() {
            let q = &self.laws[a];
            let next = &self.suffix[j + 1];
            let w: Vec<f64> = (0..=left).map(|z| q[z] * next[left - z]).collect();
            let z = draw(&w, rng)?;
            if z == 0 {
                extinct[a] += 1;
            } else {
                roots.push((self.atoms[a].0, z));
            }
            left -= z;
        }
        Ok(ForestDraw {
            total,
            roots,
            extinct: self
                .atoms
                .iter()
                .zip(extinct)
                .filter(|a| a.1 > 0)
                .map(|(&(p, _), c)| (p, c))
                .collect(),
        })
    }
}

/// Forest initialization: the labelled roots plus the exits of the
/// extinction-conditioned clusters of the remaining particles (X̃⁰).
pub fn forest_init(
    sampler: &ForestSampler,
    domain: &Domain,
    chain: &[Domain],
    n: u32,
    range: (usize, usize),
    rng: &mut Rng,
) -> Result<(ForestDraw, NestedExit)> {
    let draw = sampler.sample(range, rng)?;
    let mut x0 = empty_exit(chain);
    if !chain.is_empty() {
        let sim = dressing_simulator(domain, chain, n)?;
        for &(p, c) in &draw.extinct {
            for _ in 0..c {
                let e = kept_cluster(&sim, p, Dressing::Extinct, chain.len(), rng)?;
                for (acc, x) in x0.exits.iter_mut().zip(&e.exits) {
                    acc.add(x);
                }
            }
        }
    }
    Ok((draw, x0))
}

/// One realization under P_μ( · | Z ∈ range).
pub fn run_forest(
    fields: &ExcursionFields,
    sampler: &ForestSampler,
    chain: &[Domain],
    range: (usize, usize),
    cfg: &BackboneConfig,
    rng: &mut Rng,
) -> Result<(NestedExit, BackboneTree<usize>)> {
    let domain = fields.u.domain();
    let (draw, x0) = forest_init(sampler, &domain, chain, fields.n, range, rng)?;
    let mut tree = BackboneTree::grow(fields, &draw.roots, chain, x0, cfg, rng)?;
    let out = dress_backbone(&mut tree, Dressing::Extinct, rng)?;
    if !cfg.keep_paths {
        tree.strip_paths();
    }
    Ok((out, tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::MassGrid;
    use crate::geometry::pt;
    use crate::lattice_law::MassPgf;

    fn fields() -> ExcursionFields {
        ExcursionFields::new(&Domain::unit_interval(), 100, 255, 300).unwrap()
    }

    #[test]
    fn fragments_conserve_and_are_symmetric() {
        let f = fields();
        let mut r = rng::stream(1, 0);
        let k = 40;
        let mut first = vec![0usize; k];
        let mut second = vec![0usize; k];
        for _ in 0..20000 {
            let (a, b) = fragment(&f, k, pt(0.4), &mut r).unwrap();
            assert_eq!(a + b, k);
            assert!(a > 0 && b > 0);
            first[a] += 1;
            second[b] += 1;
        }
        let diff: usize = first.iter().zip(&second).map(|(x, y)| x.abs_diff(*y)).sum();
        assert!((diff as f64) < 0.1 * 20000.0, "{diff}");
    }

    #[test]
    fn uniform_kernel_with_flat_gamma_splits_uniformly() {
        // r = e^{−v} gives k ≡ 1, so with flat γ every split bin is equally likely
        let grid = MassGrid::new(100, 1, 600).unwrap();
        let frag = FragKernel::from_density(grid, |v| (-v).exp());
        let gamma = vec![1.0; 400];
        let mut r = rng::stream(2, 0);
        let k = 200;
        let mut hist = vec![0usize; k];
        for _ in 0..40000 {
            let (a, b) = fragment_bins(&gamma, &frag, k, &mut r).unwrap();
            assert_eq!(a + b, k);
            hist[a] += 1;
        }
        let expect = 40000.0 / (k - 1) as f64;
        let chi: f64 = hist[1..].iter().map(|&h| (h as f64 - expect).powi(2) / expect).sum();
        // χ² with 198 degrees of freedom; 1% point is about 247
        assert!(chi < 247.0, "{chi}");
    }

    #[test]
    fn forest_total_law_matches_the_generating_function() {
        let d = Domain::unit_interval();
        let f = fields();
        let s = ForestSampler::new(&f, &[(pt(0.5), 7), (pt(0.25), 3)]).unwrap();
        let pgf = MassPgf::with_resolution(&d, 100, &[pt(0.5), pt(0.25)], 256, 1024).unwrap();
        let law = pgf.counts_law(&[(0, 7), (1, 3)]).unwrap();
        for k in 0..100 {
            assert!((s.total_law()[k] - law[k]).abs() < 1e-6, "{k}");
        }
    }

    #[test]
    fn forest_draw_conserves_the_total() {
        let f = fields();
        let s = ForestSampler::new(&f, &[(pt(0.5), 20)]).unwrap();
        let mut r = rng::stream(3, 0);
        for _ in 0..200 {
            let d = s.sample((20, 30), &mut r).unwrap();
            assert_eq!(d.roots.iter().map(|x| x.1).sum::<usize>(), d.total);
            assert!((20..=30).contains(&d.total));
            let ext: u64 = d.extinct.iter().map(|x| x.1).sum();
            assert_eq!(ext as usize + d.roots.len(), 20);
        }
        // v = 0: nothing survives
        let d = s.sample((0, 0), &mut r).unwrap();
        assert!(d.roots.is_empty() && d.total == 0);
    }

    #[test]
    fn conditioned_exit_mass_equals_the_label() {
        let d = Domain::unit_interval();
        let f = fields();
        let cfg = BackboneConfig {
            prune: false,
            ..Default::default()
        };
        let chain = [Domain::interval(0.2, 0.8).unwrap(), d];
        for i in 0..5 {
            let mut r = rng::stream(4, i);
            let (out, tree) = run_conditioned(&f, pt(0.5), (5, 15), &chain, &cfg, &mut r).unwrap();
            let k = tree.nodes[0].label;
            assert!((out.last().total_mass() - k as f64 / 100.0).abs() < 1e-12);
            for node in &tree.nodes {
                if !node.children.is_empty() {
                    let s: usize = node.children.iter().map(|&c| tree.nodes[c].label).sum();
                    assert_eq!(s, node.label);
                }
            }
            assert_eq!(tree.leaves().count(), k);
        }
    }
}
