//! Backbone trees, their growth from a label model and the dressing pass.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::field::ScalarField;
use crate::geometry::{check_chain, Domain, Point};
use crate::particle::{ExitMeasure, NestedExit, SimConfig, Simulator};
use crate::paths::PathRecord;
use crate::rng::Rng;

use super::path::{interval, BackboneConfig, Crossing, Fate, Walker};

/// Label fields of a backbone: each label has an h-function and the source Γ
/// with ½Δh − l h = −Γ, and splits into two labels at death.
pub trait LabelModel {
    type Label: Copy + std::fmt::Debug + PartialEq;
    /// Particles per unit mass.
    fn n(&self) -> u32;
    fn domain(&self) -> Domain;
    fn h(&self, label: Self::Label) -> Result<&ScalarField>;
    fn source(&self, label: Self::Label) -> Result<&ScalarField>;
    fn split(&self, label: Self::Label, w: Point, rng: &mut Rng) -> Result<(Self::Label, Self::Label)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneNode<L> {
    pub label: L,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub birth_time: f64,
    pub birth: Point,
    pub death_time: f64,
    pub death: Point,
    pub fate: Fate,
    /// Lineage exits from each observation domain, inherited or own.
    pub crossings: Vec<Option<Crossing>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathRecord>,
}

/// One immigrant cluster kept by the dressing pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DressingCluster {
    pub node: usize,
    pub time: f64,
    pub position: Point,
    /// Contributions to the observation domains the lineage had not yet left.
    pub exit: NestedExit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneTree<L> {
    pub domain: Domain,
    /// Observation domains, innermost first.
    pub chain: Vec<Domain>,
    pub epsilon: f64,
    pub nodes: Vec<BackboneNode<L>>,
    pub roots: Vec<usize>,
    /// Exits of the initial particles that carry no label.
    pub initial: NestedExit,
    pub dressing: Vec<DressingCluster>,
}

/// Which proposed immigrant clusters are kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dressing {
    /// Every cluster.
    Plain,
    /// Clusters that never reach ∂D.
    Extinct,
    /// Each cluster with probability e^{−β|X_D|}.
    Tilted { beta: f64 },
}

impl Dressing {
    pub(crate) fn keep(&self, outer: &ExitMeasure, rng: &mut Rng) -> bool {
        match *self {
            Dressing::Plain => true,
            Dressing::Extinct => outer.is_zero(),
            Dressing::Tilted { beta } => rng.random::<f64>() < (-beta * outer.total_mass()).exp(),
        }
    }
}

pub(crate) fn empty_exit(chain: &[Domain]) -> NestedExit {
    NestedExit {
        chain: chain.to_vec(),
        exits: vec![ExitMeasure::default(); chain.len()],
    }
}

/// Simulator over the observation chain with D appended when it is missing.
pub(crate) fn dressing_simulator(domain: &Domain, chain: &[Domain], n: u32) -> Result<Simulator> {
    let mut full = chain.to_vec();
    if full.last() != Some(domain) {
        full.push(*domain);
    }
    check_chain(&full)?;
    Simulator::new(&full, &SimConfig::new(n))
}

/// One cluster from a single particle at `p`, redrawn until `mode` keeps it;
/// returns the exits truncated to the first `len` domains.
pub(crate) fn kept_cluster(sim: &Simulator, p: Point, mode: Dressing, len: usize, rng: &mut Rng) -> Result<NestedExit> {
    const BUDGET: usize = 1_000_000;
    for _ in 0..BUDGET {
        let mut e = sim.run_counts(&[(p, 1)], rng)?;
        if mode.keep(e.last(), rng) {
            e.exits.truncate(len);
            e.chain.truncate(len);
            return Ok(e);
        }
    }
    Err(crate::Error::RejectionBudget { attempts: BUDGET as u64 })
}

impl<L: Copy + std::fmt::Debug + PartialEq> BackboneTree<L> {
    /// Grows the backbone from labelled roots. The dressing is left empty.
    pub fn grow<M: LabelModel<Label = L>>(
        model: &M,
        roots: &[(Point, L)],
        chain: &[Domain],
        initial: NestedExit,
        cfg: &BackboneConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let domain = model.domain();
        let dom = interval(&domain)?;
        if !chain.is_empty() {
            check_chain(chain)?;
            if !chain.last().expect("nonempty").within(&domain) {
                return precondition("observation domains must lie in D");
            }
        }
        let obs: Vec<(f64, f64)> = chain.iter().map(interval).collect::<Result<_>>()?;
        let mut tree = Self {
            domain,
            chain: chain.to_vec(),
            epsilon: 1.0 / model.n() as f64,
            nodes: Vec::new(),
            roots: Vec::new(),
            initial,
            dressing: Vec::new(),
        };
        let mut pending = Vec::new();
        for &(p, label) in roots {
            let idx = tree.nodes.len();
            // a root outside an observation domain is stopped there at once
            let crossings = obs
                .iter()
                .map(|&(a, b)| (!(p[0] > a && p[0] < b)).then_some(Crossing { time: 0.0, point: p, node: idx }))
                .collect();
            tree.nodes.push(Self::newborn(label, None, 0.0, p, crossings));
            tree.roots.push(idx);
            pending.push(idx);
        }
        while let Some(i) = pending.pop() {
            let node = &tree.nodes[i];
            let walker = Walker {
                h: model.h(node.label)?,
                source: model.source(node.label)?,
                domain: dom,
                cfg,
            };
            let mut crossings = node.crossings.clone();
            let (path, fate) = walker.run(node.birth, node.birth_time, &obs, &mut crossings, i, rng)?;
            let (t, w) = (path.exit_time(), path.end());
            let label = node.label;
            {
                let node = &mut tree.nodes[i];
                node.death_time = t;
                node.death = w;
                node.fate = fate;
                node.crossings = crossings.clone();
                node.path = Some(path);
            }
            if fate == Fate::Split {
                let (l1, l2) = model.split(label, w, rng)?;
                for l in [l1, l2] {
                    let c = tree.nodes.len();
                    tree.nodes.push(Self::newborn(l, Some(i), t, w, crossings.clone()));
                    tree.nodes[i].children.push(c);
                    pending.push(c);
                }
            }
        }
        Ok(tree)
    }

    fn newborn(label: L, parent: Option<usize>, t: f64, p: Point, crossings: Vec<Option<Crossing>>) -> BackboneNode<L> {
        BackboneNode {
            label,
            parent,
            children: Vec::new(),
            birth_time: t,
            birth: p,
            death_time: t,
            death: p,
            fate: Fate::Pruned,
            crossings,
            path: None,
        }
    }

    /// Mass carried across observation boundaries by backbone particles.
    pub fn spine_exits(&self) -> NestedExit {
        let mut out = empty_exit(&self.chain);
        for (i, node) in self.nodes.iter().enumerate() {
            for (j, c) in node.crossings.iter().enumerate() {
                if let Some(c) = c {
                    // inherited crossings are counted at the node that made them
                    if c.node == i {
                        out.exits[j].push(c.point, self.epsilon);
                    }
                }
            }
        }
        out
    }

    /// Spine crossings plus initial particles plus kept dressing clusters.
    pub fn observed(&self) -> NestedExit {
        let mut out = self.spine_exits();
        for (acc, e) in out.exits.iter_mut().zip(&self.initial.exits) {
            acc.add(e);
        }
        for d in &self.dressing {
            for (acc, e) in out.exits.iter_mut().zip(&d.exit.exits) {
                acc.add(e);
            }
        }
        out
    }

    /// Total time spent by backbone particles.
    pub fn length(&self) -> f64 {
        self.nodes.iter().map(|n| n.death_time - n.birth_time).sum()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &BackboneNode<L>> {
        self.nodes.iter().filter(|n| n.children.is_empty())
    }

    /// Drops the stored paths, e.g. before a JSON dump.
    pub fn strip_paths(&mut self) {
        for n in &mut self.nodes {
            n.path = None;
        }
    }
}

/// Immigration along every backbone path at rate 4N, one particle of mass
/// 1/N per event, each evolving as the plain branching system and kept
/// according to `mode`. A cluster contributes to an observation domain only
/// if it attached before its lineage left that domain. Fills `tree.dressing`
/// and returns the observed exits.
pub fn dress_backbone<L: Copy + std::fmt::Debug + PartialEq>(
    tree: &mut BackboneTree<L>,
    mode: Dressing,
    rng: &mut Rng,
) -> Result<NestedExit> {
    let n = (1.0 / tree.epsilon).round() as u32;
    let len = tree.chain.len();
    if len == 0 {
        return Ok(tree.observed());
    }
    let sim = dressing_simulator(&tree.domain, &tree.chain, n)?;
    let rate = 4.0 * n as f64;
    let mut out = Vec::new();
    for (i, node) in tree.nodes.iter().enumerate() {
        let path = match &node.path {
            Some(p) => p,
            None => return precondition("dressing needs the backbone paths"),
        };
        let mut next = node.birth_time + Distribution::<f64>::sample(&Exp1, rng) / rate;
        for k in 0..path.times.len().saturating_sub(1) {
            let (t1, p) = (path.times[k + 1], path.points[k]);
            while next < t1 {
                let counted: Vec<bool> = node.crossings.iter().map(|c| c.is_none_or(|c| c.time > next)).collect();
                if counted.iter().any(|&c| c) {
                    let mut e = kept_or_dropped(&sim, p, mode, len, rng)?;
                    if let Some(e) = e.as_mut() {
                        for (j, c) in counted.iter().enumerate() {
                            if !c {
                                e.exits[j] = ExitMeasure::default();
                            }
                        }
                        out.push(DressingCluster {
                            node: i,
                            time: next,
                            position: p,
                            exit: e.clone(),
                        });
                    }
                }
                next += Distribution::<f64>::sample(&Exp1, rng) / rate;
            }
        }
    }
    tree.dressing = out;
    Ok(tree.observed())
}

// a single proposal, thinned by `mode`
fn kept_or_dropped(sim: &Simulator, p: Point, mode: Dressing, len: usize, rng: &mut Rng) -> Result<Option<NestedExit>> {
    let mut e = sim.run_counts(&[(p, 1)], rng)?;
    if !mode.keep(e.last(), rng) {
        return Ok(None);
    }
    e.exits.truncate(len);
    e.chain.truncate(len);
    Ok(Some(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use crate::rng;
    use crate::stats::{ks_two_sample, Estimate};

    // a tree whose single node sits at `x` for time `t`
    fn parked(x: f64, t: f64, n: u32, steps: usize) -> BackboneTree<usize> {
        let d = Domain::unit_interval();
        let times: Vec<f64> = (0..=steps).map(|k| t * k as f64 / steps as f64).collect();
        let points = vec![pt(x); steps + 1];
        BackboneTree {
            domain: d,
            chain: vec![d],
            epsilon: 1.0 / n as f64,
            nodes: vec![BackboneNode {
                label: 1,
                parent: None,
                children: vec![],
                birth_time: 0.0,
                birth: pt(x),
                death_time: t,
                death: pt(x),
                fate: Fate::Split,
                crossings: vec![None],
                path: Some(PathRecord {
                    times,
                    points,
                    truncated: false,
                }),
            }],
            roots: vec![0],
            initial: empty_exit(&[d]),
            dressing: vec![],
        }
    }

    fn dressed_mass(t: f64, n: u32, seed: u64, reps: usize) -> Vec<f64> {
        (0..reps)
            .map(|i| {
                let mut tree = parked(0.5, t, n, 50);
                dress_backbone(&mut tree, Dressing::Plain, &mut rng::stream(seed, i as u64))
                    .unwrap()
                    .last()
                    .total_mass()
            })
            .collect()
    }

    #[test]
    fn plain_immigration_grows_linearly() {
        // each immigrant carries mean mass 1/N to ∂D and arrives at rate 4N
        for t in [0.02, 0.08] {
            let e = Estimate::of(&dressed_mass(t, 100, 3, 1500));
            assert!(e.within(4.0 * t, 4.0), "{e:?} vs {}", 4.0 * t);
        }
    }

    #[test]
    fn zero_length_backbone_has_no_dressing() {
        let mut tree = parked(0.5, 0.0, 100, 1);
        let out = dress_backbone(&mut tree, Dressing::Plain, &mut rng::stream(1, 0)).unwrap();
        assert!(out.last().is_zero() && tree.dressing.is_empty());
    }

    #[test]
    fn immigration_law_is_stable_under_refinement() {
        // halving ε doubles the immigration rate; the dressed law should not move
        let a = dressed_mass(0.05, 100, 11, 1500);
        let b = dressed_mass(0.05, 200, 12, 1500);
        let ks = ks_two_sample(&a, &b).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
    }
}
