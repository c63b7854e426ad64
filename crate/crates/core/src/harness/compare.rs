//! Brute-force conditioning by rejection, the reference the backbone runs are
//! compared against.

use rayon::prelude::*;

use crate::conditioning::exit_count;
use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::particle::{ClusterSampler, NestedExit, SimConfig, Simulator};
use crate::rng;
use crate::stats::Estimate;

const BATCH: usize = 20_000;

/// The chain with the outer domain appended when missing.
pub fn with_outer(chain: &[Domain], domain: &Domain) -> Vec<Domain> {
    let mut c = chain.to_vec();
    if c.last() != Some(domain) {
        c.push(*domain);
    }
    c
}

fn in_range(e: &NestedExit, n: u32, range: (usize, usize)) -> bool {
    let k = exit_count(e.last().total_mass(), n);
    k >= range.0 && k <= range.1
}

/// Batched rejection until `want` realizations are kept or `cap` are drawn.
fn collect_matched(
    want: usize,
    cap: usize,
    seed: u64,
    mut batch: impl FnMut(u64, usize) -> Result<Vec<NestedExit>>,
    keep: impl Fn(&NestedExit) -> bool,
) -> Result<(Vec<NestedExit>, usize)> {
    let mut kept = Vec::new();
    let mut drawn = 0;
    let mut b = 0u64;
    while kept.len() < want {
        if drawn >= cap {
            return Err(Error::Limit(format!("{} of {want} matched after {drawn} draws", kept.len())));
        }
        let size = BATCH.min(cap - drawn);
        kept.extend(batch(rng::derive(seed, &format!("batch {b}")), size)?.into_iter().filter(|e| keep(e)));
        drawn += size;
        b += 1;
    }
    kept.truncate(want);
    Ok((kept, drawn))
}

/// ℕ_y clusters whose outer exit count falls in `range`. Returns the kept
/// clusters and the number drawn.
pub fn matched_clusters(
    chain: &[Domain],
    n: u32,
    y: Point,
    range: (usize, usize),
    want: usize,
    seed: u64,
    cap: usize,
) -> Result<(Vec<NestedExit>, usize)> {
    let sampler = ClusterSampler::new(chain, &SimConfig::new(n))?;
    collect_matched(
        want,
        cap,
        seed,
        |s, size| Ok(sampler.sample_many(y, s, size)?.into_iter().map(|c| c.exit).collect()),
        |e| in_range(e, n, range),
    )
}

/// Runs from the particle configuration `atoms` whose outer exit count falls
/// in `range`.
pub fn matched_runs(
    chain: &[Domain],
    n: u32,
    atoms: &[(Point, u64)],
    range: (usize, usize),
    want: usize,
    seed: u64,
    cap: usize,
) -> Result<(Vec<NestedExit>, usize)> {
    let sim = Simulator::new(chain, &SimConfig::new(n))?;
    collect_matched(want, cap, seed, |s, size| runs(&sim, atoms, s, size), |e| in_range(e, n, range))
}

/// `count` runs from `atoms`; run i uses stream i of `seed`.
pub fn runs(sim: &Simulator, atoms: &[(Point, u64)], seed: u64, count: usize) -> Result<Vec<NestedExit>> {
    (0..count)
        .into_par_iter()
        .map(|i| sim.run_counts(atoms, &mut rng::stream(seed, i as u64)))
        .collect()
}

/// Particle counts of a measure whose atoms are multiples of 1/n.
pub fn particle_counts(mu: &[(Point, f64)], n: u32) -> Result<Vec<(Point, u64)>> {
    mu.iter()
        .filter(|a| a.1 > 0.0)
        .map(|&(p, m)| {
            let c = m * n as f64;
            if (c - c.round()).abs() > 1e-6 {
                return Err(Error::Schema(format!("atom mass {m} is not a multiple of 1/{n}")));
            }
            Ok((p, c.round() as u64))
        })
        .collect()
}

pub fn masses(exits: &[NestedExit], level: usize) -> Vec<f64> {
    exits.iter().map(|e| e.exits[level].total_mass()).collect()
}

/// Frequency of `hits` with the binomial standard error under the
/// hypothesised probability `p0`, which stays positive when no hit occurs.
pub fn proportion(hits: &[bool], p0: f64) -> Estimate {
    let n = hits.len() as f64;
    Estimate {
        mean: hits.iter().filter(|&&h| h).count() as f64 / n,
        se: (p0 * (1.0 - p0) / n).sqrt(),
        count: hits.len() as u64,
    }
}
