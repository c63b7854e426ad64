//! Total-mass statistics of the lattice system: the reference law R_x, the
//! excursion densities γ_{x,v}, fragmentation kernels and Γ_{x,v}.
//!
//! Everything is held at lattice resolution (exit counts k = N·mass) and
//! binned only on output. Bins have an odd number of quanta and are centred
//! on multiples of the bin width, so that bin centres add up under
//! fragmentation and the binned identities inherit exactness from the
//! lattice ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::field::{Grid, ScalarField};
use crate::geometry::{Domain, Point};
use crate::kernels::green_field;
use crate::lattice_law::{ExcursionFields, MassPgf};
use crate::particle::{ClusterSampler, SimConfig, Simulator};
use crate::stats::Estimate;

pub const DEFAULT_BINS: usize = 64;
pub const BIN_FLOOR: u64 = 20;
// populated threshold for exact tables
const EXACT_FLOOR: f64 = 1e-14;

/// Mass bins of `width` quanta (odd) centred at i·width/N. Bin 0 holds the
/// positive counts 1..=width/2 only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MassGrid {
    pub n: u32,
    pub width: usize,
    pub bins: usize,
}

impl MassGrid {
    pub fn new(n: u32, width: usize, bins: usize) -> Result<Self> {
        if n == 0 || width.is_multiple_of(2) || bins < 2 {
            return precondition("mass grid needs n ≥ 1, an odd width and ≥ 2 bins");
        }
        Ok(Self { n, width, bins })
    }

    /// Smallest odd width for which `bins` bins reach mass `vmax`.
    pub fn covering(n: u32, vmax: f64, bins: usize) -> Result<Self> {
        let need = (vmax * n as f64 / bins as f64).ceil().max(1.0) as usize;
        Self::new(n, need | 1, bins)
    }

    fn half(&self) -> usize {
        self.width / 2
    }

    /// Inclusive count range of bin `i`; empty for bin 0 when width = 1.
    pub fn count_range(&self, i: usize) -> (usize, usize) {
        let c = i * self.width;
        let lo = if i == 0 { 1 } else { c - self.half() };
        (lo, c + self.half())
    }

    /// Largest count covered by the grid.
    pub fn kmax(&self) -> usize {
        self.count_range(self.bins - 1).1
    }

    pub fn bin_of_count(&self, k: usize) -> Option<usize> {
        if k == 0 || k > self.kmax() {
            return None;
        }
        Some((k + self.half()) / self.width)
    }

    pub fn bin_of_mass(&self, v: f64) -> Option<usize> {
        self.bin_of_count((v * self.n as f64).round() as usize)
    }

    pub fn center(&self, i: usize) -> f64 {
        (i * self.width) as f64 / self.n as f64
    }

    /// Bin width in mass units.
    pub fn delta(&self) -> f64 {
        self.width as f64 / self.n as f64
    }

    /// Bin sums of a lattice table over k ≥ 1 and the mass beyond the last bin.
    pub fn bin_lattice(&self, lattice: &[f64]) -> (Vec<f64>, f64) {
        let mut out = vec![0.0; self.bins];
        let mut over = 0.0;
        for (k, &v) in lattice.iter().enumerate().skip(1) {
            match self.bin_of_count(k) {
                Some(i) => out[i] += v,
                None => over += v,
            }
        }
        (out, over)
    }
}

/// Exit counts Z = N·⟨X_D, 1⟩ of a realization, rounded to the lattice.
pub fn exit_count(total_mass: f64, n: u32) -> usize {
    (total_mass * n as f64).round() as usize
}

/// Reference law R_x of the total exit mass on {X_D ≠ 0}, for unit mass at x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassLaw {
    pub x: Point,
    pub grid: MassGrid,
    /// P_x(Z = k), k = 0..=kmax (empirical frequencies for estimated laws).
    pub lattice: Vec<f64>,
    /// R_x bin masses.
    pub bins: Vec<f64>,
    /// Per-bin sample counts; empty for exact laws.
    pub counts: Vec<u64>,
    pub samples: u64,
    /// R_x(0,∞) = P_x(X_D ≠ 0).
    pub r0: f64,
    pub r0_se: f64,
    pub overflow: f64,
    /// Bins below the floor that lie inside the observed support.
    pub empty_bins: Vec<usize>,
}

impl MassLaw {
    fn from_lattice(x: Point, grid: MassGrid, lattice: Vec<f64>, counts: Vec<u64>, samples: u64) -> Self {
        let (bins, overflow) = grid.bin_lattice(&lattice);
        let r0 = 1.0 - lattice[0];
        let r0_se = if samples > 0 {
            (r0 * (1.0 - r0) / samples as f64).sqrt()
        } else {
            0.0
        };
        let mut law = Self {
            x,
            grid,
            lattice,
            bins,
            counts,
            samples,
            r0,
            r0_se,
            overflow,
            empty_bins: Vec::new(),
        };
        let pop = law.populated();
        if let Some(last) = pop.iter().rposition(|&p| p) {
            law.empty_bins = (0..last).filter(|&i| !pop[i] && law.grid.count_range(i).0 <= law.grid.count_range(i).1).collect();
        }
        law
    }

    /// Bins carrying enough samples (estimated laws) or positive mass (exact laws).
    pub fn populated(&self) -> Vec<bool> {
        if self.samples == 0 {
            self.bins.iter().map(|&b| b > EXACT_FLOOR).collect()
        } else {
            self.counts.iter().map(|&c| c >= BIN_FLOOR).collect()
        }
    }

    /// Histogram density r(v) on bin `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.bins[i] / self.grid.delta()
    }

    /// ∫ r over the bins.
    pub fn integral(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// ∫ v r(v) dv at lattice resolution (the extinction atom adds nothing).
    pub fn mean_mass(&self) -> f64 {
        let eps = 1.0 / self.grid.n as f64;
        self.lattice.iter().enumerate().map(|(k, p)| k as f64 * eps * p).sum()
    }

    /// Lattice R_x with the extinction entry zeroed.
    pub fn reference(&self) -> Vec<f64> {
        let mut r = self.lattice.clone();
        r[0] = 0.0;
        r
    }

    /// Bins in decreasing order of R_x mass, populated ones only.
    pub fn bulk_bins(&self, count: usize) -> Vec<usize> {
        let pop = self.populated();
        let mut idx: Vec<usize> = (0..self.grid.bins).filter(|&i| pop[i]).collect();
        idx.sort_by(|&a, &b| self.bins[b].total_cmp(&self.bins[a]).then(a.cmp(&b)));
        idx.truncate(count);
        idx.sort_unstable();
        idx
    }
}

/// R_x from `replicas` runs of unit mass at x.
pub fn estimate_mass_law(
    domain: &Domain,
    x: Point,
    replicas: usize,
    grid: MassGrid,
    config: &SimConfig,
    seed: u64,
) -> Result<MassLaw> {
    if grid.n != config.n {
        return precondition("mass grid and simulator use different quanta");
    }
    if replicas == 0 {
        return precondition("need at least one replica");
    }
    let sim = Simulator::new(&[*domain], config)?;
    let counts: Vec<usize> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut r = crate::rng::stream(seed, i as u64);
            sim.run(&[(x, 1.0)], &mut r)
                .map(|e| exit_count(e.last().total_mass(), config.n))
        })
        .collect::<Result<_>>()?;
    Ok(mass_law_from_counts(x, grid, &counts))
}

/// Empirical R_x from exit counts.
pub fn mass_law_from_counts(x: Point, grid: MassGrid, counts: &[usize]) -> MassLaw {
    let kmax = grid.kmax();
    let mut lattice = vec![0.0; kmax + 1];
    let mut bin_counts = vec![0u64; grid.bins];
    let w = 1.0 / counts.len() as f64;
    for &k in counts {
        if k <= kmax {
            lattice[k] += w;
        }
        if let Some(i) = grid.bin_of_count(k) {
            bin_counts[i] += 1;
        }
    }
    let mut law = MassLaw::from_lattice(x, grid, lattice, bin_counts, counts.len() as u64);
    // overflow is not visible in a truncated lattice table
    let over = counts.iter().filter(|&&k| k > kmax).count() as f64 * w;
    law.overflow = over;
    law.r0 += over;
    law
}

/// R_x from the generating function at point `i` of `pgf` (unit mass there).
pub fn exact_mass_law(pgf: &MassPgf, i: usize, grid: MassGrid) -> Result<MassLaw> {
    if grid.n != pgf.n {
        return precondition("mass grid and generating function use different quanta");
    }
    let full = pgf.counts_law(&[(i, pgf.n as u64)])?;
    let kmax = grid.kmax().min(full.len() - 1);
    let mut law = MassLaw::from_lattice(pgf.points[i], grid, full[..=kmax].to_vec(), Vec::new(), 0);
    law.overflow = full[kmax + 1..].iter().sum();
    law.r0 = 1.0 - full[0];
    Ok(law)
}

/// Tabulated excursion densities n_y(k) = ℕ_y(Z = k) on interior nodes y and
/// γ_{x,v}(y) = n_y(v)/r(v) on mass bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub grid: MassGrid,
    /// Line grid whose interior nodes are the tabulated y.
    pub ygrid: Grid,
    /// n_y(k) for k = 0..=kmax (entry 0 unused) per node.
    pub lattice: Vec<Vec<f64>>,
    /// ℕ_y(X_D ≠ 0) = V_D(N)(y) per node, the normalization target.
    pub total: Vec<f64>,
    /// Bin sums of n_y per node.
    pub bins: Vec<Vec<f64>>,
    /// Reference bin masses r and the populated mask they were built with.
    pub reference: Vec<f64>,
    pub populated: Vec<bool>,
    pub samples_per_node: u64,
    /// Bins left out because R_x is below the floor there.
    pub excluded: Vec<usize>,
}

impl GammaTable {
    fn build(ygrid: Grid, law: &MassLaw, lattice: Vec<Vec<f64>>, total: Vec<f64>, samples: u64) -> Self {
        let grid = law.grid;
        let bins: Vec<Vec<f64>> = lattice.iter().map(|l| grid.bin_lattice(l).0).collect();
        let populated = law.populated();
        let excluded = (0..grid.bins).filter(|&i| !populated[i]).collect();
        Self {
            grid,
            ygrid,
            lattice,
            total,
            bins,
            reference: law.bins.clone(),
            populated,
            samples_per_node: samples,
            excluded,
        }
    }

    pub fn nodes(&self) -> Vec<Point> {
        self.ygrid.nodes()
    }

    /// γ_{x,v}(y_j) on bin `i`; None on excluded bins.
    pub fn gamma(&self, j: usize, i: usize) -> Option<f64> {
        self.populated[i].then(|| self.bins[j][i] / self.reference[i])
    }

    /// Σ_v γ_{x,v}(y_j) r(v) Δv over populated bins.
    pub fn normalization(&self, j: usize) -> f64 {
        (0..self.grid.bins)
            .filter(|&i| self.populated[i])
            .map(|i| self.bins[j][i])
            .sum()
    }

    /// γ_{x,v} on bin `i` as a field over the y-grid; boundary values come
    /// from n_k|∂D = N·1{k = 1}.
    pub fn gamma_field(&self, i: usize) -> Result<ScalarField> {
        if !self.populated[i] {
            return Err(Error::Data(format!("mass bin {i} is excluded")));
        }
        let values = (0..self.lattice.len()).map(|j| self.bins[j][i] / self.reference[i]).collect();
        let edge = if self.grid.bin_of_count(1) == Some(i) {
            self.grid.n as f64 / self.reference[i]
        } else {
            0.0
        };
        ScalarField::new(self.ygrid.clone(), values, vec![edge; self.ygrid.boundary_len()])
    }
}

/// γ from ℕ_y-cluster samples at the nodes of `ygrid`: n_y(k) is V_D(N)(y)
/// times the empirical law of Z among `replicas` surviving clusters.
pub fn estimate_gamma(
    domain: &Domain,
    ygrid: &Grid,
    law: &MassLaw,
    replicas: usize,
    config: &SimConfig,
    seed: u64,
) -> Result<GammaTable> {
    if ygrid.domain() != *domain {
        return precondition("y-grid must cover the exit domain");
    }
    if law.grid.n != config.n {
        return precondition("mass law and simulator use different quanta");
    }
    let sampler = ClusterSampler::new(&[*domain], config)?;
    let kmax = law.grid.kmax();
    let nodes = ygrid.nodes();
    let mut lattice = Vec::with_capacity(nodes.len());
    let mut total = Vec::with_capacity(nodes.len());
    for (j, &y) in nodes.iter().enumerate() {
        let cl = sampler.sample_many(y, crate::rng::derive(seed, &format!("gamma-node-{j}")), replicas)?;
        let weight = sampler.potential().eval(y);
        let mut row = vec![0.0; kmax + 1];
        let w = weight / replicas as f64;
        for c in &cl {
            let k = exit_count(c.exit.last().total_mass(), config.n);
            if (1..=kmax).contains(&k) {
                row[k] += w;
            }
        }
        lattice.push(row);
        total.push(weight);
    }
    Ok(GammaTable::build(ygrid.clone(), law, lattice, total, replicas as u64))
}

/// γ from the excursion recursion, exact for the lattice system.
pub fn exact_gamma(fields: &ExcursionFields, ygrid: &Grid, law: &MassLaw) -> Result<GammaTable> {
    let kmax = law.grid.kmax();
    if fields.kmax() < kmax {
        return precondition(format!("excursion fields stop at {} < {kmax}", fields.kmax()));
    }
    let nodes = ygrid.nodes();
    let lattice = nodes
        .iter()
        .map(|&y| {
            let mut row = vec![0.0; kmax + 1];
            for (k, v) in row.iter_mut().enumerate().skip(1) {
                *v = fields.field(k).map(|f| f.eval(y)).unwrap_or(0.0);
            }
            row
        })
        .collect();
    let total = nodes.iter().map(|&y| fields.u.eval(y)).collect();
    Ok(GammaTable::build(ygrid.clone(), law, lattice, total, 0))
}

/// Binary fragmentation kernel of R_x at lattice resolution:
/// k(v, v') = r(v') r(v − v') / r(v) with r the R_x density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragKernel {
    pub grid: MassGrid,
    /// R_x lattice masses, entry 0 zero.
    pub r: Vec<f64>,
    pub populated: Vec<bool>,
}

impl FragKernel {
    pub fn from_law(law: &MassLaw) -> Self {
        Self {
            grid: law.grid,
            r: law.reference(),
            populated: law.populated(),
        }
    }

    /// Kernel of a prescribed density r(v), sampled on the lattice (every bin
    /// populated). Used for synthetic checks.
    pub fn from_density(grid: MassGrid, r: impl Fn(f64) -> f64) -> Self {
        let eps = 1.0 / grid.n as f64;
        let mut lattice: Vec<f64> = (0..=grid.kmax()).map(|k| r(k as f64 * eps) * eps).collect();
        lattice[0] = 0.0;
        Self {
            grid,
            r: lattice,
            populated: vec![true; grid.bins],
        }
    }

    fn eps(&self) -> f64 {
        1.0 / self.grid.n as f64
    }

    /// k(v, v') for lattice masses v = k·ε, v' = a·ε with 0 < a < k.
    pub fn density(&self, k: usize, a: usize) -> Option<f64> {
        if a == 0 || a >= k || k >= self.r.len() || self.r[k] <= 0.0 {
            return None;
        }
        // densities are lattice masses over ε
        let e = self.eps();
        Some((self.r[a] / e) * (self.r[k - a] / e) / (self.r[k] / e))
    }

    /// Law of the first fragment a given label k, ∝ r(a) r(k − a).
    pub fn split_law(&self, k: usize) -> Vec<f64> {
        let mut w = vec![0.0; k];
        for (a, v) in w.iter_mut().enumerate().skip(1) {
            *v = self.r[a] * self.r.get(k - a).copied().unwrap_or(0.0);
        }
        w
    }

    /// r^{*m} at lattice resolution up to the table length.
    pub fn convolution_power(&self, m: usize) -> Vec<f64> {
        let len = self.r.len();
        let mut acc = vec![0.0; len];
        acc[0] = 1.0;
        for _ in 0..m {
            acc = convolve(&acc, &self.r, len);
        }
        acc
    }
}

/// Truncated convolution of two lattice tables.
pub fn convolve(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &x) in a.iter().enumerate().take(len) {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(len - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// Γ_{x,v} on bin `i` over the y-grid: 2 Σ_{v'} γ_{v'} γ_{v−v'} k(v, v') Δv',
/// evaluated at lattice resolution, where it reduces to 2(n_y * n_y)(k)/r(k)
/// summed over the bin.
#[allow(non_snake_case)]
pub fn Gamma_field(gamma: &GammaTable, frag: &FragKernel, i: usize) -> Result<ScalarField> {
    if gamma.grid != frag.grid {
        return precondition("γ table and kernel use different mass grids");
    }
    if !gamma.populated[i] {
        return Err(Error::Data(format!("mass bin {i} is excluded")));
    }
    let (lo, hi) = gamma.grid.count_range(i);
    let values: Vec<f64> = gamma
        .lattice
        .iter()
        .map(|row| {
            let mut s = 0.0;
            for k in lo..=hi.min(row.len() - 1) {
                for a in 1..k {
                    // γ_a γ_{k−a} k(k, a) Δv' with Δv' = ε collapses to n_a n_{k−a}/r_k
                    s += row[a] * row[k - a];
                }
            }
            2.0 * s / gamma.reference[i]
        })
        .collect();
    // Γ vanishes on ∂D for every label: one of the two factors has k ≥ 2
    ScalarField::new(gamma.ygrid.clone(), values, vec![0.0; gamma.ygrid.boundary_len()])
}

/// Relative L¹ distance on the y-grid between γ_{x,v} and G^{4u}Γ_{x,v}, with
/// Γ interpolated onto the killing field's grid.
pub fn potential_residual(gamma: &GammaTable, frag: &FragKernel, i: usize, u: &ScalarField) -> Result<f64> {
    let g = gamma.gamma_field(i)?;
    let cap = Gamma_field(gamma, frag, i)?;
    let l = u.map(|v| 4.0 * v);
    let src = ScalarField::from_fn(&u.grid, |p| cap.eval(p));
    let pot = green_field(&l, &src)?;
    let nodes = gamma.nodes();
    let num: f64 = nodes.iter().map(|&y| (g.eval(y) - pot.eval(y)).abs()).sum();
    let den: f64 = nodes.iter().map(|&y| g.eval(y).abs()).sum();
    if den <= 0.0 {
        return Err(Error::Data(format!("γ vanishes on bin {i}")));
    }
    Ok(num / den)
}

/// Lemma-style consistency of hierarchical splitting: split label k into
/// `groups` groups of sizes `sizes` by the group-sum law, then each group into
/// singletons, and compare the histogram of the first fragment with the exact
/// marginal r(a) r^{*(n−1)}(k − a)/r^{*n}(k). Returns the L¹ discrepancy over
/// populated mass bins, relative to the exact marginal's mass there.
pub fn kernel_consistency(frag: &FragKernel, k: usize, sizes: &[usize], samples: usize, seed: u64) -> Result<f64> {
    let n: usize = sizes.iter().sum();
    if sizes.is_empty() || sizes.contains(&0) || n < 2 {
        return precondition("group sizes must be positive and add up to at least 2");
    }
    let powers: Vec<Vec<f64>> = (0..=n).map(|m| frag.convolution_power(m)).collect();
    if k >= frag.r.len() || powers[n][k] <= 0.0 {
        return Err(Error::Data(format!("label {k} has no {n}-fold mass")));
    }
    let mut hist = vec![0.0; frag.grid.bins];
    for s in 0..samples {
        let mut rng = crate::rng::stream(seed, s as u64);
        let parts = split_groups(&powers, k, sizes, &mut rng)?;
        // the first group is then split into its members
        let first = split_groups(&powers, parts[0], &vec![1; sizes[0]], &mut rng)?[0];
        if let Some(b) = frag.grid.bin_of_count(first) {
            hist[b] += 1.0 / samples as f64;
        }
    }
    let mut exact = vec![0.0; frag.grid.bins];
    for a in 1..k {
        if let Some(b) = frag.grid.bin_of_count(a) {
            exact[b] += frag.r[a] * powers[n - 1][k - a] / powers[n][k];
        }
    }
    let bins: Vec<usize> = (0..frag.grid.bins)
        .filter(|&b| frag.populated[b] && exact[b] * samples as f64 >= BIN_FLOOR as f64)
        .collect();
    let num: f64 = bins.iter().map(|&b| (hist[b] - exact[b]).abs()).sum();
    let den: f64 = bins.iter().map(|&b| exact[b]).sum();
    Ok(num / den)
}

// sequential group sums: w_j ∝ r^{*n_j}(w_j) r^{*(rest)}(k − Σw)
fn split_groups(powers: &[Vec<f64>], k: usize, sizes: &[usize], rng: &mut crate::rng::Rng) -> Result<Vec<usize>> {
    use rand::Rng as _;
    let mut left = k;
    let mut rest: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(sizes.len());
    for (g, &m) in sizes.iter().enumerate() {
        if g + 1 == sizes.len() {
            out.push(left);
            break;
        }
        rest -= m;
        let w: Vec<f64> = (0..=left)
            .map(|a| powers[m].get(a).copied().unwrap_or(0.0) * powers[rest].get(left - a).copied().unwrap_or(0.0))
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::Data(format!("no admissible split of {left}")));
        }
        let mut t = rng.random::<f64>() * total;
        let mut a = 0;
        while a + 1 < w.len() && t >= w[a] {
            t -= w[a];
            a += 1;
        }
        out.push(a);
        left -= a;
    }
    Ok(out)
}

/// Self-consistency of γ at y = x: n_x(v)/r(v) from two independent runs.
pub fn gamma_at_base(gamma: &GammaTable, j: usize, law: &MassLaw) -> Vec<Option<Estimate>> {
    (0..gamma.grid.bins)
        .map(|i| {
            let g = gamma.gamma(j, i)?;
            let m = gamma.samples_per_node.max(1) as f64;
            let p = (gamma.bins[j][i] / gamma.total[j]).clamp(0.0, 1.0);
            // binomial errors of the two histograms, combined in quadrature
            let rel_n = ((1.0 - p) / (p * m)).sqrt();
            let q = law.bins[i].clamp(1e-300, 1.0);
            let rel_r = if law.samples > 0 {
                ((1.0 - q) / (q * law.samples as f64)).sqrt()
            } else {
                0.0
            };
            Some(Estimate {
                mean: g,
                se: g * (rel_n * rel_n + rel_r * rel_r).sqrt(),
                count: gamma.samples_per_node,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_are_centred_and_cover_the_lattice() {
        let g = MassGrid::new(100, 5, 10).unwrap();
        assert_eq!(g.count_range(0), (1, 2));
        assert_eq!(g.count_range(1), (3, 7));
        assert_eq!(g.bin_of_count(7), Some(1));
        assert_eq!(g.bin_of_count(8), Some(2));
        assert_eq!(g.bin_of_count(0), None);
        assert_eq!(g.kmax(), 47);
        assert_eq!(g.bin_of_count(48), None);
        assert!((g.center(3) - 0.15).abs() < 1e-15);
        for k in 1..=g.kmax() {
            let (lo, hi) = g.count_range(g.bin_of_count(k).unwrap());
            assert!(lo <= k && k <= hi);
        }
        assert!(MassGrid::new(100, 4, 10).is_err());
        assert_eq!(MassGrid::covering(100, 5.8, 64).unwrap().width, 11);
    }

    #[test]
    fn synthetic_exponential_gives_uniform_kernel() {
        let g = MassGrid::new(100, 5, 40).unwrap();
        let k = FragKernel::from_density(g, |v| (-v).exp());
        for kk in [2, 17, 150] {
            for a in 1..kk {
                assert!((k.density(kk, a).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let g = MassGrid::new(100, 5, 40).unwrap();
        let k = FragKernel::from_density(g, |v| v.sqrt() * (-2.0 * v).exp());
        for a in 1..60 {
            assert_eq!(k.density(60, a), k.density(60, 60 - a));
        }
    }

    #[test]
    fn synthetic_uniform_kernel_and_flat_gamma() {
        // r = e^{-v} and n_y ≡ c·r on the lattice: Γ = 2 c² Σ_a r_a r_{k−a}/r_k
        let g = MassGrid::new(100, 1, 200).unwrap();
        let frag = FragKernel::from_density(g, |v| (-v).exp());
        let law = MassLaw::from_lattice([0.5, 0.0], g, frag.r.clone(), Vec::new(), 0);
        let ygrid = Grid::line(&Domain::unit_interval(), 3).unwrap();
        let c = 0.7;
        let row: Vec<f64> = frag.r.iter().map(|v| c * v).collect();
        let table = GammaTable::build(ygrid, &law, vec![row; 3], vec![1.0; 3], 0);
        let cap = Gamma_field(&table, &frag, 150).unwrap();
        // 2γ²v with γ = c, where the lattice sum has k − 1 terms of size ε
        let expect = 2.0 * c * c * 149.0 * 0.01;
        assert!((cap.values[1] - expect).abs() < 1e-9 * expect, "{} vs {expect}", cap.values[1]);
    }
}
