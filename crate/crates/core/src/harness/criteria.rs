//! The ten acceptance criteria as record producers. Shared by `verify` and the
//! integration tests, so both exercise the same numbers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::backbone::{point_backbone, run_conditioned_replicas, run_forest, BackboneConfig, ForestSampler, PointModel};
use crate::conditioning::{
    estimate_gamma, exact_gamma, exact_mass_law, kernel_consistency, potential_residual, BetaQuadrature, FragKernel,
    HBeta0, HBetaK, HPoint, HvSeries, MassGrid, MassLaw, RhoTable, DEFAULT_N_MAX,
};
use crate::error::{Error, Result};
use crate::field::{BoundaryFunction, Grid, ScalarField};
use crate::geometry::{pt, Domain, Point};
use crate::kernels::{green_field, poisson_op};
use crate::lattice_law::{ExcursionFields, MassPgf};
use crate::loglaplace::{default_ladder_tol, solve_VD, solve_blowup};
use crate::model::Model;
use crate::moments::{laplace_derivative_oracle, moment_p_C, MomentSpec, DEFAULT_ORACLE_STEP};
use crate::particle::{ClusterSampler, NestedExit, SimConfig, Simulator};
use crate::rng;
use crate::stats::{effective_sample_size, estimator_merge, ks_two_sample, ks_two_sample_weighted, Estimate, Partial};

use super::compare::{masses, matched_clusters, matched_runs, proportion, runs};
use super::config::{Atom, Experiment, ExperimentConfig, Scale, Target, Tolerances};
use super::report::{Provenance, Record, Report};
use super::run::run;

const N: u32 = 100;
const LATTICE: Model = Model::Lattice { n: N };
/// u(1/2) for the unit interval from the Weierstrass-function closed form.
const BLOWUP_CENTER: f64 = 8.8476;
const FIELD_NODES: usize = 1023;
const VMAX: f64 = 6.0;
// rejection budget for brute-force conditioning
const BRUTE_CAP: usize = 2_000_000;

fn x0() -> Point {
    pt(0.5)
}

fn inner_start() -> Point {
    pt(0.4)
}

fn harmonic_domain() -> Domain {
    Domain::Interval { a: 0.25, b: 0.75 }
}

fn backbone_domain() -> Domain {
    Domain::Interval { a: 0.2, b: 0.8 }
}

struct Sizes {
    replicas: usize,
    compose: usize,
    gamma: usize,
    kernel: usize,
    matched: usize,
    weighted: usize,
}

impl Sizes {
    fn of(scale: Scale) -> Self {
        match scale {
            Scale::Full => Self {
                replicas: 100_000,
                compose: 10_000,
                gamma: 100_000,
                kernel: 20_000,
                matched: 2_000,
                weighted: 8_000,
            },
            Scale::Quick => Self {
                replicas: 10_000,
                compose: 1_000,
                gamma: 10_000,
                kernel: 4_000,
                matched: 200,
                weighted: 1_000,
            },
        }
    }
}

// a cache whose initializer may fail; the error is kept as text
fn cached<T>(cell: &OnceLock<std::result::Result<T, String>>, init: impl FnOnce() -> Result<T>) -> Result<&T> {
    cell.get_or_init(|| init().map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Missing(format!("shared table: {e}")))
}

/// Shared samples and tables for the criteria, computed on first use.
pub struct Lab {
    pub seed: u64,
    pub scale: Scale,
    pub tol: Tolerances,
    /// Scratch directory for the determinism reruns.
    pub scratch: PathBuf,
    domain: Domain,
    base: OnceLock<std::result::Result<Vec<NestedExit>, String>>,
    inner: OnceLock<std::result::Result<Vec<NestedExit>, String>>,
    pgf: OnceLock<std::result::Result<MassPgf, String>>,
    fields: OnceLock<std::result::Result<ExcursionFields, String>>,
}

impl Lab {
    pub fn new(seed: u64, scale: Scale, tol: Tolerances, scratch: PathBuf) -> Self {
        Self {
            seed,
            scale,
            tol,
            scratch,
            domain: Domain::unit_interval(),
            base: OnceLock::new(),
            inner: OnceLock::new(),
            pgf: OnceLock::new(),
            fields: OnceLock::new(),
        }
    }

    fn sizes(&self) -> Sizes {
        Sizes::of(self.scale)
    }

    fn seed_for(&self, label: &str) -> u64 {
        rng::derive(self.seed, label)
    }

    fn k(&self) -> f64 {
        self.tol.se_multiplier
    }

    /// X_D from unit mass at 1/2.
    fn base(&self) -> Result<&[NestedExit]> {
        cached(&self.base, || {
            let sim = Simulator::new(&[self.domain], &SimConfig::new(N))?;
            sim.replicas(&[(x0(), 1.0)], self.seed_for("base"), self.sizes().replicas)
        })
        .map(|v| v.as_slice())
    }

    /// (X_{D'}, X_D) from unit mass at 0.4 with D' = (0.25, 0.75).
    fn inner(&self) -> Result<&[NestedExit]> {
        cached(&self.inner, || {
            let sim = Simulator::new(&[harmonic_domain(), self.domain], &SimConfig::new(N))?;
            sim.replicas(&[(inner_start(), 1.0)], self.seed_for("inner"), self.sizes().replicas)
        })
        .map(|v| v.as_slice())
    }

    fn pgf(&self) -> Result<&MassPgf> {
        cached(&self.pgf, || MassPgf::new(&self.domain, N, &[x0(), inner_start(), pt(0.25), pt(0.75)]))
    }

    fn grid(&self) -> Result<MassGrid> {
        MassGrid::covering(N, VMAX, crate::conditioning::DEFAULT_BINS)
    }

    fn law(&self) -> Result<MassLaw> {
        exact_mass_law(self.pgf()?, 0, self.grid()?)
    }

    fn fields(&self) -> Result<&ExcursionFields> {
        cached(&self.fields, || ExcursionFields::new(&self.domain, N, FIELD_NODES, self.grid()?.kmax()))
    }

    /// Records of one criterion.
    pub fn criterion(&self, c: u8) -> Result<Vec<Record>> {
        match c {
            1 => self.kernels(),
            2 => self.log_laplace(),
            3 => self.moments(),
            4 => self.poisson(),
            5 => self.harmonicity(),
            6 => self.density(),
            7 => self.fragmentation(),
            8 => self.potential(),
            9 => self.backbone(),
            10 => self.determinism(),
            _ => Err(Error::Schema(format!("no acceptance criterion {c}"))),
        }
    }

    pub fn report(&self, criteria: &[u8]) -> Result<Report> {
        let mut rep = Report::new("verify", self.seed);
        for &c in criteria {
            rep.extend(self.criterion(c)?);
        }
        Ok(rep)
    }

    fn kernels(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let grid = Grid::line(&d, 2048)?;
        let l = ScalarField::constant(&grid, 8.0);
        let f = BoundaryFunction::endpoints(&d, 0.0, 1.0)?;
        let p = poisson_op(&d, &l, &f, x0())?;
        let w = green_field(&ScalarField::zeros(&grid), &ScalarField::constant(&grid, 1.0))?;
        let err = grid
            .nodes()
            .iter()
            .zip(&w.values)
            .map(|(y, v)| (v - y[0] * (1.0 - y[0])).abs())
            .fold(0.0, f64::max);
        Ok(vec![
            Record::abs(1, "Poisson kernel, l = 8, f = (0,1), x = 0.5", Provenance::Derived, 2f64.sinh() / 4f64.sinh(), p, self.tol.poisson_kernel),
            Record::at_most(1, "Green operator of 1, max error against x(1-x)", Provenance::Derived, err, self.tol.green_kernel),
        ])
    }

    fn log_laplace(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let base = self.base()?;
        let mut out = Vec::new();
        for beta in [0.5, 1.0, 2.0, 4.0] {
            let f = BoundaryFunction::constant(&d, beta);
            // the solver's stopping rule scales with max K_D f = beta; the check is absolute
            let sol = solve_VD(&d, &f, self.tol.log_laplace_residual / beta.max(1.0))?;
            out.push(Record::at_most(2, format!("solve_VD residual, beta = {beta}"), Provenance::Derived, sol.residual_norm, self.tol.log_laplace_residual));
            let xs: Vec<f64> = base.iter().map(|e| (-beta * e.last().total_mass()).exp()).collect();
            let est = Estimate::of(&xs);
            let lattice = LATTICE.laplace_exponent(&d, &f)?.eval(x0());
            out.push(Record::within_se(2, format!("MC Laplace functional vs lattice exponent, beta = {beta}"), Provenance::Derived, (-lattice).exp(), est, self.k()));
            out.push(
                Record::within_se(2, format!("MC Laplace functional vs continuum V_D, beta = {beta}"), Provenance::Derived, (-sol.u.eval(x0())).exp(), est, self.k())
                    .known_gap(),
            );
        }
        let b = solve_blowup(&d, default_ladder_tol(&d))?;
        let (lo, hi) = self.tol.blowup_profile;
        for i in 0..3 {
            let y = b.u.grid.node(i);
            let dist = d.dist_to_boundary(y);
            out.push(Record::in_range(2, format!("blow-up u d^2 at d = {dist:.3e}"), Provenance::Paper, b.u.values[i] * dist * dist, lo, hi));
        }
        let c = b.u.eval(x0());
        out.push(Record::abs(2, "blow-up u(0.5)", Provenance::Derived, BLOWUP_CENTER, c, 1e-3 * BLOWUP_CENTER));
        Ok(out)
    }

    fn moment_battery(&self) -> Result<Vec<(String, MomentSpec, Vec<(Point, f64)>)>> {
        let d = self.domain;
        let c = |v: f64| BoundaryFunction::constant(&d, v);
        let ep = |a: f64, b: f64| BoundaryFunction::endpoints(&d, a, b).expect("interval endpoints");
        let one = vec![(x0(), 1.0)];
        let two = vec![(pt(0.2), 0.7), (pt(0.6), 1.1)];
        let cases: Vec<(&str, BoundaryFunction, Vec<BoundaryFunction>, Vec<usize>, Vec<(Point, f64)>, Model)> = vec![
            ("mass", c(0.0), vec![c(1.0)], vec![0], one.clone(), Model::Continuum),
            ("second mass moment", c(0.0), vec![c(1.0)], vec![0, 0], one.clone(), Model::Continuum),
            ("third mass moment", c(0.0), vec![c(1.0)], vec![0, 0, 0], one.clone(), Model::Continuum),
            ("right endpoint, phi = 1", c(1.0), vec![ep(0.0, 1.0)], vec![0], one.clone(), Model::Continuum),
            ("mixed order 3 at 0.4", c(0.5), vec![c(1.0), ep(0.2, 1.0)], vec![0, 1, 1], vec![(pt(0.4), 1.0)], Model::Continuum),
            ("both endpoints, phi = 2", c(2.0), vec![ep(1.0, 0.0), ep(0.0, 1.0)], vec![0, 1], one.clone(), Model::Continuum),
            ("uneven phi, two atoms", ep(0.5, 2.0), vec![c(1.0)], vec![0, 0], two.clone(), Model::Continuum),
            ("two test functions, two atoms", c(1.0), vec![ep(1.0, 0.3), ep(0.1, 2.0)], vec![0, 1, 1], two, Model::Continuum),
            ("three test functions, phi = 4", c(4.0), vec![c(1.0), ep(0.0, 1.0), ep(1.0, 0.0)], vec![0, 1, 2], one.clone(), Model::Continuum),
            ("lattice mixed order 3", c(1.0), vec![c(1.0), ep(0.0, 1.0)], vec![0, 1, 1], one.clone(), LATTICE),
            ("lattice third mass moment", c(0.0), vec![c(1.0)], vec![0, 0, 0], one.clone(), LATTICE),
            ("lattice endpoints, phi = 2", c(2.0), vec![ep(1.0, 0.0), ep(0.0, 1.0)], vec![0, 1], one, LATTICE),
        ];
        Ok(cases
            .into_iter()
            .map(|(name, phi, f, cs, mu, model)| (name.to_string(), MomentSpec::single(&d, phi, f, cs).with_model(model), mu))
            .collect())
    }

    fn moments(&self) -> Result<Vec<Record>> {
        let mut out = Vec::new();
        for (name, spec, mu) in self.moment_battery()? {
            let p = moment_p_C(&spec, &mu)?;
            let o = laplace_derivative_oracle(&spec, &mu, DEFAULT_ORACLE_STEP)?;
            let tol = self.tol.moment_floor.max(self.tol.moment_richardson * o.error_estimate);
            out.push(Record::abs(3, format!("recursion vs Laplace-derivative oracle: {name}"), Provenance::Derived, o.value, p, tol));
        }
        // Monte Carlo against the lattice recursion, which is exact for the simulator
        let base = self.base()?;
        for (name, spec, mu) in self.moment_battery()? {
            if spec.model != LATTICE || mu != [(x0(), 1.0)] {
                continue;
            }
            let target = moment_p_C(&spec, &mu)?;
            let xs: Vec<f64> = base
                .iter()
                .map(|e| {
                    let x = e.last();
                    let damp = (-x.integrate(|p| spec.phi[0].value_at(p))).exp();
                    spec.c.iter().map(|&i| x.integrate(|p| spec.f[i].value_at(p))).product::<f64>() * damp
                })
                .collect();
            out.push(Record::within_se(3, format!("MC moment vs recursion: {name}"), Provenance::Derived, target, Estimate::of(&xs), self.k()));
        }
        Ok(out)
    }

    fn poisson(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let base = self.base()?;
        let m = self.sizes().compose;
        let sampler = ClusterSampler::new(&[d], &SimConfig::new(N))?;
        let seed = self.seed_for("compose");
        let composed: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| Ok(sampler.compose(&[(x0(), 1.0)], &mut rng::stream(seed, i as u64))?.last().total_mass()))
            .collect::<Result<_>>()?;
        let direct: Vec<f64> = base[..m].iter().map(|e| e.last().total_mass()).collect();
        let ks = ks_two_sample(&composed, &direct)?;
        let dead: Vec<bool> = base.iter().map(|e| e.last().is_zero()).collect();
        let lattice = (-LATTICE.extinction_exponent(&d)?.eval(x0())).exp();
        let continuum = (-Model::Continuum.extinction_exponent(&d)?.eval(x0())).exp();
        Ok(vec![
            Record::ks(4, "Poisson superposition vs direct simulation, total mass", Provenance::Derived, &ks),
            Record::within_se(4, "extinction probability vs lattice exponent", Provenance::Derived, lattice, proportion(&dead, lattice), self.k()),
            Record::within_se(4, "extinction probability vs continuum blow-up solution", Provenance::Derived, continuum, proportion(&dead, continuum), self.k())
                .known_gap(),
        ])
    }

    fn harmonicity(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let inner = self.inner()?;
        let start = [(inner_start(), 1.0)];
        let mut out = Vec::new();
        let mut check = |name: &str, h: &(dyn Fn(&[(Point, f64)]) -> Result<f64> + Sync)| -> Result<()> {
            let xs: Vec<f64> = inner.par_iter().map(|e| h(&e.exits[0].atoms)).collect::<Result<_>>()?;
            out.push(Record::within_se(5, name.to_string(), Provenance::Derived, h(&start)?, Estimate::of(&xs), self.k()));
            Ok(())
        };
        let h0 = HBeta0::new(&d, x0(), 1.0, LATTICE)?;
        check("H_beta_0, beta = 1", &|mu| h0.eval(mu))?;
        let h1 = HBetaK::new(&d, x0(), 1.0, &[pt(1.0)], LATTICE)?;
        check("H_beta_k, beta = 1, z = {1}", &|mu| h1.eval(mu))?;
        let h2 = HBetaK::new(&d, x0(), 1.0, &[pt(0.0), pt(1.0)], LATTICE)?;
        check("H_beta_k, beta = 1, z = {0, 1}", &|mu| h2.eval(mu))?;
        let hp = HPoint::new(&d, x0(), pt(1.0), LATTICE, BetaQuadrature::for_model(LATTICE))?;
        check("H_point, z = 1", &|mu| hp.eval(mu))?;

        let grid = self.grid()?;
        let series = HvSeries::new(self.pgf()?.clone(), x0(), grid, DEFAULT_N_MAX)?;
        let bins = self.law()?.bulk_bins(10);
        let counts: Vec<Vec<(usize, u64)>> = inner.iter().map(|e| series.counts(&e.exits[0].atoms)).collect::<Result<_>>()?;
        let mut distinct: Vec<&Vec<(usize, u64)>> = counts.iter().collect();
        distinct.sort();
        distinct.dedup();
        let values: HashMap<&Vec<(usize, u64)>, Vec<f64>> = distinct
            .par_iter()
            .map(|&c| {
                let h = series.eval_counts(c)?;
                Ok((c, bins.iter().map(|&i| h.bins[i].unwrap_or(0.0)).collect()))
            })
            .collect::<Result<_>>()?;
        let target = series.eval_all(&start)?;
        for (j, &i) in bins.iter().enumerate() {
            let xs: Vec<f64> = counts.iter().map(|c| values[c][j]).collect();
            let t = target.bins[i].ok_or_else(|| Error::Data(format!("bin {i} has no reference mass")))?;
            out.push(Record::within_se(5, format!("H_v, bin {i} (v = {:.3})", grid.center(i)), Provenance::Derived, t, Estimate::of(&xs), self.k()));
        }
        Ok(out)
    }

    fn density(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let base = self.base()?;
        let inner = self.inner()?;
        let mu = [(inner_start(), 1.0)];
        let beta = 1.0;
        let mut out = Vec::new();
        let mut push = |name: &str, a: &[f64], wa: &[f64], b: &[f64]| -> Result<()> {
            let ones = vec![1.0; b.len()];
            let ks = ks_two_sample_weighted(a, wa, b, &ones)?;
            out.push(Record::ks(6, format!("{name}: reweighted P_x vs P_mu"), Provenance::Derived, &ks));
            out.push(Record::at_least(6, format!("{name}: effective sample size"), Provenance::Trivial, effective_sample_size(wa), self.tol.min_ess));
            Ok(())
        };

        // Poisson sample of β X_D, coded a + 5b for a points at 0 and b at 1
        let code = |e: &NestedExit, seed: u64, i: usize| -> Option<f64> {
            let mut r = rng::stream(seed, i as u64);
            let mut draw = |m: f64| if m > 0.0 { Poisson::new(beta * m).map(|p| p.sample(&mut r) as u64).unwrap_or(0) } else { 0 };
            let a = draw(e.last().mass_at(pt(0.0)));
            let b = draw(e.last().mass_at(pt(1.0)));
            (a + b <= 4).then_some((a + 5 * b) as f64)
        };
        let mut weight = HashMap::new();
        for a in 0..=4u64 {
            for b in 0..=(4 - a) {
                let w = if a + b == 0 {
                    HBeta0::new(&d, x0(), beta, LATTICE)?.eval(&mu)?
                } else {
                    let z: Vec<Point> = std::iter::repeat_n(pt(0.0), a as usize).chain(std::iter::repeat_n(pt(1.0), b as usize)).collect();
                    HBetaK::new(&d, x0(), beta, &z, LATTICE)?.eval(&mu)?
                };
                weight.insert(a + 5 * b, w);
            }
        }
        let (sa, sb) = (self.seed_for("poisson sample x"), self.seed_for("poisson sample mu"));
        let ya: Vec<f64> = base.iter().enumerate().filter_map(|(i, e)| code(e, sa, i)).collect();
        let wa: Vec<f64> = ya.iter().map(|&y| weight[&(y as u64)]).collect();
        let yb: Vec<f64> = inner.iter().enumerate().filter_map(|(i, e)| code(e, sb, i)).collect();
        push("Poisson sample Y_beta, beta = 1", &ya, &wa, &yb)?;

        // total-mass bin, −1 for extinction
        let grid = self.grid()?;
        let series = HvSeries::new(self.pgf()?.clone(), x0(), grid, DEFAULT_N_MAX)?;
        let h = series.eval_all(&mu)?;
        let bin = |e: &NestedExit| -> f64 {
            let k = crate::conditioning::exit_count(e.last().total_mass(), N);
            if k == 0 {
                -1.0
            } else {
                grid.bin_of_count(k).map(|b| b as f64).unwrap_or(grid.bins as f64)
            }
        };
        let ya: Vec<f64> = base.iter().map(bin).collect();
        let wa: Vec<f64> = ya
            .iter()
            .map(|&y| if y < 0.0 { h.extinction } else { h.bins.get(y as usize).copied().flatten().unwrap_or(0.0) })
            .collect();
        let yb: Vec<f64> = inner.iter().map(bin).collect();
        push("total-mass bin", &ya, &wa, &yb)?;

        // a point sampled from X_D/|X_D|: 0, 1, or 2 for extinction
        let q = BetaQuadrature::for_model(LATTICE);
        let left = HPoint::new(&d, x0(), pt(0.0), LATTICE, q)?;
        let right = HPoint::new(&d, x0(), pt(1.0), LATTICE, q)?;
        let w = [left.eval(&mu)?, right.eval(&mu)?, right.eval_delta(&mu)?];
        let point = |e: &NestedExit, seed: u64, i: usize| -> f64 {
            use rand::Rng as _;
            let x = e.last();
            let t = x.total_mass();
            if t <= 0.0 {
                return 2.0;
            }
            let u: f64 = rng::stream(seed, i as u64).random();
            if u * t < x.mass_at(pt(0.0)) {
                0.0
            } else {
                1.0
            }
        };
        let (sa, sb) = (self.seed_for("point x"), self.seed_for("point mu"));
        let ya: Vec<f64> = base.iter().enumerate().map(|(i, e)| point(e, sa, i)).collect();
        let wa: Vec<f64> = ya.iter().map(|&y| w[y as usize]).collect();
        let yb: Vec<f64> = inner.iter().enumerate().map(|(i, e)| point(e, sb, i)).collect();
        push("sampled exit point", &ya, &wa, &yb)?;
        Ok(out)
    }

    fn fragmentation(&self) -> Result<Vec<Record>> {
        let grid = self.grid()?;
        let synth = FragKernel::from_density(grid, |v| (-v).exp());
        let mut err: f64 = 0.0;
        for k in 2..=grid.kmax() {
            for a in 1..k {
                if let Some(v) = synth.density(k, a) {
                    err = err.max((v - 1.0).abs());
                }
            }
        }
        let mut out = vec![Record::at_most(7, "synthetic r = exp(-v), max |K - 1|", Provenance::Derived, err, self.tol.algebra)];
        let frag = FragKernel::from_law(&self.law()?);
        let samples = self.sizes().kernel;
        let seed = self.seed_for("kernel");
        let cases: [(usize, &[usize]); 5] = [(150, &[1, 1]), (150, &[2, 1]), (300, &[2, 2]), (300, &[3, 1]), (450, &[1, 2, 1])];
        for (j, (k, sizes)) in cases.iter().enumerate() {
            let l1 = kernel_consistency(&frag, *k, sizes, samples, rng::derive(seed, &j.to_string()))?;
            out.push(Record::at_most(7, format!("kernel decomposition, label {k}, groups {sizes:?}"), Provenance::Derived, l1, self.tol.kernel_l1));
        }
        Ok(out)
    }

    fn potential(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let law = self.law()?;
        let fields = self.fields()?;
        let frag = FragKernel::from_law(&law);
        let ygrid = Grid::line(&d, 31)?;
        let mc = estimate_gamma(&d, &ygrid, &law, self.sizes().gamma, &SimConfig::new(N), self.seed_for("gamma"))?;
        let exact = exact_gamma(fields, &ygrid, &law)?;
        let mut out = Vec::new();
        for i in law.bulk_bins(10) {
            let r = potential_residual(&mc, &frag, i, &fields.u)?;
            out.push(Record::at_most(8, format!("potential equation, Monte Carlo gamma, bin {i}"), Provenance::Derived, r, self.tol.potential_l1));
            let r = potential_residual(&exact, &frag, i, &fields.u)?;
            out.push(Record::at_most(8, format!("potential equation, exact gamma, bin {i}"), Provenance::Derived, r, self.tol.potential_l1));
        }
        Ok(out)
    }

    fn backbone(&self) -> Result<Vec<Record>> {
        let d = self.domain;
        let dp = backbone_domain();
        let grid = self.grid()?;
        let fields = self.fields()?;
        let cfg = BackboneConfig::default();
        let sizes = self.sizes();
        let m = sizes.matched;
        let mut out = Vec::new();

        for i in self.law()?.bulk_bins(5) {
            let range = grid.count_range(i);
            let bb = run_conditioned_replicas(fields, x0(), range, &[dp], &cfg, self.seed_for(&format!("backbone {i}")), m)?;
            let (bf, _) = matched_clusters(&[dp, d], N, x0(), range, m, self.seed_for(&format!("clusters {i}")), BRUTE_CAP)?;
            let ks = ks_two_sample(&masses(&bb, 0), &masses(&bf, 0))?;
            out.push(Record::ks(9, format!("mass backbone vs brute force, bin {i}, |X_D'|"), Provenance::Derived, &ks));
        }

        let atoms = [(x0(), 2 * N as u64)];
        let sampler = ForestSampler::new(fields, &atoms)?;
        let (bins, _) = grid.bin_lattice(sampler.total_law());
        let modal = (0..bins.len()).max_by(|&a, &b| bins[a].total_cmp(&bins[b])).unwrap_or(0);
        let range = grid.count_range(modal);
        let seed = self.seed_for("forest");
        let fb: Vec<NestedExit> = (0..m)
            .into_par_iter()
            .map(|r| Ok(run_forest(fields, &sampler, &[dp], range, &cfg, &mut rng::stream(seed, r as u64))?.0))
            .collect::<Result<_>>()?;
        let (bf, _) = matched_runs(&[dp, d], N, &atoms, range, m, self.seed_for("forest brute"), BRUTE_CAP)?;
        let ks = ks_two_sample(&masses(&fb, 0), &masses(&bf, 0))?;
        out.push(Record::ks(9, format!("forest from 2 delta_0.5 vs brute force, bin {modal}, |X_D'|"), Provenance::Derived, &ks));

        // point conditioning, k = 1: brute-force samples reweighted by H(X_D')
        let beta = 1.0;
        let z = [pt(1.0)];
        let model = PointModel::new(RhoTable::new(&d, x0(), beta, &z, LATTICE)?)?;
        let start = [(x0(), N as u64)];
        let seed = self.seed_for("point");
        let pb: Vec<NestedExit> = (0..m)
            .into_par_iter()
            .map(|r| Ok(point_backbone(&model, &start, &[dp, d], &cfg, &mut rng::stream(seed, r as u64))?.0))
            .collect::<Result<_>>()?;
        let sim = Simulator::new(&[dp, d], &SimConfig::new(N))?;
        let raw = runs(&sim, &start, self.seed_for("point brute"), sizes.weighted)?;
        let h = HBetaK::new(&d, x0(), beta, &z, LATTICE)?;
        let w: Vec<f64> = raw.iter().map(|e| h.eval(&e.exits[0].atoms)).collect::<Result<_>>()?;
        let ones = vec![1.0; pb.len()];
        let ks = ks_two_sample_weighted(&masses(&pb, 0), &ones, &masses(&raw, 0), &w)?;
        out.push(Record::ks(9, "point backbone, z = {1}, beta = 1, vs reweighted brute force, |X_D'|", Provenance::Derived, &ks));
        let wd: Vec<f64> = raw.iter().map(|e| (-beta * e.last().total_mass()).exp() * e.last().mass_at(pt(1.0))).collect();
        let ks = ks_two_sample_weighted(&masses(&pb, 1), &ones, &masses(&raw, 1), &wd)?;
        out.push(Record::ks(9, "point backbone, z = {1}, beta = 1, vs reweighted brute force, |X_D|", Provenance::Derived, &ks));
        out.push(Record::at_least(9, "point comparison: effective sample size", Provenance::Trivial, effective_sample_size(&w), m as f64));
        Ok(out)
    }

    fn determinism(&self) -> Result<Vec<Record>> {
        let mut out = Vec::new();
        let configs = [
            ExperimentConfig {
                experiment: Experiment::Simulate {
                    mu: vec![Atom { x: 0.5, y: 0.0, mass: 1.0 }],
                    chain: vec![harmonic_domain(), self.domain],
                    n: N,
                },
                domain: self.domain,
                seed: self.seed,
                replicas: Some(500),
                out: None,
                tolerances: self.tol.clone(),
            },
            ExperimentConfig {
                experiment: Experiment::Backbone {
                    target: Target::Mass { y: 0.5, v: 1.0 },
                    chain: vec![backbone_domain()],
                    n: N,
                    bins: crate::conditioning::DEFAULT_BINS,
                    walk: BackboneConfig::default(),
                    tree_dump: true,
                    brute_force: None,
                },
                domain: self.domain,
                seed: self.seed,
                replicas: Some(20),
                out: None,
                tolerances: self.tol.clone(),
            },
        ];
        for cfg in &configs {
            let name = cfg.experiment.name();
            let (a, b) = (self.scratch.join(name).join("a"), self.scratch.join(name).join("b"));
            run(cfg, &a)?;
            run(cfg, &b)?;
            out.push(Record::flag(10, format!("{name}: byte-identical outputs on rerun"), Provenance::Trivial, same_files(&a, &b)?));
        }

        let base = self.base()?;
        let xs: Vec<f64> = base.iter().take(10_000).map(|e| e.last().total_mass()).collect();
        let parts: Vec<Partial> = xs.chunks(997).map(Partial::from_samples).collect();
        let (p, _) = estimator_merge(&parts)?;
        let mut shuffled = parts.clone();
        shuffled.reverse();
        shuffled.rotate_left(3);
        let (q, _) = estimator_merge(&shuffled)?;
        let same = p.mean.to_bits() == q.mean.to_bits() && p.m2.to_bits() == q.m2.to_bits() && p.count == q.count;
        out.push(Record::flag(10, "estimator merge is bit-identical under permutation", Provenance::Trivial, same));

        let one = Partial::from_samples(&xs[..1000]);
        let k = 4;
        let (_, merged) = estimator_merge(&vec![one; k])?;
        // M2 and the count both scale by k; the unbiased variance turns the
        // factor 1/sqrt(k) into sqrt((n − 1)/(kn − 1))
        let n = one.count as f64;
        let expect = one.se() * ((n - 1.0) / (k as f64 * n - 1.0)).sqrt();
        out.push(Record::abs(10, "merge of 4 equal replicas shrinks the SE by 2", Provenance::Trivial, expect, merged.se, 1e-9 * expect));
        Ok(out)
    }
}

fn same_files(a: &std::path::Path, b: &std::path::Path) -> Result<bool> {
    let list = |d: &std::path::Path| -> Result<Vec<(String, Vec<u8>)>> {
        let mut v = Vec::new();
        for entry in std::fs::read_dir(d)? {
            let p = entry?.path();
            v.push((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), std::fs::read(&p)?));
        }
        v.sort();
        Ok(v)
    };
    let (la, lb) = (list(a)?, list(b)?);
    Ok(!la.is_empty() && la == lb)
}
