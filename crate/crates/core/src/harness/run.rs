//! Experiment orchestration: one config in, data files and a report out.

use std::path::Path;

use rayon::prelude::*;

use crate::backbone::{point_backbone, run_conditioned, run_conditioned_replicas, run_forest, ForestSampler, PointModel};
use crate::conditioning::{exit_count, BetaQuadrature, HBeta0, HBetaK, HPoint, HvSeries, MassGrid, RhoTable, DEFAULT_N_MAX};
use crate::error::{Error, Result};
use crate::geometry::{pt, Domain, Point};
use crate::lattice_law::{ExcursionFields, MassPgf};
use crate::model::Model;
use crate::moments::{laplace_derivative_oracle, moment_p_C, MomentSpec, DEFAULT_ORACLE_STEP};
use crate::particle::{NestedExit, SimConfig, Simulator};
use crate::rng;
use crate::stats::{effective_sample_size, ks_two_sample, ks_two_sample_weighted, Estimate};

use super::compare::{masses, matched_clusters, matched_runs, particle_counts, proportion, runs, with_outer};
use super::config::{measure, Boundary, Experiment, ExperimentConfig, Family, Target};
use super::criteria::Lab;
use super::report::{Provenance, Record, Report};

const FIELD_NODES: usize = 1023;
const VMAX: f64 = 6.0;
const BRUTE_CAP: usize = 2_000_000;

/// Runs the experiment and writes its data files plus `report.json` and
/// `report.csv` into `out`. Deterministic given the config.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut report = Report::new(cfg.experiment.name(), cfg.seed);
    let records = match &cfg.experiment {
        Experiment::Simulate { mu, chain, n } => simulate(cfg, &measure(mu), chain, *n, out)?,
        Experiment::Moments { phi, f, c, mu, model } => moments(cfg, phi, f, c, &measure(mu), *model, out)?,
        Experiment::Condition { family, x, mu, inner, n } => condition(cfg, family, *x, &measure(mu), inner, *n, out)?,
        Experiment::Backbone { .. } => backbone(cfg, out)?,
        Experiment::Verify { suite, scale } => {
            let lab = Lab::new(cfg.seed, *scale, cfg.tolerances.clone(), out.join("determinism"));
            lab.report(&suite.criteria())?.records
        }
    };
    report.extend(records);
    report.write(out)?;
    Ok(report)
}

fn resolve_chain(chain: &[Domain], domain: &Domain) -> Result<Vec<Domain>> {
    if chain.is_empty() {
        return Ok(vec![*domain]);
    }
    if chain.last() != Some(domain) {
        return Err(Error::Schema("the last chain domain must be the configured domain".into()));
    }
    Ok(chain.to_vec())
}

/// Long-format exit masses: one row per replica and chain level.
fn write_exits(path: &Path, exits: &[NestedExit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replica", "level", "mass", "mass_a", "mass_b"])?;
    for (r, e) in exits.iter().enumerate() {
        for (j, (x, d)) in e.exits.iter().zip(&e.chain).enumerate() {
            let (ma, mb) = match *d {
                Domain::Interval { a, b } => (format!("{:e}", x.mass_at(pt(a))), format!("{:e}", x.mass_at(pt(b)))),
                Domain::Disk { .. } => (String::new(), String::new()),
            };
            w.write_record([r.to_string(), j.to_string(), format!("{:e}", x.total_mass()), ma, mb])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, mu: &[(Point, f64)], chain: &[Domain], n: u32, out: &Path) -> Result<Vec<Record>> {
    let chain = resolve_chain(chain, &cfg.domain)?;
    let sim = Simulator::new(&chain, &SimConfig::new(n))?;
    let (counts, _) = sim.discretize(mu)?;
    let exits = runs(&sim, &counts, cfg.seed, cfg.replicas())?;
    write_exits(&out.join("samples.csv"), &exits)?;
    let k = cfg.tolerances.se_multiplier;
    let nf = n as f64;
    let mass: f64 = counts.iter().map(|c| c.1 as f64 / nf).sum();
    let outer = chain.len() - 1;
    let est = Estimate::of(&masses(&exits, outer));
    let dead: Vec<bool> = exits.iter().map(|e| e.last().is_zero()).collect();
    let ext = Model::Lattice { n }.extinction_exponent(&cfg.domain)?;
    let p0 = (-counts.iter().map(|&(p, c)| c as f64 / nf * ext.eval(p)).sum::<f64>()).exp();
    Ok(vec![
        Record::within_se(0, "mean outer exit mass vs initial mass", Provenance::Derived, mass, est, k),
        Record::within_se(0, "extinction frequency vs lattice exponent", Provenance::Derived, p0, proportion(&dead, p0), k),
    ])
}

fn moments(
    cfg: &ExperimentConfig,
    phi: &Boundary,
    f: &[Boundary],
    c: &[usize],
    mu: &[(Point, f64)],
    model: Model,
    out: &Path,
) -> Result<Vec<Record>> {
    let d = cfg.domain;
    let f = f.iter().map(|b| b.on(&d)).collect::<Result<Vec<_>>>()?;
    let spec = MomentSpec::single(&d, phi.on(&d)?, f, c.to_vec()).with_model(model);
    let p = moment_p_C(&spec, mu)?;
    let o = laplace_derivative_oracle(&spec, mu, DEFAULT_ORACLE_STEP)?;
    let mut w = csv::Writer::from_path(out.join("moments.csv"))?;
    w.write_record(["quantity", "value"])?;
    for (q, v) in [
        ("recursion", p),
        ("oracle", o.value),
        ("oracle_error", o.error_estimate),
        ("noise_floor", o.noise_floor),
        ("step", o.step),
    ] {
        w.write_record([q.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    let t = &cfg.tolerances;
    let tol = t.moment_floor.max(t.moment_richardson * o.error_estimate);
    Ok(vec![Record::abs(0, "moment recursion vs Laplace-derivative oracle", Provenance::Derived, o.value, p, tol)])
}

type HFn = Box<dyn Fn(&[(Point, f64)]) -> Result<f64> + Sync>;

fn h_function(d: &Domain, family: &Family, x: Point, mu: &[(Point, f64)], inner: &Domain, n: u32) -> Result<HFn> {
    let model = Model::Lattice { n };
    Ok(match family {
        Family::Beta0 { beta } => {
            let h = HBeta0::new(d, x, *beta, model)?;
            Box::new(move |m| h.eval(m))
        }
        Family::BetaK { beta, z } => {
            let z: Vec<Point> = z.iter().map(|&v| pt(v)).collect();
            let h = HBetaK::new(d, x, *beta, &z, model)?;
            Box::new(move |m| h.eval(m))
        }
        Family::Point { z } => {
            let h = HPoint::new(d, x, pt(*z), model, BetaQuadrature::for_model(model))?;
            Box::new(move |m| h.eval(m))
        }
        Family::Mass { v } => {
            let Domain::Interval { a, b } = *inner else {
                return Err(Error::Unsupported("H_v is tabulated on interval chains only".into()));
            };
            let mut points = vec![x, pt(a), pt(b)];
            points.extend(mu.iter().map(|p| p.0));
            points.dedup();
            let series = HvSeries::new(MassPgf::new(d, n, &points)?, x, MassGrid::covering(n, VMAX, crate::conditioning::DEFAULT_BINS)?, DEFAULT_N_MAX)?;
            let v = *v;
            Box::new(move |m| series.eval(m, v))
        }
    })
}

fn condition(
    cfg: &ExperimentConfig,
    family: &Family,
    x: f64,
    mu: &[(Point, f64)],
    inner: &Domain,
    n: u32,
    out: &Path,
) -> Result<Vec<Record>> {
    let d = cfg.domain;
    let h = h_function(&d, family, pt(x), mu, inner, n)?;
    let sim = Simulator::new(&[*inner, d], &SimConfig::new(n))?;
    let counts = particle_counts(mu, n)?;
    let exits = runs(&sim, &counts, cfg.seed, cfg.replicas())?;
    let values: Vec<f64> = exits.par_iter().map(|e| h(&e.exits[0].atoms)).collect::<Result<_>>()?;
    let mut w = csv::Writer::from_path(out.join("condition.csv"))?;
    w.write_record(["replica", "inner_mass", "h"])?;
    for (r, (e, v)) in exits.iter().zip(&values).enumerate() {
        w.write_record([r.to_string(), format!("{:e}", e.exits[0].total_mass()), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(vec![Record::within_se(
        0,
        "mean of H(X_D') vs H(mu)",
        Provenance::Derived,
        h(mu)?,
        Estimate::of(&values),
        cfg.tolerances.se_multiplier,
    )])
}

fn mass_range(grid: &MassGrid, v: f64) -> Result<(usize, usize)> {
    grid.bin_of_mass(v)
        .map(|i| grid.count_range(i))
        .ok_or_else(|| Error::Schema(format!("mass {v} lies outside the mass bins")))
}

fn backbone(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Record>> {
    let Experiment::Backbone { target, chain, n, bins, walk, tree_dump, brute_force } = &cfg.experiment else {
        unreachable!("dispatched on the backbone kind");
    };
    let (d, n, reps, seed) = (cfg.domain, *n, cfg.replicas(), cfg.seed);
    walk.validate()?;
    let full = with_outer(chain, &d);
    let grid = MassGrid::covering(n, VMAX, *bins)?;
    let mut records = Vec::new();
    let ks_name = "innermost exit mass vs brute-force conditioning";
    let exits = match target {
        Target::Mass { y, v } => {
            let range = mass_range(&grid, *v)?;
            let fields = ExcursionFields::new(&d, n, FIELD_NODES, grid.kmax())?;
            let exits = run_conditioned_replicas(&fields, pt(*y), range, chain, walk, seed, reps)?;
            if *tree_dump {
                let (_, tree) = run_conditioned(&fields, pt(*y), range, chain, walk, &mut rng::stream(seed, 0))?;
                std::fs::write(out.join("tree.json"), serde_json::to_string_pretty(&tree)?)?;
            }
            if let Some(m) = brute_force {
                let (bf, _) = matched_clusters(&full, n, pt(*y), range, *m, rng::derive(seed, "brute force"), BRUTE_CAP)?;
                let ks = ks_two_sample(&masses(&exits, 0), &masses(&bf, 0))?;
                records.push(Record::ks(0, ks_name, Provenance::Derived, &ks));
            }
            label_check(&mut records, &exits, chain, &d, n, range);
            exits
        }
        Target::Forest { mu, v } => {
            let range = mass_range(&grid, *v)?;
            let atoms = particle_counts(&measure(mu), n)?;
            let fields = ExcursionFields::new(&d, n, FIELD_NODES, grid.kmax())?;
            let sampler = ForestSampler::new(&fields, &atoms)?;
            let exits: Vec<NestedExit> = (0..reps)
                .into_par_iter()
                .map(|r| Ok(run_forest(&fields, &sampler, chain, range, walk, &mut rng::stream(seed, r as u64))?.0))
                .collect::<Result<_>>()?;
            if *tree_dump {
                let (_, tree) = run_forest(&fields, &sampler, chain, range, walk, &mut rng::stream(seed, 0))?;
                std::fs::write(out.join("tree.json"), serde_json::to_string_pretty(&tree)?)?;
            }
            if let Some(m) = brute_force {
                let (bf, _) = matched_runs(&full, n, &atoms, range, *m, rng::derive(seed, "brute force"), BRUTE_CAP)?;
                let ks = ks_two_sample(&masses(&exits, 0), &masses(&bf, 0))?;
                records.push(Record::ks(0, ks_name, Provenance::Derived, &ks));
            }
            label_check(&mut records, &exits, chain, &d, n, range);
            exits
        }
        Target::Point { mu, z, beta, x } => {
            let zs: Vec<Point> = z.iter().map(|&v| pt(v)).collect();
            let model = Model::Lattice { n };
            let pm = PointModel::new(RhoTable::new(&d, pt(*x), *beta, &zs, model)?)?;
            let atoms = particle_counts(&measure(mu), n)?;
            let exits: Vec<NestedExit> = (0..reps)
                .into_par_iter()
                .map(|r| Ok(point_backbone(&pm, &atoms, chain, walk, &mut rng::stream(seed, r as u64))?.0))
                .collect::<Result<_>>()?;
            if *tree_dump {
                let (_, tree) = point_backbone(&pm, &atoms, chain, walk, &mut rng::stream(seed, 0))?;
                std::fs::write(out.join("tree.json"), serde_json::to_string_pretty(&tree)?)?;
            }
            if let Some(m) = brute_force {
                if chain.first().is_none_or(|c| *c == d) {
                    return Err(Error::Schema("the brute-force point comparison needs an inner chain domain".into()));
                }
                let sim = Simulator::new(&full, &SimConfig::new(n))?;
                let raw = runs(&sim, &atoms, rng::derive(seed, "brute force"), *m)?;
                let h = HBetaK::new(&d, pt(*x), *beta, &zs, model)?;
                let w: Vec<f64> = raw.iter().map(|e| h.eval(&e.exits[0].atoms)).collect::<Result<_>>()?;
                let ones = vec![1.0; exits.len()];
                let ks = ks_two_sample_weighted(&masses(&exits, 0), &ones, &masses(&raw, 0), &w)?;
                records.push(Record::ks(0, ks_name, Provenance::Derived, &ks));
                records.push(Record::at_least(0, "brute-force effective sample size", Provenance::Trivial, effective_sample_size(&w), 1.0));
            }
            exits
        }
    };
    write_exits(&out.join("backbone.csv"), &exits)?;
    Ok(records)
}

// with D in the chain, every realization's outer exit count lies in the bin
fn label_check(records: &mut Vec<Record>, exits: &[NestedExit], chain: &[Domain], d: &Domain, n: u32, range: (usize, usize)) {
    if chain.last() == Some(d) {
        let ok = exits.iter().all(|e| {
            let k = exit_count(e.last().total_mass(), n);
            k >= range.0 && k <= range.1
        });
        records.push(Record::flag(0, "outer exit mass lies in the conditioned bin", Provenance::Trivial, ok));
    }
}
