//! Estimator accumulation, two-sample Kolmogorov–Smirnov tests, histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymptotic two-sample KS coefficients c(α) for α = 1% and 5%.
pub const KS_C_1PCT: f64 = 1.627_60;
pub const KS_C_5PCT: f64 = 1.358_10;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = KahanSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Count / mean / M2 summary of homogeneous replicas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Partial {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = compensated_sum(xs.iter().copied()) / n as f64;
        let m2 = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
        Self {
            count: n as u64,
            mean,
            m2,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Mean and standard error of merged partials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: u64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let p = Partial::from_samples(xs);
        Self {
            mean: p.mean,
            se: p.se(),
            count: p.count,
        }
    }

    /// |mean − target| ≤ k·SE.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Merges partial summaries. The partials are put in a canonical order first,
/// so any permutation of the input gives a bit-identical result.
pub fn estimator_merge(partials: &[Partial]) -> Result<(Partial, Estimate)> {
    if partials.is_empty() {
        return Err(Error::Merge("no partials to merge".into()));
    }
    if partials
        .iter()
        .any(|p| !p.mean.is_finite() || !p.m2.is_finite() || p.m2 < 0.0)
    {
        return Err(Error::Merge("inconsistent partial summary".into()));
    }
    let mut ps: Vec<Partial> = partials.iter().copied().filter(|p| p.count > 0).collect();
    ps.sort_by(|a, b| {
        (a.count, a.mean.to_bits(), a.m2.to_bits()).cmp(&(b.count, b.mean.to_bits(), b.m2.to_bits()))
    });
    let count: u64 = ps.iter().map(|p| p.count).sum();
    if count == 0 {
        return Err(Error::Merge("partials carry no samples".into()));
    }
    let n = count as f64;
    let mean = compensated_sum(ps.iter().map(|p| p.mean * p.count as f64)) / n;
    let m2 = compensated_sum(
        ps.iter()
            .flat_map(|p| [p.m2, p.count as f64 * (p.mean - mean) * (p.mean - mean)]),
    );
    let merged = Partial { count, mean, m2 };
    Ok((
        merged,
        Estimate {
            mean,
            se: merged.se(),
            count,
        },
    ))
}

/// Weighted mean with a delta-method standard error (self-normalized weights).
pub fn weighted_estimate(xs: &[f64], ws: &[f64]) -> Estimate {
    let sw = compensated_sum(ws.iter().copied());
    let mean = compensated_sum(xs.iter().zip(ws).map(|(x, w)| x * w)) / sw;
    let var = compensated_sum(xs.iter().zip(ws).map(|(x, w)| (w * (x - mean)).powi(2))) / (sw * sw);
    Estimate {
        mean,
        se: var.sqrt(),
        count: xs.len() as u64,
    }
}

/// Kish effective sample size (Σw)²/Σw².
pub fn effective_sample_size(ws: &[f64]) -> f64 {
    let s = compensated_sum(ws.iter().copied());
    let s2 = compensated_sum(ws.iter().map(|w| w * w));
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub crit_1pct: f64,
    pub crit_5pct: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn pass_1pct(&self) -> bool {
        self.statistic < self.crit_1pct
    }
}

/// Asymptotic Kolmogorov survival function Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let t = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_result(d: f64, na: f64, nb: f64) -> KsResult {
    let scale = ((na + nb) / (na * nb)).sqrt();
    let en = (na * nb / (na + nb)).sqrt();
    KsResult {
        statistic: d,
        crit_1pct: KS_C_1PCT * scale,
        crit_5pct: KS_C_5PCT * scale,
        n_a: na,
        n_b: nb,
        p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d),
    }
}

/// Two-sample KS statistic sup |F_a − F_b| with asymptotic critical values.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let wa = vec![1.0; a.len()];
    let wb = vec![1.0; b.len()];
    let mut r = ks_two_sample_weighted(a, &wa, b, &wb)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let plain = ks_result(r.statistic, na, nb);
    r.crit_1pct = plain.crit_1pct;
    r.crit_5pct = plain.crit_5pct;
    r.p_value = plain.p_value;
    Ok(r)
}

/// Weighted two-sample KS: weighted empirical CDFs, critical values at the
/// Kish effective sample sizes.
pub fn ks_two_sample_weighted(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("KS test needs two nonempty samples".into()));
    }
    if a.len() != wa.len() || b.len() != wb.len() {
        return Err(Error::Precondition("weights do not match samples".into()));
    }
    if wa.iter().chain(wb).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Data("weights must be finite and nonnegative".into()));
    }
    let mut xa: Vec<(f64, f64)> = a.iter().copied().zip(wa.iter().copied()).collect();
    let mut xb: Vec<(f64, f64)> = b.iter().copied().zip(wb.iter().copied()).collect();
    xa.sort_by(|p, q| p.0.total_cmp(&q.0));
    xb.sort_by(|p, q| p.0.total_cmp(&q.0));
    let ta = compensated_sum(wa.iter().copied());
    let tb = compensated_sum(wb.iter().copied());
    if ta <= 0.0 || tb <= 0.0 {
        return Err(Error::Data("total weight is zero".into()));
    }
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            _ => unreachable!(),
        };
        while i < xa.len() && xa[i].0 == x {
            fa += xa[i].1;
            i += 1;
        }
        while j < xb.len() && xb[j].0 == x {
            fb += xb[j].1;
            j += 1;
        }
        d = d.max((fa / ta - fb / tb).abs());
    }
    Ok(ks_result(
        d.min(1.0),
        effective_sample_size(wa),
        effective_sample_size(wb),
    ))
}

/// Fixed-width histogram on [lo, lo + bins·width).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub weights: Vec<f64>,
    pub counts: Vec<u64>,
    pub overflow: f64,
}

impl Histogram {
    pub fn new(lo: f64, width: f64, bins: usize) -> Self {
        Self {
            lo,
            width,
            weights: vec![0.0; bins],
            counts: vec![0; bins],
            overflow: 0.0,
        }
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let t = (x - self.lo) / self.width;
        if t < 0.0 || !t.is_finite() {
            return None;
        }
        let i = t.floor() as usize;
        (i < self.bins()).then_some(i)
    }

    pub fn add(&mut self, x: f64, w: f64) {
        match self.bin_of(x) {
            Some(i) => {
                self.weights[i] += w;
                self.counts[i] += 1;
            }
            None => self.overflow += w,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins())
            .map(|i| self.lo + i as f64 * self.width)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ks_extremes() {
        let a = [1.0, 2.0, 3.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        let b = [10.0, 11.0];
        assert_eq!(ks_two_sample(&a, &b).unwrap().statistic, 1.0);
        assert!(ks_two_sample(&[], &b).is_err());
    }

    #[test]
    fn ks_critical_value_formula() {
        let a: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_relative_eq!(r.crit_1pct, KS_C_1PCT * (2.0 / 10_000f64).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(kolmogorov_q(KS_C_5PCT), 0.05, epsilon = 1e-4);
        assert_relative_eq!(kolmogorov_q(KS_C_1PCT), 0.01, epsilon = 1e-4);
    }

    #[test]
    fn weighted_ks_reduces_to_plain_for_unit_weights() {
        let a = [0.1, 0.5, 0.9, 1.3];
        let b = [0.2, 0.4, 1.0];
        let p = ks_two_sample(&a, &b).unwrap();
        let w = ks_two_sample_weighted(&a, &[2.0; 4], &b, &[0.5; 3]).unwrap();
        assert_relative_eq!(p.statistic, w.statistic);
        assert_relative_eq!(w.n_a, 4.0);
    }

    #[test]
    fn merge_is_order_independent() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 0.37).collect();
        let parts: Vec<Partial> = xs.chunks(97).map(Partial::from_samples).collect();
        let (m1, e1) = estimator_merge(&parts).unwrap();
        let mut rev = parts.clone();
        rev.reverse();
        rev.swap(0, 3);
        let (m2, e2) = estimator_merge(&rev).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(e1, e2);
        let whole = Partial::from_samples(&xs);
        assert_relative_eq!(m1.mean, whole.mean, max_relative = 1e-14);
        assert_relative_eq!(m1.m2, whole.m2, max_relative = 1e-12);
    }

    #[test]
    fn merge_of_equal_replicas_shrinks_se() {
        let xs: Vec<f64> = (0..500).map(|i| (i % 17) as f64).collect();
        let p = Partial::from_samples(&xs);
        let (_, single) = estimator_merge(&[p]).unwrap();
        assert_eq!(single.mean, p.mean);
        let (_, four) = estimator_merge(&[p; 4]).unwrap();
        // SE ratio is √4 up to the n−1 correction
        assert_relative_eq!(single.se / four.se, 2.0, max_relative = 2e-3);
        assert!(estimator_merge(&[]).is_err());
    }

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::new(0.0, 0.5, 4);
        h.add(0.1, 1.0);
        h.add(1.9, 2.0);
        h.add(2.0, 1.0);
        h.add(-0.1, 1.0);
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
        assert_eq!(h.overflow, 2.0);
    }
}
