//! The Poisson process of loop lengths, exact sampling of its law
//! conditioned on the total particle number, short/long-loop particle
//! statistics with their concentration experiment, and the exact
//! distribution of the number of particles in long loops.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ensemble::PartitionTable;
use crate::error::{Error, Result};
use crate::geometry::{Bc, Geometry};
use crate::rng::{poisson, stream_rng};
use crate::spectral::TraceTable;

/// A multiset of loop lengths: m_k copies of length k.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoopConfiguration {
    counts: BTreeMap<usize, u64>,
}

impl LoopConfiguration {
    pub fn from_counts(counts: BTreeMap<usize, u64>) -> Self {
        let counts = counts.into_iter().filter(|&(_, m)| m > 0).collect();
        LoopConfiguration { counts }
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn add_loop(&mut self, k: usize) {
        *self.counts.entry(k).or_insert(0) += 1;
    }

    /// Total number of particles Σ k·m_k.
    pub fn n_total(&self) -> u64 {
        self.counts.iter().map(|(&k, &m)| k as u64 * m).sum()
    }

    /// Total number of loops Σ m_k.
    pub fn loop_count(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Loop lengths with multiplicity, largest first.
    pub fn ordered_lengths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.loop_count() as usize);
        for (&k, &m) in self.counts.iter().rev() {
            out.extend(std::iter::repeat_n(k, m as usize));
        }
        out
    }

    /// Number of particles in loops with length in [l1, l2].
    pub fn particle_count(&self, l1: usize, l2: usize) -> Result<u64> {
        if l1 == 0 || l1 > l2 {
            return Err(Error::InvalidArgument(format!(
                "invalid loop-length range [{l1}, {l2}]"
            )));
        }
        Ok(self
            .counts
            .range(l1..=l2)
            .map(|(&k, &m)| k as u64 * m)
            .sum())
    }
}

/// Length scales separating short from long loops at particle number N in a
/// box of side L: T_N = ⌈L²·(ln N)^{1/2}⌉ and N⁺ = ⌈N^{2/d}·(ln N)²⌉.
///
/// At desk scale the full asymptotic ordering T_N < N⁺ < N may not hold yet;
/// construction only demands the usable part T_N < N and records whether the
/// full ordering is in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopThresholds {
    pub n: usize,
    pub l: f64,
    pub d: u32,
    pub t_n: usize,
    pub n_plus: usize,
    pub asymptotic_ordering: bool,
}

impl LoopThresholds {
    pub fn new(n: usize, l: f64, d: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "thresholds need N >= 2, got {n}"
            )));
        }
        let ln_n = (n as f64).ln();
        let t_n = (l * l * ln_n.sqrt()).ceil() as usize;
        let n_plus = ((n as f64).powf(2.0 / d as f64) * ln_n * ln_n).ceil() as usize;
        if t_n >= n {
            return Err(Error::Config(format!(
                "short-loop threshold T_N = {t_n} is not below N = {n}; box side {l} too large for this N"
            )));
        }
        Ok(LoopThresholds {
            n,
            l,
            d,
            t_n,
            n_plus,
            asymptotic_ordering: t_n < n_plus && n_plus < n,
        })
    }
}

/// One draw of the unconditioned loop process: independent Poisson counts
/// X_k with the given means, k = 1..=rates.len().
pub fn sample_unconditioned(rates: &[f64], rng: &mut ChaCha8Rng) -> LoopConfiguration {
    let mut config = LoopConfiguration::default();
    for (i, &rate) in rates.iter().enumerate() {
        if rate > 1e-300 {
            let m = poisson(rng, rate);
            if m > 0 {
                *config.counts.entry(i + 1).or_insert(0) += m;
            }
        }
    }
    config
}

/// Exact draw from the loop process conditioned on exactly n particles.
///
/// Repeatedly samples the length k of the loop containing a tagged particle,
/// k ~ t_k Z_{m-k}/(m Z_m), and removes those k particles until none remain.
/// The resulting configuration has probability Π_k t_k^{m_k}/(k^{m_k} m_k!)
/// divided by Z_n, exactly the conditional law of the Poisson process.
pub fn sample_conditioned(
    table: &PartitionTable,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LoopConfiguration> {
    if n == 0 || n > table.n_max() {
        return Err(Error::TableRange {
            table: "partition table",
            max: table.n_max(),
            requested: n,
        });
    }
    let lw = table.traces().log_weights();
    let mut config = LoopConfiguration::default();
    let mut m = n;
    while m > 0 {
        let u: f64 = rng.gen();
        let log_norm = (m as f64).ln() + table.log_z(m)?;
        let mut cum = 0.0;
        let mut drawn = m;
        for k in 1..=m {
            cum += (lw[k - 1] + table.log_z(m - k)? - log_norm).exp();
            if cum >= u {
                drawn = k;
                break;
            }
        }
        config.add_loop(drawn);
        m -= drawn;
    }
    Ok(config)
}

/// Particles in short and long loops: (Σ_{k ≤ T_N} k m_k, Σ_{k > T_N} k m_k).
pub fn short_long_split(config: &LoopConfiguration, thresholds: &LoopThresholds) -> (u64, u64) {
    let total = config.n_total();
    let short = config
        .counts
        .range(..=thresholds.t_n)
        .map(|(&k, &m)| k as u64 * m)
        .sum::<u64>();
    (short, total - short)
}

/// Exact pmf of the total particle number Σ k X_k of independent Poisson
/// counts X_k with the given means, truncated at `cap`. Entry j is
/// P(total = j). Convolution oracle used to validate the partition identity
/// Z_N = exp(Σ_{k≤N} t_k/k)·P(total = N).
pub fn ppp_total_pmf(rates: &[f64], cap: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; cap + 1];
    pmf[0] = 1.0;
    for (i, &rate) in rates.iter().enumerate() {
        let k = i + 1;
        if rate <= 0.0 {
            continue;
        }
        // Poisson pmf on the count of k-loops, lifted to k·count particles.
        let mut step = Vec::new();
        let mut term = (-rate).exp();
        let mut c = 0usize;
        while c * k <= cap {
            step.push(term);
            c += 1;
            term *= rate / c as f64;
        }
        let mut next = vec![0.0; cap + 1];
        for (j, &p) in pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (c, &q) in step.iter().enumerate() {
                let v = j + c * k;
                if v > cap {
                    break;
                }
                next[v] += p * q;
            }
        }
        pmf = next;
    }
    pmf
}

/// Exact distribution of N^long, the number of particles in loops longer
/// than T_N, under the loop process truncated at length N. Takes values in
/// {0} ∪ (T_N, N]; the remaining mass sits above N.
#[derive(Debug, Clone)]
pub struct LongLoopDistribution {
    t_n: usize,
    n: usize,
    log_void: f64,
    log_restricted_z: Vec<f64>,
}

impl LongLoopDistribution {
    /// Restricted-parts recursion: Z̃_j = (1/j) Σ_{r=T_N+1}^{j} t_r Z̃_{j-r},
    /// in log space, for parts confined to (T_N, N].
    pub fn build(traces: &TraceTable, thresholds: &LoopThresholds) -> Result<Self> {
        let n = thresholds.n;
        if n > traces.n_max() {
            return Err(Error::TableRange {
                table: "trace table",
                max: traces.n_max(),
                requested: n,
            });
        }
        let t_n = thresholds.t_n;
        let lw = traces.log_weights();
        let log_void: f64 = -((t_n + 1)..=n)
            .map(|r| (lw[r - 1]).exp() / r as f64)
            .sum::<f64>();
        let mut log_rz = vec![f64::NEG_INFINITY; n + 1];
        log_rz[0] = 0.0;
        let mut terms = Vec::new();
        for j in (t_n + 1)..=n {
            terms.clear();
            for r in (t_n + 1)..=j {
                if log_rz[j - r] > f64::NEG_INFINITY {
                    terms.push(lw[r - 1] + log_rz[j - r]);
                }
            }
            if !terms.is_empty() {
                log_rz[j] = crate::numerics::logsumexp(&terms) - (j as f64).ln();
            }
        }
        Ok(LongLoopDistribution {
            t_n,
            n,
            log_void,
            log_restricted_z: log_rz,
        })
    }

    /// P(N^long = 0) = exp(-Σ_{T_N < r ≤ N} t_r/r).
    pub fn void_probability(&self) -> f64 {
        self.log_void.exp()
    }

    /// P(N^long = k); zero off the support {0} ∪ (T_N, N].
    pub fn pmf(&self, k: usize) -> f64 {
        if k == 0 {
            return self.void_probability();
        }
        if k <= self.t_n || k > self.n {
            return 0.0;
        }
        (self.log_void + self.log_restricted_z[k]).exp()
    }

    /// Total mass on the support; the complement is P(N^long > N).
    pub fn support_mass(&self) -> f64 {
        self.void_probability()
            + ((self.t_n + 1)..=self.n).map(|k| self.pmf(k)).sum::<f64>()
    }
}

/// Convenience wrapper: P(N^long = k) for the geometry and thresholds of the
/// given partition table.
pub fn long_loop_pmf(
    table: &PartitionTable,
    thresholds: &LoopThresholds,
    k: usize,
) -> Result<f64> {
    Ok(LongLoopDistribution::build(table.traces(), thresholds)?.pmf(k))
}

/// Parameters for the short-loop concentration experiment: a supercritical
/// density, a fixed cut R for N^{[1,R]}, deviation widths, and the per-size
/// sample budget.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationParams {
    pub bc: Bc,
    pub d: u32,
    pub beta: f64,
    pub rho: f64,
    pub r_cut: usize,
    pub eps_r: f64,
    pub eps_short: f64,
    pub samples: usize,
}

/// Per-size output of the concentration experiment.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationRow {
    pub n: usize,
    pub l: f64,
    pub t_n: usize,
    pub mean_r_density: f64,
    pub stderr_r_density: f64,
    pub mean_short_density: f64,
    pub stderr_short_density: f64,
    pub mean_long_density: f64,
    pub stderr_long_density: f64,
    /// Empirical P(|N^{[1,R]}/|Λ| - ρ_c^{(R)}| > ε_R).
    pub prob_r_dev: f64,
    /// Empirical P(|N^short/|Λ| - ρ_c| > ε_short).
    pub prob_short_dev: f64,
}

/// Samples the conditioned loop process along an increasing sequence of
/// particle numbers at fixed density ρ = N/|Λ| and reports concentration of
/// the short-loop particle densities. Deterministic for a given seed.
pub fn concentration_experiment(
    params: &ConcentrationParams,
    ns: &[usize],
    seed: u64,
) -> Result<Vec<ConcentrationRow>> {
    let rho_c = crate::ensemble::critical_density(params.d, params.beta)?;
    if params.rho <= rho_c {
        return Err(Error::Config(format!(
            "concentration experiment needs a supercritical density: rho = {} <= rho_c = {rho_c}",
            params.rho
        )));
    }
    let rho_c_r = crate::ensemble::partial_critical_density(params.d, params.beta, params.r_cut);
    let mut rows = Vec::with_capacity(ns.len());
    for (row_idx, &n) in ns.iter().enumerate() {
        let l = (n as f64 / params.rho).powf(1.0 / params.d as f64);
        let geom = Geometry::new(params.bc, params.d, l)?;
        let thresholds = LoopThresholds::new(n, l, params.d)?;
        let traces = TraceTable::build(geom, params.beta, n)?;
        let table = PartitionTable::build(&traces, n)?;
        let volume = geom.volume();

        let shards: usize = 32.min(params.samples.max(1));
        let per = params.samples / shards;
        let extra = params.samples % shards;
        let stats: Vec<ShardStats> = (0..shards)
            .into_par_iter()
            .map(|shard| {
                let mut rng = stream_rng(seed, (row_idx * 256 + shard) as u64);
                let count = per + usize::from(shard < extra);
                let mut s = ShardStats::default();
                for _ in 0..count {
                    let config = sample_conditioned(&table, n, &mut rng)
                        .expect("n is within the table");
                    let n_r = config.particle_count(1, params.r_cut).unwrap_or(0) as f64;
                    let (n_short, n_long) = short_long_split(&config, &thresholds);
                    let r_density = n_r / volume;
                    let short_density = n_short as f64 / volume;
                    let long_density = n_long as f64 / volume;
                    s.push(r_density, short_density, long_density);
                    if (r_density - rho_c_r).abs() > params.eps_r {
                        s.r_dev += 1;
                    }
                    if (short_density - rho_c).abs() > params.eps_short {
                        s.short_dev += 1;
                    }
                }
                s
            })
            .collect();

        let mut total = ShardStats::default();
        for s in stats {
            total.merge(&s);
        }
        let count = total.count as f64;
        let (mean_r, se_r) = total.mean_stderr_r();
        let (mean_short, se_short) = total.mean_stderr_short();
        let (mean_long, se_long) = total.mean_stderr_long();
        rows.push(ConcentrationRow {
            n,
            l,
            t_n: thresholds.t_n,
            mean_r_density: mean_r,
            stderr_r_density: se_r,
            mean_short_density: mean_short,
            stderr_short_density: se_short,
            mean_long_density: mean_long,
            stderr_long_density: se_long,
            prob_r_dev: total.r_dev as f64 / count,
            prob_short_dev: total.short_dev as f64 / count,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, Default)]
struct ShardStats {
    count: u64,
    r_dev: u64,
    short_dev: u64,
    sum_r: f64,
    sumsq_r: f64,
    sum_short: f64,
    sumsq_short: f64,
    sum_long: f64,
    sumsq_long: f64,
}

impl ShardStats {
    fn push(&mut self, r: f64, short: f64, long: f64) {
        self.count += 1;
        self.sum_r += r;
        self.sumsq_r += r * r;
        self.sum_short += short;
        self.sumsq_short += short * short;
        self.sum_long += long;
        self.sumsq_long += long * long;
    }

    fn merge(&mut self, other: &ShardStats) {
        self.count += other.count;
        self.r_dev += other.r_dev;
        self.short_dev += other.short_dev;
        self.sum_r += other.sum_r;
        self.sumsq_r += other.sumsq_r;
        self.sum_short += other.sum_short;
        self.sumsq_short += other.sumsq_short;
        self.sum_long += other.sum_long;
        self.sumsq_long += other.sumsq_long;
    }

    fn mean_stderr(sum: f64, sumsq: f64, n: f64) -> (f64, f64) {
        let mean = sum / n;
        if n < 2.0 {
            return (mean, 0.0);
        }
        let var = ((sumsq - sum * sum / n) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }

    fn mean_stderr_r(&self) -> (f64, f64) {
        Self::mean_stderr(self.sum_r, self.sumsq_r, self.count as f64)
    }

    fn mean_stderr_short(&self) -> (f64, f64) {
        Self::mean_stderr(self.sum_short, self.sumsq_short, self.count as f64)
    }

    fn mean_stderr_long(&self) -> (f64, f64) {
        Self::mean_stderr(self.sum_long, self.sumsq_long, self.count as f64)
    }
}
