//! Canonical partition functions, cycle-length statistics, bulk
//! thermodynamics (critical density, chemical potential, pressure, free
//! energy), and the exponentially tilted Poisson ensemble with its local
//! central-limit check.
//!
//! The canonical partition function is a sum over integer partitions of N
//! weighted by cycle traces,
//! Z_N = Σ_{m ⊢ N} Π_k t_k^{m_k} / (k^{m_k} m_k!),
//! evaluated in production through the equivalent recursion
//! Z_n = (1/n) Σ_{k=1}^n t_k Z_{n-k}. Direct enumeration over partitions is
//! kept as a brute-force oracle for small N.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::numerics::{factorial, logsumexp, mean_and_stderr, polylog_exp, zeta};
use crate::rng::{poisson, stream_rng};
use crate::spectral::TraceTable;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// log Z_0..log Z_N for one geometry and inverse temperature, built by the
/// cycle-weight recursion in log space.
#[derive(Debug, Clone)]
pub struct PartitionTable {
    traces: TraceTable,
    log_z: Vec<f64>,
}

impl PartitionTable {
    /// Runs the recursion up to `n`. The trace table must cover cycle
    /// lengths 1..=n.
    pub fn build(traces: &TraceTable, n: usize) -> Result<Self> {
        if n > traces.n_max() {
            return Err(Error::TableRange {
                table: "trace table",
                max: traces.n_max(),
                requested: n,
            });
        }
        let lw = traces.log_weights();
        let mut log_z = Vec::with_capacity(n + 1);
        log_z.push(0.0);
        let mut terms = Vec::with_capacity(n);
        for m in 1..=n {
            terms.clear();
            for k in 1..=m {
                terms.push(lw[k - 1] + log_z[m - k]);
            }
            log_z.push(logsumexp(&terms) - (m as f64).ln());
        }
        Ok(PartitionTable {
            traces: traces.clone(),
            log_z,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        self.traces.geometry()
    }

    pub fn beta(&self) -> f64 {
        self.traces.beta()
    }

    pub fn traces(&self) -> &TraceTable {
        &self.traces
    }

    /// Largest particle number covered.
    pub fn n_max(&self) -> usize {
        self.log_z.len() - 1
    }

    /// log Z_n, with log Z_0 = 0.
    pub fn log_z(&self, n: usize) -> Result<f64> {
        self.log_z.get(n).copied().ok_or(Error::TableRange {
            table: "partition table",
            max: self.n_max(),
            requested: n,
        })
    }

    /// Relative residual of the recursion at n: |Σ_k t_k Z_{n-k}/(n Z_n) - 1|.
    pub fn recursion_residual(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.n_max() {
            return Err(Error::TableRange {
                table: "partition table",
                max: self.n_max(),
                requested: n,
            });
        }
        let lw = self.traces.log_weights();
        let mut acc = 0.0f64;
        // Accumulate smallest terms first so the sum's rounding is independent
        // of the construction order.
        let mut terms: Vec<f64> = (1..=n).map(|k| lw[k - 1] + self.log_z[n - k]).collect();
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let shift = self.log_z[n] + (n as f64).ln();
        for t in terms {
            acc += (t - shift).exp();
        }
        Ok((acc - 1.0).abs())
    }

    /// Length distribution of the cycle containing a fixed particle among n:
    /// p(k) = t_k Z_{n-k} / (n Z_n), k = 1..=n.
    pub fn cycle_length_distribution(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 || n > self.n_max() {
            return Err(Error::TableRange {
                table: "partition table",
                max: self.n_max(),
                requested: n,
            });
        }
        let lw = self.traces.log_weights();
        let log_norm = (n as f64).ln() + self.log_z[n];
        Ok((1..=n)
            .map(|k| (lw[k - 1] + self.log_z[n - k] - log_norm).exp())
            .collect())
    }

    /// Finite-volume free energy per unit volume, -log Z_n / (β |Λ|).
    pub fn finite_volume_free_energy(&self, n: usize) -> Result<f64> {
        let lz = self.log_z(n)?;
        Ok(-lz / (self.beta() * self.geometry().volume()))
    }
}

/// Brute-force oracle: log Z_n by summing over every integer partition of n.
/// Returns the log partition function and the number of partitions visited.
/// `log_weights[k-1]` is log t_k. Practical for n ≤ ~25.
pub fn log_partition_by_enumeration(log_weights: &[f64], n: usize) -> (f64, usize) {
    assert!(n >= 1 && n <= log_weights.len());
    let mut terms = Vec::new();
    let mut parts: Vec<(usize, usize)> = Vec::new();
    enumerate_partitions(n, n, &mut parts, &mut |parts| {
        let mut lw = 0.0;
        for &(k, mult) in parts {
            lw += mult as f64 * (log_weights[k - 1] - (k as f64).ln());
            lw -= factorial(mult).ln();
        }
        terms.push(lw);
    });
    (logsumexp(&terms), terms.len())
}

/// Brute-force oracle for the cycle-length marginal: over every partition of
/// n, the probability that a fixed particle sits in a k-cycle is
/// E[k m_k] / n under the canonical weights. Independent of the
/// `cycle_length_distribution` formula.
pub fn cycle_marginal_by_enumeration(log_weights: &[f64], n: usize) -> Vec<f64> {
    assert!(n >= 1 && n <= log_weights.len());
    let (log_z, _) = log_partition_by_enumeration(log_weights, n);
    let mut marginal = vec![0.0; n];
    let mut parts: Vec<(usize, usize)> = Vec::new();
    enumerate_partitions(n, n, &mut parts, &mut |parts| {
        let mut lw = 0.0;
        for &(k, mult) in parts {
            lw += mult as f64 * (log_weights[k - 1] - (k as f64).ln());
            lw -= factorial(mult).ln();
        }
        let rel = (lw - log_z).exp();
        for &(k, mult) in parts {
            marginal[k - 1] += rel * (k * mult) as f64 / n as f64;
        }
    });
    marginal
}

fn enumerate_partitions(
    remaining: usize,
    max_part: usize,
    parts: &mut Vec<(usize, usize)>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if remaining == 0 {
        visit(parts);
        return;
    }
    for k in (1..=max_part.min(remaining)).rev() {
        let max_mult = remaining / k;
        for mult in 1..=max_mult {
            parts.push((k, mult));
            enumerate_partitions(remaining - k * mult, k - 1, parts, visit);
            parts.pop();
        }
    }
}

/// Critical density ρ_c = (2πβ)^{-d/2} ζ(d/2); diverges for d ≤ 2.
pub fn critical_density(d: u32, beta: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::InvalidArgument(format!(
            "critical density is infinite in dimension {d} (needs d >= 3)"
        )));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse temperature must be positive, got {beta}"
        )));
    }
    Ok((TWO_PI * beta).powf(-(d as f64) / 2.0) * zeta(d as f64 / 2.0))
}

/// Partial critical density (2πβ)^{-d/2} Σ_{k<=r} k^{-d/2}: how much of ρ_c
/// the first r cycle lengths account for.
pub fn partial_critical_density(d: u32, beta: f64, r: usize) -> f64 {
    let s = d as f64 / 2.0;
    let partial: f64 = (1..=r).map(|k| (k as f64).powf(-s)).sum();
    (TWO_PI * beta).powf(-s) * partial
}

/// Grand-canonical density ρ(μ) = (2πβ)^{-d/2} Li_{d/2}(e^{βμ}), μ ≤ 0.
pub fn density_of_mu(d: u32, beta: f64, mu: f64) -> f64 {
    assert!(mu <= 0.0, "density is defined for mu <= 0");
    (TWO_PI * beta).powf(-(d as f64) / 2.0) * polylog_exp(d as f64 / 2.0, beta * mu)
}

/// Grand-canonical pressure p(μ) = β^{-1}(2πβ)^{-d/2} Li_{d/2+1}(e^{βμ}).
pub fn pressure_of_mu(d: u32, beta: f64, mu: f64) -> f64 {
    assert!(mu <= 0.0, "pressure is defined for mu <= 0");
    (TWO_PI * beta).powf(-(d as f64) / 2.0) / beta * polylog_exp(d as f64 / 2.0 + 1.0, beta * mu)
}

/// Chemical potential μ(ρ) ≤ 0 solving ρ = (2πβ)^{-d/2} Li_{d/2}(e^{βμ}),
/// by bisection on the strictly monotone density. Returns 0 for ρ ≥ ρ_c in
/// d ≥ 3; in d ≤ 2 every finite density is subcritical and μ < 0 always.
pub fn chemical_potential(rho: f64, beta: f64, d: u32) -> Result<f64> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be positive, got {rho}"
        )));
    }
    if d >= 3 {
        let rho_c = critical_density(d, beta)?;
        if rho >= rho_c {
            return Ok(0.0);
        }
    }
    let mut lo = -1e6;
    let mut hi = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if density_of_mu(d, beta, mid) < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Free energy density f(ρ) = μ(ρ)ρ - p(μ(ρ)): strictly convex below ρ_c,
/// constant (the μ = 0 value) above it in d ≥ 3.
pub fn free_energy(rho: f64, beta: f64, d: u32) -> Result<f64> {
    let mu = chemical_potential(rho, beta, d)?;
    Ok(mu * rho - pressure_of_mu(d, beta, mu))
}

/// One tabulated point of the grand-canonical equation of state.
#[derive(Debug, Clone, Copy)]
pub struct ThermoPoint {
    pub mu: f64,
    pub pressure: f64,
    pub density: f64,
}

/// Pressure and density tabulated on a μ-grid, μ < 0, with the critical
/// density attached (infinite in d ≤ 2).
#[derive(Debug, Clone)]
pub struct ThermoCurve {
    pub beta: f64,
    pub d: u32,
    pub rho_c: f64,
    pub points: Vec<ThermoPoint>,
}

impl ThermoCurve {
    pub fn build(beta: f64, d: u32, mus: &[f64]) -> Result<Self> {
        if mus.is_empty() {
            return Err(Error::InvalidArgument("empty chemical-potential grid".into()));
        }
        let mut points = Vec::with_capacity(mus.len());
        let mut prev_mu = f64::NEG_INFINITY;
        let mut prev_rho = 0.0;
        for &mu in mus {
            if !(mu < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "thermo curve needs mu < 0, got {mu}"
                )));
            }
            if mu <= prev_mu {
                return Err(Error::InvalidArgument(
                    "chemical-potential grid must be strictly increasing".into(),
                ));
            }
            let density = density_of_mu(d, beta, mu);
            if density <= prev_rho {
                return Err(Error::Config(format!(
                    "density failed to increase at mu = {mu}"
                )));
            }
            points.push(ThermoPoint {
                mu,
                pressure: pressure_of_mu(d, beta, mu),
                density,
            });
            prev_mu = mu;
            prev_rho = density;
        }
        let rho_c = if d >= 3 {
            critical_density(d, beta)?
        } else {
            f64::INFINITY
        };
        Ok(ThermoCurve {
            beta,
            d,
            rho_c,
            points,
        })
    }
}

/// Product-Poisson loop ensemble tilted by e^{βμk}: cycle length k carries an
/// independent Poisson count with rate e^{βμk} t_k / k.
#[derive(Debug, Clone)]
pub struct TiltedEnsemble {
    geom: Geometry,
    beta: f64,
    mu: f64,
    rates: Vec<f64>,
}

impl TiltedEnsemble {
    /// Rates for k = 1..=n_max. μ must be ≤ 0; positive μ makes the total
    /// particle number diverge.
    pub fn new(geom: Geometry, beta: f64, mu: f64, n_max: usize) -> Result<Self> {
        if mu > 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tilted rates diverge for mu > 0 (got {mu})"
            )));
        }
        if n_max == 0 {
            return Err(Error::InvalidArgument("need at least one cycle length".into()));
        }
        let traces = TraceTable::build(geom, beta, n_max)?;
        let rates = (1..=n_max)
            .map(|k| {
                let lw = traces.log_weights()[k - 1];
                (beta * mu * k as f64 + lw - (k as f64).ln()).exp()
            })
            .collect();
        Ok(TiltedEnsemble {
            geom,
            beta,
            mu,
            rates,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Poisson rate for k-cycles, 1-based slice.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// E[N] = Σ_k k · rate_k.
    pub fn mean_particles(&self) -> f64 {
        self.rates
            .iter()
            .enumerate()
            .map(|(i, r)| (i + 1) as f64 * r)
            .sum()
    }

    /// Var[N] = Σ_k k² · rate_k.
    pub fn variance_particles(&self) -> f64 {
        self.rates
            .iter()
            .enumerate()
            .map(|(i, r)| ((i + 1) as f64).powi(2) * r)
            .sum()
    }

    /// Total particle numbers N = Σ k X_k from independent seeded streams,
    /// merged in shard order (deterministic for a given seed and sample
    /// count, independent of thread scheduling).
    pub fn sample_totals(&self, samples: usize, seed: u64) -> Vec<u64> {
        let shards: usize = 64.min(samples.max(1));
        let per = samples / shards;
        let extra = samples % shards;
        let mut out: Vec<Vec<u64>> = (0..shards)
            .into_par_iter()
            .map(|shard| {
                let mut rng = stream_rng(seed, shard as u64);
                let count = per + usize::from(shard < extra);
                (0..count)
                    .map(|_| {
                        let mut total = 0u64;
                        for (i, &rate) in self.rates.iter().enumerate() {
                            if rate > 1e-300 {
                                total += (i as u64 + 1) * poisson(&mut rng, rate);
                            }
                        }
                        total
                    })
                    .collect()
            })
            .collect();
        let mut merged = Vec::with_capacity(samples);
        for shard in &mut out {
            merged.append(shard);
        }
        merged
    }

    /// Samples N, fits a Gaussian at the empirical mean and variance, and
    /// reports the sup-distance between the histogram and the Gaussian
    /// density, plus the flat-window bound
    /// C⁻¹|Λ|^{-1/2} ≤ P(N = round(E N) - k) ≤ C|Λ|^{-1/2} for k ≤ |Λ|^{1/2}.
    pub fn local_clt_check(&self, samples: usize, sandwich_c: f64, seed: u64) -> CltReport {
        let totals = self.sample_totals(samples, seed);
        let values: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
        let (emp_mean, _) = mean_and_stderr(&values);
        let emp_var = values
            .iter()
            .map(|v| (v - emp_mean) * (v - emp_mean))
            .sum::<f64>()
            / (values.len() as f64 - 1.0);
        let max_n = totals.iter().copied().max().unwrap_or(0) as usize;
        let mut hist = vec![0u64; max_n + 1];
        for &t in &totals {
            hist[t as usize] += 1;
        }
        let sigma = emp_var.sqrt();
        let norm = (TWO_PI * emp_var).sqrt().recip();
        let mut sup = 0.0f64;
        for (m, &count) in hist.iter().enumerate() {
            let p_hat = count as f64 / samples as f64;
            let z = (m as f64 - emp_mean) / sigma;
            let gauss = norm * (-0.5 * z * z).exp();
            sup = sup.max((p_hat - gauss).abs());
        }
        let volume = self.geom.volume();
        let half_width = volume.sqrt() as usize;
        let center = emp_mean.round() as i64;
        let mut sandwich_ok = true;
        let mut window_min = f64::INFINITY;
        let mut window_max: f64 = 0.0;
        for k in 0..=half_width {
            let m = center - k as i64;
            if m < 0 {
                sandwich_ok = false;
                break;
            }
            let p_hat = hist.get(m as usize).map_or(0.0, |&c| c as f64 / samples as f64);
            let scaled = p_hat * volume.sqrt();
            window_min = window_min.min(scaled);
            window_max = window_max.max(scaled);
            if scaled < 1.0 / sandwich_c || scaled > sandwich_c {
                sandwich_ok = false;
            }
        }
        CltReport {
            samples,
            theoretical_mean: self.mean_particles(),
            theoretical_variance: self.variance_particles(),
            empirical_mean: emp_mean,
            empirical_variance: emp_var,
            sup_distance: sup,
            sandwich_c,
            sandwich_ok,
            window_min_scaled: window_min,
            window_max_scaled: window_max,
        }
    }
}

/// Outcome of the local central-limit check on the tilted ensemble.
#[derive(Debug, Clone, Copy)]
pub struct CltReport {
    pub samples: usize,
    pub theoretical_mean: f64,
    pub theoretical_variance: f64,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    /// sup_m |P̂(N = m) - Gaussian density at m|.
    pub sup_distance: f64,
    pub sandwich_c: f64,
    pub sandwich_ok: bool,
    /// min and max of √|Λ|·P̂(N = m) over the window below the mean.
    pub window_min_scaled: f64,
    pub window_max_scaled: f64,
}
