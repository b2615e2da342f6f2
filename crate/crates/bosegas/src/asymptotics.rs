//! Reference implementations of the limit laws: the Dickman density and the
//! Poisson–Dirichlet PD(0,1) distribution of macroscopic loop lengths, the
//! local limit theorem for heavy-tailed renewal sums, and the marked-cell
//! representation of the free-boundary gas.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::ensemble::{critical_density, PartitionTable};
use crate::error::{Error, Result};
use crate::geometry::{Bc, Geometry};
use crate::loops::{sample_conditioned, short_long_split, LoopThresholds};
use crate::numerics::{
    exp_integral_e1, fit_line, gauss_legendre, mean_and_stderr, percentile, rescale_quadrature,
    zeta,
};
use crate::rng::{poisson, stream_rng};
use crate::spectral::TraceTable;

/// Euler's constant, the `e^{-gamma}` plateau height of the Dickman density.
pub const EULER_GAMMA: f64 = 0.5772156649015328606;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// The Dickman density p, normalized as a probability density on (0, ∞):
/// x p(x) = ∫_{x-1}^{x} p(u) du, with p = e^{-γ} on [0, 1].
///
/// Piecewise analytic on [0, 2]; beyond 2 the delay equation is integrated
/// with an implicit trapezoid step at two mesh widths and Richardson
/// extrapolation.
#[derive(Debug, Clone)]
pub struct DickmanDensity {
    h: f64,
    x_max: f64,
    /// p at grid points i·h, i = 0..=x_max/h.
    table: Vec<f64>,
}

impl DickmanDensity {
    pub fn build(x_max: f64) -> Result<Self> {
        if !(2.0..=100.0).contains(&x_max) {
            return Err(Error::InvalidArgument(format!(
                "Dickman table range must lie in [2, 100], got {x_max}"
            )));
        }
        let h = 1e-4;
        let coarse = Self::integrate(x_max, h);
        let fine = Self::integrate(x_max, h / 2.0);
        let table = coarse
            .iter()
            .enumerate()
            .map(|(i, &ph)| ((4.0 * fine[2 * i] - ph) / 3.0).max(0.0))
            .collect();
        Ok(DickmanDensity { h, x_max, table })
    }

    /// Trapezoid-implicit integration of x p(x) = I(x) - I(x-1) on a uniform
    /// grid, seeded with the closed forms on [0, 2].
    ///
    /// The running integral is kept in compensated (Neumaier) form and the
    /// window I(x-h) - I(x-1) is differenced with its compensations, because
    /// by x ~ 11 the window is ~1e-14 while both endpoints are ~1, so plain
    /// f64 accumulation noise would exceed the density itself.
    fn integrate(x_max: f64, h: f64) -> Vec<f64> {
        let steps_per_unit = (1.0 / h).round() as usize;
        let n = (x_max / h).round() as usize;
        let mut p = vec![0.0; n + 1];
        let mut integral = vec![0.0; n + 1];
        let mut comp = vec![0.0; n + 1];
        let e_mg = (-EULER_GAMMA).exp();
        let kahan_step = |sum: f64, c: f64, y: f64| -> (f64, f64) {
            let t = sum + y;
            let c_new = if sum.abs() >= y.abs() {
                c + ((sum - t) + y)
            } else {
                c + ((y - t) + sum)
            };
            (t, c_new)
        };
        for i in 0..=n {
            let x = i as f64 * h;
            if x <= 1.0 {
                p[i] = e_mg;
            } else if x <= 2.0 {
                p[i] = e_mg * (1.0 - x.ln());
            } else {
                // Implicit trapezoid: p(x)(x - h/2) = I(x-h) + (h/2)p(x-h) - I(x-1).
                let window = (integral[i - 1] - integral[i - steps_per_unit])
                    + (comp[i - 1] - comp[i - steps_per_unit]);
                p[i] = ((window + 0.5 * h * p[i - 1]) / (x - 0.5 * h)).max(0.0);
            }
            if i > 0 {
                let (s, c) = kahan_step(integral[i - 1], comp[i - 1], 0.5 * h * (p[i - 1] + p[i]));
                integral[i] = s;
                comp[i] = c;
            }
        }
        p
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// p(x). Exact closed forms on [0, 2], interpolated table beyond.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Dickman density needs x >= 0, got {x}"
            )));
        }
        if x > self.x_max {
            return Err(Error::InvalidArgument(format!(
                "Dickman table covers [0, {}], requested {x}",
                self.x_max
            )));
        }
        let e_mg = (-EULER_GAMMA).exp();
        if x <= 1.0 {
            return Ok(e_mg);
        }
        if x <= 2.0 {
            return Ok(e_mg * (1.0 - x.ln()));
        }
        let pos = x / self.h;
        let i = (pos.floor() as usize).min(self.table.len() - 2);
        let frac = pos - i as f64;
        Ok(self.table[i] * (1.0 - frac) + self.table[i + 1] * frac)
    }

    /// ∫_0^{x_max} p by trapezoid over the table; the omitted tail is
    /// super-exponentially small for x_max ≥ 8.
    pub fn total_mass(&self) -> f64 {
        let mut sum = 0.5 * (self.table[0] + self.table[self.table.len() - 1]);
        for &v in &self.table[1..self.table.len() - 1] {
            sum += v;
        }
        sum * self.h
    }

    /// Numerical Laplace transform ∫_0^{x_max} e^{-sx} p(x) dx of the table.
    pub fn laplace_transform(&self, s: f64) -> f64 {
        let mut sum = 0.5 * (self.table[0]
            + (-s * self.x_max).exp() * self.table[self.table.len() - 1]);
        for (i, &v) in self.table.iter().enumerate().skip(1) {
            if i == self.table.len() - 1 {
                break;
            }
            sum += (-s * i as f64 * self.h).exp() * v;
        }
        sum * self.h
    }
}

/// Closed-form Laplace transform of the Dickman density,
/// exp(-∫_0^1 (1-e^{-su})/u du) = e^{-γ} s^{-1} e^{-E₁(s)}.
pub fn dickman_laplace_reference(s: f64) -> f64 {
    assert!(s > 0.0);
    (-(EULER_GAMMA + s.ln() + exp_integral_e1(s))).exp()
}

/// CDF of the largest PD(0,1) atom: F₁(x) = e^{γ} p(1/x) for x ∈ (0, 1],
/// where p is the Dickman density; equals 1 + ln x on [1/2, 1].
pub fn pd1_largest_cdf(dickman: &DickmanDensity, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "largest-atom CDF needs x > 0, got {x}"
        )));
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    if 1.0 / x > dickman.x_max() {
        return Ok(0.0);
    }
    Ok(EULER_GAMMA.exp() * dickman.eval(1.0 / x)?)
}

/// One draw from the Poisson–Dirichlet PD(0,1) law: residual mass is split
/// by i.i.d. uniform stick fractions until less than `mass_tol` remains.
#[derive(Debug, Clone, PartialEq)]
pub struct PdSample {
    atoms: Vec<f64>,
}

impl PdSample {
    /// Atoms sorted descending.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn largest(&self) -> f64 {
        self.atoms.first().copied().unwrap_or(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().sum()
    }
}

pub fn sample_pd1(rng: &mut ChaCha8Rng, mass_tol: f64) -> Result<PdSample> {
    if !(mass_tol > 0.0 && mass_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mass tolerance must lie in (0, 1), got {mass_tol}"
        )));
    }
    let mut atoms = Vec::new();
    let mut residual = 1.0;
    while residual >= mass_tol {
        let y: f64 = rng.gen();
        atoms.push(residual * y);
        residual *= 1.0 - y;
    }
    atoms.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(PdSample { atoms })
}

/// Joint density of the s largest PD(0,1) atoms at x₁ ≥ … ≥ x_s:
/// f⁽ˢ⁾(x) = e^{γ} / (Π xᵢ) · p((1 - Σ xᵢ)/x_s).
pub fn pd_marginal_density(dickman: &DickmanDensity, xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("need at least one atom".into()));
    }
    let mut sum = 0.0;
    let mut prod = 1.0;
    let mut prev = 1.0;
    for &x in xs {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "atoms must lie in (0, 1), got {x}"
            )));
        }
        if x > prev {
            return Err(Error::InvalidArgument(
                "atoms must be nonincreasing".into(),
            ));
        }
        sum += x;
        prod *= x;
        prev = x;
    }
    if sum >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "atom masses sum to {sum} >= 1"
        )));
    }
    let arg = (1.0 - sum) / xs[xs.len() - 1];
    Ok(EULER_GAMMA.exp() / prod * dickman.eval(arg)?)
}

/// The Golomb–Dickman constant E[largest PD(0,1) atom] = ∫_0^∞ e^{-x-E₁(x)} dx,
/// by Gauss–Legendre quadrature.
pub fn golomb_dickman_constant() -> f64 {
    let (nodes, weights) = gauss_legendre(64);
    let mut total = 0.0;
    for (a, b) in [(0.0, 1.0), (1.0, 4.0), (4.0, 12.0), (12.0, 40.0)] {
        let (xs, ws) = rescale_quadrature(&nodes, &weights, a, b);
        total += xs
            .iter()
            .zip(&ws)
            .map(|(&x, &w)| w * (-x - exp_integral_e1(x)).exp())
            .sum::<f64>();
    }
    total
}

/// Parameters for the Poisson–Dirichlet convergence experiment: a
/// supercritical gas sampled at several sizes.
#[derive(Debug, Clone, Copy)]
pub struct PdParams {
    pub bc: Bc,
    pub d: u32,
    pub beta: f64,
    pub rho: f64,
    pub samples: usize,
    pub bootstrap: usize,
}

/// Per-size outcome of the PD convergence experiment.
#[derive(Debug, Clone, Copy)]
pub struct PdRow {
    pub n: usize,
    pub l: f64,
    /// KS distance of L₁/((ρ-ρ_c)|Λ|) to the PD₁ largest-atom CDF.
    pub ks: f64,
    pub mean_long_density: f64,
    pub stderr_long_density: f64,
}

/// Outcome of the PD convergence experiment across sizes.
#[derive(Debug, Clone)]
pub struct PdReport {
    pub rows: Vec<PdRow>,
    pub rho_minus_rho_c: f64,
    /// 5th percentile of bootstrap draws of KS(first) - KS(last).
    pub ks_diff_p5: f64,
    /// True when the KS decrease is significant at the 95% level.
    pub ks_decreasing_95: bool,
}

/// Samples the conditioned loop process along an increasing size sequence
/// and measures convergence of the scaled largest loop to the PD₁ marginal,
/// plus the long-loop mass density against ρ - ρ_c.
///
/// Free boundary conditions are rejected: the free gas condenses into a
/// single macroscopic loop instead (see `free_bc_condensation_test`).
pub fn pd_convergence_test(
    params: &PdParams,
    ns: &[usize],
    dickman: &DickmanDensity,
    seed: u64,
) -> Result<PdReport> {
    if params.bc == Bc::Free {
        return Err(Error::Config(
            "the free gas shows a single macroscopic loop, not Poisson–Dirichlet; use the free-boundary condensation test".into(),
        ));
    }
    if ns.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two sizes to compare".into(),
        ));
    }
    let rho_c = critical_density(params.d, params.beta)?;
    if params.rho <= rho_c {
        return Err(Error::Config(format!(
            "PD convergence needs a supercritical density: rho = {} <= rho_c = {rho_c}",
            params.rho
        )));
    }
    let excess = params.rho - rho_c;
    let mut rows = Vec::with_capacity(ns.len());
    let mut first_scaled: Vec<f64> = Vec::new();
    let mut last_scaled: Vec<f64> = Vec::new();
    for (row_idx, &n) in ns.iter().enumerate() {
        let l = (n as f64 / params.rho).powf(1.0 / params.d as f64);
        let geom = Geometry::new(params.bc, params.d, l)?;
        let thresholds = LoopThresholds::new(n, l, params.d)?;
        let traces = TraceTable::build(geom, params.beta, n)?;
        let table = PartitionTable::build(&traces, n)?;
        let volume = geom.volume();
        let scale = excess * volume;

        let shards: usize = 32.min(params.samples.max(1));
        let per = params.samples / shards;
        let extra = params.samples % shards;
        let mut shard_data: Vec<(Vec<f64>, Vec<f64>)> = (0..shards)
            .into_par_iter()
            .map(|shard| {
                let mut rng = stream_rng(seed, (row_idx * 256 + shard) as u64);
                let count = per + usize::from(shard < extra);
                let mut scaled = Vec::with_capacity(count);
                let mut long_density = Vec::with_capacity(count);
                for _ in 0..count {
                    let config = sample_conditioned(&table, n, &mut rng)
                        .expect("n is within the table");
                    let l1 = config.ordered_lengths().first().copied().unwrap_or(0);
                    scaled.push(l1 as f64 / scale);
                    let (_, n_long) = short_long_split(&config, &thresholds);
                    long_density.push(n_long as f64 / volume);
                }
                (scaled, long_density)
            })
            .collect();
        let mut scaled = Vec::with_capacity(params.samples);
        let mut long_density = Vec::with_capacity(params.samples);
        for (s, ld) in &mut shard_data {
            scaled.append(s);
            long_density.append(ld);
        }
        let ks = ks_distance_to_pd1(&scaled, dickman)?;
        let (mean_ld, se_ld) = mean_and_stderr(&long_density);
        rows.push(PdRow {
            n,
            l,
            ks,
            mean_long_density: mean_ld,
            stderr_long_density: se_ld,
        });
        if row_idx == 0 {
            first_scaled = scaled;
        } else if row_idx == ns.len() - 1 {
            last_scaled = scaled;
        }
    }

    let mut diffs = Vec::with_capacity(params.bootstrap);
    let mut rng = stream_rng(seed, 9_999);
    for _ in 0..params.bootstrap {
        let a = resample_ks(&first_scaled, dickman, &mut rng)?;
        let b = resample_ks(&last_scaled, dickman, &mut rng)?;
        diffs.push(a - b);
    }
    let ks_diff_p5 = if diffs.is_empty() {
        0.0
    } else {
        percentile(&diffs, 0.05)
    };
    Ok(PdReport {
        rows,
        rho_minus_rho_c: excess,
        ks_diff_p5,
        ks_decreasing_95: ks_diff_p5 > 0.0,
    })
}

fn ks_distance_to_pd1(scaled: &[f64], dickman: &DickmanDensity) -> Result<f64> {
    let mut sorted = scaled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = pd1_largest_cdf(dickman, x.max(1e-12))?;
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        ks = ks.max((f - lo).abs()).max((f - hi).abs());
    }
    Ok(ks)
}

fn resample_ks(
    data: &[f64],
    dickman: &DickmanDensity,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = data.len();
    let resampled: Vec<f64> = (0..n).map(|_| data[rng.gen_range(0..n)]).collect();
    ks_distance_to_pd1(&resampled, dickman)
}

/// Per-size outcome of the free-boundary condensation test.
#[derive(Debug, Clone, Copy)]
pub struct FreeCondensationRow {
    pub n: usize,
    pub l: f64,
    /// Median of L₂/L₁ (zero when only one loop is long).
    pub median_l2_over_l1: f64,
    /// Mean of L₁/((ρ-ρ_c)|Λ|).
    pub mean_l1_scaled: f64,
    pub stderr_l1_scaled: f64,
}

/// Free boundary conditions: the excess mass condenses into one macroscopic
/// loop, so L₂/L₁ must shrink along the size sequence while L₁ carries the
/// whole excess.
pub fn free_bc_condensation_test(
    d: u32,
    beta: f64,
    rho: f64,
    samples: usize,
    ns: &[usize],
    seed: u64,
) -> Result<Vec<FreeCondensationRow>> {
    let rho_c = critical_density(d, beta)?;
    if rho <= rho_c {
        return Err(Error::Config(format!(
            "condensation test needs a supercritical density: rho = {rho} <= rho_c = {rho_c}"
        )));
    }
    let excess = rho - rho_c;
    let mut rows = Vec::with_capacity(ns.len());
    for (row_idx, &n) in ns.iter().enumerate() {
        let l = (n as f64 / rho).powf(1.0 / d as f64);
        let geom = Geometry::new(Bc::Free, d, l)?;
        let traces = TraceTable::build(geom, beta, n)?;
        let table = PartitionTable::build(&traces, n)?;
        let volume = geom.volume();
        let scale = excess * volume;

        let shards: usize = 32.min(samples.max(1));
        let per = samples / shards;
        let extra = samples % shards;
        let mut shard_data: Vec<(Vec<f64>, Vec<f64>)> = (0..shards)
            .into_par_iter()
            .map(|shard| {
                let mut rng = stream_rng(seed, (row_idx * 256 + shard) as u64);
                let count = per + usize::from(shard < extra);
                let mut ratios = Vec::with_capacity(count);
                let mut l1s = Vec::with_capacity(count);
                for _ in 0..count {
                    let config = sample_conditioned(&table, n, &mut rng)
                        .expect("n is within the table");
                    let ordered = config.ordered_lengths();
                    let l1 = ordered.first().copied().unwrap_or(0) as f64;
                    let l2 = ordered.get(1).copied().unwrap_or(0) as f64;
                    ratios.push(if l1 > 0.0 { l2 / l1 } else { 0.0 });
                    l1s.push(l1 / scale);
                }
                (ratios, l1s)
            })
            .collect();
        let mut ratios = Vec::with_capacity(samples);
        let mut l1s = Vec::with_capacity(samples);
        for (r, l1) in &mut shard_data {
            ratios.append(r);
            l1s.append(l1);
        }
        let (mean_l1, se_l1) = mean_and_stderr(&l1s);
        rows.push(FreeCondensationRow {
            n,
            l,
            median_l2_over_l1: percentile(&ratios, 0.5),
            mean_l1_scaled: mean_l1,
            stderr_l1_scaled: se_l1,
        });
    }
    Ok(rows)
}

/// Renewal-step model with Pareto-type tail: P(Z = j) = j^{-d/2-1}/ζ(d/2+1),
/// mean a = ζ(d/2)/ζ(d/2+1). Governs the cell marks of the free gas and the
/// local limit theorem for long-loop sums.
#[derive(Debug, Clone, Copy)]
pub struct ParetoWalkModel {
    pub d: u32,
    exponent: f64,
    norm: f64,
}

impl ParetoWalkModel {
    pub fn new(d: u32) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidArgument(format!(
                "the step mean diverges for d = {d} (needs d >= 3)"
            )));
        }
        let exponent = d as f64 / 2.0 + 1.0;
        Ok(ParetoWalkModel {
            d,
            exponent,
            norm: zeta(exponent),
        })
    }

    pub fn pmf(&self, j: usize) -> f64 {
        assert!(j >= 1);
        (j as f64).powf(-self.exponent) / self.norm
    }

    /// a = E[Z] = ζ(d/2)/ζ(d/2+1).
    pub fn mean(&self) -> f64 {
        zeta(self.d as f64 / 2.0) / self.norm
    }

    /// Upper bound on the pmf mass above j_max, from the integral tail.
    pub fn truncation_deficit(&self, j_max: usize) -> f64 {
        let s = self.exponent;
        (j_max as f64).powf(1.0 - s) / (s - 1.0) / self.norm
    }
}

/// A pmf over integer values `offset + i`, i = 0..len. Tracking the offset
/// explicitly keeps n-fold convolutions aligned: offsets add while arrays
/// convolve.
#[derive(Debug, Clone)]
struct OffsetPmf {
    offset: usize,
    probs: Vec<f64>,
}

fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len() + b.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa.truncate(n);
    fa.iter().map(|c| (c.re * scale).max(0.0)).collect()
}

/// Convolution of two offset pmfs keeping only values ≤ cap. Because all
/// step values are positive, every kept entry is exact: mass that would land
/// above the cap can never return below it.
fn conv_capped(a: &OffsetPmf, b: &OffsetPmf, cap: usize) -> OffsetPmf {
    let offset = a.offset + b.offset;
    assert!(offset <= cap, "convolution ran past the value cap");
    let mut probs = fft_convolve(&a.probs, &b.probs);
    probs.truncate(cap - offset + 1);
    OffsetPmf { offset, probs }
}

/// One evaluation point of the local limit theorem check.
#[derive(Debug, Clone, Copy)]
pub struct LcltRow {
    pub k: i64,
    pub value: u64,
    pub exact_pmf: f64,
    pub predicted_pmf: f64,
    pub ratio: f64,
    pub in_window: bool,
}

/// Outcome of the local limit theorem check at one walk length.
#[derive(Debug, Clone)]
pub struct LcltReport {
    pub n: usize,
    pub cap: usize,
    /// Mass lost above the value cap: 1 - Σ kept pmf. Kept entries are exact.
    pub deficit: f64,
    pub rows: Vec<LcltRow>,
    pub worst_in_window_error: f64,
}

/// Local limit theorem P(S_n = an + k) ≈ n P(Z = k) for the n-step renewal
/// sum, by exact capped convolution with binary doubling. The relative error
/// is asserted only inside the window c·n ≤ an+k ≤ n/c; points outside are
/// reported untested.
pub fn pareto_lclt_check(
    model: &ParetoWalkModel,
    n: usize,
    ks: &[i64],
    window_c: f64,
) -> Result<LcltReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("walk length must be positive".into()));
    }
    if !(window_c > 0.0 && window_c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "window constant must lie in (0, 1), got {window_c}"
        )));
    }
    let a = model.mean();
    let center = (a * n as f64).round() as i64;
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let min_k = ks.iter().copied().min().unwrap_or(0);
    if min_k < 1 {
        return Err(Error::InvalidArgument(
            "offsets k must be >= 1 (the step pmf has no mass at 0)".into(),
        ));
    }
    let cap = (center + max_k + 8) as usize;
    let base = OffsetPmf {
        offset: 1,
        probs: (1..=cap).map(|j| model.pmf(j)).collect(),
    };
    let mut result: Option<OffsetPmf> = None;
    let mut square = base;
    let mut m = n;
    while m > 0 {
        if m & 1 == 1 {
            result = Some(match result.take() {
                None => square.clone(),
                Some(r) => conv_capped(&r, &square, cap),
            });
        }
        m >>= 1;
        if m > 0 {
            square = conv_capped(&square, &square, cap);
        }
    }
    let dist = result.expect("n >= 1");
    let deficit = 1.0 - dist.probs.iter().sum::<f64>();

    let mut rows = Vec::with_capacity(ks.len());
    let mut worst: f64 = 0.0;
    for &k in ks {
        let value = (center + k) as u64;
        let idx = value as usize - dist.offset;
        let exact = dist.probs[idx];
        let predicted = n as f64 * model.pmf(k as usize);
        let ratio = exact / predicted;
        let v = value as f64;
        let in_window = window_c * n as f64 <= v && v <= n as f64 / window_c;
        if in_window {
            worst = worst.max((ratio - 1.0).abs());
        }
        rows.push(LcltRow {
            k,
            value,
            exact_pmf: exact,
            predicted_pmf: predicted,
            ratio,
            in_window,
        });
    }
    Ok(LcltReport {
        n,
        cap,
        deficit,
        rows,
        worst_in_window_error: worst,
    })
}

/// Oracle: the two-step pmf by direct pairwise summation.
pub fn two_step_pmf_by_enumeration(model: &ParetoWalkModel, value: usize) -> f64 {
    (1..value)
        .map(|j| model.pmf(j) * model.pmf(value - j))
        .sum()
}

/// Parameters for the marked-cell simulation of the free gas.
#[derive(Debug, Clone, Copy)]
pub struct FreeCellParams {
    pub d: u32,
    pub beta: f64,
    /// Number of unit cells |Λ|.
    pub volume_cells: usize,
    pub samples: usize,
    /// Fit window in w - ρ_c for the tail of N_Λ/|Λ|.
    pub window: (f64, f64),
    pub bins: usize,
}

/// Outcome of the marked-cell simulation.
#[derive(Debug, Clone, Copy)]
pub struct FreeCellReport {
    pub rho_c: f64,
    /// Poisson mean of marks per unit cell, (2πβ)^{-d/2} ζ(d/2+1).
    pub p_free: f64,
    /// Mean marks per unit cell and its Poisson standard error.
    pub marks_per_cell: f64,
    pub marks_stderr: f64,
    /// Mean particles per cell under the capped mark distribution.
    pub empirical_cell_mean: f64,
    /// Exact mean of the capped model, p^{free} E[min(Z, cap)]; differs from
    /// ρ_c = a p^{free} only by the O(cap^{-1/2}) truncation deficit.
    pub cell_mean_reference: f64,
    pub cell_mean_stderr: f64,
    /// Largest representable mark; marks have tail index d/2, so uncapped
    /// sizes would have infinite variance for d = 3.
    pub mark_cap: usize,
    /// Log-log slope of the upper-tail pmf in (w - ρ_c); the reference
    /// exponent is -(d/2 + 1).
    pub slope: f64,
    pub slope_reference: f64,
    pub r_squared: f64,
    pub fit_points: usize,
}

/// Simulates the free gas as a Poisson number of marks per unit cell with
/// Pareto-tailed mark sizes and fits the polynomial upper tail of the total
/// density. E[marks per cell] = p^{free}, E[particles per cell] = ρ_c.
pub fn free_bc_cell_counts(params: &FreeCellParams, seed: u64) -> Result<FreeCellReport> {
    let model = ParetoWalkModel::new(params.d)?;
    let rho_c = critical_density(params.d, params.beta)?;
    let p_free =
        (TWO_PI * params.beta).powf(-(params.d as f64) / 2.0) * zeta(params.d as f64 / 2.0 + 1.0);
    let volume = params.volume_cells as f64;
    let (w_lo, w_hi) = params.window;
    if !(w_lo > 0.0 && w_hi > w_lo) {
        return Err(Error::InvalidArgument(format!(
            "invalid tail window ({w_lo}, {w_hi})"
        )));
    }

    // Inverse-CDF table for the mark distribution; the residual beyond the
    // table is below 1e-9 and is clamped to the last entry.
    let mut cum = Vec::new();
    let mut acc = 0.0;
    let mut j = 0usize;
    while 1.0 - acc > 1e-9 && j < 2_000_000 {
        j += 1;
        acc += model.pmf(j);
        cum.push(acc);
    }
    let cum = std::sync::Arc::new(cum);

    // Exact mean of the capped mark distribution; the cap folds all residual
    // mass into the last table entry.
    let mark_cap = cum.len();
    let expected_capped_mark: f64 = {
        let mut prev = 0.0;
        let mut e = 0.0;
        for (m, &c) in cum.iter().enumerate() {
            let mass = if m + 1 < mark_cap { c - prev } else { 1.0 - prev };
            e += (m + 1) as f64 * mass;
            prev = c;
        }
        e
    };

    let cap_total = (volume * (rho_c + 2.0 * w_hi + 2.0)).ceil() as usize;
    let shards: usize = 64.min(params.samples.max(1));
    let per = params.samples / shards;
    let extra = params.samples % shards;
    let partials: Vec<(Vec<u64>, f64, f64, u64)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = stream_rng(seed, shard as u64);
            let count = per + usize::from(shard < extra);
            let mut hist = vec![0u64; cap_total + 1];
            let mut sum_totals = 0.0f64;
            let mut sumsq_totals = 0.0f64;
            let mut mark_count = 0u64;
            for _ in 0..count {
                let marks = poisson(&mut rng, volume * p_free);
                mark_count += marks;
                let mut total = 0u64;
                for _ in 0..marks {
                    let u: f64 = rng.gen();
                    let idx = cum.partition_point(|&c| c < u);
                    total += (idx + 1).min(mark_cap) as u64;
                }
                sum_totals += total as f64;
                sumsq_totals += (total as f64) * (total as f64);
                let slot = (total as usize).min(cap_total);
                hist[slot] += 1;
            }
            (hist, sum_totals, sumsq_totals, mark_count)
        })
        .collect();
    let mut hist = vec![0u64; cap_total + 1];
    let mut sum_totals = 0.0;
    let mut sumsq_totals = 0.0;
    let mut mark_count = 0u64;
    for (h, s, sq, mc) in partials {
        for (acc, v) in hist.iter_mut().zip(h) {
            *acc += v;
        }
        sum_totals += s;
        sumsq_totals += sq;
        mark_count += mc;
    }

    let samples = params.samples as f64;
    let marks_per_cell = mark_count as f64 / samples / volume;
    let marks_stderr = (p_free / (samples * volume)).sqrt();
    let empirical_cell_mean = sum_totals / samples / volume;
    let cell_mean_reference = p_free * expected_capped_mark;
    let mean_total = sum_totals / samples;
    let var_total = ((sumsq_totals - samples * mean_total * mean_total)
        / (samples - 1.0).max(1.0))
    .max(0.0);
    let cell_mean_stderr = (var_total / samples).sqrt() / volume;

    // Log-binned fit of the upper-tail pmf of N/|Λ| against (w - ρ_c).
    let ratio = w_hi / w_lo;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for b in 0..params.bins {
        let lo = w_lo * ratio.powf(b as f64 / params.bins as f64);
        let hi = w_lo * ratio.powf((b + 1) as f64 / params.bins as f64);
        let m_lo = (volume * (rho_c + lo)).ceil() as usize;
        let m_hi = ((volume * (rho_c + hi)).ceil() as usize).min(cap_total);
        if m_hi <= m_lo {
            continue;
        }
        let count: u64 = hist[m_lo..m_hi].iter().sum();
        if count < 30 {
            continue;
        }
        let width = (m_hi - m_lo) as f64;
        let density = count as f64 / samples / width;
        xs.push((lo * hi).sqrt().ln());
        ys.push(density.ln());
    }
    if xs.len() < 4 {
        return Err(Error::Config(format!(
            "tail fit has only {} usable bins; increase samples or widen the window",
            xs.len()
        )));
    }
    let fit = fit_line(&xs, &ys);
    Ok(FreeCellReport {
        rho_c,
        p_free,
        marks_per_cell,
        marks_stderr,
        empirical_cell_mean,
        cell_mean_reference,
        cell_mean_stderr,
        mark_cap,
        slope: fit.slope,
        slope_reference: -(params.d as f64 / 2.0 + 1.0),
        r_squared: fit.r_squared,
        fit_points: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn dickman() -> DickmanDensity {
        DickmanDensity::build(12.0).unwrap()
    }

    #[test]
    fn dickman_closed_forms_and_table_values() {
        let d = dickman();
        close(d.eval(0.5).unwrap(), 0.561459483566885170, 1e-15);
        close(d.eval(1.0).unwrap(), 0.561459483566885170, 1e-15);
        close(
            d.eval(2.0).unwrap(),
            0.561459483566885170 * (1.0 - 2.0f64.ln()),
            1e-15,
        );
        close(d.eval(2.0).unwrap(), 0.172285425533856, 1e-12);
        // e^{-γ} ρ_D at interpolated points.
        close(
            d.eval(2.5).unwrap(),
            0.561459483566885170 * 0.130319561832250746,
            1e-9,
        );
        close(
            d.eval(3.0).unwrap(),
            0.561459483566885170 * 0.0486083882911315669,
            1e-9,
        );
        assert!(d.eval(-0.1).is_err());
        assert!(d.eval(100.0).is_err());
    }

    #[test]
    fn dickman_is_decreasing_and_normalized() {
        let d = dickman();
        let mut prev = d.eval(1.0).unwrap();
        let mut x = 1.1;
        while x < 12.0 {
            let v = d.eval(x).unwrap();
            assert!(v >= 0.0 && v <= prev + 1e-12, "not decreasing at {x}");
            prev = v;
            x += 0.1;
        }
        close(d.total_mass(), 1.0, 1e-6);
    }

    #[test]
    fn dickman_laplace_transform_matches_reference() {
        let d = dickman();
        close(dickman_laplace_reference(0.5), 0.641566729611686590, 1e-12);
        close(dickman_laplace_reference(1.0), 0.450859463323219986, 1e-12);
        close(dickman_laplace_reference(2.0), 0.267332158035444451, 1e-12);
        for s in [0.5, 1.0, 2.0] {
            close(d.laplace_transform(s), dickman_laplace_reference(s), 1e-5);
        }
    }

    #[test]
    fn largest_atom_cdf_closed_form_on_upper_half() {
        let d = dickman();
        for x in [0.5, 0.6, 0.8, 0.95] {
            close(pd1_largest_cdf(&d, x).unwrap(), 1.0 + x.ln(), 1e-12);
        }
        assert_eq!(pd1_largest_cdf(&d, 1.3).unwrap(), 1.0);
        assert!(pd1_largest_cdf(&d, 0.05).unwrap() < 1e-10);
    }

    #[test]
    fn pd_sampler_invariants_and_largest_atom_mean() {
        let mut rng = stream_rng(4, 0);
        let mut sum_largest = 0.0;
        let trials = 20_000;
        for _ in 0..trials {
            let s = sample_pd1(&mut rng, 1e-10).unwrap();
            assert!(s.mass() <= 1.0 + 1e-12 && s.mass() >= 1.0 - 1e-9);
            let atoms = s.atoms();
            for w in atoms.windows(2) {
                assert!(w[0] >= w[1]);
            }
            sum_largest += s.largest();
        }
        let gd = golomb_dickman_constant();
        close(gd, 0.624329988543550867, 1e-9);
        let mean = sum_largest / trials as f64;
        // σ(L₁) ≈ 0.19; five standard errors.
        assert!((mean - gd).abs() < 5.0 * 0.19 / (trials as f64).sqrt());
    }

    #[test]
    fn pd_marginal_closed_form_and_normalization() {
        let d = dickman();
        close(pd_marginal_density(&d, &[0.6]).unwrap(), 1.0 / 0.6, 1e-12);
        assert!(pd_marginal_density(&d, &[0.5, 0.3]).unwrap().is_finite());
        assert!(pd_marginal_density(&d, &[0.3, 0.5]).is_err());
        assert!(pd_marginal_density(&d, &[0.7, 0.4]).is_err());
        assert!(pd_marginal_density(&d, &[1.2]).is_err());

        // ∫_0^1 f⁽¹⁾ = 1: integrate where the Dickman argument is tabulated;
        // the remainder below 1/13 carries mass < 1e-10.
        let lo = 1.0 / 13.0 + 1e-9;
        let n = 200_000;
        let h = (1.0 - 2e-9 - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * pd_marginal_density(&d, &[x]).unwrap();
        }
        integral *= h;
        close(integral, 1.0, 1e-4);
    }

    #[test]
    fn pd_two_atom_marginal_integrates_to_one_atom_marginal() {
        let d = dickman();
        for &x1 in &[0.45f64, 0.55, 0.62, 0.7, 0.8] {
            let upper = (1.0 - x1).min(x1);
            let lo = ((1.0 - x1) / 13.0).max(1e-9);
            let (nodes, weights) = gauss_legendre(32);
            // Integrate between consecutive kinks of the Dickman argument.
            let mut cut_points = vec![lo];
            for m in 1..=13 {
                let c = (1.0 - x1) / (m as f64 + 1.0);
                if c > lo && c < upper {
                    cut_points.push(c);
                }
            }
            cut_points.push(upper);
            cut_points.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut integral = 0.0;
            for seg in cut_points.windows(2) {
                let (xs, ws) = rescale_quadrature(&nodes, &weights, seg[0], seg[1]);
                for (&x2, &w) in xs.iter().zip(&ws) {
                    integral += w * pd_marginal_density(&d, &[x1, x2]).unwrap();
                }
            }
            let f1 = pd_marginal_density(&d, &[x1]).unwrap();
            close(integral, f1, 1e-3 * f1.max(1.0));
        }
    }

    #[test]
    fn pareto_model_mean_and_normalization() {
        let model = ParetoWalkModel::new(3).unwrap();
        close(model.mean(), 1.94737246631695670, 1e-12);
        assert!(ParetoWalkModel::new(2).is_err());
        // Direct partial sum plus integral tail reaches 1 to 1e-10.
        let j_max = 100_000;
        let partial: f64 = (1..=j_max).map(|j| model.pmf(j)).sum();
        let s = 2.5;
        let jf = j_max as f64;
        let tail = (jf.powf(1.0 - s) / (s - 1.0) - 0.5 * jf.powf(-s)
            + s / 12.0 * jf.powf(-s - 1.0))
            / zeta(s);
        close(partial + tail, 1.0, 1e-10);
        assert!(model.truncation_deficit(j_max) > tail * zeta(s) / zeta(s) * 0.9);
    }

    #[test]
    fn lclt_single_step_is_the_step_pmf() {
        let model = ParetoWalkModel::new(3).unwrap();
        let report = pareto_lclt_check(&model, 1, &[1, 2, 5], 0.2).unwrap();
        for row in &report.rows {
            close(row.exact_pmf, model.pmf(row.value as usize), 1e-12);
        }
    }

    #[test]
    fn lclt_two_steps_match_enumeration() {
        let model = ParetoWalkModel::new(3).unwrap();
        let report = pareto_lclt_check(&model, 2, &[1, 3, 10], 0.2).unwrap();
        for row in &report.rows {
            let oracle = two_step_pmf_by_enumeration(&model, row.value as usize);
            close(row.exact_pmf, oracle, 1e-12);
        }
    }

    #[test]
    fn lclt_ratio_is_of_order_one_in_the_window() {
        // The one-big-jump prediction needs k well above the bulk scale
        // n^{2/3}; at n = 512 the ratios at k/n in [1/2, 1] sit near
        // 0.72, 0.86, 0.92 and rise monotonically toward 1.
        let model = ParetoWalkModel::new(3).unwrap();
        let n = 512;
        let ks: Vec<i64> = vec![256, 384, 512];
        let report = pareto_lclt_check(&model, n, &ks, 0.2).unwrap();
        assert!(report.deficit.abs() < 0.5);
        let ratios: Vec<f64> = report.rows.iter().map(|r| r.ratio).collect();
        for (&k, &ratio) in ks.iter().zip(&ratios) {
            assert!(ratio > 0.6 && ratio < 1.05, "k {k}: ratio {ratio}");
        }
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
        assert!(report.worst_in_window_error < 0.35);
        assert!(pareto_lclt_check(&model, 4, &[0], 0.2).is_err());
    }

    #[test]
    fn free_cell_counts_mean_and_slope() {
        let params = FreeCellParams {
            d: 3,
            beta: 1.0,
            volume_cells: 64,
            samples: 30_000,
            window: (0.1, 1.2),
            bins: 16,
        };
        let report = free_bc_cell_counts(&params, 11).unwrap();
        close(report.p_free, 0.0851759035223131950, 1e-12);
        close(report.rho_c, 0.165869209313022206, 1e-12);
        // ρ_c = a p^{free} exactly; the capped reference differs only by the
        // cap^{-1/2} truncation deficit.
        let model = ParetoWalkModel::new(3).unwrap();
        close(report.rho_c, model.mean() * report.p_free, 1e-12);
        assert!((report.cell_mean_reference - report.rho_c).abs() < 1e-3);
        // Mark counts are Poisson, so their mean has a light-tailed error.
        assert!(
            (report.marks_per_cell - report.p_free).abs() < 5.0 * report.marks_stderr,
            "marks {} vs {}",
            report.marks_per_cell,
            report.p_free
        );
        // Capped totals have finite variance; compare against the capped
        // reference with the empirical standard error.
        assert!(
            (report.empirical_cell_mean - report.cell_mean_reference).abs()
                < 6.0 * report.cell_mean_stderr,
            "mean {} vs {} (stderr {})",
            report.empirical_cell_mean,
            report.cell_mean_reference,
            report.cell_mean_stderr
        );
        assert_eq!(report.slope_reference, -2.5);
        assert!(
            report.slope > -4.5 && report.slope < -1.0,
            "slope {}",
            report.slope
        );
    }

    #[test]
    fn pd_convergence_rejects_free_and_subcritical() {
        let d = dickman();
        let params = PdParams {
            bc: Bc::Free,
            d: 3,
            beta: 1.0,
            rho: 0.4,
            samples: 10,
            bootstrap: 10,
        };
        assert!(pd_convergence_test(&params, &[64, 128], &d, 1).is_err());
        let params = PdParams {
            bc: Bc::Periodic,
            rho: 0.01,
            ..params
        };
        assert!(pd_convergence_test(&params, &[64, 128], &d, 1).is_err());
    }

    #[test]
    fn pd_convergence_runs_on_a_small_sequence() {
        let d = dickman();
        let params = PdParams {
            bc: Bc::Periodic,
            d: 3,
            beta: 1.0,
            rho: 2.0 * critical_density(3, 1.0).unwrap(),
            samples: 48,
            bootstrap: 20,
        };
        let report = pd_convergence_test(&params, &[128, 256], &d, 3).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert!(row.ks >= 0.0 && row.ks <= 1.0);
            assert!(row.mean_long_density >= 0.0);
        }
        let again = pd_convergence_test(&params, &[128, 256], &d, 3).unwrap();
        close(report.rows[0].ks, again.rows[0].ks, 0.0);
        close(report.ks_diff_p5, again.ks_diff_p5, 0.0);
    }

    #[test]
    fn free_condensation_runs_and_l1_carries_excess() {
        let rows = free_bc_condensation_test(
            3,
            1.0,
            2.0 * critical_density(3, 1.0).unwrap(),
            64,
            &[256, 512],
            17,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.mean_l1_scaled > 0.5 && row.mean_l1_scaled < 1.5);
            assert!(row.median_l2_over_l1 < 0.5);
        }
    }
}
