//! Fast invariant suites behind the command-line `--selftest` switches. Each
//! check recomputes a quantity along two independent routes, or against a
//! closed form, and reports the measured discrepancy.

use crate::asymptotics::{
    dickman_laplace_reference, pareto_lclt_check, pd1_largest_cdf, pd_marginal_density,
    two_step_pmf_by_enumeration, DickmanDensity, ParetoWalkModel,
};
use crate::ensemble::{
    chemical_potential, critical_density, density_of_mu, free_energy,
    log_partition_by_enumeration, pressure_of_mu, PartitionTable,
};
use crate::error::{Error, Result};
use crate::geometry::{Bc, Geometry};
use crate::loops::{
    ppp_total_pmf, sample_conditioned, LongLoopDistribution, LoopThresholds,
};
use crate::numerics::{gauss_legendre, rescale_quadrature};
use crate::rng::stream_rng;
use crate::spectral::{
    kernel_1d_unit, kernel_box, log_cycle_weight, log_trace_unit, semigroup_residual,
    verify_kernel_bounds, TraceTable,
};

/// Outcome of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn() -> std::result::Result<String, String>;

const SUITES: &[(&str, &[(&str, CheckFn)])] = &[
    (
        "spectral",
        &[
            ("semigroup-identity", check_semigroup_identity),
            ("free-semigroup-negative-control", check_free_negative_control),
            ("kernel-mass-bounds", check_kernel_mass_bounds),
            ("trace-ordering", check_trace_ordering),
            ("frozen-cycle-weights", check_frozen_cycle_weights),
        ],
    ),
    (
        "ensemble",
        &[
            ("recursion-vs-enumeration", check_recursion_vs_enumeration),
            ("recursion-residual", check_recursion_residual),
            ("critical-density", check_critical_density),
            ("chemical-potential-round-trip", check_mu_round_trip),
            ("pressure-derivative", check_pressure_derivative),
            ("flat-free-energy", check_flat_free_energy),
        ],
    ),
    (
        "loops",
        &[
            ("poisson-partition-identity", check_partition_identity),
            ("conditioned-sampler-totals", check_sampler_totals),
            ("long-loop-support", check_long_loop_support),
            ("threshold-formulas", check_threshold_formulas),
        ],
    ),
    (
        "asymptotics",
        &[
            ("dickman-closed-forms", check_dickman_closed_forms),
            ("dickman-laplace", check_dickman_laplace),
            ("largest-atom-cdf", check_largest_atom_cdf),
            ("marginal-consistency", check_marginal_consistency),
            ("pareto-step-mean", check_pareto_mean),
            ("two-step-convolution", check_two_step_convolution),
        ],
    ),
    (
        "rdm",
        &[
            ("single-particle-kernel", check_single_particle_kernel),
            ("trace-quadrature", check_trace_quadrature),
            ("grid-vs-modal-sigma", check_grid_vs_modal),
        ],
    ),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(name, _)| *name).collect()
}

/// Runs one named suite; `all` runs every suite.
pub fn run_suite(name: &str) -> Result<Vec<CheckResult>> {
    if name == "all" {
        return Ok(run_all());
    }
    let (_, checks) = SUITES
        .iter()
        .find(|(suite, _)| *suite == name)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown selftest suite {name:?}; available: all, {}",
                suite_names().join(", ")
            ))
        })?;
    Ok(run_checks(name, checks))
}

pub fn run_all() -> Vec<CheckResult> {
    SUITES
        .iter()
        .flat_map(|(suite, checks)| run_checks(suite, checks))
        .collect()
}

fn run_checks(suite: &str, checks: &[(&'static str, CheckFn)]) -> Vec<CheckResult> {
    let suite_static = SUITES
        .iter()
        .map(|(s, _)| *s)
        .find(|s| *s == suite)
        .unwrap_or("all");
    checks
        .iter()
        .map(|(name, run)| match run() {
            Ok(detail) => CheckResult {
                suite: suite_static,
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckResult {
                suite: suite_static,
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

fn fail(msg: String) -> std::result::Result<String, String> {
    Err(msg)
}

fn check_semigroup_identity() -> std::result::Result<String, String> {
    let mut worst = 0.0f64;
    for bc in [Bc::Dirichlet, Bc::Neumann, Bc::Periodic] {
        let r = semigroup_residual(bc, 0.3, 0.2, 0.1, -0.2);
        worst = worst.max(r);
    }
    if worst < 1e-10 {
        Ok(format!("worst composition residual {worst:.2e}"))
    } else {
        fail(format!("composition residual {worst:.2e} >= 1e-10"))
    }
}

fn check_free_negative_control() -> std::result::Result<String, String> {
    let residual = semigroup_residual(Bc::Free, 0.3, 0.2, 0.1, -0.2);
    let direct = kernel_1d_unit(Bc::Free, 0.5, 0.1, -0.2);
    if residual > 0.1 * direct {
        Ok(format!(
            "free-motion mass escapes the box: residual {residual:.3e} vs kernel {direct:.3e}"
        ))
    } else {
        fail(format!(
            "free composition over the box unexpectedly closed: residual {residual:.3e}"
        ))
    }
}

fn check_kernel_mass_bounds() -> std::result::Result<String, String> {
    for bc in Bc::ALL {
        for t in [0.05, 0.5] {
            verify_kernel_bounds(bc, t, 32).map_err(|e| format!("{bc} at t={t}: {e}"))?;
        }
    }
    Ok("mass, symmetry and positivity bounds hold at t = 0.05 and 0.5".into())
}

fn check_trace_ordering() -> std::result::Result<String, String> {
    for t in [0.05, 0.2, 1.0, 5.0] {
        let (dir, _) = log_trace_unit(Bc::Dirichlet, t);
        let (per, _) = log_trace_unit(Bc::Periodic, t);
        let (neu, _) = log_trace_unit(Bc::Neumann, t);
        if !(dir <= per + 1e-12 && per <= neu + 1e-12) {
            return fail(format!(
                "trace ordering violated at t={t}: dir {dir}, per {per}, neu {neu}"
            ));
        }
    }
    Ok("log traces ordered Dirichlet <= periodic <= Neumann".into())
}

fn check_frozen_cycle_weights() -> std::result::Result<String, String> {
    let free = Geometry::new(Bc::Free, 3, 2.0).map_err(|e| e.to_string())?;
    let (lw, _) = log_cycle_weight(&free, 1.0, 1);
    let t1 = lw.exp();
    if (t1 - 0.507949087473927758).abs() > 1e-12 {
        return fail(format!("free t1 = {t1}, expected 0.507949087473927758"));
    }
    let dir = Geometry::new(Bc::Dirichlet, 1, 1.0).map_err(|e| e.to_string())?;
    let (lw, _) = log_cycle_weight(&dir, 1.0, 1);
    let t1 = lw.exp();
    if (t1 - 0.00719188603111436).abs() > 1e-14 {
        return fail(format!("dirichlet t1 = {t1}, expected 0.00719188603111436"));
    }
    Ok("unit-scale cycle weights match pinned values".into())
}

fn check_recursion_vs_enumeration() -> std::result::Result<String, String> {
    let mut detail = String::new();
    for bc in [Bc::Free, Bc::Dirichlet] {
        let geom = Geometry::new(bc, 3, 3.0).map_err(|e| e.to_string())?;
        let traces = TraceTable::build(geom, 1.0, 8).map_err(|e| e.to_string())?;
        let table = PartitionTable::build(&traces, 8).map_err(|e| e.to_string())?;
        let (lz_enum, count) = log_partition_by_enumeration(traces.log_weights(), 8);
        let lz_rec = table.log_z(8).map_err(|e| e.to_string())?;
        if (lz_rec - lz_enum).abs() > 1e-12 {
            return fail(format!(
                "{bc}: recursion log Z {lz_rec} vs enumeration {lz_enum}"
            ));
        }
        detail = format!("N=8 agrees over {count} partitions");
    }
    Ok(detail)
}

fn check_recursion_residual() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 4.0).map_err(|e| e.to_string())?;
    let traces = TraceTable::build(geom, 1.0, 40).map_err(|e| e.to_string())?;
    let table = PartitionTable::build(&traces, 40).map_err(|e| e.to_string())?;
    let res = table.recursion_residual(40).map_err(|e| e.to_string())?;
    if res < 1e-12 {
        Ok(format!("N=40 recursion residual {res:.2e}"))
    } else {
        fail(format!("recursion residual {res:.2e} >= 1e-12"))
    }
}

fn check_critical_density() -> std::result::Result<String, String> {
    let rho_c = critical_density(3, 1.0).map_err(|e| e.to_string())?;
    if (rho_c - 0.165869209313022206).abs() < 1e-12 {
        Ok(format!("rho_c(d=3, beta=1) = {rho_c:.15}"))
    } else {
        fail(format!("rho_c = {rho_c}, expected 0.165869209313022206"))
    }
}

fn check_mu_round_trip() -> std::result::Result<String, String> {
    let rho_c = critical_density(3, 1.0).map_err(|e| e.to_string())?;
    let mu = chemical_potential(0.5 * rho_c, 1.0, 3).map_err(|e| e.to_string())?;
    if (mu + 0.203483783984130070).abs() > 1e-9 {
        return fail(format!("mu = {mu}, expected -0.203483783984130070"));
    }
    let back = density_of_mu(3, 1.0, mu);
    let rel = (back / (0.5 * rho_c) - 1.0).abs();
    if rel < 1e-9 {
        Ok(format!("density round trip off by {rel:.2e}"))
    } else {
        fail(format!("density round trip off by {rel:.2e}"))
    }
}

fn check_pressure_derivative() -> std::result::Result<String, String> {
    let mu = -0.3;
    let h = 1e-5;
    let numeric = (pressure_of_mu(3, 1.0, mu + h) - pressure_of_mu(3, 1.0, mu - h)) / (2.0 * h);
    let rho = density_of_mu(3, 1.0, mu);
    let rel = (numeric / rho - 1.0).abs();
    if rel < 1e-5 {
        Ok(format!("dp/dmu matches the density to {rel:.2e}"))
    } else {
        fail(format!("dp/dmu off by {rel:.2e}"))
    }
}

fn check_flat_free_energy() -> std::result::Result<String, String> {
    let rho_c = critical_density(3, 1.0).map_err(|e| e.to_string())?;
    let f1 = free_energy(1.5 * rho_c, 1.0, 3).map_err(|e| e.to_string())?;
    let f2 = free_energy(3.0 * rho_c, 1.0, 3).map_err(|e| e.to_string())?;
    if (f1 - f2).abs() > 1e-12 {
        return fail(format!("free energy not flat above rho_c: {f1} vs {f2}"));
    }
    if (f2 + 0.0851759035223132).abs() > 1e-10 {
        return fail(format!("f(2 rho_c) = {f2}, expected -0.0851759035223132"));
    }
    Ok("free energy constant above the critical density".into())
}

fn check_partition_identity() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 3.0).map_err(|e| e.to_string())?;
    let traces = TraceTable::build(geom, 1.0, 17).map_err(|e| e.to_string())?;
    let table = PartitionTable::build(&traces, 17).map_err(|e| e.to_string())?;
    let rates: Vec<f64> = (1..=17)
        .map(|k| traces.log_weights()[k - 1].exp() / k as f64)
        .collect();
    let pmf = ppp_total_pmf(&rates, 17);
    let log_z_direct = rates.iter().sum::<f64>() + pmf[17].ln();
    let log_z = table.log_z(17).map_err(|e| e.to_string())?;
    let rel = (log_z_direct - log_z).abs();
    if rel < 1e-8 {
        Ok(format!("log Z_17 via Poisson conditioning off by {rel:.2e}"))
    } else {
        fail(format!("Poisson-conditioning identity off by {rel:.2e}"))
    }
}

fn check_sampler_totals() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 5.0).map_err(|e| e.to_string())?;
    let traces = TraceTable::build(geom, 1.0, 50).map_err(|e| e.to_string())?;
    let table = PartitionTable::build(&traces, 50).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(12, 0);
    for _ in 0..100 {
        let config = sample_conditioned(&table, 50, &mut rng).map_err(|e| e.to_string())?;
        if config.n_total() != 50 {
            return fail(format!("conditioned draw totals {}", config.n_total()));
        }
    }
    let mut a = stream_rng(12, 1);
    let mut b = stream_rng(12, 1);
    let ca = sample_conditioned(&table, 50, &mut a).map_err(|e| e.to_string())?;
    let cb = sample_conditioned(&table, 50, &mut b).map_err(|e| e.to_string())?;
    if ca != cb {
        return fail("same seed produced different configurations".into());
    }
    Ok("100 conditioned draws all total N, reproducibly".into())
}

fn check_long_loop_support() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 4.0).map_err(|e| e.to_string())?;
    let n = 64;
    let traces = TraceTable::build(geom, 1.0, n).map_err(|e| e.to_string())?;
    let thresholds = LoopThresholds::new(n, 4.0, 3).map_err(|e| e.to_string())?;
    let dist = LongLoopDistribution::build(&traces, &thresholds).map_err(|e| e.to_string())?;
    for k in 1..=thresholds.t_n.min(n) {
        if dist.pmf(k) != 0.0 {
            return fail(format!("long-loop pmf has mass at short length {k}"));
        }
    }
    let mass = dist.support_mass();
    if mass > 0.0 && mass <= 1.0 + 1e-12 {
        Ok(format!(
            "support excludes lengths <= {}, total mass {mass:.6}",
            thresholds.t_n
        ))
    } else {
        fail(format!("support mass {mass} outside (0, 1]"))
    }
}

fn check_threshold_formulas() -> std::result::Result<String, String> {
    let th = LoopThresholds::new(4096, 16.0, 3).map_err(|e| e.to_string())?;
    if th.t_n != 739 || th.n_plus != 17_712 {
        return fail(format!(
            "thresholds (T, N+) = ({}, {}), expected (739, 17712)",
            th.t_n, th.n_plus
        ));
    }
    Ok("T_N and N+ match pinned values at N = 4096, L = 16".into())
}

fn check_dickman_closed_forms() -> std::result::Result<String, String> {
    let d = DickmanDensity::build(8.0).map_err(|e| e.to_string())?;
    let p_half = d.eval(0.5).map_err(|e| e.to_string())?;
    let p_two = d.eval(2.0).map_err(|e| e.to_string())?;
    if (p_half - 0.561459483566885170).abs() > 1e-12 {
        return fail(format!("p(1/2) = {p_half}"));
    }
    if (p_two - 0.172285425533856).abs() > 1e-12 {
        return fail(format!("p(2) = {p_two}"));
    }
    Ok("p = e^{-gamma} on [0,1] and p(2) = e^{-gamma}(1 - ln 2)".into())
}

fn check_dickman_laplace() -> std::result::Result<String, String> {
    let d = DickmanDensity::build(12.0).map_err(|e| e.to_string())?;
    let reference = dickman_laplace_reference(1.0);
    if (reference - 0.450859463323219986).abs() > 1e-10 {
        return fail(format!("closed-form transform at s=1: {reference}"));
    }
    let table = d.laplace_transform(1.0);
    let diff = (table - reference).abs();
    if diff < 1e-5 {
        Ok(format!("table and closed form agree to {diff:.2e} at s=1"))
    } else {
        fail(format!("Laplace transform off by {diff:.2e} at s=1"))
    }
}

fn check_largest_atom_cdf() -> std::result::Result<String, String> {
    let d = DickmanDensity::build(8.0).map_err(|e| e.to_string())?;
    for x in [0.5, 0.6, 0.8, 0.95] {
        let f = pd1_largest_cdf(&d, x).map_err(|e| e.to_string())?;
        if (f - (1.0 + x.ln())).abs() > 1e-12 {
            return fail(format!("F1({x}) = {f}, expected {}", 1.0 + x.ln()));
        }
    }
    Ok("F1(x) = 1 + ln x on [1/2, 1]".into())
}

fn check_marginal_consistency() -> std::result::Result<String, String> {
    let d = DickmanDensity::build(14.0).map_err(|e| e.to_string())?;
    let x1 = 0.6;
    let upper = 1.0 - x1;
    let lo = upper / 15.0;
    let (nodes, weights) = gauss_legendre(32);
    let mut cuts = vec![lo];
    for m in 1..=14 {
        let c = upper / (m as f64 + 1.0);
        if c > lo && c < upper {
            cuts.push(c);
        }
    }
    cuts.push(upper);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut integral = 0.0;
    for seg in cuts.windows(2) {
        let (xs, ws) = rescale_quadrature(&nodes, &weights, seg[0], seg[1]);
        for (&x2, &w) in xs.iter().zip(&ws) {
            integral += w * pd_marginal_density(&d, &[x1, x2]).map_err(|e| e.to_string())?;
        }
    }
    let f1 = pd_marginal_density(&d, &[x1]).map_err(|e| e.to_string())?;
    let rel = (integral / f1 - 1.0).abs();
    if rel < 1e-3 {
        Ok(format!("two-atom marginal integrates down to f1 within {rel:.2e}"))
    } else {
        fail(format!("marginal consistency off by {rel:.2e}"))
    }
}

fn check_pareto_mean() -> std::result::Result<String, String> {
    let model = ParetoWalkModel::new(3).map_err(|e| e.to_string())?;
    let a = model.mean();
    if (a - 1.94737246631695670).abs() < 1e-12 {
        Ok(format!("step mean a = {a:.15}"))
    } else {
        fail(format!("step mean {a}, expected 1.94737246631695670"))
    }
}

fn check_two_step_convolution() -> std::result::Result<String, String> {
    let model = ParetoWalkModel::new(3).map_err(|e| e.to_string())?;
    let report = pareto_lclt_check(&model, 2, &[3], 0.2).map_err(|e| e.to_string())?;
    let row = report.rows[0];
    let oracle = two_step_pmf_by_enumeration(&model, row.value as usize);
    let diff = (row.exact_pmf - oracle).abs();
    if diff < 1e-12 {
        Ok(format!("two-step pmf matches enumeration to {diff:.2e}"))
    } else {
        fail(format!("two-step pmf off by {diff:.2e}"))
    }
}

fn check_single_particle_kernel() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 4.0).map_err(|e| e.to_string())?;
    let traces = TraceTable::build(geom, 1.0, 1).map_err(|e| e.to_string())?;
    let table = PartitionTable::build(&traces, 1).map_err(|e| e.to_string())?;
    let kernel = crate::rdm::RdmKernel::new(&table, 1).map_err(|e| e.to_string())?;
    let x = [0.1, -0.3, 0.2];
    let y = [0.0, 0.25, -0.4];
    let t1 = traces.log_weights()[0].exp();
    let expected = kernel_box(&geom, 1.0, &x, &y).map_err(|e| e.to_string())? / t1;
    let got = kernel.eval(&x, &y).map_err(|e| e.to_string())?;
    let rel = (got / expected - 1.0).abs();
    if rel < 1e-13 {
        Ok(format!("gamma_1 = g_beta/t_1 to {rel:.2e}"))
    } else {
        fail(format!("gamma_1 off by {rel:.2e}"))
    }
}

fn check_trace_quadrature() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 4.0).map_err(|e| e.to_string())?;
    let traces = TraceTable::build(geom, 1.0, 10).map_err(|e| e.to_string())?;
    let table = PartitionTable::build(&traces, 10).map_err(|e| e.to_string())?;
    let kernel = crate::rdm::RdmKernel::new(&table, 10).map_err(|e| e.to_string())?;
    let trace = kernel.trace_by_quadrature(64).map_err(|e| e.to_string())?;
    let err = (trace - 10.0).abs();
    if err < 1e-5 {
        Ok(format!("integrated diagonal = {trace:.10} for N = 10"))
    } else {
        fail(format!("integrated diagonal {trace} misses N = 10 by {err:.2e}"))
    }
}

fn check_grid_vs_modal() -> std::result::Result<String, String> {
    let geom = Geometry::new(Bc::Periodic, 3, 5.78).map_err(|e| e.to_string())?;
    let traces = TraceTable::build(geom, 1.0, 64).map_err(|e| e.to_string())?;
    let table = PartitionTable::build(&traces, 64).map_err(|e| e.to_string())?;
    let kernel = crate::rdm::RdmKernel::new(&table, 64).map_err(|e| e.to_string())?;
    let modal = kernel.modal_sigma().map_err(|e| e.to_string())?;
    let est = kernel.principal_eigenvalue(8).map_err(|e| e.to_string())?;
    let rel = (est.sigma / modal - 1.0).abs();
    if est.converged && rel < 0.01 && est.rayleigh_lower_bound <= est.sigma * (1.0 + 1e-3) {
        Ok(format!("grid sigma within {rel:.2e} of the eigenbasis route"))
    } else {
        fail(format!(
            "grid sigma {} vs modal {modal} (rel {rel:.2e}, converged {})",
            est.sigma, est.converged
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for result in run_all() {
            assert!(
                result.passed,
                "[{}] {} failed: {}",
                result.suite, result.name, result.detail
            );
        }
    }

    #[test]
    fn unknown_suite_is_rejected() {
        let err = run_suite("nonsense").unwrap_err();
        assert!(err.to_string().contains("unknown selftest suite"));
    }

    #[test]
    fn named_suite_runs_only_its_checks() {
        let results = run_suite("spectral").unwrap();
        assert!(results.iter().all(|r| r.suite == "spectral"));
        assert_eq!(results.len(), 5);
    }
}
