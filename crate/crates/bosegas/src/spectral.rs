//! Heat kernels and traces for Brownian motion (generator ½Δ) on the unit
//! interval [-½, ½] under Dirichlet, Neumann, periodic, and free boundary
//! conditions, together with their d-dimensional box rescalings and the cycle
//! weights t_k = Tr e^{βk·½Δ} that drive the partition recursion.
//!
//! Each kernel has two convergent representations: a method-of-images sum
//! (fast for small time) and an eigenfunction series (fast for large time).
//! They are switched at `T_SPLIT`, where both are accurate to machine
//! precision; tests pin the two representations against each other at the
//! seam.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::{Bc, Geometry};
use crate::numerics::{gauss_legendre, rescale_quadrature};

/// Representation switch: images below, eigenfunction series at or above.
pub const T_SPLIT: f64 = 0.1;

const PI: f64 = std::f64::consts::PI;
const IMAGE_RANGE: i64 = 5;
const MAX_MODES: usize = 64;

/// Whole-line Gaussian kernel (2πt)^{-1/2} e^{-z²/(2t)}.
#[inline]
pub fn gaussian_kernel(t: f64, z: f64) -> f64 {
    (2.0 * PI * t).sqrt().recip() * (-z * z / (2.0 * t)).exp()
}

fn kernel_images(bc: Bc, t: f64, x: f64, y: f64) -> f64 {
    match bc {
        Bc::Free => gaussian_kernel(t, x - y),
        Bc::Periodic => (-IMAGE_RANGE..=IMAGE_RANGE)
            .map(|m| gaussian_kernel(t, x - y + m as f64))
            .sum(),
        Bc::Dirichlet | Bc::Neumann => {
            let sign = if bc == Bc::Dirichlet { -1.0 } else { 1.0 };
            (-IMAGE_RANGE..=IMAGE_RANGE)
                .map(|m| {
                    let shift = 2.0 * m as f64;
                    gaussian_kernel(t, x - y + shift)
                        + sign * gaussian_kernel(t, x + y + 1.0 + shift)
                })
                .sum()
        }
    }
}

fn kernel_spectral(bc: Bc, t: f64, x: f64, y: f64) -> f64 {
    match bc {
        Bc::Free => gaussian_kernel(t, x - y),
        Bc::Dirichlet => {
            let mut sum = 0.0;
            for n in 1..=MAX_MODES {
                let nf = n as f64;
                let decay = (-PI * PI * nf * nf * t / 2.0).exp();
                if decay < 1e-18 {
                    break;
                }
                sum += decay
                    * 2.0
                    * (nf * PI * (x + 0.5)).sin()
                    * (nf * PI * (y + 0.5)).sin();
            }
            sum
        }
        Bc::Neumann => {
            let mut sum = 1.0;
            for n in 1..=MAX_MODES {
                let nf = n as f64;
                let decay = (-PI * PI * nf * nf * t / 2.0).exp();
                if decay < 1e-18 {
                    break;
                }
                sum += decay
                    * 2.0
                    * (nf * PI * (x + 0.5)).cos()
                    * (nf * PI * (y + 0.5)).cos();
            }
            sum
        }
        Bc::Periodic => {
            let mut sum = 1.0;
            for n in 1..=MAX_MODES {
                let nf = n as f64;
                let decay = (-2.0 * PI * PI * nf * nf * t).exp();
                if decay < 1e-18 {
                    break;
                }
                sum += decay * 2.0 * (2.0 * PI * nf * (x - y)).cos();
            }
            sum
        }
    }
}

/// Heat kernel g_t(x, y) on the unit interval [-½, ½].
///
/// For `Free` this is the whole-line Gaussian; the box only enters through
/// where the kernel is evaluated.
pub fn kernel_1d_unit(bc: Bc, t: f64, x: f64, y: f64) -> f64 {
    assert!(t > 0.0, "kernel time must be positive");
    if t < T_SPLIT {
        kernel_images(bc, t, x, y)
    } else {
        kernel_spectral(bc, t, x, y)
    }
}

/// Heat kernel on the box [-L/2, L/2]^d: the product over axes of the
/// rescaled unit-interval kernel L^{-1} g_{t/L²}(x_i/L, y_i/L). Both points
/// must lie in the box.
pub fn kernel_box(geom: &Geometry, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    geom.check_point(x)?;
    geom.check_point(y)?;
    if geom.bc == Bc::Free {
        let mut v = 1.0;
        for (xi, yi) in x.iter().zip(y) {
            v *= gaussian_kernel(t, xi - yi);
        }
        return Ok(v);
    }
    let l = geom.l;
    let tu = t / (l * l);
    let mut v = 1.0;
    for (xi, yi) in x.iter().zip(y) {
        v *= kernel_1d_unit(geom.bc, tu, xi / l, yi / l) / l;
    }
    Ok(v)
}

/// Log of the unit-interval trace Σ_n e^{-λ_n t} together with a relative
/// truncation-error bound. Computed in log space so that very long cycles
/// under Dirichlet conditions do not underflow.
pub fn log_trace_unit(bc: Bc, t: f64) -> (f64, f64) {
    assert!(t > 0.0, "trace time must be positive");
    assert!(bc != Bc::Free, "free motion has no unit-interval trace; use the box volume factor");
    if t < T_SPLIT {
        let pref = (2.0 * PI * t).sqrt().recip();
        let (value, omitted) = match bc {
            Bc::Dirichlet | Bc::Neumann => {
                let theta: f64 = (1..=IMAGE_RANGE)
                    .map(|m| (-2.0 * (m * m) as f64 / t).exp())
                    .sum();
                let base = pref * (1.0 + 2.0 * theta) - 0.5;
                let v = if bc == Bc::Neumann { base + 1.0 } else { base };
                let tail = 4.0 * pref * (-2.0 * ((IMAGE_RANGE + 1) * (IMAGE_RANGE + 1)) as f64 / t).exp();
                (v, tail)
            }
            Bc::Periodic => {
                let theta: f64 = (1..=IMAGE_RANGE)
                    .map(|m| (-(m * m) as f64 / (2.0 * t)).exp())
                    .sum();
                let v = pref * (1.0 + 2.0 * theta);
                let tail = 4.0 * pref * (-((IMAGE_RANGE + 1) * (IMAGE_RANGE + 1)) as f64 / (2.0 * t)).exp();
                (v, tail)
            }
            Bc::Free => unreachable!(),
        };
        (value.ln(), tail_rel(omitted, value))
    } else {
        // Factor out the slowest mode and sum the rest relative to it.
        let (lead, rest, omitted): (f64, f64, f64) = match bc {
            Bc::Dirichlet => {
                let lead = -PI * PI * t / 2.0;
                let mut rest = 1.0;
                let mut n = 2usize;
                while n <= MAX_MODES {
                    let term = (-PI * PI * ((n * n - 1) as f64) * t / 2.0).exp();
                    rest += term;
                    if term < 1e-20 {
                        break;
                    }
                    n += 1;
                }
                let omitted = (-PI * PI * (((n + 1) * (n + 1) - 1) as f64) * t / 2.0).exp();
                (lead, rest, omitted)
            }
            Bc::Neumann => {
                let mut rest = 1.0;
                let mut n = 1usize;
                while n <= MAX_MODES {
                    let term = (-PI * PI * ((n * n) as f64) * t / 2.0).exp();
                    rest += term;
                    if term < 1e-20 {
                        break;
                    }
                    n += 1;
                }
                let omitted = (-PI * PI * (((n + 1) * (n + 1)) as f64) * t / 2.0).exp();
                (0.0, rest, omitted)
            }
            Bc::Periodic => {
                let mut rest = 1.0;
                let mut n = 1usize;
                while n <= MAX_MODES {
                    let term = 2.0 * (-2.0 * PI * PI * ((n * n) as f64) * t).exp();
                    rest += term;
                    if term < 1e-20 {
                        break;
                    }
                    n += 1;
                }
                let omitted = 2.0 * (-2.0 * PI * PI * (((n + 1) * (n + 1)) as f64) * t).exp();
                (0.0, rest, omitted)
            }
            Bc::Free => unreachable!(),
        };
        (lead + rest.ln(), tail_rel(2.0 * omitted, rest))
    }
}

fn tail_rel(omitted: f64, value: f64) -> f64 {
    if value > 0.0 {
        (omitted / value).max(1e-18)
    } else {
        1e-18
    }
}

/// log t_k for a k-step cycle: the box trace of e^{βk·½Δ} under box boundary
/// conditions, or the Gaussian normalization volume |Λ|(2πβk)^{-d/2} for free
/// motion. Returns the log weight and a relative error bound.
pub fn log_cycle_weight(geom: &Geometry, beta: f64, k: u64) -> (f64, f64) {
    assert!(beta > 0.0 && k >= 1);
    let d = geom.d as f64;
    if geom.bc == Bc::Free {
        let log_t = d * (geom.l.ln() - 0.5 * (2.0 * PI * beta * k as f64).ln());
        return (log_t, 0.0);
    }
    let tu = beta * k as f64 / (geom.l * geom.l);
    let (log_tau, rel) = log_trace_unit(geom.bc, tu);
    (d * log_tau, d * rel)
}

/// Precomputed log cycle weights log t_k, k = 1..=n_max, for one geometry and
/// inverse temperature, with per-entry truncation-error bounds. Serializable
/// to a plain-text table that round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    geom: Geometry,
    beta: f64,
    log_weights: Vec<f64>,
    err_bounds: Vec<f64>,
}

impl TraceTable {
    pub fn build(geom: Geometry, beta: f64, n_max: usize) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be positive, got {beta}"
            )));
        }
        if n_max == 0 {
            return Err(Error::InvalidArgument(
                "trace table needs at least one cycle length".into(),
            ));
        }
        let mut log_weights = Vec::with_capacity(n_max);
        let mut err_bounds = Vec::with_capacity(n_max);
        for k in 1..=n_max {
            let (lw, err) = log_cycle_weight(&geom, beta, k as u64);
            log_weights.push(lw);
            err_bounds.push(err);
        }
        Ok(TraceTable {
            geom,
            beta,
            log_weights,
            err_bounds,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_max(&self) -> usize {
        self.log_weights.len()
    }

    /// log t_k, 1-based.
    pub fn log_weight(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.log_weights.len() {
            return Err(Error::TableRange {
                table: "trace table",
                max: self.log_weights.len(),
                requested: k,
            });
        }
        Ok(self.log_weights[k - 1])
    }

    /// Relative truncation-error bound for t_k, 1-based.
    pub fn err_bound(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.err_bounds.len() {
            return Err(Error::TableRange {
                table: "trace table",
                max: self.err_bounds.len(),
                requested: k,
            });
        }
        Ok(self.err_bounds[k - 1])
    }

    /// All log weights as a slice (index k-1).
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# d L bc beta N_max")?;
        writeln!(
            w,
            "{} {} {} {} {}",
            self.geom.d,
            self.geom.l,
            self.geom.bc,
            self.beta,
            self.n_max()
        )?;
        writeln!(w, "# k log_t err")?;
        for (i, (lw, err)) in self.log_weights.iter().zip(&self.err_bounds).enumerate() {
            writeln!(w, "{} {:e} {:e}", i + 1, lw, err)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut header: Option<(Geometry, f64, usize)> = None;
        let mut log_weights = Vec::new();
        let mut err_bounds = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if header.is_none() {
                if fields.len() != 5 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!(
                            "expected 5 header fields (d L bc beta N_max), got {}",
                            fields.len()
                        ),
                    });
                }
                let d: u32 = parse_field(fields[0], line_no, "d")?;
                let l: f64 = parse_field(fields[1], line_no, "L")?;
                let bc: Bc = fields[2].parse().map_err(|e: Error| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                let beta: f64 = parse_field(fields[3], line_no, "beta")?;
                let n_max: usize = parse_field(fields[4], line_no, "N_max")?;
                let geom = Geometry::new(bc, d, l).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                header = Some((geom, beta, n_max));
                continue;
            }
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 3 row fields (k log_t err), got {}", fields.len()),
                });
            }
            let k: usize = parse_field(fields[0], line_no, "k")?;
            if k != log_weights.len() + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("rows out of order: expected k = {}, got {k}", log_weights.len() + 1),
                });
            }
            log_weights.push(parse_field(fields[1], line_no, "log_t")?);
            err_bounds.push(parse_field(fields[2], line_no, "err")?);
        }
        let (geom, beta, n_max) = header.ok_or(Error::Parse {
            line: 0,
            message: "missing header line".into(),
        })?;
        if log_weights.len() != n_max {
            return Err(Error::Parse {
                line: 0,
                message: format!("header promises {n_max} rows, found {}", log_weights.len()),
            });
        }
        Ok(TraceTable {
            geom,
            beta,
            log_weights,
            err_bounds,
        })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {name} from {s:?}"),
    })
}

/// Checks symmetry, positivity, and mass conservation of the unit-interval
/// kernel at one time on an evaluation grid. Dirichlet mass must stay below
/// one (killing), Neumann and periodic mass must equal one.
pub fn verify_kernel_bounds(bc: Bc, t: f64, grid: usize) -> Result<()> {
    let (nodes, weights) = gauss_legendre(48);
    let (ys, wy) = rescale_quadrature(&nodes, &weights, -0.5, 0.5);
    for i in 0..grid {
        let x = -0.5 + (i as f64 + 0.5) / grid as f64;
        let mut mass = 0.0;
        for (&y, &w) in ys.iter().zip(&wy) {
            let g = kernel_1d_unit(bc, t, x, y);
            let g_rev = kernel_1d_unit(bc, t, y, x);
            if g < -1e-12 {
                return Err(Error::Config(format!(
                    "kernel negative: {bc} t={t} x={x} y={y} g={g}"
                )));
            }
            if (g - g_rev).abs() > 1e-10 * (1.0 + g.abs()) {
                return Err(Error::Config(format!(
                    "kernel asymmetric: {bc} t={t} x={x} y={y}: {g} vs {g_rev}"
                )));
            }
            mass += w * g;
        }
        let ok = match bc {
            Bc::Dirichlet => mass <= 1.0 + 1e-9,
            Bc::Neumann | Bc::Periodic => (mass - 1.0).abs() < 1e-9,
            Bc::Free => mass <= 1.0 + 1e-9,
        };
        if !ok {
            return Err(Error::Config(format!(
                "kernel mass violation: {bc} t={t} x={x} mass={mass}"
            )));
        }
    }
    Ok(())
}

/// |∫ g_t(x,z) g_s(z,y) dz − g_{t+s}(x,y)| with the intermediate integral
/// over the unit interval. Near zero for box conditions; strictly positive
/// for the free kernel because Gaussian mass escapes the interval, which the
/// self-test suite uses as a negative control.
pub fn semigroup_residual(bc: Bc, t: f64, s: f64, x: f64, y: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(48);
    let (zs, wz) = rescale_quadrature(&nodes, &weights, -0.5, 0.5);
    let composed: f64 = zs
        .iter()
        .zip(&wz)
        .map(|(&z, &w)| w * kernel_1d_unit(bc, t, x, z) * kernel_1d_unit(bc, s, z, y))
        .sum();
    (composed - kernel_1d_unit(bc, t + s, x, y)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn representations_agree_at_the_seam() {
        for bc in [Bc::Dirichlet, Bc::Neumann, Bc::Periodic, Bc::Free] {
            for &(x, y) in &[(0.0, 0.0), (0.3, -0.2), (-0.45, 0.45), (0.5, 0.1)] {
                let a = kernel_images(bc, T_SPLIT, x, y);
                let b = kernel_spectral(bc, T_SPLIT, x, y);
                close(a, b, 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn dirichlet_kernel_vanishes_on_the_wall() {
        for t in [0.02, 0.5] {
            close(kernel_1d_unit(Bc::Dirichlet, t, 0.5, 0.1), 0.0, 1e-13);
            close(kernel_1d_unit(Bc::Dirichlet, t, -0.5, -0.3), 0.0, 1e-13);
        }
    }

    #[test]
    fn short_time_kernels_approach_the_gaussian() {
        let t = 0.005;
        for bc in [Bc::Dirichlet, Bc::Neumann, Bc::Periodic] {
            let g = kernel_1d_unit(bc, t, 0.1, 0.12);
            close(g, gaussian_kernel(t, -0.02), 1e-10);
        }
    }

    #[test]
    fn closed_form_traces_match_kernel_diagonal_integral() {
        let (nodes, weights) = gauss_legendre(64);
        let (xs, wx) = rescale_quadrature(&nodes, &weights, -0.5, 0.5);
        for bc in [Bc::Dirichlet, Bc::Neumann, Bc::Periodic] {
            for t in [0.03, 0.1, 0.7] {
                let quad: f64 = xs
                    .iter()
                    .zip(&wx)
                    .map(|(&x, &w)| w * kernel_1d_unit(bc, t, x, x))
                    .sum();
                let (log_tau, _) = log_trace_unit(bc, t);
                close(quad, log_tau.exp(), 1e-10 * (1.0 + quad));
            }
        }
    }

    #[test]
    fn neumann_trace_exceeds_dirichlet_by_one() {
        for t in [0.01, 0.1, 1.0, 5.0] {
            let (ld, _) = log_trace_unit(Bc::Dirichlet, t);
            let (ln_, _) = log_trace_unit(Bc::Neumann, t);
            close(ln_.exp(), ld.exp() + 1.0, 1e-12 * (1.0 + ln_.exp()));
        }
    }

    #[test]
    fn long_time_trace_does_not_underflow() {
        let (log_tau, _) = log_trace_unit(Bc::Dirichlet, 400.0);
        close(log_tau, -PI * PI * 400.0 / 2.0, 1e-9);
        let (log_tau, _) = log_trace_unit(Bc::Periodic, 400.0);
        close(log_tau, 0.0, 1e-12);
    }

    #[test]
    fn cycle_weights_match_reference_values() {
        let g = Geometry::new(Bc::Free, 3, 2.0).unwrap();
        let (lw, _) = log_cycle_weight(&g, 1.0, 1);
        close(lw.exp(), 0.507949087473927758, 1e-15);
        let (lw, _) = log_cycle_weight(&g, 1.0, 2);
        close(lw.exp(), 0.179587122125166562, 1e-15);
        let (lw, _) = log_cycle_weight(&g, 1.0, 3);
        close(lw.exp(), 0.0977548474625656519, 1e-15);

        let g = Geometry::new(Bc::Dirichlet, 1, 1.0).unwrap();
        let (lw, _) = log_cycle_weight(&g, 1.0, 1);
        close(lw.exp(), 0.00719188603111436, 1e-14);

        let g = Geometry::new(Bc::Periodic, 1, 1.0).unwrap();
        let (lw, _) = log_cycle_weight(&g, 1.0, 1);
        close(lw.exp(), 1.00000000535057598, 1e-13);
    }

    #[test]
    fn box_kernel_diagonal_integral_gives_box_trace() {
        let geom = Geometry::new(Bc::Neumann, 2, 2.0).unwrap();
        let t = 0.8;
        let (nodes, weights) = gauss_legendre(48);
        let (xs, wx) = rescale_quadrature(&nodes, &weights, -1.0, 1.0);
        let mut quad = 0.0;
        for (&x0, &w0) in xs.iter().zip(&wx) {
            for (&x1, &w1) in xs.iter().zip(&wx) {
                quad += w0 * w1 * kernel_box(&geom, t, &[x0, x1], &[x0, x1]).unwrap();
            }
        }
        let (log_tau, _) = log_trace_unit(Bc::Neumann, t / 4.0);
        close(quad, (2.0 * log_tau).exp(), 1e-9 * quad);
    }

    #[test]
    fn box_kernel_rejects_outside_points() {
        let geom = Geometry::new(Bc::Dirichlet, 1, 2.0).unwrap();
        assert!(kernel_box(&geom, 1.0, &[1.5], &[0.0]).is_err());
    }

    #[test]
    fn kernel_bounds_hold_on_a_grid() {
        for bc in [Bc::Dirichlet, Bc::Neumann, Bc::Periodic] {
            for t in [0.05, 0.5] {
                verify_kernel_bounds(bc, t, 9).unwrap();
            }
        }
    }

    #[test]
    fn semigroup_identity_holds_for_box_conditions() {
        for bc in [Bc::Dirichlet, Bc::Neumann, Bc::Periodic] {
            assert!(semigroup_residual(bc, 0.3, 0.4, 0.2, -0.1) < 1e-10);
            assert!(semigroup_residual(bc, 0.05, 0.06, 0.0, 0.3) < 1e-10);
        }
    }

    #[test]
    fn semigroup_fails_for_free_kernel_restricted_to_the_box() {
        // Negative control: Gaussian mass leaves the interval, so composing
        // free kernels with a box-restricted intermediate integral must not
        // reproduce the free kernel at the summed time.
        let residual = semigroup_residual(Bc::Free, 0.5, 0.5, 0.0, 0.0);
        let direct = gaussian_kernel(1.0, 0.0);
        assert!(
            residual > 0.1 * direct,
            "free-kernel composition residual too small: {residual}"
        );
    }

    #[test]
    fn trace_table_round_trips_exactly() {
        let geom = Geometry::new(Bc::Dirichlet, 3, 2.5).unwrap();
        let table = TraceTable::build(geom, 0.75, 64).unwrap();
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        let parsed = TraceTable::read_from(&buf[..]).unwrap();
        assert_eq!(table, parsed);
    }

    #[test]
    fn trace_table_range_errors() {
        let geom = Geometry::new(Bc::Periodic, 1, 1.0).unwrap();
        let table = TraceTable::build(geom, 1.0, 8).unwrap();
        assert!(table.log_weight(0).is_err());
        assert!(table.log_weight(9).is_err());
        assert!(table.log_weight(8).is_ok());
    }

    #[test]
    fn trace_table_parse_errors_carry_line_numbers() {
        let text = "# d L bc beta N_max\n3 2.0 robin 1.0 4\n";
        let err = TraceTable::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "# header\n1 1.0 periodic 1.0 2\n1 -0.5\n";
        let err = TraceTable::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("3 row fields"), "{err}");
    }
}
