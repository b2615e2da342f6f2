//! Scalar numerics shared across the engine: stable log-space reductions,
//! Riemann zeta via Euler–Maclaurin, polylogarithms near the critical point,
//! the exponential integral, Gauss–Legendre quadrature, and small fitting
//! helpers.

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(Σ exp(x_i)) with the shift-by-max trick. Empty input gives -inf.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values
        .iter()
        .map(|&x| (x - max).exp())
        .sum::<f64>()
        .ln()
}

/// Exact factorial as f64, n ≤ 20.
pub fn factorial(n: usize) -> f64 {
    assert!(n <= 20, "factorial table covers n <= 20");
    let mut acc: u64 = 1;
    for i in 2..=n as u64 {
        acc *= i;
    }
    acc as f64
}

const BERNOULLI_2J: [f64; 12] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
];

/// Riemann zeta for s > -23, s ≠ 1: Euler–Maclaurin (31 direct terms plus a
/// 12-term tail correction) for s ≥ -1/2, and the reflection
/// ζ(s) = 2^s π^{s-1} sin(πs/2) Γ(1-s) ζ(1-s) below, where direct
/// Euler–Maclaurin would lose all precision to cancellation.
pub fn zeta(s: f64) -> f64 {
    assert!(
        (s - 1.0).abs() > 1e-9,
        "zeta pole at s = 1 (requested s = {s})"
    );
    assert!(s > -23.0, "zeta implemented for s > -23");
    if s < -0.5 {
        let pi = std::f64::consts::PI;
        return 2.0f64.powf(s)
            * pi.powf(s - 1.0)
            * (0.5 * pi * s).sin()
            * gamma_fn(1.0 - s)
            * zeta(1.0 - s);
    }
    const K: f64 = 32.0;
    let mut sum = 0.0;
    for k in 1..32 {
        sum += (k as f64).powf(-s);
    }
    sum += K.powf(1.0 - s) / (s - 1.0) + 0.5 * K.powf(-s);
    let mut rising = s;
    let mut fact = 1.0;
    for (j, b) in BERNOULLI_2J.iter().enumerate() {
        let two_j = 2.0 * (j as f64 + 1.0);
        fact *= (two_j - 1.0) * two_j;
        sum += b / fact * rising * K.powf(-s - two_j + 1.0);
        rising *= (s + two_j - 1.0) * (s + two_j);
    }
    sum
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Gamma function for x > 0 (Lanczos, g = 7).
pub fn gamma_fn(x: f64) -> f64 {
    assert!(x > 0.0, "gamma_fn requires a positive argument");
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x));
    }
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * a
}

/// Polylogarithm at an exponential argument: Li_s(e^w) = Σ_{k≥1} e^{wk} k^{-s},
/// for w ≤ 0 and s ≥ ½ (w < 0 required when s ≤ 1, where Li_s(1) diverges).
///
/// Direct summation converges too slowly as w → 0⁻ (the regime that decides
/// the chemical potential near the critical density), so for -0.5 < w < 0 the
/// expansion around the branch point is used instead:
/// Li_s(e^w) = Γ(1-s)(-w)^{s-1} + Σ_j ζ(s-j) w^j / j!, with the standard
/// logarithmic replacement of the j = s-1 term when s is a positive integer.
pub fn polylog_exp(s: f64, w: f64) -> f64 {
    assert!(w <= 0.0, "polylog_exp requires w <= 0 (got {w})");
    assert!(s >= 0.5, "polylog_exp requires s >= 1/2 (got {s})");
    assert!(
        s > 1.0 || w < 0.0,
        "Li_s(1) diverges for s <= 1; need w < 0"
    );
    if (s - 1.0).abs() < 1e-12 {
        return -(-w.exp_m1()).ln();
    }
    if w == 0.0 {
        return zeta(s);
    }
    if w <= -0.5 {
        let mut sum = 0.0;
        for k in 1..400u32 {
            let term = (w * f64::from(k)).exp() * f64::from(k).powf(-s);
            sum += term;
            if term < 1e-19 * sum {
                break;
            }
        }
        return sum;
    }
    let is_integer = (s - s.round()).abs() < 1e-12;
    let mut sum = if is_integer {
        let n = s.round() as usize;
        let h: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
        w.powi(n as i32 - 1) / factorial(n - 1) * (h - (-w).ln())
    } else {
        let gamma_1ms = std::f64::consts::PI / ((std::f64::consts::PI * s).sin() * gamma_fn(s));
        gamma_1ms * (-w).powf(s - 1.0)
    };
    let mut wj = 1.0;
    for j in 0..=20usize {
        let sj = s - j as f64;
        if !(is_integer && (sj - 1.0).abs() < 0.5) {
            sum += zeta(sj) * wj / factorial(j);
        }
        wj *= w;
    }
    sum
}

/// Exponential integral E₁(x) = ∫_x^∞ e^{-t}/t dt for x > 0.
/// Power series below 1, modified-Lentz continued fraction above.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 requires x > 0");
    const EULER_GAMMA: f64 = 0.5772156649015328606;
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            term *= -x / kf;
            sum -= term / kf;
            if term.abs() < 1e-18 {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        let tiny = 1e-300;
        let mut f = tiny;
        let mut c = f;
        let mut d = 0.0;
        let mut b = x + 1.0;
        for i in 1..200 {
            let a = if i == 1 {
                1.0
            } else {
                -((i - 1) as f64) * ((i - 1) as f64)
            };
            d = b + a * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
            b += 2.0;
        }
        // The CF above evaluates 1/(x+1- 1/(x+3- 4/(x+5- ...))) with a_i = -i².
        (-x).exp() * f
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Rescale Gauss–Legendre nodes/weights from [-1, 1] to [a, b].
pub fn rescale_quadrature(nodes: &[f64], weights: &[f64], a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let c = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    (
        nodes.iter().map(|&x| m + c * x).collect(),
        weights.iter().map(|&w| c * w).collect(),
    )
}

/// Result of a two-parameter least-squares line fit.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares y ≈ slope·x + intercept with the coefficient of
/// determination.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points to fit a line");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let e = y - slope * x - intercept;
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|&y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Bisection for a root of f on [lo, hi]; runs the full iteration budget and
/// returns the midpoint. The caller guarantees a sign change (or monotone f
/// crossing zero); no derivative is needed.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iterations: usize) -> f64 {
    let flo = f(lo);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm >= 0.0) == (flo >= 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// q-th percentile (0 ≤ q ≤ 1) of an unsorted slice, linear interpolation.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        let frac = pos - i as f64;
        v[i] * (1.0 - frac) + v[i + 1] * frac
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn logsumexp_matches_direct() {
        let xs = [-1.0, -2.0, -3.0];
        let direct = ((-1.0f64).exp() + (-2.0f64).exp() + (-3.0f64).exp()).ln();
        close(logsumexp(&xs), direct, 1e-15);
        close(log_add(-1.0, -2.0), ((-1.0f64).exp() + (-2.0f64).exp()).ln(), 1e-15);
    }

    #[test]
    fn logsumexp_survives_large_shifts() {
        let xs = [1000.0, 1000.0];
        close(logsumexp(&xs), 1000.0 + 2.0f64.ln(), 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn zeta_reference_values() {
        close(zeta(1.5), 2.61237534868548834, 1e-13);
        close(zeta(2.5), 1.34148725725091718, 1e-13);
        close(zeta(3.5), 1.12673386731705665, 1e-13);
        close(zeta(2.0), std::f64::consts::PI.powi(2) / 6.0, 1e-13);
        close(zeta(3.0), 1.20205690315959429, 1e-13);
        close(zeta(4.0), 1.08232323371113819, 1e-13);
        close(zeta(0.5), -1.46035450880958681, 1e-12);
        close(zeta(-0.5), -0.207886224977354566, 1e-12);
        close(zeta(-1.5), -0.0254852018898330359, 1e-12);
        close(zeta(-18.5), 10.6873270690219936, 1e-8);
    }

    #[test]
    fn gamma_reference_values() {
        close(gamma_fn(0.5), std::f64::consts::PI.sqrt(), 1e-13);
        close(gamma_fn(1.0), 1.0, 1e-13);
        close(gamma_fn(5.0), 24.0, 1e-11);
        close(gamma_fn(2.5), 1.32934038817913702, 1e-13);
    }

    #[test]
    fn polylog_reference_values() {
        close(polylog_exp(1.5, -0.5), 0.810490452326729173, 1e-13);
        close(polylog_exp(1.5, -0.01), 2.27247773353231080, 1e-12);
        close(polylog_exp(2.5, -0.01), 1.31765379247690741, 1e-12);
        close(polylog_exp(1.5, -1e-6), 2.60883190133808218, 1e-11);
        close(polylog_exp(2.5, -0.3), 0.881310601175121423, 1e-13);
        close(polylog_exp(1.5, 0.0), zeta(1.5), 0.0);
    }

    #[test]
    fn polylog_integer_orders() {
        close(polylog_exp(2.0, -0.01), 1.58885737887722747, 1e-12);
        close(polylog_exp(2.0, -0.7), 0.577513887834417247, 1e-13);
        close(polylog_exp(3.0, -0.01), 1.18591290429902255, 1e-12);
        close(polylog_exp(2.0, -0.3), 0.961617056972413847, 1e-13);
    }

    #[test]
    fn polylog_low_orders() {
        // Li_1(e^w) = -ln(1 - e^w) in closed form.
        close(
            polylog_exp(1.0, -0.3),
            -(-(-0.3f64).exp_m1()).ln(),
            1e-15,
        );
        // Li_{1/2} via the branch-point expansion against direct summation.
        let direct: f64 = (1..4000u32)
            .map(|k| (-0.05 * f64::from(k)).exp() / f64::from(k).sqrt())
            .sum();
        close(polylog_exp(0.5, -0.05), direct, 1e-11);
    }

    #[test]
    fn polylog_branches_agree_at_the_seam() {
        for s in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
            let series = {
                let mut sum = 0.0;
                for k in 1..2000u32 {
                    sum += (-0.499 * f64::from(k)).exp() * f64::from(k).powf(-s);
                }
                sum
            };
            close(polylog_exp(s, -0.499), series, 1e-13);
        }
    }

    #[test]
    fn e1_reference_values() {
        close(exp_integral_e1(0.3), 0.905676651675846712, 1e-14);
        close(exp_integral_e1(1.0), 0.219383934395520274, 1e-14);
        close(exp_integral_e1(3.0), 0.0130483810941970374, 1e-15);
        close(exp_integral_e1(10.0), 4.15696892968532427e-6, 1e-18);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        for p in 0..16 {
            let quad: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(p)).sum();
            let exact = if p % 2 == 0 {
                2.0 / (p as f64 + 1.0)
            } else {
                0.0
            };
            close(quad, exact, 1e-13);
        }
        let (x01, w01) = rescale_quadrature(&x, &w, 0.0, 1.0);
        let quad: f64 = x01.iter().zip(&w01).map(|(&xi, &wi)| wi * xi.exp()).sum();
        close(quad, std::f64::consts::E - 1.0, 1e-12);
    }

    #[test]
    fn fit_line_recovers_exact_line_and_r2() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.5 * x - 1.0).collect();
        let fit = fit_line(&xs, &ys);
        close(fit.slope, 2.5, 1e-12);
        close(fit.intercept, -1.0, 1e-12);
        close(fit.r_squared, 1.0, 1e-12);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 80);
        close(root, std::f64::consts::SQRT_2, 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        close(percentile(&v, 0.0), 1.0, 0.0);
        close(percentile(&v, 1.0), 4.0, 0.0);
        close(percentile(&v, 0.5), 2.5, 1e-15);
    }

    #[test]
    fn factorial_exact() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(5), 120.0);
        assert_eq!(factorial(12), 479001600.0);
    }
}
