//! Oracles shared by the integration tests. None of these call into the
//! library's numerical routines.

#![allow(dead_code)]

use lsid::ContinuousModel;
use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `A = S − (G Gᵀ + αI)` with `S` skew, so the symmetric part is negative definite.
pub fn random_stable_model(n: usize, rng: &mut ChaCha8Rng) -> ContinuousModel {
    let g = random_matrix(n, n, rng);
    let s = random_matrix(n, n, rng) * 2.0;
    let skew = &s - s.transpose();
    let alpha = rng.random_range(0.2..1.5);
    let a = skew * 0.5 - &g * g.transpose() - DMatrix::identity(n, n) * alpha;
    let l = random_matrix(n, n, rng);
    let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    ContinuousModel {
        a,
        b: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        c: RowDVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        d: 0.0,
        q,
        mu1: DVector::zeros(n),
        p1: DMatrix::identity(n, n) * 0.1,
    }
}

/// `exp(M)` by Taylor series after halving until `‖M‖ < 0.5`, then squaring.
pub fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut squarings = 0;
    let mut scaled = m.clone();
    while scaled.norm() >= 0.5 {
        scaled /= 2.0;
        squarings += 1;
    }
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for j in 1..30 {
        term = &term * &scaled / j as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `∫₀^Δ e^{As} Q e^{Aᵀs} ds` by composite Gauss–Legendre quadrature.
pub fn quadrature_qd(a: &DMatrix<f64>, q: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let rule = gauss_legendre(20);
    let panels = 4;
    let h = delta / panels as f64;
    let mut sum = DMatrix::zeros(n, n);
    for p in 0..panels {
        let lo = p as f64 * h;
        for &(x, w) in &rule {
            let s = lo + 0.5 * h * (x + 1.0);
            let e = taylor_exp(&(a * s));
            sum += (&e * q * e.transpose()) * (0.5 * h * w);
        }
    }
    sum
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Mean of `N(m, ε²)` restricted to `[a, b]`, by quadrature in standardized
/// coordinates with the density rescaled at the nearer bound so that bounds
/// far in the tail do not underflow.
pub fn truncated_mean_oracle(m: f64, eps: f64, a: f64, b: f64) -> f64 {
    let alpha = (a - m) / eps;
    let beta = (b - m) / eps;
    if beta <= 0.0 {
        return m - eps * standardized_tail_mean(-beta, -alpha);
    }
    m + eps * standardized_tail_mean(alpha, beta)
}

/// `E{t | α ≤ t ≤ β}` for a standard normal `t`, with `β > 0`.
fn standardized_tail_mean(alpha: f64, beta: f64) -> f64 {
    if alpha >= 0.0 {
        // t = α + s, φ(t)/φ(α) = exp(−αs − s²/2)
        let upper = (beta - alpha).min(14.0).min(80.0 / alpha.max(1e-3));
        let g = |s: f64| (-alpha * s - 0.5 * s * s).exp();
        let sg = |s: f64| s * g(s);
        let segments = split_points(0.0, upper, 1.0 / (1.0 + alpha));
        let (mut mass, mut first) = (0.0, 0.0);
        for w in segments.windows(2) {
            mass += adaptive_simpson(&g, w[0], w[1], 1e-13);
            first += adaptive_simpson(&sg, w[0], w[1], 1e-13);
        }
        return alpha + first / mass;
    }
    let lo = alpha.max(-14.0);
    let hi = beta.min(14.0);
    let g = |t: f64| (-0.5 * t * t).exp();
    let tg = |t: f64| t * g(t);
    let segments = split_points(lo, hi, 0.5);
    let (mut mass, mut first) = (0.0, 0.0);
    for w in segments.windows(2) {
        mass += adaptive_simpson(&g, w[0], w[1], 1e-13);
        first += adaptive_simpson(&tg, w[0], w[1], 1e-13);
    }
    first / mass
}

fn split_points(lo: f64, hi: f64, width: f64) -> Vec<f64> {
    let pieces = (((hi - lo) / width).ceil() as usize).clamp(1, 400);
    (0..=pieces).map(|i| lo + (hi - lo) * i as f64 / pieces as f64).collect()
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
