//! Analytic ground truth and statistics: the closed-form characteristic /
//! Laplace function of Wishart marginals, convergence-domain checks, the
//! Monte-Carlo estimator with deterministic parallel reduction, and
//! convergence-order fitting.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::matkernel::{
    complex_charfn_kernel, gram_integral, matrix_exp, psd_sqrt, ComplexSymMatrix, SymMatrix,
};
use crate::randkit::RngStream;
use crate::wishart_exact::WishartParams;

fn q_path(p: &WishartParams) -> impl Fn(f64) -> Result<SymMatrix> + '_ {
    let ata = SymMatrix::from_dense(&(p.a.transpose() * &p.a));
    let b_is_zero = p.b.iter().all(|&v| v == 0.0);
    move |s: f64| {
        if b_is_zero {
            Ok(ata.scale(s))
        } else {
            gram_integral(&p.b, &p.a, s)
        }
    }
}

/// E[exp(Tr(v X_t))] by the closed form, valid for complex symmetric v with
/// real part in the convergence domain.
pub fn wishart_charfn(p: &WishartParams, t: f64, v: &ComplexSymMatrix) -> Result<Complex64> {
    if v.dim() != p.d {
        return Err(SimError::IncompatibleDims(v.dim(), p.d));
    }
    let m_t = if p.b.iter().all(|&x| x == 0.0) {
        DMatrix::identity(p.d, p.d)
    } else {
        matrix_exp(&(t * &p.b))?
    };
    let q = q_path(p);
    complex_charfn_kernel(v, &q, t, &m_t, &p.x, p.alpha)
}

/// E[exp(i Tr(v X_t))] for a real matrix argument v: the orientation used by
/// the reference tables. The plain Laplace orientation is `wishart_charfn`
/// at a real argument.
pub fn wishart_charfn_table(p: &WishartParams, t: f64, v: &SymMatrix) -> Result<Complex64> {
    wishart_charfn(p, t, &ComplexSymMatrix::imaginary(v.clone()))
}

/// The matching Monte-Carlo functional exp(i Tr(v x)).
pub fn charfn_functional(v: &SymMatrix, x: &SymMatrix) -> Complex64 {
    Complex64::new(0.0, v.trace_product(x)).exp()
}

/// True iff the real symmetric argument lies in the convergence domain:
/// I - 2 sqrt(q_s) v sqrt(q_s) positive definite along s in [0, t], resolved
/// on a dyadically refined grid (the minimal eigenvalue is monotone along
/// the path, so refinement stops once the grid minimum stabilizes).
pub fn laplace_domain_check(p: &WishartParams, t: f64, v_real: &SymMatrix) -> bool {
    if v_real.dim() != p.d {
        return false;
    }
    // negative semidefinite arguments are always inside
    if v_real.min_eigenvalue() <= 0.0 && v_real.eigenvalues().iter().all(|&l| l <= 1e-14) {
        return true;
    }
    let q = q_path(p);
    let min_on_grid = |k: usize| -> Result<f64> {
        let mut m = f64::INFINITY;
        for j in 1..=k {
            let s = t * j as f64 / k as f64;
            let qs = q(s)?;
            let root = psd_sqrt(&qs)?;
            let inner = SymMatrix::from_dense(&(&root * v_real.to_dense() * &root));
            let lam = SymMatrix::identity(p.d).sub(&inner.scale(2.0)).min_eigenvalue();
            m = m.min(lam);
        }
        Ok(m)
    };
    let mut k = 8usize;
    let mut prev = match min_on_grid(k) {
        Ok(v) => v,
        Err(_) => return false,
    };
    for _ in 0..12 {
        if prev <= 0.0 {
            return false;
        }
        k *= 2;
        let cur = match min_on_grid(k) {
            Ok(v) => v,
            Err(_) => return false,
        };
        if (cur - prev).abs() <= 1e-3 * (1.0 + prev.abs()) {
            return cur > 0.0;
        }
        prev = cur;
    }
    prev > 0.0
}

/// E[X_t] = m_t x m_t^T + alpha q_t.
pub fn wishart_mean(p: &WishartParams, t: f64) -> Result<SymMatrix> {
    if t == 0.0 {
        return Ok(p.x.clone());
    }
    let (q_t, m_t) = crate::matkernel::gram_integral_with_mt(&p.b, &p.a, t)?;
    Ok(p.x.congruence(&m_t).add(&q_t.scale(p.alpha)))
}

/// Monte-Carlo estimate with per-component standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: Complex64,
    pub std_error_re: f64,
    pub std_error_im: f64,
    pub n_samples: usize,
    pub elapsed_s: f64,
}

impl McEstimate {
    /// Combined standard error sqrt(se_re^2 + se_im^2).
    pub fn std_error(&self) -> f64 {
        (self.std_error_re * self.std_error_re + self.std_error_im * self.std_error_im).sqrt()
    }
}

/// Stream layout: path i draws from (seed, base_stream + i).
#[derive(Debug, Clone, Copy)]
pub struct RngLayout {
    pub seed: u64,
    pub base_stream: u64,
}

impl RngLayout {
    pub fn new(seed: u64) -> Self {
        Self { seed, base_stream: 0 }
    }

    pub fn path_stream(&self, i: usize) -> RngStream {
        RngStream::new(self.seed, self.base_stream + i as u64)
    }
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

const CHUNK: usize = 4096;

/// Monte-Carlo estimate of E[finish(fold over the path)] where each path
/// starts at `init`, evolves through `n_steps` applications of `step` with
/// step size dt, and `fold` accumulates a statistic at every grid point
/// including the initial one.
///
/// Paths own independent streams and partial sums are combined in fixed
/// chunk order with compensated summation, so parallel and serial runs give
/// bit-identical results.
pub fn mc_path_estimate<S, A, FS, FA, FF>(
    layout: &RngLayout,
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    init: &S,
    step: FS,
    acc_init: FA,
    finish: FF,
) -> Result<McEstimate>
where
    S: Clone + Sync,
    A: Clone + Send,
    FS: Fn(&mut RngStream, &S, f64) -> Result<S> + Sync,
    FA: Fn() -> A + Sync,
    FF: Fn(&mut A, &S, bool) -> Option<Complex64> + Sync,
{
    if n_paths < 2 {
        return Err(SimError::UnsupportedParams("mc estimate needs at least 2 paths".into()));
    }
    let started = Instant::now();
    let n_chunks = n_paths.div_ceil(CHUNK);
    let partials: Vec<Result<(Kahan, Kahan, Kahan, Kahan)>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(n_paths);
            let mut s_re = Kahan::default();
            let mut s_im = Kahan::default();
            let mut s_re2 = Kahan::default();
            let mut s_im2 = Kahan::default();
            for i in lo..hi {
                let mut rng = layout.path_stream(i);
                let mut state = init.clone();
                let mut acc = acc_init();
                finish(&mut acc, &state, false);
                for k in 0..n_steps {
                    state = step(&mut rng, &state, dt)?;
                    let last = k + 1 == n_steps;
                    if let Some(val) = finish(&mut acc, &state, last) {
                        if !val.re.is_finite() || !val.im.is_finite() {
                            return Err(SimError::NonFinite("mc path functional"));
                        }
                        s_re.add(val.re);
                        s_im.add(val.im);
                        s_re2.add(val.re * val.re);
                        s_im2.add(val.im * val.im);
                    }
                }
            }
            Ok((s_re, s_im, s_re2, s_im2))
        })
        .collect();

    let mut t_re = Kahan::default();
    let mut t_im = Kahan::default();
    let mut t_re2 = Kahan::default();
    let mut t_im2 = Kahan::default();
    for part in partials {
        let (a, b, c, d) = part?;
        t_re.add(a.sum);
        t_im.add(b.sum);
        t_re2.add(c.sum);
        t_im2.add(d.sum);
    }
    let n = n_paths as f64;
    let mean_re = t_re.sum / n;
    let mean_im = t_im.sum / n;
    let var_re = (t_re2.sum / n - mean_re * mean_re).max(0.0);
    let var_im = (t_im2.sum / n - mean_im * mean_im).max(0.0);
    Ok(McEstimate {
        mean: Complex64::new(mean_re, mean_im),
        std_error_re: (var_re / n).sqrt(),
        std_error_im: (var_im / n).sqrt(),
        n_samples: n_paths,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Monte-Carlo estimate of E[functional(X_T)] over n_steps of the stepper.
pub fn mc_estimate<S, FS, FF>(
    layout: &RngLayout,
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    init: &S,
    step: FS,
    functional: FF,
) -> Result<McEstimate>
where
    S: Clone + Sync,
    FS: Fn(&mut RngStream, &S, f64) -> Result<S> + Sync,
    FF: Fn(&S) -> Complex64 + Sync,
{
    mc_path_estimate(
        layout,
        n_paths,
        n_steps,
        dt,
        init,
        step,
        || (),
        |_, state, last| if last { Some(functional(state)) } else { None },
    )
}

/// Per-N estimates against a reference value, with the fitted convergence
/// order. Points with error below twice their standard error are excluded
/// from the fit.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub n_grid: Vec<usize>,
    pub estimates: Vec<McEstimate>,
    pub errors: Vec<f64>,
    pub used_in_fit: Vec<bool>,
    /// slope of -log(error) against log(N)
    pub slope: f64,
    pub slope_ci: (f64, f64),
}

/// Run the estimator at every N in the grid and fit the weak order against
/// the reference value `truth`.
pub fn convergence_study(
    truth: Complex64,
    n_grid: &[usize],
    mut runner: impl FnMut(usize) -> Result<McEstimate>,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::UnsupportedParams("N grid must be strictly increasing".into()));
    }
    let mut estimates = Vec::with_capacity(n_grid.len());
    let mut errors = Vec::with_capacity(n_grid.len());
    let mut used = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let est = runner(n)?;
        let err = (est.mean - truth).norm();
        let noise = 2.0 * est.std_error();
        used.push(err > noise);
        errors.push(err);
        estimates.push(est);
    }
    let pts: Vec<(f64, f64)> = n_grid
        .iter()
        .zip(errors.iter())
        .zip(used.iter())
        .filter(|(_, &u)| u)
        .map(|((&n, &e), _)| ((n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(SimError::InsufficientSignal);
    }
    let (slope, se) = regress(&pts);
    Ok(ConvergenceReport {
        n_grid: n_grid.to_vec(),
        estimates,
        errors,
        used_in_fit: used,
        slope: -slope,
        slope_ci: (-slope - 2.0 * se, -slope + 2.0 * se),
    })
}

fn regress(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = pts
        .iter()
        .map(|p| {
            let fit = my + slope * (p.0 - mx);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let se = if pts.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, se)
}

/// Pathwise study of E[max over the grid of Tr(X)] for a scheme against the
/// exact multi-step sampler sharing the same grid.
#[derive(Debug, Clone)]
pub struct MaxTraceReport {
    pub n_grid: Vec<usize>,
    pub scheme: Vec<McEstimate>,
    pub exact: Vec<McEstimate>,
    pub diffs: Vec<f64>,
    pub diff_std_errors: Vec<f64>,
    /// fitted decay order of |difference| where the signal exceeds noise
    pub slope: Option<f64>,
}

pub fn pathwise_max_trace_study(
    layout: &RngLayout,
    p: &WishartParams,
    t_final: f64,
    n_grid: &[usize],
    n_paths: usize,
    mut scheme_runner: impl FnMut(usize) -> Result<McEstimate>,
) -> Result<MaxTraceReport> {
    let mut scheme = Vec::new();
    let mut exact = Vec::new();
    let mut diffs = Vec::new();
    let mut ses = Vec::new();
    for (gi, &n) in n_grid.iter().enumerate() {
        let s = scheme_runner(n)?;
        let dt = t_final / n as f64;
        let sampler = crate::wishart_exact::ExactWishartSampler::new(p, dt)?;
        let exact_layout =
            RngLayout { seed: layout.seed, base_stream: layout.base_stream + ((gi + 1) as u64) << 32 };
        let e = mc_path_estimate(
            &exact_layout,
            n_paths,
            n,
            dt,
            &p.x,
            |rng, x, _| sampler.sample_from(rng, x),
            || f64::NEG_INFINITY,
            |acc, state, last| {
                *acc = acc.max(state.trace());
                if last {
                    Some(Complex64::new(*acc, 0.0))
                } else {
                    None
                }
            },
        )?;
        diffs.push((s.mean.re - e.mean.re).abs());
        ses.push((s.std_error_re.powi(2) + e.std_error_re.powi(2)).sqrt());
        scheme.push(s);
        exact.push(e);
    }
    let pts: Vec<(f64, f64)> = n_grid
        .iter()
        .zip(diffs.iter().zip(ses.iter()))
        .filter(|(_, (d, se))| **d > 2.0 * **se)
        .map(|(&n, (d, _))| ((n as f64).ln(), d.ln()))
        .collect();
    let slope = if pts.len() >= 3 { Some(-regress(&pts).0) } else { None };
    Ok(MaxTraceReport { n_grid: n_grid.to_vec(), scheme, exact, diffs, diff_std_errors: ses, slope })
}
