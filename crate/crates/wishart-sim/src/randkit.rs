//! Reproducible random-variate generation: Gaussian draws, the discrete
//! moment-matching variables, exact noncentral chi-square sampling and the
//! one-step CIR samplers consumed by every scheme.
//!
//! The CIR step here is for the squared-Bessel form
//! du = delta dt + 2 sqrt(u) dZ, whose time-t marginal is
//! t * chi2(delta, u0 / t).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{Result, SimError};

/// Counter-based random stream. Identical (seed, stream_id, draw sequence)
/// reproduce identical output; distinct stream ids give statistically
/// independent streams, so each Monte-Carlo path owns one.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng, seed, stream_id }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    #[inline]
    pub fn gauss(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    #[inline]
    pub fn bernoulli_half(&mut self) -> bool {
        self.rng.gen::<bool>()
    }

    fn chi_square(&mut self, degree: f64) -> f64 {
        if degree == 0.0 {
            return 0.0;
        }
        // chi2(k) = Gamma(k/2, scale 2)
        Gamma::new(0.5 * degree, 2.0).expect("positive degree").sample(&mut self.rng)
    }

    fn poisson(&mut self, lambda: f64) -> u64 {
        if lambda == 0.0 {
            return 0;
        }
        Poisson::new(lambda).expect("positive lambda").sample(&mut self.rng) as u64
    }
}

const SQRT_3: f64 = 1.7320508075688772;

/// Discrete variable matching the N(0,1) moments up to order 5:
/// +-sqrt(3) with probability 1/6 each, 0 otherwise.
#[inline]
pub fn moment_match_3(rng: &mut RngStream) -> f64 {
    let u = rng.uniform();
    if u < 1.0 / 6.0 {
        SQRT_3
    } else if u < 1.0 / 3.0 {
        -SQRT_3
    } else {
        0.0
    }
}

/// Atoms and probabilities of the 5-moment-matching variable.
pub fn moment_match_3_atoms() -> [(f64, f64); 3] {
    [(SQRT_3, 1.0 / 6.0), (-SQRT_3, 1.0 / 6.0), (0.0, 2.0 / 3.0)]
}

fn y5_constants() -> (f64, f64, f64, f64) {
    let s6 = 6f64.sqrt();
    let outer = (3.0 + s6).sqrt();
    let inner = (3.0 - s6).sqrt();
    let p_outer = (s6 - 2.0) / (4.0 * s6);
    (outer, inner, p_outer, 0.5 - p_outer)
}

/// Discrete variable matching the N(0,1) moments up to order 7:
/// +-sqrt(3 + sqrt(6)) with probability (sqrt(6)-2)/(4 sqrt(6)) each,
/// +-sqrt(3 - sqrt(6)) with the complementary probability each.
#[inline]
pub fn moment_match_5(rng: &mut RngStream) -> f64 {
    let (outer, inner, p_outer, _) = y5_constants();
    let u = rng.uniform();
    if u < p_outer {
        outer
    } else if u < 2.0 * p_outer {
        -outer
    } else if u < p_outer + 0.5 {
        inner
    } else {
        -inner
    }
}

/// Atoms and probabilities of the 7-moment-matching variable.
pub fn moment_match_5_atoms() -> [(f64, f64); 4] {
    let (outer, inner, p_outer, p_inner) = y5_constants();
    [(outer, p_outer), (-outer, p_outer), (inner, p_inner), (-inner, p_inner)]
}

/// Standard Gaussian draw; the spec-level alias for the gauss operation.
#[inline]
pub fn gauss(rng: &mut RngStream) -> f64 {
    rng.gauss()
}

/// Exact sample from the noncentral chi-square chi2(degree, noncentrality).
///
/// degree > 1 uses (Z + sqrt(nc))^2 + chi2(degree - 1); degree <= 1 uses the
/// Poisson mixture chi2(degree + 2 N), N ~ Poisson(nc / 2), which avoids the
/// high rejection rates of acceptance-rejection samplers at small degree.
pub fn noncentral_chisq(rng: &mut RngStream, degree: f64, noncentrality: f64) -> Result<f64> {
    if degree < 0.0 || !degree.is_finite() {
        return Err(SimError::InvalidDegree(degree));
    }
    if noncentrality < 0.0 || !noncentrality.is_finite() {
        return Err(SimError::NonFinite("noncentral_chisq noncentrality"));
    }
    if degree == 0.0 && noncentrality == 0.0 {
        return Ok(0.0);
    }
    if degree > 1.0 {
        let z = rng.gauss() + noncentrality.sqrt();
        Ok(z * z + rng.chi_square(degree - 1.0))
    } else {
        let n = rng.poisson(0.5 * noncentrality);
        Ok(rng.chi_square(degree + 2.0 * n as f64))
    }
}

/// One-step parameters of the squared-Bessel CIR du = degree dt + 2 sqrt(u) dZ.
#[derive(Debug, Clone, Copy)]
pub struct CirParams {
    pub degree: f64,
    pub x0: f64,
    pub t: f64,
}

impl CirParams {
    pub fn new(degree: f64, x0: f64, t: f64) -> Result<Self> {
        if degree < 0.0 {
            return Err(SimError::InvalidDegree(degree));
        }
        if x0 < 0.0 || !x0.is_finite() || !t.is_finite() {
            return Err(SimError::NonFinite("CirParams"));
        }
        if t <= 0.0 {
            return Err(SimError::NegativeTime(t));
        }
        Ok(Self { degree, x0, t })
    }
}

/// Exact marginal sample: t * chi2(degree, x0 / t).
pub fn cir_step_exact(rng: &mut RngStream, p: CirParams) -> Result<f64> {
    if p.degree + p.x0 == 0.0 {
        return Ok(0.0);
    }
    Ok(p.t * noncentral_chisq(rng, p.degree, p.x0 / p.t)?)
}

/// Exact CIR moments E[u_t^k], k = 1, 2, 3, from the closed recursion
/// m_n' = n (degree + 2(n-1)) m_{n-1}.
pub fn cir_moments_123(x: f64, delta: f64, t: f64) -> (f64, f64, f64) {
    let m1 = x + delta * t;
    let m2 = x * x + (2.0 * delta + 4.0) * (x * t + 0.5 * delta * t * t);
    let m3 = x * x * x
        + 3.0 * (delta + 4.0) * x * x * t
        + 3.0 * (delta + 4.0) * (delta + 2.0) * x * t * t
        + (delta + 4.0) * (delta + 2.0) * delta * t * t * t;
    (m1, m2, m3)
}

// two-point variable matching (u1, u2); requires u2 >= u1^2
fn two_point_match(rng: &mut RngStream, u1: f64, u2: f64) -> f64 {
    let var = u2 - u1 * u1;
    if var <= 0.0 || u1 == 0.0 {
        return u1.max(0.0);
    }
    let pi = 0.5 * (1.0 - (1.0 - u1 * u1 / u2).sqrt());
    if rng.uniform() < pi {
        u1 / (2.0 * pi)
    } else {
        u1 / (2.0 * (1.0 - pi))
    }
}

// two-point variable matching (u1, u2, u3) by the order-2 quadrature rule
fn three_moment_match(rng: &mut RngStream, u1: f64, u2: f64, u3: f64) -> f64 {
    let den = u2 - u1 * u1;
    if den <= 0.0 {
        return u1.max(0.0);
    }
    let e1 = (u3 - u2 * u1) / den;
    let e0 = u2 - e1 * u1;
    let disc = (0.25 * e1 * e1 + e0).max(0.0).sqrt();
    let zp = 0.5 * e1 + disc;
    let zm = (0.5 * e1 - disc).max(0.0);
    let pp = if zp > zm { (u1 - zm) / (zp - zm) } else { 1.0 };
    if rng.uniform() < pp.clamp(0.0, 1.0) {
        zp
    } else {
        zm
    }
}

/// One-step potential weak second-order CIR scheme.
///
/// Strang split of the drift flow and the exact square-Gaussian flow, with
/// the Gaussian replaced by the 5-moment-matching variable; below the
/// positivity threshold it switches to a two-point variable matching the
/// first two exact moments. First and second moments are exact.
pub fn cir_step_order2(rng: &mut RngStream, p: CirParams) -> Result<f64> {
    cir_step_order2_with(rng, p, moment_match_3)
}

pub(crate) fn cir_step_order2_with(
    rng: &mut RngStream,
    p: CirParams,
    mut g: impl FnMut(&mut RngStream) -> f64,
) -> Result<f64> {
    if p.degree + p.x0 == 0.0 {
        return Ok(0.0);
    }
    let (x, delta, t) = (p.x0, p.degree, p.t);
    let tau = delta - 1.0;
    let threshold = if delta >= 1.0 {
        0.0
    } else {
        let half = 0.5 * (1.0 - delta) * t;
        half + ((3.0 * t).sqrt() + half.sqrt()).powi(2)
    };
    let out = if x >= threshold {
        let y = g(rng);
        let a = (x + 0.5 * tau * t).sqrt();
        (a + t.sqrt() * y).powi(2) + 0.5 * tau * t
    } else {
        let (u1, u2, _) = cir_moments_123(x, delta, t);
        two_point_match(rng, u1, u2)
    };
    debug_assert!(out >= 0.0);
    Ok(out.max(0.0))
}

// branch geometry of the third-order split: shifts (p, q) applied before and
// after the square-Gaussian flow, one branch per Bernoulli outcome
fn order3_branches(delta: f64) -> [(f64, f64); 2] {
    let tau = delta - 1.0;
    if tau == 0.0 {
        return [(0.0, 0.0), (0.0, 0.0)];
    }
    let c = (2.0 * tau.abs() / 3.0).sqrt();
    let d_avg = -0.5 * c * c;
    let d_diff = -4.0 * tau / (3.0 * c);
    let d1 = d_avg + 0.5 * d_diff;
    let d2 = d_avg - 0.5 * d_diff;
    let t1 = tau + c;
    let t2 = tau - c;
    [(0.5 * (t1 + d1), 0.5 * (t1 - d1)), (0.5 * (t2 + d2), 0.5 * (t2 - d2))]
}

/// One-step potential weak third-order CIR scheme.
///
/// A Bernoulli(1/2) mixture of two drift/square-Gaussian/drift compositions
/// whose shift coefficients cancel the order-t^3 commutator defect, with the
/// Gaussian replaced by the 7-moment-matching variable; below the positivity
/// threshold it switches to a two-point variable matching the first three
/// exact moments. First, second and third moments are exact.
pub fn cir_step_order3(rng: &mut RngStream, p: CirParams) -> Result<f64> {
    cir_step_order3_with(rng, p, moment_match_5)
}

pub(crate) fn cir_step_order3_with(
    rng: &mut RngStream,
    p: CirParams,
    mut g: impl FnMut(&mut RngStream) -> f64,
) -> Result<f64> {
    if p.degree + p.x0 == 0.0 {
        return Ok(0.0);
    }
    let (x, delta, t) = (p.x0, p.degree, p.t);
    let branches = order3_branches(delta);
    let y_max = (3.0 + 6f64.sqrt()).sqrt();
    let mut threshold = 0.0f64;
    for (pre, post) in branches {
        let need = (-post).max(0.0);
        let k = t * ((y_max + need.sqrt()).powi(2) - pre).max(0.0);
        threshold = threshold.max(k);
    }
    let out = if x >= threshold {
        let (pre, post) = branches[usize::from(rng.bernoulli_half())];
        let y = g(rng);
        let a = (x + pre * t).sqrt();
        (a + t.sqrt() * y).powi(2) + post * t
    } else {
        let (u1, u2, u3) = cir_moments_123(x, delta, t);
        three_moment_match(rng, u1, u2, u3)
    };
    if out < -1e-12 {
        return Err(SimError::NonFinite("cir_step_order3 produced a negative value"));
    }
    Ok(out.max(0.0))
}

/// Deterministic atom expansion (value, probability) of the order-2 step,
/// used by tests to evaluate E[f(step)] without Monte Carlo.
pub fn cir_order2_atoms(p: CirParams) -> Vec<(f64, f64)> {
    let (x, delta, t) = (p.x0, p.degree, p.t);
    if delta + x == 0.0 {
        return vec![(0.0, 1.0)];
    }
    let tau = delta - 1.0;
    let threshold = if delta >= 1.0 {
        0.0
    } else {
        let half = 0.5 * (1.0 - delta) * t;
        half + ((3.0 * t).sqrt() + half.sqrt()).powi(2)
    };
    if x >= threshold {
        let a = (x + 0.5 * tau * t).sqrt();
        moment_match_3_atoms()
            .iter()
            .map(|&(y, pr)| ((a + t.sqrt() * y).powi(2) + 0.5 * tau * t, pr))
            .collect()
    } else {
        let (u1, u2, _) = cir_moments_123(x, delta, t);
        let var = u2 - u1 * u1;
        if var <= 0.0 || u1 == 0.0 {
            return vec![(u1.max(0.0), 1.0)];
        }
        let pi = 0.5 * (1.0 - (1.0 - u1 * u1 / u2).sqrt());
        vec![(u1 / (2.0 * pi), pi), (u1 / (2.0 * (1.0 - pi)), 1.0 - pi)]
    }
}

/// Deterministic atom expansion of the order-3 step.
pub fn cir_order3_atoms(p: CirParams) -> Vec<(f64, f64)> {
    let (x, delta, t) = (p.x0, p.degree, p.t);
    if delta + x == 0.0 {
        return vec![(0.0, 1.0)];
    }
    let branches = order3_branches(delta);
    let y_max = (3.0 + 6f64.sqrt()).sqrt();
    let mut threshold = 0.0f64;
    for (pre, post) in branches {
        let need = (-post).max(0.0);
        threshold = threshold.max(t * ((y_max + need.sqrt()).powi(2) - pre).max(0.0));
    }
    if x >= threshold {
        let mut out = Vec::with_capacity(8);
        for (pre, post) in branches {
            let a = (x + pre * t).sqrt();
            for (y, pr) in moment_match_5_atoms() {
                out.push(((a + t.sqrt() * y).powi(2) + post * t, 0.5 * pr));
            }
        }
        out
    } else {
        let (u1, u2, u3) = cir_moments_123(x, delta, t);
        let den = u2 - u1 * u1;
        if den <= 0.0 {
            return vec![(u1.max(0.0), 1.0)];
        }
        let e1 = (u3 - u2 * u1) / den;
        let e0 = u2 - e1 * u1;
        let disc = (0.25 * e1 * e1 + e0).max(0.0).sqrt();
        let zp = 0.5 * e1 + disc;
        let zm = (0.5 * e1 - disc).max(0.0);
        let pp = ((u1 - zm) / (zp - zm)).clamp(0.0, 1.0);
        vec![(zp, pp), (zm, 1.0 - pp)]
    }
}
