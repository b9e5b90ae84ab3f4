//! Multi-asset model with stochastic covariance: asset log-prices carry the
//! covariance matrix of a Wishart process. The asset sub-flow is exact
//! (log-normal given the frozen covariance, with the correlated Gaussian
//! vector built from an extended Cholesky factor instead of a matrix square
//! root), and the covariance sub-flow is any Wishart stepper; the two are
//! composed in Bernoulli-randomized order.


use crate::error::{Result, SimError};
use crate::matkernel::{extended_cholesky, SymMatrix, DEFAULT_PIVOT_TOL};
use crate::randkit::RngStream;
use crate::schemes::{build_wishart_stepper, SchemeSpec, Stepper};
use crate::wishart_exact::WishartParams;

/// Model specification: risk-free rate, initial asset prices and the
/// covariance process.
#[derive(Debug, Clone)]
pub struct GourierouxModel {
    pub rate: f64,
    pub s0: Vec<f64>,
    pub wishart: WishartParams,
}

impl GourierouxModel {
    pub fn new(rate: f64, s0: Vec<f64>, wishart: WishartParams) -> Result<Self> {
        if s0.len() != wishart.d {
            return Err(SimError::IncompatibleDims(s0.len(), wishart.d));
        }
        if s0.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(SimError::NonFinite("GourierouxModel s0"));
        }
        Ok(Self { rate, s0, wishart })
    }
}

// exact log-normal asset step under frozen covariance x:
// s_l -> s_l exp((rate - x_ll / 2) t + sqrt(t) z_l), cov(z) = x
fn asset_step(
    rng: &mut RngStream,
    rate: f64,
    s: &[f64],
    x: &SymMatrix,
    t: f64,
) -> Result<Vec<f64>> {
    let d = s.len();
    let ec = extended_cholesky(x, DEFAULT_PIVOT_TOL)?;
    let r = ec.rank();
    let factor = ec.factor();
    let perm = ec.perm();
    // z = c^T g with c^T c = x, i.e. z[perm[i]] = sum_k factor[i, k] g[k]
    let g: Vec<f64> = (0..r).map(|_| rng.gauss()).collect();
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut acc = 0.0;
        for k in 0..r {
            acc += factor[(i, k)] * g[k];
        }
        z[perm[i]] = acc;
    }
    let sqrt_t = t.sqrt();
    Ok((0..d)
        .map(|l| s[l] * ((rate - 0.5 * x.get(l, l)) * t + sqrt_t * z[l]).exp())
        .collect())
}

/// Cached stepper for the joint (assets, covariance) state.
pub struct GourierouxStepper {
    rate: f64,
    dt: f64,
    wishart_stepper: Box<dyn Stepper>,
}

impl GourierouxStepper {
    pub fn new(model: &GourierouxModel, dt: f64, spec: &SchemeSpec) -> Result<Self> {
        Ok(Self {
            rate: model.rate,
            dt,
            wishart_stepper: build_wishart_stepper(&model.wishart, dt, spec)?,
        })
    }

    /// One composite step: Bernoulli(1/2) choice between asset-then-
    /// covariance and covariance-then-asset ordering.
    pub fn step(
        &self,
        rng: &mut RngStream,
        s: &[f64],
        x: &SymMatrix,
    ) -> Result<(Vec<f64>, SymMatrix)> {
        let t = self.dt;
        if rng.bernoulli_half() {
            let s1 = asset_step(rng, self.rate, s, x, t)?;
            let x1 = self.wishart_stepper.step(rng, x, t)?;
            Ok((s1, x1))
        } else {
            let x1 = self.wishart_stepper.step(rng, x, t)?;
            let s1 = asset_step(rng, self.rate, s, &x1, t)?;
            Ok((s1, x1))
        }
    }
}

/// One composite step (free-function form; `GourierouxStepper` caches the
/// covariance stepper across steps).
pub fn gourieroux_sufana_step(
    rng: &mut RngStream,
    s: &[f64],
    x: &SymMatrix,
    model: &GourierouxModel,
    t: f64,
    spec: &SchemeSpec,
) -> Result<(Vec<f64>, SymMatrix)> {
    if t == 0.0 {
        return Ok((s.to_vec(), x.clone()));
    }
    GourierouxStepper::new(model, t, spec)?.step(rng, s, x)
}
