//! Second-order schemes for general affine diffusions on the PSD cone:
//! the canonical reduction, the exactly solvable affine ODE flow, the
//! ODE/Wishart splitting schemes and the corrected Euler baseline.

use nalgebra::DMatrix;

use crate::error::{Result, SimError};
use crate::matkernel::{
    extended_cholesky, gram_integral_with_mt, matrix_exp, psd_positive_part, psd_sqrt, SymMatrix,
    DEFAULT_PIVOT_TOL,
};
use crate::randkit::RngStream;
use crate::schemes::{SchemeSpec, Stepper};
use crate::wishart_exact::{canonical_step_with, clip_psd, CanonicalWishartParams, WishartParams};

/// Linear map on symmetric matrices. The Wishart drift y -> b y + y b^T has
/// a fast path that never materializes the dense coefficient array.
#[derive(Debug, Clone)]
pub enum LinMap {
    Wishart(DMatrix<f64>),
    /// Dense d(d+1)/2 square coefficient array acting on packed coordinates.
    Dense { d: usize, m: DMatrix<f64> },
}

fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

impl LinMap {
    pub fn zero(d: usize) -> Self {
        LinMap::Wishart(DMatrix::zeros(d, d))
    }

    pub fn dense_from_fn(d: usize, f: impl Fn(&SymMatrix) -> SymMatrix) -> Self {
        let m_len = packed_len(d);
        let mut m = DMatrix::<f64>::zeros(m_len, m_len);
        let mut col = 0usize;
        for i in 0..d {
            for j in 0..=i {
                let mut basis = SymMatrix::zeros(d);
                basis.set(i, j, 1.0);
                let image = f(&basis);
                for (row, v) in image.packed().iter().enumerate() {
                    m[(row, col)] = *v;
                }
                col += 1;
            }
        }
        LinMap::Dense { d, m }
    }

    pub fn dim(&self) -> usize {
        match self {
            LinMap::Wishart(b) => b.nrows(),
            LinMap::Dense { d, .. } => *d,
        }
    }

    pub fn apply(&self, x: &SymMatrix) -> SymMatrix {
        match self {
            LinMap::Wishart(b) => {
                let bx = b * x.to_dense();
                SymMatrix::from_fn(x.dim(), |i, j| bx[(i, j)] + bx[(j, i)])
            }
            LinMap::Dense { d, m } => {
                let v = DMatrix::from_column_slice(packed_len(*d), 1, x.packed());
                let out = m * v;
                let mut y = SymMatrix::zeros(*d);
                let mut idx = 0usize;
                for i in 0..*d {
                    for j in 0..=i {
                        y.set(i, j, out[(idx, 0)]);
                        idx += 1;
                    }
                }
                y
            }
        }
    }

    /// The conjugated map B_u(y) = (u^{-1})^T B(u^T y u) u^{-1}.
    pub fn conjugate(&self, u: &DMatrix<f64>, u_inv: &DMatrix<f64>) -> Self {
        match self {
            LinMap::Wishart(b) => LinMap::Wishart(u_inv.transpose() * b * u.transpose()),
            LinMap::Dense { d, .. } => {
                let dd = *d;
                let this = self.clone();
                let u = u.clone();
                let u_inv = u_inv.clone();
                LinMap::dense_from_fn(dd, move |y| {
                    let inner = y.congruence(&u.transpose());
                    this.apply(&inner).congruence(&u_inv.transpose())
                })
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinMap::Dense { m, .. } => m.clone(),
            LinMap::Wishart(b) => {
                let d = b.nrows();
                let this = self.clone();
                match LinMap::dense_from_fn(d, move |y| this.apply(y)) {
                    LinMap::Dense { m, .. } => m,
                    _ => unreachable!(),
                }
            }
        }
    }
}

/// Randomized spot check of the inward-drift condition
/// Tr(x1 x2) = 0 => Tr(B(x1) x2) >= 0 over pairs of PSD matrices built on
/// orthogonal complements. Returns the worst (most negative) value seen;
/// the condition is universally quantified, so this is advisory only.
pub fn drift_condition_spot_check(bmap: &LinMap, rng: &mut RngStream, trials: usize) -> f64 {
    let d = bmap.dim();
    if d < 2 {
        return 0.0;
    }
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let g = DMatrix::from_fn(d, d, |_, _| rng.gauss());
        let qr = g.qr();
        let q = qr.q();
        let k = 1 + (rng.uniform() * (d - 1) as f64) as usize;
        let mut x1 = DMatrix::<f64>::zeros(d, d);
        for c in 0..k {
            let w = rng.uniform() + 0.1;
            let col = q.column(c);
            x1 += w * &col * col.transpose();
        }
        let mut x2 = DMatrix::<f64>::zeros(d, d);
        for c in k..d {
            let w = rng.uniform() + 0.1;
            let col = q.column(c);
            x2 += w * &col * col.transpose();
        }
        let val = bmap
            .apply(&SymMatrix::from_dense(&x1))
            .trace_product(&SymMatrix::from_dense(&x2));
        worst = worst.min(val);
    }
    worst
}

/// General affine specification: drift alpha_bar + B(x), diffusion
/// sqrt(x) dW a + a^T dW^T sqrt(x).
#[derive(Debug, Clone)]
pub struct AffineParams {
    pub d: usize,
    pub x: SymMatrix,
    pub alpha_bar: SymMatrix,
    pub a: DMatrix<f64>,
    pub bmap: LinMap,
}

impl AffineParams {
    pub fn new(x: SymMatrix, alpha_bar: SymMatrix, a: DMatrix<f64>, bmap: LinMap) -> Result<Self> {
        let d = x.dim();
        if alpha_bar.dim() != d || a.nrows() != d || a.ncols() != d || bmap.dim() != d {
            return Err(SimError::IncompatibleDims(d, alpha_bar.dim()));
        }
        x.check_finite("AffineParams x")?;
        alpha_bar.check_finite("AffineParams alpha_bar")?;
        let ata = SymMatrix::from_dense(&(a.transpose() * &a));
        let slack = alpha_bar.sub(&ata.scale(d as f64 - 1.0));
        let min_eig = slack.min_eigenvalue();
        if min_eig < -1e-9 * (1.0 + alpha_bar.frobenius_norm()) {
            return Err(SimError::ExistenceViolated(min_eig));
        }
        let tol = -1e-9 * (1.0 + x.frobenius_norm());
        if x.min_eigenvalue() < tol {
            return Err(SimError::NotPsd { pivot: x.min_eigenvalue(), tol });
        }
        Ok(Self { d, x, alpha_bar, a, bmap })
    }

    /// The Wishart process seen as an affine process:
    /// alpha_bar = alpha a^T a, B(y) = b y + y b^T.
    pub fn from_wishart(p: &WishartParams) -> Result<Self> {
        let ata = SymMatrix::from_dense(&(p.a.transpose() * &p.a));
        Self::new(
            p.x.clone(),
            ata.scale(p.alpha),
            p.a.clone(),
            LinMap::Wishart(p.b.clone()),
        )
    }
}

/// Canonical form: alpha_bar = u^T delta_bar u, a^T a = u^T I^n u, with
/// delta_bar diagonal and u invertible.
#[derive(Debug, Clone)]
pub struct CanonicalAffine {
    pub d: usize,
    pub n: usize,
    pub delta_bar: Vec<f64>,
    pub b_u: LinMap,
    pub u: DMatrix<f64>,
    pub u_inv: DMatrix<f64>,
    pub delta_min: f64,
    pub x: SymMatrix,
}

/// Reduce general affine parameters to canonical form.
///
/// The Wishart case alpha_bar = alpha a^T a takes a single extended Cholesky
/// decomposition; the general case adds the diagonalization of the
/// transformed diffusion block.
pub fn canonical_affine_reduce(p: &AffineParams) -> Result<CanonicalAffine> {
    let d = p.d;
    let ata = SymMatrix::from_dense(&(p.a.transpose() * &p.a));
    let ec_ata = extended_cholesky(&ata, DEFAULT_PIVOT_TOL)?;
    let n = ec_ata.rank();

    let tr_ata = ata.trace();
    if tr_ata > 0.0 {
        let alpha = p.alpha_bar.trace() / tr_ata;
        let resid = p.alpha_bar.sub(&ata.scale(alpha)).frobenius_norm();
        if resid <= 1e-12 * (1.0 + p.alpha_bar.frobenius_norm()) {
            // Wishart-type drift constant: one factorization suffices
            let u = ec_ata.theta().transpose();
            let u_inv = u.clone().try_inverse().ok_or(SimError::SingularSolve("reduce u"))?;
            let mut delta_bar = vec![0.0; d];
            for e in delta_bar.iter_mut().take(n) {
                *e = alpha;
            }
            return finish_reduction(p, u, u_inv, delta_bar, n);
        }
    }

    // general case: normalize alpha_bar + a^T a to I^r, then split and
    // diagonalize the diffusion block
    let w = p.alpha_bar.add(&ata);
    let ec_w = extended_cholesky(&w, DEFAULT_PIVOT_TOL)?;
    let r = ec_w.rank();
    let theta = ec_w.theta();
    let v = theta
        .transpose()
        .try_inverse()
        .ok_or(SimError::SingularSolve("reduce v"))?;
    let s_full = ata.congruence(&v.transpose());

    // s_full = [[s2, 0], [0, 0]] with s2 of size r; diagonalize s2
    let s2 = s_full.submatrix(0, r);
    let eig = nalgebra::SymmetricEigen::try_new(s2.to_dense(), 1e-14, 2000)
        .ok_or(SimError::EigenFailure)?;
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let mut o_full = DMatrix::<f64>::identity(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        o_full
            .view_mut((0, new_col), (r, 1))
            .copy_from(&eig.eigenvectors.column(old_col));
    }
    let mut scale = DMatrix::<f64>::identity(d, d);
    for (k, &old) in order.iter().enumerate().take(n) {
        let eta = eig.eigenvalues[old];
        if eta <= 0.0 {
            return Err(SimError::SingularSolve("diffusion block lost rank"));
        }
        scale[(k, k)] = eta.sqrt();
    }
    // u = diag(sqrt(eta), 1, ..) o^{-1} v^{-1}
    let u = &scale * o_full.transpose() * theta.transpose();
    let u_inv = u.clone().try_inverse().ok_or(SimError::SingularSolve("reduce u"))?;

    let delta_full = p.alpha_bar.congruence(&u_inv.transpose());
    let mut delta_bar = vec![0.0; d];
    for (i, e) in delta_bar.iter_mut().enumerate() {
        *e = delta_full.get(i, i).max(0.0);
    }
    finish_reduction(p, u, u_inv, delta_bar, n)
}

fn finish_reduction(
    p: &AffineParams,
    u: DMatrix<f64>,
    u_inv: DMatrix<f64>,
    delta_bar: Vec<f64>,
    n: usize,
) -> Result<CanonicalAffine> {
    let d = p.d;
    let delta_min = if n == 0 {
        0.0
    } else {
        delta_bar[..n].iter().cloned().fold(f64::INFINITY, f64::min)
    };
    if n > 0 && delta_min < d as f64 - 1.0 - 1e-9 * (1.0 + delta_min.abs()) {
        return Err(SimError::ExistenceViolated(delta_min - (d as f64 - 1.0)));
    }
    let b_u = p.bmap.conjugate(&u, &u_inv);
    let x0 = p.x.congruence(&u_inv.transpose());
    Ok(CanonicalAffine { d, n, delta_bar, b_u, u, u_inv, delta_min, x: x0 })
}

impl CanonicalAffine {
    /// Reconstruction error of (u^T delta_bar u, u^T I^n u) against the
    /// original (alpha_bar, a^T a); both should be at the 1e-10 level.
    pub fn reconstruction_errors(&self, p: &AffineParams) -> (f64, f64) {
        let delta = SymMatrix::from_fn(self.d, |i, j| if i == j { self.delta_bar[i] } else { 0.0 });
        let alpha_rec = delta.congruence(&self.u.transpose());
        let in_mat = SymMatrix::identity_n(self.d, self.n);
        let ata_rec = in_mat.congruence(&self.u.transpose());
        let ata = SymMatrix::from_dense(&(p.a.transpose() * &p.a));
        (
            alpha_rec.sub(&p.alpha_bar).frobenius_norm()
                / (1.0 + p.alpha_bar.frobenius_norm()),
            ata_rec.sub(&ata).frobenius_norm() / (1.0 + ata.frobenius_norm()),
        )
    }
}

/// Exact flow of the affine ODE x'(t) = drift + B(x(t)); the Wishart drift
/// takes the closed matrix-exponential form, the dense map goes through the
/// exponential of the augmented packed-coordinate matrix.
pub struct OdeFlow {
    d: usize,
    t: f64,
    kind: OdeFlowKind,
}

enum OdeFlowKind {
    Identity,
    WishartDrift { m_t: DMatrix<f64>, integral: SymMatrix },
    Dense { exp_aug: DMatrix<f64> },
}

impl OdeFlow {
    pub fn new(drift: &SymMatrix, bmap: &LinMap, t: f64) -> Result<Self> {
        let d = drift.dim();
        if bmap.dim() != d {
            return Err(SimError::IncompatibleDims(d, bmap.dim()));
        }
        drift.check_finite("OdeFlow drift")?;
        if !t.is_finite() {
            return Err(SimError::NonFinite("OdeFlow t"));
        }
        if t == 0.0 {
            return Ok(Self { d, t, kind: OdeFlowKind::Identity });
        }
        let drift_is_zero = drift.packed().iter().all(|&v| v == 0.0);
        let kind = match bmap {
            LinMap::Wishart(b) if drift_is_zero && b.iter().all(|&v| v == 0.0) => {
                OdeFlowKind::Identity
            }
            LinMap::Wishart(b) => {
                let root = psd_sqrt(drift)?;
                let (integral, m_t) = gram_integral_with_mt(b, &root, t)?;
                OdeFlowKind::WishartDrift { m_t, integral }
            }
            LinMap::Dense { .. } => {
                let m = bmap.to_dense();
                let len = packed_len(d);
                let mut aug = DMatrix::<f64>::zeros(len + 1, len + 1);
                aug.view_mut((0, 0), (len, len)).copy_from(&m);
                for (row, v) in drift.packed().iter().enumerate() {
                    aug[(row, len)] = *v;
                }
                OdeFlowKind::Dense { exp_aug: matrix_exp(&(t * aug))? }
            }
        };
        Ok(Self { d, t, kind })
    }

    pub fn apply(&self, x: &SymMatrix) -> SymMatrix {
        match &self.kind {
            OdeFlowKind::Identity => x.clone(),
            OdeFlowKind::WishartDrift { m_t, integral } => x.congruence(m_t).add(integral),
            OdeFlowKind::Dense { exp_aug } => {
                let len = packed_len(self.d);
                let mut v = DMatrix::<f64>::zeros(len + 1, 1);
                for (row, val) in x.packed().iter().enumerate() {
                    v[(row, 0)] = *val;
                }
                v[(len, 0)] = 1.0;
                let out = exp_aug * v;
                let mut y = SymMatrix::zeros(self.d);
                let mut idx = 0;
                for i in 0..self.d {
                    for j in 0..=i {
                        y.set(i, j, out[(idx, 0)]);
                        idx += 1;
                    }
                }
                y
            }
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}

/// Exact affine ODE step (free-function form; `OdeFlow` caches the
/// exponential for repeated steps).
pub fn affine_ode_step(x: &SymMatrix, drift: &SymMatrix, bmap: &LinMap, t: f64) -> Result<SymMatrix> {
    Ok(OdeFlow::new(drift, bmap, t)?.apply(x))
}

fn drift_minus(delta_bar: &[f64], level: f64, n: usize) -> SymMatrix {
    let d = delta_bar.len();
    SymMatrix::from_fn(d, |i, j| {
        if i == j {
            let sub = if i < n { level } else { 0.0 };
            (delta_bar[i] - sub).max(0.0)
        } else {
            0.0
        }
    })
}

/// Potential second-order scheme for the affine diffusion: Strang (or
/// Bernoulli-randomized) composition of the exact affine ODE flow with the
/// composed order-2 canonical Wishart scheme of degree delta_min, conjugated
/// through the canonical reduction.
pub struct AffineScheme2 {
    ca: CanonicalAffine,
    dt: f64,
    spec: SchemeSpec,
    ode_half: OdeFlow,
    ode_full: OdeFlow,
}

impl AffineScheme2 {
    pub fn new(ca: &CanonicalAffine, dt: f64, spec: SchemeSpec) -> Result<Self> {
        spec.validate()?;
        if dt <= 0.0 {
            return Err(SimError::NegativeTime(dt));
        }
        let drift = drift_minus(&ca.delta_bar, ca.delta_min, ca.n);
        Ok(Self {
            ca: ca.clone(),
            dt,
            spec,
            ode_half: OdeFlow::new(&drift, &ca.b_u, 0.5 * dt)?,
            ode_full: OdeFlow::new(&drift, &ca.b_u, dt)?,
        })
    }

    fn wishart_part(&self, rng: &mut RngStream, y: &SymMatrix) -> Result<SymMatrix> {
        if self.ca.n == 0 {
            return Ok(y.clone());
        }
        let (y0, _) = psd_positive_part(y)?;
        let cp = CanonicalWishartParams::new(y0, self.ca.delta_min, self.ca.n)?;
        canonical_step_with(
            rng,
            &cp,
            self.dt,
            |r, p| self.spec.draw_cir(r, p),
            |r| self.spec.draw_gauss_like(r),
        )
    }

    fn step_canonical(&self, rng: &mut RngStream, y: &SymMatrix) -> Result<SymMatrix> {
        match self.spec.composition {
            super::Composition::BernoulliRandom => {
                if rng.bernoulli_half() {
                    let y1 = self.ode_full.apply(y);
                    self.wishart_part(rng, &y1)
                } else {
                    let y1 = self.wishart_part(rng, y)?;
                    Ok(self.ode_full.apply(&y1))
                }
            }
            _ => {
                let y1 = self.ode_half.apply(y);
                let y2 = self.wishart_part(rng, &y1)?;
                Ok(self.ode_half.apply(&y2))
            }
        }
    }
}

impl Stepper for AffineScheme2 {
    fn dim(&self) -> usize {
        self.ca.d
    }

    fn step(&self, rng: &mut RngStream, x: &SymMatrix, t: f64) -> Result<SymMatrix> {
        if t == 0.0 {
            return Ok(x.clone());
        }
        if (t - self.dt).abs() > 1e-12 * self.dt.max(1.0) {
            return Err(SimError::UnsupportedParams(
                "AffineScheme2 is bound to the step size it was built with".into(),
            ));
        }
        let mut x_eff = x.clone();
        if self.spec.epsilon_perturb > 0.0 {
            let eps = self.spec.epsilon_perturb * self.dt.powi(3);
            for i in 0..self.ca.d {
                x_eff.add_to(i, i, eps);
            }
        }
        let y = x_eff.congruence(&self.ca.u_inv.transpose());
        let stepped = self.step_canonical(rng, &y)?;
        clip_psd(stepped.congruence(&self.ca.u.transpose()))
    }
}

/// Faster second-order scheme, defined when delta_bar - d I^n is PSD: the
/// Wishart part of degree d is sampled in O(d^3) as
/// (c + sqrt(t) G I^n)^T (c + sqrt(t) G I^n) with c^T c = y.
pub struct AffineScheme2Bis {
    ca: CanonicalAffine,
    dt: f64,
    spec: SchemeSpec,
    ode_half: OdeFlow,
    ode_full: OdeFlow,
}

impl AffineScheme2Bis {
    pub fn new(ca: &CanonicalAffine, dt: f64, spec: SchemeSpec) -> Result<Self> {
        spec.validate()?;
        if dt <= 0.0 {
            return Err(SimError::NegativeTime(dt));
        }
        let d = ca.d;
        if ca.n > 0 && ca.delta_min < d as f64 - 1e-9 {
            return Err(SimError::NeedsDegreeAtLeastD { delta_min: ca.delta_min, d });
        }
        let drift = drift_minus(&ca.delta_bar, d as f64, ca.n);
        Ok(Self {
            ca: ca.clone(),
            dt,
            spec,
            ode_half: OdeFlow::new(&drift, &ca.b_u, 0.5 * dt)?,
            ode_full: OdeFlow::new(&drift, &ca.b_u, dt)?,
        })
    }

    fn wishart_part(&self, rng: &mut RngStream, y: &SymMatrix) -> Result<SymMatrix> {
        let d = self.ca.d;
        let n = self.ca.n;
        if n == 0 {
            return Ok(y.clone());
        }
        let (y0, _) = psd_positive_part(y)?;
        let ec = extended_cholesky(&y0, DEFAULT_PIVOT_TOL)?;
        let r = ec.rank();
        let factor = ec.factor(); // d x r, rows in pivoted order
        let perm = ec.perm();
        // c = [[factor^T], [0]] with columns mapped back through the
        // permutation, so that c^T c = y
        let mut m = DMatrix::<f64>::zeros(d, d);
        for k in 0..d {
            for row in 0..r {
                m[(row, perm[k])] = factor[(k, row)];
            }
        }
        let sqrt_t = self.dt.sqrt();
        for row in 0..d {
            for col in 0..n {
                m[(row, col)] += sqrt_t * self.spec.draw_gauss_like(rng);
            }
        }
        Ok(SymMatrix::from_dense(&(m.transpose() * &m)))
    }

    fn step_canonical(&self, rng: &mut RngStream, y: &SymMatrix) -> Result<SymMatrix> {
        match self.spec.composition {
            super::Composition::BernoulliRandom => {
                if rng.bernoulli_half() {
                    let y1 = self.ode_full.apply(y);
                    self.wishart_part(rng, &y1)
                } else {
                    let y1 = self.wishart_part(rng, y)?;
                    Ok(self.ode_full.apply(&y1))
                }
            }
            _ => {
                let y1 = self.ode_half.apply(y);
                let y2 = self.wishart_part(rng, &y1)?;
                Ok(self.ode_half.apply(&y2))
            }
        }
    }
}

impl Stepper for AffineScheme2Bis {
    fn dim(&self) -> usize {
        self.ca.d
    }

    fn step(&self, rng: &mut RngStream, x: &SymMatrix, t: f64) -> Result<SymMatrix> {
        if t == 0.0 {
            return Ok(x.clone());
        }
        if (t - self.dt).abs() > 1e-12 * self.dt.max(1.0) {
            return Err(SimError::UnsupportedParams(
                "AffineScheme2Bis is bound to the step size it was built with".into(),
            ));
        }
        let y = x.congruence(&self.ca.u_inv.transpose());
        let stepped = self.step_canonical(rng, &y)?;
        clip_psd(stepped.congruence(&self.ca.u.transpose()))
    }
}

/// Corrected Euler-Maruyama baseline: the square root is taken of the
/// positive part of the state. Output is symmetric but not necessarily PSD.
pub struct EulerStepper {
    p: AffineParams,
}

impl EulerStepper {
    pub fn new(p: &AffineParams) -> Self {
        Self { p: p.clone() }
    }
}

impl Stepper for EulerStepper {
    fn dim(&self) -> usize {
        self.p.d
    }

    fn step(&self, rng: &mut RngStream, x: &SymMatrix, t: f64) -> Result<SymMatrix> {
        corrected_euler_step(rng, &self.p, x, t)
    }
}

/// One corrected Euler-Maruyama step
/// x + (alpha_bar + B(x)) t + sqrt(x+) dW a + a^T dW^T sqrt(x+).
pub fn corrected_euler_step(
    rng: &mut RngStream,
    p: &AffineParams,
    x: &SymMatrix,
    t: f64,
) -> Result<SymMatrix> {
    if t == 0.0 {
        return Ok(x.clone());
    }
    if t < 0.0 {
        return Err(SimError::NegativeTime(t));
    }
    let d = p.d;
    let drift = p.alpha_bar.add(&p.bmap.apply(x));
    let (_, root) = psd_positive_part(x)?;
    let sqrt_t = t.sqrt();
    let dw = DMatrix::from_fn(d, d, |_, _| sqrt_t * rng.gauss());
    let m = root * dw * &p.a;
    let out = SymMatrix::from_fn(d, |i, j| {
        x.get(i, j) + t * drift.get(i, j) + m[(i, j)] + m[(j, i)]
    });
    out.check_finite("corrected_euler_step")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::{SchemeKind, SchemeSpec};

    fn random_psd(rng: &mut RngStream, d: usize, k: usize) -> SymMatrix {
        let g = DMatrix::from_fn(d, k, |_, _| rng.gauss());
        SymMatrix::from_dense(&(&g * g.transpose()))
    }

    #[test]
    fn reduce_identity_diffusion() {
        let d = 3;
        let alpha = 3.5;
        let p = AffineParams::new(
            SymMatrix::identity(d),
            SymMatrix::scaled_identity(d, alpha),
            DMatrix::identity(d, d),
            LinMap::zero(d),
        )
        .unwrap();
        let ca = canonical_affine_reduce(&p).unwrap();
        assert_eq!(ca.n, d);
        assert!((ca.delta_min - alpha).abs() < 1e-12);
        let (ea, eata) = ca.reconstruction_errors(&p);
        assert!(ea < 1e-10 && eata < 1e-10, "reconstruction errors {ea}, {eata}");
    }

    #[test]
    fn reduce_wishart_case_random_invertible_a() {
        let mut rng = RngStream::new(301, 0);
        for _ in 0..10 {
            let d = 3;
            let a = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    1.0 + rng.uniform()
                } else {
                    0.3 * rng.gauss()
                }
            });
            let ata = SymMatrix::from_dense(&(a.transpose() * &a));
            let alpha = d as f64 + rng.uniform();
            let p = AffineParams::new(
                SymMatrix::identity(d),
                ata.scale(alpha),
                a,
                LinMap::zero(d),
            )
            .unwrap();
            let ca = canonical_affine_reduce(&p).unwrap();
            assert_eq!(ca.n, d);
            let (ea, eata) = ca.reconstruction_errors(&p);
            assert!(ea < 1e-10 && eata < 1e-10, "errors {ea}, {eata}");
        }
    }

    #[test]
    fn reduce_rank_deficient_diffusion() {
        let d = 3;
        let mut a = DMatrix::<f64>::zeros(d, d);
        a[(0, 0)] = 1.0;
        let alpha_bar = SymMatrix::scaled_identity(d, 2.5);
        let p = AffineParams::new(SymMatrix::identity(d), alpha_bar, a, LinMap::zero(d)).unwrap();
        let ca = canonical_affine_reduce(&p).unwrap();
        assert_eq!(ca.n, 1);
        let (ea, eata) = ca.reconstruction_errors(&p);
        assert!(ea < 1e-10 && eata < 1e-10, "errors {ea}, {eata}");
        assert!(ca.delta_min >= d as f64 - 1.0);
    }

    #[test]
    fn reduce_general_nonwishart_drift_constant() {
        let mut rng = RngStream::new(302, 0);
        for _ in 0..10 {
            let d = 3;
            let a = DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    1.0 + 0.5 * rng.uniform()
                } else {
                    0.2 * rng.gauss()
                }
            });
            let ata = SymMatrix::from_dense(&(a.transpose() * &a));
            // alpha_bar = (d - 1 + eps) a^T a + PSD bump: not proportional
            let bump = random_psd(&mut rng, d, d).scale(0.2);
            let alpha_bar = ata.scale(d as f64 - 1.0 + 0.5).add(&bump);
            let p = AffineParams::new(SymMatrix::identity(d), alpha_bar, a, LinMap::zero(d))
                .unwrap();
            let ca = canonical_affine_reduce(&p).unwrap();
            let (ea, eata) = ca.reconstruction_errors(&p);
            assert!(ea < 1e-9 && eata < 1e-9, "errors {ea}, {eata}");
            assert!(ca.delta_min >= d as f64 - 1.0 - 1e-9);
        }
    }

    #[test]
    fn reduce_rejects_invalid_existence() {
        let d = 3;
        // alpha_bar too small: alpha_bar - (d-1) a^T a not PSD
        let res = AffineParams::new(
            SymMatrix::identity(d),
            SymMatrix::scaled_identity(d, 1.0),
            DMatrix::identity(d, d),
            LinMap::zero(d),
        );
        assert!(matches!(res, Err(SimError::ExistenceViolated(_))));
    }

    #[test]
    fn ode_step_zero_map_is_linear_drift() {
        let d = 3;
        let x = SymMatrix::identity(d);
        let drift = SymMatrix::from_fn(d, |i, j| if i == j { 0.5 } else { 0.1 });
        let y = affine_ode_step(&x, &drift, &LinMap::zero(d), 2.0).unwrap();
        let expect = x.add(&drift.scale(2.0));
        assert!(y.sub(&expect).frobenius_norm() < 1e-12);
    }

    #[test]
    fn ode_step_wishart_drift_closed_form() {
        // B(y) = b y + y b^T with b = beta I: x(t) = e^{2 beta t} x +
        // drift (e^{2 beta t} - 1) / (2 beta)
        let d = 2;
        let beta = 0.3;
        let t = 0.8;
        let x = SymMatrix::from_fn(d, |i, j| if i == j { 1.0 } else { 0.4 });
        let drift = SymMatrix::from_fn(d, |i, j| if i == j { 0.7 } else { 0.2 });
        let bmap = LinMap::Wishart(DMatrix::identity(d, d) * beta);
        let y = affine_ode_step(&x, &drift, &bmap, t).unwrap();
        let growth = (2.0 * beta * t).exp();
        let expect = x.scale(growth).add(&drift.scale((growth - 1.0) / (2.0 * beta)));
        assert!(y.sub(&expect).frobenius_norm() < 1e-10);
    }

    #[test]
    fn ode_step_derivative_check() {
        // forward difference (x(t+h) - x(t))/h ~ drift + B(x(t))
        let mut rng = RngStream::new(303, 0);
        let d = 3;
        let x = random_psd(&mut rng, d, d);
        let drift = random_psd(&mut rng, d, d).scale(0.5);
        let b = DMatrix::from_fn(d, d, |_, _| 0.4 * rng.gauss());
        for bmap in [
            LinMap::Wishart(b.clone()),
            LinMap::dense_from_fn(d, {
                let b = b.clone();
                move |y| {
                    let by = &b * y.to_dense();
                    SymMatrix::from_fn(y.dim(), |i, j| by[(i, j)] + by[(j, i)])
                }
            }),
        ] {
            let t = 0.4;
            let h = 1e-6;
            let xt = affine_ode_step(&x, &drift, &bmap, t).unwrap();
            let xth = affine_ode_step(&x, &drift, &bmap, t + h).unwrap();
            let fd = xth.sub(&xt).scale(1.0 / h);
            let expect = drift.add(&bmap.apply(&xt));
            let err = fd.sub(&expect).frobenius_norm();
            assert!(err < 1e-4 * (1.0 + expect.frobenius_norm()), "fd error {err}");
        }
    }

    #[test]
    fn dense_and_wishart_linmap_agree() {
        let mut rng = RngStream::new(304, 0);
        let d = 3;
        let b = DMatrix::from_fn(d, d, |_, _| rng.gauss());
        let wmap = LinMap::Wishart(b.clone());
        let dense = LinMap::Dense { d, m: wmap.to_dense() };
        for _ in 0..5 {
            let x = random_psd(&mut rng, d, 2);
            let err = wmap.apply(&x).sub(&dense.apply(&x)).frobenius_norm();
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn scheme2bis_rejects_low_degree() {
        let d = 3;
        let p = AffineParams::new(
            SymMatrix::identity(d),
            SymMatrix::scaled_identity(d, 2.2),
            DMatrix::identity(d, d),
            LinMap::zero(d),
        )
        .unwrap();
        let ca = canonical_affine_reduce(&p).unwrap();
        let res = AffineScheme2Bis::new(&ca, 0.1, SchemeSpec::new(SchemeKind::Order2Bis));
        assert!(matches!(res, Err(SimError::NeedsDegreeAtLeastD { .. })));
    }

    #[test]
    fn scheme2bis_wishart_part_mean() {
        // E[(c + sqrt(t) G I^n)^T (c + sqrt(t) G I^n)] = x + d t I^n
        let d = 3;
        let alpha = 3.5;
        let t = 0.2;
        let mut rng = RngStream::new(305, 0);
        let x = random_psd(&mut rng, d, d);
        let p = AffineParams::new(
            x.clone(),
            SymMatrix::scaled_identity(d, alpha),
            DMatrix::identity(d, d),
            LinMap::zero(d),
        )
        .unwrap();
        let ca = canonical_affine_reduce(&p).unwrap();
        let scheme = AffineScheme2Bis::new(&ca, t, SchemeSpec::new(SchemeKind::Order2Bis)).unwrap();
        let n = 200_000;
        let mut mean = SymMatrix::zeros(d);
        let mut sq = SymMatrix::zeros(d);
        for _ in 0..n {
            let y = scheme.wishart_part(&mut rng, &x).unwrap();
            mean = mean.add(&y);
            sq = sq.add(&SymMatrix::from_fn(d, |i, j| y.get(i, j) * y.get(i, j)));
        }
        mean = mean.scale(1.0 / n as f64);
        for i in 0..d {
            for j in 0..=i {
                let m = mean.get(i, j);
                let var = (sq.get(i, j) / n as f64 - m * m).max(0.0);
                let target = x.get(i, j) + if i == j { d as f64 * t } else { 0.0 };
                let band = 3.0 * (var / n as f64).sqrt() + 1e-12;
                assert!((m - target).abs() < band, "entry ({i},{j}): {m} vs {target}");
            }
        }
    }

    #[test]
    fn euler_deterministic_when_a_zero() {
        let d = 2;
        let x = SymMatrix::identity(d);
        let alpha_bar = SymMatrix::scaled_identity(d, 0.5);
        let b = DMatrix::from_row_slice(d, d, &[0.1, 0.0, 0.2, -0.3]);
        let p = AffineParams::new(
            x.clone(),
            alpha_bar.clone(),
            DMatrix::zeros(d, d),
            LinMap::Wishart(b.clone()),
        )
        .unwrap();
        let mut rng = RngStream::new(306, 0);
        let t = 0.3;
        let y = corrected_euler_step(&mut rng, &p, &x, t).unwrap();
        let bmap = LinMap::Wishart(b);
        let expect = x.add(&alpha_bar.add(&bmap.apply(&x)).scale(t));
        assert!(y.sub(&expect).frobenius_norm() < 1e-14);
    }

    #[test]
    fn euler_single_step_mean() {
        let d = 2;
        let mut rng = RngStream::new(307, 0);
        let x = random_psd(&mut rng, d, d);
        let a = DMatrix::from_fn(d, d, |_, _| 0.5 * rng.gauss());
        let ata = SymMatrix::from_dense(&(a.transpose() * &a));
        let alpha_bar = ata.scale(d as f64 + 0.5);
        let b = DMatrix::from_fn(d, d, |_, _| 0.3 * rng.gauss());
        let p = AffineParams::new(x.clone(), alpha_bar.clone(), a, LinMap::Wishart(b.clone()))
            .unwrap();
        let t = 0.25;
        let n = 200_000;
        let mut mean = SymMatrix::zeros(d);
        let mut sq = SymMatrix::zeros(d);
        for _ in 0..n {
            let y = corrected_euler_step(&mut rng, &p, &x, t).unwrap();
            mean = mean.add(&y);
            sq = sq.add(&SymMatrix::from_fn(d, |i, j| y.get(i, j) * y.get(i, j)));
        }
        mean = mean.scale(1.0 / n as f64);
        let expect = x.add(&alpha_bar.add(&LinMap::Wishart(b).apply(&x)).scale(t));
        for i in 0..d {
            for j in 0..=i {
                let m = mean.get(i, j);
                let var = (sq.get(i, j) / n as f64 - m * m).max(0.0);
                let band = 3.0 * (var / n as f64).sqrt() + 1e-12;
                assert!((m - expect.get(i, j)).abs() < band, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn drift_condition_holds_for_wishart_maps() {
        let mut rng = RngStream::new(308, 0);
        let d = 3;
        let b = DMatrix::from_fn(d, d, |_, _| rng.gauss());
        let worst = drift_condition_spot_check(&LinMap::Wishart(b), &mut rng, 1000);
        assert!(worst > -1e-10, "worst violation {worst}");
    }

    #[test]
    fn scheme2_t_zero_is_identity() {
        let d = 2;
        let p = AffineParams::new(
            SymMatrix::identity(d),
            SymMatrix::scaled_identity(d, 2.5),
            DMatrix::identity(d, d),
            LinMap::zero(d),
        )
        .unwrap();
        let ca = canonical_affine_reduce(&p).unwrap();
        let scheme = AffineScheme2::new(&ca, 0.5, SchemeSpec::new(SchemeKind::Order2)).unwrap();
        let mut rng = RngStream::new(309, 0);
        let x = SymMatrix::identity(d);
        let y = scheme.step(&mut rng, &x, 0.0).unwrap();
        assert_eq!(y, x);
    }
}
