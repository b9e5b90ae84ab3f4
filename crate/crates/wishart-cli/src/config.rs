//! Experiment configuration: JSON documents with matrices as nested arrays,
//! validated into engine types before any sampling starts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wishart_sim::matkernel::SymMatrix;
use wishart_sim::schemes::{
    AffineParams, CirMode, Composition, GaussMode, GourierouxModel, LinMap, SchemeKind, SchemeSpec,
};
use wishart_sim::wishart_exact::WishartParams;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub description: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    pub t: f64,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub functional: FunctionalConfig,
}

fn default_n_grid() -> Vec<usize> {
    vec![1]
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Wishart(WishartConfig),
    Affine(AffineConfig),
    Gourieroux(GourierouxConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WishartConfig {
    pub d: usize,
    pub x: Vec<Vec<f64>>,
    pub alpha: f64,
    pub b: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineConfig {
    pub d: usize,
    pub x: Vec<Vec<f64>>,
    pub alpha_bar: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    /// drift map B(y) = b y + y b^T
    #[serde(default)]
    pub b_wishart: Option<Vec<Vec<f64>>>,
    /// dense d(d+1)/2 square coefficient array on packed coordinates
    #[serde(default)]
    pub b_dense: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GourierouxConfig {
    pub rate: f64,
    pub s0: Vec<f64>,
    pub wishart: WishartConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SchemeConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub cir_mode: Option<String>,
    #[serde(default)]
    pub gauss_mode: Option<String>,
    #[serde(default)]
    pub composition: Option<String>,
    #[serde(default)]
    pub epsilon_perturb: Option<f64>,
    #[serde(default)]
    pub force: Option<bool>,
}

fn default_kind() -> String {
    "order2".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionalConfig {
    /// E[exp(i Tr(v X_T))], the table orientation
    CharfnPoint { v: Vec<Vec<f64>> },
    /// E[max over the time grid of Tr(X)]
    MaxTrace,
    /// E[e^{-rT} (K - max_l S_T^l)^+]
    PutOnMax { strike: f64 },
}

fn dense_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::config(format!(
            "{what}: expected a {d} x {d} nested array, got {} rows",
            rows.len()
        )));
    }
    let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CliError::config(format!("{what}: non-finite entry")));
    }
    Ok(m)
}

fn sym_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<SymMatrix, CliError> {
    let m = dense_from_rows(rows, d, what)?;
    let asym = (0..d)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-10 * (1.0 + m.norm()) {
        return Err(CliError::config(format!("{what}: matrix is not symmetric")));
    }
    Ok(SymMatrix::from_dense(&m))
}

impl WishartConfig {
    pub fn build(&self) -> Result<WishartParams, CliError> {
        let x = sym_from_rows(&self.x, self.d, "model.x")?;
        let b = dense_from_rows(&self.b, self.d, "model.b")?;
        let a = dense_from_rows(&self.a, self.d, "model.a")?;
        WishartParams::new(x, self.alpha, b, a)
            .map_err(|e| CliError::config(format!("invalid Wishart parameters: {e}")))
    }
}

impl AffineConfig {
    pub fn build(&self) -> Result<AffineParams, CliError> {
        let d = self.d;
        let x = sym_from_rows(&self.x, d, "model.x")?;
        let alpha_bar = sym_from_rows(&self.alpha_bar, d, "model.alpha_bar")?;
        let a = dense_from_rows(&self.a, d, "model.a")?;
        let bmap = match (&self.b_wishart, &self.b_dense) {
            (Some(b), None) => LinMap::Wishart(dense_from_rows(b, d, "model.b_wishart")?),
            (None, Some(rows)) => {
                let m_len = d * (d + 1) / 2;
                if rows.len() != m_len || rows.iter().any(|r| r.len() != m_len) {
                    return Err(CliError::config(format!(
                        "model.b_dense: expected {m_len} x {m_len} nested array"
                    )));
                }
                LinMap::Dense { d, m: DMatrix::from_fn(m_len, m_len, |i, j| rows[i][j]) }
            }
            (None, None) => LinMap::zero(d),
            (Some(_), Some(_)) => {
                return Err(CliError::config(
                    "model: give at most one of b_wishart / b_dense".to_string(),
                ))
            }
        };
        AffineParams::new(x, alpha_bar, a, bmap)
            .map_err(|e| CliError::config(format!("invalid affine parameters: {e}")))
    }
}

impl GourierouxConfig {
    pub fn build(&self) -> Result<GourierouxModel, CliError> {
        let w = self.wishart.build()?;
        GourierouxModel::new(self.rate, self.s0.clone(), w)
            .map_err(|e| CliError::config(format!("invalid model: {e}")))
    }
}

impl SchemeConfig {
    pub fn build(&self) -> Result<SchemeSpec, CliError> {
        let kind = match self.kind.as_str() {
            "exact" => SchemeKind::Exact,
            "order2" => SchemeKind::Order2,
            "order2bis" => SchemeKind::Order2Bis,
            "order3" => SchemeKind::Order3,
            "euler" => SchemeKind::Euler,
            other => return Err(CliError::config(format!("unknown scheme kind '{other}'"))),
        };
        let mut spec = SchemeSpec::new(kind);
        if let Some(c) = &self.cir_mode {
            spec.cir_mode = match c.as_str() {
                "exact" => CirMode::Exact,
                "fast" => CirMode::Fast,
                other => return Err(CliError::config(format!("unknown cir_mode '{other}'"))),
            };
        }
        if let Some(g) = &self.gauss_mode {
            spec.gauss_mode = match g.as_str() {
                "gaussian" => GaussMode::Gaussian,
                "match3" => GaussMode::Match3,
                "match5" => GaussMode::Match5,
                other => return Err(CliError::config(format!("unknown gauss_mode '{other}'"))),
            };
        }
        if let Some(c) = &self.composition {
            spec.composition = match c.as_str() {
                "strang_half" => Composition::StrangHalf,
                "sequential" => Composition::Sequential,
                "bernoulli_random" => Composition::BernoulliRandom,
                other => return Err(CliError::config(format!("unknown composition '{other}'"))),
            };
        }
        if let Some(e) = self.epsilon_perturb {
            spec.epsilon_perturb = e;
        }
        if let Some(f) = self.force {
            spec.force = f;
        }
        spec.validate().map_err(|e| CliError::config(format!("invalid scheme: {e}")))?;
        Ok(spec)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(CliError::config(format!("t must be positive, got {}", self.t)));
        }
        if self.n_grid.is_empty() {
            return Err(CliError::config("n_grid must be nonempty".to_string()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid.contains(&0) {
            return Err(CliError::config(
                "n_grid must be strictly increasing and positive".to_string(),
            ));
        }
        if self.n_paths < 2 {
            return Err(CliError::config("n_paths must be at least 2".to_string()));
        }
        // build everything once up front so bad configs fail before sampling
        self.scheme.build()?;
        match &self.model {
            ModelConfig::Wishart(w) => {
                w.build()?;
            }
            ModelConfig::Affine(a) => {
                a.build()?;
            }
            ModelConfig::Gourieroux(g) => {
                g.build()?;
            }
        }
        match (&self.functional, &self.model) {
            (FunctionalConfig::CharfnPoint { v }, m) => {
                let d = match m {
                    ModelConfig::Wishart(w) => w.d,
                    ModelConfig::Affine(a) => a.d,
                    ModelConfig::Gourieroux(g) => g.wishart.d,
                };
                sym_from_rows(v, d, "functional.v")?;
            }
            (FunctionalConfig::PutOnMax { strike }, ModelConfig::Gourieroux(_)) => {
                if *strike < 0.0 {
                    return Err(CliError::config("strike must be nonnegative".to_string()));
                }
            }
            (FunctionalConfig::PutOnMax { .. }, _) => {
                return Err(CliError::config(
                    "put_on_max requires the gourieroux model".to_string(),
                ));
            }
            (FunctionalConfig::MaxTrace, ModelConfig::Gourieroux(_)) => {
                return Err(CliError::config(
                    "max_trace applies to matrix models only".to_string(),
                ));
            }
            (FunctionalConfig::MaxTrace, _) => {}
        }
        Ok(())
    }

    pub fn charfn_v(&self) -> Result<SymMatrix, CliError> {
        let d = match &self.model {
            ModelConfig::Wishart(w) => w.d,
            ModelConfig::Affine(a) => a.d,
            ModelConfig::Gourieroux(g) => g.wishart.d,
        };
        match &self.functional {
            FunctionalConfig::CharfnPoint { v } => sym_from_rows(v, d, "functional.v"),
            _ => Err(CliError::config("this command needs a charfn_point functional".to_string())),
        }
    }
}
