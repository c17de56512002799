//! Embedding + MLP model for `a + b mod p`, trained from scratch.
//!
//! The architecture is fixed: tokens `a` and `b` are looked up in a `p×d`
//! embedding, concatenated to `[E_a; E_b]`, and fed through two ReLU hidden
//! layers of width `h` to `p` logits. Gradients are hand-derived for this
//! chain (see [`loss_and_grads`]).

mod backprop;
mod optim;
mod train;

pub use backprop::{loss_and_grads, Batch, Scratch};
pub use optim::{adamw_step, AdamHyper, AdamState};
pub use train::{default_record_schedule, split_pairs, train, LossPoint, RunLog, RunSeeds, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result};

/// Seed streams derived from [`ModelConfig::seed`].
pub(crate) const EMBEDDING_STREAM: u64 = 1;
pub(crate) const MLP_STREAM: u64 = 2;
pub(crate) const SPLIT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub p: usize,
    pub d: usize,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "default_n_hidden")]
    pub n_hidden: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: InitScheme,
}

/// How MLP parameters are drawn. The embedding is always standard normal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    #[default]
    FanIn,
    /// Every MLP entry `N(0, 1)`.
    Unit,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fan_in" | "fan-in" | "fanin" => Ok(InitScheme::FanIn),
            "unit" => Ok(InitScheme::Unit),
            other => Err(Error::domain(format!("unknown init scheme `{other}` (expected fan_in or unit)"))),
        }
    }
}

fn default_hidden_width() -> usize {
    100
}

fn default_n_hidden() -> usize {
    2
}

impl ModelConfig {
    pub fn new(p: usize, d: usize, seed: u64) -> Self {
        ModelConfig {
            p,
            d,
            hidden_width: default_hidden_width(),
            n_hidden: default_n_hidden(),
            seed,
            init: InitScheme::default(),
        }
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    pub fn with_hidden_width(mut self, h: usize) -> Self {
        self.hidden_width = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 3 {
            return Err(Error::domain(format!("modulus p must satisfy p >= 3 (got p = {})", self.p)));
        }
        if self.d < 1 {
            return Err(Error::domain(format!("embedding dimension must be >= 1 (got d = {})", self.d)));
        }
        if self.hidden_width < 1 {
            return Err(Error::domain("hidden_width must be >= 1"));
        }
        if self.n_hidden != 2 {
            return Err(Error::domain(format!(
                "only two hidden layers are supported (got n_hidden = {})",
                self.n_hidden
            )));
        }
        Ok(())
    }

    /// Number of distinct circles, `⌊(p−1)/2⌋`.
    pub fn n_freq(&self) -> usize {
        (self.p - 1) / 2
    }
}

/// Trainable state. Also used as the gradient record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `p×d` token embedding.
    pub embedding: Matrix,
    /// `2d×h`; rows `0..d` act on `E_a`, rows `d..2d` on `E_b`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `h×h`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// `h×p`.
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

/// Names of the parameter tensors, in [`ModelParams::tensors`] order.
pub const TENSOR_NAMES: [&str; 7] = ["embedding", "w1", "b1", "w2", "b2", "w3", "b3"];

impl ModelParams {
    pub fn zeros(p: usize, d: usize, h: usize) -> Self {
        ModelParams {
            embedding: Matrix::zeros(p, d),
            w1: Matrix::zeros(2 * d, h),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, h),
            b2: vec![0.0; h],
            w3: Matrix::zeros(h, p),
            b3: vec![0.0; p],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.p(), self.d(), self.hidden_width())
    }

    pub fn p(&self) -> usize {
        self.embedding.rows()
    }

    pub fn d(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    /// Parameter tensors as flat slices, with their names.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("embedding", self.embedding.as_slice()),
            ("w1", self.w1.as_slice()),
            ("b1", &self.b1),
            ("w2", self.w2.as_slice()),
            ("b2", &self.b2),
            ("w3", self.w3.as_slice()),
            ("b3", &self.b3),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            ("embedding", self.embedding.as_mut_slice()),
            ("w1", self.w1.as_mut_slice()),
            ("b1", &mut self.b1),
            ("w2", self.w2.as_mut_slice()),
            ("b2", &mut self.b2),
            ("w3", self.w3.as_mut_slice()),
            ("b3", &mut self.b3),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Check shapes against a config.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let (p, d, h) = (cfg.p, cfg.d, cfg.hidden_width);
        let ok = self.embedding.shape() == (p, d)
            && self.w1.shape() == (2 * d, h)
            && self.b1.len() == h
            && self.w2.shape() == (h, h)
            && self.b2.len() == h
            && self.w3.shape() == (h, p)
            && self.b3.len() == p;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "parameter shapes do not match config (p={p}, d={d}, h={h})"
            )))
        }
    }

    /// Replace the embedding, keeping the MLP weights.
    pub fn with_embedding(mut self, embedding: Matrix) -> Result<Self> {
        if embedding.shape() != self.embedding.shape() {
            return Err(Error::domain(format!(
                "embedding shape {:?} does not match model {:?}",
                embedding.shape(),
                self.embedding.shape()
            )));
        }
        self.embedding = embedding;
        Ok(self)
    }
}

/// Standard-normal embedding drawn from the embedding stream of `seed`.
pub fn init_embedding(p: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(derive_seed(seed, EMBEDDING_STREAM));
    let mut e = Matrix::zeros(p, d);
    rng.fill_normal(e.as_mut_slice());
    e
}

/// Standard-normal embedding; MLP drawn according to `cfg.init`. The
/// embedding and the MLP use separate streams derived from `cfg.seed`, so a
/// fixed embedding can be paired with freshly drawn MLPs.
///
/// With `InitScheme::Unit` the initial logits are in the thousands and
/// AdamW at lr 0.01, wd 0.5 decays the network to a constant predictor, which
/// is why fan-in scaling is the default.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::zeros(cfg.p, cfg.d, cfg.hidden_width);
    params.embedding = init_embedding(cfg.p, cfg.d, cfg.seed);
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, MLP_STREAM));
    let fan_in = [2 * cfg.d, cfg.hidden_width, cfg.hidden_width];
    let mut layer = 0;
    for (name, t) in params.tensors_mut() {
        if name == "embedding" {
            continue;
        }
        match cfg.init {
            InitScheme::Unit => rng.fill_normal(t),
            InitScheme::FanIn if name.starts_with('w') => {
                rng.fill_normal(t);
                let scale = 1.0 / (fan_in[layer] as f64).sqrt();
                t.iter_mut().for_each(|x| *x *= scale);
                layer += 1;
            }
            InitScheme::FanIn => {}
        }
    }
    Ok(params)
}

/// Logits for a single input pair.
pub fn forward(params: &ModelParams, a: usize, b: usize) -> Result<Vec<f64>> {
    let p = params.p();
    if a >= p || b >= p {
        return Err(Error::domain(format!("token out of range: ({a}, {b}) with p = {p}")));
    }
    let d = params.d();
    let h = params.hidden_width();
    let mut z1 = params.b1.clone();
    for (k, x) in params.embedding.row(a).iter().chain(params.embedding.row(b)).enumerate() {
        debug_assert!(k < 2 * d);
        for (z, w) in z1.iter_mut().zip(params.w1.row(k)) {
            *z += x * w;
        }
    }
    let h1: Vec<f64> = z1.into_iter().map(relu).collect();
    let mut z2 = params.b2.clone();
    for (k, x) in h1.iter().enumerate() {
        for (z, w) in z2.iter_mut().zip(params.w2.row(k)) {
            *z += x * w;
        }
    }
    let h2: Vec<f64> = z2.into_iter().map(relu).collect();
    let mut logits = params.b3.clone();
    for k in 0..h {
        let x = h2[k];
        for (z, w) in logits.iter_mut().zip(params.w3.row(k)) {
            *z += x * w;
        }
    }
    Ok(logits)
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
