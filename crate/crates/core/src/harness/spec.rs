use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::modmlp::{InitScheme, ModelConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Baseline,
    FreezeSweep,
    PSweep,
    DSweep,
    WdSweep,
    Perturb,
    Construct,
    AblateCircles,
    ForcedCircles,
    OdeFit,
    FitnessStats,
}

impl Protocol {
    pub const ALL: [Protocol; 11] = [
        Protocol::Baseline,
        Protocol::FreezeSweep,
        Protocol::PSweep,
        Protocol::DSweep,
        Protocol::WdSweep,
        Protocol::Perturb,
        Protocol::Construct,
        Protocol::AblateCircles,
        Protocol::ForcedCircles,
        Protocol::OdeFit,
        Protocol::FitnessStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::FreezeSweep => "freeze_sweep",
            Protocol::PSweep => "p_sweep",
            Protocol::DSweep => "d_sweep",
            Protocol::WdSweep => "wd_sweep",
            Protocol::Perturb => "perturb",
            Protocol::Construct => "construct",
            Protocol::AblateCircles => "ablate_circles",
            Protocol::ForcedCircles => "forced_circles",
            Protocol::OdeFit => "ode_fit",
            Protocol::FitnessStats => "fitness_stats",
        }
    }

    /// Protocols whose cells are the `p × d × weight_decay` grid.
    pub fn uses_training_grid(self) -> bool {
        matches!(
            self,
            Protocol::Baseline
                | Protocol::FreezeSweep
                | Protocol::PSweep
                | Protocol::DSweep
                | Protocol::WdSweep
                | Protocol::OdeFit
        )
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown protocol `{s}`")))
    }
}

/// Forced-circle experiments: which frequencies are kept at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForcedVariant {
    /// Strongest baseline survivor only.
    A,
    /// Two strongest baseline survivors.
    B,
    /// One random frequency.
    C,
    /// Two random frequencies.
    D,
}

impl ForcedVariant {
    pub fn n_kept(self) -> usize {
        match self {
            ForcedVariant::A | ForcedVariant::C => 1,
            ForcedVariant::B | ForcedVariant::D => 2,
        }
    }
}

impl FromStr for ForcedVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ForcedVariant::A),
            "B" | "b" => Ok(ForcedVariant::B),
            "C" | "c" => Ok(ForcedVariant::C),
            "D" | "d" => Ok(ForcedVariant::D),
            _ => Err(Error::domain(format!("unknown forced-circle variant `{s}` (expected A, B, C or D)"))),
        }
    }
}

impl fmt::Display for ForcedVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// One experiment: a protocol, its parameter grid and trial budget.
///
/// Unlisted fields take defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub seed: u64,
    pub trials: usize,
    pub p: Vec<usize>,
    pub d: Vec<usize>,
    pub weight_decay: Vec<f64>,
    pub steps: usize,
    pub learning_rate: f64,
    pub hidden_width: usize,
    pub init: InitScheme,
    pub train_fraction: f64,
    /// Record Fourier signals of the raw embedding gradient.
    pub record_gradients: bool,
    /// Perturbation factors applied to the chosen frequency's coefficients.
    pub scales: Vec<f64>,
    /// Frequency to perturb; `None` picks one per base embedding.
    pub frequency: Option<usize>,
    /// Construction ratios `r` of the second frequency's signal.
    pub ratios: Vec<f64>,
    /// Construction signal `s` of the strongest frequency; `None` uses `p·d`,
    /// the expected signal of a standard-normal embedding.
    pub construct_signal: Option<f64>,
    pub construct_eps: f64,
    /// Number of top survivors kept by circle ablation.
    pub n_circles: Vec<usize>,
    pub variants: Vec<ForcedVariant>,
    /// Distinct base embeddings for fitness statistics and perturbation.
    pub embeddings: usize,
    /// Step `i` of the signal-difference gradient fitness measure.
    pub gradient_step: usize,
    /// Lasso penalty; `None` uses the data-scaled default.
    pub lambda: Option<f64>,
    pub window: (usize, usize),
    /// Permit composite moduli in `p_sweep`.
    pub allow_composite: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            protocol: Protocol::Baseline,
            seed: 0,
            trials: 1,
            p: vec![59],
            d: vec![128],
            weight_decay: vec![0.5],
            steps: 30_000,
            learning_rate: 0.01,
            hidden_width: 100,
            init: InitScheme::default(),
            train_fraction: 0.8,
            record_gradients: false,
            scales: vec![0.0, 0.5, 1.0, 3.0, 10.0],
            frequency: None,
            ratios: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            construct_signal: None,
            construct_eps: crate::spectral::DEFAULT_CONSTRUCT_EPS,
            n_circles: vec![1, 2, 3],
            variants: vec![ForcedVariant::A, ForcedVariant::B, ForcedVariant::C, ForcedVariant::D],
            embeddings: 10,
            gradient_step: 4,
            lambda: None,
            window: (0, 1000),
            allow_composite: false,
            out: None,
        }
    }
}

pub(crate) fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|i| i * i <= n).all(|i| n % i != 0)
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol) -> Self {
        ExperimentSpec {
            protocol,
            ..Default::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::domain(format!("invalid experiment spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::domain("trial count must be >= 1"));
        }
        if self.p.is_empty() || self.d.is_empty() || self.weight_decay.is_empty() {
            return Err(Error::domain("p, d and weight_decay grids must be nonempty"));
        }
        for &p in &self.p {
            if p < 3 {
                return Err(Error::domain(format!("modulus p must satisfy p >= 3 (got p = {p})")));
            }
            if !is_prime(p) && !(self.protocol == Protocol::PSweep && self.allow_composite) {
                return Err(Error::domain(format!(
                    "p = {p} is composite; composite moduli need protocol p_sweep with allow_composite"
                )));
            }
        }
        let model = self.model_config(self.p[0], self.d[0], 0);
        model.validate()?;
        for &wd in &self.weight_decay {
            self.train_config(wd).validate()?;
        }
        match self.protocol {
            Protocol::Perturb if self.scales.is_empty() => return Err(Error::domain("scale grid is empty")),
            Protocol::Construct if self.ratios.is_empty() => return Err(Error::domain("ratio grid is empty")),
            Protocol::Construct if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) => {
                return Err(Error::domain("construction ratios must lie in [0, 1]"))
            }
            Protocol::AblateCircles if self.n_circles.is_empty() || self.n_circles.contains(&0) => {
                return Err(Error::domain("n_circles must be a nonempty list of positive counts"))
            }
            Protocol::ForcedCircles if self.variants.is_empty() => {
                return Err(Error::domain("forced_circles needs at least one variant"))
            }
            Protocol::FitnessStats | Protocol::Perturb if self.embeddings < 1 => {
                return Err(Error::domain("embeddings must be >= 1"))
            }
            Protocol::FitnessStats if self.steps < self.gradient_step + 1 => {
                return Err(Error::domain("steps must exceed gradient_step"))
            }
            _ => {}
        }
        if let Some(k) = self.frequency {
            let nf = crate::spectral::n_freq(self.p[0]);
            if k == 0 || k > nf {
                return Err(Error::domain(format!("frequency {k} outside 1..={nf}")));
            }
        }
        if self.window.0 >= self.window.1 {
            return Err(Error::domain("fit window must satisfy lo < hi"));
        }
        Ok(())
    }

    pub fn model_config(&self, p: usize, d: usize, seed: u64) -> ModelConfig {
        ModelConfig::new(p, d, seed)
            .with_hidden_width(self.hidden_width)
            .with_init(self.init)
    }

    pub fn train_config(&self, weight_decay: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay,
            steps: self.steps,
            train_fraction: self.train_fraction,
            record_gradients: self.record_gradients,
            ..TrainConfig::default()
        }
    }
}
