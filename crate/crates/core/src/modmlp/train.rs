use serde::{Deserialize, Serialize};

use crate::dynamics::SignalTrajectory;
use crate::rng::{derive_seed, SplitMix64};
use crate::spectral::dft_embedding;
use crate::{Error, Result};

use super::backprop::{batch_loss, loss_and_grads_into, Batch, Scratch};
use super::optim::{adamw_step, AdamHyper, AdamState};
use super::{init_params, ModelConfig, ModelParams, EMBEDDING_STREAM, MLP_STREAM, SPLIT_STREAM};

/// Steps recorded every step up to this point, then every [`SPARSE_EVERY`].
pub const DENSE_UNTIL: usize = 1000;
pub const SPARSE_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub train_fraction: f64,
    pub freeze_embedding: bool,
    /// Steps at which signals and losses are recorded. Empty selects
    /// [`default_record_schedule`] for `steps`.
    pub record_schedule: Vec<usize>,
    /// Also record the Fourier signals of the raw embedding gradient.
    pub record_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 0.5,
            steps: 30_000,
            train_fraction: 0.8,
            freeze_embedding: false,
            record_schedule: Vec::new(),
            record_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn frozen(mut self) -> Self {
        self.freeze_embedding = true;
        self
    }

    /// The record schedule actually used.
    pub fn schedule(&self) -> Vec<usize> {
        if self.record_schedule.is_empty() {
            default_record_schedule(self.steps)
        } else {
            self.record_schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain(format!("learning_rate must be > 0 (got {})", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::domain(format!("weight_decay must be >= 0 (got {})", self.weight_decay)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::domain(format!(
                "train_fraction must lie in (0, 1] (got {})",
                self.train_fraction
            )));
        }
        let sched = self.schedule();
        if sched.first() != Some(&0) {
            return Err(Error::domain("record_schedule must start at step 0"));
        }
        if sched.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("record_schedule must be strictly increasing"));
        }
        if sched.last().is_some_and(|&s| s > self.steps) {
            return Err(Error::domain("record_schedule extends past the final step"));
        }
        Ok(())
    }
}

/// Every step through [`DENSE_UNTIL`], then every [`SPARSE_EVERY`] steps,
/// always ending at `steps`.
pub fn default_record_schedule(steps: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..=steps.min(DENSE_UNTIL)).collect();
    let mut t = DENSE_UNTIL + SPARSE_EVERY;
    while t <= steps {
        s.push(t);
        t += SPARSE_EVERY;
    }
    if *s.last().unwrap() != steps {
        s.push(steps);
    }
    s
}

/// Random train/test split of all `p²` pairs.
pub fn split_pairs(p: usize, train_fraction: f64, seed: u64) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
    SplitMix64::new(seed).shuffle(&mut pairs);
    let n_train = ((train_fraction * pairs.len() as f64).round() as usize).clamp(1, pairs.len());
    let test = pairs.split_off(n_train);
    (pairs, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub model_seed: u64,
    pub embedding_seed: u64,
    pub mlp_seed: u64,
    pub split_seed: u64,
}

impl RunSeeds {
    pub fn from_model_seed(seed: u64) -> Self {
        RunSeeds {
            model_seed: seed,
            embedding_seed: derive_seed(seed, EMBEDDING_STREAM),
            mlp_seed: derive_seed(seed, MLP_STREAM),
            split_seed: derive_seed(seed, SPLIT_STREAM),
        }
    }
}

/// Everything recorded by one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: RunSeeds,
    pub trajectory: SignalTrajectory,
    /// Fourier signals of the backprop embedding gradient (no decay term),
    /// when requested.
    pub gradient_trajectory: Option<SignalTrajectory>,
    pub loss_curve: Vec<LossPoint>,
    pub final_params: ModelParams,
}

impl RunLog {
    pub fn final_signals(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory always has the step-0 record")
    }

    pub fn initial_signals(&self) -> &[f64] {
        self.trajectory.first().expect("trajectory always has the step-0 record")
    }

    pub fn final_loss(&self) -> LossPoint {
        *self.loss_curve.last().expect("loss curve always has the step-0 record")
    }
}

/// Full-batch AdamW training on the train split of `a + b mod p`.
///
/// Records are taken *before* the update of their step, so the step-0
/// record describes the initial parameters and the step-`steps` record the
/// final ones.
pub fn train(model_cfg: &ModelConfig, train_cfg: &TrainConfig, initial: Option<ModelParams>) -> Result<RunLog> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let mut params = match initial {
        Some(p) => {
            p.check_shapes(model_cfg)?;
            p
        }
        None => init_params(model_cfg)?,
    };
    if !params.is_finite() {
        return Err(Error::domain("initial parameters contain non-finite values"));
    }
    let p = model_cfg.p;
    let seeds = RunSeeds::from_model_seed(model_cfg.seed);
    let (train_pairs, test_pairs) = split_pairs(p, train_cfg.train_fraction, seeds.split_seed);
    let train_batch = Batch::from_pairs(&train_pairs, p);
    // With no held-out pairs the "test" loss is measured on the training pairs.
    let test_batch = if test_pairs.is_empty() {
        train_batch.clone()
    } else {
        Batch::from_pairs(&test_pairs, p)
    };

    let schedule = train_cfg.schedule();
    let n_freq = model_cfg.n_freq();
    let mut trajectory = SignalTrajectory::new(n_freq);
    let mut gradient_trajectory = train_cfg.record_gradients.then(|| SignalTrajectory::new(n_freq));
    let mut loss_curve = Vec::with_capacity(schedule.len());

    let mut hyper = AdamHyper::new(train_cfg.learning_rate, train_cfg.weight_decay);
    hyper.freeze_embedding = train_cfg.freeze_embedding;
    let need_embedding_grad = !train_cfg.freeze_embedding || train_cfg.record_gradients;
    let mut state = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut scratch = Scratch::new();
    let mut test_scratch = Scratch::new();
    let mut next_record = 0;

    for t in 0..=train_cfg.steps {
        let recording = schedule.get(next_record) == Some(&t);
        let updating = t < train_cfg.steps;
        let loss = if updating || (recording && train_cfg.record_gradients) {
            loss_and_grads_into(&params, &train_batch, &mut scratch, &mut grads, need_embedding_grad)
        } else if recording {
            batch_loss(&params, &train_batch, &mut scratch)?
        } else {
            break;
        };
        if !loss.is_finite() {
            return Err(Error::numeric(format!("training loss became non-finite at step {t}")));
        }
        if recording {
            trajectory.push(t, &dft_embedding(&params.embedding).signals())?;
            if let Some(gt) = gradient_trajectory.as_mut() {
                gt.push(t, &dft_embedding(&grads.embedding).signals())?;
            }
            let test_loss = batch_loss(&params, &test_batch, &mut test_scratch)?;
            loss_curve.push(LossPoint {
                step: t,
                train_loss: loss,
                test_loss,
            });
            next_record += 1;
        }
        if updating {
            adamw_step(&mut params, &grads, &mut state, &hyper, t as u64 + 1)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("{m} (step {t})")),
                    other => other,
                })?;
            if t > 0 && t % 5000 == 0 {
                log::debug!("p={} d={} seed={} step {t}: train loss {loss:.3e}", p, model_cfg.d, model_cfg.seed);
            }
        }
    }

    Ok(RunLog {
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        seeds,
        trajectory,
        gradient_trajectory,
        loss_curve,
        final_params: params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ModelConfig, TrainConfig) {
        (ModelConfig::new(7, 4, 3).with_hidden_width(8), TrainConfig::default().with_steps(40))
    }

    #[test]
    fn default_schedule_shape() {
        let s = default_record_schedule(30_000);
        assert_eq!(&s[..3], &[0, 1, 2]);
        assert_eq!(s[1000], 1000);
        assert_eq!(s[1001], 1100);
        assert_eq!(*s.last().unwrap(), 30_000);
        assert_eq!(s.len(), 1001 + 290);
        assert_eq!(default_record_schedule(0), vec![0]);
        assert_eq!(*default_record_schedule(1050).last().unwrap(), 1050);
    }

    #[test]
    fn split_is_a_partition() {
        let (tr, te) = split_pairs(59, 0.8, 1);
        assert_eq!(tr.len(), 2785);
        assert_eq!(tr.len() + te.len(), 59 * 59);
        let mut all: Vec<_> = tr.iter().chain(&te).cloned().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 59 * 59);
    }

    #[test]
    fn zero_steps_records_initial_state() {
        let (m, t) = tiny();
        let init = init_params(&m).unwrap();
        let log = train(&m, &t.with_steps(0), Some(init.clone())).unwrap();
        assert_eq!(log.trajectory.len(), 1);
        assert_eq!(log.final_params, init);
        assert_eq!(log.trajectory.row(0), &dft_embedding(&init.embedding).signals()[..]);
        assert_eq!(log.loss_curve.len(), 1);
    }

    #[test]
    fn runs_are_deterministic_and_follow_schedule() {
        let (m, t) = tiny();
        let a = train(&m, &t, None).unwrap();
        let b = train(&m, &t, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.steps(), &t.schedule()[..]);
        assert!(a.loss_curve.iter().all(|l| l.train_loss >= 0.0 && l.test_loss.is_finite()));
    }

    #[test]
    fn frozen_embedding_is_bit_identical() {
        let (m, t) = tiny();
        let init = init_params(&m).unwrap();
        let log = train(&m, &t.frozen(), Some(init.clone())).unwrap();
        assert_eq!(log.final_params.embedding, init.embedding);
        assert_ne!(log.final_params.w2, init.w2);
    }

    #[test]
    fn gradient_trajectory_is_recorded_on_request() {
        let (m, mut t) = tiny();
        t.record_gradients = true;
        let log = train(&m, &t, None).unwrap();
        let g = log.gradient_trajectory.unwrap();
        assert_eq!(g.steps(), log.trajectory.steps());
        assert!(g.row(0).iter().any(|&x| x > 0.0));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let (m, t) = tiny();
        let mut bad = t.clone();
        bad.record_schedule = vec![0, 5, 5];
        assert!(train(&m, &bad, None).unwrap_err().is_domain());
        bad.record_schedule = vec![1, 5];
        assert!(train(&m, &bad, None).is_err());
        bad.record_schedule = vec![0, 41];
        assert!(train(&m, &bad, None).is_err());
        let mut bad = t.clone();
        bad.train_fraction = 0.0;
        assert!(train(&m, &bad, None).is_err());
        let wrong = init_params(&ModelConfig::new(7, 5, 3).with_hidden_width(8)).unwrap();
        assert!(train(&m, &t, Some(wrong)).unwrap_err().is_domain());
    }
}
