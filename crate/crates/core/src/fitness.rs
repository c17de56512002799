//! Survival detection and the statistics that relate a frequency's state
//! at initialization ("fitness") to whether it survives training.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::SignalTrajectory;
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::spectral::dft_embedding;
use crate::{Error, Result};

/// Signals below this are clamped before taking logarithms.
const SIGNAL_FLOOR: f64 = 1e-30;
/// Number of leading signals searched for a separating gap.
const GAP_WINDOW: usize = 10;
/// Minimum gap, in decades, that counts as a separation.
const MIN_GAP_DECADES: f64 = 1.0;
/// Fallback: survive iff signal ≥ this fraction of the maximum.
const FALLBACK_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Largest log-gap among the leading signals was at least one decade.
    LogGap,
    /// No separation: fraction-of-maximum rule.
    FractionOfMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub trial: u64,
    /// Index `k − 1` is frequency `k`.
    pub survived: Vec<bool>,
    pub final_signals: Vec<f64>,
    pub rule: ThresholdRule,
    /// Signals strictly above this value survive.
    pub threshold: f64,
    /// Size of the separating gap in decades (largest gap found).
    pub gap_decades: f64,
}

impl SurvivalRecord {
    pub fn with_trial(mut self, trial: u64) -> Self {
        self.trial = trial;
        self
    }

    /// Surviving frequencies (1-based), ascending.
    pub fn survivors(&self) -> Vec<usize> {
        self.survived.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i + 1).collect()
    }

    pub fn dead(&self) -> Vec<usize> {
        self.survived.iter().enumerate().filter(|(_, &s)| !s).map(|(i, _)| i + 1).collect()
    }

    pub fn n_survivors(&self) -> usize {
        self.survived.iter().filter(|&&s| s).count()
    }

    pub fn n_freq(&self) -> usize {
        self.survived.len()
    }

    /// Surviving frequencies ordered by descending final signal.
    pub fn survivors_by_signal(&self) -> Vec<usize> {
        let mut s = self.survivors();
        s.sort_by(|&a, &b| self.final_signals[b - 1].total_cmp(&self.final_signals[a - 1]));
        s
    }
}

/// Split frequencies into survivors and dead ones from their final signals.
///
/// The leading `min(10, K)` signals are sorted and the largest gap between
/// consecutive `log10` values is located; if it spans at least one decade,
/// everything above it survives. Otherwise a frequency survives iff its
/// signal is at least a tenth of the maximum.
pub fn survival_detect(final_signals: &[f64]) -> Result<SurvivalRecord> {
    if final_signals.len() < 2 {
        return Err(Error::domain("survival detection needs at least 2 frequencies"));
    }
    if let Some(x) = final_signals.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain(format!("signals must be finite and >= 0 (found {x})")));
    }
    let max = final_signals.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::domain("no signal"));
    }
    let mut sorted = final_signals.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let window = GAP_WINDOW.min(sorted.len());
    let logs: Vec<f64> = sorted[..window].iter().map(|s| s.max(SIGNAL_FLOOR).log10()).collect();
    let (gap_at, gap) = logs
        .windows(2)
        .map(|w| w[0] - w[1])
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, g)| if g > best.1 { (i, g) } else { best });

    let (rule, threshold) = if gap >= MIN_GAP_DECADES {
        // Geometric midpoint of the gap.
        let hi = sorted[gap_at].max(SIGNAL_FLOOR);
        let lo = sorted[gap_at + 1].max(SIGNAL_FLOOR);
        (ThresholdRule::LogGap, (hi * lo).sqrt())
    } else {
        (ThresholdRule::FractionOfMax, FALLBACK_FRACTION * max)
    };
    let survived = match rule {
        ThresholdRule::LogGap => final_signals.iter().map(|&s| s > threshold).collect(),
        ThresholdRule::FractionOfMax => final_signals.iter().map(|&s| s >= threshold).collect(),
    };
    Ok(SurvivalRecord {
        trial: 0,
        survived,
        final_signals: final_signals.to_vec(),
        rule,
        threshold,
        gap_decades: gap.max(0.0),
    })
}

/// Signal change over one step: `signal_k(step+1) − signal_k(step)`.
/// Weight decay is included, since the recorded signals already reflect it.
pub fn initial_gradient_signal(traj: &SignalTrajectory, step: usize) -> Result<Vec<f64>> {
    let (Some(before), Some(after)) = (traj.at_step(step), traj.at_step(step + 1)) else {
        return Err(Error::domain(format!("steps {step} and {} must both be recorded", step + 1)));
    };
    Ok(after.iter().zip(before).map(|(a, b)| a - b).collect())
}

/// Per-frequency signals of the raw backprop embedding gradient.
pub fn fourier_gradient_projection(grad_embedding: &Matrix) -> Vec<f64> {
    dft_embedding(grad_embedding).signals()
}

/// Fitness measures of every frequency at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessFeatures {
    pub initial_signal: Vec<f64>,
    pub initial_gradient: Vec<f64>,
    pub initial_circularity: Option<Vec<f64>>,
}

impl FitnessFeatures {
    /// Signals at step 0 and the one-step signal change at `gradient_step`.
    pub fn from_trajectory(traj: &SignalTrajectory, gradient_step: usize) -> Result<Self> {
        let initial_signal = traj
            .at_step(0)
            .ok_or_else(|| Error::domain("step 0 not recorded"))?
            .to_vec();
        let initial_gradient = initial_gradient_signal(traj, gradient_step)?;
        Ok(FitnessFeatures {
            initial_signal,
            initial_gradient,
            initial_circularity: None,
        })
    }
}

/// Survival rate of one frequency with a Wald 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRate {
    pub freq: usize,
    pub trials: usize,
    pub survivals: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Normal-approximation 95% interval `rate ± 1.96·√(rate(1−rate)/n)`,
/// clipped to `[0, 1]`.
pub fn wald_interval(successes: usize, trials: usize) -> (f64, f64, f64) {
    let n = trials as f64;
    let rate = successes as f64 / n;
    let half = 1.96 * (rate * (1.0 - rate) / n).sqrt();
    (rate, (rate - half).max(0.0), (rate + half).min(1.0))
}

/// Per-frequency survival rates across trials.
pub fn survival_rates(records: &[SurvivalRecord]) -> Result<Vec<SurvivalRate>> {
    let first = records.first().ok_or_else(|| Error::domain("no survival records"))?;
    let k = first.n_freq();
    if records.iter().any(|r| r.n_freq() != k) {
        return Err(Error::domain("survival records disagree on the number of frequencies"));
    }
    let n = records.len();
    Ok((0..k)
        .map(|i| {
            let survivals = records.iter().filter(|r| r.survived[i]).count();
            let (rate, ci_low, ci_high) = wald_interval(survivals, n);
            SurvivalRate {
                freq: i + 1,
                trials: n,
                survivals,
                rate,
                ci_low,
                ci_high,
            }
        })
        .collect())
}

/// Survival summary CSV:
/// `freq,trials,survivals,rate,ci_low,ci_high,init_signal_mean,init_grad_mean`.
pub fn survival_summary_csv(rates: &[SurvivalRate], init_signal_mean: &[f64], init_grad_mean: &[f64]) -> String {
    let mut out = String::from("freq,trials,survivals,rate,ci_low,ci_high,init_signal_mean,init_grad_mean\n");
    for (i, r) in rates.iter().enumerate() {
        let s = init_signal_mean.get(i).copied().unwrap_or(f64::NAN);
        let g = init_grad_mean.get(i).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:e},{:e}",
            r.freq, r.trials, r.survivals, r.rate, r.ci_low, r.ci_high, s, g
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided permutation p-value.
    pub p_value: f64,
}

/// Shuffles used by the permutation test when exhaustive enumeration is too large.
pub const PERMUTATIONS: usize = 10_000;
const PEARSON_SEED: u64 = 0x9ea2_5011;

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Sample correlation with a permutation p-value (exhaustive when `n! ≤ 10000`).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    pearson_seeded(x, y, PEARSON_SEED)
}

pub fn pearson_seeded(x: &[f64], y: &[f64], seed: u64) -> Result<Pearson> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::domain(format!(
            "pearson needs equal lengths >= 3 (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::domain("zero variance"));
    }
    let r = correlation(x, y);
    let target = r.abs() - 1e-12;
    let n = x.len();
    let factorial = (1..=n).try_fold(1usize, |acc, i| acc.checked_mul(i).filter(|&f| f <= PERMUTATIONS));
    let p_value = if let Some(total) = factorial {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut hits = 0usize;
        let mut buf = vec![0.0; n];
        loop {
            for (b, &i) in buf.iter_mut().zip(&perm) {
                *b = y[i];
            }
            if correlation(x, &buf).abs() >= target {
                hits += 1;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        hits as f64 / total as f64
    } else {
        let mut rng = SplitMix64::new(seed);
        let mut shuffled = y.to_vec();
        let mut hits = 0usize;
        for _ in 0..PERMUTATIONS {
            rng.shuffle(&mut shuffled);
            if correlation(x, &shuffled).abs() >= target {
                hits += 1;
            }
        }
        (hits + 1) as f64 / (PERMUTATIONS + 1) as f64
    };
    Ok(Pearson { r, p_value })
}

/// Lexicographic successor; false after the last permutation.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("spearman needs equal lengths >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    if is_constant(&rx) || is_constant(&ry) {
        return Err(Error::domain("zero variance"));
    }
    Ok(correlation(&rx, &ry))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub const SVM_LAMBDA: f64 = 1e-2;
pub const SVM_ITERATIONS: usize = 100_000;
pub const SVM_FOLDS: usize = 5;
const SVM_FOLD_SEED: u64 = 0x5f0_1d5;

/// Linear soft-margin classifier on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    /// Weights in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mean accuracy over the cross-validation folds.
    pub cv_accuracy: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| w * (v - m) / s)
            .sum::<f64>()
            + self.bias
    }

    /// True = survived.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) >= 0.0
    }
}

struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&[f64]]) -> Self {
        let n = rows.len() as f64;
        let dim = rows[0].len();
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Full-batch primal subgradient descent on
/// `λ/2·‖(w, b)‖² + mean(max(0, 1 − y(w·x + b)))` with step `1/(λt)`.
/// The bias is handled as a weight on a constant feature.
fn fit_hinge(xs: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64) {
    let dim = xs[0].len();
    if ys.iter().all(|&y| y == ys[0]) {
        return (vec![0.0; dim], ys[0]);
    }
    let n = xs.len() as f64;
    let mut w = vec![0.0; dim + 1];
    let mut g = vec![0.0; dim + 1];
    for t in 1..=SVM_ITERATIONS {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (x, &y) in xs.iter().zip(ys) {
            let margin = y * (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[dim]);
            if margin < 1.0 {
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += y * xj;
                }
                g[dim] += y;
            }
        }
        let eta = 1.0 / (SVM_LAMBDA * t as f64);
        let shrink = 1.0 - eta * SVM_LAMBDA;
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj = shrink * *wj + eta * gj / n;
        }
    }
    let bias = w.pop().unwrap();
    (w, bias)
}

/// Train a linear SVM separating survived (`true`) from dead frequencies and
/// report its 5-fold cross-validated accuracy.
pub fn train_linear_svm(features: &[Vec<f64>], labels: &[bool]) -> Result<LinearSvm> {
    if features.len() != labels.len() {
        return Err(Error::domain("features and labels differ in length"));
    }
    if features.len() < 10 {
        return Err(Error::domain(format!("SVM needs n >= 10 samples (got {})", features.len())));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim || f.iter().any(|x| !x.is_finite())) {
        return Err(Error::domain("features must be finite rows of equal nonzero length"));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::domain("SVM needs both classes present (single-class input)"));
    }
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    let n = features.len();
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(SVM_FOLD_SEED).shuffle(&mut order);
    let mut correct_frac = 0.0;
    for fold in 0..SVM_FOLDS {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..n).map(|i| order[i]).partition(|&i| order.iter().position(|&o| o == i).unwrap() % SVM_FOLDS == fold);
        if test.is_empty() {
            continue;
        }
        let rows: Vec<&[f64]> = train.iter().map(|&i| features[i].as_slice()).collect();
        let st = Standardizer::fit(&rows);
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
        let y: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
        let (w, b) = fit_hinge(&xs, &y);
        let hits = test
            .iter()
            .filter(|&&i| {
                let x = st.apply(&features[i]);
                let score = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
                (score >= 0.0) == labels[i]
            })
            .count();
        correct_frac += hits as f64 / test.len() as f64;
    }
    let cv_accuracy = correct_frac / SVM_FOLDS as f64;

    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let st = Standardizer::fit(&rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
    let (weights, bias) = fit_hinge(&xs, &ys);
    Ok(LinearSvm {
        weights,
        bias,
        mean: st.mean,
        std: st.std,
        cv_accuracy,
    })
}
