//! Per-trial result files and their reloading.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::SignalTrajectory;
use crate::fitness::{survival_detect, SurvivalRecord};
use crate::linalg::Matrix;
use crate::modmlp::{LossPoint, ModelConfig, RunLog, RunSeeds, TrainConfig};
use crate::spectral::project_onto_frequency;
use crate::{Error, Result};

use super::Setup;

/// What a trial's training run depends on; two runs with equal keys are
/// interchangeable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub setup: Setup,
}

/// The parts of a training run the protocols consume.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub key: RunKey,
    pub seeds: RunSeeds,
    pub trajectory: SignalTrajectory,
    pub gradient_trajectory: Option<SignalTrajectory>,
    pub loss_curve: Vec<LossPoint>,
    pub initial_embedding: Matrix,
    pub final_embedding: Matrix,
    pub survival: SurvivalRecord,
}

impl RunSummary {
    pub fn from_log(key: RunKey, initial_embedding: Matrix, log: RunLog) -> Result<Self> {
        let survival = survival_detect(log.final_signals())?;
        Ok(RunSummary {
            key,
            seeds: log.seeds,
            trajectory: log.trajectory,
            gradient_trajectory: log.gradient_trajectory,
            loss_curve: log.loss_curve,
            initial_embedding,
            final_embedding: log.final_params.embedding,
            survival,
        })
    }

    pub fn final_signals(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory has the step-0 record")
    }

    pub fn initial_signals(&self) -> &[f64] {
        self.trajectory.first().expect("trajectory has the step-0 record")
    }

    pub fn final_loss(&self) -> LossPoint {
        *self.loss_curve.last().expect("loss curve has the step-0 record")
    }

    pub fn loss_at(&self, step: usize) -> Option<LossPoint> {
        self.loss_curve.iter().find(|l| l.step == step).copied()
    }
}

/// `manifest.json` of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub protocol: String,
    pub cell: String,
    pub trial: usize,
    pub key: RunKey,
    pub seeds: RunSeeds,
    pub survivors: Vec<usize>,
    pub survival_rule: crate::fitness::ThresholdRule,
    pub survival_threshold: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
    pub version: String,
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write `contents` unless an identical file is already there; a file with
/// different contents is never replaced.
pub(crate) fn write_once(path: &Path, contents: &str) -> Result<()> {
    match fs::read(path) {
        Ok(old) if old == contents.as_bytes() => Ok(()),
        Ok(_) => Err(Error::domain(format!(
            "{} already holds a different result; choose another output directory",
            path.display()
        ))),
        Err(_) => write(path, contents),
    }
}

/// Trajectory CSV `step,freq,signal,train_loss,test_loss`.
pub fn trajectory_csv(traj: &SignalTrajectory, losses: &[LossPoint]) -> String {
    let mut out = String::from("step,freq,signal,train_loss,test_loss\n");
    for (t, &step) in traj.steps().iter().enumerate() {
        let loss = losses.iter().find(|l| l.step == step);
        let (tr, te) = loss.map_or((f64::NAN, f64::NAN), |l| (l.train_loss, l.test_loss));
        for (k, s) in traj.row(t).iter().enumerate() {
            let _ = writeln!(out, "{step},{},{s:e},{tr:e},{te:e}", k + 1);
        }
    }
    out
}

fn gradient_csv(traj: &SignalTrajectory) -> String {
    let mut out = String::from("step,freq,signal\n");
    for (t, &step) in traj.steps().iter().enumerate() {
        for (k, s) in traj.row(t).iter().enumerate() {
            let _ = writeln!(out, "{step},{},{s:e}", k + 1);
        }
    }
    out
}

/// Matrix as CSV with 17 significant digits, one row per line, no header.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn survival_csv(run: &RunSummary) -> String {
    let mut out = String::from("freq,initial_signal,final_signal,survived\n");
    let init = run.initial_signals();
    for (k, (&s, &alive)) in run.final_signals().iter().zip(&run.survival.survived).enumerate() {
        let _ = writeln!(out, "{},{:e},{s:e},{}", k + 1, init[k], u8::from(alive));
    }
    out
}

fn circles_csv(run: &RunSummary) -> Result<String> {
    let mut out = String::from("freq,token,x,y\n");
    for k in run.survival.survivors_by_signal() {
        let pts = project_onto_frequency(&run.final_embedding, k)?;
        for (t, (x, y)) in pts.points.iter().enumerate() {
            let _ = writeln!(out, "{k},{t},{x:e},{y:e}");
        }
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: `{s}` is not a number")))
}

fn parse_usize(path: &Path, line: usize, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: `{s}` is not an index")))
}

fn parse_trajectory(path: &Path, text: &str, n_freq: usize, with_losses: bool) -> Result<(SignalTrajectory, Vec<LossPoint>)> {
    let mut traj = SignalTrajectory::new(n_freq);
    let mut losses = Vec::new();
    let mut row = Vec::with_capacity(n_freq);
    let mut current: Option<(usize, f64, f64)> = None;
    let width = if with_losses { 5 } else { 3 };
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != width {
            return Err(Error::format(path, format!("line {}: expected {width} columns", i + 1)));
        }
        let step = parse_usize(path, i + 1, cols[0])?;
        let freq = parse_usize(path, i + 1, cols[1])?;
        if freq != row.len() + 1 {
            return Err(Error::format(path, format!("line {}: frequency {freq} out of order", i + 1)));
        }
        row.push(parse_f64(path, i + 1, cols[2])?);
        let (tr, te) = if with_losses {
            (parse_f64(path, i + 1, cols[3])?, parse_f64(path, i + 1, cols[4])?)
        } else {
            (0.0, 0.0)
        };
        current = Some((step, tr, te));
        if row.len() == n_freq {
            traj.push(step, &row)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            losses.push(LossPoint {
                step,
                train_loss: tr,
                test_loss: te,
            });
            row.clear();
        }
    }
    if !row.is_empty() || current.is_none() {
        return Err(Error::format(path, "truncated trajectory"));
    }
    Ok((traj, losses))
}

fn parse_matrix(path: &Path, text: &str, rows: usize, cols: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in text.lines().enumerate() {
        for v in line.split(',') {
            data.push(parse_f64(path, i + 1, v)?);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::format(path, format!("expected {rows}x{cols} values, found {}", data.len())));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Writes trials under `<root>/<protocol>/<cell>/<trial>/` and reloads them
/// when a later request has the same [`RunKey`].
#[derive(Debug, Clone, Default)]
pub struct Store {
    root: Option<PathBuf>,
    overrides: BTreeMap<String, String>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Store {
            root: Some(root.into()),
            overrides: BTreeMap::new(),
        }
    }

    /// Overrides echoed into every manifest.
    pub fn with_overrides(mut self, overrides: BTreeMap<String, String>) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn protocol_dir(&self, protocol: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(protocol))
    }

    fn trial_dir(&self, protocol: &str, cell: &str, trial: usize) -> Option<PathBuf> {
        self.protocol_dir(protocol).map(|d| d.join(cell).join(format!("trial_{trial:03}")))
    }

    /// A previously stored run with this key, if any. A stored run with a
    /// different key is an error: results are never overwritten.
    pub fn load(&self, protocol: &str, cell: &str, trial: usize, key: &RunKey) -> Result<Option<RunSummary>> {
        let Some(dir) = self.trial_dir(protocol, cell, trial) else {
            return Ok(None);
        };
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Ok(None);
        }
        let manifest: TrialManifest = serde_json::from_str(&read_to_string(&manifest_path)?)
            .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        if &manifest.key != key {
            return Err(Error::domain(format!(
                "{} already holds a different run; choose another output directory",
                dir.display()
            )));
        }
        let n_freq = key.model.n_freq();
        let traj_path = dir.join("trajectory.csv");
        let (trajectory, loss_curve) = parse_trajectory(&traj_path, &read_to_string(&traj_path)?, n_freq, true)?;
        let grad_path = dir.join("gradient.csv");
        let gradient_trajectory = if grad_path.exists() {
            Some(parse_trajectory(&grad_path, &read_to_string(&grad_path)?, n_freq, false)?.0)
        } else {
            None
        };
        let (p, d) = (key.model.p, key.model.d);
        let emb_path = dir.join("embedding.csv");
        let final_embedding = parse_matrix(&emb_path, &read_to_string(&emb_path)?, p, d)?;
        let init_path = dir.join("initial_embedding.csv");
        let initial_embedding = parse_matrix(&init_path, &read_to_string(&init_path)?, p, d)?;
        let survival = survival_detect(trajectory.last().unwrap_or(&[]))?.with_trial(trial as u64);
        Ok(Some(RunSummary {
            key: key.clone(),
            seeds: manifest.seeds,
            trajectory,
            gradient_trajectory,
            loss_curve,
            initial_embedding,
            final_embedding,
            survival,
        }))
    }

    pub fn save(&self, protocol: &str, cell: &str, trial: usize, run: &RunSummary) -> Result<()> {
        let Some(dir) = self.trial_dir(protocol, cell, trial) else {
            return Ok(());
        };
        let last = run.final_loss();
        let manifest = TrialManifest {
            protocol: protocol.to_string(),
            cell: cell.to_string(),
            trial,
            key: run.key.clone(),
            seeds: run.seeds,
            survivors: run.survival.survivors(),
            survival_rule: run.survival.rule,
            survival_threshold: run.survival.threshold,
            final_train_loss: last.train_loss,
            final_test_loss: last.test_loss,
            overrides: self.overrides.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write(&dir.join("trajectory.csv"), trajectory_csv(&run.trajectory, &run.loss_curve))?;
        if let Some(g) = &run.gradient_trajectory {
            write(&dir.join("gradient.csv"), gradient_csv(g))?;
        }
        write(&dir.join("survival.csv"), survival_csv(run))?;
        write(&dir.join("embedding.csv"), matrix_csv(&run.final_embedding))?;
        write(&dir.join("initial_embedding.csv"), matrix_csv(&run.initial_embedding))?;
        write(&dir.join("circles.csv"), circles_csv(run)?)?;
        // The manifest goes last: its presence marks a complete trial.
        let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
        write(&dir.join("manifest.json"), json)
    }
}
