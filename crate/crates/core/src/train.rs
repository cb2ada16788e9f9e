//! Two-stage training on synthetic temporal tasks.
//!
//! Stage one trains only the temporal encoder at a high rate with everything
//! else frozen; stage two fine-tunes all components with small per-group
//! rates (the stub encoder slowest).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::pipeline::{candidate_scores, loss_and_grads, Group, PipelineConfig, PipelineWeights, ToyBatch};
use crate::real::Real;
use crate::rng::Rng;
use crate::ste::InitMode;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TaskKind {
    /// Class 1 clips are class 0 clips played backwards.
    #[default]
    OrderDiscrimination,
    /// A two-part pattern moving right (class 0) or left (class 1) across
    /// the patch axis.
    MotionDirection,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "order" | "order_discrimination" => Ok(TaskKind::OrderDiscrimination),
            "motion" | "motion_direction" => Ok(TaskKind::MotionDirection),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected order or motion)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::OrderDiscrimination => "order",
            TaskKind::MotionDirection => "motion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub t: usize,
    pub p: usize,
    pub d_raw: usize,
    /// Seeds the fixed task templates (trend direction, motion pattern).
    pub seed: u64,
    /// Per-frame observation noise.
    pub noise: f64,
    /// Order task: per-frame step along the trend direction.
    pub drift: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            kind: TaskKind::OrderDiscrimination,
            t: 8,
            p: 4,
            d_raw: 8,
            seed: 0,
            noise: 0.3,
            drift: 1.0,
        }
    }
}

pub const CLASSES: usize = 2;

fn unit_vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn reverse_frames(x: &Tensor<f64>) -> Tensor<f64> {
    let t = x.shape()[0];
    let block = x.len() / t;
    let src = x.data();
    Tensor::from_fn(x.shape(), |i| src[(t - 1 - i / block) * block + i % block])
}

impl SyntheticTask {
    pub fn with_kind(mut self, kind: TaskKind) -> Self {
        self.kind = kind;
        self
    }

    /// `count` examples drawn with `sample_seed`, alternating class 0 and 1.
    /// Order-task examples come in pairs: example `2i + 1` is example `2i`
    /// reversed.
    pub fn generate(&self, count: usize, sample_seed: u64) -> Result<Vec<ToyBatch>> {
        if count == 0 {
            return Err(Error::Contract("sample count must be at least 1".into()));
        }
        if self.t < 2 || self.p == 0 || self.d_raw == 0 {
            return Err(Error::Contract(format!(
                "task needs t >= 2, p >= 1, d_raw >= 1; got t={} p={} d_raw={}",
                self.t, self.p, self.d_raw
            )));
        }
        let mut template = Rng::new(self.seed).fork(10);
        let mut rng = Rng::new(sample_seed).fork(11);
        let mut out = Vec::with_capacity(count);
        match self.kind {
            TaskKind::OrderDiscrimination => {
                let dir = unit_vector(&mut template, self.d_raw);
                while out.len() < count {
                    let x = self.trend_clip(&dir, &mut rng);
                    let rev = reverse_frames(&x);
                    out.push(example(x, 0));
                    if out.len() < count {
                        out.push(example(rev, 1));
                    }
                }
            }
            TaskKind::MotionDirection => {
                let head = unit_vector(&mut template, self.d_raw);
                let tail = unit_vector(&mut template, self.d_raw);
                for i in 0..count {
                    let label = i % CLASSES;
                    out.push(example(self.motion_clip(&head, &tail, label, &mut rng), label));
                }
            }
        }
        Ok(out)
    }

    // Each patch drifts along `dir` from a random start.
    fn trend_clip(&self, dir: &[f64], rng: &mut Rng) -> Tensor<f64> {
        let (t, p, d) = (self.t, self.p, self.d_raw);
        let base: Vec<f64> = (0..p * d).map(|_| rng.normal()).collect();
        let mid = (t - 1) as f64 / 2.0;
        let mut data = Vec::with_capacity(t * p * d);
        for j in 0..t {
            let shift = (j as f64 - mid) * self.drift;
            for q in 0..p {
                for e in 0..d {
                    data.push(base[q * d + e] + shift * dir[e] + self.noise * rng.normal());
                }
            }
        }
        Tensor::new(vec![t, p, d], data).expect("clip shape")
    }

    // Head at position x, tail one patch behind it on the left; x moves by
    // +1 (class 0) or -1 (class 1) per frame, wrapping around the patch axis.
    fn motion_clip(&self, head: &[f64], tail: &[f64], label: usize, rng: &mut Rng) -> Tensor<f64> {
        let (t, p, d) = (self.t, self.p, self.d_raw);
        let start = rng.below(p);
        let amp = 1.0 + 0.25 * rng.normal();
        let mut data = Vec::with_capacity(t * p * d);
        for j in 0..t {
            let x = if label == 0 {
                (start + j) % p
            } else {
                (start + p * t - j) % p
            };
            let back = (x + p - 1) % p;
            for q in 0..p {
                for e in 0..d {
                    let mut v = self.noise * rng.normal();
                    if q == x {
                        v += amp * head[e];
                    } else if q == back {
                        v += amp * tail[e];
                    }
                    data.push(v);
                }
            }
        }
        Tensor::new(vec![t, p, d], data).expect("clip shape")
    }
}

impl SyntheticTask {
    pub fn to_toml(&self) -> toml::Table {
        let mut t = toml::Table::new();
        t.insert("kind".into(), self.kind.name().into());
        t.insert("t".into(), (self.t as i64).into());
        t.insert("p".into(), (self.p as i64).into());
        t.insert("d_raw".into(), (self.d_raw as i64).into());
        t.insert("seed".into(), (self.seed as i64).into());
        t.insert("noise".into(), self.noise.into());
        t.insert("drift".into(), self.drift.into());
        t
    }

    pub fn from_toml(table: &toml::Table) -> Result<Self> {
        let bad = |k: &str| Error::Config(format!("task table: missing or invalid '{k}'"));
        let int = |k: &str| {
            table
                .get(k)
                .and_then(|v| v.as_integer())
                .and_then(|v| u64::try_from(v).ok())
                .ok_or_else(|| bad(k))
        };
        let float = |k: &str| table.get(k).and_then(|v| v.as_float()).ok_or_else(|| bad(k));
        let kind = table.get("kind").and_then(|v| v.as_str()).ok_or_else(|| bad("kind"))?;
        Ok(SyntheticTask {
            kind: TaskKind::parse(kind)?,
            t: int("t")? as usize,
            p: int("p")? as usize,
            d_raw: int("d_raw")? as usize,
            seed: int("seed")?,
            noise: float("noise")?,
            drift: float("drift")?,
        })
    }
}

fn example(frames: Tensor<f64>, label: usize) -> ToyBatch {
    ToyBatch {
        frames,
        question: 0,
        answer: vec![label],
        label,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Sft,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Sft => "sft",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub rates: BTreeMap<Group, f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl StageConfig {
    /// Encoder-only stage at 1e-3.
    pub fn pretrain() -> Self {
        StageConfig {
            stage: Stage::Pretrain,
            rates: BTreeMap::from([(Group::Ste, 1e-3)]),
            epochs: 1,
            batch_size: 2,
            seed: 0,
        }
    }

    /// Full fine-tune: 2e-6 for the frame encoder, 1e-5 elsewhere.
    pub fn sft() -> Self {
        StageConfig {
            stage: Stage::Sft,
            rates: BTreeMap::from([
                (Group::Encoder, 2e-6),
                (Group::Ste, 1e-5),
                (Group::Projector, 1e-5),
                (Group::Scorer, 1e-5),
            ]),
            epochs: 1,
            batch_size: 2,
            seed: 1,
        }
    }

    pub fn rate(&self, g: Group) -> f64 {
        self.rates.get(&g).copied().unwrap_or(0.0)
    }

    /// Groups that receive updates. Pretraining never updates anything but
    /// the temporal encoder, whatever the configured rates say.
    pub fn trainable(&self, g: Group) -> bool {
        match self.stage {
            Stage::Pretrain => g == Group::Ste,
            Stage::Sft => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.rates.values().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.stage == Stage::Sft {
            let enc = self.rate(Group::Encoder);
            let slowest_other = [Group::Ste, Group::Projector, Group::Scorer]
                .iter()
                .map(|&g| self.rate(g))
                .fold(f64::INFINITY, f64::min);
            if enc > 0.0 && enc >= slowest_other {
                return Err(Error::Config(format!(
                    "fine-tuning needs the encoder rate ({enc}) below the other rates ({slowest_other})"
                )));
            }
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with one moment pair per tensor.
pub struct Adam<R> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(weights: &PipelineWeights<R>) -> Self {
        let zeros: Vec<Tensor<R>> = weights
            .named()
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; tensors with `rate(group) == None` are not touched.
    pub fn step(
        &mut self,
        weights: &mut PipelineWeights<R>,
        grads: &PipelineWeights<R>,
        rate: impl Fn(Group) -> Option<f64>,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let groups: Vec<Group> = weights.named().iter().map(|(g, _, _)| *g).collect();
        let grads: Vec<&Tensor<R>> = grads.named().into_iter().map(|(_, _, t)| t).collect();
        let (b1, b2, eps) = (
            R::from_f64(self.beta1),
            R::from_f64(self.beta2),
            R::from_f64(self.eps),
        );
        for (i, w) in weights.tensors_mut().into_iter().enumerate() {
            let Some(lr) = rate(groups[i]) else { continue };
            let step_size = R::from_f64(lr / bc1);
            let inv_bc2 = R::from_f64(1.0 / bc2);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &g)) in w.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (R::one() - b1) * g;
                v[j] = b2 * v[j] + (R::one() - b2) * g * g;
                *w -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub stage: Stage,
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,loss,stage\n");
    for r in trace {
        writeln!(out, "{},{:.9e},{}", r.step, r.loss, r.stage.name()).unwrap();
    }
    out
}

fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        idx.swap(i, j);
    }
    idx
}

/// Runs one stage in place and returns its per-step losses.
pub fn train_stage<R: Real>(
    stage: &StageConfig,
    config: &PipelineConfig,
    weights: &mut PipelineWeights<R>,
    data: &[ToyBatch],
) -> Result<Vec<LossRecord>> {
    stage.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training data is empty".into()));
    }
    let mut opt = Adam::new(weights);
    let mut rng = Rng::new(stage.seed).fork(20);
    let mut trace = Vec::new();
    let mut step = 0;
    for _ in 0..stage.epochs {
        let order = shuffled(data.len(), &mut rng);
        for chunk in order.chunks(stage.batch_size) {
            let batch: Vec<ToyBatch> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads, _) = loss_and_grads(&batch, config, weights)?;
            if !loss.is_finite() {
                let culprit = grads
                    .named()
                    .into_iter()
                    .find(|(_, _, t)| !t.all_finite())
                    .map_or_else(|| "loss".to_string(), |(_, n, _)| n);
                return Err(Error::NonFinite {
                    step,
                    tensor: culprit,
                });
            }
            opt.step(weights, &grads, |g| {
                stage.trainable(g).then(|| stage.rate(g))
            });
            trace.push(LossRecord {
                step,
                loss: loss.to_f64(),
                stage: stage.stage,
            });
            step += 1;
        }
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_log_likelihood: f64,
    pub count: usize,
}

/// Class predictions by argmax over the class-token answers; ties go to the
/// lower class.
pub fn predict<R: Real>(
    config: &PipelineConfig,
    weights: &PipelineWeights<R>,
    data: &[ToyBatch],
) -> Result<Vec<(usize, f64)>> {
    let candidates: Vec<Vec<usize>> = (0..CLASSES).map(|c| vec![c]).collect();
    data.iter()
        .map(|s| {
            let scores = candidate_scores(s, &candidates, config, weights)?;
            let mut best = 0;
            for (i, sc) in scores.iter().enumerate() {
                if *sc > scores[best] {
                    best = i;
                }
            }
            Ok((best, scores[s.label].to_f64()))
        })
        .collect()
}

pub fn accuracy(predictions: &[usize], data: &[ToyBatch]) -> f64 {
    let correct = predictions
        .iter()
        .zip(data)
        .filter(|(p, s)| **p == s.label)
        .count();
    correct as f64 / data.len().max(1) as f64
}

pub fn evaluate<R: Real>(
    config: &PipelineConfig,
    weights: &PipelineWeights<R>,
    data: &[ToyBatch],
) -> Result<EvalMetrics> {
    let preds = predict(config, weights, data)?;
    let labels: Vec<usize> = preds.iter().map(|p| p.0).collect();
    let ll = preds.iter().map(|p| p.1).sum::<f64>() / data.len().max(1) as f64;
    Ok(EvalMetrics {
        accuracy: accuracy(&labels, data),
        mean_log_likelihood: ll,
        count: data.len(),
    })
}

/// Everything needed for a full two-stage run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub pipeline: PipelineConfig,
    pub task: SyntheticTask,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub pretrain: StageConfig,
    pub sft: StageConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pipeline: PipelineConfig {
                d_vis: 64,
                d_sem: 64,
                ..PipelineConfig::default()
            },
            task: SyntheticTask::default(),
            train_samples: 500,
            eval_samples: 200,
            pretrain: StageConfig::pretrain(),
            sft: StageConfig::sft(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageFile {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    lr_encoder: Option<f64>,
    lr_ste: Option<f64>,
    lr_projector: Option<f64>,
    lr_scorer: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    pipeline: Option<toml::Table>,
    task: Option<String>,
    t: Option<usize>,
    noise: Option<f64>,
    drift: Option<f64>,
    task_seed: Option<u64>,
    train_samples: Option<usize>,
    eval_samples: Option<usize>,
    pretrain: Option<StageFile>,
    sft: Option<StageFile>,
}

impl StageFile {
    fn apply(self, s: &mut StageConfig) {
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        for (g, v) in [
            (Group::Encoder, self.lr_encoder),
            (Group::Ste, self.lr_ste),
            (Group::Projector, self.lr_projector),
            (Group::Scorer, self.lr_scorer),
        ] {
            if let Some(v) = v {
                s.rates.insert(g, v);
            }
        }
    }
}

impl TrainConfig {
    /// Reads overrides from TOML; `[pipeline]` uses the pipeline config keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: TrainFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = TrainConfig::default();
        if let Some(p) = f.pipeline {
            c.pipeline = c.pipeline.merge_toml(&toml::to_string(&p).expect("table"))?;
        }
        if let Some(k) = f.task {
            c.task.kind = TaskKind::parse(&k)?;
        }
        if let Some(t) = f.t {
            c.task.t = t;
        }
        if let Some(n) = f.noise {
            c.task.noise = n;
        }
        if let Some(d) = f.drift {
            c.task.drift = d;
        }
        if let Some(s) = f.task_seed {
            c.task.seed = s;
        }
        if let Some(n) = f.train_samples {
            c.train_samples = n;
        }
        if let Some(n) = f.eval_samples {
            c.eval_samples = n;
        }
        if let Some(s) = f.pretrain {
            s.apply(&mut c.pretrain);
        }
        if let Some(s) = f.sft {
            s.apply(&mut c.sft);
        }
        c.sync_task();
        c.validate()?;
        Ok(c)
    }

    /// Matches the task's clip geometry to the pipeline.
    pub fn sync_task(&mut self) {
        self.task.p = self.pipeline.p;
        self.task.d_raw = self.pipeline.d_raw;
    }

    /// Derives every seed from one root seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pipeline.seed = seed;
        self.task.seed = seed;
        self.pretrain.seed = seed.wrapping_add(1);
        self.sft.seed = seed.wrapping_add(2);
        self
    }

    /// Same schedule without a temporal encoder.
    pub fn baseline(&self) -> Self {
        let mut c = self.clone();
        c.pipeline.stack = None;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.pretrain.validate()?;
        self.sft.validate()?;
        if self.pipeline.vocab < CLASSES {
            return Err(Error::Config(format!(
                "vocab must hold the {CLASSES} class tokens"
            )));
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.task.p != self.pipeline.p || self.task.d_raw != self.pipeline.d_raw {
            return Err(Error::Config("task geometry does not match the pipeline".into()));
        }
        Ok(())
    }

    /// Pipeline checkpoint with the task definition in a `[task]` header
    /// table, so evaluation can rebuild the same task.
    pub fn checkpoint<R: Real>(&self, weights: &PipelineWeights<R>) -> Checkpoint {
        let mut ck = weights.to_checkpoint(&self.pipeline);
        ck.header.insert("task".into(), self.task.to_toml().into());
        ck
    }

    pub fn train_data(&self) -> Result<Vec<ToyBatch>> {
        self.task.generate(self.train_samples, self.task.seed.wrapping_mul(2).wrapping_add(1))
    }

    pub fn eval_data(&self) -> Result<Vec<ToyBatch>> {
        self.task.generate(self.eval_samples, self.task.seed.wrapping_mul(2).wrapping_add(2))
    }
}

/// Results of [`run_two_stage`].
#[derive(Clone, Debug)]
pub struct TwoStageRun<R> {
    pub after_pretrain: PipelineWeights<R>,
    pub weights: PipelineWeights<R>,
    pub trace: Vec<LossRecord>,
    /// Digest of the non-encoder groups before and after pretraining.
    pub frozen_digest_before: String,
    pub frozen_digest_after: String,
    pub pretrain_train: EvalMetrics,
    pub train: EvalMetrics,
    pub eval: EvalMetrics,
}

pub const FROZEN_IN_PRETRAIN: [Group; 3] = [Group::Encoder, Group::Projector, Group::Scorer];

pub fn run_two_stage<R: Real>(config: &TrainConfig) -> Result<TwoStageRun<R>> {
    config.validate()?;
    let train = config.train_data()?;
    let held_out = config.eval_data()?;
    let mut weights = config.pipeline.init_weights::<R>(InitMode::ScaledUniform)?;

    let frozen_digest_before = weights.digest(&FROZEN_IN_PRETRAIN);
    let mut trace = train_stage(&config.pretrain, &config.pipeline, &mut weights, &train)?;
    let frozen_digest_after = weights.digest(&FROZEN_IN_PRETRAIN);
    let after_pretrain = weights.clone();
    let pretrain_train = evaluate(&config.pipeline, &weights, &train)?;

    trace.extend(train_stage(&config.sft, &config.pipeline, &mut weights, &train)?);
    Ok(TwoStageRun {
        after_pretrain,
        train: evaluate(&config.pipeline, &weights, &train)?,
        eval: evaluate(&config.pipeline, &weights, &held_out)?,
        weights,
        trace,
        frozen_digest_before,
        frozen_digest_after,
        pretrain_train,
    })
}

impl<R: Real> TwoStageRun<R> {
    pub fn metrics_toml(&self, config: &TrainConfig) -> String {
        let mut t = toml::Table::new();
        t.insert("task".into(), config.task.kind.name().into());
        t.insert(
            "stack".into(),
            config
                .pipeline
                .stack
                .as_ref()
                .map_or("none".to_string(), |s| s.to_string())
                .into(),
        );
        t.insert("precision".into(), R::NAME.into());
        t.insert("steps".into(), (self.trace.len() as i64).into());
        let mut pre = toml::Table::new();
        pre.insert("frozen_sha256_before".into(), self.frozen_digest_before.clone().into());
        pre.insert("frozen_sha256_after".into(), self.frozen_digest_after.clone().into());
        pre.insert(
            "frozen_unchanged".into(),
            (self.frozen_digest_before == self.frozen_digest_after).into(),
        );
        pre.insert("train_accuracy".into(), self.pretrain_train.accuracy.into());
        t.insert("pretrain".into(), pre.into());
        let mut fin = toml::Table::new();
        fin.insert("train_accuracy".into(), self.train.accuracy.into());
        fin.insert("train_mean_log_likelihood".into(), self.train.mean_log_likelihood.into());
        fin.insert("eval_accuracy".into(), self.eval.accuracy.into());
        fin.insert("eval_mean_log_likelihood".into(), self.eval.mean_log_likelihood.into());
        fin.insert("eval_samples".into(), (self.eval.count as i64).into());
        t.insert("final".into(), fin.into());
        toml::to_string(&t).expect("toml table serialises")
    }
}
