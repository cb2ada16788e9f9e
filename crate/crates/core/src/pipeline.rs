//! Desk-scale vision-language pipeline:
//! stub frame encoder → temporal encoder (before and/or after the projector)
//! → two-layer projector → causal answer scorer.
//!
//! The scorer stands in for the language decoder. It conditions each answer
//! position on the mean-pooled visual tokens, a question embedding and the
//! mean embedding of the answer prefix, and returns `Σ log p(x_i | prefix)`.
//! Because the visual context is a plain mean, any sensitivity to frame order
//! comes from the temporal encoder.

use std::sync::Arc;

use serde::Deserialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::real::Real;
use crate::rng::Rng;
use crate::spec_string::parse_stack;
use crate::ste::{layers_on_tape, Activation, FrameEmbeddings, InitMode, Insertion, LayerWeights, StackSpec};
use crate::tensor::Tensor;

/// Visual width of the reference vision encoder.
pub const REFERENCE_D_VIS: usize = 1152;
/// Hidden width of the reference language model.
pub const REFERENCE_D_SEM: usize = 3584;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub d_raw: usize,
    pub d_vis: usize,
    pub d_sem: usize,
    pub p: usize,
    pub vocab: usize,
    pub questions: usize,
    /// `None` is the mean-pool baseline with no temporal encoder.
    pub stack: Option<StackSpec>,
    /// Nonlinearity between the two projector layers; `None` bypasses it.
    pub projector_activation: Activation,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            d_raw: 8,
            d_vis: 8,
            d_sem: 8,
            p: 4,
            vocab: 4,
            questions: 1,
            stack: Some(StackSpec::homogeneous(2, 1, 1)),
            projector_activation: Activation::Gelu,
            seed: 0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    d_raw: Option<usize>,
    d_vis: Option<usize>,
    d_sem: Option<usize>,
    p: Option<usize>,
    vocab: Option<usize>,
    questions: Option<usize>,
    stack: Option<String>,
    insertion: Option<String>,
    activation: Option<String>,
    projector_activation: Option<String>,
    seed: Option<u64>,
}

impl PipelineConfig {
    /// Parses the TOML form. Missing keys keep their defaults; `stack =
    /// "none"` selects the baseline; `insertion` overrides the placement
    /// suffix of `stack`.
    pub fn from_toml(text: &str) -> Result<Self> {
        PipelineConfig::default().merge_toml(text)
    }

    /// Like [`PipelineConfig::from_toml`] with `self` supplying the defaults.
    pub fn merge_toml(&self, text: &str) -> Result<Self> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = self.clone();
        macro_rules! set {
            ($($k:ident),*) => { $( if let Some(v) = f.$k { c.$k = v; } )* };
        }
        set!(d_raw, d_vis, d_sem, p, vocab, questions, seed);
        if let Some(s) = &f.stack {
            c.stack = match s.trim() {
                "none" | "" => None,
                text => Some(parse_stack(text)?),
            };
        }
        if let Some(ins) = &f.insertion {
            let stack = c
                .stack
                .as_mut()
                .ok_or_else(|| Error::Config("'insertion' given without a stack".into()))?;
            stack.insertion = match (ins.as_str(), stack.insertion) {
                ("before", _) => Insertion::BeforeProjector,
                ("after", _) => Insertion::AfterProjector,
                ("both", Insertion::Both { before }) => Insertion::Both { before },
                ("both", _) => {
                    return Err(Error::Config(
                        "insertion = \"both\" needs a split stack like \"(2:1)|(2:1)\"".into(),
                    ))
                }
                (other, _) => {
                    return Err(Error::Config(format!("unknown insertion '{other}'")))
                }
            };
        }
        if let Some(a) = &f.activation {
            let stack = c
                .stack
                .as_mut()
                .ok_or_else(|| Error::Config("'activation' given without a stack".into()))?;
            stack.activation = crate::io::parse_activation(a)?;
        }
        if let Some(a) = &f.projector_activation {
            c.projector_activation = crate::io::parse_activation(a)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::new();
        for (k, v) in [
            ("d_raw", self.d_raw),
            ("d_vis", self.d_vis),
            ("d_sem", self.d_sem),
            ("p", self.p),
            ("vocab", self.vocab),
            ("questions", self.questions),
        ] {
            t.insert(k.into(), (v as i64).into());
        }
        match &self.stack {
            Some(s) => {
                t.insert("stack".into(), s.to_string().into());
                t.insert(
                    "activation".into(),
                    crate::io::activation_name(s.activation).into(),
                );
            }
            None => {
                t.insert("stack".into(), "none".into());
            }
        }
        t.insert(
            "projector_activation".into(),
            crate::io::activation_name(self.projector_activation).into(),
        );
        t.insert("seed".into(), (self.seed as i64).into());
        toml::to_string(&t).expect("toml table serialises")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_raw", self.d_raw),
            ("d_vis", self.d_vis),
            ("d_sem", self.d_sem),
            ("p", self.p),
            ("vocab", self.vocab),
            ("questions", self.questions),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(s) = &self.stack {
            s.validate_placed(self.d_vis, self.d_sem)?;
        }
        Ok(())
    }

    pub fn before_layers(&self) -> &[crate::ste::LayerSpec] {
        self.stack.as_ref().map_or(&[], |s| s.before_layers())
    }

    pub fn after_layers(&self) -> &[crate::ste::LayerSpec] {
        self.stack.as_ref().map_or(&[], |s| s.after_layers())
    }

    fn activation(&self) -> Activation {
        self.stack.as_ref().map_or(Activation::None, |s| s.activation)
    }

    /// Frame counts seen by each component for a `t`-frame clip.
    pub fn frame_trace(&self, t: usize) -> FrameTrace {
        let mut f = t;
        for l in self.before_layers() {
            f = l.output_frames(f);
        }
        let projector_in = f;
        for l in self.after_layers() {
            f = l.output_frames(f);
        }
        FrameTrace {
            encoder_out: t,
            projector_in,
            scorer_in: f,
        }
    }

    pub fn init_weights<R: Real>(&self, ste_init: InitMode) -> Result<PipelineWeights<R>> {
        self.validate()?;
        let root = Rng::new(self.seed);
        let mut rng = root.fork(1);
        let s_raw = 1.0 / (self.d_raw as f64).sqrt();
        let encoder = Linear {
            weight: rng.normal_tensor(&[self.d_raw, self.d_vis], s_raw),
            bias: Tensor::zeros(&[self.d_vis]),
        };

        let mut rng = root.fork(2);
        let mut ste = Vec::new();
        for l in self.before_layers() {
            ste.push(LayerWeights::init(l, self.d_vis, ste_init, &mut rng)?);
        }
        for l in self.after_layers() {
            ste.push(LayerWeights::init(l, self.d_sem, ste_init, &mut rng)?);
        }

        let mut rng = root.fork(3);
        let s1 = 1.0 / (self.d_vis as f64).sqrt();
        let s2 = 1.0 / (self.d_sem as f64).sqrt();
        let projector = Projector {
            first: Linear {
                weight: rng.uniform_tensor(&[self.d_vis, self.d_sem], -s1, s1),
                bias: Tensor::zeros(&[self.d_sem]),
            },
            second: Linear {
                weight: rng.uniform_tensor(&[self.d_sem, self.d_sem], -s2, s2),
                bias: Tensor::zeros(&[self.d_sem]),
            },
        };

        let mut rng = root.fork(4);
        let scorer = Scorer {
            question: rng.normal_tensor(&[self.questions, self.d_sem], 0.5),
            tokens: rng.normal_tensor(&[self.vocab + 1, self.d_sem], 0.5),
            out_weight: rng.uniform_tensor(&[self.d_sem, self.vocab], -s2, s2),
            out_bias: Tensor::zeros(&[self.vocab]),
        };
        Ok(PipelineWeights {
            encoder,
            ste,
            projector,
            scorer,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameTrace {
    pub encoder_out: usize,
    pub projector_in: usize,
    pub scorer_in: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<R> {
    pub weight: Tensor<R>,
    pub bias: Tensor<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projector<R> {
    pub first: Linear<R>,
    pub second: Linear<R>,
}

/// Toy causal scorer. `tokens` has one extra row used as the
/// beginning-of-answer embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer<R> {
    pub question: Tensor<R>,
    pub tokens: Tensor<R>,
    pub out_weight: Tensor<R>,
    pub out_bias: Tensor<R>,
}

/// Parameter groups with separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Encoder,
    Ste,
    Projector,
    Scorer,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Encoder, Group::Ste, Group::Projector, Group::Scorer];

    pub fn name(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Ste => "ste",
            Group::Projector => "projector",
            Group::Scorer => "scorer",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineWeights<R> {
    pub encoder: Linear<R>,
    /// Visual-space layers first, then semantic-space layers.
    pub ste: Vec<LayerWeights<R>>,
    pub projector: Projector<R>,
    pub scorer: Scorer<R>,
}

impl<R: Real> PipelineWeights<R> {
    /// Every tensor with its group and a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(Group, String, &Tensor<R>)> {
        let mut out = vec![
            (Group::Encoder, "encoder.weight".to_string(), &self.encoder.weight),
            (Group::Encoder, "encoder.bias".to_string(), &self.encoder.bias),
        ];
        for (i, l) in self.ste.iter().enumerate() {
            out.push((Group::Ste, format!("layer{i}.kernel"), &l.kernel));
            out.push((Group::Ste, format!("layer{i}.bias"), &l.bias));
        }
        let p = &self.projector;
        let s = &self.scorer;
        out.extend([
            (Group::Projector, "projector.0.weight".to_string(), &p.first.weight),
            (Group::Projector, "projector.0.bias".to_string(), &p.first.bias),
            (Group::Projector, "projector.1.weight".to_string(), &p.second.weight),
            (Group::Projector, "projector.1.bias".to_string(), &p.second.bias),
            (Group::Scorer, "scorer.question".to_string(), &s.question),
            (Group::Scorer, "scorer.tokens".to_string(), &s.tokens),
            (Group::Scorer, "scorer.out_weight".to_string(), &s.out_weight),
            (Group::Scorer, "scorer.out_bias".to_string(), &s.out_bias),
        ]);
        out
    }

    /// Mutable views in the same order as [`named`](Self::named).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut out = vec![&mut self.encoder.weight, &mut self.encoder.bias];
        for l in &mut self.ste {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
        }
        let p = &mut self.projector;
        let s = &mut self.scorer;
        out.extend([
            &mut p.first.weight,
            &mut p.first.bias,
            &mut p.second.weight,
            &mut p.second.bias,
            &mut s.question,
            &mut s.tokens,
            &mut s.out_weight,
            &mut s.out_bias,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        z
    }

    pub fn param_count(&self, group: Group) -> usize {
        self.named()
            .iter()
            .filter(|(g, _, _)| *g == group)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// SHA-256 over the little-endian bytes of every tensor in `groups`.
    pub fn digest(&self, groups: &[Group]) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (g, name, t) in self.named() {
            if groups.contains(&g) {
                h.update(name.as_bytes());
                h.update(crate::io::payload_bytes(t));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_checkpoint(&self, config: &PipelineConfig) -> Checkpoint {
        let header: toml::Table = config.to_toml().parse().expect("own toml parses");
        let mut ck = Checkpoint::new(header);
        for (_, name, t) in self.named() {
            ck.push(name, t);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(PipelineConfig, Self)> {
        // Other tables (such as the training task) ride along in the header.
        let mut header = ck.header.clone();
        header.retain(|_, v| !v.is_table());
        let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
        let config = PipelineConfig::from_toml(&text)?;
        let mut w = config.init_weights::<R>(InitMode::ScaledUniform)?;
        let names: Vec<String> = w.named().into_iter().map(|(_, n, _)| n).collect();
        for (name, slot) in names.iter().zip(w.tensors_mut()) {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint has no entry '{name}'")))?
                .to_real::<R>();
            if t.shape() != slot.shape() {
                return Err(Error::shape("checkpoint entry", t.shape(), slot.shape()));
            }
            *slot = t;
        }
        Ok((config, w))
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBatch {
    /// Raw frame features, `t × p × d_raw`.
    pub frames: Tensor<f64>,
    pub question: usize,
    pub answer: Vec<usize>,
    pub label: usize,
}

/// Weight leaves of one recorded pass.
pub struct WeightVars {
    /// Every leaf, in [`PipelineWeights::named`] order.
    pub all: Vec<Var>,
    encoder: (Var, Var),
    ste: Vec<(Var, Var)>,
    projector: ProjectorVars,
    scorer: ScorerVars,
}

#[derive(Clone, Copy)]
struct ProjectorVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

#[derive(Clone, Copy)]
struct ScorerVars {
    question: Var,
    tokens: Var,
    out_weight: Var,
    out_bias: Var,
}

impl ProjectorVars {
    fn record<R: Real>(tape: &mut Tape<R>, p: &Projector<R>) -> Self {
        ProjectorVars {
            w1: tape.leaf(p.first.weight.clone()),
            b1: tape.leaf(p.first.bias.clone()),
            w2: tape.leaf(p.second.weight.clone()),
            b2: tape.leaf(p.second.bias.clone()),
        }
    }
}

impl ScorerVars {
    fn record<R: Real>(tape: &mut Tape<R>, s: &Scorer<R>) -> Self {
        ScorerVars {
            question: tape.leaf(s.question.clone()),
            tokens: tape.leaf(s.tokens.clone()),
            out_weight: tape.leaf(s.out_weight.clone()),
            out_bias: tape.leaf(s.out_bias.clone()),
        }
    }
}

impl WeightVars {
    pub fn record<R: Real>(tape: &mut Tape<R>, w: &PipelineWeights<R>) -> Self {
        let encoder = (
            tape.leaf(w.encoder.weight.clone()),
            tape.leaf(w.encoder.bias.clone()),
        );
        let ste: Vec<(Var, Var)> = w
            .ste
            .iter()
            .map(|l| (tape.leaf(l.kernel.clone()), tape.leaf(l.bias.clone())))
            .collect();
        let projector = ProjectorVars::record(tape, &w.projector);
        let scorer = ScorerVars::record(tape, &w.scorer);
        let mut all = vec![encoder.0, encoder.1];
        all.extend(ste.iter().flat_map(|&(k, b)| [k, b]));
        all.extend([projector.w1, projector.b1, projector.w2, projector.b2]);
        all.extend([scorer.question, scorer.tokens, scorer.out_weight, scorer.out_bias]);
        WeightVars {
            all,
            encoder,
            ste,
            projector,
            scorer,
        }
    }
}

fn linear_rows<R: Real>(tape: &mut Tape<R>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row_bias(y, b)
}

fn frames_shape<R: Real>(tape: &Tape<R>, v: Var) -> (usize, usize, usize) {
    let s = tape.value(v).shape();
    (s[0], s[1], s[2])
}

/// Encoder stub on the tape: per-patch affine map `d_raw → d_vis`.
fn encode_on_tape<R: Real>(tape: &mut Tape<R>, raw: Var, w: Var, b: Var) -> Result<Var> {
    let (t, p, d_raw) = frames_shape(tape, raw);
    let d_out = tape.value(w).shape()[1];
    if tape.value(w).shape()[0] != d_raw {
        return Err(Error::shape("encode_frames", tape.value(raw).shape(), tape.value(w).shape()));
    }
    let rows = tape.reshape(raw, &[t * p, d_raw])?;
    let y = linear_rows(tape, rows, w, b)?;
    tape.reshape(y, &[t, p, d_out])
}

fn project_on_tape<R: Real>(
    tape: &mut Tape<R>,
    z: Var,
    pv: ProjectorVars,
    activation: Activation,
) -> Result<Var> {
    let (t, p, d) = frames_shape(tape, z);
    let d_in = tape.value(pv.w1).shape()[0];
    if d != d_in {
        return Err(Error::shape("project", tape.value(z).shape(), tape.value(pv.w1).shape()));
    }
    let rows = tape.reshape(z, &[t * p, d])?;
    let mut h = linear_rows(tape, rows, pv.w1, pv.b1)?;
    if activation == Activation::Gelu {
        h = tape.gelu(h)?;
    }
    let out = linear_rows(tape, h, pv.w2, pv.b2)?;
    let d_out = tape.value(out).shape()[1];
    tape.reshape(out, &[t, p, d_out])
}

/// Per-position log-probabilities `[L]` of `answer` given visual tokens `h`.
fn score_on_tape<R: Real>(
    tape: &mut Tape<R>,
    h: Var,
    sv: ScorerVars,
    question: usize,
    answer: &[usize],
) -> Result<Var> {
    let (t, p, d) = frames_shape(tape, h);
    let (qt, tokens, ow, ob) = (sv.question, sv.tokens, sv.out_weight, sv.out_bias);
    let vocab = tape.value(ow).shape()[1];
    let n_questions = tape.value(qt).shape()[0];
    if answer.is_empty() {
        return Err(Error::Contract("answer must contain at least one token".into()));
    }
    if let Some(&bad) = answer.iter().find(|&&x| x >= vocab) {
        return Err(Error::Contract(format!(
            "answer token {bad} outside vocabulary of {vocab}"
        )));
    }
    if question >= n_questions {
        return Err(Error::Contract(format!(
            "question id {question} outside {n_questions} questions"
        )));
    }
    let rows = tape.reshape(h, &[t * p, d])?;
    let ctx = tape.mean_rows(rows)?;
    let ctx = tape.reshape(ctx, &[d])?;
    let q = tape.gather(qt, (question * d..(question + 1) * d).collect::<Arc<[usize]>>(), &[d])?;
    let cond = tape.add(ctx, q)?;

    // Row i of `prefix_mix` averages the BOS row and answer tokens before i.
    let l = answer.len();
    let bos = vocab;
    let mut mix = vec![R::zero(); l * (vocab + 1)];
    for i in 0..l {
        let w = R::one() / R::from_f64((i + 1) as f64);
        mix[i * (vocab + 1) + bos] += w;
        for &x in &answer[..i] {
            mix[i * (vocab + 1) + x] += w;
        }
    }
    let mix = tape.leaf(Tensor::new(vec![l, vocab + 1], mix)?);
    let prefix = tape.matmul(mix, tokens)?;
    let state = tape.add_row_bias(prefix, cond)?;
    let logits = linear_rows(tape, state, ow, ob)?;
    let logp = tape.log_softmax_rows(logits)?;
    let pick: Arc<[usize]> = answer.iter().enumerate().map(|(i, &x)| i * vocab + x).collect();
    tape.gather(logp, pick, &[l])
}

/// Visual tokens handed to the scorer, plus the frame counts along the way.
fn visual_on_tape<R: Real>(
    tape: &mut Tape<R>,
    config: &PipelineConfig,
    wv: &WeightVars,
    frames: &Tensor<f64>,
) -> Result<(Var, FrameTrace)> {
    if frames.rank() != 3 || frames.shape()[1] != config.p || frames.shape()[2] != config.d_raw {
        return Err(Error::shape(
            "pipeline input",
            frames.shape(),
            &[0, config.p, config.d_raw],
        ));
    }
    let raw = tape.leaf(frames.cast());
    let (ew, eb) = wv.encoder;
    let z = encode_on_tape(tape, raw, ew, eb)?;
    let encoder_out = frames_shape(tape, z).0;
    let ste = &wv.ste;
    let n_before = config.before_layers().len();
    let activation = config.activation();
    let z = layers_on_tape(tape, z, config.before_layers(), &ste[..n_before], activation)?;
    let projector_in = frames_shape(tape, z).0;
    let mut h = project_on_tape(tape, z, wv.projector, config.projector_activation)?;
    if !config.after_layers().is_empty() {
        if n_before > 0 && activation == Activation::Gelu {
            h = tape.gelu(h)?;
        }
        h = layers_on_tape(tape, h, config.after_layers(), &ste[n_before..], activation)?;
    }
    let scorer_in = frames_shape(tape, h).0;
    Ok((
        h,
        FrameTrace {
            encoder_out,
            projector_in,
            scorer_in,
        },
    ))
}

/// Records the mean negative log-likelihood of `batch` on `tape`.
pub fn loss_on_tape<R: Real>(
    tape: &mut Tape<R>,
    config: &PipelineConfig,
    wv: &WeightVars,
    batch: &[ToyBatch],
) -> Result<(Var, Vec<FrameTrace>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut traces = Vec::with_capacity(batch.len());
    for s in batch {
        let (h, trace) = visual_on_tape(tape, config, wv, &s.frames)?;
        let lp = score_on_tape(tape, h, wv.scorer, s.question, &s.answer)?;
        terms.push(tape.sum(lp)?);
        traces.push(trace);
    }
    let total = tape.concat(&terms, 0)?;
    let total = tape.sum(total)?;
    let loss = tape.scale(total, R::from_f64(-1.0 / batch.len() as f64))?;
    Ok((loss, traces))
}

/// Mean negative log-likelihood of `batch`.
pub fn pipeline_forward<R: Real>(
    batch: &[ToyBatch],
    config: &PipelineConfig,
    weights: &PipelineWeights<R>,
) -> Result<R> {
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, weights);
    let (loss, _) = loss_on_tape(&mut tape, config, &wv, batch)?;
    Ok(tape.value(loss).item())
}

/// Loss, per-tensor gradients (same layout as the weights) and frame traces.
pub fn loss_and_grads<R: Real>(
    batch: &[ToyBatch],
    config: &PipelineConfig,
    weights: &PipelineWeights<R>,
) -> Result<(R, PipelineWeights<R>, Vec<FrameTrace>)> {
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, weights);
    let (loss, traces) = loss_on_tape(&mut tape, config, &wv, batch)?;
    let grads = tape.backward(loss)?;
    let mut out = weights.zeros_like();
    for (&v, slot) in wv.all.iter().zip(out.tensors_mut()) {
        if let Some(g) = grads.get(v) {
            *slot = g.clone();
        }
    }
    Ok((tape.value(loss).item(), out, traces))
}

/// Stub vision encoder applied to raw `t × p × d_raw` features.
pub fn encode_frames<R: Real>(raw: &Tensor<f64>, encoder: &Linear<R>) -> Result<FrameEmbeddings<R>> {
    if raw.rank() != 3 {
        return Err(Error::Contract(format!("raw frames must be rank 3, got {:?}", raw.shape())));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(raw.cast());
    let w = tape.leaf(encoder.weight.clone());
    let b = tape.leaf(encoder.bias.clone());
    let z = encode_on_tape(&mut tape, x, w, b)?;
    FrameEmbeddings::new(tape.value(z).clone())
}

/// Two-layer projector applied per frame and patch.
pub fn project<R: Real>(
    z: &FrameEmbeddings<R>,
    projector: &Projector<R>,
    activation: Activation,
) -> Result<FrameEmbeddings<R>> {
    let mut tape = Tape::new();
    let x = tape.leaf(z.tensor().clone());
    let pv = ProjectorVars::record(&mut tape, projector);
    let y = project_on_tape(&mut tape, x, pv, activation)?;
    FrameEmbeddings::new(tape.value(y).clone())
}

/// `Σ_i log p(x_i | visual tokens, question, x_<i)` and the per-position terms.
pub fn score_answer<R: Real>(
    h: &FrameEmbeddings<R>,
    scorer: &Scorer<R>,
    question: usize,
    answer: &[usize],
) -> Result<(R, Vec<R>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(h.tensor().clone());
    if scorer.question.shape()[1] != h.width() {
        return Err(Error::shape("score_answer", h.tensor().shape(), scorer.question.shape()));
    }
    let sv = ScorerVars::record(&mut tape, scorer);
    let lp = score_on_tape(&mut tape, x, sv, question, answer)?;
    let terms = tape.value(lp).data().to_vec();
    let total = tape.sum(lp)?;
    Ok((tape.value(total).item(), terms))
}

/// Log-likelihood of each candidate answer for one example.
pub fn candidate_scores<R: Real>(
    sample: &ToyBatch,
    candidates: &[Vec<usize>],
    config: &PipelineConfig,
    weights: &PipelineWeights<R>,
) -> Result<Vec<R>> {
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, weights);
    let (h, _) = visual_on_tape(&mut tape, config, &wv, &sample.frames)?;
    candidates
        .iter()
        .map(|c| {
            let lp = score_on_tape(&mut tape, h, wv.scorer, sample.question, c)?;
            let s = tape.sum(lp)?;
            Ok(tape.value(s).item())
        })
        .collect()
}

/// Visual tokens reaching the scorer for one clip.
pub fn visual_tokens<R: Real>(
    frames: &Tensor<f64>,
    config: &PipelineConfig,
    weights: &PipelineWeights<R>,
) -> Result<(FrameEmbeddings<R>, FrameTrace)> {
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, weights);
    let (h, trace) = visual_on_tape(&mut tape, config, &wv, frames)?;
    Ok((FrameEmbeddings::new(tape.value(h).clone())?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(stack: Option<&str>) -> PipelineConfig {
        PipelineConfig {
            d_raw: 5,
            d_vis: 6,
            d_sem: 8,
            p: 2,
            vocab: 5,
            questions: 3,
            stack: stack.map(|s| s.parse().unwrap()),
            projector_activation: Activation::Gelu,
            seed: 17,
        }
    }

    fn clip(t: usize, c: &PipelineConfig, seed: u64) -> Tensor<f64> {
        Rng::new(seed).normal_tensor(&[t, c.p, c.d_raw], 1.0)
    }

    #[test]
    fn encoder_keeps_frames_and_maps_zero_to_zero() {
        let c = small(None);
        let w = c.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let z = encode_frames(&Tensor::zeros(&[8, 2, 5]), &w.encoder).unwrap();
        assert_eq!(z.frames(), 8);
        assert!(z.tensor().data().iter().all(|&v| v == 0.0));
        let a = encode_frames(&clip(8, &c, 1), &w.encoder).unwrap();
        let b = encode_frames(&clip(8, &c, 1), &c.init_weights::<f64>(InitMode::ScaledUniform).unwrap().encoder).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_width_mismatch() {
        let c = small(None);
        let w = c.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        assert!(encode_frames(&Tensor::zeros(&[2, 2, 4]), &w.encoder).is_err());
    }

    #[test]
    fn projector_identity_bypass() {
        let d = 4;
        let proj = Projector {
            first: Linear {
                weight: Tensor::<f64>::identity(d),
                bias: Tensor::zeros(&[d]),
            },
            second: Linear {
                weight: Tensor::identity(d),
                bias: Tensor::zeros(&[d]),
            },
        };
        for t in [1, 7, 32] {
            let z = FrameEmbeddings::new(Rng::new(t as u64).normal_tensor(&[t, 3, d], 1.0)).unwrap();
            let out = project(&z, &proj, Activation::None).unwrap();
            assert_eq!(out, z);
            assert_eq!(project(&z, &proj, Activation::Gelu).unwrap().frames(), t);
        }
    }

    #[test]
    fn zero_logits_are_uniform() {
        let c = small(None);
        let mut w = c.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        w.scorer.out_weight = Tensor::zeros(w.scorer.out_weight.shape());
        let h = FrameEmbeddings::new(Rng::new(2).normal_tensor(&[3, 2, 8], 1.0)).unwrap();
        let answer = [1, 4, 0, 2];
        let (total, _) = score_answer(&h, &w.scorer, 0, &answer).unwrap();
        let want = -(answer.len() as f64) * (c.vocab as f64).ln();
        assert!((total - want).abs() < 1e-12, "{total} vs {want}");
    }

    #[test]
    fn scorer_is_causal_and_decomposes() {
        let c = small(None);
        let w = c.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let h = FrameEmbeddings::new(Rng::new(3).normal_tensor(&[4, 2, 8], 1.0)).unwrap();
        let answer = [3, 0, 4, 4, 1];
        let (total, terms) = score_answer(&h, &w.scorer, 2, &answer).unwrap();
        assert!((total - terms.iter().sum::<f64>()).abs() < 1e-12);
        let mut prev = 0.0;
        let mut stepwise = 0.0;
        for i in 1..=answer.len() {
            let (sub, sub_terms) = score_answer(&h, &w.scorer, 2, &answer[..i]).unwrap();
            // earlier positions do not see later tokens
            assert_eq!(&sub_terms[..], &terms[..i]);
            assert!(sub <= prev);
            stepwise += sub_terms[i - 1];
            prev = sub;
        }
        assert!((stepwise - total).abs() < 1e-12);
    }

    #[test]
    fn scorer_rejects_out_of_vocab() {
        let c = small(None);
        let w = c.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let h = FrameEmbeddings::new(Tensor::zeros(&[1, 2, 8])).unwrap();
        assert!(score_answer(&h, &w.scorer, 0, &[5]).is_err());
        assert!(score_answer(&h, &w.scorer, 3, &[0]).is_err());
        assert!(score_answer(&h, &w.scorer, 0, &[]).is_err());
    }

    #[test]
    fn frame_bookkeeping_per_placement() {
        let t = 8;
        let before = small(Some("(2:1)"));
        assert_eq!(before.frame_trace(t), FrameTrace { encoder_out: 8, projector_in: 4, scorer_in: 4 });
        let after = small(Some("(2:1)@after"));
        assert_eq!(after.frame_trace(t), FrameTrace { encoder_out: 8, projector_in: 8, scorer_in: 4 });
        let both = small(Some("(2:1)|(2:1)"));
        assert_eq!(both.frame_trace(t).scorer_in, 2);
        for c in [before, after, both] {
            let w = c.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
            let (_, trace) = visual_tokens(&clip(t, &c, 5), &c, &w).unwrap();
            assert_eq!(trace, c.frame_trace(t));
        }
    }

    #[test]
    fn identity_encoder_is_a_null_effect() {
        let base = small(None);
        let ident = small(Some("(2:2)"));
        let wb = base.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let wi = ident.init_weights::<f64>(InitMode::IdentityPreserving).unwrap();
        let batch = vec![ToyBatch {
            frames: clip(6, &base, 9),
            question: 1,
            answer: vec![2, 3],
            label: 0,
        }];
        let lb = pipeline_forward(&batch, &base, &wb).unwrap();
        let li = pipeline_forward(&batch, &ident, &wi).unwrap();
        assert_eq!(lb, li);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = small(Some("(2:1)|(4:3)"));
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let c = PipelineConfig::from_toml("stack = \"(2:1)\"\ninsertion = \"after\"\nd_sem = 6").unwrap();
        assert_eq!(c.stack.unwrap().insertion, Insertion::AfterProjector);
        assert!(PipelineConfig::from_toml("stack = \"(2:1)\"\ninsertion = \"both\"").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn placement_widths_are_checked() {
        // (4:3) at width 6: n = 4, 3·6 = 18 not divisible by 4
        let c = small(Some("(4:3)"));
        assert!(c.validate().is_err());
        // but valid after the projector at width 8
        assert!(small(Some("(4:3)@after")).validate().is_ok());
    }

    #[test]
    fn semantic_space_costs_more() {
        let s: StackSpec = "(2:2)".parse().unwrap();
        let vis = s.param_count_placed(REFERENCE_D_VIS, REFERENCE_D_SEM).unwrap().total;
        let sem = s
            .clone()
            .with_insertion(Insertion::AfterProjector)
            .param_count_placed(REFERENCE_D_VIS, REFERENCE_D_SEM)
            .unwrap()
            .total;
        let ratio = sem as f64 / vis as f64;
        assert!((9.6..=9.8).contains(&ratio), "{ratio}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = small(Some("(2:1)@after"));
        let w = c.init_weights::<f32>(InitMode::ScaledUniform).unwrap();
        let ck = w.to_checkpoint(&c);
        let back = Checkpoint::from_bytes(&ck.to_bytes(), std::path::Path::new("p")).unwrap();
        let (c2, w2) = PipelineWeights::<f32>::from_checkpoint(&back).unwrap();
        assert_eq!(c2, c);
        assert_eq!(w2, w);
    }
}
