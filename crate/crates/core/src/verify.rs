//! Self-checks runnable from the command line. Each suite produces one
//! [`Check`] per property it tests.

use std::fmt;

use crate::error::{Error, Result};
use crate::finite_diff::{central_difference, max_relative_error};
use crate::pipeline::{loss_and_grads, pipeline_forward, PipelineConfig, ToyBatch};
use crate::planner::plan;
use crate::real::{Precision, Real};
use crate::rng::Rng;
use crate::spec_string::parse_stack;
use crate::ste::{
    stack_forward, stack_record, Activation, FrameEmbeddings, InitMode, LayerSpec, LayerWeights,
    StackSpec,
};
use crate::tensor::Tensor;
use crate::train::{loss_csv, run_two_stage, TrainConfig};

/// Largest allowed gap between [`crate::ste::layer_forward`] and
/// [`reference_layer`] at 64-bit.
pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const GRAD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Grad,
    Identity,
    Determinism,
    Params,
    Ladder,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Oracle,
        Suite::Grad,
        Suite::Identity,
        Suite::Determinism,
        Suite::Params,
        Suite::Ladder,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
                Error::Config(format!("unknown suite '{s}' (expected one of {})", names.join(", ")))
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Grad => "grad",
            Suite::Identity => "identity",
            Suite::Determinism => "determinism",
            Suite::Params => "params",
            Suite::Ladder => "ladder",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub expected: String,
}

pub const REPORT_HEADER: &str = "suite,check,status,measured,expected";

impl Check {
    fn new(
        suite: Suite,
        name: impl Into<String>,
        passed: bool,
        measured: impl fmt::Display,
        expected: impl fmt::Display,
    ) -> Self {
        Check {
            suite,
            name: name.into(),
            passed,
            measured: measured.to_string(),
            expected: expected.to_string(),
        }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }

    /// Stack strings contain commas, so the check name is quoted.
    pub fn csv_row(&self) -> String {
        format!(
            "{},\"{}\",{},{},{}",
            self.suite,
            self.name,
            self.status(),
            self.measured,
            self.expected
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary_line(&self) -> String {
        let ok = self.checks.iter().filter(|c| c.passed).count();
        format!(
            "summary,{},{}/{},{}",
            self.suite,
            ok,
            self.checks.len(),
            if self.passed() { "pass" } else { "fail" }
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for c in &self.checks {
            out.push_str(&c.csv_row());
            out.push('\n');
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}

/// Runs `suite`. `precision` selects the element type for the determinism
/// suite; the gradient and oracle suites always run at 64-bit.
pub fn run_suite(suite: Suite, precision: Precision) -> Result<Report> {
    let checks = match suite {
        Suite::Oracle => oracle_suite(50, 0)?,
        Suite::Grad => grad_suite()?,
        Suite::Identity => identity_suite(20, 0)?,
        Suite::Determinism => match precision {
            Precision::F32 => determinism_suite::<f32>()?,
            Precision::F64 => determinism_suite::<f64>()?,
        },
        Suite::Params => params_suite()?,
        Suite::Ladder => ladder_suite()?,
    };
    Ok(Report { suite, checks })
}

/// Direct nested-loop evaluation of one layer: pad by repeating the last
/// frame, then for every unit, slide and patch form the wrapped window, apply
/// the kernel and scatter the slide outputs into abstract frames.
pub fn reference_layer(
    z: &FrameEmbeddings<f64>,
    spec: &LayerSpec,
    w: &LayerWeights<f64>,
) -> Result<FrameEmbeddings<f64>> {
    let (t, p, d) = (z.frames(), z.patches(), z.width());
    spec.validate(d)?;
    w.check_shape(spec, d)?;
    let n = spec.t_u / spec.t_s;
    let c = spec.t_o * d / n;
    let mut padded: Vec<&[f64]> = (0..t).map(|f| z.frame(f)).collect();
    while padded.len() % spec.t_u != 0 {
        padded.push(z.frame(t - 1));
    }
    let units = padded.len() / spec.t_u;
    let t_out = units * spec.t_o;
    let mut out = vec![0.0; t_out * p * d];
    let (kernel, bias) = (w.kernel.data(), w.bias.data());
    for u in 0..units {
        for i in 0..n {
            for q in 0..p {
                let mut window = Vec::with_capacity(spec.t_w * d);
                for m in 0..spec.t_w {
                    let frame = u * spec.t_u + (i * spec.t_s + m) % spec.t_u;
                    window.extend_from_slice(&padded[frame][q * d..(q + 1) * d]);
                }
                for ch in 0..c {
                    let row = &kernel[ch * spec.t_w * d..(ch + 1) * spec.t_w * d];
                    let mut acc = bias[ch];
                    for (k, x) in row.iter().zip(&window) {
                        acc += k * x;
                    }
                    let flat = i * c + ch;
                    let frame = u * spec.t_o + flat / d;
                    out[(frame * p + q) * d + flat % d] = acc;
                }
            }
        }
    }
    FrameEmbeddings::new(Tensor::new(vec![t_out, p, d], out)?)
}

const ORACLE_SPECS: [(usize, usize); 3] = [(2, 2), (2, 1), (4, 3)];

fn random_width(spec: &LayerSpec, rng: &mut Rng) -> usize {
    loop {
        let d = 2 + rng.below(15);
        if spec.violations(d).is_empty() {
            return d;
        }
    }
}

fn random_frames(t: usize, p: usize, d: usize, rng: &mut Rng) -> FrameEmbeddings<f64> {
    FrameEmbeddings::new(rng.normal_tensor(&[t, p, d], 1.0)).expect("rank 3")
}

/// `count` random instances with `t ∈ [1, 64]`, `p ∈ [1, 8]`, `d ∈ [2, 16]`.
pub fn oracle_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed).fork(30);
    let mut checks = Vec::with_capacity(count);
    for i in 0..count {
        let (t_u, t_o) = ORACLE_SPECS[i % ORACLE_SPECS.len()];
        let spec = LayerSpec::ratio(t_u, t_o);
        let t = 1 + rng.below(64);
        let p = 1 + rng.below(8);
        let d = random_width(&spec, &mut rng);
        let z = random_frames(t, p, d, &mut rng);
        let w = LayerWeights::init(&spec, d, InitMode::ScaledUniform, &mut rng)?;
        let fast = crate::ste::layer_forward(&z, &spec, &w)?;
        let slow = reference_layer(&z, &spec, &w)?;
        let (err, ok) = if fast.tensor().shape() == slow.tensor().shape() {
            let e = fast.tensor().max_abs_diff(slow.tensor());
            (e, e <= ORACLE_TOLERANCE)
        } else {
            (f64::INFINITY, false)
        };
        checks.push(Check::new(
            Suite::Oracle,
            format!("{spec} t={t} p={p} d={d}"),
            ok,
            format!("{err:.3e}"),
            format!("<={ORACLE_TOLERANCE:.0e}"),
        ));
    }
    Ok(checks)
}

fn stack_grad_checks(
    label: &str,
    stack: &StackSpec,
    t: usize,
    p: usize,
    d: usize,
    rng: &mut Rng,
) -> Result<Vec<Check>> {
    let z = random_frames(t, p, d, rng);
    let ws: Vec<LayerWeights<f64>> = stack.init_weights(d, InitMode::ScaledUniform, rng)?;
    let t_out = stack.frame_ladder(t).last().copied().unwrap_or(t);
    let upstream: Tensor<f64> = rng.normal_tensor(&[t_out, p, d], 1.0);
    let analytic = stack_record(&z, stack, &ws)?.backward(&upstream)?;
    let objective = |z: &FrameEmbeddings<f64>, ws: &[LayerWeights<f64>]| -> f64 {
        let y = stack_forward(z, stack, ws).expect("valid stack");
        y.tensor().data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };

    let mut checks = Vec::new();
    let mut push = |name: String, a: &Tensor<f64>, numeric: Tensor<f64>| {
        let e = max_relative_error(a, &numeric);
        checks.push(Check::new(
            Suite::Grad,
            format!("{label} {name}"),
            e <= GRAD_TOLERANCE,
            format!("{e:.3e}"),
            format!("<={GRAD_TOLERANCE:.0e}"),
        ));
    };
    let numeric = central_difference(
        |x| objective(&FrameEmbeddings::new(x.clone()).expect("rank 3"), &ws),
        z.tensor(),
        GRAD_STEP,
    );
    push("input".into(), &analytic.input, numeric);
    for (li, g) in analytic.layers.iter().enumerate() {
        let numeric = central_difference(
            |k| {
                let mut w = ws.clone();
                w[li].kernel = k.clone();
                objective(&z, &w)
            },
            &ws[li].kernel,
            GRAD_STEP,
        );
        push(format!("layer{li}.kernel"), &g.kernel, numeric);
        let numeric = central_difference(
            |b| {
                let mut w = ws.clone();
                w[li].bias = b.clone();
                objective(&z, &w)
            },
            &ws[li].bias,
            GRAD_STEP,
        );
        push(format!("layer{li}.bias"), &g.bias, numeric);
    }
    Ok(checks)
}

/// Small random batch for the toy pipeline.
pub fn random_batch(config: &PipelineConfig, t: usize, len: usize, count: usize, rng: &mut Rng) -> Vec<ToyBatch> {
    (0..count)
        .map(|i| ToyBatch {
            frames: rng.normal_tensor(&[t, config.p, config.d_raw], 1.0),
            question: rng.below(config.questions),
            answer: (0..len).map(|_| rng.below(config.vocab)).collect(),
            label: i % 2,
        })
        .collect()
}

/// Insertion configurations exercised by the gradient suite.
pub fn grad_pipeline_configs() -> Vec<(String, PipelineConfig)> {
    let base = PipelineConfig {
        d_raw: 5,
        d_vis: 6,
        d_sem: 8,
        p: 2,
        vocab: 5,
        questions: 2,
        stack: None,
        ..PipelineConfig::default()
    };
    let mut out = vec![("baseline".to_string(), base.clone())];
    for text in ["(2:1)", "(2:1)@after", "(2:1)|(2:1)@both", "(2:1)-(2:2)|(2:2)@both"] {
        let mut c = base.clone();
        c.stack = Some(parse_stack(text).expect("built-in stack"));
        out.push((text.to_string(), c));
    }
    let mut c = base.clone();
    c.stack = Some(parse_stack("(2:2)-(2:1)").expect("built-in stack").with_activation(Activation::Gelu));
    out.push(("(2:2)-(2:1) gelu".to_string(), c));
    out
}

fn pipeline_grad_checks(label: &str, config: &PipelineConfig, rng: &mut Rng) -> Result<Vec<Check>> {
    let batch = random_batch(config, 4, 2, 2, rng);
    let weights = config.init_weights::<f64>(InitMode::ScaledUniform)?;
    let (_, grads, _) = loss_and_grads(&batch, config, &weights)?;
    let mut checks = Vec::new();
    for (i, (_, name, g)) in grads.named().into_iter().enumerate() {
        let x = weights.named()[i].2.clone();
        let numeric = central_difference(
            |v| {
                let mut w = weights.clone();
                *w.tensors_mut()[i] = v.clone();
                pipeline_forward(&batch, config, &w).expect("valid pipeline")
            },
            &x,
            GRAD_STEP,
        );
        let e = max_relative_error(g, &numeric);
        checks.push(Check::new(
            Suite::Grad,
            format!("{label} {name}"),
            e <= GRAD_TOLERANCE,
            format!("{e:.3e}"),
            format!("<={GRAD_TOLERANCE:.0e}"),
        ));
    }
    Ok(checks)
}

pub fn grad_suite() -> Result<Vec<Check>> {
    let mut rng = Rng::new(0).fork(31);
    let mut checks = Vec::new();
    // Odd lengths so the padded tail feeds gradient back into the last frame.
    for (text, t, d) in [("(2:2)", 5, 4), ("(2:1)", 5, 4), ("(4:3)", 7, 4), ("(2:1)-(2:1)", 7, 4)] {
        let stack = parse_stack(text)?;
        checks.extend(stack_grad_checks(text, &stack, t, 2, d, &mut rng)?);
    }
    let gelu = parse_stack("(2:2)-(4:3)")?.with_activation(Activation::Gelu);
    checks.extend(stack_grad_checks("(2:2)-(4:3) gelu", &gelu, 9, 2, 4, &mut rng)?);
    for (label, config) in grad_pipeline_configs() {
        checks.extend(pipeline_grad_checks(&label, &config, &mut rng)?);
    }
    Ok(checks)
}

/// Identity-initialised stacks and unit locality.
pub fn identity_suite(locality_instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed).fork(32);
    let mut checks = Vec::new();
    for (text, t) in [("(2:2)", 8), ("(2:2)-(2:2)", 7), ("(2:2)-(2:2)-(2:2)", 13), ("(4:4)", 10), ("(3:3,w=3)", 9)] {
        let stack = parse_stack(text)?;
        let (p, d) = (1 + rng.below(4), 2 + rng.below(7));
        let z = random_frames(t, p, d, &mut rng);
        let ws = stack.init_weights::<f64>(d, InitMode::IdentityPreserving, &mut rng)?;
        let y = stack_forward(&z, &stack, &ws)?;
        // Output covers the padded clip: the input followed by copies of its
        // last frame.
        let expect = Tensor::from_fn(y.tensor().shape(), |i| {
            let block = p * d;
            z.frame((i / block).min(t - 1))[i % block]
        });
        let dev = y.tensor().max_abs_diff(&expect);
        checks.push(Check::new(
            Suite::Identity,
            format!("{text} t={t} p={p} d={d}"),
            dev == 0.0,
            format!("{dev:e}"),
            "0",
        ));
    }
    for i in 0..locality_instances {
        let (t_u, t_o) = ORACLE_SPECS[i % ORACLE_SPECS.len()];
        let spec = LayerSpec::ratio(t_u, t_o);
        let t = 1 + rng.below(32);
        let p = 1 + rng.below(4);
        let d = random_width(&spec, &mut rng);
        let z = random_frames(t, p, d, &mut rng);
        let w = LayerWeights::init(&spec, d, InitMode::ScaledUniform, &mut rng)?;
        let frame = rng.below(t);
        let mut bumped = z.clone().into_tensor();
        bumped.data_mut()[(frame * p + rng.below(p)) * d + rng.below(d)] += 1.0;
        let a = crate::ste::layer_forward(&z, &spec, &w)?;
        let b = crate::ste::layer_forward(&FrameEmbeddings::new(bumped)?, &spec, &w)?;
        let unit = frame / t_u;
        let (mut outside, mut inside) = (0.0_f64, 0.0_f64);
        for f in 0..a.frames() {
            let diff = a
                .frame(f)
                .iter()
                .zip(b.frame(f))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if f / t_o == unit {
                inside = inside.max(diff);
            } else {
                outside = outside.max(diff);
            }
        }
        checks.push(Check::new(
            Suite::Identity,
            format!("locality {spec} t={t} p={p} d={d} frame={frame}"),
            outside == 0.0 && inside > 0.0,
            format!("outside={outside:e};inside={inside:.3e}"),
            "outside=0;inside>0",
        ));
    }
    Ok(checks)
}

/// Small two-stage configuration used for determinism checks.
pub fn small_train_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        train_samples: 24,
        eval_samples: 8,
        ..TrainConfig::default()
    }
    .with_seed(seed);
    c.pipeline.d_vis = 8;
    c.pipeline.d_sem = 8;
    c
}

pub fn determinism_suite<R: Real>() -> Result<Vec<Check>> {
    let config = small_train_config(7);
    let mut checks = Vec::new();

    let data = (config.train_data()?, config.train_data()?);
    checks.push(Check::new(
        Suite::Determinism,
        "task generation",
        data.0 == data.1,
        data.0.len(),
        "identical",
    ));

    let a = run_two_stage::<R>(&config)?;
    let b = run_two_stage::<R>(&config)?;
    let (ta, tb) = (loss_csv(&a.trace), loss_csv(&b.trace));
    checks.push(Check::new(
        Suite::Determinism,
        format!("loss trace {}", R::NAME),
        ta == tb,
        format!("{} steps", a.trace.len()),
        "identical",
    ));
    for (stage, wa, wb) in [
        ("stage1", &a.after_pretrain, &b.after_pretrain),
        ("stage2", &a.weights, &b.weights),
    ] {
        let ca = wa.to_checkpoint(&config.pipeline).to_bytes();
        let cb = wb.to_checkpoint(&config.pipeline).to_bytes();
        checks.push(Check::new(
            Suite::Determinism,
            format!("{stage} checkpoint {}", R::NAME),
            ca == cb,
            format!("{} bytes", ca.len()),
            "identical",
        ));
    }
    checks.push(Check::new(
        Suite::Determinism,
        "pretrain freeze",
        a.frozen_digest_before == a.frozen_digest_after,
        &a.frozen_digest_after[..16],
        &a.frozen_digest_before[..16],
    ));
    Ok(checks)
}

/// Width of the reference vision encoder output.
pub const REFERENCE_D: usize = crate::pipeline::REFERENCE_D_VIS;

/// Reported trainable-parameter sizes, in millions, for stacks at the
/// reference widths.
pub fn reference_param_rows() -> Vec<(&'static str, StackSpec, usize, f64)> {
    let d_sem = crate::pipeline::REFERENCE_D_SEM;
    vec![
        ("-0% frames", StackSpec::homogeneous(2, 2, 1), REFERENCE_D, 2.65),
        ("-50% frames", StackSpec::homogeneous(2, 1, 1), REFERENCE_D, 1.33),
        ("-75% frames", StackSpec::homogeneous(2, 1, 2), REFERENCE_D, 2.65),
        ("-87.5% frames", StackSpec::homogeneous(2, 1, 3), REFERENCE_D, 3.98),
        ("-93.75% frames", StackSpec::homogeneous(2, 1, 4), REFERENCE_D, 5.31),
        ("semantic space", StackSpec::homogeneous(2, 2, 1), d_sem, 25.69),
    ]
}

/// Relative gap between a reported size in millions and the exact count
/// rounded to two decimals of millions.
pub fn reported_gap(reported_millions: f64, exact: usize) -> f64 {
    let rounded = (exact as f64 / 1e4).round() / 100.0;
    (reported_millions - rounded).abs() / rounded
}

pub fn params_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (label, stack, d, reported) in reference_param_rows() {
        let exact = stack.param_count(d)?.total;
        let gap = reported_gap(reported, exact);
        checks.push(Check::new(
            Suite::Params,
            format!("{label} {stack} d={d}"),
            gap <= 0.005,
            exact,
            format!("~{reported}M"),
        ));
    }
    let two = StackSpec::homogeneous(2, 2, 1);
    let ratio = two.param_count(crate::pipeline::REFERENCE_D_SEM)?.total as f64
        / two.param_count(REFERENCE_D)?.total as f64;
    checks.push(Check::new(
        Suite::Params,
        "semantic/visual ratio",
        (9.6..=9.8).contains(&ratio),
        format!("{ratio:.3}"),
        "[9.6;9.8]",
    ));
    Ok(checks)
}

pub fn ladder_suite() -> Result<Vec<Check>> {
    let expected = [0.0, 25.0, 43.75, 50.0, 75.0, 87.5, 93.75];
    let mut checks = Vec::new();
    for (stack, want) in crate::planner::reference_ladder().iter().zip(expected) {
        let pl = plan(crate::planner::REFERENCE_FRAMES, 1, REFERENCE_D, stack)?;
        let got = 100.0 * pl.effective_fraction;
        checks.push(Check::new(
            Suite::Ladder,
            format!("{stack} t=32"),
            got == want && pl.reduction_pct() == want,
            format!("{got}% ({} frames)", pl.final_frames),
            format!("{want}%"),
        ));
    }
    let pad = LayerSpec::ratio(2, 1).padding(31);
    checks.push(Check::new(Suite::Ladder, "t=31 (2:1) padding", pad == 1, pad, 1));
    let frames = LayerSpec::ratio(2, 1).output_frames(31);
    checks.push(Check::new(Suite::Ladder, "t=31 (2:1) output frames", frames == 16, frames, 16));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("speed").is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for s in [Suite::Params, Suite::Ladder, Suite::Oracle, Suite::Identity] {
            let r = run_suite(s, Precision::F64).unwrap();
            assert!(r.passed(), "{}", r.to_csv());
        }
    }

    #[test]
    fn report_lines() {
        let r = run_suite(Suite::Params, Precision::F64).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with(REPORT_HEADER));
        assert_eq!(csv.lines().last().unwrap(), "summary,params,7/7,pass");
    }

    #[test]
    fn reported_gap_uses_two_decimals() {
        assert!(reported_gap(2.65, 2_655_360) < 0.005);
        assert!(reported_gap(2.0, 2_655_360) > 0.005);
    }

    #[test]
    fn reference_agrees_on_identity() {
        let spec = LayerSpec::ratio(2, 2);
        let w = LayerWeights::init(&spec, 3, InitMode::IdentityPreserving, &mut Rng::new(0)).unwrap();
        let z = FrameEmbeddings::new(Tensor::from_fn(&[4, 2, 3], |i| i as f64)).unwrap();
        assert_eq!(reference_layer(&z, &spec, &w).unwrap(), z);
    }
}
