//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use stekit::pipeline::{loss_and_grads, pipeline_forward, PipelineConfig, ToyBatch};
use stekit::planner::plan;
use stekit::spec_string::parse_stack;
use stekit::ste::{layer_forward, pad_replicate, stack_forward, stack_record, Activation, InitMode};
use stekit::train::{loss_csv, run_two_stage, TaskKind, TrainConfig};
use stekit::{FrameEmbeddings, LayerSpec, LayerWeights, Rng, StackSpec, Tensor};

use common::{naive_layer, numeric_grad, random_frames, rel_err, valid_width};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `c·t_w·d + c` per layer, summed.
fn hand_param_count(layers: &[(usize, usize)], d: usize) -> usize {
    layers
        .iter()
        .map(|&(t_u, t_o)| {
            let n = t_u; // stride 1
            let c = t_o * d / n;
            c * 2 * d + c
        })
        .sum()
}

fn parameter_reproduction() -> Outcome {
    let rows: [(&str, usize, usize, usize, f64); 5] = [
        ("(2:1)", 2, 1, 1, 1.33),
        ("(2:1)x2", 2, 1, 2, 2.65),
        ("(2:1)x3", 2, 1, 3, 3.98),
        ("(2:1)x4", 2, 1, 4, 5.31),
        ("(2:2)", 2, 2, 1, 2.65),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, t_u, t_o, depth, reported) in rows {
        let lib = StackSpec::homogeneous(t_u, t_o, depth).param_count(1152).unwrap().total;
        let hand = hand_param_count(&vec![(t_u, t_o); depth], 1152);
        let rounded = (hand as f64 / 1e4).round() / 100.0;
        let gap = (reported - rounded).abs() / rounded;
        ok &= lib == hand && gap <= 0.005;
        parts.push(format!("{label}={lib} (~{reported}M, gap {:.2}%)", gap * 100.0));
    }
    ensure(ok, parts.join("; "))
}

fn placement_cost() -> Outcome {
    let s = StackSpec::homogeneous(2, 2, 1);
    let vis = s.param_count(1152).unwrap().total;
    let sem = s.param_count(3584).unwrap().total;
    let ratio = sem as f64 / vis as f64;
    ensure(
        (9.6..=9.8).contains(&ratio) && sem == hand_param_count(&[(2, 2)], 3584),
        format!("{sem} / {vis} = {ratio:.3}"),
    )
}

fn compression_ladder() -> Outcome {
    let cases: [(&str, f64); 6] = [
        ("(4:3)", 25.0),
        ("(4:3)-(4:3)", 43.75),
        ("(2:1)", 50.0),
        ("(2:1)-(2:1)", 75.0),
        ("(2:1)-(2:1)-(2:1)", 87.5),
        ("(2:1)-(2:1)-(2:1)-(2:1)", 93.75),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (text, want) in cases {
        let stack = parse_stack(text).unwrap();
        let p = plan(32, 196, 1152, &stack).unwrap();
        // frames by hand: ceil(t / t_u) · t_o per layer
        let frames = stack
            .layers
            .iter()
            .fold(32usize, |t, l| t.div_ceil(l.t_u) * l.t_o);
        let got = 100.0 * (1.0 - frames as f64 / 32.0);
        ok &= got == want && p.reduction_pct() == want && p.final_frames == frames;
        parts.push(format!("{text}={got}%"));
    }
    ensure(ok, parts.join("; "))
}

fn padding_edge_case() -> Outcome {
    let spec = LayerSpec::ratio(2, 1);
    let z = FrameEmbeddings::new(Tensor::from_fn(&[31, 1, 2], |i| i as f64)).unwrap();
    let (padded, k) = pad_replicate(&z, 2);
    let ok = spec.padding(31) == 1
        && k == 1
        && padded.frames() == 32
        && padded.frame(31) == z.frame(30)
        && spec.output_frames(31) == 16
        && spec.padding(32) == 0;
    ensure(ok, format!("k={k}, padded frames={}, output frames={}", padded.frames(), spec.output_frames(31)))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = Rng::new(2024);
    let specs = [(2, 2), (2, 1), (4, 3)];
    let mut worst = 0.0_f64;
    for i in 0..50 {
        let (t_u, t_o) = specs[i % 3];
        let spec = LayerSpec::ratio(t_u, t_o);
        let t = 1 + rng.below(64);
        let p = 1 + rng.below(8);
        let d = valid_width(&mut rng, &spec, 2, 16);
        let z = random_frames(&mut rng, t, p, d);
        let w = LayerWeights::init(&spec, d, InitMode::ScaledUniform, &mut rng).unwrap();
        let fast = layer_forward(&z, &spec, &w).unwrap();
        let slow = naive_layer(&z, &spec, &w);
        if fast.tensor().shape() != slow.shape() {
            return Err(format!("shape mismatch for {spec} t={t} p={p} d={d}"));
        }
        worst = worst.max(fast.tensor().max_abs_diff(&slow));
    }
    ensure(worst <= 1e-12, format!("50 instances, max abs diff {worst:.2e}"))
}

fn toy_batch(config: &PipelineConfig, rng: &mut Rng) -> Vec<ToyBatch> {
    (0..2)
        .map(|i| ToyBatch {
            frames: Tensor::from_fn(&[4, config.p, config.d_raw], |_| rng.normal()),
            question: i % config.questions,
            answer: vec![rng.below(config.vocab), rng.below(config.vocab)],
            label: i,
        })
        .collect()
}

fn gradient_suite() -> Outcome {
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
    let mut configs = vec![("mean-pool".to_string(), base.clone())];
    for text in ["(2:1)", "(2:1)@after", "(2:1)|(2:1)@both", "(2:2)-(2:1)"] {
        let mut c = base.clone();
        let mut s = parse_stack(text).unwrap();
        if text == "(2:2)-(2:1)" {
            s = s.with_activation(Activation::Gelu);
        }
        c.stack = Some(s);
        configs.push((text.to_string(), c));
    }
    let mut rng = Rng::new(77);
    let mut worst = 0.0_f64;
    let mut tensors = 0;
    for (label, config) in &configs {
        let batch = toy_batch(config, &mut rng);
        let weights = config.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let (_, grads, _) = loss_and_grads(&batch, config, &weights).unwrap();
        for (i, (_, name, g)) in grads.named().into_iter().enumerate() {
            let x = weights.named()[i].2.clone();
            let numeric = numeric_grad(
                |v| {
                    let mut w = weights.clone();
                    *w.tensors_mut()[i] = v.clone();
                    pipeline_forward(&batch, config, &w).unwrap()
                },
                &x,
                1e-5,
            );
            let e = rel_err(g, &numeric);
            if e > 1e-6 {
                return Err(format!("{label} {name}: rel err {e:.2e}"));
            }
            worst = worst.max(e);
            tensors += 1;
        }
    }
    // Stack-level, odd lengths so padding routes gradient into the last frame.
    for (text, t) in [("(2:1)", 5), ("(4:3)", 7), ("(2:2)-(2:1)", 9)] {
        let stack = parse_stack(text).unwrap();
        let (p, d) = (2, 4);
        let z = random_frames(&mut rng, t, p, d);
        let ws = stack.init_weights::<f64>(d, InitMode::ScaledUniform, &mut rng).unwrap();
        let t_out = *stack.frame_ladder(t).last().unwrap();
        let up = Tensor::from_fn(&[t_out, p, d], |_| rng.normal());
        let g = stack_record(&z, &stack, &ws).unwrap().backward(&up).unwrap();
        let f = |z: &Tensor<f64>| {
            let y = stack_forward(&FrameEmbeddings::new(z.clone()).unwrap(), &stack, &ws).unwrap();
            y.tensor().data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let e = rel_err(&g.input, &numeric_grad(f, z.tensor(), 1e-5));
        if e > 1e-6 {
            return Err(format!("{text} input: rel err {e:.2e}"));
        }
        worst = worst.max(e);
        tensors += 1;
        for li in 0..ws.len() {
            let fk = |k: &Tensor<f64>| {
                let mut w = ws.clone();
                w[li].kernel = k.clone();
                let y = stack_forward(&z, &stack, &w).unwrap();
                y.tensor().data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let e = rel_err(&g.layers[li].kernel, &numeric_grad(fk, &ws[li].kernel, 1e-5));
            if e > 1e-6 {
                return Err(format!("{text} layer{li}.kernel: rel err {e:.2e}"));
            }
            worst = worst.max(e);
            tensors += 1;
        }
    }
    Ok(format!(
        "{} pipeline configs + 3 stacks, {tensors} tensors, max rel err {worst:.2e}",
        configs.len()
    ))
}

fn identity_and_locality() -> Outcome {
    let mut rng = Rng::new(5);
    for depth in 1..=3 {
        let stack = StackSpec::homogeneous(2, 2, depth);
        let (t, p, d) = (2 * (3 + rng.below(8)), 1 + rng.below(5), 2 + rng.below(9));
        let z = random_frames(&mut rng, t, p, d);
        let ws = stack.init_weights::<f64>(d, InitMode::IdentityPreserving, &mut rng).unwrap();
        let y = stack_forward(&z, &stack, &ws).unwrap();
        if y != z {
            return Err(format!("identity (2:2)x{depth} changed its input"));
        }
    }
    let specs = [(2, 2), (2, 1), (4, 3)];
    for i in 0..20 {
        let (t_u, t_o) = specs[i % 3];
        let spec = LayerSpec::ratio(t_u, t_o);
        let t = 2 * t_u + rng.below(30);
        let p = 1 + rng.below(4);
        let d = valid_width(&mut rng, &spec, 2, 12);
        let z = random_frames(&mut rng, t, p, d);
        let w = LayerWeights::init(&spec, d, InitMode::ScaledUniform, &mut rng).unwrap();
        let f = rng.below(t);
        let mut bumped = z.tensor().clone();
        bumped.data_mut()[(f * p + rng.below(p)) * d + rng.below(d)] += 0.5;
        let a = layer_forward(&z, &spec, &w).unwrap();
        let b = layer_forward(&FrameEmbeddings::new(bumped).unwrap(), &spec, &w).unwrap();
        let unit = f / t_u;
        for out in 0..a.frames() {
            let same = a.frame(out) == b.frame(out);
            if out / t_o != unit && !same {
                return Err(format!("{spec} t={t}: frame {f} leaked into output frame {out}"));
            }
        }
        let touched = (unit * t_o..(unit + 1) * t_o).any(|o| a.frame(o) != b.frame(o));
        if !touched {
            return Err(format!("{spec} t={t}: frame {f} did not reach its own unit"));
        }
    }
    Ok("identity stacks depth 1-3 exact; 20 locality instances".into())
}

fn reversed(x: &Tensor<f64>) -> Tensor<f64> {
    let t = x.shape()[0];
    let block = x.len() / t;
    Tensor::from_fn(x.shape(), |i| x.data()[(t - 1 - i / block) * block + i % block])
}

fn temporal_separation() -> Outcome {
    // (a) and (b): random weights and clips.
    let mut rng = Rng::new(11);
    let mut differs = 0;
    for draw in 0..10 {
        let mut base = PipelineConfig {
            seed: draw,
            stack: None,
            ..PipelineConfig::default()
        };
        let sample = ToyBatch {
            frames: Tensor::from_fn(&[8, base.p, base.d_raw], |_| rng.normal()),
            question: 0,
            answer: vec![rng.below(base.vocab), rng.below(base.vocab)],
            label: 0,
        };
        let back = ToyBatch {
            frames: reversed(&sample.frames),
            ..sample.clone()
        };
        let w = base.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let (l0, l1) = (
            pipeline_forward(&[sample.clone()], &base, &w).unwrap(),
            pipeline_forward(&[back.clone()], &base, &w).unwrap(),
        );
        if l0.to_bits() != l1.to_bits() {
            return Err(format!("mean-pool loss changed under reversal on draw {draw}: {l0} vs {l1}"));
        }
        base.stack = Some(StackSpec::homogeneous(2, 1, 1));
        let w = base.init_weights::<f64>(InitMode::ScaledUniform).unwrap();
        let (s0, s1) = (
            pipeline_forward(&[sample], &base, &w).unwrap(),
            pipeline_forward(&[back], &base, &w).unwrap(),
        );
        if s0 != s1 {
            differs += 1;
        }
    }
    if differs < 9 {
        return Err(format!("STE loss differed under reversal on only {differs}/10 draws"));
    }

    // (c): two-stage training on the order task, both arms.
    let config = TrainConfig::default();
    assert_eq!(config.task.kind, TaskKind::OrderDiscrimination);
    let ste = run_two_stage::<f32>(&config).map_err(|e| e.to_string())?;
    let baseline = run_two_stage::<f32>(&config.baseline()).map_err(|e| e.to_string())?;
    let frozen = ste.frozen_digest_before == ste.frozen_digest_after;
    let detail = format!(
        "mean-pool reversal-invariant 10/10; STE differs {differs}/10; STE train acc {:.3} \
         (held-out {:.3}); mean-pool held-out acc {:.3} on {}",
        ste.train.accuracy, ste.eval.accuracy, baseline.eval.accuracy, baseline.eval.count
    );
    ensure(
        frozen
            && ste.train.accuracy > 0.90
            && baseline.eval.count == 200
            && (baseline.eval.accuracy - 0.5).abs() <= 0.05,
        detail,
    )
}

fn determinism() -> Outcome {
    let config = TrainConfig::default().with_seed(3);
    let a = run_two_stage::<f32>(&config).map_err(|e| e.to_string())?;
    let b = run_two_stage::<f32>(&config).map_err(|e| e.to_string())?;
    let same_trace = loss_csv(&a.trace) == loss_csv(&b.trace);
    let ck = |w: &stekit::pipeline::PipelineWeights<f32>| w.to_checkpoint(&config.pipeline).to_bytes();
    let same_stage1 = ck(&a.after_pretrain) == ck(&b.after_pretrain);
    let same_stage2 = ck(&a.weights) == ck(&b.weights);
    ensure(
        same_trace && same_stage1 && same_stage2,
        format!(
            "{} steps; traces {}, stage-1 checkpoints {}, stage-2 checkpoints {}",
            a.trace.len(),
            if same_trace { "identical" } else { "differ" },
            if same_stage1 { "identical" } else { "differ" },
            if same_stage2 { "identical" } else { "differ" },
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("parameter reproduction", parameter_reproduction),
        ("placement cost", placement_cost),
        ("compression ladder", compression_ladder),
        ("padding edge case", padding_edge_case),
        ("oracle equivalence", oracle_equivalence),
        ("gradient suite", gradient_suite),
        ("identity and locality", identity_and_locality),
        ("temporal separation", temporal_separation),
        ("determinism", determinism),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(out, "criterion {} {name}: {tag} ({secs:.2}s) {detail}", i + 1).unwrap();
    }
    writeln!(out, "acceptance: {}/9 passed", 9 - failed).unwrap();
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
