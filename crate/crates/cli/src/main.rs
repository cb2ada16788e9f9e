use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stekit::io::{read_tensor, write_tensor, Checkpoint};
use stekit::pipeline::PipelineWeights;
use stekit::planner::{ladder_table, plan, reference_ladder, CSV_HEADER, DEFAULT_PATCHES, REFERENCE_FRAMES};
use stekit::ste::{stack_forward, InitMode};
use stekit::train::{evaluate, loss_csv, run_two_stage, SyntheticTask, TaskKind, TrainConfig};
use stekit::verify::{run_suite, Suite};
use stekit::{Error, FrameEmbeddings, LayerWeights, Precision, Real, Rng, StackSpec};

const PRECISION_VAR: &str = "STEKIT_PRECISION";

#[derive(Parser)]
#[command(name = "stekit", version, about = "Stackable temporal encoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frame, token and parameter budget of one stack, as CSV.
    Plan {
        spec: String,
        #[arg(long, default_value_t = REFERENCE_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_PATCHES)]
        patches: usize,
        #[arg(long, default_value_t = 1152)]
        dim: usize,
        /// Also print the per-layer frame bookkeeping.
        #[arg(long)]
        layers: bool,
    },
    /// Run a built-in invariant suite.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
    },
    /// Run a stack over an embedding file.
    Forward {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        spec: String,
        /// Checkpoint holding layer{i}.kernel / layer{i}.bias.
        #[arg(long, conflicts_with = "init")]
        weights: Option<PathBuf>,
        /// Fresh weights instead of a checkpoint.
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the weights used to this checkpoint path.
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
    /// Two-stage training on a synthetic task.
    Train {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Accuracy of a trained checkpoint on fresh synthetic data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the task recorded in the checkpoint.
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Seed for drawing the evaluation samples.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trainable parameters per layer, as CSV.
    ParamCount {
        spec: String,
        /// Width of layers placed before the projector.
        #[arg(long, default_value_t = 1152)]
        dim: usize,
        /// Width of layers placed after the projector.
        #[arg(long, default_value_t = 3584)]
        sem_dim: usize,
    },
    /// Reduction ladder for several stacks (the reference set by default).
    Ladder {
        specs: Vec<String>,
        #[arg(long, default_value_t = REFERENCE_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_PATCHES)]
        patches: usize,
        #[arg(long, default_value_t = 1152)]
        dim: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Oracle,
    Grad,
    Identity,
    Determinism,
    Params,
    Ladder,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Identity,
    Uniform,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Order,
    Motion,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Order => TaskKind::OrderDiscrimination,
            TaskArg::Motion => TaskKind::MotionDirection,
        }
    }
}

/// Why a command stopped; maps onto the process exit code.
enum Failure {
    Verification,
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn precision(default: Precision) -> Result<Precision, Failure> {
    match std::env::var(PRECISION_VAR) {
        Ok(v) => Precision::parse(&v).map_err(|e| Failure::Usage(format!("{PRECISION_VAR}: {e}"))),
        Err(_) => Ok(default),
    }
}

fn parse_spec(text: &str) -> Result<StackSpec, Failure> {
    text.parse::<StackSpec>()
        .map_err(|e| Failure::Usage(format!("spec '{text}': {e}")))
}

fn file_error(path: &Path, field: &str, msg: impl Into<String>) -> Failure {
    Failure::Usage(format!("{}: {field}: {}", path.display(), msg.into()))
}

fn cmd_plan(spec: &str, frames: usize, patches: usize, dim: usize, layers: bool) -> Outcome {
    let stack = parse_spec(spec)?;
    let p = plan(frames, patches, dim, &stack)?;
    println!("{CSV_HEADER}\n{}", p.csv_row());
    if layers {
        print!("{}", p.layers_csv());
    }
    Ok(())
}

fn cmd_verify(suite: SuiteArg) -> Outcome {
    let p = precision(Precision::F64)?;
    let suites: Vec<Suite> = match suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Oracle => vec![Suite::Oracle],
        SuiteArg::Grad => vec![Suite::Grad],
        SuiteArg::Identity => vec![Suite::Identity],
        SuiteArg::Determinism => vec![Suite::Determinism],
        SuiteArg::Params => vec![Suite::Params],
        SuiteArg::Ladder => vec![Suite::Ladder],
    };
    let mut ok = true;
    for s in suites {
        let report = run_suite(s, p)?;
        print!("{}", report.to_csv());
        ok &= report.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn load_stack_weights<R: Real>(
    ck: &Checkpoint,
    path: &Path,
    stack: &StackSpec,
    d: usize,
) -> Result<Vec<LayerWeights<R>>, Failure> {
    if let Some(saved) = ck.header_str("stack") {
        let saved = parse_spec(saved)?;
        if saved.layers != stack.layers {
            return Err(file_error(
                path,
                "stack",
                format!("checkpoint holds {saved}, but --spec is {stack}"),
            ));
        }
    }
    let mut out = Vec::with_capacity(stack.depth());
    for (i, layer) in stack.layers.iter().enumerate() {
        let c = layer.channels(d);
        let get = |suffix: &str, want: Vec<usize>| {
            let field = format!("layer{i}.{suffix}");
            let t = ck
                .get(&field)
                .ok_or_else(|| file_error(path, &field, "missing entry"))?;
            if t.shape() != want.as_slice() {
                return Err(file_error(
                    path,
                    &field,
                    format!("shape {:?} does not fit width {d} (expected {want:?})", t.shape()),
                ));
            }
            Ok(t.to_real::<R>())
        };
        let kernel = get("kernel", vec![c, layer.t_w * d])?;
        let bias = get("bias", vec![c])?;
        out.push(LayerWeights { kernel, bias });
    }
    Ok(out)
}

struct ForwardArgs<'a> {
    input: &'a Path,
    spec: &'a str,
    weights: Option<&'a Path>,
    init: Option<InitArg>,
    seed: u64,
    out: &'a Path,
    save_weights: Option<&'a Path>,
}

fn forward_in<R: Real>(a: &ForwardArgs, raw: stekit::io::AnyTensor) -> Outcome {
    let mut stack = parse_spec(a.spec)?;
    let z = FrameEmbeddings::new(raw.to_real::<R>())
        .map_err(|e| file_error(a.input, "shape", e.to_string()))?;
    let d = z.width();
    if let Err(e) = stack.validate(d) {
        return Err(file_error(a.input, "width", format!("{d} does not fit {stack}: {e}")));
    }
    let ws = match (a.weights, a.init) {
        (Some(path), _) => {
            let ck = Checkpoint::read(path)?;
            if let Some(act) = ck.header_str("activation") {
                stack.activation = stekit::io::parse_activation(act)?;
            }
            load_stack_weights::<R>(&ck, path, &stack, d)?
        }
        (None, Some(init)) => {
            let mode = match init {
                InitArg::Identity => InitMode::IdentityPreserving,
                InitArg::Uniform => InitMode::ScaledUniform,
            };
            stack.init_weights(d, mode, &mut Rng::new(a.seed))?
        }
        (None, None) => {
            return Err(Failure::Usage("forward needs --weights or --init".into()));
        }
    };
    let y = stack_forward(&z, &stack, &ws)?;
    write_tensor(a.out, y.tensor())?;
    if let Some(path) = a.save_weights {
        Checkpoint::from_stack(&stack, &ws).write(path)?;
    }
    eprintln!(
        "{}: {} frames -> {} frames ({})",
        a.out.display(),
        z.frames(),
        y.frames(),
        R::NAME
    );
    Ok(())
}

fn cmd_forward(a: ForwardArgs) -> Outcome {
    let raw = read_tensor(a.input)?;
    // Without an override, work in the precision the input was stored in.
    let default = match raw.dtype_name() {
        "f32" => Precision::F32,
        _ => Precision::F64,
    };
    match precision(default)? {
        Precision::F32 => forward_in::<f32>(&a, raw),
        Precision::F64 => forward_in::<f64>(&a, raw),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn train_in<R: Real>(config: &TrainConfig, out_dir: &Path) -> Outcome {
    let run = run_two_stage::<R>(config)?;
    config
        .checkpoint(&run.after_pretrain)
        .write(out_dir.join("stage1.stek"))?;
    config.checkpoint(&run.weights).write(out_dir.join("stage2.stek"))?;
    write_file(&out_dir.join("loss.csv"), &loss_csv(&run.trace))?;
    let metrics = run.metrics_toml(config);
    write_file(&out_dir.join("metrics.toml"), &metrics)?;
    print!("{metrics}");
    Ok(())
}

fn cmd_train(task: Option<TaskArg>, config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Outcome {
    let mut c = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            TrainConfig::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(t) = task {
        c.task.kind = t.into();
    }
    if let Some(s) = seed {
        c = c.with_seed(s);
    }
    c.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Failure::Usage(format!("{}: {e}", out_dir.display())))?;
    match precision(Precision::F32)? {
        Precision::F32 => train_in::<f32>(&c, out_dir),
        Precision::F64 => train_in::<f64>(&c, out_dir),
    }
}

fn eval_in<R: Real>(ck: &Checkpoint, task: Option<TaskArg>, samples: usize, seed: u64) -> Outcome {
    let (pipeline, weights) = PipelineWeights::<R>::from_checkpoint(ck)?;
    let mut c = TrainConfig {
        pipeline,
        ..TrainConfig::default()
    };
    if let Some(t) = ck.header.get("task").and_then(|v| v.as_table()) {
        c.task = SyntheticTask::from_toml(t)?;
    }
    if let Some(t) = task {
        c.task.kind = t.into();
    }
    c.sync_task();
    let data = c.task.generate(samples, seed)?;
    let m = evaluate(&c.pipeline, &weights, &data)?;
    println!("accuracy,mean_log_likelihood,samples");
    println!("{:.4},{:.6},{}", m.accuracy, m.mean_log_likelihood, m.count);
    Ok(())
}

fn cmd_eval(path: &Path, task: Option<TaskArg>, samples: usize, seed: u64) -> Outcome {
    let ck = Checkpoint::read(path)?;
    match precision(Precision::F32)? {
        Precision::F32 => eval_in::<f32>(&ck, task, samples, seed),
        Precision::F64 => eval_in::<f64>(&ck, task, samples, seed),
    }
}

fn cmd_param_count(spec: &str, dim: usize, sem_dim: usize) -> Outcome {
    let stack = parse_spec(spec)?;
    let counts = stack.param_count_placed(dim, sem_dim)?;
    let before = stack.before_layers().len();
    println!("layer,spec,width,params");
    for (i, (layer, n)) in stack.layers.iter().zip(&counts.per_layer).enumerate() {
        let width = if i < before { dim } else { sem_dim };
        println!("{i},{layer},{width},{n}");
    }
    println!("total,{stack},,{}", counts.total);
    Ok(())
}

fn cmd_ladder(specs: &[String], frames: usize, patches: usize, dim: usize) -> Outcome {
    let stacks = if specs.is_empty() {
        reference_ladder()
    } else {
        specs.iter().map(|s| parse_spec(s)).collect::<Result<_, _>>()?
    };
    print!("{}", ladder_table(&stacks, frames, patches, dim)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Plan {
            spec,
            frames,
            patches,
            dim,
            layers,
        } => cmd_plan(spec, *frames, *patches, *dim, *layers),
        Command::Verify { suite } => cmd_verify(*suite),
        Command::Forward {
            input,
            spec,
            weights,
            init,
            seed,
            out,
            save_weights,
        } => cmd_forward(ForwardArgs {
            input,
            spec,
            weights: weights.as_deref(),
            init: *init,
            seed: *seed,
            out,
            save_weights: save_weights.as_deref(),
        }),
        Command::Train {
            task,
            config,
            seed,
            out_dir,
        } => cmd_train(*task, config.as_deref(), *seed, out_dir),
        Command::Eval {
            checkpoint,
            task,
            samples,
            seed,
        } => cmd_eval(checkpoint, *task, *samples, *seed),
        Command::ParamCount { spec, dim, sem_dim } => cmd_param_count(spec, *dim, *sem_dim),
        Command::Ladder {
            specs,
            frames,
            patches,
            dim,
        } => cmd_ladder(specs, *frames, *patches, *dim),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => {
            eprintln!("stekit: verification failed");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("stekit: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("stekit: {msg}");
            ExitCode::from(3)
        }
    }
}
