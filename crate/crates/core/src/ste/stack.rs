use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::ste::layer::{layer_on_tape, FrameEmbeddings, InitMode, LayerWeights};
use crate::ste::spec::LayerSpec;
use crate::tensor::Tensor;

/// Where the encoder sits relative to the vision-language projector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Insertion {
    #[default]
    BeforeProjector,
    AfterProjector,
    /// The first `before` layers run in visual space, the rest after the
    /// projector.
    Both { before: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    None,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StackSpec {
    pub layers: Vec<LayerSpec>,
    pub insertion: Insertion,
    pub activation: Activation,
}

impl StackSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        StackSpec {
            layers,
            insertion: Insertion::BeforeProjector,
            activation: Activation::None,
        }
    }

    /// `depth` copies of `(t_u:t_o)`.
    pub fn homogeneous(t_u: usize, t_o: usize, depth: usize) -> Self {
        Self::new(vec![LayerSpec::ratio(t_u, t_o); depth])
    }

    pub fn with_insertion(mut self, insertion: Insertion) -> Self {
        self.insertion = insertion;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layers placed in visual space.
    pub fn before_layers(&self) -> &[LayerSpec] {
        match self.insertion {
            Insertion::BeforeProjector => &self.layers,
            Insertion::AfterProjector => &[],
            Insertion::Both { before } => &self.layers[..before.min(self.layers.len())],
        }
    }

    /// Layers placed in semantic space.
    pub fn after_layers(&self) -> &[LayerSpec] {
        match self.insertion {
            Insertion::BeforeProjector => &[],
            Insertion::AfterProjector => &self.layers,
            Insertion::Both { before } => &self.layers[before.min(self.layers.len())..],
        }
    }

    fn check_structure(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("stack needs at least one layer".into()));
        }
        if let Insertion::Both { before } = self.insertion {
            if before == 0 || before >= self.layers.len() {
                return Err(Error::Contract(format!(
                    "split placement needs layers on both sides of the projector, got {before} of {}",
                    self.layers.len()
                )));
            }
        }
        Ok(())
    }

    /// Validates every layer at one width, ignoring placement.
    pub fn validate(&self, d: usize) -> Result<()> {
        self.check_structure()?;
        let mut all = Vec::new();
        for l in &self.layers {
            all.extend(l.violations(d));
        }
        if all.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(all))
        }
    }

    /// Validates visual-space layers at `d_vis` and semantic-space layers at
    /// `d_sem`.
    pub fn validate_placed(&self, d_vis: usize, d_sem: usize) -> Result<()> {
        self.check_structure()?;
        let mut all = Vec::new();
        for l in self.before_layers() {
            all.extend(l.violations(d_vis));
        }
        for l in self.after_layers() {
            all.extend(l.violations(d_sem));
        }
        if all.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(all))
        }
    }

    /// Frame count after every layer, starting from `t`.
    pub fn frame_ladder(&self, t: usize) -> Vec<usize> {
        let mut out = vec![t];
        for l in &self.layers {
            let last = *out.last().expect("non-empty");
            out.push(l.output_frames(last));
        }
        out
    }

    pub fn param_count(&self, d: usize) -> Result<ParamCount> {
        self.validate(d)?;
        Ok(ParamCount::from_layers(
            self.layers.iter().map(|l| l.param_count(d)).collect(),
        ))
    }

    /// Counts with each layer at the width of its placement.
    pub fn param_count_placed(&self, d_vis: usize, d_sem: usize) -> Result<ParamCount> {
        self.validate_placed(d_vis, d_sem)?;
        let per_layer = self
            .before_layers()
            .iter()
            .map(|l| l.param_count(d_vis))
            .chain(self.after_layers().iter().map(|l| l.param_count(d_sem)))
            .collect();
        Ok(ParamCount::from_layers(per_layer))
    }

    pub fn init_weights<R: Real>(
        &self,
        d: usize,
        mode: InitMode,
        rng: &mut Rng,
    ) -> Result<Vec<LayerWeights<R>>> {
        self.validate(d)?;
        self.layers
            .iter()
            .map(|l| LayerWeights::init(l, d, mode, rng))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<usize>,
    pub total: usize,
}

impl ParamCount {
    fn from_layers(per_layer: Vec<usize>) -> Self {
        let total = per_layer.iter().sum();
        ParamCount { per_layer, total }
    }
}

/// Records `layers` in order, with `activation` between consecutive layers.
pub fn layers_on_tape<R: Real>(
    tape: &mut Tape<R>,
    mut x: Var,
    layers: &[LayerSpec],
    weights: &[(Var, Var)],
    activation: Activation,
) -> Result<Var> {
    if layers.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} layers but {} weight sets",
            layers.len(),
            weights.len()
        )));
    }
    for (i, (spec, &(k, b))) in layers.iter().zip(weights).enumerate() {
        if i > 0 && activation == Activation::Gelu {
            x = tape.gelu(x)?;
        }
        x = layer_on_tape(tape, x, spec, k, b)?;
    }
    Ok(x)
}

/// A recorded pass through a whole stack, ready for a reverse sweep.
pub struct StackRecord<R> {
    pub tape: Tape<R>,
    pub input: Var,
    pub weights: Vec<(Var, Var)>,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct StackGradients<R> {
    pub input: Tensor<R>,
    pub layers: Vec<LayerWeights<R>>,
}

impl<R: Real> StackRecord<R> {
    pub fn output(&self) -> FrameEmbeddings<R> {
        FrameEmbeddings::new(self.tape.value(self.output).clone()).expect("rank 3 output")
    }

    /// Gradients of `sum(output ⊙ upstream)` with respect to every layer's
    /// weights and to the input.
    pub fn backward(mut self, upstream: &Tensor<R>) -> Result<StackGradients<R>> {
        let out_shape = self.tape.value(self.output).shape().to_vec();
        if upstream.shape() != out_shape.as_slice() {
            return Err(Error::shape("stack backward", upstream.shape(), &out_shape));
        }
        let u = self.tape.leaf(upstream.clone());
        let prod = self.tape.mul(self.output, u)?;
        let loss = self.tape.sum(prod)?;
        let grads = self.tape.backward(loss)?;
        let input = grads.get_or_zeros(self.input, self.tape.value(self.input));
        let layers = self
            .weights
            .iter()
            .map(|&(k, b)| LayerWeights {
                kernel: grads.get_or_zeros(k, self.tape.value(k)),
                bias: grads.get_or_zeros(b, self.tape.value(b)),
            })
            .collect();
        Ok(StackGradients { input, layers })
    }
}

/// Runs every layer of `stack` at the input's width and keeps the tape.
pub fn stack_record<R: Real>(
    z: &FrameEmbeddings<R>,
    stack: &StackSpec,
    ws: &[LayerWeights<R>],
) -> Result<StackRecord<R>> {
    stack.validate(z.width())?;
    let mut tape = Tape::new();
    let input = tape.leaf(z.tensor().clone());
    let weights: Vec<(Var, Var)> = ws
        .iter()
        .map(|w| (tape.leaf(w.kernel.clone()), tape.leaf(w.bias.clone())))
        .collect();
    let output = layers_on_tape(&mut tape, input, &stack.layers, &weights, stack.activation)?;
    Ok(StackRecord {
        tape,
        input,
        weights,
        output,
    })
}

pub fn stack_forward<R: Real>(
    z: &FrameEmbeddings<R>,
    stack: &StackSpec,
    ws: &[LayerWeights<R>],
) -> Result<FrameEmbeddings<R>> {
    Ok(stack_record(z, stack, ws)?.output())
}
