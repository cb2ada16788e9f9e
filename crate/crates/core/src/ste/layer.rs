use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::ste::spec::LayerSpec;
use crate::tensor::Tensor;

/// `t × p × d` frame embeddings, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbeddings<R> {
    data: Tensor<R>,
}

impl<R: Real> FrameEmbeddings<R> {
    pub fn new(data: Tensor<R>) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::Contract(format!(
                "frame embeddings need shape [t, p, d], got {:?}",
                data.shape()
            )));
        }
        Ok(FrameEmbeddings { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn patches(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<R> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<R> {
        self.data
    }

    /// The `p × d` block of frame `f`.
    pub fn frame(&self, f: usize) -> &[R] {
        let block = self.patches() * self.width();
        &self.data.data()[f * block..(f + 1) * block]
    }

    pub fn reversed(&self) -> Self {
        let t = self.frames();
        let block = self.patches() * self.width();
        let src = self.data.data();
        let data = Tensor::from_fn(self.data.shape(), |i| {
            let (f, rest) = (i / block, i % block);
            src[(t - 1 - f) * block + rest]
        });
        FrameEmbeddings { data }
    }
}

/// Appends `k` copies of the last frame so the length divides into units of
/// `t_u`. Returns the padded embeddings and `k`.
pub fn pad_replicate<R: Real>(z: &FrameEmbeddings<R>, t_u: usize) -> (FrameEmbeddings<R>, usize) {
    let t = z.frames();
    let k = (t_u - t % t_u) % t_u;
    let block = z.patches() * z.width();
    let mut data = z.tensor().data().to_vec();
    let last = data[(t - 1) * block..].to_vec();
    for _ in 0..k {
        data.extend_from_slice(&last);
    }
    let shape = [t + k, z.patches(), z.width()];
    let data = Tensor::new(shape.to_vec(), data).expect("padded shape");
    (FrameEmbeddings { data }, k)
}

/// Kernel `[c × t_w·d]` and bias `[c]`, shared across patches and units.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<R> {
    pub kernel: Tensor<R>,
    pub bias: Tensor<R>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Frame-selector kernel and zero bias; the layer is an exact identity.
    IdentityPreserving,
    /// Uniform on `(-s, s)`, `s = sqrt(1 / (t_w·d))`.
    ScaledUniform,
}

impl<R: Real> LayerWeights<R> {
    pub fn zeros(spec: &LayerSpec, d: usize) -> Self {
        let c = spec.channels(d);
        LayerWeights {
            kernel: Tensor::zeros(&[c, spec.t_w * d]),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn init(spec: &LayerSpec, d: usize, mode: InitMode, rng: &mut Rng) -> Result<Self> {
        spec.validate(d)?;
        let c = spec.channels(d);
        match mode {
            InitMode::ScaledUniform => {
                let s = (1.0 / (spec.t_w * d) as f64).sqrt();
                Ok(LayerWeights {
                    kernel: rng.uniform_tensor(&[c, spec.t_w * d], -s, s),
                    bias: rng.uniform_tensor(&[c], -s, s),
                })
            }
            InitMode::IdentityPreserving => {
                if spec.t_o != spec.t_u {
                    return Err(Error::Contract(format!(
                        "identity initialisation needs t_o == t_u, got ({}:{})",
                        spec.t_u, spec.t_o
                    )));
                }
                if spec.t_w < spec.t_s {
                    return Err(Error::Contract(format!(
                        "identity initialisation needs t_w >= t_s, got t_w={} t_s={}",
                        spec.t_w, spec.t_s
                    )));
                }
                // c = t_s·d: channel m·d + e of slide i copies dim e of window
                // frame m, which is unit frame i·t_s + m.
                let cols = spec.t_w * d;
                let kernel = Tensor::from_fn(&[c, cols], |idx| {
                    let (ch, col) = (idx / cols, idx % cols);
                    if ch == col {
                        R::one()
                    } else {
                        R::zero()
                    }
                });
                Ok(LayerWeights {
                    kernel,
                    bias: Tensor::zeros(&[c]),
                })
            }
        }
    }

    pub fn check_shape(&self, spec: &LayerSpec, d: usize) -> Result<()> {
        let c = spec.channels(d);
        let want_k = [c, spec.t_w * d];
        if self.kernel.shape() != want_k {
            return Err(Error::shape("layer kernel", self.kernel.shape(), &want_k));
        }
        if self.bias.shape() != [c] {
            return Err(Error::shape("layer bias", self.bias.shape(), &[c]));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Window matrix index: row `(u·n + i)·p + q` holds the `t_w` frames of
/// slide `i` of unit `u` for patch `q`, wrapping inside the unit. Frames past
/// the end of the input map to the last frame, which realises replicate
/// padding without materialising it.
pub(crate) fn window_index(spec: &LayerSpec, t: usize, p: usize, d: usize) -> Vec<usize> {
    let n = spec.slides();
    let units = spec.units(t);
    let mut idx = Vec::with_capacity(units * n * p * spec.t_w * d);
    for u in 0..units {
        for i in 0..n {
            for q in 0..p {
                for j in 0..spec.t_w {
                    let local = (i * spec.t_s + j) % spec.t_u;
                    let frame = (u * spec.t_u + local).min(t - 1);
                    let base = (frame * p + q) * d;
                    idx.extend(base..base + d);
                }
            }
        }
    }
    idx
}

/// Maps each output element `(frame, patch, dim)` to its source in the
/// `[units·n·p × c]` slide-output matrix. Slide outputs are laid out
/// slide-major (all channels of slide 0, then slide 1, …) and the resulting
/// `t_o·d` values are cut into `t_o` abstract frames of width `d`.
pub(crate) fn rearrange_index(spec: &LayerSpec, t: usize, p: usize, d: usize) -> Vec<usize> {
    let n = spec.slides();
    let c = spec.channels(d);
    let t_out = spec.output_frames(t);
    let mut idx = Vec::with_capacity(t_out * p * d);
    for f in 0..t_out {
        let (u, a) = (f / spec.t_o, f % spec.t_o);
        for q in 0..p {
            for e in 0..d {
                let flat = a * d + e;
                let (i, ch) = (flat / c, flat % c);
                idx.push(((u * n + i) * p + q) * c + ch);
            }
        }
    }
    idx
}

/// Records one layer on `tape`. `input` must hold a `[t, p, d]` tensor.
pub fn layer_on_tape<R: Real>(
    tape: &mut Tape<R>,
    input: Var,
    spec: &LayerSpec,
    kernel: Var,
    bias: Var,
) -> Result<Var> {
    let shape = tape.value(input).shape().to_vec();
    let &[t, p, d] = shape.as_slice() else {
        return Err(Error::Contract(format!(
            "layer input must be [t, p, d], got {shape:?}"
        )));
    };
    spec.validate(d)?;
    let c = spec.channels(d);
    let want_k = [c, spec.t_w * d];
    if tape.value(kernel).shape() != want_k {
        return Err(Error::shape("layer kernel", tape.value(kernel).shape(), &want_k));
    }
    if tape.value(bias).shape() != [c] {
        return Err(Error::shape("layer bias", tape.value(bias).shape(), &[c]));
    }

    let rows = spec.units(t) * spec.slides() * p;
    let windows = tape.gather(
        input,
        Arc::from(window_index(spec, t, p, d)),
        &[rows, spec.t_w * d],
    )?;
    let kt = tape.transpose(kernel)?;
    let slides = tape.matmul(windows, kt)?;
    let slides = tape.add_row_bias(slides, bias)?;
    tape.gather(
        slides,
        Arc::from(rearrange_index(spec, t, p, d)),
        &[spec.output_frames(t), p, d],
    )
}

/// Applies one layer without recording gradients.
pub fn layer_forward<R: Real>(
    z: &FrameEmbeddings<R>,
    spec: &LayerSpec,
    w: &LayerWeights<R>,
) -> Result<FrameEmbeddings<R>> {
    spec.validate(z.width())?;
    w.check_shape(spec, z.width())?;
    let mut tape = Tape::new();
    let x = tape.leaf(z.tensor().clone());
    let k = tape.leaf(w.kernel.clone());
    let b = tape.leaf(w.bias.clone());
    let y = layer_on_tape(&mut tape, x, spec, k, b)?;
    FrameEmbeddings::new(tape.value(y).clone())
}
