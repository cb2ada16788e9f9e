//! Stackable temporal encoder.
//!
//! A layer pads the video by replicating its last frame, cuts it into
//! convolutional units of `t_u` frames, slides a `t_w`-frame window `n =
//! t_u / t_s` times inside each unit (wrapping circularly), and reads the
//! `n·c = t_o·d` slide outputs back as `t_o` abstract frames of width `d`.

mod layer;
mod spec;
mod stack;

pub use layer::{layer_forward, layer_on_tape, pad_replicate, FrameEmbeddings, InitMode, LayerWeights};
pub use spec::{LayerSpec, SpecViolation, DEFAULT_STRIDE, DEFAULT_WINDOW};
pub use stack::{
    layers_on_tape, stack_forward, stack_record, Activation, Insertion, ParamCount, StackGradients,
    StackRecord, StackSpec,
};
