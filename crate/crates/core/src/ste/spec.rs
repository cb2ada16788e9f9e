use std::fmt;

use crate::error::{Error, Result};

/// Default window, in frames.
pub const DEFAULT_WINDOW: usize = 2;
/// Default stride, in frames.
pub const DEFAULT_STRIDE: usize = 1;

/// One temporal encoder layer: every `t_u` input frames (a convolutional
/// unit) become `t_o` abstract frames, using windows of `t_w` frames moved
/// by `t_s` frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub t_u: usize,
    pub t_o: usize,
    pub t_w: usize,
    pub t_s: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpecViolation {
    ZeroField(&'static str),
    WindowExceedsUnit { t_w: usize, t_u: usize },
    StrideDoesNotDivideUnit { t_u: usize, t_s: usize },
    ChannelsNotIntegral { t_o: usize, d: usize, n: usize },
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::ZeroField(name) => write!(f, "{name} must be positive"),
            SpecViolation::WindowExceedsUnit { t_w, t_u } => {
                write!(f, "t_w > t_u (t_w={t_w}, t_u={t_u})")
            }
            SpecViolation::StrideDoesNotDivideUnit { t_u, t_s } => {
                write!(f, "t_u mod t_s != 0 (t_u={t_u}, t_s={t_s})")
            }
            SpecViolation::ChannelsNotIntegral { t_o, d, n } => {
                write!(f, "t_o*d not divisible by n (t_o={t_o}, d={d}, n={n})")
            }
        }
    }
}

impl LayerSpec {
    /// `(t_u:t_o)` with the default window and stride.
    pub const fn ratio(t_u: usize, t_o: usize) -> Self {
        LayerSpec {
            t_u,
            t_o,
            t_w: DEFAULT_WINDOW,
            t_s: DEFAULT_STRIDE,
        }
    }

    pub const fn with_window(mut self, t_w: usize, t_s: usize) -> Self {
        self.t_w = t_w;
        self.t_s = t_s;
        self
    }

    /// Slides per unit.
    pub fn slides(&self) -> usize {
        self.t_u / self.t_s
    }

    /// Output channels at width `d`; only meaningful once [`validate`] passed.
    ///
    /// [`validate`]: LayerSpec::validate
    pub fn channels(&self, d: usize) -> usize {
        self.t_o * d / self.slides()
    }

    pub fn violations(&self, d: usize) -> Vec<SpecViolation> {
        let mut out = Vec::new();
        for (name, v) in [
            ("t_u", self.t_u),
            ("t_o", self.t_o),
            ("t_w", self.t_w),
            ("t_s", self.t_s),
            ("d", d),
        ] {
            if v == 0 {
                out.push(SpecViolation::ZeroField(name));
            }
        }
        if !out.is_empty() {
            return out;
        }
        if self.t_w > self.t_u {
            out.push(SpecViolation::WindowExceedsUnit {
                t_w: self.t_w,
                t_u: self.t_u,
            });
        }
        if self.t_u % self.t_s != 0 {
            out.push(SpecViolation::StrideDoesNotDivideUnit {
                t_u: self.t_u,
                t_s: self.t_s,
            });
        } else {
            let n = self.slides();
            if (self.t_o * d) % n != 0 {
                out.push(SpecViolation::ChannelsNotIntegral { t_o: self.t_o, d, n });
            }
        }
        out
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let v = self.violations(d);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v))
        }
    }

    /// Replicate padding needed so `t` splits into whole units. Zero when `t`
    /// is already a multiple of `t_u`.
    pub fn padding(&self, t: usize) -> usize {
        (self.t_u - t % self.t_u) % self.t_u
    }

    pub fn units(&self, t: usize) -> usize {
        (t + self.padding(t)) / self.t_u
    }

    pub fn output_frames(&self, t: usize) -> usize {
        self.units(t) * self.t_o
    }

    /// Kernel and bias entries at width `d`.
    pub fn param_count(&self, d: usize) -> usize {
        let c = self.channels(d);
        c * self.t_w * d + c
    }
}
