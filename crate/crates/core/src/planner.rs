//! Frame, token and parameter budgets for a stack, without running it.

use std::fmt::Write as _;

use crate::error::Result;
use crate::ste::StackSpec;

/// Frames sampled per video in the reference setting; percentages are
/// reported against it.
pub const REFERENCE_FRAMES: usize = 32;
/// Tokens per frame used by the ladder table when none is given.
pub const DEFAULT_PATCHES: usize = 196;

pub const CSV_HEADER: &str = "spec,reduction_pct,final_frames,tokens_out,params";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub t_in: usize,
    pub padding: usize,
    pub units: usize,
    pub t_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionPlan {
    pub spec: String,
    pub layers: Vec<LayerPlan>,
    pub frames_in: usize,
    pub final_frames: usize,
    /// `1 − Π t_o/t_u`: the reduction at any length that needs no padding,
    /// e.g. the 32-frame reference for every power-of-two unit size.
    pub compression_fraction: f64,
    /// `1 − final_frames / frames_in` at the planned length, padding included.
    pub effective_fraction: f64,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub total_params: usize,
}

impl CompressionPlan {
    pub fn reduction_pct(&self) -> f64 {
        100.0 * self.compression_fraction
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.2},{},{},{}",
            self.spec,
            self.reduction_pct(),
            self.final_frames,
            self.tokens_out,
            self.total_params
        )
    }

    pub fn layers_csv(&self) -> String {
        let mut out = String::from("layer,t_in,padding,units,t_out\n");
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(out, "{i},{},{},{},{}", l.t_in, l.padding, l.units, l.t_out).unwrap();
        }
        out
    }
}

pub fn plan(t: usize, p: usize, d: usize, stack: &StackSpec) -> Result<CompressionPlan> {
    if t == 0 {
        return Err(crate::Error::Contract("frame count must be positive".into()));
    }
    let params = stack.param_count(d)?;
    let mut layers = Vec::with_capacity(stack.depth());
    let mut frames = t;
    let (mut num, mut den) = (1u128, 1u128);
    for l in &stack.layers {
        let lp = LayerPlan {
            t_in: frames,
            padding: l.padding(frames),
            units: l.units(frames),
            t_out: l.output_frames(frames),
        };
        frames = lp.t_out;
        layers.push(lp);
        num *= l.t_o as u128;
        den *= l.t_u as u128;
    }
    Ok(CompressionPlan {
        spec: stack.to_string(),
        layers,
        frames_in: t,
        final_frames: frames,
        compression_fraction: 1.0 - num as f64 / den as f64,
        effective_fraction: 1.0 - frames as f64 / t as f64,
        tokens_in: t * p,
        tokens_out: frames * p,
        total_params: params.total,
    })
}

/// One CSV row per stack at `t` frames and `p` patches per frame.
pub fn ladder_table(stacks: &[StackSpec], t: usize, p: usize, d: usize) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in stacks {
        out.push_str(&plan(t, p, d, s)?.csv_row());
        out.push('\n');
    }
    Ok(out)
}

/// The compression settings evaluated in the reference ladder, from no
/// reduction to 93.75 %.
pub fn reference_ladder() -> Vec<StackSpec> {
    vec![
        StackSpec::homogeneous(2, 2, 1),
        StackSpec::homogeneous(4, 3, 1),
        StackSpec::homogeneous(4, 3, 2),
        StackSpec::homogeneous(2, 1, 1),
        StackSpec::homogeneous(2, 1, 2),
        StackSpec::homogeneous(2, 1, 3),
        StackSpec::homogeneous(2, 1, 4),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_reduction() {
        let p = plan(32, 1, 1152, &StackSpec::homogeneous(4, 3, 1)).unwrap();
        assert_eq!(p.final_frames, 24);
        assert_eq!(p.compression_fraction, 0.25);
    }

    #[test]
    fn four_halvings() {
        let p = plan(32, 1, 1152, &StackSpec::homogeneous(2, 1, 4)).unwrap();
        assert_eq!(p.final_frames, 2);
        assert_eq!(p.compression_fraction, 0.9375);
        assert_eq!(p.total_params, 5_310_720);
    }

    #[test]
    fn token_budget() {
        let p = plan(32, 196, 1152, &StackSpec::homogeneous(2, 1, 1)).unwrap();
        assert_eq!((p.tokens_in, p.tokens_out), (6272, 3136));
    }

    #[test]
    fn odd_length_is_padded() {
        let p = plan(31, 1, 8, &StackSpec::homogeneous(2, 1, 2)).unwrap();
        assert_eq!(p.layers[0].padding, 1);
        assert_eq!(p.layers[1].t_in, 16);
        assert_eq!(p.final_frames, 8);
        assert_eq!(p.compression_fraction, 0.75);
    }

    #[test]
    fn ladder_rows() {
        let t = ladder_table(
            &[StackSpec::homogeneous(4, 3, 2), StackSpec::homogeneous(2, 2, 1)],
            32,
            196,
            1152,
        )
        .unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "(4:3)-(4:3),43.75,18,3528,3983040");
        assert_eq!(lines[2], "(2:2),0.00,32,6272,2655360");
    }

    #[test]
    fn empty_ladder_is_header_only() {
        assert_eq!(ladder_table(&[], 32, 196, 1152).unwrap(), format!("{CSV_HEADER}\n"));
    }
}
