//! Browser bindings. The page calls three functions: [`plan`], [`ladder`]
//! and [`receptive_fields`]; each returns CSV text for the page to render.

use stekit::planner::{ladder_table, plan as plan_stack, reference_ladder};
use stekit::StackSpec;
use wasm_bindgen::prelude::*;

fn parse(spec: &str) -> Result<StackSpec, String> {
    spec.trim().parse().map_err(|e: stekit::Error| e.to_string())
}

/// Summary row followed by per-layer frame bookkeeping. Layers after the
/// projector are counted at `sem_dim`.
pub fn plan_csv(spec: &str, frames: usize, patches: usize, dim: usize, sem_dim: usize) -> Result<String, String> {
    let stack = parse(spec)?;
    let p = plan_stack(frames, patches, dim, &stack).map_err(|e| e.to_string())?;
    let params = stack
        .param_count_placed(dim, sem_dim)
        .map_err(|e| e.to_string())?;
    let mut out = String::from("spec,reduction_pct,final_frames,tokens_in,tokens_out,params\n");
    out.push_str(&format!(
        "{},{:.2},{},{},{},{}\n",
        p.spec,
        p.reduction_pct(),
        p.final_frames,
        p.tokens_in,
        p.tokens_out,
        params.total
    ));
    out.push_str("layer,t_in,padding,units,t_out,params\n");
    for (i, (l, n)) in p.layers.iter().zip(&params.per_layer).enumerate() {
        out.push_str(&format!("{i},{},{},{},{},{n}\n", l.t_in, l.padding, l.units, l.t_out));
    }
    Ok(out)
}

/// One row per stack; `specs` holds one stack per line, blank for the
/// reference ladder.
pub fn ladder_csv(specs: &str, frames: usize, patches: usize, dim: usize) -> Result<String, String> {
    let lines: Vec<&str> = specs.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let stacks = if lines.is_empty() {
        reference_ladder()
    } else {
        lines.iter().map(|l| parse(l)).collect::<Result<Vec<_>, _>>()?
    };
    ladder_table(&stacks, frames, patches, dim).map_err(|e| e.to_string())
}

/// For every output frame, the first and last input frame that can
/// influence it.
pub fn receptive_ranges(spec: &str, frames: usize) -> Result<Vec<(usize, usize)>, String> {
    let stack = parse(spec)?;
    if frames == 0 {
        return Err("frame count must be positive".into());
    }
    for l in &stack.layers {
        // width only matters for channel divisibility; frames do not depend on it
        if l.t_u == 0 || l.t_o == 0 || l.t_s == 0 || l.t_w == 0 {
            return Err(format!("{l}: all frame counts must be positive"));
        }
    }
    let ladder = stack.frame_ladder(frames);
    let t_out = *ladder.last().expect("ladder has the input length");
    let ranges = (0..t_out)
        .map(|o| {
            let (mut a, mut b) = (o, o);
            for (l, &t_in) in stack.layers.iter().zip(&ladder).rev() {
                a = (a / l.t_o) * l.t_u;
                b = ((b / l.t_o + 1) * l.t_u - 1).min(t_in - 1);
            }
            (a, b)
        })
        .collect();
    Ok(ranges)
}

pub fn receptive_csv(spec: &str, frames: usize) -> Result<String, String> {
    let mut out = String::from("out_frame,first,last\n");
    for (o, (a, b)) in receptive_ranges(spec, frames)?.into_iter().enumerate() {
        out.push_str(&format!("{o},{a},{b}\n"));
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn plan(spec: &str, frames: u32, patches: u32, dim: u32, sem_dim: u32) -> Result<String, JsValue> {
    plan_csv(spec, frames as usize, patches as usize, dim as usize, sem_dim as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn ladder(specs: &str, frames: u32, patches: u32, dim: u32) -> Result<String, JsValue> {
    ladder_csv(specs, frames as usize, patches as usize, dim as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn receptive_fields(spec: &str, frames: u32) -> Result<String, JsValue> {
    receptive_csv(spec, frames as usize).map_err(|e| JsValue::from_str(&e))
}
