#![allow(dead_code)]

use stekit::{FrameEmbeddings, LayerSpec, LayerWeights, Rng, Tensor};

/// Straight-line evaluation of one layer, written against the raw `[t][p][d]`
/// layout with explicit padding.
pub fn naive_layer(z: &FrameEmbeddings<f64>, spec: &LayerSpec, w: &LayerWeights<f64>) -> Tensor<f64> {
    let (t, p, d) = (z.frames(), z.patches(), z.width());
    let x = z.tensor().data();
    let at = |f: usize, q: usize, e: usize| x[(f.min(t - 1) * p + q) * d + e];
    let n = spec.t_u / spec.t_s;
    let c = spec.t_o * d / n;
    let k = (spec.t_u - t % spec.t_u) % spec.t_u;
    let units = (t + k) / spec.t_u;
    let kw = spec.t_w * d;
    let mut y = vec![f64::NAN; units * spec.t_o * p * d];
    for u in 0..units {
        for q in 0..p {
            // one unit's output for this patch, slide-major
            let mut flat = Vec::with_capacity(n * c);
            for i in 0..n {
                for ch in 0..c {
                    let mut s = w.bias.data()[ch];
                    for m in 0..spec.t_w {
                        let f = u * spec.t_u + (i * spec.t_s + m) % spec.t_u;
                        for e in 0..d {
                            s += w.kernel.data()[ch * kw + m * d + e] * at(f, q, e);
                        }
                    }
                    flat.push(s);
                }
            }
            for (j, v) in flat.into_iter().enumerate() {
                let f = u * spec.t_o + j / d;
                y[(f * p + q) * d + j % d] = v;
            }
        }
    }
    Tensor::new(vec![units * spec.t_o, p, d], y).unwrap()
}

pub fn random_frames(rng: &mut Rng, t: usize, p: usize, d: usize) -> FrameEmbeddings<f64> {
    FrameEmbeddings::new(Tensor::from_fn(&[t, p, d], |_| rng.uniform(-1.0, 1.0))).unwrap()
}

/// A width in `[lo, hi]` valid for `spec`.
pub fn valid_width(rng: &mut Rng, spec: &LayerSpec, lo: usize, hi: usize) -> usize {
    let choices: Vec<usize> = (lo..=hi).filter(|&d| spec.validate(d).is_ok()).collect();
    choices[rng.below(choices.len())]
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        g.data_mut()[i] = (f(&up) - f(&down)) / (2.0 * h);
    }
    g
}

/// Largest `|a − b| / max(|a|, |b|, 1e-3)`.
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
