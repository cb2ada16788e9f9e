mod common;

use proptest::prelude::*;
use stekit::io::{decode_tensor, encode_tensor, AnyTensor};
use stekit::ste::{layer_forward, InitMode};
use stekit::{FrameEmbeddings, LayerSpec, LayerWeights, Rng, StackSpec, Tensor};
use std::path::Path;

use common::{naive_layer, random_frames, valid_width};

fn spec_strategy() -> impl Strategy<Value = LayerSpec> {
    prop_oneof![
        Just(LayerSpec::ratio(2, 2)),
        Just(LayerSpec::ratio(2, 1)),
        Just(LayerSpec::ratio(4, 3)),
    ]
}

proptest! {
    #[test]
    fn frame_count_law(t in 1usize..=64, spec in spec_strategy()) {
        let k = (spec.t_u - t % spec.t_u) % spec.t_u;
        prop_assert_eq!(spec.padding(t), k);
        prop_assert!(k < spec.t_u);
        prop_assert_eq!(spec.output_frames(t), (t + k) * spec.t_o / spec.t_u);
        let z = FrameEmbeddings::new(Tensor::<f64>::zeros(&[t, 1, 4])).unwrap();
        let w = LayerWeights::zeros(&spec, 4);
        prop_assert_eq!(layer_forward(&z, &spec, &w).unwrap().frames(), spec.output_frames(t));
    }

    #[test]
    fn matches_nested_loops(seed in any::<u64>(), spec in spec_strategy(), t in 1usize..=24, p in 1usize..=4) {
        let mut rng = Rng::new(seed);
        let d = valid_width(&mut rng, &spec, 2, 12);
        let z = random_frames(&mut rng, t, p, d);
        let w = LayerWeights::init(&spec, d, InitMode::ScaledUniform, &mut rng).unwrap();
        let fast = layer_forward(&z, &spec, &w).unwrap();
        prop_assert!(fast.tensor().max_abs_diff(&naive_layer(&z, &spec, &w)) <= 1e-12);
    }

    #[test]
    fn units_are_independent(seed in any::<u64>(), spec in spec_strategy(), units in 2usize..6) {
        let mut rng = Rng::new(seed);
        let (p, d) = (2, valid_width(&mut rng, &spec, 4, 8));
        let t = units * spec.t_u;
        let z = random_frames(&mut rng, t, p, d);
        let w = LayerWeights::init(&spec, d, InitMode::ScaledUniform, &mut rng).unwrap();
        let whole = layer_forward(&z, &spec, &w).unwrap();
        // each unit on its own gives the same abstract frames
        for u in 0..units {
            let slice = Tensor::from_fn(&[spec.t_u, p, d], |i| z.tensor().data()[u * spec.t_u * p * d + i]);
            let part = layer_forward(&FrameEmbeddings::new(slice).unwrap(), &spec, &w).unwrap();
            for a in 0..spec.t_o {
                prop_assert_eq!(part.frame(a), whole.frame(u * spec.t_o + a));
            }
        }
    }

    #[test]
    fn concat_split_duality(rows in 1usize..5, a in 1usize..4, b in 1usize..4, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x: Tensor<f64> = rng.normal_tensor(&[rows, a], 1.0);
        let y: Tensor<f64> = rng.normal_tensor(&[rows, b], 1.0);
        let joined = Tensor::concat(&[&x, &y], 1).unwrap();
        let parts = joined.split(&[a, b], 1).unwrap();
        prop_assert_eq!(&parts[0], &x);
        prop_assert_eq!(&parts[1], &y);
    }

    #[test]
    fn tensor_bytes_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>(), wide in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let mut bytes = Vec::new();
        let original = if wide {
            let t: Tensor<f64> = rng.normal_tensor(&shape, 3.0);
            encode_tensor(&t, &mut bytes);
            AnyTensor::F64(t)
        } else {
            let t: Tensor<f32> = rng.normal_tensor(&shape, 3.0);
            encode_tensor(&t, &mut bytes);
            AnyTensor::F32(t)
        };
        prop_assert_eq!(decode_tensor(&bytes, Path::new("mem")).unwrap(), original);
    }

    #[test]
    fn stack_params_add_up(depth in 1usize..5, d in (1usize..64).prop_map(|x| 4 * x)) {
        let s = StackSpec::homogeneous(2, 1, depth);
        let count = s.param_count(d).unwrap();
        prop_assert_eq!(count.total, depth * LayerSpec::ratio(2, 1).param_count(d));
    }
}
