use stekit::ste::{stack_forward, InitMode};
use stekit::{FrameEmbeddings, Rng, StackSpec, Tensor};
use stekit_web::{ladder_csv, plan_csv, receptive_csv, receptive_ranges};

#[test]
fn plan_rows() {
    let csv = plan_csv("(2:1)-(2:1)", 32, 196, 1152, 3584).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "(2:1)-(2:1),75.00,8,6272,1568,2655360");
    assert_eq!(lines[3], "0,32,0,16,16,1327680");
    assert_eq!(lines[4], "1,16,0,8,8,1327680");
}

#[test]
fn plan_counts_semantic_layers_at_their_width() {
    let csv = plan_csv("(2:2)|(2:2)@both", 32, 1, 1152, 3584).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",28349056"));
}

#[test]
fn bad_spec_is_reported() {
    let err = plan_csv("(2:1", 32, 1, 8, 8).unwrap_err();
    assert!(err.contains("position 4"), "{err}");
}

#[test]
fn default_ladder() {
    let csv = ladder_csv("  \n", 32, 196, 1152).unwrap();
    assert_eq!(csv.lines().count(), 8);
    let custom = ladder_csv("(2:1)\n(4:3)", 32, 1, 1152).unwrap();
    assert_eq!(custom.lines().nth(2).unwrap(), "(4:3),25.00,24,24,1991520");
}

#[test]
fn halving_fields_double_with_depth() {
    assert_eq!(receptive_ranges("(2:1)", 8).unwrap()[1], (2, 3));
    assert_eq!(receptive_ranges("(2:1)-(2:1)", 8).unwrap()[1], (4, 7));
    let csv = receptive_csv("(2:1)-(2:1)-(2:1)", 8).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "0,0,7");
}

#[test]
fn padded_tail_is_clipped() {
    let r = receptive_ranges("(4:3)", 5).unwrap();
    assert_eq!(r.len(), 6);
    assert_eq!(r[5], (4, 4));
}

// The ranges must match what perturbing the real stack shows.
#[test]
fn ranges_match_perturbation() {
    for (spec, t) in [("(2:1)-(2:1)", 11), ("(4:3)-(2:1)", 13), ("(2:2)-(4:3)", 9)] {
        let stack: StackSpec = spec.parse().unwrap();
        let d = 4;
        let mut rng = Rng::new(1);
        let ws = stack.init_weights::<f64>(d, InitMode::ScaledUniform, &mut rng).unwrap();
        let z: Tensor<f64> = rng.normal_tensor(&[t, 1, d], 1.0);
        let base = stack_forward(&FrameEmbeddings::new(z.clone()).unwrap(), &stack, &ws).unwrap();
        let ranges = receptive_ranges(spec, t).unwrap();
        for f in 0..t {
            let mut bumped = z.clone();
            bumped.data_mut()[f * d] += 1.0;
            let y = stack_forward(&FrameEmbeddings::new(bumped).unwrap(), &stack, &ws).unwrap();
            for (o, &(a, b)) in ranges.iter().enumerate() {
                let moved = y.frame(o) != base.frame(o);
                if moved {
                    assert!(a <= f && f <= b, "{spec}: frame {f} moved output {o} outside {a}..={b}");
                }
            }
        }
    }
}
