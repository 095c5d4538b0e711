use gfi_core::datagen::{
    fault_plane, gen_velocity, normalize, unnormalize, Complexity, Family, FamilySpec, NormScheme, Summary,
};
use gfi_core::tensor::Tensor;
use proptest::prelude::*;

fn spec(family: Family, complexity: Complexity, seed: u64) -> FamilySpec {
    FamilySpec::preset(family, complexity, 32, 32, seed)
}

#[test]
fn values_stay_in_range_and_are_deterministic() {
    for family in Family::ALL {
        for complexity in [Complexity::A, Complexity::B] {
            let s = spec(family, complexity, 11);
            for i in 0..8 {
                let a = gen_velocity(&s, i).unwrap();
                let b = gen_velocity(&s, i).unwrap();
                assert_eq!(a, b);
                let (lo, hi) = s.velocity_range;
                assert!(a.tensor().data().iter().all(|&v| v >= lo && v <= hi));
            }
        }
    }
}

#[test]
fn unfaulted_columns_are_piecewise_constant() {
    for family in [Family::Flat, Family::Curve] {
        let s = spec(family, Complexity::B, 3);
        for i in 0..16 {
            let v = gen_velocity(&s, i).unwrap();
            for x in 0..32 {
                let pieces = 1 + (1..32).filter(|&z| v.at(z, x) != v.at(z - 1, x)).count();
                assert!(pieces <= s.n_layers.1, "column {x} of sample {i} has {pieces} pieces");
            }
        }
    }
}

#[test]
fn velocity_increases_with_depth_in_flat_models() {
    let s = spec(Family::Flat, Complexity::A, 5);
    for i in 0..8 {
        let v = gen_velocity(&s, i).unwrap();
        assert!((1..32).all(|z| v.at(z, 0) >= v.at(z - 1, 0)));
    }
}

#[test]
fn curved_models_are_not_flat() {
    let s = spec(Family::Curve, Complexity::B, 9);
    let curved = (0..8).filter(|&i| {
        let v = gen_velocity(&s, i).unwrap();
        (0..32).any(|z| (0..32).any(|x| v.at(z, x) != v.at(z, 0)))
    });
    assert!(curved.count() >= 6);
}

#[test]
fn faults_only_change_the_displaced_block() {
    for family in [Family::FlatFault, Family::CurveFault] {
        let faulted = spec(family, Complexity::B, 21);
        let parent = FamilySpec { family: family.parent(), ..faulted.clone() };
        let mut changed = 0;
        for i in 0..12 {
            let f = gen_velocity(&faulted, i).unwrap();
            let p = gen_velocity(&parent, i).unwrap();
            let plane = fault_plane(&faulted, i).unwrap();
            for z in 0..32 {
                for x in 0..32 {
                    if f.at(z, x) != p.at(z, x) {
                        assert!(plane.in_block(z, x), "sample {i}: cell ({z},{x}) changed outside the block");
                        changed += 1;
                    }
                }
            }
        }
        assert!(changed > 0);
    }
}

fn signed_data(seed: u64, n: usize) -> Vec<f64> {
    let mut x = seed | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 200.0
        })
        .collect()
}

#[test]
fn logsign_inverse_recovers_signed_values() {
    let data = signed_data(99, 500);
    let t = Tensor::new(&[500], data.clone()).unwrap();
    let stats = Summary::of(&data).stats(NormScheme::LogsignMinmax).unwrap();
    let back = unnormalize(&normalize(&t, &stats).unwrap(), &stats).unwrap();
    for (a, b) in data.iter().zip(back.data()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12));
    }
}

proptest! {
    #[test]
    fn roundtrip_all_schemes(seed in any::<u64>(), n in 2usize..200) {
        let data = signed_data(seed, n);
        prop_assume!(data.iter().any(|&v| v != data[0]));
        let t = Tensor::new(&[n], data.clone()).unwrap();
        for scheme in [NormScheme::Minmax, NormScheme::Standardize, NormScheme::LogsignMinmax] {
            let stats = Summary::of(&data).stats(scheme).unwrap();
            let back = unnormalize(&normalize(&t, &stats).unwrap(), &stats).unwrap();
            for (a, b) in data.iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-9), "{:?}: {} vs {}", scheme, a, b);
            }
        }
    }
}
