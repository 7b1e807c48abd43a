use decodec_core::numerics::Tensor;
use decodec_core::sop::{gram_norm, orthogonality_value, project, projector_orthogonality_report};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

#[test]
fn random_gaussian_pair_sits_at_the_null_cosine() {
    let d = 64;
    let null = (2.0 / (std::f64::consts::PI * d as f64)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut matched, mut all) = (0.0, 0.0);
    let trials = 20;
    for _ in 0..trials {
        let r = projector_orthogonality_report(&gaussian(&[d, d], &mut rng), &gaussian(&[d, d], &mut rng));
        matched += r.mean_abs_cosine / trials as f64;
        all += r.all_pairs_mean_abs_cosine / trials as f64;
    }
    assert!((matched - null).abs() < 0.01, "{matched} vs {null}");
    assert!((all - null).abs() < 0.005, "{all} vs {null}");
}

#[test]
fn orthogonal_rows_give_zero_gram_norm_under_white_frames() {
    // With an identity second moment, Ĉ = I and the Gram product is P_S·P_Nᵀ.
    let d = 4;
    let mut y = Tensor::zeros(&[d, d]);
    for i in 0..d {
        y.data_mut()[i * d + i] = (d as f64).sqrt();
    }
    let mut ps = Tensor::zeros(&[d, d]);
    let mut pn = Tensor::zeros(&[d, d]);
    for i in 0..d / 2 {
        ps.data_mut()[i * d + i] = 1.0;
        pn.data_mut()[(i + d / 2) * d + i + d / 2] = 1.0;
    }
    assert_eq!(gram_norm(&y, &ps, &pn), 0.0);
    let (s, n) = project(&y, &ps, &pn).unwrap();
    assert_eq!(orthogonality_value(&s, &n), 0.0);
    assert!(gram_norm(&y, &ps, &ps) > 0.0);
}

proptest! {
    #[test]
    fn orthogonality_is_nonnegative_and_zero_only_for_orthogonal_frames(
        seed in any::<u64>(), frames in 1usize..8, d in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = gaussian(&[frames, d], &mut rng);
        let n = gaussian(&[frames, d], &mut rng);
        let v = orthogonality_value(&s, &n);
        prop_assert!(v >= 0.0);
        // Remove each frame's component of N along S.
        let mut n_perp = n.clone();
        for t in 0..frames {
            let ss: f64 = s.row(t).iter().map(|x| x * x).sum();
            let sn: f64 = s.row(t).iter().zip(n.row(t)).map(|(a, b)| a * b).sum();
            let srow = s.row(t).to_vec();
            for (o, a) in n_perp.row_mut(t).iter_mut().zip(&srow) {
                *o -= sn / ss * a;
            }
        }
        prop_assert!(orthogonality_value(&s, &n_perp) < 1e-12 * (1.0 + v));
    }

    #[test]
    fn singular_values_reproduce_the_frobenius_norm(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&[d, d], &mut rng);
        let sv = decodec_core::sop::singular_values(&a);
        let f2: f64 = sv.iter().map(|s| s * s).sum();
        prop_assert!((f2 - a.sq_norm()).abs() < 1e-9 * a.sq_norm().max(1.0));
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }
}
