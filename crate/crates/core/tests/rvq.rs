use decodec_core::numerics::{grad_check_in, grad_check_params};
use decodec_core::rvq::{quantize_stage, rvq_encode, sg_loss_value, Assignment, RvqStack};
use decodec_core::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(rows: usize, cols: usize, v: Vec<f64>) -> Tensor {
    Tensor::new(&[rows, cols], v).unwrap()
}

fn brute_nearest(r: &[f64], table: &Tensor) -> u32 {
    let mut best = 0;
    let mut dmin = f64::INFINITY;
    for k in 0..table.rows() {
        let d: f64 = r.iter().zip(table.row(k)).map(|(a, b)| (a - b).powi(2)).sum();
        if d < dmin {
            dmin = d;
            best = k;
        }
    }
    best as u32
}

fn stack_and_input(seed: u64, stages: usize, size: usize, dim: usize, frames: usize) -> (ParamStore, RvqStack, Tensor) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = RvqStack::new(&mut store, "q", stages, size, dim, 1.0, &mut rng).unwrap();
    let x: Vec<f64> = (0..frames * dim).map(|i| ((i as f64 * 0.37 + seed as f64).sin()) * 0.8).collect();
    (store, stack, tensor(frames, dim, x))
}

#[test]
fn commitment_gradient_with_frozen_assignment() {
    let (store, stack, x0) = stack_and_input(4, 3, 5, 4, 6);
    let frozen = stack.freeze(&store, &x0);
    let r = grad_check_in(
        &store,
        |g, x| Ok(stack.forward(g, x, Assignment::Frozen(&frozen))?.commitment_loss),
        &x0,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn codebook_gradient_with_frozen_assignment() {
    let (store, stack, x0) = stack_and_input(8, 2, 4, 3, 7);
    let frozen = stack.freeze(&store, &x0);
    let ids: Vec<_> = stack.stages.iter().map(|c| c.entries).collect();
    let r = grad_check_params(
        &store,
        &ids,
        |g| {
            let x = g.input(x0.clone());
            Ok(stack.forward(g, x, Assignment::Frozen(&frozen))?.codebook_loss)
        },
        1e-5,
        1,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn sg_loss_falls_as_cosine_rises() {
    let h = tensor(1, 2, vec![1.0, 0.0]);
    let mut last = f64::INFINITY;
    for i in 0..=64 {
        let th = std::f64::consts::PI * (1.0 - i as f64 / 64.0);
        let l = sg_loss_value(&tensor(1, 2, vec![th.cos(), th.sin()]), &h).unwrap();
        assert!(l < last);
        last = l;
    }
    assert!((last - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
}

#[test]
fn residual_norm_can_grow_without_a_zero_entry() {
    let x = tensor(1, 2, vec![0.1, 0.0]);
    let cb = tensor(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let e = rvq_encode(&x, &[&cb]);
    assert!(e.residual_norms[1] > e.residual_norms[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn residual_norms_never_increase_with_a_zero_entry(
        seed in any::<u64>(),
        stages in 1usize..5,
        size in 2usize..9,
        dim in 1usize..5,
        frames in 1usize..9,
    ) {
        let (mut store, stack, x) = stack_and_input(seed, stages, size, dim, frames);
        for cb in &stack.stages {
            store.tensor_mut(cb.entries).row_mut(seed as usize % size).fill(0.0);
        }
        let e = stack.encode(&store, &x);
        prop_assert_eq!(e.residual_norms.len(), stages + 1);
        prop_assert!(e.residual_norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", e.residual_norms);
    }

    #[test]
    fn assignment_is_the_brute_force_argmin(
        x in prop::collection::vec(-2.0f64..2.0, 12),
        cb in prop::collection::vec(-2.0f64..2.0, 15),
    ) {
        let x = tensor(4, 3, x);
        let cb = tensor(5, 3, cb);
        let (idx, q) = quantize_stage(&x, &cb);
        for t in 0..4 {
            prop_assert_eq!(idx[t], brute_nearest(x.row(t), &cb));
            prop_assert_eq!(q.row(t), cb.row(idx[t] as usize));
        }
    }

    #[test]
    fn straight_through_is_identity(seed in any::<u64>(), col in 0usize..4) {
        let (store, stack, x0) = stack_and_input(seed, 3, 4, 4, 5);
        let mut g = Graph::new(&store);
        let x = g.input(x0);
        let out = stack.forward(&mut g, x, Assignment::Fresh).unwrap();
        let mut w = Tensor::zeros(&[1, 4]);
        w.data_mut()[col] = 1.0;
        let w = g.constant(w);
        let picked = g.linear(out.z, w, None);
        let l = g.sum(picked);
        let grads = g.backward(l);
        let mut want = Tensor::zeros(&[5, 4]);
        for t in 0..5 {
            want.row_mut(t)[col] = 1.0;
        }
        prop_assert_eq!(grads.wrt(x).unwrap(), &want);
    }

    #[test]
    fn tokens_are_deterministic(seed in any::<u64>()) {
        let (store, stack, x) = stack_and_input(seed, 4, 6, 3, 8);
        let (store2, stack2, x2) = stack_and_input(seed, 4, 6, 3, 8);
        prop_assert_eq!(stack.encode(&store, &x), stack2.encode(&store2, &x2));
        let tables = stack.tables(&store);
        let again = rvq_encode(&x, &tables);
        prop_assert_eq!(again.tokens, stack.encode(&store, &x).tokens);
    }
}
