use molgvae::numkernel::{grad_check, Axis, KernelError, ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn symmetric_target(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                t.data_mut()[i * n + j] = 1.0;
                t.data_mut()[j * n + i] = 1.0;
            }
        }
    }
    t
}

/// Store with operands `a` and `b` and a fixed projection `w` of the output.
fn operands(
    seed: u64,
    a: (usize, usize),
    b: (usize, usize),
    out: (usize, usize),
) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("a", random(&mut rng, a.0, a.1, 1.0)).unwrap();
    store.insert("b", random(&mut rng, b.0, b.1, 1.0)).unwrap();
    store
        .insert("w", random(&mut rng, out.0, out.1, 1.0))
        .unwrap();
    store
}

/// Checks `sum(w * op(a, b))` against finite differences.
fn check_op<F>(store: &ParamStore<f64>, op: F) -> f64
where
    F: for<'t> Fn(Var<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>, KernelError>,
{
    let report = grad_check(
        |tape, s| {
            let out = op(tape.bind(s, "a")?, tape.bind(s, "b")?)?;
            out.hadamard(tape.bind(s, "w")?)?.sum()
        },
        store,
        1e-5,
    )
    .unwrap();
    report.max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_gradient(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let s = operands(seed, (m, k), (k, n), (m, n));
        prop_assert!(check_op(&s, |a, b| a.matmul(b)) < TOLERANCE);
    }

    #[test]
    fn elementwise_binary_gradients(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let s = operands(seed, (m, n), (m, n), (m, n));
        prop_assert!(check_op(&s, |a, b| a.add(b)) < TOLERANCE);
        prop_assert!(check_op(&s, |a, b| a.sub(b)) < TOLERANCE);
        prop_assert!(check_op(&s, |a, b| a.hadamard(b)) < TOLERANCE);
    }

    #[test]
    fn unary_gradients(seed in any::<u64>(), m in 1usize..5, n in 1usize..5, c in -2.0f64..2.0) {
        let s = operands(seed, (m, n), (m, n), (m, n));
        prop_assert!(check_op(&s, |a, _| a.scale(c)) < TOLERANCE);
        prop_assert!(check_op(&s, |a, _| a.offset(c)) < TOLERANCE);
        prop_assert!(check_op(&s, |a, _| a.elu()) < TOLERANCE);
        prop_assert!(check_op(&s, |a, _| a.logistic()) < TOLERANCE);
        prop_assert!(check_op(&s, |a, _| a.exp()) < TOLERANCE);
        prop_assert!(check_op(&s, |a, _| a.row_softmax()) < TOLERANCE);
    }

    #[test]
    fn shape_gradients(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let s = operands(seed, (m, n), (m, n), (n, m));
        prop_assert!(check_op(&s, |a, _| a.transpose()) < TOLERANCE);
        let s = operands(seed, (m, n), (m, n), (2 * m, n));
        prop_assert!(check_op(&s, |a, b| Var::concat_rows(&[a, b])) < TOLERANCE);
        let s = operands(seed, (m, n), (m, n), (1, n));
        prop_assert!(check_op(&s, |a, _| a.sum_axis(Axis::Rows)) < TOLERANCE);
        let s = operands(seed, (m, n), (m, n), (m, 1));
        prop_assert!(check_op(&s, |a, _| a.sum_axis(Axis::Cols)) < TOLERANCE);
        let s = operands(seed, (m, n), (m, n), (1, 1));
        prop_assert!(check_op(&s, |a, _| a.sum()) < TOLERANCE);
    }

    #[test]
    fn pair_bce_gradients(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = symmetric_target(&mut rng, n);
        let mut store = ParamStore::new();
        store.insert("x", random(&mut rng, n, n, 3.0)).unwrap();
        let probs = grad_check(
            |tape, s| tape.bind(s, "x")?.logistic()?.pair_bce(&target),
            &store,
            1e-5,
        )
        .unwrap();
        prop_assert!(probs.max_rel_error < TOLERANCE);
        let logits = grad_check(|tape, s| tape.bind(s, "x")?.pair_bce_logits(&target), &store, 1e-5).unwrap();
        prop_assert!(logits.max_rel_error < TOLERANCE);
    }

    #[test]
    fn softmax_rows_are_normalized_and_shift_invariant(
        seed in any::<u64>(),
        m in 1usize..6,
        n in 1usize..6,
        shift in -50.0f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, m, n, 10.0);
        let s = x.row_softmax().unwrap();
        for i in 0..m {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = x.map(|v| v + shift).row_softmax().unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn ops_are_deterministic(seed in any::<u64>(), n in 1usize..6) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            store.insert("a", random(&mut rng, n, n, 1.0)).unwrap();
            let target = symmetric_target(&mut rng, n);
            let tape = Tape::new();
            let a = tape.bind(&store, "a").unwrap();
            let loss = a
                .matmul(a.transpose().unwrap()).unwrap()
                .elu().unwrap()
                .pair_bce_logits(&target).unwrap();
            let value = loss.item().unwrap();
            let grads = tape.backward(loss, &store).unwrap();
            (value.to_bits(), grads.get("a").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn single_precision_core_runs() {
    let mut store = ParamStore::<f32>::new();
    store
        .insert(
            "a",
            Tensor::from_fn(3, 3, |i, j| (i as f32 - j as f32) * 0.25),
        )
        .unwrap();
    let tape = Tape::new();
    let a = tape.bind(&store, "a").unwrap();
    let loss = a.row_softmax().unwrap().hadamard(a).unwrap().sum().unwrap();
    let grads = tape.backward(loss, &store).unwrap();
    assert!(grads.get("a").unwrap().is_finite());
    let report = grad_check(
        |tape, s| {
            tape.bind(s, "a")?
                .row_softmax()?
                .hadamard(tape.bind(s, "a")?)?
                .sum()
        },
        &store,
        1e-3,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-2, "{report:?}");
}
