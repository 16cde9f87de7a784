use imagit_core::numerics::{grad_check, GradCheck, Graph, NumericsError, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type R = Result<Var, NumericsError>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce any output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct term.
fn weighted_sum(g: &mut Graph, v: Var) -> R {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 101) as f64 / 50.0) - 1.0).collect();
    let wv = g.constant(Tensor::new(&shape, w).unwrap());
    let p = g.mul(v, wv)?;
    g.sum(p)
}

fn check(shapes: &[&[usize]], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> R) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
    grad_check::<NumericsError, _>(
        |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y)
        },
        &inputs,
        GradCheck::with_eps(1e-5),
    )
    .unwrap()
}

const TOL: f64 = 1e-5;

#[test]
fn matmul_backward_matches_finite_differences() {
    let err = check(&[&[3, 4], &[4, 2]], 1, |g, v| g.matmul(v[0], v[1]));
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn every_op_passes_grad_check_at_three_shapes() {
    let shapes: [(usize, usize); 3] = [(2, 3), (4, 5), (3, 7)];
    for (seed, &(m, n)) in shapes.iter().enumerate() {
        let s = seed as u64 + 10;
        let cases: Vec<(&str, f64)> = vec![
            ("matmul_nt", check(&[&[m, n], &[m + 1, n]], s, |g, v| g.matmul_nt(v[0], v[1]))),
            ("matmul_tn", check(&[&[n, m], &[n, 2]], s, |g, v| g.matmul_t(v[0], true, v[1], false))),
            ("add", check(&[&[m, n], &[m, n]], s, |g, v| g.add(v[0], v[1]))),
            ("sub", check(&[&[m, n], &[m, n]], s, |g, v| g.sub(v[0], v[1]))),
            ("mul", check(&[&[m, n], &[m, n]], s, |g, v| g.mul(v[0], v[1]))),
            ("add_row", check(&[&[m, n], &[n]], s, |g, v| g.add_row(v[0], v[1]))),
            ("mul_row", check(&[&[m, n], &[n]], s, |g, v| g.mul_row(v[0], v[1]))),
            ("add_col", check(&[&[m, n], &[m]], s, |g, v| g.add_col(v[0], v[1]))),
            ("concat_rows", check(&[&[m, n], &[2, n]], s, |g, v| g.concat_rows(&[v[0], v[1]]))),
            ("concat_cols", check(&[&[m, n], &[m, 2]], s, |g, v| g.concat_cols(&[v[0], v[1]]))),
            ("slice_cols", check(&[&[m, n]], s, |g, v| g.slice_cols(v[0], 1, n - 1))),
            ("gather_rows", check(&[&[m, n]], s, |g, v| g.gather_rows(v[0], &[0, m - 1, 0]))),
            ("transpose", check(&[&[m, n]], s, |g, v| g.transpose(v[0]))),
            ("softmax", check(&[&[m, n]], s, |g, v| g.softmax(v[0]))),
            ("softmax_axis0", check(&[&[m, n]], s, |g, v| g.softmax_axis(v[0], 0))),
            ("layer_norm", check(&[&[m, n]], s, |g, v| g.layer_norm(v[0]))),
            ("tanh", check(&[&[m, n]], s, |g, v| g.tanh(v[0]))),
            ("sigmoid", check(&[&[m, n]], s, |g, v| g.sigmoid(v[0]))),
            ("exp", check(&[&[m, n]], s, |g, v| g.exp(v[0]))),
            ("relu", check(&[&[m, n]], s, |g, v| g.relu(v[0]))),
            ("mean_rows", check(&[&[m, n]], s, |g, v| g.mean_rows(v[0]))),
            ("mean_cols", check(&[&[m, n]], s, |g, v| g.mean_cols(v[0]))),
            ("reparameterize", check(&[&[n], &[n]], s, |g, v| g.reparameterize(v[0], v[1], &vec![0.3; n]))),
            (
                "cross_entropy",
                check(&[&[m, n]], s, |g, v| {
                    let t: Vec<usize> = (0..m).map(|i| i % n).collect();
                    let w: Vec<f64> = (0..m).map(|i| if i == 0 { 0.0 } else { 1.0 }).collect();
                    g.cross_entropy_with_logits(v[0], &t, &w, 0.1)
                }),
            ),
            (
                "log_clamped",
                check(&[&[m, n]], s, |g, v| {
                    let p = g.sigmoid(v[0])?;
                    g.log_clamped(p, 1e-7)
                }),
            ),
            ("conv2d", check(&[&[2, m + 3, n + 2], &[3, 2, 3, 3]], s, |g, v| g.conv2d(v[0], v[1], 1, 1))),
            ("conv2d_s2", check(&[&[2, 2 * m, 2 * n], &[3, 2, 4, 4]], s, |g, v| g.conv2d(v[0], v[1], 2, 1))),
            ("transpose_conv2d", check(&[&[2, m, n], &[2, 3, 4, 4]], s, |g, v| g.transpose_conv2d(v[0], v[1], 2, 1))),
            ("transpose_conv2d_s1", check(&[&[2, m, n], &[2, 3, 3, 3]], s, |g, v| g.transpose_conv2d(v[0], v[1], 1, 1))),
            ("nearest_upsample", check(&[&[2, m, n]], s, |g, v| g.nearest_upsample(v[0], 2))),
            ("reshape", check(&[&[m, n]], s, |g, v| g.reshape(v[0], &[n, m]))),
        ];
        for (name, err) in cases {
            assert!(err <= TOL, "{name} at shape {m}x{n}: {err}");
        }
    }
}

#[test]
fn cross_entropy_five_classes() {
    let err = check(&[&[1, 5]], 3, |g, v| g.cross_entropy_with_logits(v[0], &[2], &[1.0], 0.0));
    assert!(err <= 1e-5);
}

#[test]
fn identity_function_has_zero_error() {
    let t = Tensor::new(&[1], vec![0.7]).unwrap();
    let err = grad_check::<NumericsError, _>(|_, v| Ok(v[0]), &[t], GradCheck::default()).unwrap();
    assert!(err < 1e-9);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 3], vec![0.0; 3]).unwrap());
    let y = g.softmax(x).unwrap();
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_all_masked_is_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 2], vec![0.0; 2]).unwrap());
    assert_eq!(g.softmax_masked(x, Some(&[false, false])), Err(NumericsError::AllMasked("softmax")));
}

#[test]
fn layer_norm_of_constant_vector_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::filled(&[2, 4], 3.5));
    let y = g.layer_norm(x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn non_scalar_grad_check_rejected() {
    let t = Tensor::zeros(&[2]);
    let err = grad_check::<NumericsError, _>(|_, v| Ok(v[0]), &[t], GradCheck::default()).unwrap_err();
    assert!(matches!(err, NumericsError::NonScalar(_)));
}

#[test]
fn nan_is_reported() {
    let mut g = Graph::new();
    g.set_check_finite(true);
    let x = g.constant(Tensor::new(&[1], vec![1000.0]).unwrap());
    assert!(matches!(g.exp(x), Err(NumericsError::NonFinite(_))));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 4], vals).unwrap());
        let y = g.softmax(x).unwrap();
        for r in 0..3 {
            let row = g.value(y).row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
