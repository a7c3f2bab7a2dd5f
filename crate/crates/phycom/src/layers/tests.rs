use super::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_aug(rng: &mut ChaCha8Rng, n: usize) -> AugmentedVector {
    let z: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    AugmentedVector::from_complex(&z)
}

fn random_layer(rng: &mut ChaCha8Rng, kind: &str, n: usize) -> Layer {
    match kind {
        "iq" => loop {
            let p: [f64; 4] = [
                rng.random_range(-1.5..1.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.5..1.5),
            ];
            if (p[0] * p[3] - p[1] * p[2]).abs() > 1e-3 {
                return Layer::iq(p);
            }
        },
        "cfo" => Layer::cfo(rng.random_range(-0.5..0.5)),
        "fir" => {
            let d = rng.random_range(1..6usize);
            let taps: Vec<Complex64> = (0..d)
                .map(|i| {
                    let scale = if i == 0 { 1.0 } else { 0.3 };
                    Complex64::new(
                        rng.random_range(-scale..scale) + if i == 0 { 1.0 } else { 0.0 },
                        rng.random_range(-scale..scale),
                    )
                })
                .collect();
            Layer::fir(&taps)
        }
        "qspn" => {
            let k = rng.random_range(1..=n.min(7));
            Layer::qs_phase_noise((0..k).map(|_| rng.random_range(-3.0..3.0)).collect())
        }
        other => panic!("unknown kind {other}"),
    }
}

/// Central finite differences of the compensation output w.r.t. parameters.
fn fd_local_jacobian(layer: &Layer, y_in: &AugmentedVector) -> DMatrix<f64> {
    let params = layer.params().to_vec();
    let rows = y_in.len();
    let mut j = DMatrix::zeros(rows, params.len());
    for k in 0..params.len() {
        let eps = 1e-6 * params[k].abs().max(1.0);
        let mut plus = params.clone();
        plus[k] += eps;
        let mut minus = params.clone();
        minus[k] -= eps;
        let lp = Layer::new(layer.kind(), plus).unwrap();
        let lm = Layer::new(layer.kind(), minus).unwrap();
        let yp = lp.apply_compensation(y_in).unwrap();
        let ym = lm.apply_compensation(y_in).unwrap();
        for r in 0..rows {
            j[(r, k)] = (yp.as_slice()[r] - ym.as_slice()[r]) / (2.0 * eps);
        }
    }
    j
}

#[test]
fn iq_identity_transfer_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = random_aug(&mut rng, 9);
    let out = Layer::iq([1.0, 0.0, 0.0, 1.0]).apply_transfer(&v).unwrap();
    assert!(out.max_abs_diff(&v) < 1e-15);
}

#[test]
fn iq_complex_form_matches_widely_linear_model() {
    let a1 = Complex64::new(0.95, 0.1);
    let a2 = Complex64::new(0.08, -0.04);
    let layer = Layer::iq_complex(a1, a2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_aug(&mut rng, 8);
    let out = layer.apply_transfer(&v).unwrap().to_complex();
    for (x, y) in v.to_complex().iter().zip(&out) {
        let want = a1 * x + a2 * x.conj();
        assert!((want - y).norm() < 1e-14);
    }
}

#[test]
fn cfo_transfer_matches_elementwise_rotation() {
    let omega = 0.005;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_aug(&mut rng, 16);
    let out = Layer::cfo(omega).apply_transfer(&v).unwrap().to_complex();
    for (i, (x, y)) in v.to_complex().iter().zip(&out).enumerate() {
        let want = x * Complex64::from_polar(1.0, omega * i as f64);
        assert!((want - y).norm() < 1e-15);
    }
}

#[test]
fn fir_unit_impulse_is_identity() {
    let mut taps = vec![Complex64::ZERO; 8];
    taps[0] = Complex64::ONE;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = random_aug(&mut rng, 12);
    let out = Layer::fir(&taps).apply_transfer(&v).unwrap();
    assert!(out.max_abs_diff(&v) < 1e-15);
}

#[test]
fn qspn_single_block_quarter_turn() {
    let layer = Layer::qs_phase_noise(vec![std::f64::consts::FRAC_PI_2]);
    let v = AugmentedVector::from_complex(&[Complex64::ONE, Complex64::ONE]);
    let out = layer.apply_transfer(&v).unwrap().to_complex();
    for y in out {
        assert!((y - Complex64::i()).norm() < 1e-15);
    }
}

#[test]
fn matrix_free_transfer_agrees_with_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in ["iq", "cfo", "fir", "qspn"] {
        for _ in 0..5 {
            let n = rng.random_range(4..=32usize);
            let layer = random_layer(&mut rng, kind, n);
            let v = random_aug(&mut rng, n);
            let fast = layer.apply_transfer(&v).unwrap();
            let dense = layer.dense_transfer(n).unwrap().apply(&v).unwrap();
            assert!(fast.max_abs_diff(&dense) < 1e-12, "{kind} at n={n}");
        }
    }
}

#[test]
fn strictly_linear_block_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10;
    for kind in ["cfo", "fir", "qspn"] {
        let layer = random_layer(&mut rng, kind, n);
        assert!(
            layer.dense_transfer(n).unwrap().is_strictly_linear(1e-14),
            "{kind} should be strictly linear"
        );
    }
    // A generic IQ mix acts on the conjugate and breaks the structure.
    let iq = Layer::iq([1.8, 0.1, 0.13, 0.8]);
    assert!(!iq.dense_transfer(n).unwrap().is_strictly_linear(1e-9));
}

#[test]
fn reverse_map_reference_values() {
    let cfo = Layer::cfo(0.005).reverse_params().unwrap();
    assert_eq!(cfo.params(), &[-0.005]);

    let iq_id = Layer::iq([1.0, 0.0, 0.0, 1.0]).reverse_params().unwrap();
    assert_eq!(iq_id.params(), &[1.0, 0.0, 0.0, 1.0]);

    // det = 1.8*0.8 - 0.1*0.13 = 1.427
    let g = Layer::iq([1.8, 0.1, 0.13, 0.8]).reverse_params().unwrap();
    let want = [0.56061668, -0.07007708, -0.09110021, 1.26138753];
    for (p, w) in g.params().iter().zip(want) {
        assert!((p - w).abs() < 1e-7, "{p} vs {w}");
    }
}

#[test]
fn reverse_map_inverts_transfer_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in ["iq", "cfo", "qspn"] {
        for _ in 0..20 {
            let n = rng.random_range(2..=24usize);
            let layer = random_layer(&mut rng, kind, n);
            let rev = layer.reverse_params().unwrap();
            let v = random_aug(&mut rng, n);
            let roundtrip = rev.apply_transfer(&layer.apply_transfer(&v).unwrap()).unwrap();
            assert!(roundtrip.max_abs_diff(&v) < 1e-12, "{kind} left inverse");
            let swapped = layer.apply_transfer(&rev.apply_transfer(&v).unwrap()).unwrap();
            assert!(swapped.max_abs_diff(&v) < 1e-12, "{kind} right inverse");
        }
    }
}

#[test]
fn fir_and_singular_iq_have_no_reverse_map() {
    let fir = Layer::fir(&[Complex64::ONE]);
    assert!(matches!(fir.reverse_params(), Err(Error::NotIsomorphic("fir"))));
    let singular = Layer::iq([1.0, 1.0, 1.0, 1.0]);
    assert!(matches!(
        singular.reverse_params(),
        Err(Error::SingularLayer { kind: "iq", .. })
    ));
    let awgn = Layer::awgn(0.1);
    assert!(awgn.reverse_params().is_err());
}

#[test]
fn fir_compensation_reference_cases() {
    // h = [2]: inverse scales by one half.
    let l = Layer::fir(&[Complex64::new(2.0, 0.0)]);
    let v = AugmentedVector::from_complex(&[Complex64::ONE, Complex64::new(0.0, 4.0)]);
    let out = l.apply_compensation(&v).unwrap().to_complex();
    assert!((out[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
    assert!((out[1] - Complex64::new(0.0, 2.0)).norm() < 1e-15);

    // h = [1, 1] deconvolves [1, 0, 0] into the alternating series.
    let l = Layer::fir(&[Complex64::ONE, Complex64::ONE]);
    let v = AugmentedVector::from_complex(&[Complex64::ONE, Complex64::ZERO, Complex64::ZERO]);
    let out = l.apply_compensation(&v).unwrap().to_complex();
    let want = [1.0, -1.0, 1.0];
    for (o, w) in out.iter().zip(want) {
        assert!((o - Complex64::new(w, 0.0)).norm() < 1e-15);
    }
}

#[test]
fn isomorphic_compensation_equals_transfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in ["iq", "cfo", "qspn"] {
        let n = 10;
        let layer = random_layer(&mut rng, kind, n);
        let v = random_aug(&mut rng, n);
        let a = layer.apply_transfer(&v).unwrap();
        let b = layer.apply_compensation(&v).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn fir_compensation_inverts_transfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = rng.random_range(4..=32usize);
        let layer = random_layer(&mut rng, "fir", n);
        let v = random_aug(&mut rng, n);
        let roundtrip = layer.apply_compensation(&layer.apply_transfer(&v).unwrap()).unwrap();
        assert!(roundtrip.max_abs_diff(&v) < 1e-10);
    }
}

#[test]
fn fir_compensation_agrees_with_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let n = rng.random_range(4..=24usize);
        let layer = random_layer(&mut rng, "fir", n);
        let v = random_aug(&mut rng, n);
        let fast = layer.apply_compensation(&v).unwrap();
        let dense = layer.dense_compensation(n).unwrap().apply(&v).unwrap();
        assert!(fast.max_abs_diff(&dense) < 1e-10);
    }
}

#[test]
fn singular_fir_is_rejected_with_magnitude() {
    let l = Layer::fir(&[Complex64::new(1e-12, 0.0), Complex64::ONE]);
    let v = AugmentedVector::zeros(4);
    match l.apply_compensation(&v) {
        Err(Error::SingularLayer { kind: "fir", magnitude }) => {
            assert!(magnitude < 1e-9)
        }
        other => panic!("expected singular error, got {other:?}"),
    }
}

#[test]
fn compensation_transpose_matches_dense_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in ["iq", "cfo", "fir", "qspn"] {
        for _ in 0..5 {
            let n = rng.random_range(4..=20usize);
            let layer = random_layer(&mut rng, kind, n);
            let v = random_aug(&mut rng, n);
            let fast = layer.apply_compensation_transpose(&v).unwrap();
            let dense = layer.dense_compensation(n).unwrap().into_inner();
            let x = nalgebra::DVector::from_column_slice(v.as_slice());
            let want = dense.transpose() * x;
            let want = AugmentedVector::from_raw(want.as_slice().to_vec()).unwrap();
            assert!(fast.max_abs_diff(&want) < 1e-10, "{kind} transpose");
        }
    }
}

#[test]
fn iq_local_jacobian_reference() {
    let y = AugmentedVector::from_complex(&[Complex64::new(1.0, 2.0)]);
    let l = Layer::iq([1.0, 0.0, 0.0, 1.0]).local_jacobian(&y).unwrap();
    let want = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
    assert_eq!(l, want);
}

#[test]
fn cfo_local_jacobian_reference() {
    let y = AugmentedVector::from_complex(&[Complex64::ONE, Complex64::i()]);
    let l = Layer::cfo(0.0).local_jacobian(&y).unwrap();
    // q = [0, j * 1 * j] = [0, -1]
    let want = DMatrix::from_column_slice(4, 1, &[0.0, -1.0, 0.0, 0.0]);
    assert!((l - want).abs().max() < 1e-15);
}

#[test]
fn local_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in ["iq", "cfo", "fir", "qspn"] {
        for _ in 0..8 {
            let n = rng.random_range(3..=24usize);
            let layer = random_layer(&mut rng, kind, n);
            let y = random_aug(&mut rng, n);
            let analytic = layer.local_jacobian(&y).unwrap();
            let fd = fd_local_jacobian(&layer, &y);
            let scale = fd.abs().max().max(1.0);
            let err = (&analytic - &fd).abs().max() / scale;
            assert!(err < 1e-6, "{kind} n={n}: rel err {err}");
        }
    }
}

#[test]
fn param_length_mismatch_is_shape_error() {
    assert!(matches!(
        Layer::new(LayerKind::Iq, vec![1.0, 2.0]),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        Layer::new(LayerKind::Fir { taps: 3 }, vec![0.0; 5]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn qspn_with_more_blocks_than_samples_is_rejected() {
    let l = Layer::qs_phase_noise(vec![0.0; 5]);
    let v = AugmentedVector::zeros(3);
    assert!(matches!(l.apply_transfer(&v), Err(Error::Shape(_))));
}

#[test]
fn qspn_remainder_goes_to_last_block() {
    // 10 samples in 3 blocks: sizes 3, 3, 4.
    let l = Layer::qs_phase_noise(vec![0.0, 0.0, std::f64::consts::FRAC_PI_2]);
    let ones = vec![Complex64::ONE; 10];
    let out = l.apply_transfer(&AugmentedVector::from_complex(&ones)).unwrap().to_complex();
    for (i, y) in out.iter().enumerate() {
        let want = if i < 6 { Complex64::ONE } else { Complex64::i() };
        assert!((y - want).norm() < 1e-15, "sample {i}");
    }
}

#[test]
fn stochastic_kinds_reject_deterministic_ops() {
    let v = AugmentedVector::zeros(4);
    assert!(Layer::awgn(0.1).apply_transfer(&v).is_err());
    assert!(Layer::wiener_phase_noise(0.1).apply_transfer(&v).is_err());
    assert!(Layer::awgn(0.1).local_jacobian(&v).is_err());
    assert!(Layer::wiener_phase_noise(0.1).dense_transfer(4).is_err());
}

#[test]
fn awgn_zero_variance_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let v = random_aug(&mut rng, 16);
    let out = apply_awgn(0.0, &v, &mut rng);
    assert_eq!(out, v);
}

#[test]
fn awgn_per_coordinate_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let variance = 0.4;
    let n = 50_000;
    let v = AugmentedVector::zeros(n);
    let out = apply_awgn(variance, &v, &mut rng);
    let mean = out.as_slice().iter().sum::<f64>() / (2 * n) as f64;
    let var = out.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (2 * n) as f64;
    let want = variance / 2.0;
    assert!((var - want).abs() / want < 0.02, "sample variance {var}, want {want}");
}

#[test]
fn wiener_increments_have_requested_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let var = 2.0 * std::f64::consts::PI * 5e-5;
    let phases = draw_wiener_phases(100_000, var, &mut rng);
    let incs: Vec<f64> = std::iter::once(phases[0])
        .chain(phases.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let mean = incs.iter().sum::<f64>() / incs.len() as f64;
    let sample_var = incs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / incs.len() as f64;
    assert!((sample_var - var).abs() / var < 0.03, "increment variance {sample_var}, want {var}");
}

#[test]
fn wiener_rotation_preserves_magnitude_and_uses_cumulative_phase() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let v = AugmentedVector::from_complex(&vec![Complex64::ONE; 64]);
    let out = apply_wiener_pn(0.01, &v, &mut rng).to_complex();
    for y in &out {
        assert!((y.norm() - 1.0).abs() < 1e-12);
    }
    // Same seed reproduces the same trajectory.
    let mut rng2 = ChaCha8Rng::seed_from_u64(15);
    let out2 = apply_wiener_pn(0.01, &v, &mut rng2).to_complex();
    assert_eq!(out, out2);
}
