use imupose_core::evalharness::{procedural_samples, windows_from_samples, DatasetSpec, Sample};
use imupose_core::imusynth::SensorSet;
use imupose_core::kinematics::Skeleton;
use imupose_core::neuralseq::layers::encoder_layer;
use imupose_core::neuralseq::model::{forward_on_graph, BoundParams};
use imupose_core::neuralseq::{
    init_params, model_forward, train, Graph, ModelSpec, Tensor, TrainConfig, Variant, Window,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (_, cols) = t.dims2();
    let data = perm
        .iter()
        .flat_map(|&r| t.data()[r * cols..(r + 1) * cols].to_vec())
        .collect();
    Tensor::new(vec![perm.len(), cols], data).unwrap()
}

fn small_transformer(n_sensors: usize) -> ModelSpec {
    ModelSpec {
        variant: Variant::Transformer,
        n_sensors,
        hidden: 16,
        layers: 2,
        heads: 2,
        ffn_hidden: 24,
        accel_scale: 30.0,
        seed: 21,
    }
}

#[test]
fn encoder_without_positions_is_permutation_equivariant() {
    let spec = small_transformer(1);
    let params = init_params::<f64>(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let steps = 7;
    let x = rand_tensor(&mut rng, steps, spec.hidden);
    let perm = [3, 0, 6, 1, 5, 2, 4];

    let run = |input: Tensor<f64>| {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, false);
        let mut h = g.constant(input);
        for l in 0..spec.layers {
            h = encoder_layer(
                &mut g,
                h,
                &bound.encoder_layer(l).unwrap(),
                spec.heads,
                1,
                steps,
            )
            .unwrap();
        }
        g.value(h).clone()
    };
    let plain = run(x.clone());
    let permuted = run(permute_rows(&x, &perm));
    let expected = permute_rows(&plain, &perm);
    for (a, b) in permuted.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn positional_encoding_breaks_permutation_symmetry() {
    let spec = small_transformer(1);
    let params = init_params::<f64>(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, 5, spec.input_dim());
    let perm = [4, 3, 2, 1, 0];
    let plain = model_forward(&spec, &params, &x).unwrap();
    let permuted = model_forward(&spec, &params, &permute_rows(&x, &perm)).unwrap();
    let expected = permute_rows(&plain, &perm);
    let diff: f64 = permuted
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 1e-6);
}

#[test]
fn birnn_output_sees_future_frames() {
    let spec = ModelSpec {
        variant: Variant::Birnn,
        n_sensors: 1,
        hidden: 8,
        layers: 1,
        heads: 1,
        ffn_hidden: 0,
        accel_scale: 30.0,
        seed: 4,
    };
    let params = init_params::<f64>(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, 6, 12);
    let mut y = x.clone();
    for c in 0..12 {
        y.data_mut()[5 * 12 + c] += 0.5;
    }
    let a = model_forward(&spec, &params, &x).unwrap();
    let b = model_forward(&spec, &params, &y).unwrap();
    let first_row_diff: f64 = (0..216).map(|c| (a.data()[c] - b.data()[c]).abs()).sum();
    assert!(first_row_diff > 1e-9);
}

#[test]
fn batched_forward_matches_per_sequence_forward() {
    for variant in [Variant::Birnn, Variant::Transformer] {
        let mut spec = small_transformer(2);
        spec.variant = variant;
        let params = init_params::<f64>(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, 4, spec.input_dim());
        let b = rand_tensor(&mut rng, 4, spec.input_dim());
        let stacked =
            Tensor::new(vec![8, spec.input_dim()], [a.data(), b.data()].concat()).unwrap();
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, false);
        let x = g.constant(stacked);
        let out = forward_on_graph(&mut g, &spec, &bound, x, 2, 4).unwrap();
        let both = g.value(out).data().to_vec();
        let single = [
            model_forward(&spec, &params, &a).unwrap(),
            model_forward(&spec, &params, &b).unwrap(),
        ];
        let expected: Vec<f64> = single.iter().flat_map(|t| t.data().to_vec()).collect();
        for (x, y) in both.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12, "{variant:?}");
        }
    }
}

/// One window per procedural sequence, all 24 sensors, or the first few
/// of a fixed sparse set.
fn overfit_windows(n_windows: usize, frames: usize, n_sensors: usize) -> Vec<Window<f64>> {
    let skel = Skeleton::<f64>::smpl();
    let spec = DatasetSpec {
        n_sequences: n_windows,
        seq_len: frames + 2,
        ..Default::default()
    };
    let mut samples: Vec<Sample<f64>> = procedural_samples(&spec, &skel).unwrap();
    if n_sensors < 24 {
        let subset = SensorSet::new([0, 4, 5, 15, 18, 19][..n_sensors].to_vec()).unwrap();
        samples = samples.iter().map(|s| s.select(&subset).unwrap()).collect();
    }
    windows_from_samples(&samples, frames).unwrap()
}

#[test]
fn epoch_average_loss_is_monotone_on_tiny_fixture() {
    let windows = overfit_windows(4, 8, 6);
    for variant in [Variant::Birnn, Variant::Transformer] {
        let spec = ModelSpec {
            variant,
            n_sensors: 6,
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn_hidden: 16,
            accel_scale: 30.0,
            seed: 7,
        };
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 4,
            window_len: 8,
            ..Default::default()
        };
        let ck = train(&spec, &cfg, &windows).unwrap();
        for pair in ck.epoch_losses.windows(2) {
            assert!(pair[1] <= pair[0], "{variant:?}: {:?}", ck.epoch_losses);
        }
    }
}

#[test]
fn tiny_transformer_overfits_within_500_steps() {
    let windows = overfit_windows(8, 32, 24);
    assert_eq!(windows.len(), 8);
    let spec = ModelSpec {
        variant: Variant::Transformer,
        n_sensors: 24,
        hidden: 32,
        layers: 2,
        heads: 2,
        ffn_hidden: 64,
        accel_scale: 30.0,
        seed: 0,
    };
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 8,
        window_len: 32,
        stop_below: Some(1e-3),
        ..Default::default()
    };
    let ck = train(&spec, &cfg, &windows).unwrap();
    let loss = ck.final_train_loss.unwrap();
    assert!(ck.trained_steps <= 500);
    assert!(loss < 1e-3, "loss {loss} after {} steps", ck.trained_steps);
}
