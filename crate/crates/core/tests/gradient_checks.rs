use imupose_core::neuralseq::gradcheck::LayerCase;

fn run(case: LayerCase, tol: f64) {
    for seed in [1, 2] {
        let r = case.check(seed).unwrap();
        assert!(r.entries > 0);
        assert!(r.passes(tol), "{} seed {seed}: {r:?}", case.name());
    }
}

#[test]
fn linear_layer() {
    run(LayerCase::Linear, 1e-6);
}

#[test]
fn lstm_cell() {
    run(LayerCase::LstmCell, 1e-4);
}

#[test]
fn bidirectional_stack() {
    run(LayerCase::BidirectionalStack, 1e-4);
}

#[test]
fn positional_encoding_path() {
    run(LayerCase::PositionalEncoding, 1e-4);
}

#[test]
fn multi_head_attention() {
    run(LayerCase::MultiHeadAttention, 1e-4);
}

#[test]
fn encoder_layer_two_steps_width_eight_two_heads() {
    run(LayerCase::EncoderLayer, 1e-4);
}

#[test]
fn batched_encoder_layer() {
    run(LayerCase::BatchedEncoderLayer, 1e-4);
}

#[test]
fn full_models() {
    run(LayerCase::FullBirnn, 1e-4);
    run(LayerCase::FullTransformer, 1e-4);
}

#[test]
fn every_case_is_listed() {
    let names: std::collections::BTreeSet<_> = LayerCase::ALL.iter().map(|c| c.name()).collect();
    assert_eq!(names.len(), LayerCase::ALL.len());
}
