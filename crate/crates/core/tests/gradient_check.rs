//! Central finite differences against the analytic gradient of the weighted
//! batch loss, for every scalar parameter of a toy model.

use dualrate_core::corpus::{CleanItem, ImageTensor};
use dualrate_core::loss::Huber;
use dualrate_core::model::{DropoutScope, MissingImage, Model, ModelConfig};
use dualrate_core::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error; gradients smaller than this
/// are compared in absolute terms.
const FLOOR: f64 = 1e-6;

fn toy_config(dropout: f64, scope: DropoutScope, missing: MissingImage) -> ModelConfig {
    ModelConfig {
        vocab_size: 64,
        text_embed_dim: 8,
        image_input: [3, 2, 2],
        image_hidden_dims: vec![6],
        image_embed_dim: 4,
        head_hidden_dims: vec![8, 5],
        dropout,
        dropout_scope: scope,
        missing_image: missing,
        seed: 11,
        ..ModelConfig::default()
    }
}

fn item(rng: &mut ChaCha8Rng, id: usize, tokens: &[u32], with_image: bool) -> CleanItem {
    let image = with_image.then(|| ImageTensor {
        channels: 3,
        height: 2,
        width: 2,
        data: (0..12).map(|_| rng.random_range(-1.5f32..1.5)).collect(),
    });
    CleanItem {
        item_id: format!("toy-{id}"),
        main_category: "Toys".into(),
        text: String::new(),
        token_ids: tokens.to_vec(),
        token_count: tokens.len(),
        average_rating: 0.0,
        rating_number: 0,
        has_image: with_image,
        image,
    }
}

fn batch(model: &Model) -> Vec<CleanItem> {
    let mut rng = rng::stream(5, "toy-batch");
    let mut items = vec![
        item(&mut rng, 0, &[1, 7, 7, 63], true),
        item(&mut rng, 1, &[2, 40], false),
        item(&mut rng, 2, &[5, 9, 13, 1, 2], true),
        item(&mut rng, 3, &[33], true),
    ];
    // residuals of 0.4 and 2.5 keep every sample off the Huber kink, with
    // both the quadratic and the linear branch represented
    for (k, it) in items.iter_mut().enumerate() {
        let pred = model.predict_item(it).unwrap();
        it.average_rating = pred + [0.4, -2.5, -0.3, 2.5][k];
    }
    items
}

fn check(config: ModelConfig) -> (usize, f64) {
    let mut model = Model::new(config).unwrap();
    // move biases and the placeholder off zero so every path carries signal
    let mut init = rng::stream(3, "toy-perturb");
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += init.random_range(-0.2..0.2);
        }
    }
    let items = batch(&model);
    let refs: Vec<&CleanItem> = items.iter().collect();
    let weights = [0.5, 1.7, 0.0, 3.2];
    let huber = Huber::new(1.0).unwrap();
    let dropout_rng = rng::stream(9, "dropout");
    let use_dropout = model.config.dropout > 0.0;

    let loss_at = |m: &Model| {
        let mut r = dropout_rng.clone();
        m.loss_and_grad(&refs, &weights, &huber, use_dropout.then_some(&mut r))
            .unwrap()
            .loss
    };
    let mut r = dropout_rng.clone();
    let analytic = model
        .loss_and_grad(&refs, &weights, &huber, use_dropout.then_some(&mut r))
        .unwrap()
        .grads;
    let analytic: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();

    let mut checked = 0;
    let mut worst = 0.0f64;
    for (ti, name) in names.iter().enumerate() {
        for (j, &a) in analytic[ti].iter().enumerate() {
            let original = model.params.tensors()[ti].1[j];
            model.params.tensors_mut()[ti][j] = original + STEP;
            let up = loss_at(&model);
            model.params.tensors_mut()[ti][j] = original - STEP;
            let down = loss_at(&model);
            model.params.tensors_mut()[ti][j] = original;

            let numeric = (up - down) / (2.0 * STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            assert!(
                rel <= TOLERANCE,
                "{name}[{j}]: analytic {a:e}, numeric {numeric:e}, relative error {rel:e}"
            );
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (checked, worst)
}

#[test]
fn every_parameter_matches_finite_differences() {
    let (n, worst) = check(toy_config(0.0, DropoutScope::Head, MissingImage::Learned));
    assert_eq!(
        n,
        Model::new(toy_config(0.0, DropoutScope::Head, MissingImage::Learned))
            .unwrap()
            .params
            .len()
    );
    assert!(worst <= TOLERANCE);
}

#[test]
fn gradients_hold_with_fixed_dropout_masks() {
    check(toy_config(0.3, DropoutScope::Head, MissingImage::Learned));
    check(toy_config(0.3, DropoutScope::HeadAndFusion, MissingImage::Learned));
}

#[test]
fn gradients_hold_with_zero_placeholder() {
    check(toy_config(0.0, DropoutScope::Head, MissingImage::Zero));
}
