//! Helpers shared by the integration suites: loss recomputation, central
//! finite differences, and random small-model generation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use fedobp_core::nn::{forward, ModelSpec, Pool};
use fedobp_core::params::ParamVectorG;
use fedobp_core::tensor::TensorG;
use fedobp_core::Tensor;

/// Mean cross-entropy recomputed from logits; independent of the library's
/// loss path.
pub fn oracle_loss(
    spec: &ModelSpec,
    params: &ParamVectorG<f64>,
    batch: &Tensor,
    labels: &[usize],
) -> f64 {
    let logits = forward(params, spec, batch).unwrap();
    let classes = spec.num_classes;
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Central difference of the loss along one coordinate.
pub fn central_difference(
    spec: &ModelSpec,
    params: &ParamVectorG<f64>,
    batch: &Tensor,
    labels: &[usize],
    coord: usize,
    h: f64,
) -> f64 {
    let mut plus = params.values().to_vec();
    plus[coord] += h;
    let plus = ParamVectorG::new(plus, params.layout().clone()).unwrap();
    let mut minus = params.values().to_vec();
    minus[coord] -= h;
    let minus = ParamVectorG::new(minus, params.layout().clone()).unwrap();
    (oracle_loss(spec, &plus, batch, labels) - oracle_loss(spec, &minus, batch, labels)) / (2.0 * h)
}

/// Random architecture from the linear/MLP/CNN families with at most 500
/// parameters.
pub fn random_small_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    loop {
        let family = rng.gen_range(0..3);
        let num_classes = rng.gen_range(2..=4);
        let spec = match family {
            0 => ModelSpec {
                input_shape: (1, rng.gen_range(3..=6), rng.gen_range(3..=6)),
                conv_channels: vec![],
                kernel_size: 1,
                pool: Pool::None,
                fc_widths: vec![],
                num_classes,
            },
            1 => ModelSpec {
                input_shape: (1, rng.gen_range(3..=5), rng.gen_range(3..=5)),
                conv_channels: vec![],
                kernel_size: 1,
                pool: Pool::None,
                fc_widths: vec![rng.gen_range(3..=8)],
                num_classes,
            },
            _ => ModelSpec {
                input_shape: (1, rng.gen_range(5..=7), rng.gen_range(5..=7)),
                conv_channels: vec![rng.gen_range(1..=3)],
                kernel_size: rng.gen_range(2..=3),
                pool: if rng.gen_bool(0.5) { Pool::Max2x2 } else { Pool::None },
                fc_widths: if rng.gen_bool(0.5) { vec![rng.gen_range(2..=5)] } else { vec![] },
                num_classes,
            },
        };
        match spec.total_params() {
            Ok(n) if n <= 500 => return spec,
            _ => continue,
        }
    }
}

/// Uniform [0,1) pixel batch with uniform random labels.
pub fn random_batch(spec: &ModelSpec, n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
    let (c, h, w) = spec.input_shape;
    let data: Vec<f64> = (0..n * c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.num_classes)).collect();
    (TensorG::new(vec![n, c, h, w], data).unwrap(), labels)
}
