//! Independent oracles for the network code: a from-scratch nested-loop
//! forward implementation, central finite differences for gradients, and a
//! convex descent check.

mod common;

use common::{central_difference, random_batch, random_small_spec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedobp_core::nn::{forward, init_params, loss_and_grad, ModelSpec, Pool};

// ---------------------------------------------------------------------------
// Naive reference forward pass. Written independently of the library: every
// output element is recomputed from scratch with explicit index arithmetic,
// layer outputs are nested Vec structures rather than flat buffers.
// ---------------------------------------------------------------------------

type Image = Vec<Vec<Vec<f64>>>; // [channel][row][col]

fn naive_forward_sample(spec: &ModelSpec, params: &[f64], image: &Image) -> Vec<f64> {
    let mut current: Image = image.clone();
    let mut offset = 0usize;
    let k = spec.kernel_size;

    for &out_c in &spec.conv_channels {
        let in_c = current.len();
        let in_h = current[0].len();
        let in_w = current[0][0].len();
        let out_h = in_h - k + 1;
        let out_w = in_w - k + 1;
        let w_len = out_c * in_c * k * k;
        let weights = &params[offset..offset + w_len];
        let biases = &params[offset + w_len..offset + w_len + out_c];
        offset += w_len + out_c;

        let mut conv: Image = vec![vec![vec![0.0; out_w]; out_h]; out_c];
        for (oc, plane) in conv.iter_mut().enumerate() {
            for (i, row) in plane.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    let mut acc = biases[oc];
                    for ic in 0..in_c {
                        for u in 0..k {
                            for v in 0..k {
                                let w = weights[oc * in_c * k * k + ic * k * k + u * k + v];
                                acc += w * current[ic][i + u][j + v];
                            }
                        }
                    }
                    *cell = acc.max(0.0);
                }
            }
        }

        current = match spec.pool {
            Pool::None => conv,
            Pool::Max2x2 => {
                let ph = out_h / 2;
                let pw = out_w / 2;
                let mut pooled: Image = vec![vec![vec![0.0; pw]; ph]; out_c];
                for (oc, plane) in pooled.iter_mut().enumerate() {
                    for (i, row) in plane.iter_mut().enumerate() {
                        for (j, cell) in row.iter_mut().enumerate() {
                            let window = [
                                conv[oc][2 * i][2 * j],
                                conv[oc][2 * i][2 * j + 1],
                                conv[oc][2 * i + 1][2 * j],
                                conv[oc][2 * i + 1][2 * j + 1],
                            ];
                            *cell = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        }
                    }
                }
                pooled
            }
        };
    }

    let mut flat: Vec<f64> = Vec::new();
    for plane in &current {
        for row in plane {
            flat.extend_from_slice(row);
        }
    }

    let widths: Vec<(usize, bool)> = spec
        .fc_widths
        .iter()
        .map(|&w| (w, true))
        .chain(std::iter::once((spec.num_classes, false)))
        .collect();
    for (width, relu) in widths {
        let in_dim = flat.len();
        let w_len = width * in_dim;
        let weights = &params[offset..offset + w_len];
        let biases = &params[offset + w_len..offset + w_len + width];
        offset += w_len + width;
        let mut next = vec![0.0; width];
        for (o, out) in next.iter_mut().enumerate() {
            let mut acc = biases[o];
            for (i, &x) in flat.iter().enumerate() {
                acc += weights[o * in_dim + i] * x;
            }
            *out = if relu { acc.max(0.0) } else { acc };
        }
        flat = next;
    }
    assert_eq!(offset, params.len(), "oracle must consume every parameter");
    flat
}

fn to_image(spec: &ModelSpec, flat: &[f64]) -> Image {
    let (c, h, w) = spec.input_shape;
    let mut image = vec![vec![vec![0.0; w]; h]; c];
    for (ci, plane) in image.iter_mut().enumerate() {
        for (hi, row) in plane.iter_mut().enumerate() {
            for (wi, cell) in row.iter_mut().enumerate() {
                *cell = flat[ci * h * w + hi * w + wi];
            }
        }
    }
    image
}

#[test]
fn forward_matches_naive_oracle() {
    let specs = [
        ModelSpec {
            input_shape: (1, 8, 8),
            conv_channels: vec![3],
            kernel_size: 3,
            pool: Pool::Max2x2,
            fc_widths: vec![6],
            num_classes: 4,
        },
        ModelSpec {
            input_shape: (2, 6, 7),
            conv_channels: vec![2, 3],
            kernel_size: 2,
            pool: Pool::None,
            fc_widths: vec![],
            num_classes: 3,
        },
        ModelSpec {
            input_shape: (1, 5, 5),
            conv_channels: vec![],
            kernel_size: 1,
            pool: Pool::None,
            fc_widths: vec![7, 5],
            num_classes: 2,
        },
        ModelSpec::default_cnn(10),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for (si, spec) in specs.iter().enumerate() {
        let params = init_params::<f64>(spec, 100 + si as u64).unwrap();
        let (batch, _) = random_batch(spec, 3, &mut rng);
        let logits = forward(&params, spec, &batch).unwrap();

        let (c, h, w) = spec.input_shape;
        let pixels = c * h * w;
        for b in 0..3 {
            let image = to_image(spec, &batch.data()[b * pixels..(b + 1) * pixels]);
            let expected = naive_forward_sample(spec, params.values(), &image);
            let got = &logits.data()[b * spec.num_classes..(b + 1) * spec.num_classes];
            for (cls, (&e, &g)) in expected.iter().zip(got).enumerate() {
                assert!(
                    (e - g).abs() <= 1e-10 * (1.0 + e.abs()),
                    "spec {si}, sample {b}, class {cls}: oracle {e} vs forward {g}"
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check. The loss used for differencing is
// recomputed in tests/common (forward + log-sum-exp), not taken from
// loss_and_grad.
// ---------------------------------------------------------------------------

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_817);
    let h = 1e-6;
    for model in 0..20 {
        let spec = random_small_spec(&mut rng);
        let params = init_params::<f64>(&spec, 7000 + model as u64).unwrap();
        let n = rng.gen_range(2..=5);
        let (batch, labels) = random_batch(&spec, n, &mut rng);
        let (_, grad) = loss_and_grad(&params, &spec, &batch, &labels).unwrap();

        for coord in 0..params.len() {
            let numeric = central_difference(&spec, &params, &batch, &labels, coord, h);
            let analytic = grad.values()[coord];
            let denom = analytic.abs().max(numeric.abs()).max(1e-4);
            let rel = (analytic - numeric).abs() / denom;
            assert!(
                rel <= 1e-4,
                "model {model}, coord {coord}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})"
            );
        }
    }
}

#[test]
fn full_batch_descent_on_convex_instance_is_monotone() {
    let spec = ModelSpec::linear((1, 3, 3), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (batch, labels) = random_batch(&spec, 24, &mut rng);
    let mut params = init_params::<f64>(&spec, 5).unwrap();

    let mut losses = Vec::new();
    for _ in 0..40 {
        let (loss, grad) = loss_and_grad(&params, &spec, &batch, &labels).unwrap();
        losses.push(loss);
        params = fedobp_core::nn::sgd_step(&params, &grad, 0.1).unwrap();
    }
    for pair in losses.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "loss increased: {} -> {}", pair[0], pair[1]);
    }
    assert!(losses.last().unwrap() < &(losses[0] - 1e-3), "descent made no progress");
}
