//! Gradient verification suite: every layer kind and both full models
//! checked against central finite differences in f64.
//!
//! Layer probes pack weights, biases, and the layer input into one flat
//! vector and score the output against a fixed random projection, so the
//! sweep exercises parameter and input gradients together. Relu inputs are
//! sampled away from zero; elsewhere the f64 central difference at h = 1e-5
//! leaves orders of magnitude between true error and the thresholds.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::gridworld::{ActionId, Cell, Map};
use crate::models::{image_tensor, Model, ModelKind};
use crate::neural::gradcheck::{check_coords, sample_coords, GradCheckError, GradCheckReport, DEFAULT_STEP};
use crate::neural::layers::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_forward, linear_backward,
    linear_forward, relu_backward, softmax_xent,
};
use crate::neural::Tensor;
use crate::oracle::oracle_labels;
use crate::trainer::{embedding_group, hupa_group, merge_group};

/// Pass threshold for single-layer checks.
pub const LAYER_THRESHOLD: f64 = 1e-6;
/// Pass threshold for full-model checks.
pub const MODEL_THRESHOLD: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()
}

/// Random values bounded away from zero, for relu inputs.
fn rand_vec_off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let magnitude = 0.1 + rng.random::<f64>();
            if rng.random::<f64>() < 0.5 {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect()
}

fn weighted_sum(out: &[f64], weights: &[f64]) -> f64 {
    out.iter().zip(weights).map(|(o, w)| o * w).sum()
}

/// conv3x3 over a random 2x5x5 input; params = [w, b, x].
fn check_conv3x3(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, GradCheckError> {
    let (in_c, out_c, h, w_dim, stride) = (2, 3, 5, 5, 1);
    let wn = out_c * in_c * 9;
    let xn = in_c * h * w_dim;
    let mut params = rand_vec(rng, wn + out_c + xn, 1.0);
    let probe = rand_vec(rng, out_c * h * w_dim, 1.0);

    let forward = |p: &[f64]| -> f64 {
        let x = Tensor::new(vec![in_c, h, w_dim], p[wn + out_c..].to_vec());
        let out = conv2d_forward(&x, &p[..wn], &p[wn..wn + out_c], out_c, 3, stride, 1);
        weighted_sum(out.data(), &probe)
    };

    let mut analytic = vec![0.0f64; params.len()];
    {
        let x = Tensor::new(vec![in_c, h, w_dim], params[wn + out_c..].to_vec());
        let gout = Tensor::new(vec![out_c, h, w_dim], probe.clone());
        let mut gx = Tensor::zeros(vec![in_c, h, w_dim]);
        let (gw, rest) = analytic.split_at_mut(wn);
        let (gb, gx_flat) = rest.split_at_mut(out_c);
        conv2d_backward(&x, &params[..wn], &gout, out_c, 3, stride, 1, &mut gx, gw, gb);
        gx_flat.copy_from_slice(gx.data());
    }
    let coords: Vec<usize> = (0..params.len()).collect();
    check_coords("conv3x3", &mut params, &coords, &analytic, DEFAULT_STEP, forward)
}

/// linear 5 -> 3; params = [w, b, x].
fn check_linear(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, GradCheckError> {
    let (in_dim, out_dim) = (5, 3);
    let wn = in_dim * out_dim;
    let mut params = rand_vec(rng, wn + out_dim + in_dim, 1.0);
    let probe = rand_vec(rng, out_dim, 1.0);

    let forward = |p: &[f64]| -> f64 {
        let out = linear_forward(&p[wn + out_dim..], &p[..wn], &p[wn..wn + out_dim], out_dim, in_dim);
        weighted_sum(&out, &probe)
    };
    let mut analytic = vec![0.0f64; params.len()];
    {
        let x = params[wn + out_dim..].to_vec();
        let w = params[..wn].to_vec();
        let (gw, rest) = analytic.split_at_mut(wn);
        let (gb, gx) = rest.split_at_mut(out_dim);
        linear_backward(&x, &w, &probe, out_dim, in_dim, gw, gb, Some(gx));
    }
    let coords: Vec<usize> = (0..params.len()).collect();
    check_coords("linear", &mut params, &coords, &analytic, DEFAULT_STEP, forward)
}

/// relu on inputs bounded away from the kink.
fn check_relu(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, GradCheckError> {
    let n = 32;
    let mut params = rand_vec_off_kink(rng, n);
    let probe = rand_vec(rng, n, 1.0);
    let forward = |p: &[f64]| -> f64 {
        p.iter().zip(&probe).map(|(x, w)| x.max(0.0) * w).sum()
    };
    let mut analytic = probe.clone();
    let out: Vec<f64> = params.iter().map(|x| x.max(0.0)).collect();
    relu_backward(&out, &mut analytic);
    let coords: Vec<usize> = (0..n).collect();
    check_coords("relu", &mut params, &coords, &analytic, DEFAULT_STEP, forward)
}

/// A strided residual block with projection; params = [block params, x].
fn check_residual_block(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, GradCheckError> {
    use crate::neural::ParamLayout;
    let mut layout = ParamLayout::new();
    let block = crate::models::trunk::ResBlockSpec::push(&mut layout, "block", 2, 4, 2);
    let bn = layout.total();
    let (in_c, h, w_dim) = (2, 6, 6);
    let xn = in_c * h * w_dim;
    let mut params = rand_vec(rng, bn + xn, 0.5);
    let out_dims = (4, 3, 3);
    let probe = rand_vec(rng, out_dims.0 * out_dims.1 * out_dims.2, 1.0);

    let forward = |p: &[f64]| -> f64 {
        let x = Tensor::new(vec![in_c, h, w_dim], p[bn..].to_vec());
        let trace = block.forward(&p[..bn], &x);
        weighted_sum(trace.out.data(), &probe)
    };
    let mut analytic = vec![0.0f64; params.len()];
    {
        let x = Tensor::new(vec![in_c, h, w_dim], params[bn..].to_vec());
        let trace = block.forward(&params[..bn], &x);
        let gout = Tensor::new(vec![out_dims.0, out_dims.1, out_dims.2], probe.clone());
        let (gp, gx_flat) = analytic.split_at_mut(bn);
        let gx = block.backward(&params[..bn], &x, &trace, gout, gp);
        gx_flat.copy_from_slice(gx.data());
    }
    let coords: Vec<usize> = (0..params.len()).collect();
    check_coords("residual_block", &mut params, &coords, &analytic, DEFAULT_STEP, forward)
}

/// 2x2 average pooling on a 2x4x4 input.
fn check_avgpool(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, GradCheckError> {
    let (c, h, w_dim) = (2, 4, 4);
    let n = c * h * w_dim;
    let mut params = rand_vec(rng, n, 1.0);
    let probe = rand_vec(rng, c * 2 * 2, 1.0);
    let forward = |p: &[f64]| -> f64 {
        let x = Tensor::new(vec![c, h, w_dim], p.to_vec());
        weighted_sum(avgpool2_forward(&x).data(), &probe)
    };
    let gout = Tensor::new(vec![c, 2, 2], probe.clone());
    let analytic = avgpool2_backward(&gout, (c, h, w_dim)).into_data();
    let coords: Vec<usize> = (0..n).collect();
    check_coords("avgpool", &mut params, &coords, &analytic, DEFAULT_STEP, forward)
}

/// softmax cross-entropy over the 8 logits.
fn check_softmax_xent(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, GradCheckError> {
    let label = ActionId::new(4).unwrap();
    let mut params = rand_vec(rng, 8, 2.0);
    let forward = |p: &[f64]| -> f64 {
        let mut logits = [0.0f64; 8];
        logits.copy_from_slice(p);
        softmax_xent(&logits, label).0
    };
    let mut logits = [0.0f64; 8];
    logits.copy_from_slice(&params);
    let (_, analytic) = softmax_xent(&logits, label);
    let coords: Vec<usize> = (0..8).collect();
    check_coords("softmax_xent", &mut params, &coords, &analytic.to_vec(), DEFAULT_STEP, forward)
}

/// Fixed tiny batch on two maps for the full-model objectives.
fn probe_batch() -> (Vec<Sample>, Vec<Tensor<f64>>) {
    let map_ids = [11u16, 95u16];
    let mut samples = Vec::new();
    let mut images = Vec::new();
    for &map_id in &map_ids {
        let map = Map::from_id(map_id);
        images.push(image_tensor::<f64>(&map.to_image()));
        let goal = Cell::new(7, 22).unwrap();
        let labels = oracle_labels(&map, goal).expect("open goal");
        for s in [Cell::new(3, 3).unwrap(), Cell::new(24, 18).unwrap(), Cell::new(13, 5).unwrap()] {
            samples.push(Sample {
                map_id,
                s,
                g: goal,
                label: labels.canonical(s).expect("non-goal"),
                optimal_mask: labels.optimal_set(s).bits(),
            });
        }
    }
    (samples, images)
}

fn model_mean_loss(model: &Model, params: &[f64], samples: &[Sample], images: &[Tensor<f64>]) -> f64 {
    let mut loss = 0.0;
    for (chunk, image) in samples.chunks(3).zip(images) {
        let context = model.map_context(params, image);
        for sample in chunk {
            let logits = model.logits(params, &context, sample.s, sample.g);
            loss += softmax_xent(&logits, sample.label).0;
        }
    }
    loss / samples.len() as f64
}

/// Full-model check: mean loss over the probe batch, analytic gradient from
/// the grouped backward pass, probed at a random 220-coordinate subsample.
fn check_model(kind: ModelKind, width: usize, seed: u64) -> Result<GradCheckReport, GradCheckError> {
    let model = Model::new(kind, width).expect("verify widths are valid");
    let mut params = model.init_params::<f64>(seed);
    let (samples, images) = probe_batch();

    let mut analytic = vec![0.0f64; params.len()];
    for (group_idx, image) in images.iter().enumerate() {
        let indices: Vec<usize> = (group_idx * 3..group_idx * 3 + 3).collect();
        let group = match &model {
            Model::Hupa(m) => hupa_group(m, &params, image, &samples, &indices),
            Model::Embedding(m) => embedding_group(m, &params, image, &samples, &indices),
        };
        merge_group(&model, &mut analytic, &group);
    }
    let inv = 1.0 / samples.len() as f64;
    for g in analytic.iter_mut() {
        *g *= inv;
    }

    let coords = sample_coords(params.len(), 220, seed ^ 0x5eed);
    let name = format!("model_{kind}_w{width}");
    check_coords(&name, &mut params, &coords, &analytic, DEFAULT_STEP, |p| {
        model_mean_loss(&model, p, &samples, &images)
    })
}

/// The whole verification suite: one report per layer kind, then both full
/// models at width 16.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = vec![
        check_conv3x3(&mut rng)?,
        check_linear(&mut rng)?,
        check_relu(&mut rng)?,
        check_residual_block(&mut rng)?,
        check_avgpool(&mut rng)?,
        check_softmax_xent(&mut rng)?,
    ];
    reports.push(check_model(ModelKind::Hupa, 16, seed)?);
    reports.push(check_model(ModelKind::Embedding, 16, seed)?);
    Ok(reports)
}

/// Threshold for a report by name: layers are strict, full models looser.
pub fn threshold_for(report: &GradCheckReport) -> f64 {
    if report.name.starts_with("model_") {
        MODEL_THRESHOLD
    } else {
        LAYER_THRESHOLD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_and_model_passes() {
        let reports = run_suite(2718).unwrap();
        assert_eq!(reports.len(), 8);
        let kinds: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            kinds,
            vec![
                "conv3x3",
                "linear",
                "relu",
                "residual_block",
                "avgpool",
                "softmax_xent",
                "model_hupa_w16",
                "model_embedding_w16"
            ]
        );
        for report in &reports {
            assert!(
                report.passes(threshold_for(report)),
                "{} err {}",
                report.name,
                report.max_rel_err
            );
        }
    }
}
