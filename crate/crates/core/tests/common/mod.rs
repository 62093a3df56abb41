#![allow(dead_code)]

use gazetarget::data::{generate_scene, scene_rng, SynthConfig};
use gazetarget::gtgen::{make_ground_truth, GtConfig};
use gazetarget::losses::{total_loss, total_loss_with_grad, LossWeights};
use gazetarget::matching::{match_instances, MatchWeights};
use gazetarget::model::{Model, ModelConfig};

/// Relative error of one parameter group: `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
#[derive(Debug, Clone)]
pub struct GroupError {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Central finite differences (step `h`) of the total loss with respect to
/// every parameter of a tiny model, compared against the analytic backward
/// pass. The assignment is computed once and held fixed.
pub fn gradient_check(seed: u64, h: f64, config: ModelConfig) -> Vec<GroupError> {
    let synth = SynthConfig {
        image_size: config.input_size,
        max_people: config.num_proposals.min(2),
        p_out_of_frame: 0.3,
        ..Default::default()
    };
    let scene = generate_scene(&mut scene_rng(seed, 0), &synth);
    let (m, n) = config.heatmap_size;
    let gts = make_ground_truth(&scene.training_annotations(), &GtConfig::with_size(m, n)).unwrap();
    let weights = LossWeights::default();

    let mut model = Model::<f64>::new(config, 1000 + seed).unwrap();
    let (features, proposals, trace) = model.forward_train(&scene.image).unwrap();
    let assignment = match_instances(&proposals, &gts, &MatchWeights::default()).unwrap();
    let (_, grads) =
        total_loss_with_grad(&proposals, &features.h_det_raw, &gts, &assignment, &weights).unwrap();
    model.zero_grad();
    model.backward(trace, &grads);

    let loss_at = |model: &Model<f64>| -> f64 {
        let (f, p) = model.forward(&scene.image).unwrap();
        total_loss(&p, &f.h_det_raw, &gts, &assignment, &weights).unwrap().total
    };

    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .into_iter()
        .map(|(name, p)| (name, p.grad.clone()))
        .collect();
    let mut out = Vec::new();
    for (g, (name, grad)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = model.params()[g].1.value[i];
            model.params_mut()[g].1.value[i] = orig + h;
            let up = loss_at(&model);
            model.params_mut()[g].1.value[i] = orig - h;
            let down = loss_at(&model);
            model.params_mut()[g].1.value[i] = orig;
            *num = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel_error = if denom < 1e-12 { diff } else { diff / denom };
        out.push(GroupError {
            name: name.clone(),
            rel_error,
            analytic_norm: na,
        });
    }
    out
}
