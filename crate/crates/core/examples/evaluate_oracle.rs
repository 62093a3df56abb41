//! Scores ground-truth-derived predictions, then a degraded copy, to show the
//! metric suite and its report table.
//!
//! ```text
//! cargo run --example evaluate_oracle
//! ```

use gazetarget::data::{generate_dataset, SynthConfig};
use gazetarget::metrics::{evaluate_scenes, oracle_predictions, MetricOptions, ScenePredictions};
use gazetarget::Point;

fn main() -> gazetarget::Result<()> {
    let config = SynthConfig {
        p_out_of_frame: 0.3,
        ..Default::default()
    };
    let scenes: Vec<ScenePredictions> = generate_dataset(&config, 0..200)
        .iter()
        .map(|s| {
            let gts = s.instances();
            ScenePredictions {
                scene_id: s.scene_id.clone(),
                predictions: oracle_predictions(&gts, 64),
                ground_truth: gts,
            }
        })
        .collect();
    let options = MetricOptions::default();
    println!("oracle:\n{}\n", evaluate_scenes(&scenes, &options)?);

    // Shift every gaze point by 0.2 and halve the confidence of every other one.
    let degraded: Vec<ScenePredictions> = scenes
        .into_iter()
        .map(|mut s| {
            for (i, p) in s.predictions.iter_mut().enumerate() {
                p.gaze_point = Point::new((p.gaze_point.x + 0.2).min(1.0), p.gaze_point.y);
                if i % 2 == 1 {
                    p.confidence *= 0.5;
                }
            }
            s
        })
        .collect();
    println!("shifted gaze:\n{}", evaluate_scenes(&degraded, &options)?);
    Ok(())
}
