//! Optimal assignment on a hand-written cost matrix, then matching an
//! untrained model's proposals to a scene's ground truth.
//!
//! ```text
//! cargo run --example hungarian_matching
//! ```

use gazetarget::data::{generate_scene, scene_rng, SynthConfig};
use gazetarget::gtgen::{make_ground_truth, GtConfig};
use gazetarget::matching::{cost_matrix, hungarian, match_instances, CostMatrix, MatchWeights};
use gazetarget::model::{Model, ModelConfig};

fn main() -> gazetarget::Result<()> {
    let costs = CostMatrix::from_rows(&[
        vec![4.0, 1.0, 3.0],
        vec![2.0, 0.0, 5.0],
        vec![3.0, 2.0, 2.0],
        vec![1.0, 4.0, 4.0],
    ])?;
    let a = hungarian(&costs)?;
    println!("4 proposals x 3 targets: pairs {:?}, cost {}", a.pairs, a.total_cost);

    let config = ModelConfig::tiny();
    let scene = generate_scene(
        &mut scene_rng(1, 0),
        &SynthConfig {
            image_size: config.input_size,
            ..Default::default()
        },
    );
    let (m, n) = config.heatmap_size;
    let gts = make_ground_truth(&scene.training_annotations(), &GtConfig::with_size(m, n))?;
    let model = Model::<f32>::new(config, 0)?;
    let (_, proposals) = model.forward(&scene.image)?;
    let weights = MatchWeights::default();
    let c = cost_matrix(&proposals, &gts, &weights)?;
    for r in 0..c.rows() {
        let row: Vec<String> = (0..c.cols()).map(|j| format!("{:.4}", c.get(r, j))).collect();
        println!("proposal {r}: [{}]", row.join(", "));
    }
    let a = match_instances(&proposals, &gts, &weights)?;
    println!("matched (proposal, person): {:?}", a.pairs);
    Ok(())
}
