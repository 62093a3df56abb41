//! Trains the tiny model for a few hundred steps on a handful of scenes and
//! writes a four-panel PNG per decoded instance: scene with box and gaze ray,
//! head map, gaze map and connection map.
//!
//! ```text
//! cargo run --release --example visualize_predictions -- [out_dir]
//! ```

use std::path::PathBuf;

use gazetarget::data::{generate_dataset, SynthConfig};
use gazetarget::harness::{prepare_scenes, TrainConfig, Trainer};
use gazetarget::model::ModelConfig;
use gazetarget::postprocess::to_instances;
use gazetarget::viz::instance_panel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "panels".into()));
    std::fs::create_dir_all(&out)?;
    let model = ModelConfig::tiny();
    let scenes = generate_dataset(
        &SynthConfig {
            image_size: model.input_size,
            max_people: 2,
            ..Default::default()
        },
        0..4,
    );
    let data = prepare_scenes(&scenes, &model)?;
    let config = TrainConfig {
        max_lr: 1e-2,
        batch_size: 2,
        epochs: 150,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config)?;
    let rows = trainer.run(&data, None, &mut |_| {}, &mut |_, _| Ok(()))?;
    println!("trained {} steps, final loss {:.4}", rows.len(), rows.last().map_or(f64::NAN, |r| r.total));

    for scene in &scenes {
        let (_, proposals) = trainer.model.forward(&scene.image)?;
        for (k, inst) in to_instances(&proposals).iter().filter(|i| i.confidence > 0.5).enumerate() {
            let path = out.join(format!("{}_{k}.png", scene.scene_id));
            instance_panel(&scene.image, &proposals, inst, 128).save(&path)?;
            println!("{}: confidence {:.2}, out-of-frame {:.2}", path.display(), inst.confidence, inst.oof_prob);
        }
    }
    Ok(())
}
