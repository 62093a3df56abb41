//! Overfits the compact model on a small fixed set of synthetic scenes and
//! reports metrics on that same set.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [scenes] [steps] [batch] [max_lr] [seed] [out_dir] [unmatched_head]
//! ```

use std::time::Instant;

use gazetarget::data::{generate_dataset, SynthConfig};
use gazetarget::harness::{predict, prepare_scenes, TrainConfig, Trainer};
use gazetarget::losses::LossWeights;
use gazetarget::metrics::{evaluate_scenes, MetricOptions};
use gazetarget::model::ModelConfig;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenes: u64 = arg(1, 64);
    let steps: usize = arg(2, 2000);
    let batch: usize = arg(3, 4);
    let max_lr: f64 = arg(4, 2e-3);
    let seed: u64 = arg(5, 0);
    let out: Option<std::path::PathBuf> = std::env::args().nth(6).filter(|s| s != "-").map(Into::into);
    let unmatched_head: f64 = arg(7, LossWeights::default().unmatched_head);

    let model = ModelConfig::compact();
    let synth = SynthConfig {
        image_size: model.input_size,
        rng_seed: seed,
        ..Default::default()
    };
    let dataset = generate_dataset(&synth, 0..scenes);
    let data = prepare_scenes(&dataset, &model)?;
    let mut config = TrainConfig {
        max_lr,
        batch_size: batch,
        epochs: steps.div_ceil(data.len().div_ceil(batch)),
        max_steps: Some(steps),
        seed,
        ..Default::default()
    };
    config.loss_weights.unmatched_head = unmatched_head;
    let mut trainer = Trainer::new(model, config)?;
    let start = Instant::now();
    let mut on_row = |row: &gazetarget::harness::LogRow| {
        if row.step % 50 == 0 || row.step == 1 {
            println!(
                "step {:5}  total {:.5}  l_h {:.5}  l_g {:.5}  l_c {:.5}  l_det {:.5}  l_o {:.4}  lr {:.2e}  {:.0}s",
                row.step,
                row.total,
                row.l_h,
                row.l_g,
                row.l_c,
                row.l_det,
                row.l_o,
                row.lr,
                start.elapsed().as_secs_f64()
            );
        }
    };
    trainer.run(&data, None, &mut on_row, &mut |_, _| Ok(()))?;
    let predictions = predict(&trainer.model, &dataset)?;
    let report = evaluate_scenes(&predictions, &MetricOptions::default())?;
    println!("{report}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        trainer.checkpoint().save(&dir.join("checkpoint.json"))?;
        let lines: Vec<String> = predictions
            .iter()
            .map(|p| serde_json::to_string(p).expect("serializable"))
            .collect();
        std::fs::write(dir.join("predictions.jsonl"), lines.join("\n") + "\n")?;
        println!("saved to {}", dir.display());
    }
    Ok(())
}
