//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test --release --test acceptance`, or a subset
//! by number: `cargo test --release --test acceptance -- 1 2 7`.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gazetarget::data::{generate_dataset, SceneSample, SynthConfig};
use gazetarget::harness::{evaluate, prepare_scenes, write_loss_csv, Checkpoint, LogRow, TrainConfig, Trainer};
use gazetarget::losses::{detection_mse, heatmap_mse, oof_bce};
use gazetarget::matching::{hungarian, CostMatrix};
use gazetarget::metrics::{auc_score, evaluate_scenes, oracle_predictions, MetricOptions, MetricReport, ScenePredictions};
use gazetarget::model::ModelConfig;
use gazetarget::{Heatmap, Point};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() <= limit
}

fn oracle_metrics() -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig {
        p_out_of_frame: 0.3,
        rng_seed: 17,
        ..Default::default()
    };
    let scenes: Vec<ScenePredictions> = generate_dataset(&synth, 0..300)
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
    let r = match evaluate_scenes(&scenes, &MetricOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let pass = r.map_instance == Some(1.0)
        && r.avg_dist == Some(0.0)
        && r.min_dist == Some(0.0)
        && r.auc == Some(1.0)
        && r.oof_ap == Some(1.0)
        && within(start, Duration::from_secs(60));
    outcome(pass, format!("{} ({:.1}s)", brief(&r), start.elapsed().as_secs_f64()))
}

fn brute_force_min(cost: &CostMatrix) -> f64 {
    // Assign every row of the smaller side; recurse over unused columns.
    fn go(c: &dyn Fn(usize, usize) -> f64, r: usize, rows: usize, cols: usize, used: &mut Vec<bool>) -> f64 {
        if r == rows {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cols {
            if !used[j] {
                used[j] = true;
                best = best.min(c(r, j) + go(c, r + 1, rows, cols, used));
                used[j] = false;
            }
        }
        best
    }
    let (rows, cols) = (cost.rows(), cost.cols());
    if rows <= cols {
        go(&|r, c| cost.get(r, c), 0, rows, cols, &mut vec![false; cols])
    } else {
        go(&|r, c| cost.get(c, r), 0, cols, rows, &mut vec![false; rows])
    }
}

fn hungarian_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (rows, cols) = (rng.gen_range(1..=7), rng.gen_range(1..=7));
        // Multiples of 1/16 keep every partial sum exact.
        let values = (0..rows * cols).map(|_| rng.gen_range(0..160) as f64 / 16.0).collect();
        let c = CostMatrix::new(rows, cols, values).unwrap();
        if hungarian(&c).unwrap().total_cost != brute_force_min(&c) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0 && within(start, Duration::from_secs(60));
    outcome(pass, format!("{mismatches} mismatches in 1000 ({:.1}s)", start.elapsed().as_secs_f64()))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in 0..5 {
        for g in common::gradient_check(seed, 1e-3, ModelConfig::tiny()) {
            if !(g.rel_error <= worst.0) {
                worst = (g.rel_error, format!("seed {seed} {}", g.name));
            }
        }
    }
    let pass = worst.0 < 1e-2 && within(start, Duration::from_secs(300));
    outcome(
        pass,
        format!("max rel error {:.2e} at {} ({:.1}s)", worst.0, worst.1, start.elapsed().as_secs_f64()),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (w, h, k) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..5));
        let mut random_map = || Heatmap::from_fn(w, h, |_, _| rng.gen::<f64>());
        let preds: Vec<Heatmap> = (0..k).map(|_| random_map()).collect();
        let gts: Vec<Heatmap> = (0..k).map(|_| random_map()).collect();

        let mut expect = 0.0;
        for (p, g) in preds.iter().zip(&gts) {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    s += (g.get(x, y) - p.get(x, y)) * (g.get(x, y) - p.get(x, y));
                }
            }
            expect += s / (w * h) as f64;
        }
        expect /= k as f64;
        let got = heatmap_mse(&preds.iter().collect::<Vec<_>>(), &gts.iter().collect::<Vec<_>>()).unwrap();
        worst = worst.max(rel(got, expect));

        let mut det = 0.0;
        for y in 0..h {
            for x in 0..w {
                det += (gts[0].get(x, y) - preds[0].get(x, y)).powi(2);
            }
        }
        worst = worst.max(rel(detection_mse(&preds[0], &gts[0]).unwrap(), det / (w * h) as f64));

        let n = rng.gen_range(1..12);
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let bce = probs
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| {
                let o = if y { 1.0 } else { 0.0 };
                -(o * p.ln() + (1.0 - o) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n as f64;
        worst = worst.max(rel(oof_bce(&probs, &labels).unwrap(), bce));
    }
    outcome(worst < 1e-10, format!("max rel error {worst:.2e} over 100 inputs"))
}

fn brief(r: &MetricReport) -> String {
    let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
    format!(
        "mAP {} AUC {} avg {} min {} AP {}",
        f(r.map_instance),
        f(r.auc),
        f(r.avg_dist),
        f(r.min_dist),
        f(r.oof_ap)
    )
}

fn synth_for(model: &ModelConfig, seed: u64) -> SynthConfig {
    SynthConfig {
        image_size: model.input_size,
        rng_seed: seed,
        ..Default::default()
    }
}

fn train_model(model: ModelConfig, config: TrainConfig, scenes: &[SceneSample]) -> Trainer {
    let data = prepare_scenes(scenes, &model).unwrap();
    let mut trainer = Trainer::new(model, config).unwrap();
    trainer.run(&data, None, &mut |_| {}, &mut |_, _| Ok(())).unwrap();
    trainer
}

/// Desk-scale overfit schedule shared by the overfit criterion and the example.
fn overfit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_lr: 2e-3,
        batch_size: 4,
        epochs: 125,
        max_steps: Some(2000),
        seed,
        ..Default::default()
    }
}

fn synthetic_overfit() -> Outcome {
    let start = Instant::now();
    let model = ModelConfig::compact();
    let mut passes = 0;
    let mut details = Vec::new();
    for (i, seed) in [1u64, 2, 3].into_iter().enumerate() {
        if passes >= 2 || passes + (3 - i) < 2 {
            break;
        }
        let run = Instant::now();
        let scenes = generate_dataset(&synth_for(&model, seed), 0..64);
        let trainer = train_model(model.clone(), overfit_config(seed), &scenes);
        let r = evaluate(&trainer.model, &scenes, &MetricOptions::default()).unwrap();
        let ok = r.map_instance.unwrap_or(0.0) >= 0.90
            && r.avg_dist.map_or(false, |d| d <= 0.05)
            && r.oof_ap.unwrap_or(0.0) >= 0.95
            && run.elapsed() <= Duration::from_secs(30 * 60);
        passes += ok as usize;
        details.push(format!(
            "seed {seed} {} [{}] {:.0}s",
            if ok { "ok" } else { "miss" },
            brief(&r),
            run.elapsed().as_secs_f64()
        ));
    }
    outcome(
        passes >= 2,
        format!("{passes} seeds passed; {} ({:.0}s)", details.join("; "), start.elapsed().as_secs_f64()),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let base = ModelConfig::compact();
    let train_set = generate_dataset(&synth_for(&base, 500), 0..512);
    let test_set = generate_dataset(&synth_for(&base, 501), 0..128);
    let variants: [(&str, bool, f64); 3] = [("full", true, 1.0), ("no-C", true, 0.0), ("baseline", false, 0.0)];
    let mut maps = vec![Vec::new(); 3];
    for seed in [11u64, 12, 13] {
        for (v, &(_, reinject, connection)) in variants.iter().enumerate() {
            let model = ModelConfig {
                reinject_head: reinject,
                ..base.clone()
            };
            let mut config = TrainConfig {
                max_lr: 2e-3,
                batch_size: 8,
                epochs: 20,
                max_steps: Some(ABLATION_STEPS),
                seed,
                ..Default::default()
            };
            config.loss_weights.connection = connection;
            let trainer = train_model(model, config, &train_set);
            let r = evaluate(&trainer.model, &test_set, &MetricOptions::default()).unwrap();
            maps[v].push(r.map_instance.unwrap_or(0.0));
        }
    }
    let med: Vec<f64> = maps.iter().map(|m| median(m.clone())).collect();
    let pass = med[0] >= med[1] - 0.02 && med[0] > med[2] && within(start, Duration::from_secs(3 * 3600));
    let detail = variants
        .iter()
        .zip(&maps)
        .map(|((name, _, _), m)| format!("{name} {m:.3?}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        pass,
        format!(
            "median full {:.3} no-C {:.3} baseline {:.3}; {detail} ({:.0}s)",
            med[0],
            med[1],
            med[2],
            start.elapsed().as_secs_f64()
        ),
    )
}

const ABLATION_STEPS: usize = 1500;

fn auc_statistics() -> Outcome {
    let gt = [Point::new(0.3, 0.6)];
    let constant = auc_score(&Heatmap::filled(64, 64, 0.42), &gt, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 10_000;
    let mut sum = 0.0;
    for _ in 0..trials {
        let map = Heatmap::from_fn(64, 64, |_, _| rng.gen::<f64>());
        let gt = [Point::new(rng.gen(), rng.gen())];
        sum += auc_score(&map, &gt, 0).unwrap();
    }
    let mean = sum / trials as f64;
    outcome(
        constant == 0.5 && (mean - 0.5).abs() <= 0.02,
        format!("constant {constant}, random mean {mean:.4} over {trials}"),
    )
}

fn determinism() -> Outcome {
    let model = ModelConfig::compact();
    let scenes = generate_dataset(&synth_for(&model, 8), 0..8);
    let data = prepare_scenes(&scenes, &model).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 8,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = |until: Option<usize>| -> (Vec<LogRow>, Vec<Checkpoint>) {
        let mut t = Trainer::new(model.clone(), config.clone()).unwrap();
        let mut ckpts = Vec::new();
        let rows = t
            .run(&data, until, &mut |_| {}, &mut |_, c| {
                ckpts.push(c.clone());
                Ok(())
            })
            .unwrap();
        (rows, ckpts)
    };
    let (a, ckpts) = run(None);
    let (b, _) = run(None);
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_loss_csv(&pa, &a).unwrap();
    write_loss_csv(&pb, &b).unwrap();
    let identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();

    // Resume from the epoch-1 checkpoint after a disk round trip.
    let path = dir.path().join("epoch1.json");
    ckpts[0].save(&path).unwrap();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let tail = resumed.run(&data, None, &mut |_| {}, &mut |_, _| Ok(())).unwrap();
    let head = &a[..ckpts[0].step];
    let joined: Vec<&LogRow> = head.iter().chain(&tail).collect();
    let mut max_dev = 0.0f64;
    for (x, y) in joined.iter().zip(&a) {
        for (u, v) in [(x.l_h, y.l_h), (x.l_g, y.l_g), (x.l_c, y.l_c), (x.l_det, y.l_det), (x.l_o, y.l_o), (x.total, y.total)] {
            max_dev = max_dev.max((u - v).abs());
        }
    }
    let pass = identical && joined.len() == a.len() && max_dev <= 1e-6;
    outcome(
        pass,
        format!("csv identical: {identical}; resume max deviation {max_dev:.1e} over {} steps", a.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "oracle-metric sanity", oracle_metrics),
        (2, "Hungarian vs exhaustive search", hungarian_oracle),
        (3, "gradient check (tiny, step 1e-3, 5 seeds)", gradient_check),
        (4, "loss formula oracles", loss_oracles),
        (5, "synthetic overfit (compact, 64 scenes)", synthetic_overfit),
        (6, "component ablation direction", ablation),
        (7, "AUC statistical checks", auc_statistics),
        (8, "determinism and resume", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let r = check();
        println!("{} criterion {id}: {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += (!r.pass) as usize;
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
