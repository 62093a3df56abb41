//! Writes a small synthetic dataset (PNG images plus annotations.jsonl) and
//! reads it back through the annotation loader.
//!
//! ```text
//! cargo run --example generate_dataset -- [out_dir] [scenes]
//! ```

use std::path::PathBuf;

use gazetarget::data::{generate_dataset, load_annotations, write_annotations, LoadOptions, SceneRef, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    let scenes: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    std::fs::create_dir_all(out.join("images"))?;

    let config = SynthConfig {
        p_out_of_frame: 0.25,
        rng_seed: 42,
        ..Default::default()
    };
    let mut refs = Vec::new();
    for scene in generate_dataset(&config, 0..scenes) {
        let rel = format!("images/{}.png", scene.scene_id);
        scene.image.save_png(&out.join(&rel))?;
        refs.push(SceneRef {
            resolved_path: out.join(&rel),
            image_path: rel,
            annotations: scene.annotations,
        });
    }
    let ann_path = out.join("annotations.jsonl");
    write_annotations(&ann_path, &refs)?;

    let loaded = load_annotations(&ann_path, LoadOptions::default())?;
    let people: usize = loaded.iter().map(|s| s.annotations.len()).sum();
    let oof: usize = loaded
        .iter()
        .flat_map(|s| &s.annotations)
        .filter(|a| a.out_of_frame)
        .count();
    println!("{} scenes, {people} people, {oof} looking out of frame", loaded.len());
    println!("annotations: {}", ann_path.display());
    Ok(())
}
