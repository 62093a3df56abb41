//! Builds the training targets of one synthetic scene and saves each map as a
//! grayscale PNG next to the scene image.
//!
//! ```text
//! cargo run --example ground_truth_maps -- [out_dir]
//! ```

use std::path::PathBuf;

use gazetarget::data::{generate_scene, scene_rng, SynthConfig};
use gazetarget::gtgen::{make_ground_truth, GtConfig};
use gazetarget::Heatmap;
use image::GrayImage;

fn save(map: &Heatmap, path: &std::path::Path) -> Result<(), image::ImageError> {
    let (w, h) = map.size();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(map.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
    .save(path)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gt_maps".into()));
    std::fs::create_dir_all(&out)?;
    let config = SynthConfig {
        max_people: 3,
        ..Default::default()
    };
    let scene = generate_scene(&mut scene_rng(3, 0), &config);
    scene.image.save_png(&out.join("scene.png"))?;

    let gt = make_ground_truth(&scene.annotations, &GtConfig::default())?;
    save(&gt.detection_map, &out.join("detection.png"))?;
    for k in 0..gt.len() {
        save(&gt.head_maps[k], &out.join(format!("head_{k}.png")))?;
        save(&gt.gaze_maps[k], &out.join(format!("gaze_{k}.png")))?;
        save(&gt.connection_maps[k], &out.join(format!("connection_{k}.png")))?;
        let a = &scene.annotations[k];
        match a.gaze_point {
            Some(g) => println!("person {k}: head {:?} looks at ({:.3}, {:.3})", a.head_box.center(), g.x, g.y),
            None => println!("person {k}: head {:?} looks out of frame", a.head_box.center()),
        }
    }
    println!("wrote {} instance map sets to {}", gt.len(), out.display());
    Ok(())
}
