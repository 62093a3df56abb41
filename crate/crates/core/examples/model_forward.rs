//! Builds each backbone preset and runs one forward pass, printing parameter
//! counts and output shapes.
//!
//! ```text
//! cargo run --release --example model_forward
//! ```

use std::time::Instant;

use gazetarget::data::{generate_scene, scene_rng, SynthConfig};
use gazetarget::model::{BackbonePreset, Model, ModelConfig};

fn main() -> gazetarget::Result<()> {
    for preset in [BackbonePreset::Tiny, BackbonePreset::Compact, BackbonePreset::Standard] {
        let config = ModelConfig::preset(preset);
        let scene = generate_scene(
            &mut scene_rng(0, 0),
            &SynthConfig {
                image_size: config.input_size,
                ..Default::default()
            },
        );
        let model = Model::<f32>::new(config.clone(), 0)?;
        let start = Instant::now();
        let (features, proposals) = model.forward(&scene.image)?;
        println!(
            "{preset:?}: {} parameters, input {}px, f_prop {:?}, {} proposals of {:?}, forward {:.0} ms",
            model.num_parameters(),
            config.input_size,
            features.f_prop.shape(),
            proposals.len(),
            proposals.head_maps[0].size(),
            start.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(())
}
