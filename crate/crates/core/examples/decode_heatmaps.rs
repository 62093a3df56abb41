//! Decoding heatmaps: Otsu threshold, head box from the strongest component,
//! and the gaze point at the map maximum.
//!
//! ```text
//! cargo run --example decode_heatmaps
//! ```

use gazetarget::gtgen::make_gaussian_map;
use gazetarget::postprocess::{extract_gaze_point, extract_head_box, otsu_threshold};
use gazetarget::{Heatmap, Point};

fn main() -> gazetarget::Result<()> {
    let strong = make_gaussian_map(Point::new(0.3, 0.4), 3.0, 64, 64)?;
    let weak = make_gaussian_map(Point::new(0.7, 0.7), 3.0, 64, 64)?;
    let head = Heatmap::from_fn(64, 64, |x, y| strong.get(x, y).max(0.3 * weak.get(x, y)));

    println!("otsu threshold: {:.4}", otsu_threshold(&head)?);
    match extract_head_box(&head) {
        Some(b) => println!("head box: ({:.3}, {:.3}) - ({:.3}, {:.3})", b.x0, b.y0, b.x1, b.y1),
        None => println!("no head found"),
    }
    println!("empty map gives {:?}", extract_head_box(&Heatmap::zeros(64, 64)));

    let gaze = make_gaussian_map(Point::new(0.82, 0.15), 3.0, 64, 64)?;
    let p = extract_gaze_point(&gaze);
    println!("gaze point: ({:.4}, {:.4})", p.x, p.y);
    Ok(())
}
