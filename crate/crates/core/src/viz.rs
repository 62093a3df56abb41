//! Static PNG panels: the scene with the decoded instance, then its head,
//! gaze and connection maps blended over a dimmed copy of the scene.

use image::{Rgb, RgbImage};

use crate::data::SceneImage;
use crate::heatmap::Heatmap;
use crate::model::ProposalSet;
use crate::postprocess::InstancePrediction;

const BOX_COLOR: Rgb<u8> = Rgb([40, 230, 60]);
const GAZE_COLOR: Rgb<u8> = Rgb([235, 30, 30]);
const GAP: u32 = 4;

/// Blue-to-red ramp through green and yellow for values in `[0, 1]`.
pub fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let stops: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.5],
        [0.0, 0.4, 1.0],
        [0.1, 0.9, 0.3],
        [1.0, 0.9, 0.0],
        [0.9, 0.05, 0.0],
    ];
    let pos = v * (stops.len() - 1) as f64;
    let i = (pos.floor() as usize).min(stops.len() - 2);
    let t = pos - i as f64;
    let mix = |k: usize| ((stops[i][k] * (1.0 - t) + stops[i + 1][k] * t) * 255.0).round() as u8;
    [mix(0), mix(1), mix(2)]
}

fn upscale(image: &SceneImage, size: u32) -> RgbImage {
    let src = image.to_rgb8();
    image::imageops::resize(&src, size, size, image::imageops::FilterType::Nearest)
}

fn overlay(base: &RgbImage, map: &Heatmap) -> RgbImage {
    let (w, h) = base.dimensions();
    let (mw, mh) = map.size();
    RgbImage::from_fn(w, h, |x, y| {
        let v = map.get(
            (x as usize * mw / w as usize).min(mw - 1),
            (y as usize * mh / h as usize).min(mh - 1),
        );
        let c = heat_color(v);
        let g = base.get_pixel(x, y).0.iter().map(|&p| p as f64).sum::<f64>() / 3.0 * 0.35;
        let a = 0.25 + 0.75 * v.clamp(0.0, 1.0);
        Rgb([0, 1, 2].map(|k| (g * (1.0 - a) + c[k] as f64 * a).round() as u8))
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(img, (x0 + (x1 - x0) * t).round() as i64, (y0 + (y1 - y0) * t).round() as i64, c);
    }
}

fn annotate(img: &mut RgbImage, inst: &InstancePrediction) {
    let s = img.width() as f64;
    let b = &inst.head_box;
    let (x0, y0, x1, y1) = (b.x0 * s, b.y0 * s, b.x1 * s - 1.0, b.y1 * s - 1.0);
    for (a, z) in [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))] {
        line(img, a, z, BOX_COLOR);
    }
    if inst.oof_prob < 0.5 {
        let c = b.center();
        let (gx, gy) = (inst.gaze_point.x * s, inst.gaze_point.y * s);
        line(img, (c.x * s, c.y * s), (gx, gy), GAZE_COLOR);
        for d in -3i64..=3 {
            put(img, gx as i64 + d, gy as i64, GAZE_COLOR);
            put(img, gx as i64, gy as i64 + d, GAZE_COLOR);
        }
    }
}

/// Four side-by-side panels for one decoded instance, each `size` pixels square.
pub fn instance_panel(image: &SceneImage, proposals: &ProposalSet, inst: &InstancePrediction, size: u32) -> RgbImage {
    let base = upscale(image, size);
    let mut scene = base.clone();
    annotate(&mut scene, inst);
    let k = inst.proposal;
    let panels = [
        scene,
        overlay(&base, &proposals.head_maps[k]),
        overlay(&base, &proposals.gaze_maps[k]),
        overlay(&base, &proposals.connection_maps[k]),
    ];
    let mut out = RgbImage::from_pixel(4 * size + 3 * GAP, size, Rgb([255, 255, 255]));
    for (i, p) in panels.iter().enumerate() {
        image::imageops::replace(&mut out, p, (i as u32 * (size + GAP)) as i64, 0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, Point};

    #[test]
    fn ramp_endpoints() {
        assert_eq!(heat_color(0.0), [0, 0, 128]);
        assert_eq!(heat_color(1.0), [230, 13, 0]);
        assert_eq!(heat_color(7.0), heat_color(1.0));
    }

    #[test]
    fn panel_layout() {
        let n = 2;
        let set = ProposalSet {
            head_maps: vec![Heatmap::zeros(16, 16); n],
            gaze_maps: vec![Heatmap::filled(16, 16, 1.0); n],
            connection_maps: vec![Heatmap::zeros(16, 16); n],
            oof_logits: vec![-3.0; n],
        };
        let inst = InstancePrediction {
            proposal: 1,
            head_box: BBox::around(Point::new(0.3, 0.3), 0.1),
            gaze_point: Point::new(0.8, 0.8),
            oof_prob: 0.05,
            confidence: 0.9,
            gaze_map: Heatmap::zeros(16, 16),
        };
        let img = instance_panel(&SceneImage::zeros(32, 32), &set, &inst, 64);
        assert_eq!(img.dimensions(), (4 * 64 + 3 * GAP, 64));
        // The gaze panel is saturated everywhere.
        assert_eq!(img.get_pixel(2 * (64 + GAP) + 5, 5).0, heat_color(1.0));
    }
}
