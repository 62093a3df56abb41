//! Procedural scenes: disc "heads" whose dark notch points at a colored
//! square target, or at nothing when the person looks out of frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SceneImage, SceneSample};
use crate::geometry::{BBox, Point};
use crate::gtgen::Annotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub max_people: usize,
    pub p_out_of_frame: f64,
    /// Inclusive range of target squares per scene.
    pub object_count_range: (usize, usize),
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 128,
            max_people: 2,
            p_out_of_frame: 0.2,
            object_count_range: (1, 3),
            rng_seed: 0,
        }
    }
}

// Geometry in normalized units.
const HEAD_RADIUS: f64 = 0.06;
const NOTCH_OFFSET: f64 = 0.55 * HEAD_RADIUS;
const NOTCH_RADIUS: f64 = 0.4 * HEAD_RADIUS;
const TARGET_HALF: f64 = 0.04;
const MIN_GAZE_LENGTH: f64 = 0.2;
const CLEARANCE: f64 = 0.015;
const MAX_ATTEMPTS: usize = 200;

const TARGET_COLORS: [[u8; 3]; 5] = [
    [25, 75, 230],
    [25, 190, 50],
    [215, 40, 40],
    [230, 205, 25],
    [150, 50, 205],
];
const NOTCH_COLOR: [u8; 3] = [12, 12, 12];

#[derive(Debug, Clone, PartialEq)]
pub struct PersonLayout {
    pub head_center: Point,
    pub head_radius: f64,
    pub notch_center: Point,
    /// Index into `SceneLayout::targets`, `None` when looking out of frame.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub targets: Vec<Point>,
    pub target_half: f64,
    pub people: Vec<PersonLayout>,
}

/// Independent stream for scene `index` under `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_scene<R: Rng>(rng: &mut R, config: &SynthConfig) -> SceneSample {
    generate_scene_with_layout(rng, config).0
}

/// Scenes `range` of the dataset defined by `config.rng_seed`.
pub fn generate_dataset(config: &SynthConfig, range: std::ops::Range<u64>) -> Vec<SceneSample> {
    range
        .map(|i| {
            let mut rng = scene_rng(config.rng_seed, i);
            let mut s = generate_scene(&mut rng, config);
            s.scene_id = format!("synth-{}-{i:06}", config.rng_seed);
            s
        })
        .collect()
}

pub fn generate_scene_with_layout<R: Rng>(
    rng: &mut R,
    config: &SynthConfig,
) -> (SceneSample, SceneLayout) {
    let people = if config.max_people == 0 {
        0
    } else {
        rng.gen_range(1..=config.max_people)
    };
    let (lo, hi) = config.object_count_range;
    let n_targets = if hi <= lo { lo } else { rng.gen_range(lo..=hi) }.max(usize::from(people > 0));

    let layout = loop {
        if let Some(layout) = try_layout(rng, people, n_targets, config.p_out_of_frame) {
            break layout;
        }
    };
    let image = render(rng, &layout, config.image_size);
    let annotations = layout
        .people
        .iter()
        .map(|p| {
            let head_box = BBox::around(p.head_center, p.head_radius).clamp_unit();
            match p.target {
                Some(t) => Annotation::in_frame(head_box, layout.targets[t]),
                None => Annotation::out_of_frame(head_box),
            }
        })
        .collect();
    let sample = SceneSample {
        scene_id: String::from("synth"),
        image,
        annotations,
    };
    (sample, layout)
}

fn try_layout<R: Rng>(rng: &mut R, people: usize, n_targets: usize, p_oof: f64) -> Option<SceneLayout> {
    let mut targets: Vec<Point> = Vec::with_capacity(n_targets);
    for _ in 0..n_targets {
        let placed = (0..MAX_ATTEMPTS).find_map(|_| {
            let lo = TARGET_HALF + 0.02;
            let p = Point::new(rng.gen_range(lo..1.0 - lo), rng.gen_range(lo..1.0 - lo));
            let clear = targets
                .iter()
                .all(|t| (t.x - p.x).abs().max((t.y - p.y).abs()) > 2.0 * TARGET_HALF + 2.0 * CLEARANCE);
            clear.then_some(p)
        })?;
        targets.push(placed);
    }

    let mut layout = SceneLayout {
        targets,
        target_half: TARGET_HALF,
        people: Vec::with_capacity(people),
    };
    for _ in 0..people {
        let out_of_frame = rng.gen_bool(p_oof.clamp(0.0, 1.0));
        let person = (0..MAX_ATTEMPTS).find_map(|_| place_person(rng, &layout, out_of_frame))?;
        layout.people.push(person);
    }
    Some(layout)
}

fn place_person<R: Rng>(rng: &mut R, layout: &SceneLayout, out_of_frame: bool) -> Option<PersonLayout> {
    let lo = HEAD_RADIUS + 0.02;
    let center = Point::new(rng.gen_range(lo..1.0 - lo), rng.gen_range(lo..1.0 - lo));
    let target_clear = layout.targets.iter().all(|t| {
        let dx = ((center.x - t.x).abs() - TARGET_HALF).max(0.0);
        let dy = ((center.y - t.y).abs() - TARGET_HALF).max(0.0);
        dx.hypot(dy) > HEAD_RADIUS + CLEARANCE
    });
    let head_clear = layout
        .people
        .iter()
        .all(|p| p.head_center.distance(&center) > 3.0 * HEAD_RADIUS);
    if !target_clear || !head_clear {
        return None;
    }

    let (dir, target) = if out_of_frame {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let dir = (angle.cos(), angle.sin());
        let blocked = layout
            .targets
            .iter()
            .any(|t| ray_hits_square(center, dir, *t, TARGET_HALF + CLEARANCE).is_some());
        if blocked {
            return None;
        }
        (dir, None)
    } else {
        let candidates: Vec<usize> = (0..layout.targets.len())
            .filter(|&i| {
                let t = layout.targets[i];
                let len = center.distance(&t);
                if len < MIN_GAZE_LENGTH {
                    return false;
                }
                let dir = ((t.x - center.x) / len, (t.y - center.y) / len);
                let own_entry = ray_hits_square(center, dir, t, TARGET_HALF).unwrap_or(len);
                layout.targets.iter().enumerate().all(|(j, o)| {
                    j == i
                        || ray_hits_square(center, dir, *o, TARGET_HALF + CLEARANCE)
                            .map_or(true, |d| d > own_entry + TARGET_HALF)
                })
            })
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let i = candidates[rng.gen_range(0..candidates.len())];
        let t = layout.targets[i];
        let len = center.distance(&t);
        (((t.x - center.x) / len, (t.y - center.y) / len), Some(i))
    };

    Some(PersonLayout {
        head_center: center,
        head_radius: HEAD_RADIUS,
        notch_center: Point::new(center.x + NOTCH_OFFSET * dir.0, center.y + NOTCH_OFFSET * dir.1),
        target,
    })
}

/// Entry distance of the ray `origin + t * dir` (t >= 0) into the axis-aligned
/// square of half-side `half` around `center`.
fn ray_hits_square(origin: Point, dir: (f64, f64), center: Point, half: f64) -> Option<f64> {
    let mut t_min = 0.0f64;
    let mut t_max = f64::INFINITY;
    for (o, d, c) in [(origin.x, dir.0, center.x), (origin.y, dir.1, center.y)] {
        let (lo, hi) = (c - half, c + half);
        if d.abs() < 1e-12 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let (a, b) = ((lo - o) / d, (hi - o) / d);
            t_min = t_min.max(a.min(b));
            t_max = t_max.min(a.max(b));
        }
    }
    (t_min <= t_max).then_some(t_min)
}

fn render<R: Rng>(rng: &mut R, layout: &SceneLayout, size: usize) -> SceneImage {
    let mut img = SceneImage::zeros(size, size);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(90.0..140.0));
    let tilt = (rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0));
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / s - 0.5, (y as f64 + 0.5) / s - 0.5);
            let shade = tilt.0 * u + tilt.1 * v;
            let px = base.map(|b| (b + shade).round().clamp(0.0, 255.0) as u8);
            img.set_rgb(x, y, px);
        }
    }

    let colors: Vec<[u8; 3]> = layout
        .targets
        .iter()
        .map(|_| TARGET_COLORS[rng.gen_range(0..TARGET_COLORS.len())])
        .collect();
    for (t, color) in layout.targets.iter().zip(&colors) {
        fill(&mut img, |p| {
            (p.x - t.x).abs() <= layout.target_half && (p.y - t.y).abs() <= layout.target_half
        }, *color);
    }
    for person in &layout.people {
        let tone = rng.gen_range(-20i32..20);
        let skin = [242, 205, 165].map(|c: i32| (c + tone).clamp(0, 255) as u8);
        fill(&mut img, |p| p.distance(&person.head_center) <= person.head_radius, skin);
        fill(&mut img, |p| p.distance(&person.notch_center) <= NOTCH_RADIUS, NOTCH_COLOR);
    }
    img
}

fn fill(img: &mut SceneImage, inside: impl Fn(&Point) -> bool, color: [u8; 3]) {
    let s = img.width() as f64;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = Point::new((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            if inside(&p) {
                img.set_rgb(x, y, color);
            }
        }
    }
}
