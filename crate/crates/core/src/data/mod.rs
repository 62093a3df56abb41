//! Scene sources: the procedural generator and JSON-lines annotation files.

mod annotations;
pub mod convert;
mod image;
mod synth;

pub use self::annotations::{load_annotations, write_annotations, LoadOptions, SceneRef};
pub use self::image::SceneImage;
pub use self::synth::{
    generate_dataset, generate_scene, generate_scene_with_layout, scene_rng, PersonLayout,
    SceneLayout, SynthConfig,
};

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Point};
use crate::gtgen::Annotation;

/// One image with its head-target annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub scene_id: String,
    pub image: SceneImage,
    pub annotations: Vec<Annotation>,
}

/// A person as scored during evaluation: several annotation rows that share a
/// head box (multi-annotator datasets) collapse into one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub head_box: BBox,
    pub gaze_points: Vec<Point>,
    pub out_of_frame: bool,
}

const SAME_BOX_EPS: f64 = 1e-6;

fn same_box(a: &BBox, b: &BBox) -> bool {
    (a.x0 - b.x0).abs() < SAME_BOX_EPS
        && (a.y0 - b.y0).abs() < SAME_BOX_EPS
        && (a.x1 - b.x1).abs() < SAME_BOX_EPS
        && (a.y1 - b.y1).abs() < SAME_BOX_EPS
}

/// Groups annotations by head box, keeping first-appearance order. An instance
/// is out-of-frame only when none of its rows carries an in-frame gaze point.
pub fn group_instances(annotations: &[Annotation]) -> Vec<EvalInstance> {
    let mut out: Vec<EvalInstance> = Vec::new();
    for ann in annotations {
        let slot = match out.iter().position(|i| same_box(&i.head_box, &ann.head_box)) {
            Some(i) => i,
            None => {
                out.push(EvalInstance {
                    head_box: ann.head_box,
                    gaze_points: Vec::new(),
                    out_of_frame: true,
                });
                out.len() - 1
            }
        };
        if let (Some(p), false) = (ann.gaze_point, ann.out_of_frame) {
            out[slot].gaze_points.push(p);
            out[slot].out_of_frame = false;
        }
    }
    out
}

/// One training annotation per person: the first in-frame row of each group,
/// or the out-of-frame row when the group has no gaze point.
pub fn training_annotations(annotations: &[Annotation]) -> Vec<Annotation> {
    group_instances(annotations)
        .into_iter()
        .map(|inst| match inst.gaze_points.first() {
            Some(&p) if !inst.out_of_frame => Annotation::in_frame(inst.head_box, p),
            _ => Annotation::out_of_frame(inst.head_box),
        })
        .collect()
}

impl SceneSample {
    pub fn instances(&self) -> Vec<EvalInstance> {
        group_instances(&self.annotations)
    }

    pub fn training_annotations(&self) -> Vec<Annotation> {
        training_annotations(&self.annotations)
    }
}
