//! JSON-lines annotation files: one record per head-target instance,
//! `{"image_path": .., "head_box": [x0,y0,x1,y1], "gaze": [x,y] | null, "out_of_frame": bool}`,
//! all coordinates normalized to `[0, 1]`. A gaze of `[-1, -1]` marks an
//! out-of-frame target.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SceneImage, SceneSample};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};
use crate::gtgen::Annotation;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    image_path: String,
    head_box: [f64; 4],
    gaze: Option<[f64; 2]>,
    #[serde(default)]
    out_of_frame: bool,
}

/// A scene whose image is read on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRef {
    /// Image path as written in the annotation file.
    pub image_path: String,
    /// `image_path` resolved against the annotation file's directory.
    pub resolved_path: PathBuf,
    pub annotations: Vec<Annotation>,
}

impl SceneRef {
    pub fn load(&self, input_size: usize) -> Result<SceneSample> {
        Ok(SceneSample {
            scene_id: self.image_path.clone(),
            image: SceneImage::load(&self.resolved_path, input_size)?,
            annotations: self.annotations.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep every `stride`-th distinct image in file order.
    pub stride: usize,
    /// Skip scenes whose image file does not exist (with a warning).
    pub require_images: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            stride: 1,
            require_images: true,
        }
    }
}

fn is_sentinel(g: [f64; 2]) -> bool {
    g[0] < 0.0 && g[1] < 0.0
}

fn parse_record(line: &str) -> std::result::Result<(String, Annotation), String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let head_box = BBox::from(rec.head_box);
    if head_box.x0 < -1e-3 || head_box.y0 < -1e-3 || head_box.x1 > 1.001 || head_box.y1 > 1.001 {
        return Err(format!("head box {:?} is not normalized", rec.head_box));
    }
    let head_box = head_box.clamp_unit();
    let ann = match rec.gaze {
        Some(g) if !rec.out_of_frame && !is_sentinel(g) => {
            Annotation::in_frame(head_box, Point::new(g[0], g[1]))
        }
        _ => Annotation::out_of_frame(head_box),
    };
    ann.validate().map_err(|e| e.to_string())?;
    Ok((rec.image_path, ann))
}

/// Reads an annotation file, merging rows that share an image path.
pub fn load_annotations(path: &Path, options: LoadOptions) -> Result<Vec<SceneRef>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut scenes: Vec<SceneRef> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (image_path, ann) = parse_record(&line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        })?;
        let slot = *index.entry(image_path.clone()).or_insert_with(|| {
            scenes.push(SceneRef {
                resolved_path: base.join(&image_path),
                image_path,
                annotations: Vec::new(),
            });
            scenes.len() - 1
        });
        scenes[slot].annotations.push(ann);
    }

    let stride = options.stride.max(1);
    Ok(scenes
        .into_iter()
        .step_by(stride)
        .filter(|s| {
            let ok = !options.require_images || s.resolved_path.is_file();
            if !ok {
                log::warn!("skipping {}: image not found", s.resolved_path.display());
            }
            ok
        })
        .collect())
}

/// Writes scenes in the JSON-lines normal form.
pub fn write_annotations(path: &Path, scenes: &[SceneRef]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for scene in scenes {
        for ann in &scene.annotations {
            let rec = Record {
                image_path: scene.image_path.clone(),
                head_box: ann.head_box.into(),
                gaze: ann.gaze_point.map(|p| [p.x, p.y]),
                out_of_frame: ann.out_of_frame,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}
