//! Converters from public gaze-following annotation layouts to the JSON-lines
//! normal form.

use std::path::{Path, PathBuf};

use super::SceneRef;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};
use crate::gtgen::Annotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    /// Comma-separated rows: `path,idx,body x,y,w,h,eye x,y,gaze x,y,head x0,y0,x1,y1[,inout,...]`,
    /// gaze normalized and head box in pixels.
    GazeFollow,
    /// Per-person files of `frame,x0,y0,x1,y1,gaze_x,gaze_y` in pixels, `-1,-1` for out-of-frame.
    VideoAttentionTarget,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gazefollow" => Ok(SourceFormat::GazeFollow),
            "videoattentiontarget" | "vat" => Ok(SourceFormat::VideoAttentionTarget),
            other => Err(Error::invalid(format!("unknown annotation format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvertOptions {
    pub format: SourceFormat,
    /// Directory the per-row image paths are relative to.
    pub image_root: PathBuf,
    /// Used when an image cannot be opened to read its dimensions.
    pub fallback_size: Option<(u32, u32)>,
    /// Keep one frame in `stride` (per input file).
    pub stride: usize,
}

fn image_dims(opts: &ConvertOptions, rel: &str) -> Option<(f64, f64)> {
    let full = opts.image_root.join(rel);
    match ::image::image_dimensions(&full) {
        Ok((w, h)) => Some((w as f64, h as f64)),
        Err(_) => {
            if opts.fallback_size.is_none() {
                log::warn!("skipping {}: cannot read image size", full.display());
            }
            opts.fallback_size.map(|(w, h)| (w as f64, h as f64))
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn num(path: &Path, line: usize, fields: &[&str], i: usize) -> Result<f64> {
    fields
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column {i}")))?
        .trim()
        .parse::<f64>()
        .map_err(|e| parse_err(path, line, format!("column {i}: {e}")))
}

fn push(scenes: &mut Vec<SceneRef>, opts: &ConvertOptions, rel: &str, ann: Annotation) {
    let image_path = opts.image_root.join(rel).to_string_lossy().into_owned();
    match scenes.iter_mut().find(|s| s.image_path == image_path) {
        Some(s) => s.annotations.push(ann),
        None => scenes.push(SceneRef {
            resolved_path: PathBuf::from(&image_path),
            image_path,
            annotations: vec![ann],
        }),
    }
}

fn pixel_box(x0: f64, y0: f64, x1: f64, y1: f64, w: f64, h: f64) -> Option<BBox> {
    let b = BBox::new(x0 / w, y0 / h, x1 / w, y1 / h).clamp_unit();
    (b.width() > 0.0 && b.height() > 0.0).then_some(b)
}

/// Converts one or more source files into scenes in the normal form.
pub fn convert(inputs: &[PathBuf], opts: &ConvertOptions) -> Result<Vec<SceneRef>> {
    let mut scenes = Vec::new();
    for input in inputs {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(input)?;
        let stride = match opts.format {
            SourceFormat::VideoAttentionTarget => opts.stride.max(1),
            SourceFormat::GazeFollow => 1,
        };
        let rows = reader
            .records()
            .filter(|r| r.as_ref().map_or(true, |r| r.iter().any(|f| !f.is_empty())))
            .step_by(stride);
        for row in rows {
            let row = row?;
            let lineno = row.position().map_or(0, |p| p.line() as usize);
            let f: Vec<&str> = row.iter().collect();
            match opts.format {
                SourceFormat::GazeFollow => {
                    // header rows start with a non-numeric idx column
                    if f.get(1).map_or(true, |s| s.trim().parse::<f64>().is_err()) {
                        continue;
                    }
                    let rel = f[0].trim();
                    let Some((w, h)) = image_dims(opts, rel) else { continue };
                    let (gx, gy) = (num(input, lineno, &f, 8)?, num(input, lineno, &f, 9)?);
                    let bx: Vec<f64> = (10..14)
                        .map(|c| num(input, lineno, &f, c))
                        .collect::<Result<_>>()?;
                    let inout = f.get(14).and_then(|s| s.trim().parse::<f64>().ok());
                    let Some(head_box) = pixel_box(bx[0], bx[1], bx[2], bx[3], w, h) else {
                        log::warn!("{}:{lineno}: degenerate head box, skipped", input.display());
                        continue;
                    };
                    let gaze = Point::new(gx, gy);
                    let ann = if inout == Some(0.0) || !gaze.in_unit_square() {
                        Annotation::out_of_frame(head_box)
                    } else {
                        Annotation::in_frame(head_box, gaze)
                    };
                    push(&mut scenes, opts, rel, ann);
                }
                SourceFormat::VideoAttentionTarget => {
                    let rel = f[0].trim();
                    let Some((w, h)) = image_dims(opts, rel) else { continue };
                    let v: Vec<f64> = (1..7)
                        .map(|c| num(input, lineno, &f, c))
                        .collect::<Result<_>>()?;
                    let Some(head_box) = pixel_box(v[0], v[1], v[2], v[3], w, h) else {
                        log::warn!("{}:{lineno}: degenerate head box, skipped", input.display());
                        continue;
                    };
                    let ann = if v[4] < 0.0 && v[5] < 0.0 {
                        Annotation::out_of_frame(head_box)
                    } else {
                        let g = Point::new((v[4] / w).clamp(0.0, 1.0), (v[5] / h).clamp(0.0, 1.0));
                        Annotation::in_frame(head_box, g)
                    };
                    push(&mut scenes, opts, rel, ann);
                }
            }
        }
    }
    Ok(scenes)
}
