//! Gaussian heatmap targets and head-to-target connection maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};
use crate::heatmap::{pixel_of, Heatmap};

/// One annotated person: a head box and, when the person looks inside the
/// frame, the point they look at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub head_box: BBox,
    pub gaze_point: Option<Point>,
    pub out_of_frame: bool,
}

impl Annotation {
    pub fn in_frame(head_box: BBox, gaze_point: Point) -> Self {
        Annotation {
            head_box,
            gaze_point: Some(gaze_point),
            out_of_frame: false,
        }
    }

    pub fn out_of_frame(head_box: BBox) -> Self {
        Annotation {
            head_box,
            gaze_point: None,
            out_of_frame: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.head_box.validate()?;
        match (self.gaze_point, self.out_of_frame) {
            (Some(p), false) => p.check_unit("gaze point"),
            (None, true) => Ok(()),
            (Some(_), true) => Err(Error::invalid("out-of-frame annotation carries a gaze point")),
            (None, false) => Err(Error::invalid("in-frame annotation without a gaze point")),
        }
    }
}

/// Target-generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtConfig {
    /// Gaussian standard deviation in heatmap pixels.
    pub sigma: f64,
    pub width: usize,
    pub height: usize,
    /// Samples along each head-to-target segment, endpoints included.
    pub connection_points: usize,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig {
            sigma: 3.0,
            width: 64,
            height: 64,
            connection_points: 50,
        }
    }
}

impl GtConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        GtConfig {
            width,
            height,
            ..Default::default()
        }
    }
}

/// Per-scene training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMaps {
    pub head_maps: Vec<Heatmap>,
    pub gaze_maps: Vec<Heatmap>,
    pub connection_maps: Vec<Heatmap>,
    pub detection_map: Heatmap,
    pub oof_labels: Vec<bool>,
}

impl GroundTruthMaps {
    /// Number of ground-truth instances (M).
    pub fn len(&self) -> usize {
        self.head_maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head_maps.is_empty()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn gaussian_at_pixel(cx: usize, cy: usize, sigma: f64, width: usize, height: usize) -> Heatmap {
    let denom = 2.0 * sigma * sigma;
    // separable: exp(-(dx^2+dy^2)/2s^2) = gx * gy
    let gx: Vec<f64> = (0..width)
        .map(|x| {
            let d = x as f64 - cx as f64;
            (-(d * d) / denom).exp()
        })
        .collect();
    let gy: Vec<f64> = (0..height)
        .map(|y| {
            let d = y as f64 - cy as f64;
            (-(d * d) / denom).exp()
        })
        .collect();
    Heatmap::from_fn(width, height, |x, y| gx[x] * gy[y])
}

/// Unnormalized Gaussian with peak 1.0 at the pixel containing `center`.
pub fn make_gaussian_map(center: Point, sigma: f64, width: usize, height: usize) -> Result<Heatmap> {
    center.check_unit("gaussian center")?;
    check_sigma(sigma)?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("heatmap size must be positive"));
    }
    let (cx, cy) = pixel_of(&center, width, height);
    Ok(gaussian_at_pixel(cx, cy, sigma, width, height))
}

/// Pixelwise maximum of Gaussians placed at `num_points` evenly spaced points on
/// the closed segment from `head` to `gaze`.
pub fn make_connection_map(
    head: Point,
    gaze: Point,
    sigma: f64,
    num_points: usize,
    width: usize,
    height: usize,
) -> Result<Heatmap> {
    head.check_unit("head center")?;
    gaze.check_unit("gaze point")?;
    check_sigma(sigma)?;
    if num_points < 2 {
        return Err(Error::invalid("connection maps need at least 2 sample points"));
    }
    let last = (num_points - 1) as f64;
    let mut pixels: Vec<(usize, usize)> = (0..num_points)
        .map(|k| {
            // a*wa + b*wb with integer-ratio weights keeps a->b and b->a sampling identical
            let wa = (num_points - 1 - k) as f64 / last;
            let wb = k as f64 / last;
            let p = Point::new(head.x * wa + gaze.x * wb, head.y * wa + gaze.y * wb);
            pixel_of(&p, width, height)
        })
        .collect();
    pixels.sort_unstable();
    pixels.dedup();

    let mut map = Heatmap::zeros(width, height);
    for (cx, cy) in pixels {
        map.max_assign(&gaussian_at_pixel(cx, cy, sigma, width, height))?;
    }
    Ok(map)
}

/// Builds every training target for one scene.
pub fn make_ground_truth(annotations: &[Annotation], config: &GtConfig) -> Result<GroundTruthMaps> {
    let (w, h) = (config.width, config.height);
    let mut gt = GroundTruthMaps {
        head_maps: Vec::with_capacity(annotations.len()),
        gaze_maps: Vec::with_capacity(annotations.len()),
        connection_maps: Vec::with_capacity(annotations.len()),
        detection_map: Heatmap::zeros(w, h),
        oof_labels: Vec::with_capacity(annotations.len()),
    };
    for ann in annotations {
        ann.validate()?;
        let head_center = ann.head_box.center();
        let head = make_gaussian_map(head_center, config.sigma, w, h)?;
        gt.detection_map.max_assign(&head)?;
        match ann.gaze_point {
            Some(g) if !ann.out_of_frame => {
                gt.gaze_maps.push(make_gaussian_map(g, config.sigma, w, h)?);
                gt.connection_maps.push(make_connection_map(
                    head_center,
                    g,
                    config.sigma,
                    config.connection_points,
                    w,
                    h,
                )?);
            }
            _ => {
                gt.gaze_maps.push(Heatmap::zeros(w, h));
                gt.connection_maps.push(Heatmap::zeros(w, h));
            }
        }
        gt.head_maps.push(head);
        gt.oof_labels.push(ann.out_of_frame);
    }
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_connection(head: Point, gaze: Point, sigma: f64, n: usize, x: usize, y: usize) -> f64 {
        (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                let p = Point::new(head.x + t * (gaze.x - head.x), head.y + t * (gaze.y - head.y));
                let (cx, cy) = pixel_of(&p, 64, 64);
                let d2 = (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2);
                (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_peak_and_one_sigma() {
        let m = make_gaussian_map(Point::new(0.5, 0.5), 3.0, 64, 64).unwrap();
        assert_eq!(m.get(32, 32), 1.0);
        assert!((m.get(35, 32) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((m.get(35, 32) - 0.6065).abs() < 1e-4);
        assert_eq!(m.argmax(), (32, 32));
    }

    #[test]
    fn gaussian_at_corner_decays_along_diagonal() {
        let m = make_gaussian_map(Point::new(0.0, 0.0), 3.0, 64, 64).unwrap();
        assert_eq!(m.argmax(), (0, 0));
        for i in 1..64 {
            assert!(m.get(i, i) < m.get(i - 1, i - 1));
        }
    }

    #[test]
    fn gaussian_rejects_bad_arguments() {
        assert!(make_gaussian_map(Point::new(f64::NAN, 0.5), 3.0, 64, 64).is_err());
        assert!(make_gaussian_map(Point::new(0.5, 0.5), 0.0, 64, 64).is_err());
        assert!(make_gaussian_map(Point::new(0.5, 0.5), -1.0, 64, 64).is_err());
        assert!(make_gaussian_map(Point::new(1.5, 0.5), 3.0, 64, 64).is_err());
    }

    #[test]
    fn degenerate_segment_is_a_gaussian() {
        let p = Point::new(0.3, 0.7);
        let c = make_connection_map(p, p, 3.0, 50, 64, 64).unwrap();
        let g = make_gaussian_map(p, 3.0, 64, 64).unwrap();
        assert_eq!(c, g);
    }

    #[test]
    fn connection_midpoint_and_far_field_match_brute_force() {
        let (a, b) = (Point::new(0.25, 0.5), Point::new(0.75, 0.5));
        let c = make_connection_map(a, b, 3.0, 50, 64, 64).unwrap();
        let mid = c.pixel_of(&Point::new(0.5, 0.5));
        let brute = brute_connection(a, b, 3.0, 50, mid.0, mid.1);
        assert_eq!(c.get(mid.0, mid.1), brute);
        assert_eq!(brute, 1.0);
        // 5 sigma = 15 px below the segment
        let far = brute_connection(a, b, 3.0, 50, 32, 32 + 15);
        assert!(far < 1e-5);
        assert!((c.get(32, 47) - far).abs() <= 1e-12 * far);
        // whole-map agreement with the brute-force oracle
        for y in 0..64 {
            for x in 0..64 {
                let o = brute_connection(a, b, 3.0, 50, x, y);
                assert!((c.get(x, y) - o).abs() <= 1e-12 * o, "({x},{y})");
            }
        }
    }

    #[test]
    fn connection_needs_two_points() {
        let p = Point::new(0.3, 0.7);
        assert!(make_connection_map(p, p, 3.0, 1, 64, 64).is_err());
        assert!(make_connection_map(p, Point::new(2.0, 0.0), 3.0, 50, 64, 64).is_err());
    }

    #[test]
    fn empty_scene_has_blank_detection_map() {
        let gt = make_ground_truth(&[], &GtConfig::default()).unwrap();
        assert_eq!(gt.len(), 0);
        assert!(gt.detection_map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_head_detection_equals_head_map() {
        let ann = Annotation::in_frame(BBox::new(0.1, 0.1, 0.2, 0.2), Point::new(0.7, 0.6));
        let gt = make_ground_truth(&[ann], &GtConfig::default()).unwrap();
        assert_eq!(gt.detection_map, gt.head_maps[0]);
        assert_eq!(gt.oof_labels, vec![false]);
        assert_eq!(gt.gaze_maps[0].argmax(), gt.gaze_maps[0].pixel_of(&Point::new(0.7, 0.6)));
    }

    fn local_maxima_above(map: &Heatmap, thresh: f64) -> usize {
        let (w, h) = map.size();
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let v = map.get(x, y);
                if v <= thresh {
                    continue;
                }
                let mut is_max = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if (dx, dy) != (0, 0)
                            && nx >= 0
                            && ny >= 0
                            && (nx as usize) < w
                            && (ny as usize) < h
                            && map.get(nx as usize, ny as usize) > v
                        {
                            is_max = false;
                        }
                    }
                }
                count += is_max as usize;
            }
        }
        count
    }

    #[test]
    fn two_far_heads_give_two_detection_peaks() {
        let anns = [
            Annotation::in_frame(BBox::new(0.05, 0.05, 0.15, 0.15), Point::new(0.5, 0.5)),
            Annotation::out_of_frame(BBox::new(0.8, 0.8, 0.9, 0.9)),
        ];
        let gt = make_ground_truth(&anns, &GtConfig::default()).unwrap();
        assert_eq!(local_maxima_above(&gt.detection_map, 0.99), 2);
        assert!(gt.gaze_maps[1].values().iter().all(|&v| v == 0.0));
        assert!(gt.connection_maps[1].values().iter().all(|&v| v == 0.0));
        assert_eq!(gt.oof_labels, vec![false, true]);
    }

    #[test]
    fn invalid_annotation_is_rejected() {
        let mut ann = Annotation::in_frame(BBox::new(0.1, 0.1, 0.2, 0.2), Point::new(0.7, 0.6));
        ann.out_of_frame = true;
        assert!(make_ground_truth(&[ann], &GtConfig::default()).is_err());
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    proptest! {
        #[test]
        fn maps_stay_in_unit_range(hx in unit(), hy in unit(), gx in unit(), gy in unit(), sigma in 0.5..6.0f64) {
            let c = make_connection_map(Point::new(hx, hy), Point::new(gx, gy), sigma, 50, 32, 32).unwrap();
            prop_assert!(c.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(c.max(), 1.0);
        }

        #[test]
        fn connection_is_direction_independent(hx in unit(), hy in unit(), gx in unit(), gy in unit()) {
            let (a, b) = (Point::new(hx, hy), Point::new(gx, gy));
            prop_assert_eq!(
                make_connection_map(a, b, 3.0, 50, 64, 64).unwrap(),
                make_connection_map(b, a, 3.0, 50, 64, 64).unwrap()
            );
        }

        #[test]
        fn gaussian_reflects_with_center(ix in 0usize..64, iy in 0usize..64) {
            let p = Point::new((ix as f64 + 0.5) / 64.0, (iy as f64 + 0.5) / 64.0);
            let r = Point::new(1.0 - p.x, p.y);
            let a = make_gaussian_map(p, 3.0, 64, 64).unwrap();
            let b = make_gaussian_map(r, 3.0, 64, 64).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    prop_assert_eq!(a.get(x, y), b.get(63 - x, y));
                }
            }
        }

        #[test]
        fn gaze_argmax_is_nearest_pixel(gx in unit(), gy in unit()) {
            let ann = Annotation::in_frame(BBox::new(0.4, 0.4, 0.5, 0.5), Point::new(gx, gy));
            let gt = make_ground_truth(&[ann], &GtConfig::default()).unwrap();
            let (x, y) = gt.gaze_maps[0].argmax();
            let c = gt.gaze_maps[0].pixel_center(x, y);
            prop_assert!((c.x - gx).abs() <= 0.5 / 64.0 + 1e-12);
            prop_assert!((c.y - gy).abs() <= 0.5 / 64.0 + 1e-12);
            prop_assert_eq!(gt.gaze_maps[0].values().iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }
}
