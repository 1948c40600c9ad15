//! Segmentation metrics, reports and overlay rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::{create_dir, write_frame, BinaryMask, Rgb, VideoVolume};

pub const OVERLAY_COLOR: Rgb = [255, 0, 0];

/// Ground truth keyed by annotated frame index.
pub type Annotations = BTreeMap<usize, BinaryMask>;

fn annotated_pairs<'a>(
    pred: &'a [BinaryMask],
    gt: &'a Annotations,
) -> Result<Vec<(&'a BinaryMask, &'a BinaryMask)>> {
    gt.iter()
        .map(|(&t, g)| {
            let p = pred.get(t).ok_or_else(|| {
                Error::DimensionMismatch(format!("no prediction for annotated frame {t}"))
            })?;
            if !p.same_dims(g) {
                return Err(Error::DimensionMismatch(format!(
                    "frame {t}: prediction vs ground truth"
                )));
            }
            Ok((p, g))
        })
        .collect()
}

fn overlap_counts(p: &BinaryMask, g: &BinaryMask) -> (usize, usize) {
    p.bits.iter().zip(&g.bits).fold((0, 0), |(i, u), (&a, &b)| {
        (i + (a && b) as usize, u + (a || b) as usize)
    })
}

/// Pooled intersection over pooled union across annotated frames; 1 when
/// both are empty everywhere.
pub fn iou(pred: &[BinaryMask], gt: &Annotations) -> Result<f64> {
    let (inter, union) = annotated_pairs(pred, gt)?
        .into_iter()
        .map(|(p, g)| overlap_counts(p, g))
        .fold((0, 0), |(a, b), (i, u)| (a + i, b + u));
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean of per-frame IoU over annotated frames.
pub fn iou_macro(pred: &[BinaryMask], gt: &Annotations) -> Result<f64> {
    let pairs = annotated_pairs(pred, gt)?;
    if pairs.is_empty() {
        return Ok(1.0);
    }
    let sum: f64 = pairs
        .iter()
        .map(|(p, g)| {
            let (i, u) = overlap_counts(p, g);
            if u == 0 {
                1.0
            } else {
                i as f64 / u as f64
            }
        })
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Incorrect pixels on each annotated frame.
pub fn frame_errors(pred: &[BinaryMask], gt: &Annotations) -> Result<Vec<usize>> {
    Ok(annotated_pairs(pred, gt)?
        .into_iter()
        .map(|(p, g)| p.bits.iter().zip(&g.bits).filter(|(a, b)| a != b).count())
        .collect())
}

/// Mean number of incorrect pixels per annotated frame.
pub fn pixel_error(pred: &[BinaryMask], gt: &Annotations) -> Result<f64> {
    let errs = frame_errors(pred, gt)?;
    if errs.is_empty() {
        return Ok(0.0);
    }
    Ok(errs.iter().sum::<usize>() as f64 / errs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub video: String,
    pub class: String,
    pub iou_micro: f64,
    pub iou_macro: f64,
    pub frame_errors: Vec<usize>,
    pub mean_pixel_error: f64,
}

pub fn evaluate(
    video: &str,
    class: &str,
    pred: &[BinaryMask],
    gt: &Annotations,
) -> Result<EvalRow> {
    let frame_errors = frame_errors(pred, gt)?;
    Ok(EvalRow {
        video: video.to_string(),
        class: class.to_string(),
        iou_micro: iou(pred, gt)?,
        iou_macro: iou_macro(pred, gt)?,
        mean_pixel_error: pixel_error(pred, gt)?,
        frame_errors,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    /// Mean micro IoU over the videos of each class.
    pub fn class_means(&self) -> BTreeMap<String, f64> {
        let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            by_class
                .entry(r.class.clone())
                .or_default()
                .push(r.iou_micro);
        }
        by_class
            .into_iter()
            .map(|(c, v)| (c, mean(v.into_iter())))
            .collect()
    }

    pub fn class_average(&self) -> f64 {
        mean(self.class_means().into_values())
    }

    pub fn video_average(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.iou_micro))
    }

    /// CSV with one row per (video, class) and two summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video,class,iou_micro,iou_macro,mean_pixel_error\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.3}",
                r.video, r.class, r.iou_micro, r.iou_macro, r.mean_pixel_error
            )
            .unwrap();
        }
        let macro_avg = mean(self.rows.iter().map(|r| r.iou_macro));
        let err_avg = mean(self.rows.iter().map(|r| r.mean_pixel_error));
        writeln!(
            out,
            "summary,class_average,{:.6},{:.6},{:.3}",
            self.class_average(),
            macro_avg,
            err_avg
        )
        .unwrap();
        writeln!(
            out,
            "summary,video_average,{:.6},{:.6},{:.3}",
            self.video_average(),
            macro_avg,
            err_avg
        )
        .unwrap();
        out
    }
}

fn blend(a: u8, b: u8) -> u8 {
    (a as u16 + b as u16).div_ceil(2) as u8
}

/// Source frames with object pixels blended 50% towards [`OVERLAY_COLOR`].
pub fn overlay_frames(video: &VideoVolume, masks: &[BinaryMask]) -> Result<Vec<Vec<Rgb>>> {
    if masks.len() != video.frame_count() {
        return Err(Error::FrameCount {
            what: "masks",
            expected: video.frame_count(),
            found: masks.len(),
        });
    }
    masks
        .iter()
        .zip(&video.frames)
        .map(|(m, f)| {
            if m.width != video.width || m.height != video.height {
                return Err(Error::DimensionMismatch("overlay mask vs frame".into()));
            }
            Ok(f.iter()
                .zip(&m.bits)
                .map(|(px, &on)| {
                    if on {
                        [0, 1, 2].map(|c| blend(px[c], OVERLAY_COLOR[c]))
                    } else {
                        *px
                    }
                })
                .collect())
        })
        .collect()
}

/// Writes `{frame:05}.ppm` overlays into `dir`.
pub fn render_overlay(video: &VideoVolume, masks: &[BinaryMask], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (t, frame) in overlay_frames(video, masks)?.iter().enumerate() {
        write_frame(
            &dir.join(format!("{t:05}.ppm")),
            video.width,
            video.height,
            frame,
        )?;
    }
    Ok(())
}
