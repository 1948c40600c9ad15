//! Region proposal scoring, classifier-confidence filtering and weighted
//! spatial average pooling into superpixel confidence fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceField, Derivation};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::video::{load_mask, BinaryMask, SuperpixelMap};

/// Default classifier confidence threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal {
    pub frame: usize,
    pub mask: BinaryMask,
    pub appearance: f64,
    pub context: f64,
    pub combined: f64,
    pub confidences: BTreeMap<String, f64>,
}

impl ScoredProposal {
    pub fn new(frame: usize, mask: BinaryMask, appearance: f64) -> Self {
        Self {
            frame,
            mask,
            appearance,
            context: 0.0,
            combined: 0.0,
            confidences: BTreeMap::new(),
        }
    }

    pub fn confidence(&self, class: &str) -> f64 {
        self.confidences.get(class).copied().unwrap_or(0.0)
    }
}

/// Motion context of a proposal: the mean of the motion cue inside the
/// mask times the total motion inside the mask.
pub fn context_score(mask: &BinaryMask, motion: &BinaryMask) -> Result<f64> {
    if !mask.same_dims(motion) {
        return Err(Error::DimensionMismatch("proposal vs motion mask".into()));
    }
    let area = mask.count();
    if area == 0 {
        return Err(Error::EmptyProposal);
    }
    let inside = mask.intersection_count(motion) as f64;
    Ok(inside / area as f64 * inside)
}

/// Fills `context` for every proposal from the per-frame motion cue maps.
pub fn score_context(
    proposals: &mut [ScoredProposal],
    motion: &[BinaryMask],
    exec: Exec,
) -> Result<()> {
    let scores = exec.map_slice(proposals, |p| {
        let m = motion
            .get(p.frame)
            .ok_or_else(|| Error::InvalidConfig(format!("no motion mask for frame {}", p.frame)))?;
        context_score(&p.mask, m)
    });
    for (p, s) in proposals.iter_mut().zip(scores) {
        p.context = s?;
    }
    Ok(())
}

fn max_normalize(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Max-normalizes appearance and context per frame, then sets
/// `combined = appearance + context`, itself max-normalized per frame.
pub fn normalize_and_combine(mut proposals: Vec<ScoredProposal>) -> Vec<ScoredProposal> {
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in proposals.iter().enumerate() {
        by_frame.entry(p.frame).or_default().push(i);
    }
    for idx in by_frame.values() {
        let mut app: Vec<f64> = idx.iter().map(|&i| proposals[i].appearance).collect();
        let mut ctx: Vec<f64> = idx.iter().map(|&i| proposals[i].context).collect();
        max_normalize(&mut app);
        max_normalize(&mut ctx);
        let mut comb: Vec<f64> = app.iter().zip(&ctx).map(|(a, c)| a + c).collect();
        max_normalize(&mut comb);
        for (k, &i) in idx.iter().enumerate() {
            let p = &mut proposals[i];
            p.appearance = app[k];
            p.context = ctx[k];
            p.combined = comb[k];
        }
    }
    proposals
}

/// Keeps proposals whose confidence for `class` is strictly above `threshold`.
pub fn filter_by_confidence<'a, I>(
    proposals: I,
    class: &str,
    threshold: f64,
) -> Vec<&'a ScoredProposal>
where
    I: IntoIterator<Item = &'a ScoredProposal>,
{
    proposals
        .into_iter()
        .filter(|p| p.confidence(class) > threshold)
        .collect()
}

/// Pixel-level pooled confidence of one frame: the weighted average of the
/// proposal masks, each weighted by `combined × confidence`. No proposals
/// (or zero total weight) gives an all-zero map.
pub fn pool_pixels(
    proposals: &[&ScoredProposal],
    class: &str,
    width: usize,
    height: usize,
) -> Result<Vec<f64>> {
    let mut num = vec![0.0; width * height];
    let mut den = 0.0;
    for p in proposals {
        if p.mask.width != width || p.mask.height != height {
            return Err(Error::DimensionMismatch(format!(
                "proposal mask in frame {}",
                p.frame
            )));
        }
        let weight = p.combined * p.confidence(class);
        den += weight;
        for (acc, &bit) in num.iter_mut().zip(&p.mask.bits) {
            if bit {
                *acc += weight;
            }
        }
    }
    if den <= 0.0 {
        return Ok(vec![0.0; width * height]);
    }
    Ok(num.into_iter().map(|n| (n / den).min(1.0)).collect())
}

/// Averages a pixel map over the superpixels of `frame`.
pub fn superpixel_means(pixels: &[f64], sp: &SuperpixelMap, frame: usize) -> Vec<f64> {
    let n = sp.count(frame);
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (&l, &v) in sp.labels(frame).iter().zip(pixels) {
        sum[l as usize] += v;
        count[l as usize] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { (s / c as f64).min(1.0) })
        .collect()
}

/// Pooled superpixel confidence for one frame from proposals that already
/// passed the confidence filter.
pub fn pool_confidence(
    proposals: &[&ScoredProposal],
    class: &str,
    sp: &SuperpixelMap,
    frame: usize,
) -> Result<Vec<f64>> {
    let pixels = pool_pixels(proposals, class, sp.width, sp.height)?;
    Ok(superpixel_means(&pixels, sp, frame))
}

/// Filters and pools every frame into a confidence field for `class`.
/// Proposals must already carry normalized combined scores.
pub fn pool_video(
    proposals: &[ScoredProposal],
    class: &str,
    threshold: f64,
    sp: &SuperpixelMap,
    exec: Exec,
) -> Result<ConfidenceField> {
    let kept = filter_by_confidence(proposals, class, threshold);
    let mut per_frame: Vec<Vec<&ScoredProposal>> = vec![Vec::new(); sp.frame_count()];
    for p in kept {
        per_frame
            .get_mut(p.frame)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("proposal frame {} out of range", p.frame))
            })?
            .push(p);
    }
    let pooled = exec.map_range(sp.frame_count(), |t| {
        pool_confidence(&per_frame[t], class, sp, t)
    });
    let mut values = Vec::with_capacity(sp.num_nodes());
    for frame in pooled {
        values.extend(frame?);
    }
    Ok(ConfidenceField {
        class: class.to_string(),
        values,
        derivation: Derivation::Pooled,
    })
}

/// One line of the JSON-lines proposal manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame: usize,
    pub mask: String,
    pub appearance: f64,
    pub confidences: BTreeMap<String, f64>,
}

/// Reads a proposal manifest; mask paths resolve against the manifest's
/// directory.
pub fn load_proposal_manifest(path: &Path) -> Result<Vec<ScoredProposal>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if let Some((_, &c)) = entry
            .confidences
            .iter()
            .find(|(_, c)| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::ConfidenceOutOfRange(c));
        }
        if !(entry.appearance >= 0.0 && entry.appearance.is_finite()) {
            return Err(Error::Manifest {
                line: i + 1,
                msg: format!("invalid appearance score {}", entry.appearance),
            });
        }
        let mask = load_mask(&base.join(&entry.mask))?;
        let mut p = ScoredProposal::new(entry.frame, mask, entry.appearance);
        p.confidences = entry.confidences;
        out.push(p);
    }
    Ok(out)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        out.push('\n');
    }
    out
}
