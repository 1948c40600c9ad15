//! The weighted space-time superpixel graph.
//!
//! Nodes are superpixels of every frame (global node ids from
//! [`SuperpixelMap::node`]). Spatial edges join 4-connected neighbours in one
//! frame; temporal edges join a superpixel of frame `t-1` to every
//! superpixel of frame `t` that its flow-warped region overlaps.
//!
//! Spatial weight: `exp(-d_c) / d_s`. Temporal weight: `exp(-d_c) · m / ρ`
//! where `ρ` is the overlap ratio and `m = exp(-w_c · π)` the motion
//! reliability of the source superpixel. Colour distance `d_c` is the
//! squared RGB distance over twice its mean for the edge kind; `d_s` is the
//! centroid distance over its mean across spatial pairs.

mod sparse;

use std::fmt::Write as _;

pub use sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::video::{warp_point, BinaryMask, FlowField, SuperpixelMap, SuperpixelStats};

/// Default motion reliability sharpness `w_c`.
pub const DEFAULT_WC: f64 = 2.0;
/// Lower clamp for spatial distances and overlap ratios.
pub const DISTANCE_EPS: f64 = 1e-6;

pub const ORIENTATION_BINS: usize = 8;
pub const MAGNITUDE_BINS: usize = 4;
pub const HISTOGRAM_BINS: usize = ORIENTATION_BINS * MAGNITUDE_BINS;
/// Upper edges (pixels) of the first three magnitude bins; the last is open.
pub const MAGNITUDE_EDGES: [f64; 3] = [0.5, 2.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Spatial => "spatial",
            EdgeKind::Temporal => "temporal",
        }
    }
}

/// Undirected weighted edge with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Overlap of a warped frame `t-1` superpixel with a frame `t` superpixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalLink {
    pub source: usize,
    pub target: usize,
    pub overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionReliability {
    /// Entropy of the quantized flow histogram, in nats.
    pub noncoherence: f64,
    /// `exp(-w_c · noncoherence)`.
    pub reliability: f64,
}

/// Pairs of 4-connected superpixels within each frame, as sorted global
/// node pairs `(i, j)` with `i < j`.
pub fn spatial_edges(sp: &SuperpixelMap, exec: Exec) -> Vec<(usize, usize)> {
    let (w, h) = (sp.width, sp.height);
    let per_frame = exec.map_range(sp.frame_count(), |t| {
        let labels = sp.labels(t);
        let mut pairs = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let a = labels[y * w + x];
                if x + 1 < w {
                    let b = labels[y * w + x + 1];
                    if a != b {
                        pairs.push((a.min(b), a.max(b)));
                    }
                }
                if y + 1 < h {
                    let b = labels[(y + 1) * w + x];
                    if a != b {
                        pairs.push((a.min(b), a.max(b)));
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
            .into_iter()
            .map(|(a, b)| (sp.node(t, a), sp.node(t, b)))
            .collect::<Vec<_>>()
    });
    per_frame.into_iter().flatten().collect()
}

/// Flow-linked superpixel pairs between consecutive frames. `flows[t]` maps
/// frame `t` to frame `t + 1`.
pub fn temporal_edges(
    sp: &SuperpixelMap,
    flows: &[FlowField],
    exec: Exec,
) -> Result<Vec<TemporalLink>> {
    check_flows(sp, flows)?;
    let (w, h) = (sp.width, sp.height);
    let per_pair = exec.map_range(sp.frame_count().saturating_sub(1), |t| {
        let src = sp.labels(t);
        let dst = sp.labels(t + 1);
        let flow = &flows[t];
        // (source label, destination pixel), deduplicated so each source's
        // warped region is a set
        let mut hits: Vec<u64> = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if let Some((tx, ty)) = warp_point(x, y, flow.vectors[i], w, h) {
                    hits.push(((src[i] as u64) << 32) | (ty * w + tx) as u64);
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        let mut warped = vec![0usize; sp.count(t)];
        let mut overlaps: Vec<u64> = hits
            .iter()
            .map(|&k| {
                let l = (k >> 32) as usize;
                warped[l] += 1;
                ((l as u64) << 32) | dst[(k & 0xffff_ffff) as usize] as u64
            })
            .collect();
        overlaps.sort_unstable();
        let mut links = Vec::new();
        let mut k = 0;
        while k < overlaps.len() {
            let key = overlaps[k];
            let run = overlaps[k..].iter().take_while(|&&o| o == key).count();
            let (l, m) = ((key >> 32) as u32, (key & 0xffff_ffff) as u32);
            links.push(TemporalLink {
                source: sp.node(t, l),
                target: sp.node(t + 1, m),
                overlap: run as f64 / warped[l as usize] as f64,
            });
            k += run;
        }
        links
    });
    Ok(per_pair.into_iter().flatten().collect())
}

fn check_flows(sp: &SuperpixelMap, flows: &[FlowField]) -> Result<()> {
    let expected = sp.frame_count().saturating_sub(1);
    if flows.len() != expected {
        return Err(Error::FrameCount {
            what: "flow fields",
            expected,
            found: flows.len(),
        });
    }
    if flows
        .iter()
        .any(|f| f.width != sp.width || f.height != sp.height)
    {
        return Err(Error::DimensionMismatch("flow vs superpixel map".into()));
    }
    Ok(())
}

/// Histogram bin of one flow vector: 8 orientation × 4 magnitude bins, with
/// every vector shorter than the first magnitude edge in bin 0.
pub fn flow_bin(v: [f32; 2]) -> usize {
    let (dx, dy) = (v[0] as f64, v[1] as f64);
    let mag = dx.hypot(dy);
    if mag < MAGNITUDE_EDGES[0] {
        return 0;
    }
    let mag_bin = 1 + MAGNITUDE_EDGES[1..].iter().filter(|&&e| mag >= e).count();
    let sector = std::f64::consts::TAU / ORIENTATION_BINS as f64;
    let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
    let ori = ((angle / sector) as usize).min(ORIENTATION_BINS - 1);
    mag_bin * ORIENTATION_BINS + ori
}

/// Shannon entropy (nats) of a histogram given as counts.
pub fn entropy(hist: &[f64]) -> f64 {
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    hist.iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| c / total * (total / c).ln())
        .sum::<f64>()
}

fn reliability_from_hist(hist: &[f64], w_c: f64) -> MotionReliability {
    let pi = entropy(hist);
    MotionReliability {
        noncoherence: pi,
        reliability: (-w_c * pi).exp(),
    }
}

/// Motion non-coherence of the pixels in `mask` under `flow`.
pub fn motion_noncoherence(
    mask: &BinaryMask,
    flow: &FlowField,
    w_c: f64,
) -> Result<MotionReliability> {
    if mask.width != flow.width || mask.height != flow.height {
        return Err(Error::DimensionMismatch("mask vs flow".into()));
    }
    let mut hist = [0.0; HISTOGRAM_BINS];
    let mut any = false;
    for (&bit, &v) in mask.bits.iter().zip(&flow.vectors) {
        if bit {
            hist[flow_bin(v)] += 1.0;
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptySuperpixel(0));
    }
    Ok(reliability_from_hist(&hist, w_c))
}

/// Motion reliability of every superpixel that has an outgoing flow field
/// (all frames but the last). Entries of the last frame are 1.
pub fn motion_reliabilities(
    sp: &SuperpixelMap,
    flows: &[FlowField],
    w_c: f64,
    exec: Exec,
) -> Result<Vec<MotionReliability>> {
    check_flows(sp, flows)?;
    let per_frame = exec.map_range(sp.frame_count(), |t| {
        let n = sp.count(t);
        let Some(flow) = flows.get(t) else {
            return vec![
                MotionReliability {
                    noncoherence: 0.0,
                    reliability: 1.0,
                };
                n
            ];
        };
        let mut hist = vec![[0.0; HISTOGRAM_BINS]; n];
        for (&l, &v) in sp.labels(t).iter().zip(&flow.vectors) {
            hist[l as usize][flow_bin(v)] += 1.0;
        }
        hist.iter().map(|h| reliability_from_hist(h, w_c)).collect()
    });
    Ok(per_frame.into_iter().flatten().collect())
}

fn squared_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Self-normalized colour distance `‖c_i − c_j‖² / (2·mean_sq)`; zero when
/// `mean_sq` is zero.
pub fn color_distance(ci: [f64; 3], cj: [f64; 3], mean_sq: f64) -> f64 {
    if mean_sq <= 0.0 {
        return 0.0;
    }
    squared_distance(ci, cj) / (2.0 * mean_sq)
}

pub fn spatial_affinity(color_dist: f64, spatial_dist: f64) -> f64 {
    (-color_dist).exp() / spatial_dist.max(DISTANCE_EPS)
}

/// `exp(-d_c) / d_t` with temporal distance `d_t = ρ / m`.
pub fn temporal_affinity(color_dist: f64, overlap: f64, reliability: f64) -> f64 {
    (-color_dist).exp() * reliability / overlap.max(DISTANCE_EPS)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeGraph {
    n: usize,
    edges: Vec<Edge>,
    degree: Vec<f64>,
    normalized: CsrMatrix,
}

impl SpaceTimeGraph {
    /// Builds the graph from weighted undirected edges. Edges given twice
    /// (either orientation) keep the larger weight.
    pub fn assemble(n: usize, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| {
                assert!(e.i != e.j, "self-loop at node {}", e.i);
                assert!(e.weight.is_finite() && e.weight >= 0.0, "bad edge weight");
                Edge {
                    i: e.i.min(e.j),
                    j: e.i.max(e.j),
                    ..e
                }
            })
            .collect();
        edges.sort_by_key(|e| (e.i, e.j, e.kind));
        let mut merged: Vec<Edge> = Vec::with_capacity(edges.len());
        for e in edges {
            match merged.last_mut() {
                Some(last) if last.i == e.i && last.j == e.j => {
                    if e.weight > last.weight {
                        *last = e;
                    }
                }
                _ => merged.push(e),
            }
        }
        let mut degree = vec![0.0; n];
        for e in &merged {
            degree[e.i] += e.weight;
            degree[e.j] += e.weight;
        }
        let inv_sqrt: Vec<f64> = degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut triplets = Vec::with_capacity(2 * merged.len());
        for e in &merged {
            let s = e.weight * inv_sqrt[e.i] * inv_sqrt[e.j];
            triplets.push((e.i, e.j, s));
            triplets.push((e.j, e.i, s));
        }
        Self {
            n,
            edges: merged,
            degree,
            normalized: CsrMatrix::from_triplets(n, triplets),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// `S = D^{-1/2} A D^{-1/2}`; rows of isolated nodes are empty.
    pub fn normalized(&self) -> &CsrMatrix {
        &self.normalized
    }

    /// Debug dump with columns `kind,frame_i,sp_i,frame_j,sp_j,weight`.
    pub fn to_csv(&self, sp: &SuperpixelMap) -> String {
        let mut out = String::from("kind,frame_i,sp_i,frame_j,sp_j,weight\n");
        for e in &self.edges {
            let (fi, si) = sp.locate(e.i);
            let (fj, sj) = sp.locate(e.j);
            writeln!(out, "{},{fi},{si},{fj},{sj},{}", e.kind.as_str(), e.weight).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub w_c: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { w_c: DEFAULT_WC }
    }
}

/// Builds the full space-time graph of a video.
pub fn build_graph(
    sp: &SuperpixelMap,
    stats: &SuperpixelStats,
    flows: &[FlowField],
    params: GraphParams,
    exec: Exec,
) -> Result<SpaceTimeGraph> {
    if stats.records.len() != sp.num_nodes() {
        return Err(Error::DimensionMismatch("stats vs superpixel map".into()));
    }
    let rec = &stats.records;
    let spatial = spatial_edges(sp, exec);
    let temporal = temporal_edges(sp, flows, exec)?;
    let motion = motion_reliabilities(sp, flows, params.w_c, exec)?;

    let color_sq = |i: usize, j: usize| squared_distance(rec[i].mean_color, rec[j].mean_color);
    let centroid_dist = |i: usize, j: usize| {
        let (a, b) = (rec[i].centroid, rec[j].centroid);
        (a[0] - b[0]).hypot(a[1] - b[1])
    };
    let spatial_color_mean = mean(spatial.iter().map(|&(i, j)| color_sq(i, j)));
    let temporal_color_mean = mean(temporal.iter().map(|l| color_sq(l.source, l.target)));
    let centroid_mean = mean(spatial.iter().map(|&(i, j)| centroid_dist(i, j)));

    let mut edges = Vec::with_capacity(spatial.len() + temporal.len());
    for &(i, j) in &spatial {
        let dc = color_distance(rec[i].mean_color, rec[j].mean_color, spatial_color_mean);
        let ds = if centroid_mean > 0.0 {
            centroid_dist(i, j) / centroid_mean
        } else {
            1.0
        };
        edges.push(Edge {
            i,
            j,
            weight: spatial_affinity(dc, ds),
            kind: EdgeKind::Spatial,
        });
    }
    for l in &temporal {
        let dc = color_distance(
            rec[l.source].mean_color,
            rec[l.target].mean_color,
            temporal_color_mean,
        );
        edges.push(Edge {
            i: l.source,
            j: l.target,
            weight: temporal_affinity(dc, l.overlap, motion[l.source].reliability),
            kind: EdgeKind::Temporal,
        });
    }
    Ok(SpaceTimeGraph::assemble(sp.num_nodes(), edges))
}
