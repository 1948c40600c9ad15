//! Deterministic synthetic videos and brute-force oracles.
//!
//! A coloured shape moves with integer velocity over a noisy background.
//! Flow is exact (shape velocity inside the shape, zero elsewhere), so
//! warping a ground-truth mask lands exactly on the next one. Superpixels
//! are grid cells split along the shape boundary.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeKind, SpaceTimeGraph};
use crate::mrf::{Label, Labeling, MrfProblem, PairwiseTerm};
use crate::pipeline::PipelineConfig;
use crate::proposal::{manifest_to_string, ManifestEntry};
use crate::video::{
    create_dir, write_flow, write_frame, write_mask, write_superpixel_frame, BinaryMask, FlowField,
    SuperpixelMap, VideoVolume,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rect { width: usize, height: usize },
    Disc { radius: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub shape: Shape,
    /// Top-left corner (rectangle) or centre (disc) in frame 0.
    pub origin: [i64; 2],
    /// Pixels per frame.
    pub velocity: [i64; 2],
    pub background: [u8; 3],
    pub object: [u8; 3],
    /// Per-channel pixel noise, 8-bit units.
    pub color_noise: f64,
    pub cell: usize,
    pub class: String,
    pub proposals_per_frame: usize,
    pub distractors_per_frame: usize,
    /// Maximum per-side box offset of object proposals, pixels.
    pub jitter: usize,
    pub score_noise: f64,
    pub confidence_noise: f64,
    pub object_confidence: f64,
    pub distractor_confidence: f64,
    /// Probability that a frame gets no object proposals at all.
    pub miss_rate: f64,
    /// Ground truth is written for every `gt_every`-th frame.
    pub gt_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            frames: 20,
            shape: Shape::Rect {
                width: 40,
                height: 40,
            },
            origin: [20, 30],
            velocity: [2, 1],
            background: [70, 110, 90],
            object: [150, 80, 60],
            color_noise: 20.0,
            cell: 8,
            class: "object".into(),
            proposals_per_frame: 4,
            distractors_per_frame: 3,
            jitter: 8,
            score_noise: 0.1,
            confidence_noise: 0.2,
            object_confidence: 0.8,
            distractor_confidence: 0.4,
            miss_rate: 0.2,
            gt_every: 1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn shape_at(&self, t: usize) -> (i64, i64) {
        (
            self.origin[0] + self.velocity[0] * t as i64,
            self.origin[1] + self.velocity[1] * t as i64,
        )
    }

    /// Whether pixel `(x, y)` lies inside the shape at frame `t`.
    pub fn inside(&self, t: usize, x: usize, y: usize) -> bool {
        let (ox, oy) = self.shape_at(t);
        let (x, y) = (x as i64, y as i64);
        match self.shape {
            Shape::Rect { width, height } => {
                x >= ox && x < ox + width as i64 && y >= oy && y < oy + height as i64
            }
            Shape::Disc { radius } => (x - ox).pow(2) + (y - oy).pow(2) <= (radius as i64).pow(2),
        }
    }

    /// Inclusive-exclusive pixel bounds `[x0, y0, x1, y1]` at frame `t`.
    fn bounds(&self, t: usize) -> [i64; 4] {
        let (ox, oy) = self.shape_at(t);
        match self.shape {
            Shape::Rect { width, height } => [ox, oy, ox + width as i64, oy + height as i64],
            Shape::Disc { radius } => {
                let r = radius as i64;
                [ox - r, oy - r, ox + r + 1, oy + r + 1]
            }
        }
    }

    /// Reads a JSON config; omitted keys take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad("frame size and count must be positive");
        }
        if self.cell == 0 || self.gt_every == 0 {
            return bad("cell size and ground-truth cadence must be positive");
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return bad("miss rate must lie in [0, 1]");
        }
        if self.color_noise < 0.0 || self.score_noise < 0.0 || self.confidence_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        for t in 0..self.frames {
            let [x0, y0, x1, y1] = self.bounds(t);
            if x0 < 0 || y0 < 0 || x1 > self.width as i64 || y1 > self.height as i64 {
                return Err(Error::InvalidConfig(format!(
                    "shape leaves the frame at frame {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthProposal {
    pub entry: ManifestEntry,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub config: SynthConfig,
    pub video: VideoVolume,
    pub superpixels: SuperpixelMap,
    pub flows: Vec<FlowField>,
    pub motion: Vec<BinaryMask>,
    pub proposals: Vec<SynthProposal>,
    pub ground_truth: Vec<BinaryMask>,
}

fn noisy(rng: &mut ChaCha8Rng, base: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        base + Normal::new(0.0, sigma).unwrap().sample(rng)
    } else {
        base
    }
}

fn box_mask(w: usize, h: usize, [x0, y0, x1, y1]: [i64; 4]) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        x >= x0 && x < x1 && y >= y0 && y < y1
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthVideo> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let ground_truth: Vec<BinaryMask> = (0..cfg.frames)
        .map(|t| BinaryMask::from_fn(w, h, |x, y| cfg.inside(t, x, y)))
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    for gt in &ground_truth {
        let px = gt
            .bits
            .iter()
            .map(|&inside| {
                let base = if inside { cfg.object } else { cfg.background };
                base.map(|c| {
                    noisy(&mut rng, c as f64, cfg.color_noise)
                        .round()
                        .clamp(0.0, 255.0) as u8
                })
            })
            .collect();
        frames.push(px);
    }
    let video = VideoVolume::new(w, h, frames)?;

    let cells_x = w.div_ceil(cfg.cell);
    let raw: Vec<Vec<u32>> = ground_truth
        .iter()
        .map(|gt| {
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let cell = (y / cfg.cell) * cells_x + x / cfg.cell;
                    (2 * cell + gt.bits[i] as usize) as u32
                })
                .collect()
        })
        .collect();
    let superpixels = SuperpixelMap::from_raw(w, h, raw)?;

    let v = cfg.velocity.map(|c| c as f32);
    let flows = ground_truth[..cfg.frames - 1]
        .iter()
        .map(|gt| FlowField {
            width: w,
            height: h,
            vectors: gt
                .bits
                .iter()
                .map(|&b| if b { v } else { [0.0, 0.0] })
                .collect(),
        })
        .collect();

    let moving = cfg.velocity != [0, 0];
    let motion = ground_truth
        .iter()
        .map(|gt| {
            if moving {
                gt.clone()
            } else {
                BinaryMask::new(w, h)
            }
        })
        .collect();

    let mut proposals = Vec::new();
    for t in 0..cfg.frames {
        let b = cfg.bounds(t);
        let mut k = 0;
        let mut push = |rng: &mut ChaCha8Rng, bx: [i64; 4], app: f64, conf: f64| {
            let mask = box_mask(w, h, bx);
            if mask.count() == 0 {
                return;
            }
            let entry = ManifestEntry {
                frame: t,
                mask: format!("proposals/{t:05}_{k:02}.pgm"),
                appearance: noisy(rng, app, cfg.score_noise).max(0.0),
                confidences: [(
                    cfg.class.clone(),
                    noisy(rng, conf, cfg.confidence_noise).clamp(0.0, 1.0),
                )]
                .into_iter()
                .collect(),
            };
            k += 1;
            proposals.push(SynthProposal { entry, mask });
        };
        let missed = cfg.miss_rate > 0.0 && rng.random::<f64>() < cfg.miss_rate;
        for _ in 0..if missed { 0 } else { cfg.proposals_per_frame } {
            let j = cfg.jitter as i64;
            let mut bx = b;
            for c in &mut bx {
                *c += rng.random_range(-j..=j);
            }
            push(&mut rng, bx, 0.8, cfg.object_confidence);
        }
        for _ in 0..cfg.distractors_per_frame {
            let bw = rng.random_range(16..=48.min(w as i64).max(16));
            let bh = rng.random_range(16..=48.min(h as i64).max(16));
            let x0 = rng.random_range(0..=(w as i64 - bw).max(0));
            let y0 = rng.random_range(0..=(h as i64 - bh).max(0));
            push(
                &mut rng,
                [x0, y0, x0 + bw, y0 + bh],
                0.6,
                cfg.distractor_confidence,
            );
        }
    }

    Ok(SynthVideo {
        config: cfg.clone(),
        video,
        superpixels,
        flows,
        motion,
        proposals,
        ground_truth,
    })
}

pub const FRAMES_DIR: &str = "frames";
pub const SUPERPIXELS_DIR: &str = "superpixels";
pub const FLOW_DIR: &str = "flow";
pub const MOTION_DIR: &str = "motion";
pub const GT_DIR: &str = "gt";
pub const PROPOSALS_DIR: &str = "proposals";
pub const MANIFEST_FILE: &str = "proposals.jsonl";
pub const CONFIG_FILE: &str = "config.json";

impl SynthVideo {
    pub fn manifest(&self) -> String {
        let entries: Vec<ManifestEntry> = self.proposals.iter().map(|p| p.entry.clone()).collect();
        manifest_to_string(&entries)
    }

    /// Pipeline config for the written case, paths relative to its directory.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            video: "synth".into(),
            frames: FRAMES_DIR.into(),
            superpixels: SUPERPIXELS_DIR.into(),
            flow: FLOW_DIR.into(),
            motion: MOTION_DIR.into(),
            proposals: MANIFEST_FILE.into(),
            gt: Some(GT_DIR.into()),
            classes: vec![self.config.class.clone()],
            seed: self.config.seed,
            ..Default::default()
        }
    }

    /// Annotated frame indices.
    pub fn annotated(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.config.frames).step_by(self.config.gt_every)
    }

    /// Writes every artifact in the on-disk formats the pipeline reads.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in [
            FRAMES_DIR,
            SUPERPIXELS_DIR,
            FLOW_DIR,
            MOTION_DIR,
            GT_DIR,
            PROPOSALS_DIR,
        ] {
            create_dir(&dir.join(sub))?;
        }
        let (w, h) = (self.video.width, self.video.height);
        for t in 0..self.video.frame_count() {
            let name = format!("{t:05}");
            write_frame(
                &dir.join(FRAMES_DIR).join(format!("{name}.ppm")),
                w,
                h,
                &self.video.frames[t],
            )?;
            write_superpixel_frame(
                &dir.join(SUPERPIXELS_DIR).join(format!("{name}.pgm")),
                &self.superpixels,
                t,
            )?;
            write_mask(
                &dir.join(MOTION_DIR).join(format!("{name}.pgm")),
                &self.motion[t],
            )?;
            if let Some(flow) = self.flows.get(t) {
                write_flow(&dir.join(FLOW_DIR).join(format!("{name}.flo")), flow)?;
            }
        }
        for t in self.annotated() {
            write_mask(
                &dir.join(GT_DIR).join(format!("{t:05}.pgm")),
                &self.ground_truth[t],
            )?;
        }
        for p in &self.proposals {
            write_mask(&dir.join(&p.entry.mask), &p.mask)?;
        }
        let manifest = dir.join(MANIFEST_FILE);
        fs::write(&manifest, self.manifest()).map_err(|e| Error::io(&manifest, e))?;
        let config = dir.join(CONFIG_FILE);
        fs::write(&config, self.pipeline_config().to_json()).map_err(|e| Error::io(&config, e))
    }
}

/// Random graph with `n` nodes in frames of `per_frame` nodes: chain and
/// chord edges within a frame (spatial) and links to the next frame
/// (temporal). Weights are in `[0.05, 3)`.
pub fn random_graph(n: usize, per_frame: usize, seed: u64) -> SpaceTimeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_frame = per_frame.max(1);
    let mut edges = Vec::new();
    for i in 0..n {
        let frame_end = ((i / per_frame) + 1) * per_frame;
        if i + 1 < frame_end.min(n) && rng.random::<f64>() < 0.9 {
            edges.push(Edge {
                i,
                j: i + 1,
                weight: rng.random_range(0.05..3.0),
                kind: EdgeKind::Spatial,
            });
        }
        if rng.random::<f64>() < 0.3 {
            let j = (i / per_frame) * per_frame + rng.random_range(0..per_frame);
            if j != i && j < n {
                edges.push(Edge {
                    i,
                    j,
                    weight: rng.random_range(0.05..3.0),
                    kind: EdgeKind::Spatial,
                });
            }
        }
        for _ in 0..2 {
            let j = frame_end + rng.random_range(0..per_frame);
            if j < n && rng.random::<f64>() < 0.6 {
                edges.push(Edge {
                    i,
                    j,
                    weight: rng.random_range(0.05..3.0),
                    kind: EdgeKind::Temporal,
                });
            }
        }
    }
    SpaceTimeGraph::assemble(n, edges)
}

/// Random binary MRF with integer unary costs in `0..=max_cost` and
/// integer pairwise weights.
pub fn random_problem(n: usize, seed: u64, max_cost: u32) -> MrfProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unary = (0..n)
        .map(|_| {
            [
                rng.random_range(0..=max_cost) as f64,
                rng.random_range(0..=max_cost) as f64,
            ]
        })
        .collect();
    let mut pairwise = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.35 {
                pairwise.push(PairwiseTerm {
                    i,
                    j,
                    weight: rng.random_range(0..=max_cost) as f64,
                });
            }
        }
    }
    MrfProblem { unary, pairwise }
}

/// Largest system [`dense_solve_oracle`] accepts.
pub const DENSE_ORACLE_MAX: usize = 1000;

/// Solves `(I − (1−η) S) x = η c` by dense Gaussian elimination with partial
/// pivoting, forming `S` directly from the edge list and degrees.
pub fn dense_solve_oracle(graph: &SpaceTimeGraph, c: &[f64], mu: f64) -> Result<Vec<f64>> {
    let n = graph.num_nodes();
    if n > DENSE_ORACLE_MAX {
        return Err(Error::InvalidConfig(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX} nodes"
        )));
    }
    if c.len() != n {
        return Err(Error::DimensionMismatch("oracle right-hand side".into()));
    }
    let eta = mu / (1.0 + mu);
    let d = graph.degree();
    let mut a = vec![vec![0.0; n + 1]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
        row[n] = eta * c[i];
    }
    for e in graph.edges() {
        let s = e.weight / (d[e.i] * d[e.j]).sqrt();
        a[e.i][e.j] -= (1.0 - eta) * s;
        a[e.j][e.i] -= (1.0 - eta) * s;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        assert!(a[piv][col].abs() > 1e-14, "singular system in dense oracle");
        a.swap(col, piv);
        let (done, rest) = a.split_at_mut(col + 1);
        let pivot = &done[col];
        for row in rest {
            let f = row[col] / pivot[col];
            if f != 0.0 {
                for (v, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *v -= f * p;
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    Ok(x)
}

/// Largest problem [`enumerate_labelings_oracle`] accepts.
pub const ENUMERATION_MAX: usize = 16;

/// Exhaustive minimum over all `2^n` labelings. Ties prefer fewer object
/// labels, then the lexicographically smallest label sequence with
/// background before object.
pub fn enumerate_labelings_oracle(problem: &MrfProblem) -> Result<(Labeling, f64)> {
    let n = problem.unary.len();
    if n > ENUMERATION_MAX {
        return Err(Error::InvalidConfig(format!(
            "enumeration limited to {ENUMERATION_MAX} nodes"
        )));
    }
    // bit i set = node i is object; node 0 is the most significant position
    let key = |bits: u32| -> (u32, u32) { (bits.count_ones(), bits.reverse_bits()) };
    let energy = |bits: u32| -> f64 {
        let mut e = 0.0;
        for (i, u) in problem.unary.iter().enumerate() {
            e += if bits >> i & 1 == 1 { u[0] } else { u[1] };
        }
        for p in &problem.pairwise {
            if (bits >> p.i & 1) != (bits >> p.j & 1) {
                e += p.weight;
            }
        }
        e
    };
    let mut best = (0u32, energy(0));
    for bits in 1..(1u32 << n) {
        let e = energy(bits);
        if e < best.1 || (e == best.1 && key(bits) < key(best.0)) {
            best = (bits, e);
        }
    }
    let labels = (0..n)
        .map(|i| {
            if best.0 >> i & 1 == 1 {
                Label::Object
            } else {
                Label::Background
            }
        })
        .collect();
    Ok((Labeling { labels }, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{propagate_linear, PropagationConfig};
    use crate::video::warp_mask;

    fn centroid(m: &BinaryMask) -> [f64; 2] {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.height {
            for x in 0..m.width {
                if m.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        [sx / n, sy / n]
    }

    #[test]
    fn kinematics() {
        let s = generate(&SynthConfig::default()).unwrap();
        let (c0, c5) = (centroid(&s.ground_truth[0]), centroid(&s.ground_truth[5]));
        assert_eq!([c5[0] - c0[0], c5[1] - c0[1]], [10.0, 5.0]);
    }

    #[test]
    fn zero_velocity() {
        let s = generate(&SynthConfig {
            velocity: [0, 0],
            ..Default::default()
        })
        .unwrap();
        assert!(s
            .flows
            .iter()
            .all(|f| f.vectors.iter().all(|v| *v == [0.0, 0.0])));
        assert!(s.ground_truth.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn flow_carries_ground_truth() {
        let s = generate(&SynthConfig {
            shape: Shape::Disc { radius: 15 },
            origin: [30, 40],
            ..Default::default()
        })
        .unwrap();
        for t in 1..s.ground_truth.len() {
            assert_eq!(
                warp_mask(&s.ground_truth[t - 1], &s.flows[t - 1]).unwrap(),
                s.ground_truth[t]
            );
        }
    }

    #[test]
    fn superpixels_respect_the_shape() {
        let s = generate(&SynthConfig::default()).unwrap();
        for t in 0..s.video.frame_count() {
            let gt = &s.ground_truth[t];
            for l in 0..s.superpixels.count(t) as u32 {
                let m = s.superpixels.mask(t, l);
                let inside = m.intersection_count(gt);
                assert!(inside == 0 || inside == m.count());
            }
        }
    }

    #[test]
    fn same_seed_same_manifest() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        assert_eq!(a.video, b.video);
        let c = generate(&SynthConfig {
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.manifest(), c.manifest());
    }

    #[test]
    fn rejects_shape_leaving_frame() {
        let err = generate(&SynthConfig {
            velocity: [5, 0],
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn dense_oracle_examples() {
        let pair = SpaceTimeGraph::assemble(
            2,
            [Edge {
                i: 0,
                j: 1,
                weight: 1.0,
                kind: EdgeKind::Spatial,
            }],
        );
        let x = dense_solve_oracle(&pair, &[1.0, 0.0], 0.5).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-14 && (x[1] - 0.4).abs() < 1e-14);

        let empty = SpaceTimeGraph::assemble(3, []);
        let x = dense_solve_oracle(&empty, &[0.3, 0.6, 0.9], 0.5).unwrap();
        for (a, b) in x.iter().zip([0.1, 0.2, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }

        let g = random_graph(50, 10, 3);
        let c: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).fract()).collect();
        let dense = dense_solve_oracle(&g, &c, 0.5).unwrap();
        let cfg = PropagationConfig {
            tolerance: 1e-12,
            ..Default::default()
        };
        let cg = propagate_linear(&g, &c, &cfg).unwrap();
        for (a, b) in dense.iter().zip(&cg.values) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn enumeration_oracle_examples() {
        let p = MrfProblem {
            unary: vec![[0.0, 1.0], [2.0, 1.0], [1.0, 3.0]],
            pairwise: vec![],
        };
        let (l, e) = enumerate_labelings_oracle(&p).unwrap();
        assert_eq!(
            l.labels,
            vec![Label::Object, Label::Background, Label::Object]
        );
        assert_eq!(e, 2.0);

        let p = MrfProblem {
            unary: vec![[1.0, 1.0]; 5],
            pairwise: vec![],
        };
        assert_eq!(
            enumerate_labelings_oracle(&p).unwrap().0,
            Labeling::uniform(5, Label::Background)
        );

        let p = random_problem(17, 1, 5);
        assert!(enumerate_labelings_oracle(&p).is_err());
    }
}
