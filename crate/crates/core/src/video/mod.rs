//! Videos, superpixel partitions, optical flow and binary masks.

mod flow;
pub mod pnm;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::Exec;

pub use flow::{load_flow, write_flow, FLOW_MAGIC};
use pnm::{Pnm, Samples};

pub type Rgb = [u8; 3];

/// Optional file listing frame filenames in order, overriding directory order.
pub const FRAME_MANIFEST: &str = "frames.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoVolume {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<Rgb>>,
}

impl VideoVolume {
    pub fn new(width: usize, height: usize, frames: Vec<Vec<Rgb>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidConfig("video has no frames".into()));
        }
        if frames.iter().any(|f| f.len() != width * height) {
            return Err(Error::DimensionMismatch("frame buffer size".into()));
        }
        Ok(Self {
            width,
            height,
            frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn to_pnm(&self) -> Pnm {
        Pnm {
            width: self.width,
            height: self.height,
            samples: Samples::Gray8(self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn uniform(width: usize, height: usize, v: [f32; 2]) -> Self {
        Self {
            width,
            height,
            vectors: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        self.vectors[y * self.width + x]
    }
}

/// Per-frame superpixel label images with contiguous labels `0..count`.
///
/// Superpixels of all frames are also addressed by a global node id:
/// frame `t`, label `l` maps to `offsets[t] + l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<Vec<u32>>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl SuperpixelMap {
    /// Builds a map from raw label images, remapping each frame's labels to
    /// `0..count` in ascending order of the original values.
    pub fn from_raw(width: usize, height: usize, raw: Vec<Vec<u32>>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidConfig("superpixel map has no frames".into()));
        }
        let mut labels = Vec::with_capacity(raw.len());
        let mut counts = Vec::with_capacity(raw.len());
        for frame in raw {
            if frame.len() != width * height {
                return Err(Error::DimensionMismatch(
                    "superpixel label image size".into(),
                ));
            }
            let mut distinct = frame.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let contiguous = distinct.iter().enumerate().all(|(i, &l)| i as u32 == l);
            let remapped = if contiguous {
                frame
            } else {
                let lut: BTreeMap<u32, u32> = distinct
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (l, i as u32))
                    .collect();
                frame.iter().map(|l| lut[l]).collect()
            };
            counts.push(distinct.len());
            labels.push(remapped);
        }
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for c in &counts {
            acc += c;
            offsets.push(acc);
        }
        Ok(Self {
            width,
            height,
            labels,
            counts,
            offsets,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self, frame: usize) -> &[u32] {
        &self.labels[frame]
    }

    pub fn count(&self, frame: usize) -> usize {
        self.counts[frame]
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, frame: usize) -> usize {
        self.offsets[frame]
    }

    #[inline]
    pub fn node(&self, frame: usize, label: u32) -> usize {
        self.offsets[frame] + label as usize
    }

    /// Inverse of [`SuperpixelMap::node`].
    pub fn locate(&self, node: usize) -> (usize, u32) {
        let frame = self.offsets.partition_point(|&o| o <= node) - 1;
        (frame, (node - self.offsets[frame]) as u32)
    }

    pub fn mask(&self, frame: usize, label: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels[frame].iter().map(|&l| l == label).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelStat {
    pub frame: usize,
    pub pixel_count: usize,
    pub mean_color: [f64; 3],
    /// Mean pixel coordinate `(x, y)`.
    pub centroid: [f64; 2],
}

/// Statistics for every superpixel, indexed by global node id.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelStats {
    pub records: Vec<SuperpixelStat>,
}

pub fn compute_superpixel_stats(
    video: &VideoVolume,
    sp: &SuperpixelMap,
    exec: Exec,
) -> Result<SuperpixelStats> {
    if video.width != sp.width || video.height != sp.height {
        return Err(Error::DimensionMismatch("video vs superpixel map".into()));
    }
    if video.frame_count() != sp.frame_count() {
        return Err(Error::FrameCount {
            what: "superpixel maps",
            expected: video.frame_count(),
            found: sp.frame_count(),
        });
    }
    let w = sp.width;
    let per_frame = exec.map_range(sp.frame_count(), |t| {
        let n = sp.count(t);
        let mut count = vec![0usize; n];
        let mut color = vec![[0f64; 3]; n];
        let mut pos = vec![[0f64; 2]; n];
        for (i, (&l, px)) in sp.labels(t).iter().zip(&video.frames[t]).enumerate() {
            let l = l as usize;
            count[l] += 1;
            for c in 0..3 {
                color[l][c] += px[c] as f64;
            }
            pos[l][0] += (i % w) as f64;
            pos[l][1] += (i / w) as f64;
        }
        (0..n)
            .map(|l| {
                let k = count[l] as f64;
                SuperpixelStat {
                    frame: t,
                    pixel_count: count[l],
                    mean_color: color[l].map(|c| c / k),
                    centroid: pos[l].map(|p| p / k),
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(SuperpixelStats {
        records: per_frame.into_iter().flatten().collect(),
    })
}

/// Forward-warps a mask by nearest-integer displacement. Destinations
/// outside the frame are dropped; coinciding destinations merge.
pub fn warp_mask(mask: &BinaryMask, flow: &FlowField) -> Result<BinaryMask> {
    if mask.width != flow.width || mask.height != flow.height {
        return Err(Error::DimensionMismatch("mask vs flow".into()));
    }
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            if let Some((tx, ty)) = warp_point(x, y, flow.at(x, y), mask.width, mask.height) {
                out.set(tx, ty, true);
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn warp_point(
    x: usize,
    y: usize,
    v: [f32; 2],
    width: usize,
    height: usize,
) -> Option<(usize, usize)> {
    let tx = (x as f64 + v[0] as f64).round();
    let ty = (y as f64 + v[1] as f64).round();
    if tx < 0.0 || ty < 0.0 || tx >= width as f64 || ty >= height as f64 {
        None
    } else {
        Some((tx as usize, ty as usize))
    }
}

/// Lists the frame files of a directory: the names in `frames.txt` when
/// present, otherwise every file with one of `exts` in lexicographic order.
pub fn list_frame_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(FRAME_MANIFEST);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| dir.join(l))
            .collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if path.is_file() && matches {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn read_rgb_frame(path: &Path) -> Result<(usize, usize, Vec<Rgb>)> {
    let img = pnm::read(path)?;
    let px = match img.samples {
        Samples::Rgb8(v) => v,
        Samples::Gray8(v) => v.into_iter().map(|g| [g, g, g]).collect(),
        Samples::Gray16(_) => return Err(Error::format(path, "expected an 8-bit frame")),
    };
    Ok((img.width, img.height, px))
}

/// Loads a directory of PPM/PGM frames.
pub fn load_video(dir: &Path) -> Result<VideoVolume> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "video directory not found"),
        ));
    }
    let files = list_frame_files(dir, &["ppm", "pgm"])?;
    if files.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut dims = None;
    for f in &files {
        let (w, h, px) = read_rgb_frame(f)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {w}x{h}, expected {}x{}",
                    f.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        frames.push(px);
    }
    let (width, height) = dims.unwrap();
    Ok(VideoVolume {
        width,
        height,
        frames,
    })
}

/// Loads per-frame 16-bit label images.
pub fn load_superpixels(dir: &Path, expected_frames: usize) -> Result<SuperpixelMap> {
    let files = list_frame_files(dir, &["pgm"])?;
    if files.len() != expected_frames {
        return Err(Error::FrameCount {
            what: "superpixel maps",
            expected: expected_frames,
            found: files.len(),
        });
    }
    let mut raw = Vec::with_capacity(files.len());
    let mut dims = None;
    for f in &files {
        let img = pnm::read(f)?;
        let labels: Vec<u32> = match img.samples {
            Samples::Gray16(v) => v.into_iter().map(u32::from).collect(),
            Samples::Gray8(v) => v.into_iter().map(u32::from).collect(),
            Samples::Rgb8(_) => return Err(Error::format(f, "expected a grayscale label image")),
        };
        if *dims.get_or_insert((img.width, img.height)) != (img.width, img.height) {
            return Err(Error::DimensionMismatch(format!("{}", f.display())));
        }
        raw.push(labels);
    }
    let (w, h) = dims.unwrap_or((0, 0));
    SuperpixelMap::from_raw(w, h, raw)
}

pub fn write_superpixel_frame(path: &Path, sp: &SuperpixelMap, frame: usize) -> Result<()> {
    let samples = sp
        .labels(frame)
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::format(path, "label exceeds 16 bits")))
        .collect::<Result<Vec<_>>>()?;
    pnm::write(
        path,
        &Pnm {
            width: sp.width,
            height: sp.height,
            samples: Samples::Gray16(samples),
        },
    )
}

/// Loads one flow file per consecutive frame pair.
pub fn load_flows(dir: &Path, expected: usize) -> Result<Vec<FlowField>> {
    let files = list_frame_files(dir, &["flo"])?;
    if files.len() != expected {
        return Err(Error::FrameCount {
            what: "flow files",
            expected,
            found: files.len(),
        });
    }
    files.iter().map(|f| load_flow(f)).collect()
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = pnm::read(path)?;
    let bits = match img.samples {
        Samples::Gray8(v) => v.into_iter().map(|g| g != 0).collect(),
        Samples::Gray16(v) => v.into_iter().map(|g| g != 0).collect(),
        Samples::Rgb8(v) => v.into_iter().map(|p| p != [0, 0, 0]).collect(),
    };
    Ok(BinaryMask {
        width: img.width,
        height: img.height,
        bits,
    })
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    pnm::write(path, &mask.to_pnm())
}

pub fn write_frame(path: &Path, width: usize, height: usize, px: &[Rgb]) -> Result<()> {
    pnm::write(
        path,
        &Pnm {
            width,
            height,
            samples: Samples::Rgb8(px.to_vec()),
        },
    )
}

/// Loads all masks of a directory in frame order.
pub fn load_masks(dir: &Path) -> Result<Vec<BinaryMask>> {
    list_frame_files(dir, &["pgm"])?
        .iter()
        .map(|f| load_mask(f))
        .collect()
}

/// Loads masks keyed by the frame index encoded in the trailing digits of
/// each file stem (`00010.pgm`, `gt_10.pgm`). Used for sparsely annotated
/// ground truth.
pub fn load_indexed_masks(dir: &Path) -> Result<BTreeMap<usize, BinaryMask>> {
    let mut out = BTreeMap::new();
    for f in list_frame_files(dir, &["pgm"])? {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let digits: String = stem
            .chars()
            .rev()
            .take_while(char::is_ascii_digit)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let index = digits
            .parse::<usize>()
            .map_err(|_| Error::format(&f, "mask filename carries no frame index"))?;
        out.insert(index, load_mask(&f)?);
    }
    Ok(out)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_gray(path: &Path, w: usize, h: usize, v: u8) {
        pnm::write(
            path,
            &Pnm {
                width: w,
                height: h,
                samples: Samples::Gray8(vec![v; w * h]),
            },
        )
        .unwrap();
    }

    fn write_labels(path: &Path, w: usize, h: usize, labels: &[u16]) {
        pnm::write(
            path,
            &Pnm {
                width: w,
                height: h,
                samples: Samples::Gray16(labels.to_vec()),
            },
        )
        .unwrap();
    }

    #[test]
    fn load_three_frames() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_gray(&dir.path().join(format!("{i:03}.pgm")), 8, 8, 10 * i as u8);
        }
        let v = load_video(dir.path()).unwrap();
        assert_eq!((v.frame_count(), v.width, v.height), (3, 8, 8));
        assert_eq!(v.frames[2][0], [20, 20, 20]);
    }

    #[test]
    fn empty_video_dir() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_video(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no frames"));
    }

    #[test]
    fn mixed_frame_sizes() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("a.pgm"), 8, 8, 0);
        write_gray(&dir.path().join("b.pgm"), 16, 16, 0);
        let err = load_video(dir.path()).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn frame_manifest_overrides_order() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("a.pgm"), 2, 2, 1);
        write_gray(&dir.path().join("b.pgm"), 2, 2, 2);
        fs::write(dir.path().join(FRAME_MANIFEST), "b.pgm\na.pgm\n").unwrap();
        let v = load_video(dir.path()).unwrap();
        assert_eq!(v.frames[0][0], [2, 2, 2]);
    }

    #[test]
    fn superpixels_contiguous_and_remapped() {
        let dir = tempfile::tempdir().unwrap();
        write_labels(&dir.path().join("0.pgm"), 2, 2, &[0, 0, 1, 1]);
        let sp = load_superpixels(dir.path(), 1).unwrap();
        assert_eq!(sp.count(0), 2);

        let dir = tempfile::tempdir().unwrap();
        write_labels(&dir.path().join("0.pgm"), 2, 2, &[5, 5, 9, 9]);
        let sp = load_superpixels(dir.path(), 1).unwrap();
        assert_eq!(sp.labels(0), &[0, 0, 1, 1]);
        assert_eq!(sp.count(0), 2);
    }

    #[test]
    fn superpixel_frame_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_labels(&dir.path().join("0.pgm"), 2, 2, &[0; 4]);
        write_labels(&dir.path().join("1.pgm"), 2, 2, &[0; 4]);
        assert!(matches!(
            load_superpixels(dir.path(), 3),
            Err(Error::FrameCount {
                expected: 3,
                found: 2,
                ..
            })
        ));
    }

    #[test]
    fn node_ids_roundtrip() {
        let sp = SuperpixelMap::from_raw(2, 1, vec![vec![0, 1], vec![0, 0], vec![3, 1]]).unwrap();
        assert_eq!(sp.num_nodes(), 5);
        for n in 0..5 {
            let (t, l) = sp.locate(n);
            assert_eq!(sp.node(t, l), n);
        }
        assert_eq!(sp.locate(2), (1, 0));
    }

    #[test]
    fn stats_uniform_red() {
        let video = VideoVolume::new(5, 3, vec![vec![[255, 0, 0]; 15]]).unwrap();
        let sp = SuperpixelMap::from_raw(5, 3, vec![vec![0; 15]]).unwrap();
        let s = compute_superpixel_stats(&video, &sp, Exec::Sequential).unwrap();
        assert_eq!(s.records[0].mean_color, [255.0, 0.0, 0.0]);
        assert_eq!(s.records[0].centroid, [2.0, 1.0]);
    }

    #[test]
    fn stats_mean_and_single_pixels() {
        let video = VideoVolume::new(2, 1, vec![vec![[0, 0, 0], [255, 255, 255]]]).unwrap();
        let one = SuperpixelMap::from_raw(2, 1, vec![vec![0, 0]]).unwrap();
        let s = compute_superpixel_stats(&video, &one, Exec::Sequential).unwrap();
        assert_eq!(s.records[0].mean_color, [127.5; 3]);

        let two = SuperpixelMap::from_raw(2, 1, vec![vec![0, 1]]).unwrap();
        let s = compute_superpixel_stats(&video, &two, Exec::Sequential).unwrap();
        assert_eq!(s.records[0].pixel_count, 1);
        assert_eq!(s.records[1].pixel_count, 1);
        assert_eq!(s.records[0].centroid, [0.0, 0.0]);
        assert_eq!(s.records[1].centroid, [1.0, 0.0]);
    }

    #[test]
    fn warp_translation_clip_union() {
        let mut m = BinaryMask::new(4, 4);
        m.set(1, 1, true);
        let flow = FlowField::uniform(4, 4, [1.0, 0.0]);
        let w = warp_mask(&m, &flow).unwrap();
        assert!(w.get(2, 1));
        assert_eq!(w.count(), 1);

        let mut m = BinaryMask::new(4, 4);
        m.set(3, 3, true);
        assert_eq!(warp_mask(&m, &flow).unwrap().count(), 0);

        let mut m = BinaryMask::new(4, 4);
        m.set(0, 0, true);
        m.set(1, 0, true);
        let mut flow = FlowField::uniform(4, 4, [0.0, 0.0]);
        flow.vectors[0] = [2.0, 0.0];
        flow.vectors[1] = [1.0, 0.0];
        let w = warp_mask(&m, &flow).unwrap();
        assert_eq!(w.count(), 1);
        assert!(w.get(2, 0));
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h).prop_map(move |bits| BinaryMask {
                width: w,
                height: h,
                bits,
            })
        })
    }

    proptest! {
        #[test]
        fn zero_flow_is_identity(m in arb_mask()) {
            let flow = FlowField::uniform(m.width, m.height, [0.0, 0.0]);
            prop_assert_eq!(warp_mask(&m, &flow).unwrap(), m);
        }

        #[test]
        fn warp_never_grows(m in arb_mask(), dx in -3.0f32..3.0, dy in -3.0f32..3.0) {
            let flow = FlowField::uniform(m.width, m.height, [dx, dy]);
            prop_assert!(warp_mask(&m, &flow).unwrap().count() <= m.count());
        }

        #[test]
        fn remap_preserves_partition(raw in proptest::collection::vec(0u32..500, 12)) {
            let sp = SuperpixelMap::from_raw(4, 3, vec![raw.clone()]).unwrap();
            let l = sp.labels(0);
            for i in 0..12 {
                for j in 0..12 {
                    prop_assert_eq!(raw[i] == raw[j], l[i] == l[j]);
                }
            }
            prop_assert!(l.iter().all(|&x| (x as usize) < sp.count(0)));
        }

        #[test]
        fn stats_pixel_counts_sum(raw in proptest::collection::vec(0u32..6, 20)) {
            let video = VideoVolume::new(5, 4, vec![vec![[1, 2, 3]; 20]]).unwrap();
            let sp = SuperpixelMap::from_raw(5, 4, vec![raw]).unwrap();
            let s = compute_superpixel_stats(&video, &sp, Exec::Sequential).unwrap();
            prop_assert_eq!(s.records.iter().map(|r| r.pixel_count).sum::<usize>(), 20);
        }
    }
}
