use semvos::synth::{generate, Shape, SynthConfig};
use semvos::video::{load_masks, load_superpixels, load_video, warp_mask};

fn cfg() -> SynthConfig {
    SynthConfig {
        frames: 8,
        ..Default::default()
    }
}

#[test]
fn written_case_reads_back() {
    let s = generate(&cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.write(dir.path()).unwrap();
    assert_eq!(load_video(&dir.path().join("frames")).unwrap(), s.video);
    assert_eq!(
        load_superpixels(&dir.path().join("superpixels"), 8).unwrap(),
        s.superpixels
    );
    assert_eq!(load_masks(&dir.path().join("gt")).unwrap(), s.ground_truth);
    assert_eq!(load_masks(&dir.path().join("motion")).unwrap(), s.motion);
}

#[test]
fn sparse_annotation_cadence() {
    let s = generate(&SynthConfig {
        gt_every: 3,
        ..cfg()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.write(dir.path()).unwrap();
    let gt = semvos::video::load_indexed_masks(&dir.path().join("gt")).unwrap();
    assert_eq!(gt.keys().copied().collect::<Vec<_>>(), vec![0, 3, 6]);
}

#[test]
fn flow_maps_ground_truth_exactly() {
    for velocity in [[2, 1], [-1, 3], [0, 0]] {
        let s = generate(&SynthConfig {
            velocity,
            origin: [40, 20],
            shape: Shape::Disc { radius: 12 },
            ..cfg()
        })
        .unwrap();
        for t in 1..s.ground_truth.len() {
            let warped = warp_mask(&s.ground_truth[t - 1], &s.flows[t - 1]).unwrap();
            let xor = warped
                .bits
                .iter()
                .zip(&s.ground_truth[t].bits)
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(xor, 0);
        }
    }
}

#[test]
fn motion_cue_is_empty_when_static() {
    let s = generate(&SynthConfig {
        velocity: [0, 0],
        ..cfg()
    })
    .unwrap();
    assert!(s.motion.iter().all(|m| m.count() == 0));
}

#[test]
fn proposals_carry_class_confidences() {
    let c = cfg();
    let s = generate(&c).unwrap();
    assert!(!s.proposals.is_empty());
    for p in &s.proposals {
        let conf = p.entry.confidences[&c.class];
        assert!((0.0..=1.0).contains(&conf));
        assert!(p.entry.appearance >= 0.0);
        assert!(p.mask.count() > 0);
    }
}
