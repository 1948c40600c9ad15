//! Binary object/background labelling of the space-time graph.
//!
//! Energy: per-node colour + `λ_o`·semantic unaries, plus Potts pairwise
//! terms `λ_s·w` on spatial and `λ_t·w` on temporal edges, where `w` is the
//! graph affinity. The two-label Potts energy is submodular, so a single
//! s–t minimum cut (one alpha-expansion move) gives the global optimum.

mod maxflow;

use crate::confidence::ConfidenceField;
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::graph::{EdgeKind, SpaceTimeGraph};
use crate::video::{BinaryMask, SuperpixelMap, SuperpixelStats};

pub const DEFAULT_LAMBDA_O: f64 = 10.0;
pub const DEFAULT_LAMBDA_S: f64 = 1000.0;
pub const DEFAULT_LAMBDA_T: f64 = 2000.0;
/// Clamp for semantic confidences before taking logs.
pub const CONFIDENCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Object,
    Background,
}

/// Costs indexed by label: `[object, background]`.
pub type UnaryCost = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseTerm {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfProblem {
    pub unary: Vec<UnaryCost>,
    pub pairwise: Vec<PairwiseTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrfParams {
    pub lambda_o: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
}

impl Default for MrfParams {
    fn default() -> Self {
        Self {
            lambda_o: DEFAULT_LAMBDA_O,
            lambda_s: DEFAULT_LAMBDA_S,
            lambda_t: DEFAULT_LAMBDA_T,
        }
    }
}

impl MrfProblem {
    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn energy(&self, labeling: &Labeling) -> f64 {
        let l = &labeling.labels;
        let unary: f64 = self
            .unary
            .iter()
            .zip(l)
            .map(|(u, &x)| u[(x == Label::Background) as usize])
            .sum();
        let pair: f64 = self
            .pairwise
            .iter()
            .filter(|p| l[p.i] != l[p.j])
            .map(|p| p.weight)
            .sum();
        unary + pair
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.unary.len();
        if self.unary.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("non-finite unary cost".into()));
        }
        for p in &self.pairwise {
            if p.i >= n || p.j >= n || p.i == p.j {
                return Err(Error::InvalidConfig(format!(
                    "bad pairwise term {}-{}",
                    p.i, p.j
                )));
            }
            if !(p.weight >= 0.0 && p.weight.is_finite()) {
                return Err(Error::InvalidConfig(
                    "pairwise weights must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

impl Labeling {
    pub fn uniform(n: usize, label: Label) -> Self {
        Self {
            labels: vec![label; n],
        }
    }

    pub fn object_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Object).count()
    }
}

/// Colour unaries from the per-node two-way posterior of the object and
/// background mixtures.
pub fn color_unary(
    object: &GaussianMixture,
    background: &GaussianMixture,
    color: [f64; 3],
) -> UnaryCost {
    let lo = object.log_likelihood(color);
    let lb = background.log_likelihood(color);
    let m = lo.max(lb);
    let lse = m + (-(lo - lb).abs()).exp().ln_1p();
    [lse - lo, lse - lb]
}

pub fn semantic_unary(confidence: f64) -> UnaryCost {
    let c = confidence.clamp(CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS);
    [-c.ln(), -(1.0 - c).ln()]
}

/// Potts weights from the graph affinities, scaled by edge kind.
pub fn pairwise_weights(graph: &SpaceTimeGraph, params: &MrfParams) -> Vec<PairwiseTerm> {
    graph
        .edges()
        .iter()
        .map(|e| PairwiseTerm {
            i: e.i,
            j: e.j,
            weight: e.weight
                * match e.kind {
                    EdgeKind::Spatial => params.lambda_s,
                    EdgeKind::Temporal => params.lambda_t,
                },
        })
        .collect()
}

pub fn build_problem(
    graph: &SpaceTimeGraph,
    field: &ConfidenceField,
    stats: &SuperpixelStats,
    object: &GaussianMixture,
    background: &GaussianMixture,
    params: &MrfParams,
) -> Result<MrfProblem> {
    let n = graph.num_nodes();
    if field.values.len() != n || stats.records.len() != n {
        return Err(Error::DimensionMismatch(
            "MRF inputs disagree on node count".into(),
        ));
    }
    let unary = field
        .values
        .iter()
        .zip(&stats.records)
        .map(|(&c, rec)| {
            let col = color_unary(object, background, rec.mean_color);
            let sem = semantic_unary(c);
            [
                col[0] + params.lambda_o * sem[0],
                col[1] + params.lambda_o * sem[1],
            ]
        })
        .collect();
    Ok(MrfProblem {
        unary,
        pairwise: pairwise_weights(graph, params),
    })
}

/// Exact minimizer by one s–t minimum cut. Among equal-energy labelings the
/// one with the fewest object nodes is returned, so ties go to background.
pub fn solve_binary(problem: &MrfProblem) -> Result<Labeling> {
    problem.validate()?;
    let n = problem.len();
    let (s, t) = (n, n + 1);
    let mut net = maxflow::FlowNetwork::new(n + 2);
    // source side = object: cutting s→i pays the background cost,
    // cutting i→t pays the object cost
    for (i, &[obj, bg]) in problem.unary.iter().enumerate() {
        if bg > obj {
            net.add_edge(s, i, bg - obj, 0.0);
        } else if obj > bg {
            net.add_edge(i, t, obj - bg, 0.0);
        }
    }
    for p in &problem.pairwise {
        if p.weight > 0.0 {
            net.add_edge(p.i, p.j, p.weight, p.weight);
        }
    }
    net.max_flow(s, t);
    let side = net.source_side(s);
    Ok(Labeling {
        labels: (0..n)
            .map(|i| {
                if side[i] {
                    Label::Object
                } else {
                    Label::Background
                }
            })
            .collect(),
    })
}

/// Per-frame masks with the pixels of object-labelled superpixels set.
pub fn rasterize(labeling: &Labeling, sp: &SuperpixelMap) -> Result<Vec<BinaryMask>> {
    if labeling.labels.len() != sp.num_nodes() {
        return Err(Error::DimensionMismatch(
            "labeling vs superpixel map".into(),
        ));
    }
    Ok((0..sp.frame_count())
        .map(|t| BinaryMask {
            width: sp.width,
            height: sp.height,
            bits: sp
                .labels(t)
                .iter()
                .map(|&l| labeling.labels[sp.node(t, l)] == Label::Object)
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_force(p: &MrfProblem) -> f64 {
        let n = p.len();
        (0u32..1 << n)
            .map(|mask| {
                let l = Labeling {
                    labels: (0..n)
                        .map(|i| {
                            if mask >> i & 1 == 1 {
                                Label::Object
                            } else {
                                Label::Background
                            }
                        })
                        .collect(),
                };
                p.energy(&l)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn unary_only() {
        let p = MrfProblem {
            unary: vec![[0.0, 1.0], [1.0, 0.0]],
            pairwise: vec![],
        };
        assert_eq!(
            solve_binary(&p).unwrap().labels,
            vec![Label::Object, Label::Background]
        );
    }

    #[test]
    fn strong_coupling_follows_total_unary() {
        let pair = |w| {
            vec![PairwiseTerm {
                i: 0,
                j: 1,
                weight: w,
            }]
        };
        let p = MrfProblem {
            unary: vec![[0.0, 1.0], [2.0, 0.0]],
            pairwise: pair(10.0),
        };
        assert_eq!(
            solve_binary(&p).unwrap(),
            Labeling::uniform(2, Label::Background)
        );
        let p = MrfProblem {
            unary: vec![[0.0, 2.0], [1.0, 0.0]],
            pairwise: pair(10.0),
        };
        assert_eq!(
            solve_binary(&p).unwrap(),
            Labeling::uniform(2, Label::Object)
        );
        // equal totals: tie goes to background
        let p = MrfProblem {
            unary: vec![[0.0, 1.0], [1.0, 0.0]],
            pairwise: pair(10.0),
        };
        assert_eq!(
            solve_binary(&p).unwrap(),
            Labeling::uniform(2, Label::Background)
        );
    }

    #[test]
    fn all_equal_costs_are_background() {
        let p = MrfProblem {
            unary: vec![[3.0, 3.0]; 4],
            pairwise: vec![PairwiseTerm {
                i: 0,
                j: 3,
                weight: 1.0,
            }],
        };
        assert_eq!(
            solve_binary(&p).unwrap(),
            Labeling::uniform(4, Label::Background)
        );
    }

    #[test]
    fn unary_examples() {
        let ln2 = 2f64.ln();
        let s = semantic_unary(0.5);
        assert_abs_diff_eq!(s[0], ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], ln2, epsilon = 1e-15);
        assert!(semantic_unary(1.0)[0] < 2e-6);
        assert_abs_diff_eq!(
            semantic_unary(0.0)[0],
            13.815_510_557_964_274,
            epsilon = 1e-9
        );

        let unit = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let a = GaussianMixture::from_parts(&[1.0], &[[0.0; 3]], &[unit]).unwrap();
        let b = GaussianMixture::from_parts(&[1.0], &[[200.0; 3]], &[unit]).unwrap();
        let c = color_unary(&a, &a, [5.0, 5.0, 5.0]);
        assert_abs_diff_eq!(c[0], ln2, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], ln2, epsilon = 1e-12);
        let c = color_unary(&a, &b, [1.0, 0.0, 0.0]);
        assert!(c[0] < 1e-9 && c[1] > 20.0);
        // both densities floored
        let c = color_unary(&a, &b, [100.0, 0.0, 255.0]);
        assert_abs_diff_eq!(c[0], ln2, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], ln2, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_reuses_affinity() {
        let g = SpaceTimeGraph::assemble(
            3,
            [
                Edge {
                    i: 0,
                    j: 1,
                    weight: 1.21306,
                    kind: EdgeKind::Spatial,
                },
                Edge {
                    i: 1,
                    j: 2,
                    weight: 0.5,
                    kind: EdgeKind::Temporal,
                },
            ],
        );
        let unit = MrfParams {
            lambda_o: 1.0,
            lambda_s: 1.0,
            lambda_t: 1.0,
        };
        let w = pairwise_weights(&g, &unit);
        assert_eq!(w[0].weight, 1.21306);
        let w = pairwise_weights(&g, &MrfParams::default());
        assert_eq!(w[0].weight, 1213.06);
        assert_eq!(w[1].weight, 1000.0);

        let p = MrfProblem {
            unary: vec![[0.0; 2]; 3],
            pairwise: pairwise_weights(&g, &unit),
        };
        assert_eq!(p.energy(&Labeling::uniform(3, Label::Object)), 0.0);
        let split = Labeling {
            labels: vec![Label::Object, Label::Background, Label::Background],
        };
        assert_eq!(p.energy(&split), 1.21306);
    }

    #[test]
    fn raster_examples() {
        let sp = SuperpixelMap::from_raw(2, 2, vec![vec![0, 0, 1, 2]]).unwrap();
        assert_eq!(
            rasterize(&Labeling::uniform(3, Label::Object), &sp).unwrap()[0].count(),
            4
        );
        assert_eq!(
            rasterize(&Labeling::uniform(3, Label::Background), &sp).unwrap()[0].count(),
            0
        );
        let one = Labeling {
            labels: vec![Label::Background, Label::Object, Label::Background],
        };
        assert_eq!(rasterize(&one, &sp).unwrap()[0], sp.mask(0, 1));
    }

    #[test]
    fn rejects_negative_weights() {
        let p = MrfProblem {
            unary: vec![[0.0; 2]; 2],
            pairwise: vec![PairwiseTerm {
                i: 0,
                j: 1,
                weight: -1.0,
            }],
        };
        assert!(solve_binary(&p).is_err());
    }

    fn arb_problem() -> impl Strategy<Value = MrfProblem> {
        (2usize..9).prop_flat_map(|n| {
            let unary = proptest::collection::vec((0u32..20, 0u32..20), n);
            let pair = proptest::collection::vec((0..n, 0..n, 0u32..15), 0..20);
            (unary, pair).prop_map(|(u, p)| MrfProblem {
                unary: u.into_iter().map(|(a, b)| [a as f64, b as f64]).collect(),
                pairwise: p
                    .into_iter()
                    .filter(|(i, j, _)| i != j)
                    .map(|(i, j, w)| PairwiseTerm {
                        i,
                        j,
                        weight: w as f64,
                    })
                    .collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn min_cut_is_exact(p in arb_problem()) {
            let l = solve_binary(&p).unwrap();
            prop_assert_eq!(p.energy(&l), brute_force(&p));
        }

        #[test]
        fn never_worse_than_uniform(p in arb_problem()) {
            let e = p.energy(&solve_binary(&p).unwrap());
            prop_assert!(e <= p.energy(&Labeling::uniform(p.len(), Label::Object)));
            prop_assert!(e <= p.energy(&Labeling::uniform(p.len(), Label::Background)));
        }

        #[test]
        fn argmin_scale_invariant(p in arb_problem(), k in 1u32..6) {
            let scaled = MrfProblem {
                unary: p.unary.iter().map(|u| u.map(|c| c * k as f64)).collect(),
                pairwise: p.pairwise.iter().map(|t| PairwiseTerm { weight: t.weight * k as f64, ..*t }).collect(),
            };
            prop_assert_eq!(solve_binary(&p).unwrap(), solve_binary(&scaled).unwrap());
        }

        #[test]
        fn huge_coupling_gives_uniform_labeling(u in proptest::collection::vec((0u32..20, 0u32..20), 2..10)) {
            let n = u.len();
            let unary: Vec<UnaryCost> = u.into_iter().map(|(a, b)| [a as f64, b as f64]).collect();
            let pairwise = (0..n - 1).map(|i| PairwiseTerm { i, j: i + 1, weight: 1e6 }).collect();
            let p = MrfProblem { unary: unary.clone(), pairwise };
            let total_obj: f64 = unary.iter().map(|c| c[0]).sum();
            let total_bg: f64 = unary.iter().map(|c| c[1]).sum();
            let want = if total_obj < total_bg { Label::Object } else { Label::Background };
            prop_assert_eq!(solve_binary(&p).unwrap(), Labeling::uniform(n, want));
        }
    }
}
