//! Confidence adaptation by label propagation on the space-time graph.
//!
//! Minimizes `Σ_ij A_ij (x_i/√d_i − x_j/√d_j)² + μ Σ_i (x_i − c_i)²`. The
//! minimizer solves `(I − (1−η) S) x = η c` with `η = μ/(1+μ)`, which is also
//! the fixed point of `x ← α S x + (1−α) c` for `α = 1/(1+μ)`.

mod cg;

pub use cg::Preconditioner;

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceField, Derivation};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::SpaceTimeGraph;

pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Iterative,
    #[default]
    Linear,
}

impl std::str::FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "iterative" => Ok(Solver::Iterative),
            "linear" => Ok(Solver::Linear),
            _ => Err(format!(
                "unknown solver {s:?} (expected iterative or linear)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub mu: f64,
    pub solver: Solver,
    pub preconditioner: Preconditioner,
    /// Max-norm step size for the iteration, relative 2-norm residual for CG.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub exec: Exec,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            solver: Solver::default(),
            preconditioner: Preconditioner::default(),
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            exec: Exec::default(),
        }
    }
}

impl PropagationConfig {
    pub fn eta(&self) -> f64 {
        self.mu / (1.0 + self.mu)
    }

    pub fn alpha(&self) -> f64 {
        1.0 / (1.0 + self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub solver: Solver,
}

fn inv_sqrt_degree(graph: &SpaceTimeGraph) -> Vec<f64> {
    graph
        .degree()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect()
}

/// The adaptation energy with the double sum over ordered node pairs, so
/// every undirected edge contributes twice.
pub fn energy(x: &[f64], graph: &SpaceTimeGraph, c: &[f64], mu: f64) -> f64 {
    let inv = inv_sqrt_degree(graph);
    let smooth: f64 = graph
        .edges()
        .iter()
        .map(|e| 2.0 * e.weight * (x[e.i] * inv[e.i] - x[e.j] * inv[e.j]).powi(2))
        .sum();
    let fit: f64 = x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
    smooth + mu * fit
}

/// `xᵀ(I − S)x + μ‖x − c‖²`, the quadratic whose stationary point is the
/// linear system solved by [`propagate_linear`]. On graphs without isolated
/// nodes it equals the smoothness term of [`energy`] counted once per edge
/// plus the fit term.
pub fn adaptation_objective(x: &[f64], graph: &SpaceTimeGraph, c: &[f64], mu: f64) -> f64 {
    let sx = graph.normalized().mul_vec(x, Exec::Sequential);
    let quad: f64 = x.iter().zip(&sx).map(|(a, b)| a * (a - b)).sum();
    let fit: f64 = x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
    quad + mu * fit
}

/// `‖x − Sx + μ(x − c)‖∞`, zero at the optimum.
pub fn stationarity_residual(x: &[f64], graph: &SpaceTimeGraph, c: &[f64], mu: f64) -> f64 {
    let sx = graph.normalized().mul_vec(x, Exec::Sequential);
    x.iter()
        .zip(&sx)
        .zip(c)
        .map(|((xi, si), ci)| (xi - si + mu * (xi - ci)).abs())
        .fold(0.0, f64::max)
}

fn check_dims(graph: &SpaceTimeGraph, c: &[f64]) -> Result<()> {
    if c.len() != graph.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "confidence has {} entries, graph has {} nodes",
            c.len(),
            graph.num_nodes()
        )));
    }
    Ok(())
}

/// Diffusion `x ← α S x + (1−α) c` from `x = c` until the max-norm step is
/// within tolerance.
pub fn propagate_iterative(
    graph: &SpaceTimeGraph,
    c: &[f64],
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    cfg.validate()?;
    check_dims(graph, c)?;
    let alpha = cfg.alpha();
    let s = graph.normalized();
    let mut x = c.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut step = f64::INFINITY;
    for it in 1..=cfg.max_iterations {
        s.mul_vec_into(&x, &mut next, cfg.exec);
        step = 0.0;
        for ((n, xi), ci) in next.iter_mut().zip(&x).zip(c) {
            *n = alpha * *n + (1.0 - alpha) * ci;
            step = f64::max(step, (*n - xi).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if step <= cfg.tolerance {
            return Ok(PropagationResult {
                values: x,
                iterations: it,
                residual: step,
                solver: Solver::Iterative,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        residual: step,
        last: x,
    })
}

/// Solves `(I − (1−η) S) x = η c` by preconditioned conjugate gradients.
pub fn propagate_linear(
    graph: &SpaceTimeGraph,
    c: &[f64],
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    cfg.validate()?;
    check_dims(graph, c)?;
    let eta = cfg.eta();
    let b: Vec<f64> = c.iter().map(|v| eta * v).collect();
    let op = cg::ShiftedOperator {
        s: graph.normalized(),
        beta: 1.0 - eta,
    };
    let out = cg::solve(
        &op,
        &b,
        cfg.preconditioner,
        cfg.tolerance,
        cfg.max_iterations,
        cfg.exec,
    );
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            residual: out.residual,
            last: out.x,
        });
    }
    Ok(PropagationResult {
        values: out.x,
        iterations: out.iterations,
        residual: out.residual,
        solver: Solver::Linear,
    })
}

pub fn propagate(
    graph: &SpaceTimeGraph,
    c: &[f64],
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    match cfg.solver {
        Solver::Iterative => propagate_iterative(graph, c, cfg),
        Solver::Linear => propagate_linear(graph, c, cfg),
    }
}

/// Adapts a pooled field over the graph; results are clamped to `[0, 1]`.
pub fn adapt_confidence(
    field: &ConfidenceField,
    graph: &SpaceTimeGraph,
    cfg: &PropagationConfig,
) -> Result<(ConfidenceField, PropagationResult)> {
    let result = propagate(graph, &field.values, cfg)?;
    let values = result.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok((
        ConfidenceField {
            class: field.class.clone(),
            values,
            derivation: Derivation::Adapted,
        },
        result,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeKind};
    use approx::assert_abs_diff_eq;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> SpaceTimeGraph {
        SpaceTimeGraph::assemble(
            n,
            edges.iter().map(|&(i, j, weight)| Edge {
                i,
                j,
                weight,
                kind: EdgeKind::Spatial,
            }),
        )
    }

    #[test]
    fn energy_examples() {
        let empty = graph(2, &[]);
        assert_eq!(energy(&[0.3, 0.7], &empty, &[0.3, 0.7], 0.5), 0.0);
        let pair = graph(2, &[(0, 1, 1.0)]);
        assert_eq!(energy(&[1.0, 1.0], &pair, &[1.0, 1.0], 0.5), 0.0);
        assert_eq!(energy(&[1.0, 0.0], &pair, &[1.0, 0.0], 0.5), 2.0);
    }

    #[test]
    fn one_iteration_by_hand() {
        let pair = graph(2, &[(0, 1, 1.0)]);
        let cfg = PropagationConfig {
            max_iterations: 1,
            tolerance: 10.0,
            ..Default::default()
        };
        let r = propagate_iterative(&pair, &[1.0, 0.0], &cfg).unwrap();
        assert_abs_diff_eq!(r.values[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.values[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_node_fixed_point() {
        let pair = graph(2, &[(0, 1, 1.0)]);
        for solver in [Solver::Iterative, Solver::Linear] {
            let cfg = PropagationConfig {
                solver,
                ..Default::default()
            };
            let r = propagate(&pair, &[1.0, 0.0], &cfg).unwrap();
            assert_abs_diff_eq!(r.values[0], 0.6, epsilon = 1e-7);
            assert_abs_diff_eq!(r.values[1], 0.4, epsilon = 1e-7);
            let r = propagate(&pair, &[0.0, 0.0], &cfg).unwrap();
            assert_eq!(r.values, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn isolated_node_scales_by_eta() {
        let g = graph(3, &[(0, 1, 1.0)]);
        let r = propagate_linear(&g, &[0.0, 0.0, 0.9], &PropagationConfig::default()).unwrap();
        assert_abs_diff_eq!(r.values[2], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn incomplete_cholesky_matches_jacobi() {
        let g = graph(
            5,
            &[
                (0, 1, 1.0),
                (1, 2, 2.0),
                (2, 3, 0.5),
                (3, 4, 1.5),
                (0, 4, 0.7),
                (1, 3, 0.2),
            ],
        );
        let c = [0.9, 0.1, 0.4, 0.8, 0.3];
        let jac = propagate_linear(&g, &c, &PropagationConfig::default()).unwrap();
        let ic = propagate_linear(
            &g,
            &c,
            &PropagationConfig {
                preconditioner: Preconditioner::IncompleteCholesky,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in jac.values.iter().zip(&ic.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        // no fill-in when the star's centre is eliminated last, so IC(0) is exact
        let tree = graph(4, &[(0, 3, 1.0), (1, 3, 2.0), (2, 3, 0.5)]);
        let ic = propagate_linear(
            &tree,
            &[1.0, 0.0, 0.5, 0.2],
            &PropagationConfig {
                preconditioner: Preconditioner::IncompleteCholesky,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ic.iterations, 1);
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let pair = graph(2, &[(0, 1, 1.0)]);
        let cfg = PropagationConfig {
            solver: Solver::Iterative,
            max_iterations: 3,
            ..Default::default()
        };
        match propagate(&pair, &[1.0, 0.0], &cfg) {
            Err(Error::NotConverged {
                iterations,
                last,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last.len(), 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn uniform_field_on_regular_graph_is_fixed() {
        // 6-cycle, equal weights: S has unit row sums
        let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6, 1.0)).collect();
        let g = graph(6, &edges);
        let r = propagate_linear(&g, &[0.7; 6], &PropagationConfig::default()).unwrap();
        for v in r.values {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn disconnected_components_independent() {
        let g = graph(4, &[(0, 1, 1.0), (2, 3, 3.0)]);
        let whole =
            propagate_linear(&g, &[1.0, 0.0, 0.2, 0.6], &PropagationConfig::default()).unwrap();
        let left = propagate_linear(
            &graph(2, &[(0, 1, 1.0)]),
            &[1.0, 0.0],
            &PropagationConfig::default(),
        )
        .unwrap();
        let right = propagate_linear(
            &graph(2, &[(0, 1, 3.0)]),
            &[0.2, 0.6],
            &PropagationConfig::default(),
        )
        .unwrap();
        for (a, b) in whole
            .values
            .iter()
            .zip(left.values.iter().chain(&right.values))
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn adapt_tags_and_clamps() {
        let g = graph(2, &[(0, 1, 1.0)]);
        let field = ConfidenceField {
            class: "cat".into(),
            values: vec![0.0, 0.0],
            derivation: Derivation::Pooled,
        };
        let (out, _) = adapt_confidence(&field, &g, &PropagationConfig::default()).unwrap();
        assert_eq!(out.values, vec![0.0, 0.0]);
        assert_eq!(out.derivation, Derivation::Adapted);
    }

    #[test]
    fn rejects_bad_config() {
        let g = graph(1, &[]);
        let cfg = PropagationConfig {
            mu: 0.0,
            ..Default::default()
        };
        assert!(propagate(&g, &[0.0], &cfg).is_err());
        assert!(propagate(&g, &[0.0, 1.0], &PropagationConfig::default()).is_err());
    }
}
