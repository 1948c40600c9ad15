//! Preconditioned conjugate gradients for `(I − βS) x = b`.

use crate::exec::Exec;
use crate::graph::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    #[default]
    Jacobi,
    IncompleteCholesky,
}

/// System matrix `I − βS` for a symmetric `S` with zero diagonal.
pub(crate) struct ShiftedOperator<'a> {
    pub s: &'a CsrMatrix,
    pub beta: f64,
}

impl ShiftedOperator<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64], exec: Exec) {
        let (s, beta) = (self.s, self.beta);
        exec.fill(y, |i| {
            x[i] - beta * s.row(i).map(|(j, v)| v * x[j]).sum::<f64>()
        });
    }

    fn diagonal(&self, i: usize) -> f64 {
        1.0 - self.beta * self.s.get(i, i)
    }
}

/// Zero-fill incomplete Cholesky factor, lower triangle by rows with the
/// diagonal stored last in each row.
struct IncompleteCholesky {
    rows: Vec<Vec<(usize, f64)>>,
}

impl IncompleteCholesky {
    fn new(op: &ShiftedOperator) -> Self {
        let n = op.s.dim();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<(usize, f64)> =
                op.s.row(i)
                    .filter(|&(k, _)| k < i)
                    .map(|(k, v)| (k, -op.beta * v))
                    .collect();
            for idx in 0..row.len() {
                let k = row[idx].0;
                let lk = &rows[k];
                // sparse dot of the already-computed parts of rows i and k
                let (mut a, mut b, mut dot) = (0, 0, 0.0);
                while a < idx && b + 1 < lk.len() {
                    match row[a].0.cmp(&lk[b].0) {
                        std::cmp::Ordering::Less => a += 1,
                        std::cmp::Ordering::Greater => b += 1,
                        std::cmp::Ordering::Equal => {
                            dot += row[a].1 * lk[b].1;
                            a += 1;
                            b += 1;
                        }
                    }
                }
                let diag_k = lk.last().unwrap().1;
                row[idx].1 = (row[idx].1 - dot) / diag_k;
            }
            let sq: f64 = row.iter().map(|(_, v)| v * v).sum();
            let pivot = op.diagonal(i) - sq;
            // fall back to the unfactored diagonal if the pivot breaks down
            let d = if pivot > 1e-12 {
                pivot.sqrt()
            } else {
                op.diagonal(i).max(1e-12).sqrt()
            };
            row.push((i, d));
            rows.push(row);
        }
        Self { rows }
    }

    fn solve(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        for i in 0..n {
            let row = &self.rows[i];
            let (diag, off) = row.split_last().unwrap();
            let s: f64 = off.iter().map(|&(k, v)| v * z[k]).sum();
            z[i] = (r[i] - s) / diag.1;
        }
        for i in (0..n).rev() {
            let row = &self.rows[i];
            let (diag, off) = row.split_last().unwrap();
            z[i] /= diag.1;
            let zi = z[i];
            for &(k, v) in off {
                z[k] -= v * zi;
            }
        }
    }
}

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖b − Mx‖₂ / ‖b‖₂`.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn solve(
    op: &ShiftedOperator,
    b: &[f64],
    precond: Preconditioner,
    tol: f64,
    max_iter: usize,
    exec: Exec,
) -> CgOutcome {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return CgOutcome {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let ic =
        matches!(precond, Preconditioner::IncompleteCholesky).then(|| IncompleteCholesky::new(op));
    let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / op.diagonal(i)).collect();
    let apply_precond = |r: &[f64], z: &mut [f64]| match &ic {
        Some(ic) => ic.solve(r, z),
        None => z
            .iter_mut()
            .zip(r)
            .zip(&inv_diag)
            .for_each(|((z, r), d)| *z = r * d),
    };

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut residual = 1.0;
    for it in 1..=max_iter {
        op.apply(&p, &mut ap, exec);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= tol {
            return CgOutcome {
                x,
                iterations: it,
                residual,
                converged: true,
            };
        }
        apply_precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        x,
        iterations: max_iter,
        residual,
        converged: false,
    }
}
