//! Small per-sample matrices kept as one `[batch, 1]` tape column per entry.
//!
//! Mass and dissipation matrices are at most a few rows wide, so entrywise
//! column arithmetic on the tape is cheaper and simpler than batched 3-D ops.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct BatchMat<'t, T> {
    rows: usize,
    cols: usize,
    entries: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BatchMat<'t, T> {
    /// `entries` in row-major order.
    pub fn new(rows: usize, cols: usize, entries: Vec<Var<'t, T>>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count");
        Self { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> Var<'t, T> {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[Var<'t, T>] {
        &self.entries
    }

    pub fn matvec(&self, v: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                op: "batch-matvec",
                shapes: vec![vec![self.rows, self.cols], vec![v.len()]],
            });
        }
        (0..self.rows)
            .map(|i| {
                let mut acc = self.at(i, 0).mul(v[0])?;
                for (j, &vj) in v.iter().enumerate().skip(1) {
                    acc = acc.add(self.at(i, j).mul(vj)?)?;
                }
                Ok(acc)
            })
            .collect()
    }

    /// Solve `A x = b` per sample by elimination without pivoting; intended
    /// for symmetric positive definite `A`.
    pub fn solve(&self, b: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        let n = self.rows;
        if self.cols != n || b.len() != n {
            return Err(Error::ShapeMismatch {
                op: "batch-solve",
                shapes: vec![vec![self.rows, self.cols], vec![b.len()]],
            });
        }
        let mut a: Vec<Vec<Var<'t, T>>> = (0..n).map(|i| (0..n).map(|j| self.at(i, j)).collect()).collect();
        let mut rhs = b.to_vec();
        let mut pivots_inv = Vec::with_capacity(n);
        for k in 0..n {
            let inv = a[k][k].recip()?;
            pivots_inv.push(inv);
            for i in k + 1..n {
                let f = a[i][k].mul(inv)?;
                for j in k + 1..n {
                    a[i][j] = a[i][j].sub(f.mul(a[k][j])?)?;
                }
                rhs[i] = rhs[i].sub(f.mul(rhs[k])?)?;
            }
        }
        let mut x: Vec<Option<Var<'t, T>>> = vec![None; n];
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for j in i + 1..n {
                acc = acc.sub(a[i][j].mul(x[j].expect("solved"))?)?;
            }
            x[i] = Some(acc.mul(pivots_inv[i])?);
        }
        Ok(x.into_iter().map(|v| v.expect("solved")).collect())
    }

    /// Sample `row` as an `[rows, cols]` tensor.
    pub fn to_matrix(&self, row: usize) -> Result<Var<'t, T>> {
        let tape = self.entries[0].tape();
        let picked: Vec<Var<'t, T>> = self
            .entries
            .iter()
            .map(|e| {
                let b = e.shape()[0];
                if b == 1 {
                    Ok(*e)
                } else {
                    e.transpose()?.slice(row, row + 1)?.transpose()
                }
            })
            .collect::<Result<_>>()?;
        tape.concat(&picked)?.reshape(&[self.rows, self.cols])
    }
}

/// Split `[batch, k]` into `k` columns.
pub fn columns<'t, T: Scalar>(x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
    let k = x.shape()[1];
    (0..k).map(|j| x.col(j)).collect()
}

/// Join `[batch, 1]` columns back into `[batch, k]`.
pub fn join<'t, T: Scalar>(tape: &'t Tape<T>, cols: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    if cols.len() == 1 {
        return Ok(cols[0]);
    }
    tape.concat(cols)
}

/// Per-sample dot product of two column lists.
pub fn dot<'t, T: Scalar>(a: &[Var<'t, T>], b: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let mut acc = a[0].mul(b[0])?;
    for (x, y) in a.iter().zip(b).skip(1) {
        acc = acc.add(x.mul(*y)?)?;
    }
    Ok(acc)
}
