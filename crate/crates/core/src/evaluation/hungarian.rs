//! Minimum-cost assignment (Kuhn–Munkres with row/column potentials).
//!
//! Rectangular inputs are padded to square with a constant one above the
//! largest entry; pairs touching padding are dropped from the result.

use num_traits::{Bounded, NumCast, Signed, ToPrimitive};

use crate::error::{Result, XconError};

/// Cost types accepted by [`hungarian`]: signed integers and floats.
pub trait Cost: Signed + Bounded + NumCast + ToPrimitive + Copy + PartialOrd {}

impl<T: Signed + Bounded + NumCast + ToPrimitive + Copy + PartialOrd> Cost for T {}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    /// `row_to_col[r]` is the column matched to row `r`, if any.
    pub row_to_col: Vec<Option<usize>>,
    pub total: T,
}

impl<T> Assignment<T> {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Solves the assignment problem for a row-major `rows × cols` cost matrix.
/// Exactly `min(rows, cols)` pairs are returned.
pub fn hungarian<T: Cost>(cost: &[T], rows: usize, cols: usize) -> Result<Assignment<T>> {
    if rows == 0 || cols == 0 {
        return Err(XconError::InvalidArgument("cost matrix must be non-empty".into()));
    }
    if cost.len() != rows * cols {
        return Err(XconError::Shape(format!(
            "cost has {} entries, expected {rows}×{cols}",
            cost.len()
        )));
    }
    let mut max = cost[0];
    for (idx, &c) in cost.iter().enumerate() {
        if !c.to_f64().is_some_and(f64::is_finite) {
            return Err(XconError::NonFiniteCost {
                row: idx / cols,
                col: idx % cols,
            });
        }
        if c > max {
            max = c;
        }
    }

    let size = rows.max(cols);
    let pad = max + T::one();
    let at = |r: usize, c: usize| if r < rows && c < cols { cost[r * cols + c] } else { pad };

    // 1-based potentials; p[j] is the row matched to column j (0 = none).
    let inf = T::max_value();
    let zero = T::zero();
    let mut u = vec![zero; size + 1];
    let mut v = vec![zero; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    let mut total = zero;
    for j in 1..=size {
        let r = p[j] - 1;
        let c = j - 1;
        if r < rows && c < cols {
            row_to_col[r] = Some(c);
            total = total + cost[r * cols + c];
        }
    }
    Ok(Assignment { row_to_col, total })
}
