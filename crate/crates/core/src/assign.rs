//! One-shot permutation decoding as minimum-cost bipartite matching.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::provider::{LogitsProvider, MaskQuery, PromptContext};
use crate::types::{CostMatrix, Permutation};

/// Largest size accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_MAX: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub permutation: Permutation,
    /// `sum_i C[i, perm[i]]` in row order.
    pub total_cost: f64,
    pub matrix_checksum: String,
}

/// Hex SHA-256 over the little-endian bytes of the matrix entries.
pub fn matrix_checksum(c: &CostMatrix) -> String {
    let mut hasher = Sha256::new();
    hasher.update((c.rows() as u64).to_le_bytes());
    hasher.update((c.cols() as u64).to_le_bytes());
    for x in c.data() {
        hasher.update(x.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn check_square(c: &CostMatrix) -> Result<usize> {
    if !c.is_square() {
        return Err(Error::validation(format!(
            "cost matrix must be square, got {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    if c.rows() == 0 {
        return Err(Error::validation("cost matrix is empty"));
    }
    if c.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("cost matrix has non-finite entries"));
    }
    Ok(c.rows())
}

/// Two solutions whose costs differ by at most this much are co-optimal.
fn tie_tolerance(c: &CostMatrix) -> f64 {
    let scale = c.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    1e-9 * scale * c.rows() as f64
}

struct Solution {
    /// row -> column, in the sub-problem's local indices.
    assignment: Vec<usize>,
    row_dual: Vec<f64>,
    col_dual: Vec<f64>,
}

/// Shortest-augmenting-path Hungarian method with potentials, O(n^3).
/// `cost(i, j)` is queried on local indices `0..n`.
fn solve(n: usize, cost: impl Fn(usize, usize) -> f64) -> Solution {
    // 1-based internally; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Solution {
        assignment,
        row_dual: u[1..].to_vec(),
        col_dual: v[1..].to_vec(),
    }
}

/// Minimum-cost assignment of rows (rank positions) to columns (identifiers).
///
/// Among co-optimal assignments the lexicographically smallest mapping is
/// returned: rows are fixed in order, each to the smallest column that still
/// admits an optimal completion. Columns with positive reduced cost under the
/// optimal duals can never be co-optimal and are skipped without re-solving.
pub fn hungarian(c: &CostMatrix) -> Result<AssignmentResult> {
    let n = check_square(c)?;
    let tol = tie_tolerance(c);
    let full = solve(n, |i, j| c.get(i, j));
    let mut assignment = full.assignment;
    let optimum = c.total(&assignment);

    let mut col_used = vec![false; n];
    for i in 0..n {
        let current = assignment[i];
        for j in 0..current {
            if col_used[j] || c.get(i, j) - full.row_dual[i] - full.col_dual[j] > tol {
                continue;
            }
            let rest_rows: Vec<usize> = (i + 1..n).collect();
            let rest_cols: Vec<usize> = (0..n).filter(|&k| !col_used[k] && k != j).collect();
            let sub = solve(rest_rows.len(), |a, b| c.get(rest_rows[a], rest_cols[b]));
            let mut candidate = assignment[..i].to_vec();
            candidate.push(j);
            candidate.extend(sub.assignment.iter().map(|&b| rest_cols[b]));
            if c.total(&candidate) <= optimum + tol {
                assignment = candidate;
                break;
            }
        }
        col_used[assignment[i]] = true;
    }
    let total_cost = c.total(&assignment);
    Ok(AssignmentResult {
        permutation: Permutation::new(assignment)?,
        total_cost,
        matrix_checksum: matrix_checksum(c),
    })
}

/// Exhaustive search with the same co-optimal tie rule as [`hungarian`].
pub fn brute_force_assignment(c: &CostMatrix) -> Result<AssignmentResult> {
    let n = check_square(c)?;
    if n > BRUTE_FORCE_MAX {
        return Err(Error::validation(format!(
            "brute force supports n <= {BRUTE_FORCE_MAX}, got {n}"
        )));
    }
    let tol = tie_tolerance(c);

    fn walk(
        c: &CostMatrix,
        row: usize,
        partial: f64,
        used: &mut [bool],
        prefix: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize], f64) -> bool,
    ) -> bool {
        let n = used.len();
        if row == n {
            return visit(prefix, partial);
        }
        for j in 0..n {
            if used[j] {
                continue;
            }
            used[j] = true;
            prefix.push(j);
            let stop = walk(c, row + 1, partial + c.get(row, j), used, prefix, visit);
            prefix.pop();
            used[j] = false;
            if stop {
                return true;
            }
        }
        false
    }

    let mut best = f64::INFINITY;
    walk(
        c,
        0,
        0.0,
        &mut vec![false; n],
        &mut Vec::new(),
        &mut |_, cost| {
            best = best.min(cost);
            false
        },
    );
    let mut chosen = Vec::new();
    walk(
        c,
        0,
        0.0,
        &mut vec![false; n],
        &mut Vec::new(),
        &mut |perm, cost| {
            if cost <= best + tol {
                chosen = perm.to_vec();
                true
            } else {
                false
            }
        },
    );
    let total_cost = c.total(&chosen);
    Ok(AssignmentResult {
        permutation: Permutation::new(chosen)?,
        total_cost,
        matrix_checksum: matrix_checksum(c),
    })
}

/// Single provider call with every slot masked and every identifier allowed,
/// then `C = -ln(P + floor)` and [`hungarian`].
pub fn decode_assign<P: LogitsProvider + ?Sized>(
    ctx: &PromptContext,
    provider: &P,
) -> Result<AssignmentResult> {
    let n = ctx.len();
    if n == 0 {
        return Err(Error::validation("cannot assign zero documents"));
    }
    let mq = MaskQuery {
        masked_positions: (0..n).collect(),
        allowed_tokens: ctx.labels().map(String::from).collect(),
        filled_slots: Vec::new(),
    };
    let resp = provider.provide(ctx, &mq)?;
    hungarian(&CostMatrix::from_probs(&resp.rows))
}
