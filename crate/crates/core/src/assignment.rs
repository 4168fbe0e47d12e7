//! One-to-one matching of predictions to ground truth.
//!
//! The matching cost combines the L1 distance between centers with a focal
//! classification cost. Rectangular problems match `min(rows, cols)` pairs;
//! leftover predictions play the role of the "no object" class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, Point2D};

/// Largest `min(rows, cols)` the exhaustive solver accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;
const BRUTE_FORCE_MAX_INJECTIONS: u128 = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            epsilon: 1e-8,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha)
            || self.gamma.is_nan()
            || self.gamma < 0.0
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "focal parameters need alpha in [0,1], gamma >= 0, epsilon > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `-alpha (1-p)^gamma log(p + eps)`: loss for treating `p` as a positive.
    pub fn positive(&self, p: f64) -> f64 {
        -self.alpha * (1.0 - p).powf(self.gamma) * (p + self.epsilon).ln()
    }

    /// `-(1-alpha) p^gamma log(1 - p + eps)`: loss for treating `p` as a negative.
    pub fn negative(&self, p: f64) -> f64 {
        -(1.0 - self.alpha) * p.powf(self.gamma) * (1.0 - p + self.epsilon).ln()
    }

    pub fn positive_derivative(&self, p: f64) -> f64 {
        let q = 1.0 - p;
        let modulation = if self.gamma == 0.0 {
            0.0
        } else {
            self.gamma * q.powf(self.gamma - 1.0)
        };
        self.alpha * modulation * (p + self.epsilon).ln()
            - self.alpha * q.powf(self.gamma) / (p + self.epsilon)
    }

    pub fn negative_derivative(&self, p: f64) -> f64 {
        let modulation = if self.gamma == 0.0 {
            0.0
        } else {
            self.gamma * p.powf(self.gamma - 1.0)
        };
        -(1.0 - self.alpha)
            * (modulation * (1.0 - p + self.epsilon).ln()
                - p.powf(self.gamma) / (1.0 - p + self.epsilon))
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

/// Classification part of the matching cost, `L_pos(p) - L_neg(p)`.
///
/// Decreasing in `p`: confident predictions are cheaper to match.
pub fn focal_match_cost(p: f64, params: &FocalParams) -> Result<f64> {
    check_probability(p)?;
    Ok(params.positive(p) - params.negative(p))
}

/// Dense row-major cost matrix; rows are predictions, columns ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "cost matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cost matrix entry {v} is not finite"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(pred_index, gt_index)`, ascending by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    /// Builds the result from a row -> column map, summing costs in row order.
    fn from_assignment(costs: &CostMatrix, row_to_col: &[Option<usize>]) -> Self {
        let mut pairs = Vec::new();
        let mut unmatched_preds = Vec::new();
        let mut col_used = vec![false; costs.cols];
        let mut total_cost = 0.0;
        for (row, col) in row_to_col.iter().enumerate() {
            match *col {
                Some(col) => {
                    pairs.push((row, col));
                    col_used[col] = true;
                    total_cost += costs.get(row, col);
                }
                None => unmatched_preds.push(row),
            }
        }
        let unmatched_gts = col_used
            .iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .map(|(j, _)| j)
            .collect();
        Self {
            pairs,
            unmatched_preds,
            unmatched_gts,
            total_cost,
        }
    }

    /// Ground-truth index matched to each prediction, if any.
    pub fn pred_to_gt(&self, n_preds: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; n_preds];
        for &(p, g) in &self.pairs {
            map[p] = Some(g);
        }
        map
    }

    pub fn matched_mask(&self, n_preds: usize) -> Vec<bool> {
        self.pred_to_gt(n_preds)
            .iter()
            .map(Option::is_some)
            .collect()
    }
}

/// Value matrix between predictions and ground truth boxes:
/// L1 center distance plus the focal cost of the prediction's score.
pub fn build_value_matrix(
    preds: &[Detection],
    gts: &[BBox],
    params: &FocalParams,
) -> Result<CostMatrix> {
    let centers: Vec<Point2D> = preds.iter().map(Detection::center).collect();
    let scores: Vec<f64> = preds.iter().map(|d| d.score).collect();
    let gt_centers: Vec<Point2D> = gts.iter().map(BBox::center).collect();
    value_matrix_from_centers(&centers, &scores, &gt_centers, params)
}

pub fn value_matrix_from_centers(
    centers: &[Point2D],
    scores: &[f64],
    gt_centers: &[Point2D],
    params: &FocalParams,
) -> Result<CostMatrix> {
    let cls = scores
        .iter()
        .map(|&s| focal_match_cost(s, params))
        .collect::<Result<Vec<_>>>()?;
    CostMatrix::from_fn(centers.len(), gt_centers.len(), |i, j| {
        centers[i].l1(&gt_centers[j]) + cls[i]
    })
}

/// Minimum-cost assignment via the shortest augmenting path form of the
/// Hungarian method with row/column potentials, O(n^2 m) for n <= m.
pub fn hungarian(costs: &CostMatrix) -> MatchResult {
    let (rows, cols) = (costs.rows, costs.cols);
    if rows == 0 || cols == 0 {
        return MatchResult::from_assignment(costs, &vec![None; rows]);
    }
    let row_to_col = if rows <= cols {
        solve_wide(rows, cols, |i, j| costs.get(i, j))
    } else {
        // Solve the transpose and invert the map.
        let col_to_row = solve_wide(cols, rows, |i, j| costs.get(j, i));
        let mut map = vec![None; rows];
        for (col, row) in col_to_row.into_iter().enumerate() {
            if let Some(row) = row {
                map[row] = Some(col);
            }
        }
        map
    };
    MatchResult::from_assignment(costs, &row_to_col)
}

/// Assigns every one of `n` rows to a distinct column among `m >= n`.
fn solve_wide(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    debug_assert!(n <= m);
    // 1-based arrays; index 0 is a virtual column used to seed each phase.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
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
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = Some(j - 1);
        }
    }
    row_to_col
}

/// Exhaustive search over every injection of the smaller side into the
/// larger. Test oracle for [`hungarian`].
pub fn brute_force_assignment(costs: &CostMatrix) -> Result<MatchResult> {
    let (rows, cols) = (costs.rows, costs.cols);
    let small = rows.min(cols);
    let large = rows.max(cols);
    if small > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "min dimension {small} exceeds limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let injections: u128 = (0..small).map(|k| (large - k) as u128).product();
    if injections > BRUTE_FORCE_MAX_INJECTIONS {
        return Err(Error::TooLarge(format!(
            "{injections} injections to enumerate"
        )));
    }
    if small == 0 {
        return Ok(MatchResult::from_assignment(costs, &vec![None; rows]));
    }

    let transpose = rows > cols;
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let mut choice = vec![0usize; small];
    let mut taken = vec![false; large];
    enumerate(0, small, large, &mut choice, &mut taken, &mut |choice| {
        let mut row_to_col = vec![None; rows];
        for (k, &l) in choice.iter().enumerate() {
            if transpose {
                row_to_col[l] = Some(k);
            } else {
                row_to_col[k] = Some(l);
            }
        }
        let total: f64 = row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| costs.get(r, c)))
            .fold(0.0, |acc, c| acc + c);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, row_to_col));
        }
    });
    let (_, row_to_col) = best.expect("at least one injection exists");
    Ok(MatchResult::from_assignment(costs, &row_to_col))
}

fn enumerate(
    depth: usize,
    small: usize,
    large: usize,
    choice: &mut [usize],
    taken: &mut [bool],
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == small {
        visit(choice);
        return;
    }
    for l in 0..large {
        if taken[l] {
            continue;
        }
        taken[l] = true;
        choice[depth] = l;
        enumerate(depth + 1, small, large, choice, taken, visit);
        taken[l] = false;
    }
}
