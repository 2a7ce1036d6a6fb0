//! Association costs and rectangular linear assignment.
//!
//! Gated-out pairs are carried as explicit infeasible cells. The solver
//! first maximises the number of feasible pairs and then minimises their
//! total cost, so an infeasible cell never competes with a finite one.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// 95% quantile of the chi-square distribution with four degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

/// Track-by-detection cost table with explicit infeasible cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

impl CostMatrix {
    /// All-infeasible matrix.
    pub fn infeasible(rows: usize, cols: usize) -> Self {
        CostMatrix {
            rows,
            cols,
            cells: vec![None; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                cells.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, cells }
    }

    /// Fully feasible matrix from row-major values.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost rows");
        CostMatrix::from_fn(rows.len(), cols, |i, j| Some(rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) {
        self.cells[row * self.cols + col] = value;
    }

    /// Marks every cell whose cost exceeds `gate` infeasible.
    pub fn gate_above(mut self, gate: f64) -> Self {
        for c in &mut self.cells {
            if matches!(c, Some(v) if *v > gate) {
                *c = None;
            }
        }
        self
    }

    /// Sub-matrix over the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        CostMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }

    pub fn transpose(&self) -> Self {
        CostMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssocConfig {
    /// Weight of the motion (Mahalanobis) term in the combined cost.
    pub lambda: f64,
    pub iou_min: f64,
    pub mahalanobis_gate: f64,
    pub cosine_gate: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig {
            lambda: 0.0,
            iou_min: 0.3,
            mahalanobis_gate: CHI2_95_4DOF,
            cosine_gate: 0.2,
        }
    }
}

impl AssocConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("assoc.lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.iou_min) {
            return bad(format!("assoc.iou_min must lie in [0, 1], got {}", self.iou_min));
        }
        if !(self.mahalanobis_gate.is_finite() && self.mahalanobis_gate > 0.0) {
            return bad(format!(
                "assoc.mahalanobis_gate must be positive, got {}",
                self.mahalanobis_gate
            ));
        }
        if !(self.cosine_gate > 0.0 && self.cosine_gate <= 1.0) {
            return bad(format!(
                "assoc.cosine_gate must lie in (0, 1], got {}",
                self.cosine_gate
            ));
        }
        Ok(())
    }
}

/// Unit-norm appearance descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalises `values` to unit length.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDetection("empty embedding".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidDetection("non-finite embedding component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidDetection("zero-norm embedding".into()));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// `1 - IoU` between predicted track boxes and detections; overlaps below
/// `iou_min` are infeasible.
pub fn iou_cost(tracks: &[BBox], dets: &[BBox], iou_min: f64) -> CostMatrix {
    CostMatrix::from_fn(tracks.len(), dets.len(), |i, j| {
        let v = iou(&tracks[i], &dets[j]);
        // A zero overlap never justifies a match, even with iou_min = 0.
        (v >= iou_min && v > 0.0).then_some(1.0 - v)
    })
}

/// Squared Mahalanobis distance of each measurement to each projected track.
pub fn mahalanobis_cost(
    projected: &[(Vector4<f64>, Matrix4<f64>)],
    dets: &[Vector4<f64>],
    gate: f64,
) -> Result<CostMatrix> {
    let mut out = CostMatrix::infeasible(projected.len(), dets.len());
    for (i, (y, s)) in projected.iter().enumerate() {
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("projected covariance of track row {i}")))?;
        for (j, d) in dets.iter().enumerate() {
            let r = d - y;
            let v = r.dot(&chol.solve(&r)).max(0.0);
            if v <= gate {
                out.set(i, j, Some(v));
            }
        }
    }
    Ok(out)
}

/// Smallest cosine distance between each track gallery and each detection.
pub fn cosine_cost(galleries: &[&[Embedding]], dets: &[Embedding], gate: f64) -> Result<CostMatrix> {
    let mut out = CostMatrix::infeasible(galleries.len(), dets.len());
    for (i, gallery) in galleries.iter().enumerate() {
        if gallery.is_empty() {
            return Err(Error::EmptyGallery(i));
        }
        for (j, d) in dets.iter().enumerate() {
            let best = gallery
                .iter()
                .map(|r| 1.0 - d.dot(r))
                .fold(f64::INFINITY, f64::min);
            if best <= gate {
                out.set(i, j, Some(best));
            }
        }
    }
    Ok(out)
}

/// `lambda * d1 + (1 - lambda) * d2`; infeasible if either input is.
pub fn combined_cost(d1: &CostMatrix, d2: &CostMatrix, lambda: f64) -> Result<CostMatrix> {
    if d1.shape() != d2.shape() {
        return Err(Error::ShapeMismatch {
            left: d1.shape(),
            right: d2.shape(),
        });
    }
    let cells = d1
        .cells
        .iter()
        .zip(&d2.cells)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(lambda * a + (1.0 - lambda) * b),
            _ => None,
        })
        .collect();
    Ok(CostMatrix {
        rows: d1.rows,
        cols: d1.cols,
        cells,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j)| costs.get(i, j).expect("assigned pair is feasible"))
            .sum()
    }
}

/// Two-tier cost: the count of infeasible picks dominates the real cost.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lex {
    tier: i64,
    cost: f64,
}

impl Lex {
    const ZERO: Lex = Lex { tier: 0, cost: 0.0 };
    const INF: Lex = Lex {
        tier: i64::MAX / 4,
        cost: 0.0,
    };

    fn of(cell: Option<f64>) -> Lex {
        match cell {
            Some(cost) => Lex { tier: 0, cost },
            None => Lex { tier: 1, cost: 0.0 },
        }
    }

    fn lt(self, o: Lex) -> bool {
        match self.tier.cmp(&o.tier) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.cost < o.cost,
        }
    }
}

impl Add for Lex {
    type Output = Lex;
    fn add(self, o: Lex) -> Lex {
        Lex {
            tier: self.tier + o.tier,
            cost: self.cost + o.cost,
        }
    }
}

impl Sub for Lex {
    type Output = Lex;
    fn sub(self, o: Lex) -> Lex {
        Lex {
            tier: self.tier - o.tier,
            cost: self.cost - o.cost,
        }
    }
}

impl AddAssign for Lex {
    fn add_assign(&mut self, o: Lex) {
        *self = *self + o;
    }
}

impl SubAssign for Lex {
    fn sub_assign(&mut self, o: Lex) {
        *self = *self - o;
    }
}

/// Shortest-augmenting-path Hungarian method for `n <= m`; returns the
/// column assigned to each row.
fn solve_wide(costs: &CostMatrix) -> Vec<usize> {
    let n = costs.rows();
    let m = costs.cols();
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| Lex::of(costs.get(i - 1, j - 1));

    let mut u = vec![Lex::ZERO; n + 1];
    let mut v = vec![Lex::ZERO; m + 1];
    // p[j]: row matched to column j (1-based, 0 = none)
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![Lex::INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Lex::INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur.lt(minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].lt(delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Optimal rectangular assignment over feasible cells.
///
/// Among all assignments using only feasible cells, returns one with the
/// maximum number of pairs and, among those, the minimum total cost.
pub fn hungarian(costs: &CostMatrix) -> Assignment {
    let (rows, cols) = costs.shape();
    let mut pairs = Vec::new();
    if rows > 0 && cols > 0 {
        if rows <= cols {
            for (i, j) in solve_wide(costs).into_iter().enumerate() {
                if costs.get(i, j).is_some() {
                    pairs.push((i, j));
                }
            }
        } else {
            let t = costs.transpose();
            for (j, i) in solve_wide(&t).into_iter().enumerate() {
                if costs.get(i, j).is_some() {
                    pairs.push((i, j));
                }
            }
            pairs.sort_unstable();
        }
    }
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(i, j) in &pairs {
        row_used[i] = true;
        col_used[j] = true;
    }
    Assignment {
        pairs,
        unmatched_rows: (0..rows).filter(|&i| !row_used[i]).collect(),
        unmatched_cols: (0..cols).filter(|&j| !col_used[j]).collect(),
    }
}
