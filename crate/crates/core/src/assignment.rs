//! Minimum-cost rectangular assignment with forbidden pairs.
//!
//! The solver pads the matrix to a square and runs the O(n^3) shortest
//! augmenting path form of the Hungarian algorithm over a two-level cost:
//! the first level counts pairs that end up unmatched (forbidden or padding),
//! the second is the real cost. Minimizing lexicographically yields a
//! maximum-cardinality matching of minimum total cost without ever mixing a
//! "large" surrogate into the real costs.
//!
//! Ties are then broken towards the lexicographically smallest pair list by
//! rerouting along zero reduced-cost edges of the optimal dual solution.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::ops::{Add, Sub};

/// Marker for disallowed pairs.
pub const FORBIDDEN: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssignmentError {
    #[error("cost matrix has {len} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("cost at ({row}, {col}) is {value}; entries must be finite or FORBIDDEN")]
    InvalidCost { row: usize, col: usize, value: f64 },
}

/// Row-major costs; rows are tracks, columns are detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self, AssignmentError> {
        if costs.len() != rows * cols {
            return Err(AssignmentError::Shape { rows, cols, len: costs.len() });
        }
        for (i, &c) in costs.iter().enumerate() {
            if c.is_nan() || c == f64::NEG_INFINITY {
                return Err(AssignmentError::InvalidCost { row: i / cols.max(1), col: i % cols.max(1), value: c });
            }
        }
        Ok(CostMatrix { rows, cols, costs })
    }

    /// Matrix with every pair forbidden.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        CostMatrix { rows, cols, costs: vec![FORBIDDEN; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignmentError> {
        let mut costs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                costs.push(f(r, c));
            }
        }
        CostMatrix::new(rows, cols, costs)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.costs[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.costs[r * self.cols + c] = v;
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.get(r, c).is_finite()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// Matched `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Sum of the matched costs, accumulated in row order.
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, k)| c.get(r, k)).sum()
    }
}

/// Two-level cost: `(unmatched count, real cost)` compared lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lex {
    miss: i64,
    cost: f64,
}

impl Lex {
    const ZERO: Lex = Lex { miss: 0, cost: 0.0 };
    const INF: Lex = Lex { miss: i64::MAX / 4, cost: 0.0 };

    fn cmp(&self, other: &Lex) -> Ordering {
        self.miss.cmp(&other.miss).then(self.cost.total_cmp(&other.cost))
    }

    fn lt(&self, other: &Lex) -> bool {
        self.cmp(other) == Ordering::Less
    }
}

impl Add for Lex {
    type Output = Lex;
    fn add(self, o: Lex) -> Lex {
        Lex { miss: self.miss + o.miss, cost: self.cost + o.cost }
    }
}

impl Sub for Lex {
    type Output = Lex;
    fn sub(self, o: Lex) -> Lex {
        Lex { miss: self.miss - o.miss, cost: self.cost - o.cost }
    }
}

struct Padded<'a> {
    c: &'a CostMatrix,
    n: usize,
}

impl Padded<'_> {
    fn cost(&self, i: usize, j: usize) -> Lex {
        if i < self.c.rows && j < self.c.cols && self.c.is_allowed(i, j) {
            Lex { miss: 0, cost: self.c.get(i, j) }
        } else {
            Lex { miss: 1, cost: 0.0 }
        }
    }

    /// Tie-breaking key of assigning row `i` to column `j`: the column if it
    /// is a real allowed pair, otherwise `cols` (unmatched sorts last).
    fn key(&self, i: usize, j: usize) -> usize {
        if i < self.c.rows && j < self.c.cols && self.c.is_allowed(i, j) {
            j
        } else {
            self.c.cols
        }
    }
}

/// Returns, among the maximum-cardinality matchings that avoid forbidden
/// entries, one with minimum total cost. Ties resolve to the lexicographically
/// smallest pair list.
pub fn solve(c: &CostMatrix) -> Assignment {
    let n = c.rows.max(c.cols);
    if c.rows == 0 || c.cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..c.rows).collect(),
            unmatched_cols: (0..c.cols).collect(),
        };
    }
    let pm = Padded { c, n };
    let (u, v, mut row_to_col) = hungarian(&pm);

    let scale = c.costs.iter().filter(|x| x.is_finite()).fold(1.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-9 * scale * n as f64;
    let tight = |i: usize, j: usize| {
        let r = pm.cost(i, j) - u[i] - v[j];
        r.miss == 0 && r.cost.abs() <= eps
    };
    lexicographic_refine(&pm, &tight, &mut row_to_col);

    let mut pairs = Vec::new();
    let mut row_used = vec![false; c.rows];
    let mut col_used = vec![false; c.cols];
    for (i, &j) in row_to_col.iter().enumerate().take(c.rows) {
        if j < c.cols && c.is_allowed(i, j) {
            pairs.push((i, j));
            row_used[i] = true;
            col_used[j] = true;
        }
    }
    Assignment {
        pairs,
        unmatched_rows: (0..c.rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..c.cols).filter(|&k| !col_used[k]).collect(),
    }
}

/// Shortest augmenting path Hungarian algorithm (1-indexed internally).
/// Returns row potentials, column potentials and the row -> column map.
fn hungarian(pm: &Padded) -> (Vec<Lex>, Vec<Lex>, Vec<usize>) {
    let n = pm.n;
    let mut u = vec![Lex::ZERO; n + 1];
    let mut v = vec![Lex::ZERO; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![Lex::INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Lex::INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = pm.cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur.lt(&minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].lt(&delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    // v[j] and u[i] as 0-indexed arrays
    (u[1..].to_vec(), v[1..].to_vec(), row_to_col)
}

/// Greedily lowers each row's key, in row order, while staying inside the set
/// of optimal matchings (perfect matchings of the tight subgraph).
fn lexicographic_refine(pm: &Padded, tight: &dyn Fn(usize, usize) -> bool, row_to_col: &mut [usize]) {
    let n = pm.n;
    let rows = pm.c.rows;
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    for r in 0..rows {
        let current = pm.key(r, row_to_col[r]);
        let candidates: Vec<usize> = (0..pm.c.cols.min(current)).filter(|&j| pm.key(r, j) == j && tight(r, j)).collect();
        for j in candidates {
            if let Some(path) = reroute(pm, tight, r, j, row_to_col, &col_to_row) {
                // path: list of (row, new_col)
                for &(row, col) in &path {
                    row_to_col[row] = col;
                    col_to_row[col] = row;
                }
                row_to_col[r] = j;
                col_to_row[j] = r;
                break;
            }
        }
    }
}

/// Tries to give column `target` to row `r`. The displaced owner must reach
/// the column `r` frees via alternating tight edges, moving only rows whose
/// key is not yet fixed (rows after `r`, padding rows) or rows fixed as
/// unmatched that stay unmatched.
fn reroute(
    pm: &Padded,
    tight: &dyn Fn(usize, usize) -> bool,
    r: usize,
    target: usize,
    row_to_col: &[usize],
    col_to_row: &[usize],
) -> Option<Vec<(usize, usize)>> {
    let n = pm.n;
    let freed = row_to_col[r];
    let start = col_to_row[target];
    let unmatched_key = pm.c.cols;
    let movable = |row: usize, col: usize| -> bool {
        if row == r || col == target || !tight(row, col) {
            return false;
        }
        if row > r || row >= pm.c.rows {
            return true;
        }
        pm.key(row, row_to_col[row]) == unmatched_key && pm.key(row, col) == unmatched_key
    };
    // BFS over rows; parent[col] = row that would take col.
    let mut parent_row: Vec<Option<usize>> = vec![None; n];
    let mut seen_row = vec![false; n];
    let mut queue = VecDeque::new();
    queue.push_back(start);
    seen_row[start] = true;
    while let Some(row) = queue.pop_front() {
        for col in 0..n {
            if parent_row[col].is_some() || !movable(row, col) || col == row_to_col[row] {
                continue;
            }
            parent_row[col] = Some(row);
            if col == freed {
                let mut path = Vec::new();
                let mut c = col;
                loop {
                    let taker = parent_row[c].unwrap();
                    path.push((taker, c));
                    if taker == start {
                        return Some(path);
                    }
                    c = row_to_col[taker];
                }
            }
            let owner = col_to_row[col];
            if owner != r && !seen_row[owner] {
                seen_row[owner] = true;
                queue.push_back(owner);
            }
        }
    }
    None
}
