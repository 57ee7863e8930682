//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Solves min c.x subject to A x = b, x >= 0. The artificial columns stay in
//! the tableau so that B^-1 is always available; this lets callers swap a
//! column in after phase one and reoptimize without starting over.

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
/// Phase-one residual tolerance (scaled by 1 + |b|_1).
pub const FEAS_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Phase-one objective (sum of artificials) at termination.
    pub infeasibility: f64,
}

#[derive(Debug, Clone)]
pub struct Tableau {
    rows: usize,
    cols: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    sign: Vec<f64>,
    cost: Vec<f64>,
    scratch: Vec<f64>,
    b_norm: f64,
}

impl Tableau {
    /// `a` is row-major rows x cols.
    pub fn new(rows: usize, cols: usize, a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), rows * cols);
        assert_eq!(b.len(), rows);
        let width = cols + rows + 1;
        let mut t = vec![0.0; (rows + 1) * width];
        let mut sign = vec![1.0; rows];
        for i in 0..rows {
            let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
            sign[i] = s;
            let row = &mut t[i * width..(i + 1) * width];
            for j in 0..cols {
                row[j] = s * a[i * cols + j];
            }
            row[cols + i] = 1.0;
            row[width - 1] = s * b[i];
        }
        Tableau {
            rows,
            cols,
            width,
            t,
            basis: (cols..cols + rows).collect(),
            sign,
            cost: vec![0.0; cols],
            scratch: vec![0.0; width],
            b_norm: b.iter().map(|x| x.abs()).sum(),
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            for x in row.iter_mut() {
                *x /= p;
            }
            row[c] = 1.0;
            self.scratch.copy_from_slice(row);
        }
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for (x, s) in row.iter_mut().zip(&self.scratch) {
                *x -= f * s;
            }
            row[c] = 0.0;
            if i < self.rows && row[w - 1] < 0.0 && row[w - 1] > -1e-13 {
                row[w - 1] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Fills the objective row for costs `c` on the basis (artificial costs
    /// given by `art`).
    fn price(&mut self, c: &[f64], art: f64) {
        let w = self.width;
        let (body, obj) = self.t.split_at_mut(self.rows * w);
        for j in 0..self.cols {
            obj[j] = c[j];
        }
        for j in self.cols..w - 1 {
            obj[j] = art;
        }
        obj[w - 1] = 0.0;
        for i in 0..self.rows {
            let bj = self.basis[i];
            let cb = if bj < self.cols { c[bj] } else { art };
            if cb == 0.0 {
                continue;
            }
            let row = &body[i * w..(i + 1) * w];
            for (o, x) in obj.iter_mut().zip(row) {
                *o -= cb * x;
            }
        }
    }

    /// Bland iterations over structural columns. Returns false on unboundedness.
    fn iterate(&mut self) -> Option<LpStatus> {
        let w = self.width;
        for _ in 0..MAX_PIVOTS {
            let obj = self.rows * w;
            let enter = (0..self.cols).find(|&j| self.t[obj + j] < -COST_TOL);
            let Some(c) = enter else {
                return Some(LpStatus::Optimal);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 * (1.0 + br)
                                || (ratio <= br + 1e-14 * (1.0 + br) && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Some(LpStatus::Unbounded),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Some(LpStatus::IterationLimit)
    }

    /// Phase one; returns the residual infeasibility.
    pub fn phase_one(&mut self) -> (LpStatus, f64) {
        let zeros = vec![0.0; self.cols];
        self.price(&zeros, 1.0);
        let status = self.iterate().unwrap_or(LpStatus::IterationLimit);
        let infeas = -self.t[self.rows * self.width + self.width - 1];
        if status == LpStatus::IterationLimit {
            return (status, infeas);
        }
        if infeas > FEAS_TOL * (1.0 + self.b_norm) {
            return (LpStatus::Infeasible, infeas);
        }
        // drive zero-level artificials out where a structural pivot exists
        for i in 0..self.rows {
            if self.basis[i] >= self.cols {
                let mut best = (0, 0.0);
                for j in 0..self.cols {
                    let a = self.at(i, j).abs();
                    if a > best.1 {
                        best = (j, a);
                    }
                }
                if best.1 > 1e-9 {
                    self.pivot(i, best.0);
                }
            }
        }
        (LpStatus::Optimal, infeas.max(0.0))
    }

    /// Phase two from the current feasible basis.
    pub fn phase_two(&mut self, c: &[f64]) -> LpStatus {
        assert_eq!(c.len(), self.cols);
        self.cost.copy_from_slice(c);
        let cost = self.cost.clone();
        self.price(&cost, 0.0);
        self.iterate().unwrap_or(LpStatus::IterationLimit)
    }

    /// Replaces structural column j by `col` (in original row space).
    /// Only valid while j is nonbasic.
    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        assert!(!self.basis.contains(&j), "column is basic");
        let w = self.width;
        for i in 0..self.rows {
            let mut s = 0.0;
            for k in 0..self.rows {
                s += self.t[i * w + self.cols + k] * self.sign[k] * col[k];
            }
            self.t[i * w + j] = s;
        }
    }

    pub fn solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for i in 0..self.rows {
            if self.basis[i] < self.cols {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    pub fn objective(&self) -> f64 {
        self.solution().iter().zip(&self.cost).map(|(x, c)| x * c).sum()
    }
}

/// One-shot solve of min c.x, A x = b, x >= 0.
pub fn solve(rows: usize, cols: usize, a: &[f64], b: &[f64], c: &[f64]) -> LpSolution {
    let mut tab = Tableau::new(rows, cols, a, b);
    let (status, infeas) = tab.phase_one();
    if status != LpStatus::Optimal {
        return LpSolution { status, x: vec![], objective: f64::NAN, infeasibility: infeas };
    }
    let status = tab.phase_two(c);
    let x = tab.solution();
    let objective = x.iter().zip(c).map(|(x, c)| x * c).sum();
    LpSolution { status, x, objective, infeasibility: infeas }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_optimum() {
        // max x + y s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let a = [1.0, 2.0, 1.0, 0.0, 3.0, 1.0, 0.0, 1.0];
        let s = solve(2, 4, &a, &[4.0, 6.0], &[-1.0, -1.0, 0.0, 0.0]);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
        assert!((s.objective + 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x + y = -1 with x, y >= 0
        let s = solve(1, 2, &[1.0, 1.0], &[-1.0], &[0.0, 0.0]);
        assert_eq!(s.status, LpStatus::Infeasible);
        assert!((s.infeasibility - 1.0).abs() < 1e-12);
        // min -x s.t. x - y = 0
        let s = solve(1, 2, &[1.0, -1.0], &[0.0], &[-1.0, 0.0]);
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let a = [1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0];
        let s = solve(3, 3, &a, &[1.0, 2.0, 1.0], &[1.0, 0.0, 1.0]);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 0.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the textbook rule; Bland terminates.
        let a = [
            0.25, -60.0, -0.04, 9.0, 1.0, 0.0, 0.0, //
            0.5, -90.0, -0.02, 3.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0,
        ];
        let c = [-0.75, 150.0, -0.02, 6.0, 0.0, 0.0, 0.0];
        let s = solve(3, 7, &a, &[0.0, 0.0, 1.0], &c);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-12);
    }

    #[test]
    fn column_swap_after_phase_one() {
        // rows: x0 - x2 = 0 ; x0 + x1 = 1 ; x2 is the swappable column
        let a = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let mut tab = Tableau::new(2, 3, &a, &[0.0, 1.0]);
        assert_eq!(tab.phase_one().0, LpStatus::Optimal);
        tab.set_column(2, &[-1.0, 0.0]);
        assert_eq!(tab.phase_two(&[0.0, 0.0, -1.0]), LpStatus::Optimal);
        assert!((tab.solution()[2] - 1.0).abs() < 1e-12);
    }
}
