//! Dense two-phase simplex for the small linear programs inside the power
//! control solvers. Bland's rule keeps it finite on degenerate problems.

use crate::error::{Error, Result};

const EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpOutcome {
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let piv = self.data[pr * w + pc];
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v /= piv;
        }
        let prow: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != 0.0 {
                for (v, p) in self.data[r * w..(r + 1) * w].iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                self.data[r * w + pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Maximize with the reduced costs held in row `rows`. Columns marked in
    /// `blocked` never enter.
    fn run(&mut self, blocked: &[bool]) -> std::result::Result<(), LpOutcome> {
        let obj = self.rows;
        for _ in 0..50_000 {
            let entering = (0..self.cols).find(|&c| !blocked[c] && self.at(obj, c) > EPS);
            let Some(pc) = entering else { return Ok(()) };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-14
                                || (ratio <= bratio + 1e-14 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = best else { return Err(LpOutcome::Unbounded) };
            self.pivot(pr, pc);
        }
        Err(LpOutcome::Unbounded)
    }
}

/// Maximize `c·x` subject to `A x <= b`, `x >= 0`.
///
/// Returns `Ok(Err(outcome))` for infeasible or unbounded programs and
/// `Err` only for malformed input.
pub fn maximize(
    c: &[f64],
    a: &[Vec<f64>],
    b: &[f64],
) -> Result<std::result::Result<LpSolution, LpOutcome>> {
    let n = c.len();
    let m = b.len();
    if a.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::Numerical("LP dimension mismatch".into()));
    }
    let neg: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = neg.len();
    let cols = n + m + n_art;
    let w = cols + 1;
    let mut t = Tableau { rows: m, cols, data: vec![0.0; (m + 1) * w], basis: vec![0; m] };
    let mut art = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t.data[i * w + j] = sign * a[i][j];
        }
        t.data[i * w + n + i] = sign;
        t.data[i * w + cols] = sign * b[i];
        if b[i] < 0.0 {
            t.data[i * w + n + m + art] = 1.0;
            t.basis[i] = n + m + art;
            art += 1;
        } else {
            t.basis[i] = n + i;
        }
    }
    let obj = m;
    if n_art > 0 {
        // phase one: maximize -sum(artificials)
        for &i in &neg {
            for j in 0..=cols {
                if j < n + m || j == cols {
                    t.data[obj * w + j] += t.data[i * w + j];
                }
            }
        }
        let blocked = vec![false; cols];
        if t.run(&blocked).is_err() {
            return Ok(Err(LpOutcome::Infeasible));
        }
        let scale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if t.rhs(obj) > 1e-9 * scale {
            return Ok(Err(LpOutcome::Infeasible));
        }
        // drive remaining artificials out of the basis
        for r in 0..m {
            if t.basis[r] >= n + m {
                if let Some(pc) = (0..n + m).find(|&c| t.at(r, c).abs() > 1e-9) {
                    t.pivot(r, pc);
                }
            }
        }
    }
    // phase two reduced costs
    for j in 0..=cols {
        t.data[obj * w + j] = 0.0;
    }
    for j in 0..n {
        t.data[obj * w + j] = c[j];
    }
    for r in 0..m {
        let bj = t.basis[r];
        let cb = if bj < n { c[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..=cols {
                t.data[obj * w + j] -= cb * t.data[r * w + j];
            }
        }
    }
    let blocked: Vec<bool> = (0..cols).map(|j| j >= n + m).collect();
    if let Err(o) = t.run(&blocked) {
        return Ok(Err(o));
    }
    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(Ok(LpSolution { x, objective }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let s = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        )
        .unwrap()
        .unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn needs_phase_one() {
        // max -x - y, x + y >= 2, x <= 3 -> objective -2
        let s = maximize(&[-1.0, -1.0], &[vec![-1.0, -1.0], vec![1.0, 0.0]], &[-2.0, 3.0])
            .unwrap()
            .unwrap();
        assert!((s.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let r = maximize(&[1.0], &[vec![1.0], vec![-1.0]], &[1.0, -2.0]).unwrap();
        assert_eq!(r, Err(LpOutcome::Infeasible));
        let r = maximize(&[1.0, 0.0], &[vec![-1.0, 1.0]], &[1.0]).unwrap();
        assert_eq!(r, Err(LpOutcome::Unbounded));
    }
}
