//! Self-contained convex conic programming layer.
//!
//! Everything the planner needs — LPs, QPs (via epigraphs) and SOCPs — is
//! expressed in one standard form and handed to one engine:
//!
//! ```text
//!     minimize    c'x
//!     subject to  A x = b
//!                 x in K = free x nonneg x soc(l1) x soc(l2) x ...
//! ```
//!
//! The engine is a homogeneous self-dual interior-point method with
//! Nesterov-Todd scaling; see [`ipm`].

mod epigraph;
mod ipm;
pub(crate) mod linalg;

pub use epigraph::QuadraticCost;

use nalgebra::DVector;
use thiserror::Error;

/// One block of the variable cone partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeBlock {
    Free(usize),
    NonNeg(usize),
    /// Second-order cone { (t, u) : ||u|| <= t } of the given total length.
    Soc(usize),
}

impl ConeBlock {
    pub fn len(&self) -> usize {
        match *self {
            ConeBlock::Free(n) | ConeBlock::NonNeg(n) | ConeBlock::Soc(n) => n,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("program data contains NaN or infinite entries")]
    InvalidData,
    #[error("cone blocks cover {cones} variables but the program has {vars}")]
    BlockMismatch { cones: usize, vars: usize },
    #[error("equality system has {rows} rhs entries but {expected} rows")]
    RowMismatch { rows: usize, expected: usize },
    #[error("second-order cone blocks need length >= 1")]
    EmptySoc,
    #[error("cost matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    IndefiniteCost(f64),
    #[error("numerical breakdown in the interior-point engine: {0}")]
    Numerical(String),
}

/// Final classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// KKT residuals below tolerance; `primal`/`dual` hold the solution.
    Optimal,
    /// Primal infeasible; `dual` holds a Farkas certificate y with
    /// A'y + z = 0, z in K*, b'y = 1.
    Infeasible,
    /// Primal unbounded (dual infeasible); `primal` holds a ray x in K
    /// with A x = 0 and c'x = -1.
    Unbounded,
    /// Iteration limit hit before any of the above could be certified.
    MaxIter,
}

/// Residual summary of a returned iterate (relative scales).
#[derive(Debug, Clone, Copy)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    /// Signed duality gap (primal objective minus dual objective).
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: DVector<f64>,
    pub dual: DVector<f64>,
    pub objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

/// A conic program in standard equality form.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub objective: DVector<f64>,
    /// Equality matrix as (row, col, value) triplets.
    pub eq_triplets: Vec<(usize, usize, f64)>,
    pub eq_rhs: DVector<f64>,
    pub cones: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let cone_len: usize = self.cones.iter().map(|b| b.len()).sum();
        if cone_len != self.num_vars() {
            return Err(ConicError::BlockMismatch {
                cones: cone_len,
                vars: self.num_vars(),
            });
        }
        for b in &self.cones {
            if let ConeBlock::Soc(0) = b {
                return Err(ConicError::EmptySoc);
            }
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.eq_triplets.iter().all(|t| t.2.is_finite());
        if !finite {
            return Err(ConicError::InvalidData);
        }
        let max_row = self.eq_triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        if max_row > self.num_rows() {
            return Err(ConicError::RowMismatch {
                rows: self.num_rows(),
                expected: max_row,
            });
        }
        Ok(())
    }

    /// Plain-text sparse dump for offline inspection: one `row col value`
    /// entry per line, section headers as comments.
    pub fn dump_triplets(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "# conic program: {} vars, {} rows", self.num_vars(), self.num_rows());
        let _ = writeln!(s, "# cones");
        for (k, b) in self.cones.iter().enumerate() {
            let tag = match b {
                ConeBlock::Free(_) => "free",
                ConeBlock::NonNeg(_) => "nonneg",
                ConeBlock::Soc(_) => "soc",
            };
            let _ = writeln!(s, "{} {} {}", k, tag, b.len());
        }
        let _ = writeln!(s, "# objective (index value)");
        for (i, v) in self.objective.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "{} {}", i, v);
            }
        }
        let _ = writeln!(s, "# equality matrix (row col value)");
        for &(i, j, v) in &self.eq_triplets {
            let _ = writeln!(s, "{} {} {}", i, j, v);
        }
        let _ = writeln!(s, "# rhs (row value)");
        for (i, v) in self.eq_rhs.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "{} {}", i, v);
            }
        }
        s
    }
}

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Solve a conic program. Deterministic: identical inputs produce the
/// identical iterate sequence.
pub fn solve(prog: &ConicProgram, tol: f64, max_iter: usize) -> Result<ConicSolution, ConicError> {
    prog.validate()?;
    if !(tol > 0.0) {
        return Err(ConicError::InvalidData);
    }
    ipm::solve_hsde(prog, tol, max_iter)
}

/// Incremental builder used by the reformulation compilers.
#[derive(Debug, Default, Clone)]
pub struct ProgramBuilder {
    cones: Vec<ConeBlock>,
    nvars: usize,
    objective: Vec<(usize, f64)>,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    fn push_block(&mut self, b: ConeBlock) -> usize {
        let start = self.nvars;
        self.nvars += b.len();
        self.cones.push(b);
        start
    }

    /// Returns the index of the first variable in the block.
    pub fn free_vars(&mut self, n: usize) -> usize {
        self.push_block(ConeBlock::Free(n))
    }

    pub fn nonneg_vars(&mut self, n: usize) -> usize {
        self.push_block(ConeBlock::NonNeg(n))
    }

    pub fn soc_vars(&mut self, n: usize) -> usize {
        self.push_block(ConeBlock::Soc(n))
    }

    pub fn add_objective(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.objective.push((var, coef));
        }
    }

    /// Add one equality row `sum coef_i x_i = rhs`; returns the row index.
    pub fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rhs.len();
        for &(j, v) in entries {
            if v != 0.0 {
                self.triplets.push((r, j, v));
            }
        }
        self.rhs.push(rhs);
        r
    }

    /// Shorthand: `sum coef_i x_i <= rhs` via a fresh nonnegative slack.
    pub fn add_le_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let s = self.nonneg_vars(1);
        let mut e = entries.to_vec();
        e.push((s, 1.0));
        self.add_row(&e, rhs)
    }

    /// Shorthand: `sum coef_i x_i >= rhs` via a fresh nonnegative slack.
    pub fn add_ge_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let s = self.nonneg_vars(1);
        let mut e = entries.to_vec();
        e.push((s, -1.0));
        self.add_row(&e, rhs)
    }

    pub fn build(self) -> ConicProgram {
        let mut c = DVector::zeros(self.nvars);
        for (i, v) in self.objective {
            c[i] += v;
        }
        ConicProgram {
            objective: c,
            eq_triplets: self.triplets,
            eq_rhs: DVector::from_vec(self.rhs),
            cones: self.cones,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_x_subject_to_x_ge_1() {
        // min x s.t. x - s = 1, s >= 0, x free
        let mut b = ProgramBuilder::new();
        let x = b.free_vars(1);
        b.add_objective(x, 1.0);
        b.add_ge_row(&[(x, 1.0)], 1.0);
        let prog = b.build();
        let sol = solve(&prog, 1e-8, 200).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-6, "objective {}", sol.objective);
        assert!((sol.primal[x] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn soc_norm_of_3_4_is_5() {
        // min t s.t. ||(3,4)|| <= t
        let mut b = ProgramBuilder::new();
        let s = b.soc_vars(3);
        b.add_objective(s, 1.0);
        b.add_row(&[(s + 1, 1.0)], 3.0);
        b.add_row(&[(s + 2, 1.0)], 4.0);
        let prog = b.build();
        let sol = solve(&prog, 1e-8, 200).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 5.0).abs() < 1e-6, "objective {}", sol.objective);
    }

    #[test]
    fn infeasible_pair_certified() {
        // x >= 1 and x <= 0
        let mut b = ProgramBuilder::new();
        let x = b.free_vars(1);
        b.add_ge_row(&[(x, 1.0)], 1.0);
        b.add_le_row(&[(x, 1.0)], 0.0);
        let prog = b.build();
        let sol = solve(&prog, 1e-8, 200).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        // certificate: A'y + z = 0 for some z in K*, b'y = 1 > 0
        let by: f64 = prog.eq_rhs.dot(&sol.dual);
        assert!((by - 1.0).abs() < 1e-6, "b'y = {}", by);
    }

    #[test]
    fn unbounded_certified() {
        // min -x s.t. x >= 0 (x itself nonneg, no equalities binding it above)
        let mut b = ProgramBuilder::new();
        let x = b.nonneg_vars(1);
        b.add_objective(x, -1.0);
        // dummy feasible equality on an extra slack pair keeps A nonempty
        let y = b.free_vars(1);
        let s = b.nonneg_vars(1);
        b.add_row(&[(y, 1.0), (s, 1.0)], 1.0);
        let prog = b.build();
        let sol = solve(&prog, 1e-8, 200).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
        let cx: f64 = prog.objective.dot(&sol.primal);
        assert!((cx + 1.0).abs() < 1e-6, "c'x = {}", cx);
    }

    #[test]
    fn deterministic_bitwise() {
        let mut b = ProgramBuilder::new();
        let s = b.soc_vars(4);
        b.add_objective(s, 1.0);
        b.add_row(&[(s + 1, 1.0)], 1.0);
        b.add_row(&[(s + 2, 2.0)], 1.5);
        b.add_row(&[(s + 3, 1.0), (s + 2, -0.5)], 0.25);
        let prog = b.build();
        let a = solve(&prog, 1e-8, 200).unwrap();
        let bb = solve(&prog, 1e-8, 200).unwrap();
        assert_eq!(a.iterations, bb.iterations);
        assert_eq!(a.objective.to_bits(), bb.objective.to_bits());
        for i in 0..a.primal.len() {
            assert_eq!(a.primal[i].to_bits(), bb.primal[i].to_bits());
        }
    }

    #[test]
    fn weak_duality_on_random_feasible_lps() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            // min c'v s.t. v + s = u (v, s >= 0) with random u > 0, c
            let n = 4;
            let mut b = ProgramBuilder::new();
            let v = b.nonneg_vars(n);
            let s = b.nonneg_vars(n);
            for i in 0..n {
                b.add_objective(v + i, rng.random_range(-1.0..1.0));
                let u: f64 = rng.random_range(0.5..2.0);
                b.add_row(&[(v + i, 1.0), (s + i, 1.0)], u);
            }
            let prog = b.build();
            let sol = solve(&prog, 1e-8, 200).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let dual_obj = prog.eq_rhs.dot(&sol.dual);
            assert!(
                sol.objective >= dual_obj - 1e-6,
                "weak duality violated: p={} d={}",
                sol.objective,
                dual_obj
            );
        }
    }

    #[test]
    fn dump_round_trips_entries() {
        let mut b = ProgramBuilder::new();
        let x = b.free_vars(2);
        b.add_objective(x, 3.0);
        b.add_row(&[(x, 1.0), (x + 1, -2.0)], 4.0);
        let prog = b.build();
        let dump = prog.dump_triplets();
        assert!(dump.contains("0 0 1"));
        assert!(dump.contains("0 1 -2"));
        assert!(dump.contains("# rhs"));
    }

    #[test]
    fn nan_rejected() {
        let prog = ConicProgram {
            objective: DVector::from_vec(vec![f64::NAN]),
            eq_triplets: vec![],
            eq_rhs: DVector::zeros(0),
            cones: vec![ConeBlock::Free(1)],
        };
        assert!(matches!(solve(&prog, 1e-8, 10), Err(ConicError::InvalidData)));
    }
}
