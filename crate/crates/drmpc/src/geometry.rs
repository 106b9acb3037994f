//! Polytope primitives, obstacle occupancy and collision margins.

use crate::conic::{self, ConicError, ProgramBuilder, SolveStatus};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate polytope: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<ConicError> for GeometryError {
    fn from(e: ConicError) -> Self {
        GeometryError::Numerical(e.to_string())
    }
}

/// Halfspace-represented convex set { p : A p <= b } with unit facet
/// normals. Construction normalizes rows and verifies the set is nonempty
/// and bounded.
#[derive(Debug, Clone)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, GeometryError> {
        if a.nrows() != b.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "{} facet rows vs {} offsets",
                a.nrows(),
                b.len()
            )));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(GeometryError::Degenerate("empty facet system".into()));
        }
        let mut a = a;
        let mut b = b;
        for m in 0..a.nrows() {
            let norm = a.row(m).norm();
            if norm < 1e-12 {
                return Err(GeometryError::Degenerate(format!("zero facet normal {m}")));
            }
            for j in 0..a.ncols() {
                a[(m, j)] /= norm;
            }
            b[m] /= norm;
        }
        let p = Polytope { a, b };
        // nonempty + bounded: support LPs along every +/- axis
        for j in 0..p.dim() {
            for sign in [1.0, -1.0] {
                let mut d = DVector::zeros(p.dim());
                d[j] = sign;
                match p.support(&d) {
                    Ok(_) => {}
                    Err(GeometryError::Degenerate(msg)) => {
                        return Err(GeometryError::Degenerate(msg))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(p)
    }

    /// Axis-aligned box [lo, hi] as a polytope.
    pub fn box_nd(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch("box bounds".into()));
        }
        let d = lo.len();
        let mut a = DMatrix::zeros(2 * d, d);
        let mut b = DVector::zeros(2 * d);
        for j in 0..d {
            if !(lo[j] < hi[j]) {
                return Err(GeometryError::Degenerate(format!("box axis {j} empty")));
            }
            a[(2 * j, j)] = 1.0;
            b[2 * j] = hi[j];
            a[(2 * j + 1, j)] = -1.0;
            b[2 * j + 1] = -lo[j];
        }
        Polytope::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.a.nrows()
    }

    pub fn facets(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        let r = &self.a * p - &self.b;
        r.iter().all(|v| *v <= tol)
    }

    /// Support value max { d'p : p in set }. Errors if the set is empty
    /// (Degenerate) or unbounded along d (Degenerate).
    pub fn support(&self, d: &DVector<f64>) -> Result<f64, GeometryError> {
        if d.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch("support direction".into()));
        }
        let mut bld = ProgramBuilder::new();
        let p = bld.free_vars(self.dim());
        for j in 0..self.dim() {
            bld.add_objective(p + j, -d[j]);
        }
        for m in 0..self.num_facets() {
            let entries: Vec<(usize, f64)> =
                (0..self.dim()).map(|j| (p + j, self.a[(m, j)])).collect();
            bld.add_le_row(&entries, self.b[m]);
        }
        let sol = conic::solve(&bld.build(), 1e-9, 200)?;
        match sol.status {
            SolveStatus::Optimal => Ok(-sol.objective),
            SolveStatus::Infeasible => Err(GeometryError::Degenerate("empty polytope".into())),
            SolveStatus::Unbounded => {
                Err(GeometryError::Degenerate("unbounded polytope".into()))
            }
            SolveStatus::MaxIter => Err(GeometryError::Numerical(
                "support LP hit iteration limit".into(),
            )),
        }
    }

    /// Euclidean projection of a point onto the set.
    pub fn project(&self, p: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        if self.contains(p, 1e-12) {
            return Ok(p.clone());
        }
        let mut bld = ProgramBuilder::new();
        let y = bld.free_vars(self.dim());
        let s = bld.soc_vars(1 + self.dim());
        bld.add_objective(s, 1.0);
        for j in 0..self.dim() {
            // s_{1+j} = p_j - y_j
            bld.add_row(&[(s + 1 + j, 1.0), (y + j, 1.0)], p[j]);
        }
        for m in 0..self.num_facets() {
            let entries: Vec<(usize, f64)> =
                (0..self.dim()).map(|j| (y + j, self.a[(m, j)])).collect();
            bld.add_le_row(&entries, self.b[m]);
        }
        let sol = conic::solve(&bld.build(), 1e-9, 400)?;
        if sol.status != SolveStatus::Optimal {
            return Err(GeometryError::Numerical(format!(
                "projection solve ended with {:?}, residuals {:?}",
                sol.status, sol.residuals
            )));
        }
        Ok(DVector::from_fn(self.dim(), |j, _| sol.primal[y + j]))
    }
}

/// The obstacle: a polytopic body at its unperturbed position, the matrix
/// selecting position coordinates out of the state, and the effective
/// clearance the planner must keep.
#[derive(Debug, Clone)]
pub struct ObstacleModel {
    pub body: Polytope,
    pub position_selector: DMatrix<f64>,
    pub clearance: f64,
}

impl ObstacleModel {
    pub fn new(
        body: Polytope,
        position_selector: DMatrix<f64>,
        clearance: f64,
    ) -> Result<Self, GeometryError> {
        if position_selector.nrows() != body.dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "selector maps to {} coords, obstacle lives in {}",
                position_selector.nrows(),
                body.dim()
            )));
        }
        if !(clearance >= 0.0) {
            return Err(GeometryError::Degenerate("negative clearance".into()));
        }
        Ok(ObstacleModel {
            body,
            position_selector,
            clearance,
        })
    }

    pub fn position_dim(&self) -> usize {
        self.body.dim()
    }

    pub fn state_dim(&self) -> usize {
        self.position_selector.ncols()
    }

    fn check_dims(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<(), GeometryError> {
        if x.len() != self.state_dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "state has {} entries, expected {}",
                x.len(),
                self.state_dim()
            )));
        }
        if w.len() != self.position_dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "displacement has {} entries, expected {}",
                w.len(),
                self.position_dim()
            )));
        }
        Ok(())
    }

    /// True when the displaced occupancy O + w stays inside `outer`.
    pub fn displaced_inside(
        &self,
        outer: &Polytope,
        w: &DVector<f64>,
    ) -> Result<bool, GeometryError> {
        for m in 0..outer.num_facets() {
            let d = outer.facets().row(m).transpose();
            let sup = self.body.support(&d)? + d.dot(w);
            if sup > outer.offsets()[m] + 1e-9 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Facet-form distance max_m [ A_m (Cx - w) - b_m ]_+ . Zero inside the
/// displaced obstacle; exact on facet-normal cones, a lower bound on the
/// Euclidean distance in corner regions.
pub fn distance_facet_max(
    x: &DVector<f64>,
    w: &DVector<f64>,
    obs: &ObstacleModel,
) -> Result<f64, GeometryError> {
    obs.check_dims(x, w)?;
    let p = &obs.position_selector * x - w;
    let gaps = obs.body.facets() * p - obs.body.offsets();
    Ok(gaps.iter().fold(0.0_f64, |m, g| m.max(*g)))
}

/// Exact Euclidean distance dist(Cx, O + w) via projection. Verification
/// oracle; not used in the planning hot path.
pub fn distance_exact(
    x: &DVector<f64>,
    w: &DVector<f64>,
    obs: &ObstacleModel,
) -> Result<f64, GeometryError> {
    obs.check_dims(x, w)?;
    let p = &obs.position_selector * x - w;
    if obs.body.contains(&p, 1e-12) {
        return Ok(0.0);
    }
    let y = obs.body.project(&p)?;
    Ok((p - y).norm())
}

/// Collision constraint g(x, w) = clearance - dist(Cx, O + w); the state is
/// safe when g <= 0. Uses the facet-form distance.
pub fn constraint_g(
    x: &DVector<f64>,
    w: &DVector<f64>,
    obs: &ObstacleModel,
) -> Result<f64, GeometryError> {
    Ok(obs.clearance - distance_facet_max(x, w, obs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    pub(crate) fn unit_square() -> Polytope {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_element(4, 0.5);
        Polytope::new(a, b).unwrap()
    }

    fn square_obstacle(clearance: f64) -> ObstacleModel {
        ObstacleModel::new(unit_square(), DMatrix::identity(2, 2), clearance).unwrap()
    }

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn facet_distance_examples() {
        let obs = square_obstacle(0.0);
        let zero = v2(0.0, 0.0);
        assert_eq!(distance_facet_max(&zero, &zero, &obs).unwrap(), 0.0);
        let d = distance_facet_max(&v2(1.0, 0.0), &zero, &obs).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        let d = distance_facet_max(&v2(1.0, 0.0), &v2(0.2, 0.0), &obs).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
        // shifted case agrees with the exact projection oracle (facet regime)
        let e = distance_exact(&v2(1.0, 0.0), &v2(0.2, 0.0), &obs).unwrap();
        assert!((d - e).abs() < 1e-7);
    }

    #[test]
    fn exact_distance_examples() {
        let obs = square_obstacle(0.0);
        let zero = v2(0.0, 0.0);
        let d = distance_exact(&v2(1.0, 1.0), &zero, &obs).unwrap();
        assert!((d - (2.0_f64).sqrt() * 0.5).abs() < 1e-7, "corner dist {}", d);
        let d = distance_exact(&v2(1.0, 0.0), &zero, &obs).unwrap();
        assert!((d - 0.5).abs() < 1e-7);
        assert_eq!(distance_exact(&v2(0.1, -0.2), &zero, &obs).unwrap(), 0.0);
    }

    #[test]
    fn constraint_g_examples() {
        let obs = square_obstacle(0.1);
        let zero = v2(0.0, 0.0);
        // dist 0.5 -> g = -0.4
        let g = constraint_g(&v2(1.0, 0.0), &zero, &obs).unwrap();
        assert!((g + 0.4).abs() < 1e-12);
        // interior -> g = clearance > 0
        let g = constraint_g(&v2(0.0, 0.0), &zero, &obs).unwrap();
        assert!((g - 0.1).abs() < 1e-12);
    }

    #[test]
    fn table_setup_point_is_safe() {
        // desk-scale setup: unit square at (2, 1.2), 4-state point mass,
        // effective clearance 0.3
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![2.5, -1.5, 1.7, -0.7]);
        let body = Polytope::new(a, b).unwrap();
        let mut c = DMatrix::zeros(2, 4);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        let obs = ObstacleModel::new(body, c, 0.3).unwrap();
        let x = DVector::from_vec(vec![2.0, 2.5, 0.0, 0.0]);
        let w = v2(0.0, 0.0);
        let g = constraint_g(&x, &w, &obs).unwrap();
        assert!(g < 0.0, "g = {}", g);
        // sign agrees with the exact-distance version
        let ge = obs.clearance - distance_exact(&x, &w, &obs).unwrap();
        assert!(ge < 0.0);
    }

    #[test]
    fn facet_lower_bounds_exact_and_zero_sets_match() {
        let obs = square_obstacle(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = v2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let w = v2(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
            let df = distance_facet_max(&x, &w, &obs).unwrap();
            let de = distance_exact(&x, &w, &obs).unwrap();
            assert!(df <= de + 1e-7, "facet {} > exact {}", df, de);
            let inside = obs.body.contains(&(&x - &w), 1e-12);
            assert_eq!(df == 0.0, inside, "facet zero-set mismatch at {:?}", x);
            assert_eq!(de < 1e-7, inside, "exact zero-set mismatch");
        }
    }

    #[test]
    fn translation_equivariance() {
        let obs = square_obstacle(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = v2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let w = v2(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
            let d1 = distance_facet_max(&x, &w, &obs).unwrap();
            // shift the state by the lifted displacement instead
            let shifted = &x - &w;
            let d2 = distance_facet_max(&shifted, &v2(0.0, 0.0), &obs).unwrap();
            assert!((d1 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_normalized() {
        let a = DMatrix::from_row_slice(4, 2, &[2.0, 0.0, -3.0, 0.0, 0.0, 7.0, 0.0, -0.5]);
        let b = DVector::from_vec(vec![1.0, 1.5, 3.5, 0.25]);
        let p = Polytope::new(a, b).unwrap();
        for m in 0..4 {
            assert!((p.facets().row(m).norm() - 1.0).abs() <= 1e-12);
        }
        // offsets rescaled: first row was 2x <= 1 -> x <= 0.5
        assert!((p.offsets()[0] - 0.5).abs() < 1e-12);
        assert!(p.contains(&v2(0.49, 0.0), 1e-9));
        assert!(!p.contains(&v2(0.51, 0.0), 1e-9));
    }

    #[test]
    fn degenerate_rejected() {
        // x <= -1 and -x <= 0  => empty
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, 0.0]);
        assert!(matches!(
            Polytope::new(a, b),
            Err(GeometryError::Degenerate(_))
        ));
        // unbounded strip
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            Polytope::new(a, b),
            Err(GeometryError::Degenerate(_))
        ));
    }

    #[test]
    fn support_values_on_box() {
        let p = Polytope::box_nd(&v2(-0.45, -0.45), &v2(0.45, 0.45)).unwrap();
        let s = p.support(&v2(1.0, 0.0)).unwrap();
        assert!((s - 0.45).abs() < 1e-7);
        let s = p.support(&v2(1.0, 1.0)).unwrap();
        assert!((s - 0.9).abs() < 1e-7);
    }

    #[test]
    fn projection_safeguard() {
        let p = unit_square();
        let q = v2(2.0, 0.1);
        let y = p.project(&q).unwrap();
        // the distance is tight; the point itself is sqrt(gap)-accurate in
        // directions where the objective is flat
        assert!(((&q - &y).norm() - 1.5).abs() < 1e-7);
        assert!((y[0] - 0.5).abs() < 1e-6);
        assert!((y[1] - 0.1).abs() < 1e-4);
        assert!(p.contains(&y, 1e-7));
    }
}
