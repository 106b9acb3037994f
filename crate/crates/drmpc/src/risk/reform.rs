//! Finite conic reformulations of worst-case CVaR over Wasserstein balls.
//!
//! For the collision margin g(x, w) = d - max_m [A_m (Cx - w) - b_m]_+ and
//! an atomic center distribution, the worst-case CVaR over the ball of
//! radius theta solves
//!
//! ```text
//!   inf  t + (1/beta) (theta*lam + sum_l p_l u_l)
//!   s.t. u_l >= d - nu_l'q_l + gamma_l'r_l - t      for all l
//!        ||A'nu_l - H'gamma_l|| <= lam              for all l
//!        nu_l >= 0, 1'nu_l <= 1, gamma_l >= 0, u_l >= 0, lam >= 0
//! ```
//!
//! with q_l = A(Cx - w_l) - b and r_l = h - H w_l. The simplex-constrained
//! multiplier nu_l is the dual of the facet-form distance, so at theta = 0
//! the program collapses to the empirical CVaR of g exactly; the hinge
//! variables u_l realize the positive part of the CVaR integrand, and
//! gamma_l prices the support constraint of the inner transport suprema.

use super::{cvar_discrete, AmbiguitySet, RiskError};
use crate::conic::{self, ProgramBuilder, SolveStatus};
use crate::geometry::{constraint_g, ObstacleModel, Polytope};
use nalgebra::DVector;

/// Optimizing multipliers of the worst-case risk program, reused by the
/// planner to freeze safety constraints along a reference trajectory.
#[derive(Debug, Clone)]
pub struct RiskMultipliers {
    /// CVaR threshold variable.
    pub t: f64,
    /// Transport budget multiplier.
    pub lambda: f64,
    /// Per-atom facet multipliers (distance dual, simplex-constrained).
    pub nu: Vec<DVector<f64>>,
    /// Per-atom support multipliers.
    pub gamma: Vec<DVector<f64>>,
    /// Per-atom hinge values.
    pub hinge: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WorstCaseRisk {
    pub value: f64,
    pub multipliers: RiskMultipliers,
}

fn check_beta(beta: f64) -> Result<(), RiskError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(RiskError::InvalidBeta(beta));
    }
    Ok(())
}

/// Upper bound on sup CVaR_beta[g(x, w)] over the ambiguity set, together
/// with the optimizing multipliers. Exact at theta = 0.
pub fn worst_case_cvar_ub(
    amb: &AmbiguitySet,
    beta: f64,
    x: &DVector<f64>,
    obs: &ObstacleModel,
    support: &Polytope,
) -> Result<WorstCaseRisk, RiskError> {
    check_beta(beta)?;
    let a = obs.body.facets();
    let bvec = obs.body.offsets();
    let h_mat = support.facets();
    let h_vec = support.offsets();
    let (m_facets, n_pos) = (a.nrows(), a.ncols());
    let n_h = h_mat.nrows();
    if x.len() != obs.state_dim() {
        return Err(RiskError::DimensionMismatch(format!(
            "state dim {} vs selector {}",
            x.len(),
            obs.state_dim()
        )));
    }
    if support.dim() != n_pos {
        return Err(RiskError::DimensionMismatch(
            "support and obstacle dimensions differ".into(),
        ));
    }
    let cx = &obs.position_selector * x;
    let atoms = amb.center.atoms();
    let weights = amb.center.weights();
    let l = atoms.len();

    let mut bld = ProgramBuilder::new();
    let t = bld.free_vars(1);
    let lam = bld.nonneg_vars(1);
    bld.add_objective(t, 1.0);
    bld.add_objective(lam, amb.radius / beta);

    let mut nu_idx = Vec::with_capacity(l);
    let mut ga_idx = Vec::with_capacity(l);
    let mut u_idx = Vec::with_capacity(l);
    for (wl, &pl) in atoms.iter().zip(weights.iter()) {
        let q = a * (&cx - wl) - bvec;
        let r = (h_vec - h_mat * wl).map(|v| v.max(0.0));
        let nu = bld.nonneg_vars(m_facets);
        let ga = bld.nonneg_vars(n_h);
        let u = bld.nonneg_vars(1);
        nu_idx.push(nu);
        ga_idx.push(ga);
        u_idx.push(u);
        bld.add_objective(u, pl / beta);
        // simplex: 1'nu <= 1
        let ones: Vec<(usize, f64)> = (0..m_facets).map(|m| (nu + m, 1.0)).collect();
        bld.add_le_row(&ones, 1.0);
        // hinge: u + t + nu'q - gamma'r >= d
        let mut hinge: Vec<(usize, f64)> = vec![(u, 1.0), (t, 1.0)];
        for m in 0..m_facets {
            hinge.push((nu + m, q[m]));
        }
        for k in 0..n_h {
            hinge.push((ga + k, -r[k]));
        }
        bld.add_ge_row(&hinge, obs.clearance);
        // ||A'nu - H'gamma|| <= lam
        let s = bld.soc_vars(1 + n_pos);
        bld.add_row(&[(s, 1.0), (lam, -1.0)], 0.0);
        for i in 0..n_pos {
            let mut row: Vec<(usize, f64)> = vec![(s + 1 + i, 1.0)];
            for mm in 0..m_facets {
                row.push((nu + mm, -a[(mm, i)]));
            }
            for k in 0..n_h {
                row.push((ga + k, h_mat[(k, i)]));
            }
            bld.add_row(&row, 0.0);
        }
    }
    let prog = bld.build();
    let sol = conic::solve(&prog, 1e-9, 400)?;
    if sol.status != SolveStatus::Optimal {
        return Err(RiskError::Numerical(format!(
            "worst-case risk solve ended with {:?} (residuals {:?});\n{}",
            sol.status,
            sol.residuals,
            prog.dump_triplets()
        )));
    }
    let mut nu = Vec::with_capacity(l);
    let mut gamma = Vec::with_capacity(l);
    let mut hinge = Vec::with_capacity(l);
    for li in 0..l {
        nu.push(DVector::from_fn(m_facets, |m, _| sol.primal[nu_idx[li] + m]));
        gamma.push(DVector::from_fn(n_h, |k, _| sol.primal[ga_idx[li] + k]));
        hinge.push(sol.primal[u_idx[li]]);
    }
    Ok(WorstCaseRisk {
        value: sol.objective,
        multipliers: RiskMultipliers {
            t: sol.primal[t],
            lambda: sol.primal[lam],
            nu,
            gamma,
            hinge,
        },
    })
}

/// Membership in the Wasserstein-robust safe set: the worst-case risk
/// bound is within `tol` of nonpositive.
pub fn member_x_wass(
    x: &DVector<f64>,
    amb: &AmbiguitySet,
    beta: f64,
    obs: &ObstacleModel,
    support: &Polytope,
    tol: f64,
) -> Result<bool, RiskError> {
    Ok(worst_case_cvar_ub(amb, beta, x, obs, support)?.value <= tol)
}

/// Brute-force lower bound on the worst-case CVaR: transport center mass
/// onto grid points of the support within the Wasserstein budget and keep
/// the best exact CVaR found. Every candidate is feasible for the sup, so
/// the result brackets [`worst_case_cvar_ub`] from below.
pub fn worst_case_cvar_lb_oracle(
    amb: &AmbiguitySet,
    beta: f64,
    x: &DVector<f64>,
    obs: &ObstacleModel,
    support: &Polytope,
    grid_resolution: usize,
) -> Result<f64, RiskError> {
    check_beta(beta)?;
    if grid_resolution == 0 {
        return Err(RiskError::InvalidDistribution("grid resolution 0".into()));
    }
    let atoms = amb.center.atoms();
    let weights = amb.center.weights();
    let values: Vec<f64> = atoms
        .iter()
        .map(|w| constraint_g(x, w, obs))
        .collect::<Result<_, _>>()?;
    let mut best = cvar_discrete(&values, weights, beta)?;
    if amb.radius <= 0.0 {
        return Ok(best);
    }
    // grid the support's bounding box, keep members
    let dim = support.dim();
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    for j in 0..dim {
        let mut d = DVector::zeros(dim);
        d[j] = 1.0;
        hi[j] = support.support(&d)?;
        d[j] = -1.0;
        lo[j] = -support.support(&d)?;
    }
    let mut grid: Vec<DVector<f64>> = Vec::new();
    let mut counter = vec![0usize; dim];
    loop {
        let p = DVector::from_fn(dim, |j, _| {
            if grid_resolution == 1 {
                0.5 * (lo[j] + hi[j])
            } else {
                lo[j] + (hi[j] - lo[j]) * counter[j] as f64 / (grid_resolution - 1) as f64
            }
        });
        if support.contains(&p, 1e-9) {
            grid.push(p);
        }
        let mut carry = 0;
        loop {
            if carry == dim {
                break;
            }
            counter[carry] += 1;
            if counter[carry] < grid_resolution {
                break;
            }
            counter[carry] = 0;
            carry += 1;
        }
        if carry == dim {
            break;
        }
    }

    for target in &grid {
        let gt = constraint_g(x, target, obs)?;
        let dists: Vec<f64> = atoms.iter().map(|w| (w - target).norm()).collect();
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&i, &j| {
            dists[i]
                .partial_cmp(&dists[j])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        // three greedy fill strategies; each yields a feasible candidate
        for strategy in 0..3 {
            let mut budget = amb.radius;
            let mut mass_cap = match strategy {
                0 => 1.0,  // move as much as the budget allows
                1 => beta, // only the top tail matters for CVaR
                _ => beta, // beta cap, but skip atoms already above target
            };
            let mut moved = 0.0;
            let mut residual = weights.to_vec();
            for &i in &order {
                if mass_cap <= 1e-15 || budget <= 1e-15 {
                    break;
                }
                if strategy == 2 && values[i] >= gt {
                    continue;
                }
                let movable = if dists[i] < 1e-15 {
                    residual[i]
                } else {
                    residual[i].min(budget / dists[i]).min(mass_cap)
                };
                if movable <= 0.0 {
                    continue;
                }
                residual[i] -= movable;
                moved += movable;
                budget -= movable * dists[i];
                mass_cap -= movable;
            }
            if moved <= 1e-15 {
                continue;
            }
            let mut vals = vec![gt];
            let mut ws = vec![moved];
            for (i, &rw) in residual.iter().enumerate() {
                if rw > 1e-15 {
                    vals.push(values[i]);
                    ws.push(rw);
                }
            }
            let total: f64 = ws.iter().sum();
            for w in ws.iter_mut() {
                *w /= total;
            }
            let c = cvar_discrete(&vals, &ws, beta)?;
            if c > best {
                best = c;
            }
        }
    }
    Ok(best)
}

/// Per-facet worst-case CVaR of the displacement projection:
/// b_m^hat = sup CVaR_beta[A_m' w] over the ambiguity set. One scalar per
/// obstacle facet; these offsets define the half-space inner approximation
/// of the robust safe set.
pub fn inner_offsets(
    amb: &AmbiguitySet,
    beta: f64,
    obs: &ObstacleModel,
    support: &Polytope,
) -> Result<DVector<f64>, RiskError> {
    check_beta(beta)?;
    let a = obs.body.facets();
    let h_mat = support.facets();
    let h_vec = support.offsets();
    let (m_facets, n_pos) = (a.nrows(), a.ncols());
    let n_h = h_mat.nrows();
    if support.dim() != n_pos {
        return Err(RiskError::DimensionMismatch(
            "support and obstacle dimensions differ".into(),
        ));
    }
    let atoms = amb.center.atoms();
    let weights = amb.center.weights();

    let mut out = DVector::zeros(m_facets);
    for m in 0..m_facets {
        let am = a.row(m).transpose();
        let mut bld = ProgramBuilder::new();
        let t = bld.free_vars(1);
        let lam = bld.nonneg_vars(1);
        bld.add_objective(t, 1.0);
        bld.add_objective(lam, amb.radius / beta);
        for (wl, &pl) in atoms.iter().zip(weights.iter()) {
            let r = (h_vec - h_mat * wl).map(|v| v.max(0.0));
            let proj = am.dot(wl);
            let xi = bld.nonneg_vars(n_h);
            let u = bld.nonneg_vars(1);
            bld.add_objective(u, pl / beta);
            // u + t - xi'r >= A_m'w_l
            let mut hinge: Vec<(usize, f64)> = vec![(u, 1.0), (t, 1.0)];
            for k in 0..n_h {
                hinge.push((xi + k, -r[k]));
            }
            bld.add_ge_row(&hinge, proj);
            // ||A_m - H'xi|| <= lam
            let s = bld.soc_vars(1 + n_pos);
            bld.add_row(&[(s, 1.0), (lam, -1.0)], 0.0);
            for i in 0..n_pos {
                let mut row: Vec<(usize, f64)> = vec![(s + 1 + i, 1.0)];
                for k in 0..n_h {
                    row.push((xi + k, h_mat[(k, i)]));
                }
                bld.add_row(&row, am[i]);
            }
        }
        let prog = bld.build();
        let sol = conic::solve(&prog, 1e-9, 400)?;
        if sol.status != SolveStatus::Optimal {
            return Err(RiskError::Numerical(format!(
                "facet offset solve {m} ended with {:?};\n{}",
                sol.status,
                prog.dump_triplets()
            )));
        }
        out[m] = sol.objective;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::DiscreteDistribution;
    use nalgebra::DMatrix;
    use rand::prelude::*;

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn square_obstacle(clearance: f64) -> ObstacleModel {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_element(4, 0.5);
        ObstacleModel::new(
            Polytope::new(a, b).unwrap(),
            DMatrix::identity(2, 2),
            clearance,
        )
        .unwrap()
    }

    fn box_support() -> Polytope {
        Polytope::box_nd(&v2(-0.45, -0.45), &v2(0.45, 0.45)).unwrap()
    }

    #[test]
    fn zero_radius_single_atom_facet_gap() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let center =
            DiscreteDistribution::new(vec![v2(0.0, 0.0)], vec![1.0], &support).unwrap();
        let amb = AmbiguitySet::new(center, 0.0).unwrap();
        // Cx on a facet normal at gap 0.5: value = d - gap
        let x = v2(1.0, 0.0);
        let r = worst_case_cvar_ub(&amb, 0.05, &x, &obs, &support).unwrap();
        assert!((r.value - (0.1 - 0.5)).abs() < 1e-6, "value {}", r.value);
    }

    #[test]
    fn zero_radius_matches_empirical_cvar() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..12 {
            let n = 5;
            let atoms: Vec<DVector<f64>> = (0..n)
                .map(|_| v2(rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45)))
                .collect();
            let center =
                DiscreteDistribution::new(atoms.clone(), vec![0.2; n], &support).unwrap();
            let amb = AmbiguitySet::new(center, 0.0).unwrap();
            let x = v2(rng.random_range(-2.0..4.0), rng.random_range(-2.0..4.0));
            let beta = [0.05, 0.3, 0.9][trial % 3];
            let ub = worst_case_cvar_ub(&amb, beta, &x, &obs, &support)
                .unwrap()
                .value;
            let g: Vec<f64> = atoms
                .iter()
                .map(|w| constraint_g(&x, w, &obs).unwrap())
                .collect();
            let emp = cvar_discrete(&g, &vec![0.2; n], beta).unwrap();
            assert!(
                (ub - emp).abs() < 1e-6,
                "trial {trial}: ub {ub} vs empirical {emp} at x = {x:?}"
            );
        }
    }

    #[test]
    fn monotone_in_radius() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let atoms = vec![v2(0.1, -0.2), v2(-0.3, 0.25), v2(0.0, 0.4)];
        let center =
            DiscreteDistribution::new(atoms, vec![0.5, 0.25, 0.25], &support).unwrap();
        let x = v2(1.3, 0.4);
        let mut last = f64::NEG_INFINITY;
        for theta in [0.0, 1e-3, 0.05, 0.2] {
            let amb = AmbiguitySet::new(center.clone(), theta).unwrap();
            let v = worst_case_cvar_ub(&amb, 0.05, &x, &obs, &support)
                .unwrap()
                .value;
            assert!(v >= last - 1e-8, "theta {theta}: {v} < {last}");
            last = v;
        }
    }

    #[test]
    fn membership_examples() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let center =
            DiscreteDistribution::new(vec![v2(0.0, 0.0)], vec![1.0], &support).unwrap();
        let amb = AmbiguitySet::new(center, 0.0).unwrap();
        // interior point: g = clearance > 0 surely
        assert!(!member_x_wass(&v2(0.0, 0.0), &amb, 0.05, &obs, &support, 1e-6).unwrap());
        // far beyond clearance + support diameter
        assert!(member_x_wass(&v2(3.0, 0.0), &amb, 0.05, &obs, &support, 1e-6).unwrap());
    }

    #[test]
    fn lower_bound_brackets_upper_bound() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let atoms = vec![v2(0.2, 0.1), v2(-0.1, -0.3)];
        let center = DiscreteDistribution::new(atoms, vec![0.5, 0.5], &support).unwrap();
        for theta in [0.0, 1e-3, 0.05, 0.2] {
            let amb = AmbiguitySet::new(center.clone(), theta).unwrap();
            for x in [v2(1.2, 0.3), v2(-0.9, -1.1), v2(0.8, 0.9)] {
                let ub = worst_case_cvar_ub(&amb, 0.1, &x, &obs, &support)
                    .unwrap()
                    .value;
                let lb =
                    worst_case_cvar_lb_oracle(&amb, 0.1, &x, &obs, &support, 15).unwrap();
                assert!(lb <= ub + 1e-7, "lb {lb} > ub {ub} at theta {theta}");
            }
        }
    }

    #[test]
    fn lb_oracle_zero_radius_is_empirical() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let atoms = vec![v2(0.2, 0.1), v2(-0.1, -0.3), v2(0.4, 0.0)];
        let w = vec![0.3, 0.4, 0.3];
        let center = DiscreteDistribution::new(atoms.clone(), w.clone(), &support).unwrap();
        let amb = AmbiguitySet::new(center, 0.0).unwrap();
        let x = v2(1.1, 0.2);
        let lb = worst_case_cvar_lb_oracle(&amb, 0.2, &x, &obs, &support, 9).unwrap();
        let g: Vec<f64> = atoms
            .iter()
            .map(|wv| constraint_g(&x, wv, &obs).unwrap())
            .collect();
        let emp = cvar_discrete(&g, &w, 0.2).unwrap();
        assert!((lb - emp).abs() < 1e-12);
    }

    #[test]
    fn inner_offsets_zero_radius_forms() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let atoms = vec![v2(0.3, -0.1), v2(-0.2, 0.2), v2(0.1, 0.4), v2(0.0, -0.3)];
        let w = vec![0.25; 4];
        let center = DiscreteDistribution::new(atoms.clone(), w.clone(), &support).unwrap();
        let amb = AmbiguitySet::new(center, 0.0).unwrap();
        // beta = 1: mean projection per facet
        let b1 = inner_offsets(&amb, 1.0, &obs, &support).unwrap();
        for m in 0..4 {
            let am = obs.body.facets().row(m).transpose();
            let mean: f64 = atoms.iter().zip(w.iter()).map(|(a, p)| p * am.dot(a)).sum();
            assert!((b1[m] - mean).abs() < 1e-6, "facet {m}: {} vs {}", b1[m], mean);
        }
        // general beta: empirical CVaR of the projections
        let beta = 0.3;
        let bb = inner_offsets(&amb, beta, &obs, &support).unwrap();
        for m in 0..4 {
            let am = obs.body.facets().row(m).transpose();
            let proj: Vec<f64> = atoms.iter().map(|a| am.dot(a)).collect();
            let cv = cvar_discrete(&proj, &w, beta).unwrap();
            assert!((bb[m] - cv).abs() < 1e-6, "facet {m}: {} vs {}", bb[m], cv);
        }
    }

    #[test]
    fn inner_offsets_below_support_max() {
        let obs = square_obstacle(0.1);
        let support = box_support();
        let atoms = vec![v2(0.3, -0.1), v2(-0.2, 0.2)];
        let center = DiscreteDistribution::new(atoms, vec![0.5, 0.5], &support).unwrap();
        for theta in [0.0, 0.01, 0.3, 5.0] {
            let amb = AmbiguitySet::new(center.clone(), theta).unwrap();
            let b = inner_offsets(&amb, 0.05, &obs, &support).unwrap();
            for m in 0..4 {
                let am = obs.body.facets().row(m).transpose();
                let smax = support.support(&am).unwrap();
                assert!(
                    b[m] <= smax + 1e-6,
                    "facet {m}: {} above support max {} at theta {theta}",
                    b[m],
                    smax
                );
            }
        }
    }
}
