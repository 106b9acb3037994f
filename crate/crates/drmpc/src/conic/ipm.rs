//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling.
//!
//! Solves  min c'x  s.t.  Ax = b,  x in K  (free x nonneg x soc blocks)
//! by embedding the primal-dual pair into the self-dual system over
//! (x, y, z, tau, kappa) and following the central path with a
//! Mehrotra-style predictor-corrector. Each Newton step reduces to a
//! quasi-definite KKT solve handled by the sparse LDL^T in [`linalg`].

use super::linalg::{CscMat, LdlFactor};
use super::{ConeBlock, ConicError, ConicProgram, ConicSolution, Residuals, SolveStatus};
use nalgebra::DVector;

const STATIC_REG: f64 = 1e-9;
const REFINE_ROUNDS: usize = 2;

#[derive(Debug, Clone, Copy)]
enum Span {
    Free { start: usize, len: usize },
    NonNeg { start: usize, len: usize },
    Soc { start: usize, len: usize },
}

struct Layout {
    spans: Vec<Span>,
    nvars: usize,
    degree: usize,
}

impl Layout {
    fn new(cones: &[ConeBlock]) -> Self {
        let mut spans = Vec::with_capacity(cones.len());
        let mut start = 0;
        let mut degree = 0;
        for b in cones {
            match *b {
                ConeBlock::Free(n) => spans.push(Span::Free { start, len: n }),
                ConeBlock::NonNeg(n) => {
                    degree += n;
                    spans.push(Span::NonNeg { start, len: n });
                }
                ConeBlock::Soc(n) => {
                    degree += 1;
                    spans.push(Span::Soc { start, len: n });
                }
            }
            start += b.len();
        }
        Layout {
            spans,
            nvars: start,
            degree,
        }
    }

    fn unit_init(&self, x: &mut [f64]) {
        for s in &self.spans {
            match *s {
                Span::Free { .. } => {}
                Span::NonNeg { start, len } => {
                    for i in start..start + len {
                        x[i] = 1.0;
                    }
                }
                Span::Soc { start, .. } => {
                    x[start] = 1.0;
                }
            }
        }
    }
}

/// Nesterov-Todd scaling per cone block; free blocks carry no scaling.
struct Scaling {
    /// lambda = W z = W^{-1} x, the scaled point
    lambda: Vec<f64>,
    /// nonneg: diag entries of W^2 (= x/z)
    nn_w2: Vec<f64>,
    /// per soc block: dense symmetric W and W^{-1}
    soc_w: Vec<Vec<f64>>,
    soc_winv: Vec<Vec<f64>>,
}

fn jnorm_sq(v: &[f64]) -> f64 {
    let head = v[0] * v[0];
    let tail: f64 = v[1..].iter().map(|t| t * t).sum();
    head - tail
}

/// V(wbar) = (2 wbar wbar' - J)^{1/2} materialized densely.
fn soc_sqrt_matrix(wbar: &[f64]) -> Vec<f64> {
    let p = wbar.len();
    let mut v = vec![0.0; p * p];
    let w0 = wbar[0];
    v[0] = w0;
    for i in 1..p {
        v[i] = wbar[i];
        v[i * p] = wbar[i];
    }
    for i in 1..p {
        for j in 1..p {
            let mut e = wbar[i] * wbar[j] / (1.0 + w0);
            if i == j {
                e += 1.0;
            }
            v[i * p + j] = e;
        }
    }
    v
}

fn dense_matvec(m: &[f64], p: usize, x: &[f64], y: &mut [f64]) {
    for i in 0..p {
        let mut acc = 0.0;
        for j in 0..p {
            acc += m[i * p + j] * x[j];
        }
        y[i] = acc;
    }
}

impl Scaling {
    fn compute(layout: &Layout, x: &[f64], z: &[f64]) -> Option<Scaling> {
        let n = layout.nvars;
        let mut lambda = vec![0.0; n];
        let mut nn_w2 = vec![0.0; n];
        let mut soc_w = Vec::new();
        let mut soc_winv = Vec::new();
        for s in &layout.spans {
            match *s {
                Span::Free { .. } => {}
                Span::NonNeg { start, len } => {
                    for i in start..start + len {
                        if x[i] <= 0.0 || z[i] <= 0.0 {
                            return None;
                        }
                        nn_w2[i] = x[i] / z[i];
                        lambda[i] = (x[i] * z[i]).sqrt();
                    }
                }
                Span::Soc { start, len } => {
                    let xs = &x[start..start + len];
                    let zs = &z[start..start + len];
                    let a2 = jnorm_sq(xs);
                    let b2 = jnorm_sq(zs);
                    if a2 <= 0.0 || b2 <= 0.0 || xs[0] <= 0.0 || zs[0] <= 0.0 {
                        return None;
                    }
                    let a = a2.sqrt();
                    let b = b2.sqrt();
                    let dot: f64 = xs.iter().zip(zs.iter()).map(|(u, v)| u * v).sum();
                    let gamma = ((1.0 + dot / (a * b)) / 2.0).sqrt();
                    let p = len;
                    // wbar = (xbar + J zbar) / (2 gamma)
                    let mut wbar = vec![0.0; p];
                    wbar[0] = (xs[0] / a + zs[0] / b) / (2.0 * gamma);
                    for i in 1..p {
                        wbar[i] = (xs[i] / a - zs[i] / b) / (2.0 * gamma);
                    }
                    let eta = (a / b).sqrt();
                    let vmat = soc_sqrt_matrix(&wbar);
                    let mut w = vec![0.0; p * p];
                    let mut winv = vec![0.0; p * p];
                    for i in 0..p {
                        for j in 0..p {
                            w[i * p + j] = eta * vmat[i * p + j];
                            // W^{-1} = (1/eta) J V J
                            let sgn = if (i == 0) ^ (j == 0) { -1.0 } else { 1.0 };
                            winv[i * p + j] = sgn * vmat[i * p + j] / eta;
                        }
                    }
                    // lambda = W z
                    let mut lam = vec![0.0; p];
                    dense_matvec(&w, p, zs, &mut lam);
                    lambda[start..start + len].copy_from_slice(&lam);
                    soc_w.push(w);
                    soc_winv.push(winv);
                }
            }
        }
        Some(Scaling {
            lambda,
            nn_w2,
            soc_w,
            soc_winv,
        })
    }

    /// out = W^{-1} v on cone blocks, 0 on free blocks.
    fn apply_winv(&self, layout: &Layout, v: &[f64], out: &mut [f64]) {
        let mut soc_idx = 0;
        for s in &layout.spans {
            match *s {
                Span::Free { start, len } => {
                    for i in start..start + len {
                        out[i] = 0.0;
                    }
                }
                Span::NonNeg { start, len } => {
                    for i in start..start + len {
                        out[i] = v[i] / self.nn_w2[i].sqrt();
                    }
                }
                Span::Soc { start, len } => {
                    let mut tmp = vec![0.0; len];
                    dense_matvec(&self.soc_winv[soc_idx], len, &v[start..start + len], &mut tmp);
                    out[start..start + len].copy_from_slice(&tmp);
                    soc_idx += 1;
                }
            }
        }
    }

    /// out = W v on cone blocks, 0 on free blocks.
    fn apply_w(&self, layout: &Layout, v: &[f64], out: &mut [f64]) {
        let mut soc_idx = 0;
        for s in &layout.spans {
            match *s {
                Span::Free { start, len } => {
                    for i in start..start + len {
                        out[i] = 0.0;
                    }
                }
                Span::NonNeg { start, len } => {
                    for i in start..start + len {
                        out[i] = v[i] * self.nn_w2[i].sqrt();
                    }
                }
                Span::Soc { start, len } => {
                    let mut tmp = vec![0.0; len];
                    dense_matvec(&self.soc_w[soc_idx], len, &v[start..start + len], &mut tmp);
                    out[start..start + len].copy_from_slice(&tmp);
                    soc_idx += 1;
                }
            }
        }
    }
}

/// Jordan product u o v blockwise (cone blocks only; free entries zeroed).
fn jordan_product(layout: &Layout, u: &[f64], v: &[f64], out: &mut [f64]) {
    for s in &layout.spans {
        match *s {
            Span::Free { start, len } => {
                for i in start..start + len {
                    out[i] = 0.0;
                }
            }
            Span::NonNeg { start, len } => {
                for i in start..start + len {
                    out[i] = u[i] * v[i];
                }
            }
            Span::Soc { start, len } => {
                let us = &u[start..start + len];
                let vs = &v[start..start + len];
                let dot: f64 = us.iter().zip(vs.iter()).map(|(a, b)| a * b).sum();
                out[start] = dot;
                for i in 1..len {
                    out[start + i] = us[0] * vs[i] + vs[0] * us[i];
                }
            }
        }
    }
}

/// Solve lambda o u = w blockwise.
fn jordan_div(layout: &Layout, lambda: &[f64], w: &[f64], out: &mut [f64]) {
    for s in &layout.spans {
        match *s {
            Span::Free { start, len } => {
                for i in start..start + len {
                    out[i] = 0.0;
                }
            }
            Span::NonNeg { start, len } => {
                for i in start..start + len {
                    out[i] = w[i] / lambda[i];
                }
            }
            Span::Soc { start, len } => {
                let l = &lambda[start..start + len];
                let ws = &w[start..start + len];
                let det = jnorm_sq(l);
                let l1w1: f64 = l[1..].iter().zip(ws[1..].iter()).map(|(a, b)| a * b).sum();
                let u0 = (l[0] * ws[0] - l1w1) / det;
                out[start] = u0;
                for i in 1..len {
                    out[start + i] = (ws[i] - u0 * l[i]) / l[0];
                }
            }
        }
    }
}

/// Identity element of the Jordan algebra per block.
fn jordan_identity(layout: &Layout, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for s in &layout.spans {
        match *s {
            Span::Free { .. } => {}
            Span::NonNeg { start, len } => {
                for i in start..start + len {
                    out[i] = 1.0;
                }
            }
            Span::Soc { start, .. } => {
                out[start] = 1.0;
            }
        }
    }
}

/// Largest alpha in [0, cap] keeping v + alpha*dv inside every cone block.
fn max_step(layout: &Layout, v: &[f64], dv: &[f64], cap: f64) -> f64 {
    let mut alpha = cap;
    for s in &layout.spans {
        match *s {
            Span::Free { .. } => {}
            Span::NonNeg { start, len } => {
                for i in start..start + len {
                    if dv[i] < 0.0 {
                        alpha = alpha.min(-v[i] / dv[i]);
                    }
                }
            }
            Span::Soc { start, len } => {
                let xs = &v[start..start + len];
                let ds = &dv[start..start + len];
                let a = ds[0] * ds[0] - ds[1..].iter().map(|t| t * t).sum::<f64>();
                let b = 2.0
                    * (xs[0] * ds[0]
                        - xs[1..]
                            .iter()
                            .zip(ds[1..].iter())
                            .map(|(p, q)| p * q)
                            .sum::<f64>());
                let c = jnorm_sq(xs).max(0.0);
                let mut best = f64::INFINITY;
                let mut consider = |r: f64| {
                    if r > 1e-14 && xs[0] + r * ds[0] >= -1e-12 {
                        if r < best {
                            best = r;
                        }
                    }
                };
                if a.abs() < 1e-14 {
                    if b < 0.0 {
                        consider(-c / b);
                    }
                } else {
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        // numerically stable pair of roots
                        let q = -0.5 * (b + b.signum() * sq);
                        if q != 0.0 {
                            consider(q / a);
                            consider(c / q);
                        } else {
                            consider(0.0_f64.max(-b / (2.0 * a)));
                        }
                    }
                }
                alpha = alpha.min(best);
            }
        }
    }
    alpha
}

struct KktSystem {
    n: usize,
    m: usize,
    factor: LdlFactor,
    /// positions of the H-block entries inside `triplets`, per span
    triplets: Vec<(usize, usize, f64)>,
    h_entry_idx: Vec<usize>,
}

impl KktSystem {
    fn new(layout: &Layout, a: &CscMat) -> Self {
        let n = layout.nvars;
        let m = a.nrows;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut h_entry_idx = Vec::new();
        for s in &layout.spans {
            match *s {
                Span::Free { start, len } | Span::NonNeg { start, len } => {
                    for i in start..start + len {
                        h_entry_idx.push(triplets.len());
                        triplets.push((i, i, STATIC_REG));
                    }
                }
                Span::Soc { start, len } => {
                    for i in 0..len {
                        for j in i..len {
                            h_entry_idx.push(triplets.len());
                            triplets.push((start + i, start + j, 0.0));
                        }
                    }
                }
            }
        }
        for j in 0..a.ncols {
            for p in a.colptr[j]..a.colptr[j + 1] {
                triplets.push((j, n + a.rowind[p], a.values[p]));
            }
        }
        for r in 0..m {
            triplets.push((n + r, n + r, -STATIC_REG));
        }
        let mut signs = vec![1.0; n];
        signs.extend(vec![-1.0; m]);
        let factor = LdlFactor::symbolic(n + m, &triplets, &signs);
        KktSystem {
            n,
            m,
            factor,
            triplets,
            h_entry_idx,
        }
    }

    /// Refresh the W^{-2} block from the scaling and refactor.
    fn refactor(&mut self, layout: &Layout, sc: &Scaling) -> bool {
        let mut k = 0;
        let mut soc_idx = 0;
        for s in &layout.spans {
            match *s {
                Span::Free { len, .. } => {
                    for _ in 0..len {
                        self.triplets[self.h_entry_idx[k]].2 = STATIC_REG;
                        k += 1;
                    }
                }
                Span::NonNeg { start, len } => {
                    for i in start..start + len {
                        self.triplets[self.h_entry_idx[k]].2 = 1.0 / sc.nn_w2[i] + STATIC_REG;
                        k += 1;
                    }
                }
                Span::Soc { len, .. } => {
                    // W^{-2} = Winv * Winv (dense, symmetric)
                    let winv = &sc.soc_winv[soc_idx];
                    for i in 0..len {
                        for j in i..len {
                            let mut acc = 0.0;
                            for t in 0..len {
                                acc += winv[i * len + t] * winv[j * len + t];
                            }
                            if i == j {
                                acc += STATIC_REG;
                            }
                            self.triplets[self.h_entry_idx[k]].2 = acc;
                            k += 1;
                        }
                    }
                    soc_idx += 1;
                }
            }
        }
        self.factor.set_values(&self.triplets);
        self.factor.factor()
    }

    /// Apply the *unregularized* KKT matrix (for iterative refinement).
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for &(i, j, val) in &self.triplets {
            // strip static regularization from the diagonal
            let val = if i == j {
                if i < self.n {
                    val - STATIC_REG
                } else {
                    val + STATIC_REG
                }
            } else {
                val
            };
            out[i] += val * v[j];
            if i != j {
                out[j] += val * v[i];
            }
        }
    }

    fn solve_refined(&self, rhs: &[f64]) -> Vec<f64> {
        let nm = self.n + self.m;
        let mut x = rhs.to_vec();
        self.factor.solve(&mut x);
        let mut resid = vec![0.0; nm];
        for _ in 0..REFINE_ROUNDS {
            self.apply(&x, &mut resid);
            let mut worst = 0.0_f64;
            for i in 0..nm {
                resid[i] = rhs[i] - resid[i];
                worst = worst.max(resid[i].abs());
            }
            let scale = 1.0 + rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            if worst < 1e-14 * scale {
                break;
            }
            self.factor.solve(&mut resid);
            for i in 0..nm {
                x[i] += resid[i];
            }
        }
        x
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

#[allow(clippy::too_many_arguments)]
fn newton_direction(
    layout: &Layout,
    kkt: &KktSystem,
    sc: &Scaling,
    a: &CscMat,
    c: &[f64],
    b: &[f64],
    tau: f64,
    kappa: f64,
    bp: &[f64],
    bd: &[f64],
    bg: f64,
    ds: &[f64],
    dkap: f64,
) -> Result<Direction, ConicError> {
    let n = layout.nvars;
    let m = a.nrows;
    // dst = lambda \ ds ; winv_dst = W^{-1} dst
    let mut dst = vec![0.0; n];
    jordan_div(layout, &sc.lambda, ds, &mut dst);
    let mut winv_dst = vec![0.0; n];
    sc.apply_winv(layout, &dst, &mut winv_dst);

    let mut rhs_base = vec![0.0; n + m];
    for i in 0..n {
        rhs_base[i] = bd[i] + winv_dst[i];
    }
    for r in 0..m {
        rhs_base[n + r] = bp[r];
    }
    let mut rhs_dir = vec![0.0; n + m];
    for i in 0..n {
        rhs_dir[i] = -c[i];
    }
    for r in 0..m {
        rhs_dir[n + r] = b[r];
    }
    let sol_base = kkt.solve_refined(&rhs_base);
    let sol_dir = kkt.solve_refined(&rhs_dir);

    let cx_b: f64 = (0..n).map(|i| c[i] * sol_base[i]).sum();
    let cx_d: f64 = (0..n).map(|i| c[i] * sol_dir[i]).sum();
    let bq_b: f64 = (0..m).map(|r| b[r] * sol_base[n + r]).sum();
    let bq_d: f64 = (0..m).map(|r| b[r] * sol_dir[n + r]).sum();

    let denom = kappa / tau - bq_d - cx_d;
    if !(denom.is_finite()) || denom.abs() < 1e-300 {
        return Err(ConicError::Numerical("singular tau equation".into()));
    }
    let dtau = (bg + dkap / tau + bq_b + cx_b) / denom;

    let mut dx = vec![0.0; n];
    let mut q = vec![0.0; m];
    for i in 0..n {
        dx[i] = sol_base[i] + dtau * sol_dir[i];
    }
    for r in 0..m {
        q[r] = sol_base[n + r] + dtau * sol_dir[n + r];
    }
    let dy: Vec<f64> = q.iter().map(|v| -v).collect();
    // dz = W^{-1} dst - W^{-2} dx  (cone blocks; zero on free)
    let mut winv_dx = vec![0.0; n];
    sc.apply_winv(layout, &dx, &mut winv_dx);
    let mut w2inv_dx = vec![0.0; n];
    sc.apply_winv(layout, &winv_dx, &mut w2inv_dx);
    let mut dz = vec![0.0; n];
    for s in &layout.spans {
        match *s {
            Span::Free { start, len } => {
                for i in start..start + len {
                    dz[i] = 0.0;
                }
            }
            Span::NonNeg { start, len } | Span::Soc { start, len } => {
                for i in start..start + len {
                    dz[i] = winv_dst[i] - w2inv_dx[i];
                }
            }
        }
    }
    let dkappa = (dkap - kappa * dtau) / tau;
    Ok(Direction {
        dx,
        dy,
        dz,
        dtau,
        dkappa,
    })
}

pub fn solve_hsde(
    prog: &ConicProgram,
    tol: f64,
    max_iter: usize,
) -> Result<ConicSolution, ConicError> {
    let layout = Layout::new(&prog.cones);
    let n = layout.nvars;
    let m = prog.num_rows();
    let a = CscMat::from_triplets(m, n, &prog.eq_triplets);
    let c: Vec<f64> = prog.objective.iter().copied().collect();
    let b: Vec<f64> = prog.eq_rhs.iter().copied().collect();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_c = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let amax = a.max_abs().max(1.0);

    let mut kkt = KktSystem::new(&layout, &a);

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    layout.unit_init(&mut x);
    layout.unit_init(&mut z);
    let mut y = vec![0.0; m];
    let mut tau = 1.0;
    let mut kappa = 1.0;
    let degree = layout.degree + 1;

    let mut best = None;
    let mut stall = 0;

    for iter in 0..max_iter {
        // residuals of the homogeneous system
        let mut rp = vec![0.0; m]; // A x - b tau
        a.axpy(1.0, &x, &mut rp);
        for r in 0..m {
            rp[r] -= b[r] * tau;
        }
        let mut rd = vec![0.0; n]; // -A'y + c tau - z
        a.axpy_transpose(-1.0, &y, &mut rd);
        for i in 0..n {
            rd[i] += c[i] * tau - z[i];
        }
        let by: f64 = (0..m).map(|r| b[r] * y[r]).sum();
        let cx: f64 = (0..n).map(|i| c[i] * x[i]).sum();
        let rg = by - cx - kappa;
        let xz: f64 = (0..n).map(|i| x[i] * z[i]).sum();
        let mu = (xz + tau * kappa) / degree as f64;

        // scaled (deflated) convergence metrics
        let pres_n = {
            let mut v = 0.0;
            for r in 0..m {
                v += (rp[r] / tau).powi(2);
            }
            v.sqrt() / (1.0 + norm_b)
        };
        let dres_n = {
            let mut v = 0.0;
            for i in 0..n {
                v += (rd[i] / tau).powi(2);
            }
            v.sqrt() / (1.0 + norm_c)
        };
        let pcost = cx / tau;
        let dcost = by / tau;
        let gap = pcost - dcost;
        let relgap = gap.abs() / 1.0_f64.max(pcost.abs()).max(dcost.abs());

        if pres_n <= tol && dres_n <= tol && (relgap <= tol || mu / (tau * tau) <= tol * 1e-2) {
            let primal = DVector::from_vec(x.iter().map(|v| v / tau).collect());
            let dual = DVector::from_vec(y.iter().map(|v| v / tau).collect());
            return Ok(ConicSolution {
                status: SolveStatus::Optimal,
                primal,
                dual,
                objective: pcost,
                residuals: Residuals {
                    primal: pres_n,
                    dual: dres_n,
                    gap,
                },
                iterations: iter,
            });
        }

        // infeasibility certificates
        if by > tol * amax {
            // candidate Farkas certificate: A'y + z = 0, b'y > 0
            let mut farkas = vec![0.0; n];
            a.axpy_transpose(1.0, &y, &mut farkas);
            let mut worst = 0.0_f64;
            for i in 0..n {
                worst = worst.max((farkas[i] + z[i]).abs());
            }
            if worst <= tol * amax * by.max(1.0) && worst <= tol * amax * by {
                let scale = 1.0 / by;
                return Ok(ConicSolution {
                    status: SolveStatus::Infeasible,
                    primal: DVector::from_vec(z.iter().map(|v| v * scale).collect()),
                    dual: DVector::from_vec(y.iter().map(|v| v * scale).collect()),
                    objective: f64::INFINITY,
                    residuals: Residuals {
                        primal: worst * scale,
                        dual: 0.0,
                        gap: 0.0,
                    },
                    iterations: iter,
                });
            }
        }
        if cx < -tol * amax {
            let mut ray = vec![0.0; m];
            a.axpy(1.0, &x, &mut ray);
            let worst = ray.iter().fold(0.0_f64, |w, v| w.max(v.abs()));
            if worst <= tol * amax * (-cx) {
                let scale = 1.0 / (-cx);
                return Ok(ConicSolution {
                    status: SolveStatus::Unbounded,
                    primal: DVector::from_vec(x.iter().map(|v| v * scale).collect()),
                    dual: DVector::from_vec(y.iter().map(|v| v * scale).collect()),
                    objective: f64::NEG_INFINITY,
                    residuals: Residuals {
                        primal: worst * scale,
                        dual: 0.0,
                        gap: 0.0,
                    },
                    iterations: iter,
                });
            }
        }

        best = Some((x.clone(), y.clone(), tau, pres_n, dres_n, gap, iter));

        let sc = match Scaling::compute(&layout, &x, &z) {
            Some(sc) => sc,
            None => return Err(ConicError::Numerical("iterate left the cone interior".into())),
        };
        if !kkt.refactor(&layout, &sc) {
            return Err(ConicError::Numerical("KKT factorization broke down".into()));
        }

        // predictor (affine) direction
        let mut ds_aff = vec![0.0; n];
        jordan_product(&layout, &sc.lambda, &sc.lambda, &mut ds_aff);
        for v in ds_aff.iter_mut() {
            *v = -*v;
        }
        let bp: Vec<f64> = rp.iter().map(|v| -v).collect();
        let bd: Vec<f64> = rd.iter().map(|v| -v).collect();
        let aff = newton_direction(
            &layout, &kkt, &sc, &a, &c, &b, tau, kappa, &bp, &bd, -rg, &ds_aff, -tau * kappa,
        )?;

        let mut alpha = max_step(&layout, &x, &aff.dx, f64::INFINITY);
        alpha = max_step(&layout, &z, &aff.dz, alpha);
        if aff.dtau < 0.0 {
            alpha = alpha.min(-tau / aff.dtau);
        }
        if aff.dkappa < 0.0 {
            alpha = alpha.min(-kappa / aff.dkappa);
        }
        let alpha_aff = alpha.min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // corrector (combined) direction
        let mut u = vec![0.0; n];
        sc.apply_winv(&layout, &aff.dx, &mut u);
        let mut v = vec![0.0; n];
        sc.apply_w(&layout, &aff.dz, &mut v);
        let mut cross = vec![0.0; n];
        jordan_product(&layout, &u, &v, &mut cross);
        let mut e = vec![0.0; n];
        jordan_identity(&layout, &mut e);
        let mut ds = vec![0.0; n];
        for i in 0..n {
            ds[i] = ds_aff[i] - cross[i] + sigma * mu * e[i];
        }
        let dkap = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
        let f = 1.0 - sigma;
        let bp2: Vec<f64> = rp.iter().map(|v| -f * v).collect();
        let bd2: Vec<f64> = rd.iter().map(|v| -f * v).collect();
        let dir = newton_direction(
            &layout, &kkt, &sc, &a, &c, &b, tau, kappa, &bp2, &bd2, -f * rg, &ds, dkap,
        )?;

        let mut amax_step = max_step(&layout, &x, &dir.dx, f64::INFINITY);
        amax_step = max_step(&layout, &z, &dir.dz, amax_step);
        if dir.dtau < 0.0 {
            amax_step = amax_step.min(-tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            amax_step = amax_step.min(-kappa / dir.dkappa);
        }
        let step = (0.99 * amax_step).min(1.0);
        if step < 1e-10 {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
        for i in 0..n {
            x[i] += step * dir.dx[i];
            z[i] += step * dir.dz[i];
        }
        for r in 0..m {
            y[r] += step * dir.dy[r];
        }
        tau += step * dir.dtau;
        kappa += step * dir.dkappa;
        if !(tau.is_finite() && kappa.is_finite() && tau > 0.0) {
            return Err(ConicError::Numerical("tau collapsed".into()));
        }
    }

    // iteration cap: report the best iterate, never silently
    let (bx, byv, btau, pres, dres, gap, iters) = best.ok_or_else(|| {
        ConicError::Numerical("no iterations performed".into())
    })?;
    let primal = DVector::from_vec(bx.iter().map(|v| v / btau).collect());
    let dual = DVector::from_vec(byv.iter().map(|v| v / btau).collect());
    let objective = prog.objective.dot(&primal);
    Ok(ConicSolution {
        status: SolveStatus::MaxIter,
        primal,
        dual,
        objective,
        residuals: Residuals {
            primal: pres,
            dual: dres,
            gap,
        },
        iterations: iters + 1,
    })
}
