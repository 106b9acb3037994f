//! Sparse symmetric linear algebra for the interior-point KKT systems:
//! CSC storage, minimum-degree ordering, and an up-looking LDL^T
//! factorization with signed dynamic regularization.

/// Column-compressed sparse matrix (general rectangular).
#[derive(Debug, Clone)]
pub struct CscMat {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMat {
    /// Build from triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; ncols];
        for &(_, j, _) in triplets {
            count[j] += 1;
        }
        let mut colptr = vec![0usize; ncols + 1];
        for j in 0..ncols {
            colptr[j + 1] = colptr[j] + count[j];
        }
        let nnz = colptr[ncols];
        let mut rowind = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = colptr.clone();
        for &(i, j, v) in triplets {
            let p = next[j];
            rowind[p] = i;
            values[p] = v;
            next[j] += 1;
        }
        // sort each column by row index, combining duplicates
        let mut out_colptr = vec![0usize; ncols + 1];
        let mut out_rowind = Vec::with_capacity(nnz);
        let mut out_values = Vec::with_capacity(nnz);
        let mut col: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            col.clear();
            for p in colptr[j]..colptr[j + 1] {
                col.push((rowind[p], values[p]));
            }
            col.sort_unstable_by_key(|e| e.0);
            let mut k = 0;
            while k < col.len() {
                let (r, mut v) = col[k];
                let mut k2 = k + 1;
                while k2 < col.len() && col[k2].0 == r {
                    v += col[k2].1;
                    k2 += 1;
                }
                out_rowind.push(r);
                out_values.push(v);
                k = k2;
            }
            out_colptr[j + 1] = out_rowind.len();
        }
        CscMat {
            nrows,
            ncols,
            colptr: out_colptr,
            rowind: out_rowind,
            values: out_values,
        }
    }

    /// y += alpha * A * x
    pub fn axpy(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for j in 0..self.ncols {
            let xj = alpha * x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowind[p]] += self.values[p] * xj;
            }
        }
    }

    /// y += alpha * A^T * x
    pub fn axpy_transpose(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc += self.values[p] * x[self.rowind[p]];
            }
            y[j] += alpha * acc;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Deterministic minimum-degree ordering of a symmetric sparsity pattern.
///
/// `adj` is the strict adjacency (no self loops). Ties break on the node
/// index so the permutation is reproducible.
pub fn min_degree_order(n: usize, adj_in: &[Vec<usize>]) -> Vec<usize> {
    use std::collections::{BTreeSet, BinaryHeap};
    let mut adj: Vec<BTreeSet<usize>> = adj_in
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    let mut alive = vec![true; n];
    let mut heap: BinaryHeap<std::cmp::Reverse<(usize, usize)>> = BinaryHeap::new();
    for v in 0..n {
        heap.push(std::cmp::Reverse((adj[v].len(), v)));
    }
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse((deg, v))) = heap.pop() {
        if !alive[v] || adj[v].len() != deg {
            continue; // stale entry
        }
        alive[v] = false;
        order.push(v);
        let neigh: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &neigh {
            adj[u].remove(&v);
        }
        // clique among the eliminated node's neighbours
        for i in 0..neigh.len() {
            for k in (i + 1)..neigh.len() {
                let (a, b) = (neigh[i], neigh[k]);
                if adj[a].insert(b) {
                    adj[b].insert(a);
                }
            }
        }
        for &u in &neigh {
            heap.push(std::cmp::Reverse((adj[u].len(), u)));
        }
        adj[v].clear();
    }
    order
}

/// Sparse LDL^T factorization of a symmetric matrix given in
/// upper-triangular CSC form, with a fixed fill-reducing permutation and
/// signed dynamic regularization (quasi-definite pivoting).
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // permuted upper-triangular matrix
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    parent: Vec<i64>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    lnz: Vec<usize>,
    // expected inertia sign of each (permuted) pivot
    sign: Vec<f64>,
    dyn_eps: f64,
    // work arrays
    y: Vec<f64>,
    pattern: Vec<usize>,
    flag: Vec<usize>,
    pub dynamic_bumps: usize,
}

impl LdlFactor {
    /// Symbolic analysis: choose ordering, permute the pattern, build the
    /// elimination tree and column counts. `upper` must hold i <= j entries.
    pub fn symbolic(n: usize, upper: &[(usize, usize, f64)], signs: &[f64]) -> Self {
        // adjacency for ordering
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j, _) in upper {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let order = min_degree_order(n, &adj);
        let mut iperm = vec![0usize; n];
        for (k, &v) in order.iter().enumerate() {
            iperm[v] = k;
        }
        // permuted upper triplets
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        for &(i, j, v) in upper {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (a, b) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            trip.push((a, b, v));
        }
        let m = CscMat::from_triplets(n, n, &trip);
        let (ap, ai, ax) = (m.colptr, m.rowind, m.values);

        // elimination tree + column counts (LDL-package style)
        let mut parent = vec![-1i64; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                while i < k && flag[i] != k {
                    if parent[i] == -1 {
                        parent[i] = k as i64;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i] as usize;
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz_l = lp[n];
        let sign_p: Vec<f64> = (0..n).map(|k| signs[order[k]]).collect();
        LdlFactor {
            n,
            perm: order,
            iperm,
            ap,
            ai,
            ax,
            parent,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            lnz: vec![0; n],
            sign: sign_p,
            dyn_eps: 1e-13,
            y: vec![0.0; n],
            pattern: vec![0; n],
            flag: vec![usize::MAX; n],
            dynamic_bumps: 0,
        }
    }

    /// Refresh the numeric values (same pattern) before refactorization.
    pub fn set_values(&mut self, upper: &[(usize, usize, f64)]) {
        // Rebuild the permuted value array. Pattern identical to symbolic.
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        for &(i, j, v) in upper {
            let (pi, pj) = (self.iperm[i], self.iperm[j]);
            let (a, b) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            trip.push((a, b, v));
        }
        let m = CscMat::from_triplets(self.n, self.n, &trip);
        self.ap = m.colptr;
        self.ai = m.rowind;
        self.ax = m.values;
    }

    /// Numeric factorization. Returns false on breakdown (non-finite pivot).
    pub fn factor(&mut self) -> bool {
        let n = self.n;
        self.dynamic_bumps = 0;
        let mut maxdiag: f64 = 0.0;
        for k in 0..n {
            for p in self.ap[k]..self.ap[k + 1] {
                if self.ai[p] == k {
                    maxdiag = maxdiag.max(self.ax[p].abs());
                }
            }
        }
        let eps = self.dyn_eps * maxdiag.max(1.0);
        for k in 0..n {
            // pattern of row k via elimination tree walk
            let mut top = n;
            self.flag[k] = k;
            self.y[k] = 0.0;
            let mut stack_len;
            for p in self.ap[k]..self.ap[k + 1] {
                let i0 = self.ai[p];
                if i0 > k {
                    continue;
                }
                self.y[i0] += self.ax[p];
                let mut i = i0;
                stack_len = 0;
                // temporarily use the beginning of `pattern` as a stack
                let mut branch: [usize; 64] = [0; 64];
                let mut spill: Vec<usize> = Vec::new();
                while i < k && self.flag[i] != k {
                    if stack_len < 64 {
                        branch[stack_len] = i;
                    } else {
                        spill.push(i);
                    }
                    stack_len += 1;
                    self.flag[i] = k;
                    i = if self.parent[i] >= 0 {
                        self.parent[i] as usize
                    } else {
                        k
                    };
                }
                while stack_len > 0 {
                    stack_len -= 1;
                    top -= 1;
                    self.pattern[top] = if stack_len < 64 {
                        branch[stack_len]
                    } else {
                        spill[stack_len - 64]
                    };
                }
            }
            let mut dk = self.y[k];
            self.y[k] = 0.0;
            for t in top..n {
                let i = self.pattern[t];
                let yi = self.y[i];
                self.y[i] = 0.0;
                let lki = yi / self.d[i];
                let pend = self.lp[i] + self.lnz[i];
                for p in self.lp[i]..pend {
                    self.y[self.li[p]] -= self.lx[p] * yi;
                }
                self.li[pend] = k;
                self.lx[pend] = lki;
                self.lnz[i] += 1;
                dk -= lki * yi;
            }
            if !dk.is_finite() {
                return false;
            }
            let s = self.sign[k];
            if s * dk < eps {
                dk = s * eps;
                self.dynamic_bumps += 1;
            }
            self.d[k] = dk;
            self.lnz[k] = 0;
        }
        true
    }

    /// Solve M x = b in place (b holds the solution on return).
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut w = vec![0.0; n];
        for k in 0..n {
            w[k] = b[self.perm[k]];
        }
        // forward: L w = b
        for k in 0..n {
            let wk = w[k];
            if wk != 0.0 {
                let pend = self.lp[k + 1];
                for p in self.lp[k]..pend {
                    w[self.li[p]] -= self.lx[p] * wk;
                }
            }
        }
        for k in 0..n {
            w[k] /= self.d[k];
        }
        // backward: L^T x = w
        for k in (0..n).rev() {
            let pend = self.lp[k + 1];
            let mut acc = w[k];
            for p in self.lp[k]..pend {
                acc -= self.lx[p] * w[self.li[p]];
            }
            w[k] = acc;
        }
        for k in 0..n {
            b[self.perm[k]] = w[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve_check(n: usize, upper: Vec<(usize, usize, f64)>, signs: Vec<f64>) {
        let mut f = LdlFactor::symbolic(n, &upper, &signs);
        assert!(f.factor());
        // full dense matrix
        let mut m = vec![vec![0.0; n]; n];
        for &(i, j, v) in &upper {
            m[i][j] += v;
            if i != j {
                m[j][i] += v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64) - 1.5).collect();
        let mut x = b.clone();
        f.solve(&mut x);
        for i in 0..n {
            let mut r = -b[i];
            for j in 0..n {
                r += m[i][j] * x[j];
            }
            assert!(r.abs() < 1e-9, "residual {} at row {}", r, i);
        }
    }

    #[test]
    fn ldl_solves_spd_system() {
        // tridiagonal SPD
        let n = 12;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        dense_solve_check(n, t, vec![1.0; n]);
    }

    #[test]
    fn ldl_solves_quasidefinite_kkt() {
        // [ I  A^T; A  -delta I ] with a 2x3 A
        let a = [[1.0, 2.0, 0.0], [0.0, 1.0, -1.0]];
        let (nv, mc) = (3, 2);
        let n = nv + mc;
        let mut t = Vec::new();
        for i in 0..nv {
            t.push((i, i, 1.0));
        }
        for r in 0..mc {
            t.push((nv + r, nv + r, -1e-8));
            for c in 0..nv {
                if a[r][c] != 0.0 {
                    t.push((c, nv + r, a[r][c]));
                }
            }
        }
        let mut signs = vec![1.0; nv];
        signs.extend(vec![-1.0; mc]);
        dense_solve_check(n, t, signs);
    }

    #[test]
    fn min_degree_is_permutation() {
        let adj = vec![vec![1, 2], vec![0, 2], vec![0, 1, 3], vec![2]];
        let ord = min_degree_order(4, &adj);
        let mut seen = vec![false; 4];
        for &v in &ord {
            assert!(!seen[v]);
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
