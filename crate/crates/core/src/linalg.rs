//! Dense helpers, the complex Schur reordering used for contracting subspaces,
//! and sparse storage with a shifted solver for torus Hamiltonians.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Frobenius (Hilbert-Schmidt) norm.
pub fn hs_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Operator 2-norm via singular values.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn conj(m: &CMat) -> CMat {
    m.map(|z| z.conj())
}

fn to_faer(m: &CMat) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    })
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let evd = to_faer(m)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let vals: Vec<f64> = (0..m.nrows()).map(|i| s[i].re).collect();
    let vecs = CMat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = u[(i, j)];
        C64::new(z.re, z.im)
    });
    Ok((vals, vecs))
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Result<Vec<f64>> {
    let mut vals = to_faer(m)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Small Hermitian eigenproblems stay on nalgebra; sorted ascending.
pub fn small_hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(m.nrows(), m.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// Complex Givens rotation `(cs, sn)` with `[cs sn; -conj(sn) cs] [f; g] = [r; 0]`.
fn givens(f: C64, g: C64) -> (f64, C64) {
    if g.norm() == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if f.norm() == 0.0 {
        return (0.0, g.conj() / g.norm());
    }
    let norm = (f.norm_sqr() + g.norm_sqr()).sqrt();
    let phase = f / f.norm();
    (f.norm() / norm, phase * g.conj() / norm)
}

/// Applies `x <- cs*x + sn*y`, `y <- cs*y - conj(sn)*x` elementwise.
fn rot(x: &mut [C64], y: &mut [C64], cs: f64, sn: C64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let t = *a * cs + sn * *b;
        *b = *b * cs - sn.conj() * *a;
        *a = t;
    }
}

/// Complex Schur form `A = Q T Q*` with the diagonal of `T` reordered so that
/// every eigenvalue selected by `keep` precedes the others. Returns `(Q, T, k)`
/// where `k` is the number of selected eigenvalues.
pub fn ordered_schur(a: &CMat, keep: impl Fn(C64) -> bool) -> Result<(CMat, CMat, usize)> {
    let n = a.nrows();
    let schur = a
        .clone()
        .try_schur(1e-15, 10_000)
        .ok_or_else(|| Error::Decomposition("Schur iteration did not converge".into()))?;
    let (mut q, mut t) = schur.unpack();
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    // Bubble selected eigenvalues to the front with adjacent swaps.
    let mut sorted = 0;
    for i in 0..n {
        if keep(t[(i, i)]) {
            let mut pos = i;
            while pos > sorted {
                swap_adjacent(&mut q, &mut t, pos - 1);
                pos -= 1;
            }
            sorted += 1;
        }
    }
    Ok((q, t, sorted))
}

fn swap_adjacent(q: &mut CMat, t: &mut CMat, k: usize) {
    let n = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    let (cs, sn) = givens(t[(k, k + 1)], t22 - t11);
    if k + 2 < n {
        let mut rk: Vec<C64> = (k + 2..n).map(|j| t[(k, j)]).collect();
        let mut rk1: Vec<C64> = (k + 2..n).map(|j| t[(k + 1, j)]).collect();
        rot(&mut rk, &mut rk1, cs, sn);
        for (idx, j) in (k + 2..n).enumerate() {
            t[(k, j)] = rk[idx];
            t[(k + 1, j)] = rk1[idx];
        }
    }
    if k > 0 {
        let mut ck: Vec<C64> = (0..k).map(|i| t[(i, k)]).collect();
        let mut ck1: Vec<C64> = (0..k).map(|i| t[(i, k + 1)]).collect();
        rot(&mut ck, &mut ck1, cs, sn.conj());
        for i in 0..k {
            t[(i, k)] = ck[i];
            t[(i, k + 1)] = ck1[i];
        }
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    let mut qk: Vec<C64> = (0..n).map(|i| q[(i, k)]).collect();
    let mut qk1: Vec<C64> = (0..n).map(|i| q[(i, k + 1)]).collect();
    rot(&mut qk, &mut qk1, cs, sn.conj());
    for i in 0..n {
        q[(i, k)] = qk[i];
        q[(i, k + 1)] = qk1[i];
    }
}

/// Sparse row storage for finite-volume operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub dim: usize,
    /// Per-row `(column, value)` pairs sorted by column, no duplicates.
    pub rows: Vec<Vec<(usize, C64)>>,
}

impl SparseRows {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Vec::new(); dim],
        }
    }

    pub fn add(&mut self, row: usize, col: usize, v: C64) {
        let r = &mut self.rows[row];
        match r.binary_search_by_key(&col, |e| e.0) {
            Ok(p) => r[p].1 += v,
            Err(p) => r.insert(p, (col, v)),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let r = &self.rows[row];
        match r.binary_search_by_key(&col, |e| e.0) {
            Ok(p) => r[p].1,
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn mul_dense(&self, x: &CMat) -> CMat {
        let mut y = CMat::zeros(self.dim, x.ncols());
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                for c in 0..x.ncols() {
                    y[(i, c)] += v * x[(j, c)];
                }
            }
        }
        y
    }

    pub fn frobenius(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().map(|e| e.1.norm_sqr()))
            .sum::<f64>()
            .sqrt()
    }

    /// `||M - M*||_F`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut acc = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                let d = v - self.get(j, i).conj();
                acc += d.norm_sqr();
            }
        }
        acc.sqrt()
    }
}

/// Sparse LU factorization (partial pivoting) of `z - H` for repeated solves.
pub struct ShiftedSolver {
    dim: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, faer::c64>,
}

impl ShiftedSolver {
    pub fn new(h: &SparseRows, z: C64) -> Result<Self> {
        let dim = h.dim;
        let mut triplets = Vec::with_capacity(h.nnz() + dim);
        for (i, row) in h.rows.iter().enumerate() {
            let mut diag = z;
            for &(j, v) in row {
                if j == i {
                    diag -= v;
                } else if v != C64::new(0.0, 0.0) {
                    triplets.push(faer::sparse::Triplet::new(i, j, faer::c64::new(-v.re, -v.im)));
                }
            }
            if diag != C64::new(0.0, 0.0) {
                triplets.push(faer::sparse::Triplet::new(i, i, faer::c64::new(diag.re, diag.im)));
            }
        }
        let a = faer::sparse::SparseColMat::<usize, faer::c64>::try_new_from_triplets(
            dim, dim, &triplets,
        )
        .map_err(|e| Error::Structure(format!("{e:?}")))?;
        // The factorization panics on an exactly zero pivot instead of reporting it.
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| a.sp_lu()))
            .map_err(|_| Error::Singular("sparse LU of z - H hit a zero pivot".into()))?
            .map_err(|e| Error::Singular(format!("sparse LU of z - H: {e:?}")))?;
        Ok(Self { dim, lu })
    }

    pub fn solve(&self, b: &CMat) -> Result<CMat> {
        use faer::linalg::solvers::Solve;
        if b.nrows() != self.dim {
            return Err(Error::Structure(format!(
                "right-hand side has {} rows, system has {}",
                b.nrows(),
                self.dim
            )));
        }
        let rhs = to_faer(b);
        let x = self.lu.solve(&rhs);
        let out = CMat::from_fn(b.nrows(), b.ncols(), |i, j| {
            let z = x[(i, j)];
            C64::new(z.re, z.im)
        });
        if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Singular("non-finite resolvent solve".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / (1u64 << 53) as f64 - 0.5
    }

    #[test]
    fn sparse_solver_matches_dense() {
        let mut s = 3u64;
        let n = 12;
        let mut h = SparseRows::zeros(n);
        for i in 0..n {
            h.add(i, i, c(lcg(&mut s), 0.0));
            let j = (i + 5) % n;
            let v = c(lcg(&mut s), lcg(&mut s));
            h.add(i, j, v);
            h.add(j, i, v.conj());
        }
        let z = c(0.3, 0.1);
        let b = CMat::from_fn(n, 2, |i, j| c((i + j) as f64, 1.0));
        let x = ShiftedSolver::new(&h, z).unwrap().solve(&b).unwrap();
        let mut a = -h.to_dense();
        for i in 0..n {
            a[(i, i)] += z;
        }
        assert!(hs_norm(&(&a * &x - &b)) / hs_norm(&b) < 1e-13);
    }

    #[test]
    fn ordered_schur_puts_selected_first() {
        let mut s = 5u64;
        let a = CMat::from_fn(6, 6, |_, _| c(2.0 * lcg(&mut s), 2.0 * lcg(&mut s)));
        let (q, t, k) = ordered_schur(&a, |z| z.norm() < 0.8).unwrap();
        let rec = &q * &t * q.adjoint();
        assert!(hs_norm(&(rec - &a)) < 1e-12);
        for i in 0..6 {
            assert_eq!(t[(i, i)].norm() < 0.8, i < k);
        }
        // Leading columns span an invariant subspace.
        let phi = q.columns(0, k).into_owned();
        let tk = t.view((0, 0), (k, k)).into_owned();
        assert!(hs_norm(&(&a * &phi - &phi * tk)) < 1e-12);
    }

    #[test]
    fn kron_shapes() {
        let a = CMat::identity(2, 2);
        let b = CMat::from_element(3, 1, real(2.0));
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 2));
        assert_eq!(k[(4, 1)], real(2.0));
        assert_eq!(k[(4, 0)], real(0.0));
    }
}
