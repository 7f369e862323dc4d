//! Block tight-binding operators on `l^2(Z^2) ⊗ C^d`, their Bloch transforms,
//! torus realizations, and the particle-hole / BdG structure checks.
//!
//! A term `(j, B)` acts as `⟨l + j| H |l⟩ = B`, so the shift `S_1` is the
//! single term `((1, 0), 1)`. The Bloch matrix is `H(k) = Σ_j e^{i k·j} B_j`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, conj, hs_norm, kron, CMat, SparseRows, C64};

/// Relative tolerance for Hermiticity of assembled matrices.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute tolerance for the particle-hole check.
pub const PHS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiberShape {
    pub r: usize,
    pub ph: bool,
}

impl FiberShape {
    pub fn new(r: usize, ph: bool) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("fiber needs r >= 1".into()));
        }
        Ok(Self { r, ph })
    }

    pub fn scalar() -> Self {
        Self { r: 1, ph: false }
    }

    /// Total fiber dimension: `r`, or `2r` with particle-hole doubling.
    pub fn dim(&self) -> usize {
        if self.ph {
            2 * self.r
        } else {
            self.r
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// `K = [[0, 1], [1, 0]]`, `K^2 = 1` (class D).
    Even,
    /// `I = [[0, -1], [1, 0]]`, `I^2 = -1` (class C).
    Odd,
}

/// Finite-range lattice operator, one block per displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct TightBindingOperator {
    fiber: FiberShape,
    terms: BTreeMap<[i32; 2], CMat>,
}

impl TightBindingOperator {
    pub fn zero(fiber: FiberShape) -> Self {
        Self {
            fiber,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(fiber: FiberShape) -> Self {
        let mut op = Self::zero(fiber);
        op.terms.insert([0, 0], CMat::identity(fiber.dim(), fiber.dim()));
        op
    }

    /// Collects terms, summing blocks that share a displacement.
    pub fn from_terms(
        fiber: FiberShape,
        terms: impl IntoIterator<Item = ([i32; 2], CMat)>,
    ) -> Result<Self> {
        let mut op = Self::zero(fiber);
        for (j, b) in terms {
            op.add_term(j, b)?;
        }
        Ok(op)
    }

    /// Scalar-fiber shift along `dir` (0 or 1), `S_dir` when `forward`.
    pub fn shift(dir: usize, forward: bool) -> Self {
        let mut j = [0, 0];
        j[dir] = if forward { 1 } else { -1 };
        let mut op = Self::zero(FiberShape::scalar());
        op.terms.insert(j, CMat::identity(1, 1));
        op
    }

    pub fn add_term(&mut self, j: [i32; 2], block: CMat) -> Result<()> {
        let d = self.fiber.dim();
        if block.shape() != (d, d) {
            return Err(Error::BlockShape {
                displacement: j,
                rows: block.nrows(),
                cols: block.ncols(),
                expected: d,
            });
        }
        match self.terms.get_mut(&j) {
            Some(b) => *b += block,
            None => {
                self.terms.insert(j, block);
            }
        }
        Ok(())
    }

    pub fn fiber(&self) -> FiberShape {
        self.fiber
    }

    pub fn terms(&self) -> &BTreeMap<[i32; 2], CMat> {
        &self.terms
    }

    pub fn block(&self, j: [i32; 2]) -> Option<&CMat> {
        self.terms.get(&j)
    }

    /// `R = max ||j||_inf` over non-zero terms.
    pub fn range(&self) -> usize {
        self.terms
            .keys()
            .map(|j| j[0].unsigned_abs().max(j[1].unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Range along one lattice direction.
    pub fn range_along(&self, dir: usize) -> usize {
        self.terms
            .keys()
            .map(|j| j[dir].unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Drops blocks whose entries are all below `tol` in magnitude.
    pub fn pruned(mut self, tol: f64) -> Self {
        self.terms.retain(|_, b| b.iter().any(|z| z.norm() > tol));
        self
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            fiber: self.fiber,
            terms: self.terms.iter().map(|(j, b)| (*j, b * s)).collect(),
        }
    }

    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.fiber != other.fiber {
            return Err(Error::FiberMismatch(format!(
                "{:?} + {:?}",
                self.fiber, other.fiber
            )));
        }
        let mut out = self.clone();
        for (j, b) in &other.terms {
            out.add_term(*j, b.clone())?;
        }
        Ok(out)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.sum(&other.scaled(c(-1.0, 0.0)))
    }

    /// Operator product `self * other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.fiber != other.fiber {
            return Err(Error::FiberMismatch(format!(
                "{:?} * {:?}",
                self.fiber, other.fiber
            )));
        }
        let mut out = Self::zero(self.fiber);
        for (ja, a) in &self.terms {
            for (jb, b) in &other.terms {
                out.add_term([ja[0] + jb[0], ja[1] + jb[1]], a * b)?;
            }
        }
        Ok(out)
    }

    /// `self ⊗ m` on the fiber, reinterpreted with the given fiber shape.
    pub fn tensor(&self, m: &CMat, fiber: FiberShape) -> Result<Self> {
        Self::from_terms(fiber, self.terms.iter().map(|(j, b)| (*j, kron(b, m))))
    }

    /// Operator adjoint: block at `-j` becomes `B_j^*`.
    pub fn adjoint(&self) -> Self {
        Self {
            fiber: self.fiber,
            terms: self
                .terms
                .iter()
                .map(|(j, b)| ([-j[0], -j[1]], b.adjoint()))
                .collect(),
        }
    }

    /// Entrywise complex conjugate in the standard basis.
    pub fn conjugate(&self) -> Self {
        Self {
            fiber: self.fiber,
            terms: self.terms.iter().map(|(j, b)| (*j, conj(b))).collect(),
        }
    }

    /// Worst closure defect `||B_{-j} - B_j^*||`, with its displacement.
    pub fn closure_defect(&self) -> Option<([i32; 2], f64)> {
        let zero = CMat::zeros(self.fiber.dim(), self.fiber.dim());
        let mut worst: Option<([i32; 2], f64)> = None;
        for (j, b) in &self.terms {
            let mirror = self.terms.get(&[-j[0], -j[1]]).unwrap_or(&zero);
            let d = hs_norm(&(mirror - b.adjoint()));
            if worst.is_none_or(|w| d > w.1) {
                worst = Some((*j, d));
            }
        }
        worst
    }

    fn norm_scale(&self) -> f64 {
        self.terms.values().map(hs_norm).fold(0.0, f64::max)
    }

    pub fn check_closure(&self) -> Result<()> {
        if let Some((j, d)) = self.closure_defect() {
            if d > HERMITIAN_TOL * self.norm_scale().max(1.0) {
                return Err(Error::NotClosed {
                    displacement: j,
                    defect: d,
                });
            }
        }
        Ok(())
    }

    /// `Σ_j e^{i k·j} B_j` without the closure check.
    pub fn bloch_unchecked(&self, k: [f64; 2]) -> CMat {
        let d = self.fiber.dim();
        let mut m = CMat::zeros(d, d);
        for (j, b) in &self.terms {
            let phase = k[0] * j[0] as f64 + k[1] * j[1] as f64;
            m += b * C64::from_polar(1.0, phase);
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexDoc {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDoc {
    pub j: [i32; 2],
    pub block: Vec<Vec<ComplexDoc>>,
}

/// JSON layout `{fiber:{r,ph}, terms:[{j:[j1,j2], block:[[{re,im},…],…]},…]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub fiber: FiberShape,
    pub terms: Vec<TermDoc>,
}

pub fn matrix_to_doc(b: &CMat) -> Vec<Vec<ComplexDoc>> {
    (0..b.nrows())
        .map(|i| {
            (0..b.ncols())
                .map(|k| ComplexDoc {
                    re: b[(i, k)].re,
                    im: b[(i, k)].im,
                })
                .collect()
        })
        .collect()
}

pub fn matrix_from_doc(rows: &[Vec<ComplexDoc>]) -> Result<CMat> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Structure("ragged matrix rows".into()));
    }
    Ok(CMat::from_fn(n, m, |i, k| c(rows[i][k].re, rows[i][k].im)))
}

impl From<&TightBindingOperator> for ModelDoc {
    fn from(op: &TightBindingOperator) -> Self {
        ModelDoc {
            fiber: op.fiber,
            terms: op
                .terms
                .iter()
                .map(|(j, b)| TermDoc {
                    j: *j,
                    block: matrix_to_doc(b),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDoc> for TightBindingOperator {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let fiber = FiberShape::new(doc.fiber.r, doc.fiber.ph)?;
        let mut op = TightBindingOperator::zero(fiber);
        for t in doc.terms {
            op.add_term(t.j, matrix_from_doc(&t.block)?)?;
        }
        Ok(op)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlochMatrix {
    pub k: [f64; 2],
    pub matrix: CMat,
}

impl BlochMatrix {
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::small_hermitian_eigen(&self.matrix).0
    }
}

/// Bloch matrix at quasi-momentum `k`.
pub fn assemble_bloch(model: &TightBindingOperator, k: [f64; 2]) -> Result<BlochMatrix> {
    model.check_closure()?;
    Ok(BlochMatrix {
        k,
        matrix: model.bloch_unchecked(k),
    })
}

/// Hermitian matrix of a model on an `L1 x L2` box.
///
/// Row index of `(l, a)` is `a + fiberdim * (l1 + L1 * l2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteVolumeOperator {
    pub l: [usize; 2],
    pub fiber: FiberShape,
    pub boundary: Boundary,
    pub matrix: SparseRows,
}

impl FiniteVolumeOperator {
    pub fn empty(l: [usize; 2], fiber: FiberShape, boundary: Boundary) -> Self {
        let dim = l[0] * l[1] * fiber.dim();
        Self {
            l,
            fiber,
            boundary,
            matrix: SparseRows::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn sites(&self) -> usize {
        self.l[0] * self.l[1]
    }

    pub fn site_index(&self, site: [usize; 2]) -> usize {
        site[0] + self.l[0] * site[1]
    }

    pub fn site_of(&self, index: usize) -> [usize; 2] {
        [index % self.l[0], index / self.l[0]]
    }

    /// Row of fiber component `a` at `site`.
    pub fn row(&self, site: [usize; 2], a: usize) -> usize {
        a + self.fiber.dim() * self.site_index(site)
    }

    /// Torus-wrapped site `site + j`; `None` if it leaves an open box.
    pub fn translate(&self, site: [usize; 2], j: [i32; 2]) -> Option<[usize; 2]> {
        let mut out = [0usize; 2];
        for d in 0..2 {
            let x = site[d] as i64 + j[d] as i64;
            let len = self.l[d] as i64;
            out[d] = match self.boundary {
                Boundary::Periodic => x.rem_euclid(len) as usize,
                Boundary::Open => {
                    if x < 0 || x >= len {
                        return None;
                    }
                    x as usize
                }
            };
        }
        Some(out)
    }

    /// Adds `block` as `⟨target| H |source⟩`.
    pub fn add_block(&mut self, target: [usize; 2], source: [usize; 2], block: &CMat) {
        let d = self.fiber.dim();
        let r0 = self.row(target, 0);
        let c0 = self.row(source, 0);
        for a in 0..d {
            for b in 0..d {
                let v = block[(a, b)];
                if v != C64::new(0.0, 0.0) {
                    self.matrix.add(r0 + a, c0 + b, v);
                }
            }
        }
    }

    /// The `fiberdim x fiberdim` block `π_n H π_m^*`.
    pub fn block(&self, n: [usize; 2], m: [usize; 2]) -> CMat {
        let d = self.fiber.dim();
        let r0 = self.row(n, 0);
        let c0 = self.row(m, 0);
        CMat::from_fn(d, d, |a, b| self.matrix.get(r0 + a, c0 + b))
    }

    pub fn dense(&self) -> CMat {
        self.matrix.to_dense()
    }

    /// `||M - M*|| / ||M||` (zero for the zero matrix).
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.matrix.frobenius();
        if n == 0.0 {
            0.0
        } else {
            self.matrix.hermiticity_defect() / n
        }
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::hermitian_eigenvalues(&self.dense())
    }

    pub fn eigen(&self) -> Result<(Vec<f64>, CMat)> {
        linalg::hermitian_eigen(&self.dense())
    }

    /// Factorization of `z - H` for repeated resolvent solves.
    pub fn shifted_solver(&self, z: C64) -> Result<linalg::ShiftedSolver> {
        linalg::ShiftedSolver::new(&self.matrix, z)
    }
}

pub fn assemble_finite_volume(
    model: &TightBindingOperator,
    l: [usize; 2],
    boundary: Boundary,
) -> Result<FiniteVolumeOperator> {
    model.check_closure()?;
    let range = model.range();
    if l[0] == 0 || l[1] == 0 {
        return Err(Error::InvalidParameter("torus sides must be positive".into()));
    }
    if boundary == Boundary::Periodic && (l[0] <= 2 * range || l[1] <= 2 * range) {
        return Err(Error::TorusTooSmall {
            l1: l[0],
            l2: l[1],
            range,
        });
    }
    let mut fv = FiniteVolumeOperator::empty(l, model.fiber(), boundary);
    for l2 in 0..l[1] {
        for l1 in 0..l[0] {
            let src = [l1, l2];
            for (j, b) in model.terms() {
                if let Some(dst) = fv.translate(src, *j) {
                    fv.add_block(dst, src, b);
                }
            }
        }
    }
    Ok(fv)
}

/// The particle-hole conjugation matrix on the `2r` fiber.
pub fn phs_matrix(parity: Parity, r: usize) -> CMat {
    let one = CMat::identity(r, r);
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let base = match parity {
        Parity::Even => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        Parity::Odd => CMat::from_row_slice(2, 2, &[z, -o, o, z]),
    };
    kron(&base, &one)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhsReport {
    pub holds: bool,
    pub max_violation: f64,
}

/// Operator-level particle-hole symmetry `U* conj(H) U = -H`, checked
/// displacement by displacement.
pub fn check_phs(model: &TightBindingOperator, parity: Parity) -> Result<PhsReport> {
    let fiber = model.fiber();
    if !fiber.ph {
        return Err(Error::Structure(
            "particle-hole check needs a particle-hole doubled fiber".into(),
        ));
    }
    let u = phs_matrix(parity, fiber.r);
    let ua = u.adjoint();
    let max_violation = model
        .terms()
        .values()
        .map(|b| hs_norm(&(&ua * conj(b) * &u + b)))
        .fold(0.0, f64::max);
    Ok(PhsReport {
        holds: max_violation <= PHS_TOL,
        max_violation,
    })
}

/// `max_i |e_i + e_{N-1-i}|` for ascending eigenvalues.
pub fn spectrum_symmetry_check(eigs: &[f64]) -> f64 {
    let n = eigs.len();
    (0..n)
        .map(|i| (eigs[i] + eigs[n - 1 - i]).abs())
        .fold(0.0, f64::max)
}

/// `max_j ||block_{Δ*}(j) + block_{conj Δ}(j)||`, i.e. the defect of `Δ* = -conj(Δ)`.
pub fn check_bdg_equation(delta: &TightBindingOperator) -> f64 {
    let adj = delta.adjoint();
    let cj = delta.conjugate();
    let zero = CMat::zeros(delta.fiber().dim(), delta.fiber().dim());
    let keys: std::collections::BTreeSet<[i32; 2]> =
        adj.terms().keys().chain(cj.terms().keys()).copied().collect();
    keys.into_iter()
        .map(|j| {
            let a = adj.block(j).unwrap_or(&zero);
            let b = cj.block(j).unwrap_or(&zero);
            hs_norm(&(a + b))
        })
        .fold(0.0, f64::max)
}

/// Uniform grid `k_i = 2π i / n` in each direction (the torus momenta).
pub fn torus_momenta(l: [usize; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(l[0] * l[1]);
    for i2 in 0..l[1] {
        for i1 in 0..l[0] {
            out.push([
                2.0 * std::f64::consts::PI * i1 as f64 / l[0] as f64,
                2.0 * std::f64::consts::PI * i2 as f64 / l[1] as f64,
            ]);
        }
    }
    out
}

/// All Bloch eigenvalues over the torus momenta, sorted ascending.
pub fn bloch_grid_eigenvalues(model: &TightBindingOperator, l: [usize; 2]) -> Result<Vec<f64>> {
    model.check_closure()?;
    let mut out: Vec<f64> = torus_momenta(l)
        .into_iter()
        .flat_map(|k| linalg::small_hermitian_eigen(&model.bloch_unchecked(k)).0)
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real;

    fn scalar(v: f64) -> CMat {
        CMat::from_element(1, 1, real(v))
    }

    #[test]
    fn on_site_identity_bloch_is_identity() {
        let op = TightBindingOperator::identity(FiberShape::new(2, false).unwrap());
        let b = assemble_bloch(&op, [0.3, -1.1]).unwrap();
        assert_eq!(b.matrix, CMat::identity(2, 2));
    }

    #[test]
    fn open_chain_is_rejected_by_closure() {
        let op = TightBindingOperator::shift(0, true);
        match assemble_bloch(&op, [0.0, 0.0]) {
            Err(Error::NotClosed { displacement, .. }) => {
                assert!(displacement == [1, 0] || displacement == [-1, 0])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_displacements_merge() {
        let op = TightBindingOperator::from_terms(
            FiberShape::scalar(),
            [([0, 0], scalar(1.0)), ([0, 0], scalar(2.5))],
        )
        .unwrap();
        assert_eq!(op.block([0, 0]).unwrap()[(0, 0)], real(3.5));
        assert_eq!(op.terms().len(), 1);
    }

    #[test]
    fn constant_on_site_finite_volume() {
        let op = TightBindingOperator::identity(FiberShape::scalar()).scaled(real(0.7));
        let fv = assemble_finite_volume(&op, [4, 4], Boundary::Periodic).unwrap();
        assert_eq!(fv.dense(), CMat::identity(16, 16) * real(0.7));
    }

    #[test]
    fn small_torus_refused() {
        let s1 = TightBindingOperator::shift(0, true);
        let h = s1.sum(&s1.adjoint()).unwrap();
        let err = assemble_finite_volume(&h, [2, 5], Boundary::Periodic).unwrap_err();
        assert!(matches!(err, Error::TorusTooSmall { .. }));
        assert!(err.to_string().contains("L > 2R"));
        assert!(assemble_finite_volume(&h, [2, 5], Boundary::Open).is_ok());
    }

    #[test]
    fn phs_requires_doubling() {
        let h = TightBindingOperator::identity(FiberShape::scalar());
        assert!(check_phs(&h, Parity::Even).is_err());
    }

    #[test]
    fn symmetry_defect_examples() {
        assert_eq!(spectrum_symmetry_check(&[-2.0, -1.0, 1.0, 2.0]), 0.0);
        assert_eq!(spectrum_symmetry_check(&[-1.0, 0.5]), 0.5);
        assert_eq!(spectrum_symmetry_check(&[]), 0.0);
    }

    #[test]
    fn bdg_equation_on_identity_fails() {
        let id = TightBindingOperator::identity(FiberShape::scalar());
        assert!((check_bdg_equation(&id) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn compose_shifts() {
        let s1 = TightBindingOperator::shift(0, true);
        let s2 = TightBindingOperator::shift(1, true);
        let p = s1.compose(&s2).unwrap();
        assert_eq!(p.terms().keys().copied().collect::<Vec<_>>(), vec![[1, 1]]);
        let id = s1.compose(&s1.adjoint()).unwrap();
        assert_eq!(id.block([0, 0]).unwrap()[(0, 0)], real(1.0));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut op = TightBindingOperator::zero(FiberShape::new(1, true).unwrap());
        let b = CMat::from_row_slice(2, 2, &[c(0.1, 1.0 / 3.0), c(-2e-17, 0.0), c(7.0, -1e300), c(0.0, 0.0)]);
        op.add_term([1, -2], b.clone()).unwrap();
        op.add_term([-1, 2], b.adjoint()).unwrap();
        let back = TightBindingOperator::from_json(&op.to_json().unwrap()).unwrap();
        assert_eq!(back, op);
    }
}
