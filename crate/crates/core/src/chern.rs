//! Chern numbers of the Fermi projection `P = χ(H <= 0)`: transfer-matrix
//! winding, lattice Berry flux, the transition-function contour for `2 x 2`
//! Pauli models, and the real-space marker on a torus.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, hs_norm, ordered_schur, C64, CMat, I};
use crate::models::{central_gap, nelder_mead};
use crate::operator::{
    assemble_finite_volume, Boundary, FiniteVolumeOperator, TightBindingOperator,
};
use crate::table::{sci, Table};

/// Distance from the unit circle below which `T(k1)` is treated as gapless.
pub const UNIT_CIRCLE_TOL: f64 = 1e-8;
/// Largest condition number of `a(k1)` accepted before the grid is shifted.
pub const COND_MAX: f64 = 1e8;
/// `k1` shift applied when `a(k1)` is near-singular.
pub const K1_SHIFT: f64 = 1e-6;
/// Real-space markers further than this from an integer give no verdict.
pub const NO_VERDICT_RESIDUAL: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChernMethod {
    Transfer,
    Berry,
    Contour,
    Realspace,
}

impl ChernMethod {
    pub fn name(self) -> &'static str {
        match self {
            ChernMethod::Transfer => "transfer",
            ChernMethod::Berry => "berry",
            ChernMethod::Contour => "contour",
            ChernMethod::Realspace => "realspace",
        }
    }
}

impl std::str::FromStr for ChernMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transfer" => Ok(ChernMethod::Transfer),
            "berry" => Ok(ChernMethod::Berry),
            "contour" => Ok(ChernMethod::Contour),
            "realspace" => Ok(ChernMethod::Realspace),
            _ => Err(Error::InvalidParameter(format!(
                "unknown Chern method '{s}' (transfer, berry, contour, realspace)"
            ))),
        }
    }
}

/// A Chern number with its pre-rounding value. `value` is `None` when the
/// raw number is too far from an integer to give a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChernResult {
    pub value: Option<i64>,
    pub method: ChernMethod,
    pub raw: f64,
    pub grid: String,
    pub residual: f64,
    /// Sobolev sum `Σ_j Tr <n| |[X_j, P]|^2 |n>` (real-space method only).
    pub sobolev: Option<f64>,
}

impl ChernResult {
    fn rounded(method: ChernMethod, raw: f64, grid: String) -> Self {
        let r = raw.round();
        ChernResult {
            value: Some(r as i64),
            method,
            raw,
            grid,
            residual: (raw - r).abs(),
            sobolev: None,
        }
    }
}

/// Symplectic form `[[0, -1], [1, 0]]` on `C^{2d}`.
pub fn symplectic_form(d: usize) -> CMat {
    let mut m = CMat::zeros(2 * d, 2 * d);
    for i in 0..d {
        m[(i, d + i)] = c(-1.0, 0.0);
        m[(d + i, i)] = c(1.0, 0.0);
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferData {
    pub k1: f64,
    pub a: CMat,
    pub b: CMat,
    pub t: CMat,
    pub cond_a: f64,
}

impl TransferData {
    /// `||T* I T - I||`.
    pub fn conservation_defect(&self) -> f64 {
        let j = symplectic_form(self.a.nrows());
        hs_norm(&(self.t.adjoint() * &j * &self.t - &j))
    }
}

fn partial_fourier(model: &TightBindingOperator, k1: f64, j2: i32) -> CMat {
    let d = model.fiber().dim();
    let mut m = CMat::zeros(d, d);
    for (j, b) in model.terms() {
        if j[1] == j2 {
            m += b * C64::from_polar(1.0, k1 * j[0] as f64);
        }
    }
    m
}

fn condition_number(m: &CMat) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Writes `H(k1) = S2* a + b + a* S2` and builds
/// `T = [[-b a^{-1}, -a*], [a^{-1}, 0]]`.
pub fn transfer_matrix(model: &TightBindingOperator, k1: f64) -> Result<TransferData> {
    model.check_closure()?;
    if model.range_along(1) > 1 {
        return Err(Error::InvalidParameter(format!(
            "transfer matrices need hopping range 1 in direction 2, model has {}",
            model.range_along(1)
        )));
    }
    let d = model.fiber().dim();
    let a = partial_fourier(model, k1, -1);
    let b = partial_fourier(model, k1, 0);
    let cond_a = condition_number(&a);
    if !(cond_a < COND_MAX) {
        return Err(Error::Singular(format!(
            "a(k1) at k1 = {k1} has condition number {cond_a:.3e}; shift the k1 grid"
        )));
    }
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("a(k1) at k1 = {k1}")))?;
    let mut t = CMat::zeros(2 * d, 2 * d);
    t.view_mut((0, 0), (d, d)).copy_from(&(-&b * &a_inv));
    t.view_mut((0, d), (d, d)).copy_from(&(-a.adjoint()));
    t.view_mut((d, 0), (d, d)).copy_from(&a_inv);
    Ok(TransferData { k1, a, b, t, cond_a })
}

/// Orthonormal basis `Φ` of the generalized eigenspaces of `T` with
/// `|t| < 1`, from an ordered Schur form.
pub fn contracting_subspace(td: &TransferData) -> Result<CMat> {
    let d = td.a.nrows();
    let (q, tt, k) = ordered_schur(&td.t, |z| z.norm() < 1.0)?;
    for i in 0..2 * d {
        let m = tt[(i, i)].norm();
        if (m - 1.0).abs() < UNIT_CIRCLE_TOL {
            return Err(Error::GapClosed(format!(
                "T(k1) has eigenvalue {} on the unit circle at k1 = {}",
                tt[(i, i)],
                td.k1
            )));
        }
    }
    if k != d {
        return Err(Error::GapClosed(format!(
            "{k} contracting eigenvalues at k1 = {}, expected {d}",
            td.k1
        )));
    }
    Ok(q.columns(0, d).into_owned())
}

/// `||Φ* I Φ||`.
pub fn lagrangian_defect(phi: &CMat) -> f64 {
    let d = phi.ncols();
    hs_norm(&(phi.adjoint() * symplectic_form(d) * phi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UMatrix {
    pub k1: f64,
    pub u: CMat,
}

impl UMatrix {
    /// `||U* U - 1||`.
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.u.nrows();
        hs_norm(&(self.u.adjoint() * &self.u - CMat::identity(d, d)))
    }

    /// Sorted eigenphases in `(-π, π]`.
    pub fn eigenphases(&self) -> Result<Vec<f64>> {
        let (_, t, _) = ordered_schur(&self.u, |_| true)?;
        let mut ph: Vec<f64> = (0..t.nrows()).map(|i| t[(i, i)].arg()).collect();
        ph.sort_by(f64::total_cmp);
        Ok(ph)
    }
}

/// `U = (Φ_t - i Φ_b)(Φ_t + i Φ_b)^{-1}` for `Φ = (Φ_t; Φ_b)`.
pub fn u_matrix(k1: f64, phi: &CMat) -> Result<UMatrix> {
    let d = phi.ncols();
    let top = phi.rows(0, d);
    let bot = phi.rows(d, d);
    let num = top - bot * I;
    let den = top + bot * I;
    let cond = condition_number(&den);
    if !(cond < COND_MAX) {
        return Err(Error::Singular(format!(
            "(1, -i)* Φ at k1 = {k1} has condition number {cond:.3e}"
        )));
    }
    let den_inv = den
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("(1, -i)* Φ at k1 = {k1}")))?;
    Ok(UMatrix { k1, u: num * den_inv })
}

/// `U(k1)`, shifting `k1` by `K1_SHIFT` if `a(k1)` is near-singular.
pub fn u_at(model: &TightBindingOperator, k1: f64) -> Result<UMatrix> {
    let td = match transfer_matrix(model, k1) {
        Err(Error::Singular(_)) => transfer_matrix(model, k1 + K1_SHIFT)?,
        r => r?,
    };
    let phi = contracting_subspace(&td)?;
    u_matrix(td.k1, &phi)
}

fn det_phase_step(a: &UMatrix, b: &UMatrix) -> f64 {
    (b.u.determinant() / a.u.determinant()).arg()
}

/// `(1/2π) Σ arg(det U_{i+1} / det U_i)` around the closed list of samples.
/// Fails when an increment is `>= π/2`.
pub fn winding_number(samples: &[UMatrix]) -> Result<ChernResult> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidParameter("winding needs at least 2 samples".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let step = det_phase_step(&samples[i], &samples[(i + 1) % n]);
        if step.abs() >= PI / 2.0 {
            return Err(Error::Aliasing(format!(
                "phase increment {step:.3} between k1 = {} and {}",
                samples[i].k1,
                samples[(i + 1) % n].k1
            )));
        }
        total += step;
    }
    Ok(ChernResult::rounded(
        ChernMethod::Transfer,
        total / (2.0 * PI),
        format!("k1 samples {n}"),
    ))
}

/// Maximum bisection depth when refining a `k1` interval.
const MAX_REFINE: usize = 24;

fn refine(
    model: &TightBindingOperator,
    a: &UMatrix,
    b: &UMatrix,
    depth: usize,
    out: &mut Vec<UMatrix>,
) -> Result<()> {
    if det_phase_step(a, b).abs() < PI / 2.0 {
        out.push(b.clone());
        return Ok(());
    }
    if depth == MAX_REFINE {
        return Err(Error::Aliasing(format!(
            "det U phase still jumps between k1 = {} and {} after {MAX_REFINE} bisections",
            a.k1, b.k1
        )));
    }
    let mid = u_at(model, 0.5 * (a.k1 + b.k1))?;
    refine(model, a, &mid, depth + 1, out)?;
    refine(model, &mid, b, depth + 1, out)
}

/// Samples `U(k1)` on `n` uniform points of `[-π, π)` and bisects intervals
/// where the `det U` phase jumps by `π/2` or more. The last sample is the
/// first one shifted by `2π`.
pub fn sample_u_loop(model: &TightBindingOperator, n: usize) -> Result<Vec<UMatrix>> {
    if n < 4 {
        return Err(Error::InvalidParameter("k1 grid needs at least 4 points".into()));
    }
    let coarse: Vec<UMatrix> = (0..n)
        .into_par_iter()
        .map(|i| u_at(model, -PI + 2.0 * PI * i as f64 / n as f64))
        .collect::<Result<_>>()?;
    let mut out = vec![coarse[0].clone()];
    for i in 0..n {
        let b = if i + 1 < n {
            coarse[i + 1].clone()
        } else {
            UMatrix {
                k1: coarse[0].k1 + 2.0 * PI,
                u: coarse[0].u.clone(),
            }
        };
        refine(model, &coarse[i], &b, 0, &mut out)?;
    }
    out.pop();
    Ok(out)
}

/// Transfer-matrix Chern number over a `k1` loop starting from `n` points.
pub fn transfer_chern(model: &TightBindingOperator, n: usize) -> Result<ChernResult> {
    let samples = sample_u_loop(model, n)?;
    let mut r = winding_number(&samples)?;
    r.grid = format!("k1 grid {n}, refined to {}", samples.len());
    Ok(r)
}

/// Eigenphases of `U(k1)` on `n` uniform points: columns `k1, phase_1..`.
pub fn eigenphase_table(model: &TightBindingOperator, n: usize) -> Result<Table> {
    let d = model.fiber().dim();
    let mut header = vec!["k1".to_string()];
    header.extend((1..=d).map(|i| format!("phase_{i}")));
    let mut table = Table::new(&header);
    let rows: Vec<Vec<String>> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let u = u_at(model, -PI + 2.0 * PI * i as f64 / n as f64)?;
            let mut row = vec![sci(u.k1)];
            row.extend(u.eigenphases()?.into_iter().map(sci));
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for row in rows {
        table.push_cells(row);
    }
    Ok(table)
}

/// Coefficients of `H = p1 σ1 + p2 σ2 + p3 σ3` at one momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliVector {
    pub k: [f64; 2],
    pub p: [f64; 3],
}

pub const PAULI_TOL: f64 = 1e-12;

pub fn pauli_decompose(k: [f64; 2], bloch: &CMat) -> Result<PauliVector> {
    if bloch.shape() != (2, 2) {
        return Err(Error::FiberMismatch(format!(
            "Pauli decomposition needs a 2 x 2 Bloch matrix, got {:?}",
            bloch.shape()
        )));
    }
    let herm = hs_norm(&(bloch - bloch.adjoint()));
    let trace = (bloch[(0, 0)] + bloch[(1, 1)]).norm();
    if herm > PAULI_TOL || trace > PAULI_TOL {
        return Err(Error::InvalidParameter(format!(
            "Bloch matrix not traceless Hermitian (hermiticity {herm:.3e}, trace {trace:.3e})"
        )));
    }
    Ok(PauliVector {
        k,
        p: [bloch[(1, 0)].re, bloch[(1, 0)].im, bloch[(0, 0)].re],
    })
}

fn pauli_at(model: &TightBindingOperator, k: [f64; 2]) -> Result<[f64; 3]> {
    Ok(pauli_decompose(k, &model.bloch_unchecked(k))?.p)
}

/// Uniform torus grid `k_i = -π + 2π i / n`.
fn grid_point(n: usize, i1: usize, i2: usize) -> [f64; 2] {
    let s = 2.0 * PI / n as f64;
    [-PI + s * (i1 % n) as f64, -PI + s * (i2 % n) as f64]
}

/// Smallest `|E|` accepted on the Berry grid.
pub const BERRY_GAP_MIN: f64 = 1e-6;

/// Lattice field-strength sum over the negative-energy bundle on an
/// `n x n` grid: `Ch = -(1/2π) Σ_plaquettes arg(U1 U2 U1'^{-1} U2'^{-1})`
/// with link variables `det(Ψ(k)* Ψ(k'))`.
pub fn berry_flux_chern(model: &TightBindingOperator, n: usize) -> Result<ChernResult> {
    if n < 24 {
        return Err(Error::InvalidParameter("Berry grid needs N >= 24".into()));
    }
    model.check_closure()?;
    let d = model.fiber().dim();
    let frames: Vec<CMat> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let k = grid_point(n, idx % n, idx / n);
            let (e, v) = linalg::hermitian_eigen(&model.bloch_unchecked(k))?;
            let occ = e.iter().filter(|x| **x < 0.0).count();
            let gap = e.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
            if gap < BERRY_GAP_MIN || 2 * occ != d {
                return Err(Error::GapClosed(format!(
                    "min |E| = {gap:.3e} with {occ} negative bands at k = ({:.6}, {:.6})",
                    k[0], k[1]
                )));
            }
            Ok(v.columns(0, occ).into_owned())
        })
        .collect::<Result<_>>()?;
    let frame = |i1: usize, i2: usize| &frames[(i1 % n) + n * (i2 % n)];
    let link = |a: &CMat, b: &CMat| (a.adjoint() * b).determinant();
    let mut total = 0.0;
    for i2 in 0..n {
        for i1 in 0..n {
            let u1 = link(frame(i1, i2), frame(i1 + 1, i2));
            let u2 = link(frame(i1 + 1, i2), frame(i1 + 1, i2 + 1));
            let u3 = link(frame(i1 + 1, i2 + 1), frame(i1, i2 + 1));
            let u4 = link(frame(i1, i2 + 1), frame(i1, i2));
            total += (u1 * u2 * u3 * u4).arg();
        }
    }
    Ok(ChernResult::rounded(
        ChernMethod::Berry,
        -total / (2.0 * PI),
        format!("{n}x{n}"),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourParams {
    /// Radius of the circle around each zero of `(p1, p2)`.
    pub epsilon: f64,
    /// Points on the circle.
    pub samples: usize,
    /// Grid used to locate the zeros of `(p1, p2)`.
    pub zero_grid: usize,
    /// Zeros the model is expected to have; any other zero is refused.
    pub expected_zeros: Vec<[f64; 2]>,
}

impl Default for ContourParams {
    fn default() -> Self {
        ContourParams {
            epsilon: 0.02,
            samples: 2048,
            zero_grid: 64,
            expected_zeros: vec![[0.0, 0.0], [PI, PI]],
        }
    }
}

fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let w = |x: f64| {
        let y = x.rem_euclid(2.0 * PI);
        y.min(2.0 * PI - y)
    };
    w(a[0] - b[0]).hypot(w(a[1] - b[1]))
}

/// Winding of `θ = atan2(p2, p1)` around a closed parametrised curve.
fn theta_winding(
    model: &TightBindingOperator,
    samples: usize,
    point: impl Fn(f64) -> [f64; 2],
) -> Result<f64> {
    let mut total = 0.0;
    let mut prev = {
        let p = pauli_at(model, point(0.0))?;
        p[1].atan2(p[0])
    };
    for i in 1..=samples {
        let p = pauli_at(model, point(2.0 * PI * i as f64 / samples as f64))?;
        let th = p[1].atan2(p[0]);
        let mut step = th - prev;
        step -= 2.0 * PI * (step / (2.0 * PI)).round();
        if step.abs() >= PI / 2.0 {
            return Err(Error::Aliasing(format!(
                "θ jumps by {step:.3} on the contour; increase the sample count"
            )));
        }
        total += step;
        prev = th;
    }
    Ok(total / (2.0 * PI))
}

/// Zeros of `(p1, p2)`, located from plaquettes with non-zero winding of
/// `θ` on a `grid x grid` mesh and polished by Nelder-Mead.
pub fn pauli_zeros(model: &TightBindingOperator, grid: usize) -> Result<Vec<[f64; 2]>> {
    // Offset by a fraction of a cell so symmetric zeros do not sit on edges.
    let s = 2.0 * PI / grid as f64;
    let off = 0.5 * s + 1e-3;
    let mut zeros: Vec<[f64; 2]> = Vec::new();
    for i2 in 0..grid {
        for i1 in 0..grid {
            let x0 = -PI + off + s * i1 as f64;
            let y0 = -PI + off + s * i2 as f64;
            let corner = |t: f64| {
                // Unit square boundary traversed counterclockwise, t in [0, 2π].
                let u = 4.0 * t / (2.0 * PI);
                let (dx, dy) = match u as usize {
                    0 => (u, 0.0),
                    1 => (1.0, u - 1.0),
                    2 => (3.0 - u, 1.0),
                    _ => (0.0, (4.0 - u).max(0.0)),
                };
                [x0 + s * dx, y0 + s * dy]
            };
            let w = theta_winding(model, 64, corner)?;
            if w.abs() > 0.5 {
                let f = |k: [f64; 2]| {
                    let p = model.bloch_unchecked(k);
                    p[(1, 0)].norm()
                };
                let (_, z) = nelder_mead(&f, [x0 + 0.5 * s, y0 + 0.5 * s], 0.25 * s, 1e-14, 4000);
                let z = [
                    (z[0] + PI).rem_euclid(2.0 * PI) - PI,
                    (z[1] + PI).rem_euclid(2.0 * PI) - PI,
                ];
                if zeros.iter().all(|q| torus_distance(*q, z) > 1e-6) {
                    zeros.push(z);
                }
            }
        }
    }
    Ok(zeros)
}

/// Sum of the windings of `θ = atan2(p2, p1)` on radius-`ε` circles around
/// the zeros of `(p1, p2)` where `p3 > 0`, i.e. where the section
/// `φ ∝ (E_- + p3, p1 + i p2)` vanishes.
pub fn transition_winding(
    model: &TightBindingOperator,
    params: &ContourParams,
) -> Result<ChernResult> {
    model.check_closure()?;
    let zeros = pauli_zeros(model, params.zero_grid)?;
    let unexpected: Vec<[f64; 2]> = zeros
        .iter()
        .copied()
        .filter(|z| params.expected_zeros.iter().all(|e| torus_distance(*z, *e) > 1e-6))
        .collect();
    if !unexpected.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "(p1, p2) has unexpected zeros at {unexpected:?}"
        )));
    }
    let mut total = 0.0;
    for z in &zeros {
        let p3 = pauli_at(model, *z)?[2];
        if p3.abs() < BERRY_GAP_MIN {
            return Err(Error::GapClosed(format!("p vanishes at k = {z:?}")));
        }
        if p3 > 0.0 {
            total += theta_winding(model, params.samples, |t| {
                [z[0] + params.epsilon * t.cos(), z[1] + params.epsilon * t.sin()]
            })?;
        }
    }
    Ok(ChernResult::rounded(
        ChernMethod::Contour,
        total,
        format!("epsilon {}, {} samples", params.epsilon, params.samples),
    ))
}

/// Real-space marker `2πi Tr <n|P [[X2, P], [X1, P]]|n>` averaged over the
/// central `L/2 x L/2` block of a torus, with sawtooth coordinates centred on
/// each evaluation site.
pub fn real_space_chern(h: &FiniteVolumeOperator) -> Result<ChernResult> {
    if h.boundary != Boundary::Periodic {
        return Err(Error::InvalidParameter("real-space Chern needs a torus".into()));
    }
    let (e, v) = h.eigen()?;
    let gap = e.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if gap < BERRY_GAP_MIN {
        return Err(Error::GapClosed(format!("finite-volume min |E| = {gap:.3e}")));
    }
    let occ = e.iter().filter(|x| **x < 0.0).count();
    let vo = v.columns(0, occ);
    let p = &vo * vo.adjoint();
    let fd = h.fiber.dim();
    let l = h.l;
    let centre: Vec<[usize; 2]> = (l[1] / 4..l[1] / 4 + l[1] / 2)
        .flat_map(|y| (l[0] / 4..l[0] / 4 + l[0] / 2).map(move |x| [x, y]))
        .collect();
    let per_site: Vec<(C64, f64)> = centre
        .par_iter()
        .map(|&n| {
            let coords: Vec<[f64; 2]> = (0..h.sites())
                .map(|idx| {
                    let m = h.site_of(idx);
                    let w = |a: usize, b: usize, len: usize| {
                        let d = (a + len - b) % len;
                        if 2 * d > len {
                            d as f64 - len as f64
                        } else {
                            d as f64
                        }
                    };
                    [w(m[0], n[0], l[0]), w(m[1], n[1], l[1])]
                })
                .collect();
            let x = |row: usize, dir: usize| coords[row / fd][dir];
            let rows = h.row(n, 0);
            let vrows = p.rows(rows, fd);
            let pcols = p.columns(rows, fd);
            let scaled_rows = |dir: usize| {
                let mut m = vrows.into_owned();
                for (col, mut cv) in m.column_iter_mut().enumerate() {
                    cv *= c(x(col, dir), 0.0);
                }
                m
            };
            let scaled_cols = |dir: usize| {
                let mut m = pcols.into_owned();
                for (row, mut rv) in m.row_iter_mut().enumerate() {
                    rv *= c(x(row, dir), 0.0);
                }
                m
            };
            // Tr <n| P [X_a, P] [X_b, P] |n> = Tr (W_a P - W_a) Y_b.
            let term = |a: usize, b: usize| {
                let w = scaled_rows(a);
                let y = scaled_cols(b);
                ((&w * &p) * &y - &w * &y).trace()
            };
            let marker = C64::new(0.0, 2.0 * PI) * (term(1, 0) - term(0, 1));
            let sobolev: f64 = (0..2)
                .map(|dir| scaled_cols(dir).iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum();
            (marker, sobolev)
        })
        .collect();
    let ns = per_site.len() as f64;
    let raw = per_site.iter().map(|(m, _)| *m).sum::<C64>() / ns;
    let sobolev = per_site.iter().map(|(_, s)| *s).sum::<f64>() / ns;
    let r = raw.re.round();
    let residual = (raw.re - r).abs();
    Ok(ChernResult {
        value: (residual <= NO_VERDICT_RESIDUAL).then_some(r as i64),
        method: ChernMethod::Realspace,
        raw: raw.re,
        grid: format!("torus {}x{}, {} central sites", l[0], l[1], centre.len()),
        residual,
        sobolev: Some(sobolev),
    })
}

/// Method and resolution for a Chern computation on a clean model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ChernConfig {
    Transfer { k_grid: usize },
    Berry { n_grid: usize },
    Contour(ContourParams),
    Realspace { l: usize },
}

impl ChernConfig {
    pub fn default_for(method: ChernMethod) -> Self {
        match method {
            ChernMethod::Transfer => ChernConfig::Transfer { k_grid: 64 },
            ChernMethod::Berry => ChernConfig::Berry { n_grid: 48 },
            ChernMethod::Contour => ChernConfig::Contour(ContourParams::default()),
            ChernMethod::Realspace => ChernConfig::Realspace { l: 20 },
        }
    }

    pub fn method(&self) -> ChernMethod {
        match self {
            ChernConfig::Transfer { .. } => ChernMethod::Transfer,
            ChernConfig::Berry { .. } => ChernMethod::Berry,
            ChernConfig::Contour(_) => ChernMethod::Contour,
            ChernConfig::Realspace { .. } => ChernMethod::Realspace,
        }
    }
}

pub fn chern_number(model: &TightBindingOperator, cfg: &ChernConfig) -> Result<ChernResult> {
    match cfg {
        ChernConfig::Transfer { k_grid } => transfer_chern(model, *k_grid),
        ChernConfig::Berry { n_grid } => berry_flux_chern(model, *n_grid),
        ChernConfig::Contour(p) => transition_winding(model, p),
        ChernConfig::Realspace { l } => {
            real_space_chern(&assemble_finite_volume(model, [*l, *l], Boundary::Periodic)?)
        }
    }
}

/// Outcome of one point of a `μ` scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStatus {
    Ok,
    NoVerdict,
    GapClosed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub mu: f64,
    pub status: ScanStatus,
    pub result: Option<ChernResult>,
    pub message: String,
}

/// Gaps below this are reported as closed in a scan.
pub const SCAN_GAP_MIN: f64 = 1e-6;

/// Chern numbers along a family `μ -> H_μ`. Gapless points and failures are
/// recorded in the entries.
pub fn chern_mu_scan(
    family: impl Fn(f64) -> Result<TightBindingOperator>,
    mu_list: &[f64],
    cfg: &ChernConfig,
) -> Vec<ScanEntry> {
    mu_list
        .iter()
        .map(|&mu| {
            let outcome = family(mu).and_then(|model| {
                let gap = central_gap(&model, 64)?;
                if gap < SCAN_GAP_MIN {
                    return Err(Error::GapClosed(format!("central gap {gap:.3e}")));
                }
                chern_number(&model, cfg)
            });
            match outcome {
                Ok(r) => ScanEntry {
                    mu,
                    status: if r.value.is_some() { ScanStatus::Ok } else { ScanStatus::NoVerdict },
                    message: String::new(),
                    result: Some(r),
                },
                Err(e) => ScanEntry {
                    mu,
                    status: if matches!(e, Error::GapClosed(_)) {
                        ScanStatus::GapClosed
                    } else {
                        ScanStatus::Failed
                    },
                    result: None,
                    message: e.to_string(),
                },
            }
        })
        .collect()
}

/// Columns `mu, method, raw, value, residual, grid, status`.
pub fn scan_table(method: ChernMethod, entries: &[ScanEntry]) -> Table {
    let mut t = Table::new(&["mu", "method", "raw", "value", "residual", "grid", "status"]);
    for e in entries {
        let status = match e.status {
            ScanStatus::Ok => "ok",
            ScanStatus::NoVerdict => "no-verdict",
            ScanStatus::GapClosed => "gap-closed",
            ScanStatus::Failed => "failed",
        };
        let (raw, value, residual, grid) = match &e.result {
            Some(r) => (
                sci(r.raw),
                r.value.map(|v| v.to_string()).unwrap_or_default(),
                sci(r.residual),
                r.grid.clone(),
            ),
            None => (String::new(), String::new(), String::new(), e.message.clone()),
        };
        t.push_cells(vec![sci(e.mu), method.name().into(), raw, value, residual, grid, status.into()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Example, ModelParams, Sign};
    use crate::operator::FiberShape;

    fn pip(sign: Sign, mu: f64) -> TightBindingOperator {
        Example::PIp(sign).operator(&ModelParams::new(0.3, mu)).unwrap()
    }

    fn did(sign: Sign, mu: f64) -> TightBindingOperator {
        Example::DId(sign).operator(&ModelParams::new(1.0, mu)).unwrap()
    }

    fn loop_of(f: impl Fn(f64) -> CMat, n: usize) -> Vec<UMatrix> {
        (0..n)
            .map(|i| {
                let k1 = -PI + 2.0 * PI * i as f64 / n as f64;
                UMatrix { k1, u: f(k1) }
            })
            .collect()
    }

    #[test]
    fn winding_of_explicit_loops() {
        let id = winding_number(&loop_of(|_| CMat::identity(2, 2), 16)).unwrap();
        assert_eq!(id.value, Some(0));
        let one = winding_number(&loop_of(
            |k| CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::from_polar(1.0, k), c(1.0, 0.0)])),
            16,
        ))
        .unwrap();
        assert_eq!(one.value, Some(1));
        assert!(one.residual < 1e-12);
        let coarse = loop_of(|k| CMat::from_element(1, 1, C64::from_polar(1.0, 5.0 * k)), 8);
        assert!(matches!(winding_number(&coarse), Err(Error::Aliasing(_))));
    }

    #[test]
    fn transfer_blocks_of_pip() {
        let mu = -0.5;
        let k1 = 0.7_f64;
        let td = transfer_matrix(&pip(Sign::Plus, mu), k1).unwrap();
        // b(k1) carries the diagonal cos k1 - μ/2 and the i δ sin k1 pairing.
        let b = &td.b;
        assert!((b[(0, 0)] - c(k1.cos() - mu / 2.0, 0.0)).norm() < 1e-14);
        assert!((b[(1, 1)] + c(k1.cos() - mu / 2.0, 0.0)).norm() < 1e-14);
        assert!((b[(0, 1)] - c(0.0, 0.3 * k1.sin())).norm() < 1e-14);
        // a(k1) is the j2 = -1 hop: diag(1/2, -1/2) and ±δ/2 pairing.
        assert!((td.a[(0, 0)] - c(0.5, 0.0)).norm() < 1e-14);
        assert!((td.a[(1, 1)] - c(-0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn transfer_conserves_symplectic_form_and_pairs_eigenvalues() {
        let h = pip(Sign::Plus, -0.5);
        for i in 0..100 {
            let k1 = -PI + 2.0 * PI * (i as f64 + 0.37) / 100.0;
            let td = transfer_matrix(&h, k1).unwrap();
            let norm = hs_norm(&td.t);
            assert!(td.conservation_defect() <= 1e-10 * norm * norm);
            let (_, t, _) = ordered_schur(&td.t, |_| true).unwrap();
            let eig: Vec<C64> = (0..4).map(|i| t[(i, i)]).collect();
            for e in &eig {
                let partner = 1.0 / e.conj();
                assert!(eig.iter().any(|f| (f - partner).norm() < 1e-8 * partner.norm().max(1.0)));
            }
        }
    }

    #[test]
    fn contracting_plane_is_lagrangian_and_u_unitary() {
        let h = pip(Sign::Plus, -0.5);
        for i in 0..64 {
            let k1 = -PI + 2.0 * PI * i as f64 / 64.0;
            let td = transfer_matrix(&h, k1).unwrap();
            let phi = contracting_subspace(&td).unwrap();
            assert_eq!(phi.ncols(), 2);
            assert!(lagrangian_defect(&phi) <= 1e-8);
            let u = u_matrix(k1, &phi).unwrap();
            assert!(u.unitarity_defect() <= 1e-8);
            let m = CMat::from_fn(2, 2, |r, s| c(1.0 + r as f64, 0.5 * s as f64 - 0.3 * r as f64));
            let u2 = u_matrix(k1, &(&phi * m)).unwrap();
            assert!(hs_norm(&(u2.u - &u.u)) <= 1e-10);
        }
    }

    #[test]
    fn gap_closure_detected_by_transfer() {
        // At μ = 0 the gap closes at k = (0, π) and (π, 0).
        let td = transfer_matrix(&pip(Sign::Plus, 0.0), 0.0).unwrap();
        assert!(matches!(contracting_subspace(&td), Err(Error::GapClosed(_))));
    }

    #[test]
    fn long_range_in_direction_two_is_rejected() {
        let mut h = TightBindingOperator::zero(FiberShape::new(1, true).unwrap());
        h.add_term([0, 2], CMat::identity(2, 2)).unwrap();
        h.add_term([0, -2], CMat::identity(2, 2)).unwrap();
        assert!(matches!(transfer_matrix(&h, 0.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn pauli_vectors_of_examples() {
        let p = |h: &TightBindingOperator, k: [f64; 2]| pauli_decompose(k, &h.bloch_unchecked(k)).unwrap().p;
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        let hp = did(Sign::Plus, 2.0);
        assert!(close(p(&hp, [0.0, 0.0]), [0.0, 0.0, 1.0]));
        assert!(close(p(&hp, [PI, 0.0]), [-2.0, 0.0, -1.0]));
        for s in [Sign::Plus, Sign::Minus] {
            let h = pip(s, 0.0);
            assert!(close(p(&h, [PI / 2.0, 0.0]), [0.0, -0.3, 1.0]));
            assert!(close(p(&h, [0.0, PI / 2.0]), [-0.3 * s.value(), 0.0, 1.0]));
        }
        assert!(pauli_decompose([0.0; 2], &CMat::identity(2, 2)).is_err());
    }

    #[test]
    fn flat_model_has_zero_berry_flux() {
        let mut h = TightBindingOperator::zero(FiberShape::new(1, true).unwrap());
        h.add_term([0, 0], CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(-1.0, 0.0)])))
            .unwrap();
        let r = berry_flux_chern(&h, 24).unwrap();
        assert_eq!(r.value, Some(0));
        assert!(r.raw.abs() < 1e-12);
    }

    #[test]
    fn did_chern_numbers_agree_across_methods() {
        for (sign, mu, expected) in [
            (Sign::Plus, 2.0, -2),
            (Sign::Minus, 2.0, 2),
            (Sign::Plus, 5.0, 0),
            (Sign::Plus, -5.0, 0),
        ] {
            let h = did(sign, mu);
            let b = berry_flux_chern(&h, 32).unwrap();
            let b2 = berry_flux_chern(&h, 64).unwrap();
            let t = transfer_chern(&h, 64).unwrap();
            let ct = transition_winding(&h, &ContourParams::default()).unwrap();
            for r in [&b, &b2, &t, &ct] {
                assert_eq!(r.value, Some(expected), "{sign:?} μ={mu}: {r:?}");
                assert!(r.residual < 0.1);
            }
        }
    }

    #[test]
    fn contour_is_radius_independent_and_odd_in_p2() {
        let h = did(Sign::Plus, 2.0);
        for eps in [0.05, 0.02, 0.01] {
            let p = ContourParams { epsilon: eps, ..Default::default() };
            assert_eq!(transition_winding(&h, &p).unwrap().value, Some(-2));
        }
        // The d±id Bloch matrix is even in k, so complex conjugation of the
        // operator flips p2 alone.
        let flipped = h.conjugate();
        let k = [0.3, -1.1];
        let (p, q) = (
            pauli_decompose(k, &h.bloch_unchecked(k)).unwrap().p,
            pauli_decompose(k, &flipped.bloch_unchecked(k)).unwrap().p,
        );
        assert!((p[1] + q[1]).abs() < 1e-12 && (p[0] - q[0]).abs() < 1e-12);
        let r = transition_winding(&flipped, &ContourParams::default()).unwrap();
        assert_eq!(r.value, Some(2));
    }

    #[test]
    fn contour_refuses_unexpected_zeros() {
        // p±ip has extra zeros of (p1, p2) at (0, π) and (π, 0).
        let h = pip(Sign::Plus, -0.5);
        assert!(matches!(
            transition_winding(&h, &ContourParams::default()),
            Err(Error::InvalidParameter(_))
        ));
        let all = ContourParams {
            expected_zeros: vec![[0.0, 0.0], [0.0, PI], [PI, 0.0], [PI, PI]],
            ..Default::default()
        };
        assert_eq!(transition_winding(&h, &all).unwrap().value, Some(1));
    }

    #[test]
    fn pip_methods_agree_and_flip_with_chirality() {
        for mu in [-0.5, 0.5] {
            let t = transfer_chern(&pip(Sign::Plus, mu), 64).unwrap().value.unwrap();
            let b = berry_flux_chern(&pip(Sign::Plus, mu), 48).unwrap().value.unwrap();
            let tm = transfer_chern(&pip(Sign::Minus, mu), 64).unwrap().value.unwrap();
            assert_eq!(t, b);
            assert_eq!(t.abs(), 1);
            assert_eq!(tm, -t);
        }
        let fine = transfer_chern(&pip(Sign::Plus, -0.5), 128).unwrap();
        assert_eq!(fine.value, transfer_chern(&pip(Sign::Plus, -0.5), 32).unwrap().value);
    }

    #[test]
    fn real_space_marker_matches_and_trivial_phase_vanishes() {
        let rs = |h: &TightBindingOperator, l: usize| {
            real_space_chern(&assemble_finite_volume(h, [l, l], Boundary::Periodic).unwrap()).unwrap()
        };
        let h = pip(Sign::Plus, -0.5);
        let r = rs(&h, 12);
        assert_eq!(r.value, transfer_chern(&h, 64).unwrap().value);
        assert!(r.sobolev.unwrap().is_finite());
        let r0 = rs(&pip(Sign::Plus, -5.0), 12);
        assert_eq!(r0.value, Some(0));
    }

    #[test]
    fn scan_marks_gap_closure() {
        let entries = chern_mu_scan(
            |mu| Example::PIp(Sign::Plus).operator(&ModelParams::new(0.3, mu)),
            &[-0.5, 0.0, 0.5],
            &ChernConfig::Transfer { k_grid: 64 },
        );
        assert_eq!(entries[1].status, ScanStatus::GapClosed);
        assert_eq!(entries[0].status, ScanStatus::Ok);
        let csv = scan_table(ChernMethod::Transfer, &entries).to_csv();
        assert!(csv.lines().nth(2).unwrap().ends_with("gap-closed"));
    }
}
