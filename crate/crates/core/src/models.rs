//! Concrete lattice superconductors: the discrete Laplacian, the translation
//! invariant pairing potentials, their BdG doubling, and the closed-form
//! bands of the spinless `p±ip` and spin-singlet `d±id` examples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, conj, real, small_hermitian_eigen, CMat, C64, I};
use crate::operator::{FiberShape, TightBindingOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn suffix(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tag", content = "sign")]
pub enum PairingKind {
    /// `δ i s²`
    S,
    /// `δ (S1 + S1* + S2 + S2*) i s²`
    SStar,
    /// `δ (S1 - S1*) s¹`
    Px,
    /// `δ (S1 - S1* ± i (S2 - S2*))`, spinless.
    Pip(Sign),
    /// `δ (S1 - S1* + i (S2 - S2*)) s¹`
    PSpinful,
    /// `δ ((S1 - S1*) ± i (S2 - S2*) s³)`
    PTriplet(Sign),
    /// `δ (S1 - S1*)(S2 - S2*) i s²`
    Dxy,
    /// `δ (S1 + S1* - S2 - S2*) i s²`
    Dx2y2,
    /// `Δ_{x²-y²} ± i Δ_{xy}`
    Did(Sign),
}

pub const MODEL_NAMES: [&str; 12] = [
    "s", "s-star", "px", "pip+", "pip-", "p-spinful", "p-triplet+", "p-triplet-", "dxy", "dx2y2",
    "did+", "did-",
];

impl PairingKind {
    /// Fiber dimension of the electron space: 1 for spinless, 2 for spin ½.
    pub fn fiber_r(self) -> usize {
        match self {
            PairingKind::Pip(_) => 1,
            _ => 2,
        }
    }

    pub fn all() -> Vec<PairingKind> {
        MODEL_NAMES.iter().map(|n| n.parse().unwrap()).collect()
    }
}

impl fmt::Display for PairingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairingKind::S => write!(f, "s"),
            PairingKind::SStar => write!(f, "s-star"),
            PairingKind::Px => write!(f, "px"),
            PairingKind::Pip(s) => write!(f, "pip{}", s.suffix()),
            PairingKind::PSpinful => write!(f, "p-spinful"),
            PairingKind::PTriplet(s) => write!(f, "p-triplet{}", s.suffix()),
            PairingKind::Dxy => write!(f, "dxy"),
            PairingKind::Dx2y2 => write!(f, "dx2y2"),
            PairingKind::Did(s) => write!(f, "did{}", s.suffix()),
        }
    }
}

impl FromStr for PairingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "s" => PairingKind::S,
            "s-star" => PairingKind::SStar,
            "px" => PairingKind::Px,
            "pip+" => PairingKind::Pip(Sign::Plus),
            "pip-" => PairingKind::Pip(Sign::Minus),
            "p-spinful" => PairingKind::PSpinful,
            "p-triplet+" => PairingKind::PTriplet(Sign::Plus),
            "p-triplet-" => PairingKind::PTriplet(Sign::Minus),
            "dxy" => PairingKind::Dxy,
            "dx2y2" => PairingKind::Dx2y2,
            "did+" => PairingKind::Did(Sign::Plus),
            "did-" => PairingKind::Did(Sign::Minus),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown model '{other}', expected one of {}",
                    MODEL_NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub delta: f64,
    pub mu: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Separate `d_xy` amplitude for `d±id`; defaults to `delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_xy: Option<f64>,
}

impl ModelParams {
    pub fn new(delta: f64, mu: f64) -> Self {
        Self {
            delta,
            mu,
            lambda: 0.0,
            delta_xy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.delta.is_finite()
            && self.mu.is_finite()
            && self.lambda.is_finite()
            && self.delta_xy.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter("disorder coupling must be >= 0".into()));
        }
        Ok(())
    }
}

/// Spin-½ matrices `s^a = σ^a / 2`, `a = 1, 2, 3`.
pub fn spin_half(a: usize) -> CMat {
    let z = c(0.0, 0.0);
    let h = real(0.5);
    match a {
        1 => CMat::from_row_slice(2, 2, &[z, h, h, z]),
        2 => CMat::from_row_slice(2, 2, &[z, -I * 0.5, I * 0.5, z]),
        3 => CMat::from_row_slice(2, 2, &[h, z, z, -h]),
        _ => panic!("spin component must be 1, 2 or 3"),
    }
}

/// `i s²`, the singlet pairing matrix.
pub fn singlet() -> CMat {
    spin_half(2) * I
}

/// Scalar hopping operator `Σ coeff S^j` on the scalar fiber.
fn hopping(terms: &[([i32; 2], C64)]) -> TightBindingOperator {
    TightBindingOperator::from_terms(
        FiberShape::scalar(),
        terms.iter().map(|(j, v)| (*j, CMat::from_element(1, 1, *v))),
    )
    .expect("scalar blocks")
    .pruned(0.0)
}

fn laplacian_scalar() -> TightBindingOperator {
    let o = real(1.0);
    hopping(&[([1, 0], o), ([-1, 0], o), ([0, 1], o), ([0, -1], o)])
}

/// `S_dir - S_dir*`
fn antisym(dir: usize) -> TightBindingOperator {
    let mut p = [0, 0];
    p[dir] = 1;
    hopping(&[(p, real(1.0)), ([-p[0], -p[1]], real(-1.0))])
}

/// `S1 + S1* - S2 - S2*`
fn dx2y2_hopping() -> TightBindingOperator {
    let o = real(1.0);
    hopping(&[([1, 0], o), ([-1, 0], o), ([0, 1], -o), ([0, -1], -o)])
}

fn spin_fiber() -> FiberShape {
    FiberShape { r: 2, ph: false }
}

fn with_spin(t: &TightBindingOperator, m: &CMat) -> TightBindingOperator {
    t.tensor(m, spin_fiber()).expect("2x2 spin factor")
}

/// The one-electron hopping `S1 + S1* + S2 + S2*` tensored with `1_r`.
pub fn build_one_electron(r: usize) -> Result<TightBindingOperator> {
    let fiber = FiberShape::new(r, false)?;
    laplacian_scalar().tensor(&CMat::identity(r, r), fiber)
}

/// Pairing potential `Δ` for `kind` with amplitude `delta`.
///
/// For `d±id` the `d_xy` amplitude is `delta_xy` (default `delta`) and the
/// `d_{x²-y²}` coefficient is `2 delta`, so that both spin blocks carry the
/// Bloch entries `delta (cos k1 - cos k2 ∓ i delta_xy/delta sin k1 sin k2)`.
pub fn build_pairing(
    kind: PairingKind,
    delta: f64,
    delta_xy: Option<f64>,
) -> Result<TightBindingOperator> {
    let d = real(delta);
    let sc = singlet();
    let op = match kind {
        PairingKind::S => with_spin(&TightBindingOperator::identity(FiberShape::scalar()), &sc),
        PairingKind::SStar => with_spin(&laplacian_scalar(), &sc),
        PairingKind::Px => with_spin(&antisym(0), &spin_half(1)),
        PairingKind::Pip(s) => pip_hopping(s),
        PairingKind::PSpinful => with_spin(&pip_hopping(Sign::Plus), &spin_half(1)),
        PairingKind::PTriplet(s) => {
            let a = with_spin(&antisym(0), &CMat::identity(2, 2));
            let b = with_spin(&antisym(1).scaled(I * s.value()), &spin_half(3));
            a.sum(&b)?
        }
        PairingKind::Dxy => with_spin(&dxy_hopping(), &sc),
        PairingKind::Dx2y2 => with_spin(&dx2y2_hopping(), &sc),
        PairingKind::Did(s) => {
            let xy = delta_xy.unwrap_or(delta);
            let a = with_spin(&dx2y2_hopping(), &sc).scaled(real(2.0));
            let b = with_spin(&dxy_hopping(), &sc).scaled(I * s.value() * xy);
            return Ok(a.scaled(d).sum(&b)?.pruned(0.0));
        }
    };
    Ok(op.scaled(d).pruned(0.0))
}

/// `S1 - S1* ± i (S2 - S2*)`
fn pip_hopping(s: Sign) -> TightBindingOperator {
    let si = I * s.value();
    hopping(&[
        ([1, 0], real(1.0)),
        ([-1, 0], real(-1.0)),
        ([0, 1], si),
        ([0, -1], -si),
    ])
}

/// `(S1 - S1*)(S2 - S2*)`
fn dxy_hopping() -> TightBindingOperator {
    antisym(0).compose(&antisym(1)).expect("scalar fibers")
}

/// `H = ½ [[h - μ, Δ], [-conj(Δ), -(conj(h) - μ)]]` on the doubled fiber.
pub fn build_bdg(
    h: &TightBindingOperator,
    delta: &TightBindingOperator,
    mu: f64,
) -> Result<TightBindingOperator> {
    if h.fiber() != delta.fiber() || h.fiber().ph {
        return Err(Error::FiberMismatch(format!(
            "electron hamiltonian {:?} vs pairing {:?}",
            h.fiber(),
            delta.fiber()
        )));
    }
    let r = h.fiber().r;
    let fiber = FiberShape::new(r, true)?;
    let id = CMat::identity(r, r);
    let mut out = TightBindingOperator::zero(fiber);
    let place = |blk: &CMat, row: usize, col: usize| {
        let mut m = CMat::zeros(2 * r, 2 * r);
        m.view_mut((row * r, col * r), (r, r)).copy_from(&(blk * real(0.5)));
        m
    };
    for (j, b) in h.terms() {
        out.add_term(*j, place(b, 0, 0))?;
        out.add_term(*j, place(&(-conj(b)), 1, 1))?;
    }
    out.add_term([0, 0], place(&(&id * real(-mu)), 0, 0))?;
    out.add_term([0, 0], place(&(&id * real(mu)), 1, 1))?;
    for (j, b) in delta.terms() {
        out.add_term(*j, place(b, 0, 1))?;
        out.add_term(*j, place(&(-conj(b)), 1, 0))?;
    }
    Ok(out.pruned(0.0))
}

/// Clean BdG Hamiltonian for a pairing kind.
pub fn build_model(kind: PairingKind, params: &ModelParams) -> Result<TightBindingOperator> {
    params.validate()?;
    let h = build_one_electron(kind.fiber_r())?;
    let delta = build_pairing(kind, params.delta, params.delta_xy)?;
    build_bdg(&h, &delta, params.mu)
}

/// Blocks of an SU(2)-invariant spin-½ BdG operator.
///
/// Fiber order is `(e↑, e↓, h↑, h↓)`. The first block acts on `(e↑, h↓)`;
/// the second acts on `(e↓, h↑)` after the gauge `diag(1, -1)`. Both satisfy
/// the odd particle-hole symmetry.
pub fn reduce_su2(
    h: &TightBindingOperator,
) -> Result<(TightBindingOperator, TightBindingOperator)> {
    let f = h.fiber();
    if f != (FiberShape { r: 2, ph: true }) {
        return Err(Error::Structure(format!(
            "spin reduction needs a spin-1/2 doubled fiber, got {f:?}"
        )));
    }
    let scale = h
        .terms()
        .values()
        .map(crate::linalg::hs_norm)
        .fold(1.0, f64::max);
    let sectors: [[usize; 2]; 2] = [[0, 3], [1, 2]];
    for (j, b) in h.terms() {
        for a in 0..4 {
            for bb in 0..4 {
                let same = sectors.iter().any(|s| s.contains(&a) && s.contains(&bb));
                if !same && b[(a, bb)].norm() > 1e-12 * scale {
                    return Err(Error::Structure(format!(
                        "block at ({}, {}) couples the spin sectors at entry ({a}, {bb})",
                        j[0], j[1]
                    )));
                }
            }
        }
    }
    let fiber = FiberShape { r: 1, ph: true };
    let extract = |idx: [usize; 2], gauge: f64| -> Result<TightBindingOperator> {
        TightBindingOperator::from_terms(
            fiber,
            h.terms().iter().map(|(j, b)| {
                let m = CMat::from_fn(2, 2, |p, q| {
                    let g = if p == q { 1.0 } else { gauge };
                    b[(idx[p], idx[q])] * g
                });
                (*j, m)
            }),
        )
        .map(|op| op.pruned(0.0))
    };
    Ok((extract(sectors[0], 1.0)?, extract(sectors[1], -1.0)?))
}

/// The two-band examples with closed-form spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    /// Spinless `p±ip` (class D).
    PIp(Sign),
    /// One spin block of `d±id` (class C).
    DId(Sign),
}

impl Example {
    /// The `2 x 2`-fiber operator whose Bloch bands are the closed forms.
    pub fn operator(self, params: &ModelParams) -> Result<TightBindingOperator> {
        match self {
            Example::PIp(s) => build_model(PairingKind::Pip(s), params),
            Example::DId(s) => Ok(reduce_su2(&build_model(PairingKind::Did(s), params)?)?.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub k: [f64; 2],
    pub e_plus: f64,
    pub e_minus: f64,
}

pub fn example_bands(example: Example, params: &ModelParams, k: [f64; 2]) -> BandPoint {
    let (c1, c2) = (k[0].cos(), k[1].cos());
    let (s1, s2) = (k[0].sin(), k[1].sin());
    let p3 = c1 + c2 - params.mu / 2.0;
    let e = match example {
        Example::PIp(_) => (p3 * p3 + params.delta.powi(2) * (s1 * s1 + s2 * s2)).sqrt(),
        Example::DId(_) => {
            let d = params.delta;
            let xy = params.delta_xy.unwrap_or(d);
            let p1 = d * (c1 - c2);
            let p2 = xy * s1 * s2;
            (p3 * p3 + p1 * p1 + p2 * p2).sqrt()
        }
    };
    BandPoint {
        k,
        e_plus: e,
        e_minus: -e,
    }
}

/// Distance of the Bloch spectrum at `k` from zero.
pub fn min_abs_eigenvalue(op: &TightBindingOperator, k: [f64; 2]) -> f64 {
    small_hermitian_eigen(&op.bloch_unchecked(k))
        .0
        .into_iter()
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

/// Central gap `g = 2 min_k min_i |E_i(k)|`: coarse grid then Nelder-Mead.
pub fn central_gap(op: &TightBindingOperator, grid_n: usize) -> Result<f64> {
    if grid_n < 64 {
        return Err(Error::InvalidParameter("central_gap needs grid_n >= 64".into()));
    }
    op.check_closure()?;
    let f = |k: [f64; 2]| min_abs_eigenvalue(op, k);
    let step = 2.0 * std::f64::consts::PI / grid_n as f64;
    let mut samples: Vec<(f64, [f64; 2])> = Vec::with_capacity(grid_n * grid_n);
    for i2 in 0..grid_n {
        for i1 in 0..grid_n {
            let k = [
                -std::f64::consts::PI + step * i1 as f64,
                -std::f64::consts::PI + step * i2 as f64,
            ];
            samples.push((f(k), k));
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = samples[0].0;
    for &(_, k) in samples.iter().take(4) {
        let (v, _) = nelder_mead(&f, k, step, 1e-9, 2000);
        best = best.min(v);
    }
    Ok(2.0 * best)
}

/// Minimizes `f` on the plane from `x0`; returns `(f_min, x_min)`.
pub fn nelder_mead(
    f: &impl Fn([f64; 2]) -> f64,
    x0: [f64; 2],
    scale: f64,
    ftol: f64,
    max_iter: usize,
) -> (f64, [f64; 2]) {
    let mut simplex = [
        x0,
        [x0[0] + scale, x0[1]],
        [x0[0], x0[1] + scale],
    ];
    let mut vals = simplex.map(|x| f(x));
    let lin = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|i| simplex[i]);
        vals = idx.map(|i| vals[i]);
        let spread = (simplex[1][0] - simplex[0][0]).abs().max((simplex[1][1] - simplex[0][1]).abs())
            .max((simplex[2][0] - simplex[0][0]).abs().max((simplex[2][1] - simplex[0][1]).abs()));
        if vals[2] - vals[0] < ftol && spread < 1e-10 {
            break;
        }
        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let xr = lin(simplex[2], centroid, 2.0);
        let fr = f(xr);
        if fr < vals[0] {
            let xe = lin(simplex[2], centroid, 3.0);
            let fe = f(xe);
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
        } else {
            let xc = if fr < vals[2] {
                lin(simplex[2], centroid, 1.5)
            } else {
                lin(simplex[2], centroid, 0.5)
            };
            let fc = f(xc);
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lin(simplex[0], simplex[i], 0.5);
                    vals[i] = f(simplex[i]);
                }
            }
        }
    }
    let (i, v) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    (v, simplex[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{assemble_bloch, check_bdg_equation, check_phs, Parity};
    use std::f64::consts::PI;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-14
    }

    #[test]
    fn names_round_trip() {
        for name in MODEL_NAMES {
            let kind: PairingKind = name.parse().unwrap();
            assert_eq!(kind.to_string(), name);
        }
        assert!("d+id".parse::<PairingKind>().is_err());
    }

    #[test]
    fn s_wave_is_single_on_site_singlet() {
        let d = build_pairing(PairingKind::S, 1.0, None).unwrap();
        assert_eq!(d.fiber().r, 2);
        assert_eq!(d.terms().len(), 1);
        assert_eq!(d.block([0, 0]).unwrap(), &singlet());
    }

    #[test]
    fn pip_blocks() {
        let d = build_pairing(PairingKind::Pip(Sign::Plus), 0.3, None).unwrap();
        assert_eq!(d.fiber().r, 1);
        let b = |j: [i32; 2]| d.block(j).unwrap()[(0, 0)];
        assert!(close(b([1, 0]), real(0.3)));
        assert!(close(b([-1, 0]), real(-0.3)));
        assert!(close(b([0, 1]), c(0.0, 0.3)));
        assert!(close(b([0, -1]), c(0.0, -0.3)));
    }

    #[test]
    fn laplacian_bloch_vanishes_at_quarter_point() {
        let h = build_one_electron(2).unwrap();
        assert_eq!(h.terms().len(), 4);
        let m = assemble_bloch(&h, [PI / 2.0, PI / 2.0]).unwrap().matrix;
        assert!(m.iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn every_pairing_solves_the_bdg_equation() {
        for kind in PairingKind::all() {
            let d = build_pairing(kind, 0.7, None).unwrap();
            assert_eq!(check_bdg_equation(&d), 0.0, "{kind}");
            let h = build_model(kind, &ModelParams::new(0.7, 0.4)).unwrap();
            assert_eq!(check_phs(&h, Parity::Even).unwrap().max_violation, 0.0, "{kind}");
        }
    }

    #[test]
    fn orbital_parity_under_shift_reversal() {
        // Reversal S_j <-> S_j* maps displacement j to -j.
        for kind in PairingKind::all() {
            let d = build_pairing(kind, 1.0, None).unwrap();
            let odd = matches!(
                kind,
                PairingKind::Px | PairingKind::Pip(_) | PairingKind::PSpinful | PairingKind::PTriplet(_)
            );
            let sign = if odd { -1.0 } else { 1.0 };
            for (j, b) in d.terms() {
                let m = d.block([-j[0], -j[1]]).unwrap();
                assert!(crate::linalg::hs_norm(&(m - b * real(sign))) < 1e-15, "{kind}");
            }
        }
    }

    #[test]
    fn pip_bloch_matches_display() {
        let p = ModelParams::new(0.3, -0.5);
        for s in [Sign::Plus, Sign::Minus] {
            let h = build_model(PairingKind::Pip(s), &p).unwrap();
            for k in [[0.3, -1.2], [2.0, 0.7], [-PI, 0.1]] {
                let (c1, c2, s1, s2) = (k[0].cos(), k[1].cos(), k[0].sin(), k[1].sin());
                let d = 0.3;
                let e = c1 + c2 - p.mu / 2.0;
                let sg = s.value();
                let want = CMat::from_row_slice(
                    2,
                    2,
                    &[real(e), c(-sg * d * s2, d * s1), c(-sg * d * s2, -d * s1), real(-e)],
                );
                let got = h.bloch_unchecked(k);
                assert!(crate::linalg::hs_norm(&(got - want)) < 1e-14);
            }
        }
    }

    #[test]
    fn did_blocks_match_display() {
        let p = ModelParams::new(1.0, 2.0);
        for s in [Sign::Plus, Sign::Minus] {
            let full = build_model(PairingKind::Did(s), &p).unwrap();
            let (a, b) = reduce_su2(&full).unwrap();
            for op in [&a, &b] {
                assert_eq!(check_phs(op, Parity::Odd).unwrap().max_violation, 0.0);
            }
            for k in [[0.3f64, -1.2], [2.0, 0.7]] {
                let (c1, c2, s1, s2) = (k[0].cos(), k[1].cos(), k[0].sin(), k[1].sin());
                let e = c1 + c2 - 1.0;
                let off = c(c1 - c2, -s.value() * s1 * s2);
                let want = CMat::from_row_slice(2, 2, &[real(e), off, off.conj(), real(-e)]);
                assert!(crate::linalg::hs_norm(&(a.bloch_unchecked(k) - &want)) < 1e-14);
                assert!(crate::linalg::hs_norm(&(b.bloch_unchecked(k) - &want)) < 1e-14);
            }
        }
    }

    #[test]
    fn reduce_rejects_spin_mixing() {
        let h = build_model(PairingKind::PTriplet(Sign::Plus), &ModelParams::new(1.0, 0.0)).unwrap();
        assert!(reduce_su2(&h).is_err());
    }

    #[test]
    fn zero_pairing_gives_diagonal_blocks() {
        let p = ModelParams::new(0.0, 0.8);
        let (a, _) = reduce_su2(&build_model(PairingKind::Did(Sign::Plus), &p).unwrap()).unwrap();
        let k = [0.4f64, 1.1];
        let e = k[0].cos() + k[1].cos() - 0.4;
        let want = CMat::from_row_slice(2, 2, &[real(e), real(0.0), real(0.0), real(-e)]);
        assert!(crate::linalg::hs_norm(&(a.bloch_unchecked(k) - want)) < 1e-15);
    }

    #[test]
    fn band_examples() {
        let p = ModelParams::new(0.3, -0.5);
        let b = example_bands(Example::PIp(Sign::Plus), &p, [0.0, PI]);
        assert!((b.e_plus - 0.25).abs() < 1e-15);
        let b = example_bands(Example::PIp(Sign::Plus), &ModelParams::new(0.9, 1.3), [0.0, 0.0]);
        assert!((b.e_plus - (2.0 - 0.65)).abs() < 1e-15);
        let b = example_bands(Example::DId(Sign::Plus), &ModelParams::new(1.0, 2.0), [0.0, 0.0]);
        assert!((b.e_plus - 1.0).abs() < 1e-15);
        assert_eq!(b.e_minus, -b.e_plus);
    }

    #[test]
    fn pip_gap_examples() {
        let op = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, 0.1)).unwrap();
        assert!((central_gap(&op, 64).unwrap() - 0.1).abs() < 1e-8);
        let op = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, 0.0)).unwrap();
        assert!(central_gap(&op, 64).unwrap() < 1e-8);
        assert!(central_gap(&op, 32).is_err());
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: [f64; 2]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 1.1).powi(2) + 0.5;
        let (v, x) = nelder_mead(&f, [0.0, 0.0], 0.1, 1e-14, 5000);
        assert!((v - 0.5).abs() < 1e-12);
        assert!((x[0] - 0.3).abs() < 1e-5 && (x[1] + 1.1).abs() < 1e-5);
    }
}
