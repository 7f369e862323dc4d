//! Green matrices `G^z(n, m) = π_n (z - H)^{-1} π_m*` on the torus and the
//! localization diagnostics built from them: fractional moments, clean
//! Combes-Thomas decay, the finite-rank resolvent update, Fermi projection
//! decay, and an energy/disorder phase diagram.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{
    build_random_hamiltonian, realization_seed, sample_realization_translated, DisorderSpec,
    DisorderTerm,
};
use crate::error::{Error, Result};
use crate::linalg::{self, c, hermitian_eigen, hs_norm, op_norm, real, CMat, C64};
use crate::models::nelder_mead;
use crate::operator::{assemble_finite_volume, Boundary, FiniteVolumeOperator, TightBindingOperator};
use crate::spectral::realize;
use crate::table::Table;

/// Largest accepted normwise backward error of a resolvent solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Columns `π_m*` of the fiber at site `m`.
fn site_columns(h: &FiniteVolumeOperator, m: [usize; 2]) -> CMat {
    let d = h.fiber.dim();
    let mut b = CMat::zeros(h.dim(), d);
    let r0 = h.row(m, 0);
    for a in 0..d {
        b[(r0 + a, a)] = real(1.0);
    }
    b
}

/// Normwise backward error `||(z - H) X - B|| / (||B|| + (|z| + ||H||_∞) ||X||)`.
pub fn backward_error(h: &FiniteVolumeOperator, z: C64, x: &CMat, b: &CMat) -> f64 {
    let hx = h.matrix.mul_dense(x);
    let r = x * z - hx - b;
    let h_inf = h
        .matrix
        .rows
        .iter()
        .map(|row| row.iter().map(|(_, v)| v.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    hs_norm(&r) / (hs_norm(b) + (z.norm() + h_inf) * hs_norm(x))
}

/// `(z - H)^{-1} B`, with the residual of every solve checked.
pub fn resolvent_solve(h: &FiniteVolumeOperator, z: C64, b: &CMat) -> Result<CMat> {
    let x = h.shifted_solver(z)?.solve(b)?;
    let err = backward_error(h, z, &x, b);
    if !(err <= RESIDUAL_TOL) {
        return Err(Error::Singular(format!(
            "resolvent at z = {z} has backward error {err:.3e}"
        )));
    }
    Ok(x)
}

/// Block column `(z - H)^{-1} π_m*`, shape `dim x fiberdim`.
pub fn green_column(h: &FiniteVolumeOperator, z: C64, m: [usize; 2]) -> Result<CMat> {
    resolvent_solve(h, z, &site_columns(h, m))
}

fn block_of(h: &FiniteVolumeOperator, col: &CMat, n: [usize; 2]) -> CMat {
    let d = h.fiber.dim();
    col.rows(h.row(n, 0), d).into_owned()
}

pub fn green_matrix(
    h: &FiniteVolumeOperator,
    z: C64,
    n: [usize; 2],
    m: [usize; 2],
) -> Result<CMat> {
    Ok(block_of(h, &green_column(h, z, m)?, n))
}

/// `G^z(n, m)` for every `m`, from one solve at `conj(z)` and the identity
/// `G^z(n, m) = G^{conj z}(m, n)*`. Indexed by site index.
pub fn green_row(h: &FiniteVolumeOperator, z: C64, n: [usize; 2]) -> Result<Vec<CMat>> {
    let col = green_column(h, z.conj(), n)?;
    Ok((0..h.sites())
        .map(|i| block_of(h, &col, h.site_of(i)).adjoint())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockNorm {
    HilbertSchmidt,
    Operator,
}

impl BlockNorm {
    fn of(self, m: &CMat) -> f64 {
        match self {
            BlockNorm::HilbertSchmidt => hs_norm(m),
            BlockNorm::Operator => op_norm(m),
        }
    }
}

/// `||G^z(n0, n0 + d e1)||` for `d = 0..=max_dist`.
pub fn axis_profile(
    h: &FiniteVolumeOperator,
    z: C64,
    n0: [usize; 2],
    max_dist: usize,
    norm: BlockNorm,
) -> Result<Vec<f64>> {
    let row = green_row(h, z, n0)?;
    Ok((0..=max_dist)
        .map(|d| {
            let m = [(n0[0] + d) % h.l[0], n0[1]];
            norm.of(&row[h.site_index(m)])
        })
        .collect())
}

/// Least-squares fit `log y = log A - rate * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub rate: f64,
    pub rate_err: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `y ~ A e^{-rate x}`. `sigma` are the standard errors of `y`; the
/// reported `rate_err` is the larger of the regression error and the
/// propagated Monte-Carlo error.
pub fn fit_exponential(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<ExpFit> {
    let n = x.len();
    if n < 3 || y.len() != n || sigma.len() != n {
        return Err(Error::InvalidParameter(format!(
            "exponential fit needs at least 3 points, got {n}"
        )));
    }
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("exponential fit needs positive data".into()));
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = ly.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&ly).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let syy: f64 = ly.iter().map(|yi| (yi - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(&ly)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    let reg_err = (ssr / (nf - 2.0) / sxx).sqrt();
    // Propagated error of the OLS slope: Var = Σ (x - x̄)² σ_log² / Sxx².
    let mc_err = x
        .iter()
        .zip(sigma.iter().zip(y))
        .map(|(xi, (s, yi))| ((xi - mx) * s / yi).powi(2))
        .sum::<f64>()
        .sqrt()
        / sxx;
    Ok(ExpFit {
        rate: -slope,
        rate_err: reg_err.max(mc_err),
        amplitude: intercept.exp(),
        r_squared,
        points: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub distances: Vec<usize>,
    /// Realization mean of `||G(n0, n0 + d e1)||_HS^s`.
    pub tau: Vec<f64>,
    pub tau_stderr: Vec<f64>,
    /// Distances entering the fit.
    pub fit_distances: Vec<usize>,
    /// Decay rate of `tau` per lattice site.
    pub rate: f64,
    pub rate_err: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub n_realizations: usize,
}

impl DecayEstimate {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["d", "tau", "stderr", "fitted"]);
        for (i, d) in self.distances.iter().enumerate() {
            let used = if self.fit_distances.contains(d) { 1.0 } else { 0.0 };
            t.push(vec![*d as f64, self.tau[i], self.tau_stderr[i], used]);
        }
        t
    }

    /// Positive rate at two standard errors with a good fit.
    pub fn is_localized(&self, min_r_squared: f64) -> bool {
        self.rate > 2.0 * self.rate_err && self.r_squared > min_r_squared
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub z: C64,
    pub s: f64,
    pub l: usize,
    pub realizations: usize,
    pub max_dist: usize,
    pub seed: u64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn disorder_terms(
    model: &TightBindingOperator,
    spec: Option<&DisorderSpec>,
) -> Result<Option<(Vec<DisorderTerm>, f64)>> {
    match spec {
        Some(s) if s.lambda > 0.0 => Ok(Some((s.resolve(model.fiber().r)?, s.lambda))),
        _ => Ok(None),
    }
}

fn total_range(model: &TightBindingOperator, terms: Option<&[DisorderTerm]>) -> usize {
    let dr = terms
        .map(|ts| {
            ts.iter()
                .map(|t| t.j[0].unsigned_abs().max(t.j[1].unsigned_abs()) as usize)
                .max()
                .unwrap_or(0)
        })
        .unwrap_or(0);
    model.range().max(dr)
}

/// Per-realization `||G(n0 + t, n0 + t + d e1)||_HS^s`, `d = 0..=max_dist`,
/// with every field translated by `t`. At `λ = 0` there is a single
/// deterministic profile.
pub fn moment_profiles(
    model: &TightBindingOperator,
    spec: Option<&DisorderSpec>,
    cfg: &MomentConfig,
    shift: [usize; 2],
) -> Result<Vec<Vec<f64>>> {
    if !(cfg.s > 0.0 && cfg.s < 1.0) {
        return Err(Error::InvalidParameter("fractional exponent must lie in (0, 1)".into()));
    }
    let terms = disorder_terms(model, spec)?;
    let range = total_range(model, terms.as_ref().map(|t| t.0.as_slice()));
    if cfg.max_dist + range > cfg.l / 2 {
        return Err(Error::InvalidParameter(format!(
            "max_dist {} exceeds L/2 - R = {}",
            cfg.max_dist,
            (cfg.l / 2).saturating_sub(range)
        )));
    }
    let l = [cfg.l, cfg.l];
    let n0 = [(cfg.l / 2 + shift[0]) % cfg.l, (cfg.l / 2 + shift[1]) % cfg.l];
    let profile = |h: &FiniteVolumeOperator| -> Result<Vec<f64>> {
        Ok(axis_profile(h, cfg.z, n0, cfg.max_dist, BlockNorm::HilbertSchmidt)?
            .into_iter()
            .map(|g| g.powf(cfg.s))
            .collect())
    };
    match terms {
        None => {
            let h = assemble_finite_volume(model, l, Boundary::Periodic)?;
            Ok(vec![profile(&h)?])
        }
        Some((terms, lambda)) => {
            if cfg.realizations < 8 {
                return Err(Error::InvalidParameter(
                    "fractional moments need at least 8 realizations".into(),
                ));
            }
            let t = [shift[0] as i64, shift[1] as i64];
            (0..cfg.realizations as u64)
                .into_par_iter()
                .map(|i| {
                    let field = sample_realization_translated(
                        &terms,
                        l,
                        realization_seed(cfg.seed, i),
                        t,
                    )?;
                    profile(&build_random_hamiltonian(model, &terms, lambda, &field)?)
                })
                .collect()
        }
    }
}

/// Distances `d >= 1` at which the clean profile on `L` differs from the one
/// on `2L` by less than 1%.
pub fn uncontaminated_distances(
    model: &TightBindingOperator,
    z: C64,
    l: usize,
    max_dist: usize,
    norm: BlockNorm,
) -> Result<Vec<usize>> {
    let small = assemble_finite_volume(model, [l, l], Boundary::Periodic)?;
    let big = assemble_finite_volume(model, [2 * l, 2 * l], Boundary::Periodic)?;
    let a = axis_profile(&small, z, [l / 2, l / 2], max_dist, norm)?;
    let b = axis_profile(&big, z, [l, l], max_dist, norm)?;
    Ok((1..=max_dist)
        .filter(|&d| (a[d] - b[d]).abs() <= 0.01 * b[d])
        .collect())
}

/// Mean fractional moment `E ||G^z(n0, n0 + d e1)||_HS^s` and its decay fit.
pub fn fractional_moment_scan(
    model: &TightBindingOperator,
    spec: Option<&DisorderSpec>,
    cfg: &MomentConfig,
) -> Result<DecayEstimate> {
    let profiles = moment_profiles(model, spec, cfg, [0, 0])?;
    let clean_ok =
        uncontaminated_distances(model, cfg.z, cfg.l, cfg.max_dist, BlockNorm::HilbertSchmidt)?;
    decay_from_profiles(&profiles, &clean_ok)
}

/// Averages the profiles and fits over `allowed` distances where the mean
/// exceeds ten standard errors.
pub fn decay_from_profiles(profiles: &[Vec<f64>], allowed: &[usize]) -> Result<DecayEstimate> {
    let len = profiles[0].len();
    let (tau, tau_stderr): (Vec<f64>, Vec<f64>) = (0..len)
        .map(|d| mean_stderr(&profiles.iter().map(|p| p[d]).collect::<Vec<_>>()))
        .unzip();
    let fit_distances: Vec<usize> = allowed
        .iter()
        .copied()
        .filter(|&d| d >= 1 && d < len && tau[d] > 10.0 * tau_stderr[d])
        .collect();
    let x: Vec<f64> = fit_distances.iter().map(|&d| d as f64).collect();
    let y: Vec<f64> = fit_distances.iter().map(|&d| tau[d]).collect();
    let sg: Vec<f64> = fit_distances.iter().map(|&d| tau_stderr[d]).collect();
    let fit = fit_exponential(&x, &y, &sg)?;
    Ok(DecayEstimate {
        distances: (0..len).collect(),
        tau,
        tau_stderr,
        fit_distances,
        rate: fit.rate,
        rate_err: fit.rate_err,
        amplitude: fit.amplitude,
        r_squared: fit.r_squared,
        n_realizations: profiles.len(),
    })
}

/// `dist(z, σ(H))` from the Bloch bands: coarse grid plus local refinement.
pub fn spectrum_distance(model: &TightBindingOperator, z: C64, grid_n: usize) -> Result<f64> {
    model.check_closure()?;
    let f = |k: [f64; 2]| {
        linalg::small_hermitian_eigen(&model.bloch_unchecked(k))
            .0
            .into_iter()
            .map(|e| (z - e).norm())
            .fold(f64::INFINITY, f64::min)
    };
    let step = 2.0 * std::f64::consts::PI / grid_n as f64;
    let mut samples = Vec::with_capacity(grid_n * grid_n);
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
        best = best.min(nelder_mead(&f, k, step, 1e-12, 2000).0);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombesThomasPoint {
    pub z: C64,
    /// Distance of `z` from the clean spectrum.
    pub distance: f64,
    pub rate: f64,
    pub rate_err: f64,
    pub r_squared: f64,
    /// `||G^z(n, n)||` in operator norm.
    pub diagonal_norm: f64,
}

/// Tail mass `T(d) = sum_{d' >= d} ||G(n0, n0 + d' e1)||^2` up to half the
/// torus. It decays like `e^{-2 rate d}` but, unlike the pointwise norm, without
/// the Fermi-momentum oscillation.
pub fn tail_mass(profile: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = profile
        .iter()
        .rev()
        .map(|p| {
            acc += p * p;
            acc
        })
        .collect();
    out.reverse();
    out
}

/// Exponential decay rate of the clean resolvent along `e1` for each `z` off
/// the spectrum, on an `l[0] x l[1]` torus. The rate is half the log-slope of
/// the tail mass over `fit_range`.
pub fn combes_thomas_probe(
    model: &TightBindingOperator,
    z_list: &[C64],
    l: [usize; 2],
    fit_range: (usize, usize),
) -> Result<Vec<CombesThomasPoint>> {
    let (d_lo, d_hi) = fit_range;
    if d_lo == 0 || d_hi < d_lo + 2 || 2 * d_hi > l[0] / 2 {
        return Err(Error::InvalidParameter(format!(
            "fit range {d_lo}..={d_hi} needs 1 <= d_lo, d_lo + 2 <= d_hi <= L1/4 (L1 = {})",
            l[0]
        )));
    }
    let h = assemble_finite_volume(model, l, Boundary::Periodic)?;
    z_list
        .iter()
        .map(|&z| {
            let distance = spectrum_distance(model, z, 256)?;
            if distance < 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "z = {z} lies in the spectrum"
                )));
            }
            let n0 = [0, 0];
            let prof = axis_profile(&h, z, n0, l[0] / 2, BlockNorm::Operator)?;
            let tail = tail_mass(&prof);
            let x: Vec<f64> = (d_lo..=d_hi).map(|d| d as f64).collect();
            let y: Vec<f64> = (d_lo..=d_hi).map(|d| tail[d]).collect();
            let fit = fit_exponential(&x, &y, &vec![0.0; x.len()])?;
            Ok(CombesThomasPoint {
                z,
                distance,
                rate: fit.rate / 2.0,
                rate_err: fit.rate_err / 2.0,
                r_squared: fit.r_squared,
                diagonal_norm: prof[0],
            })
        })
        .collect()
}

/// Local Hermitian perturbation `K = π*_{l+j} W π_l + π*_l W* π_{l+j}`
/// (`W + W*` on one site when `j = 0`), as a sparse matrix.
pub fn local_perturbation(
    h: &FiniteVolumeOperator,
    w: &CMat,
    site: [usize; 2],
    j: [i32; 2],
) -> Result<linalg::SparseRows> {
    let d = h.fiber.dim();
    if w.shape() != (d, d) {
        return Err(Error::FiberMismatch(format!(
            "perturbation is {}x{}, fiber is {d}",
            w.nrows(),
            w.ncols()
        )));
    }
    let target = h
        .translate(site, j)
        .ok_or_else(|| Error::InvalidParameter("perturbation leaves the box".into()))?;
    if target == site && j != [0, 0] {
        return Err(Error::TorusTooSmall {
            l1: h.l[0],
            l2: h.l[1],
            range: j[0].unsigned_abs().max(j[1].unsigned_abs()) as usize,
        });
    }
    let mut k = linalg::SparseRows::zeros(h.dim());
    let (t0, s0) = (h.row(target, 0), h.row(site, 0));
    for a in 0..d {
        for b in 0..d {
            k.add(t0 + a, s0 + b, w[(a, b)]);
            k.add(s0 + b, t0 + a, w[(a, b)].conj());
        }
    }
    Ok(k)
}

/// Resolvent of `H̃ + λ v K` from the resolvent of `H̃` via the finite-rank
/// update `R + R π* T π R`, `T = ((λ v Λ)^{-1} - π R π*)^{-1}`, where `π` is
/// the partial isometry onto `Ran K` and `Λ = π K π*`.
///
/// Returns the full dense resolvent together with the rank of `K`.
pub fn tmatrix_update(
    h_tilde: &FiniteVolumeOperator,
    lambda: f64,
    v: f64,
    w: &CMat,
    site: [usize; 2],
    j: [i32; 2],
    z: C64,
) -> Result<(CMat, usize)> {
    let mut zh = -h_tilde.dense();
    for i in 0..zh.nrows() {
        zh[(i, i)] += z;
    }
    let resolvent = zh
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("z - H at z = {z}")))?;
    let k = local_perturbation(h_tilde, w, site, j)?;
    if v == 0.0 || lambda == 0.0 {
        return Ok((resolvent, 0));
    }
    // K lives on the fiber rows of at most two sites.
    let target = h_tilde.translate(site, j).expect("checked above");
    let d = h_tilde.fiber.dim();
    let mut support: Vec<usize> = (0..d).map(|a| h_tilde.row(site, a)).collect();
    if target != site {
        support.extend((0..d).map(|a| h_tilde.row(target, a)));
    }
    let ks = CMat::from_fn(support.len(), support.len(), |p, q| k.get(support[p], support[q]));
    let (vals, vecs) = hermitian_eigen(&ks)?;
    let scale = vals.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i].abs() > 1e-12 * scale)
        .collect();
    let rank = keep.len();
    if rank == 0 {
        return Ok((resolvent, 0));
    }
    // π* has columns the kept eigenvectors embedded in the full space.
    let n = h_tilde.dim();
    let mut pi_star = CMat::zeros(n, rank);
    for (c_idx, &e) in keep.iter().enumerate() {
        for (p, &row) in support.iter().enumerate() {
            pi_star[(row, c_idx)] = vecs[(p, e)];
        }
    }
    let pi = pi_star.adjoint();
    let lam_inv = CMat::from_fn(rank, rank, |a, b| {
        if a == b {
            real(1.0 / (lambda * v * vals[keep[a]]))
        } else {
            c(0.0, 0.0)
        }
    });
    let r_pi_star = &resolvent * &pi_star;
    let pi_r = &pi * &resolvent;
    let t = (lam_inv - &pi * &r_pi_star)
        .try_inverse()
        .ok_or_else(|| Error::Singular("T-matrix inversion".into()))?;
    Ok((&resolvent + r_pi_star * t * pi_r, rank))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermiDecay {
    pub distances: Vec<usize>,
    /// Realization mean of `||⟨n0| P |n0 + d e1⟩||_HS`.
    pub mean_norm: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Largest shift applied to `E` to keep it off the spectrum.
    pub energy_shift: f64,
    /// Largest `||P² - P||_F` seen.
    pub idempotency_defect: f64,
    /// Slope of `-log ||P||` against `log d`.
    pub power_exponent: f64,
    /// Rate of an exponential fit over the same window.
    pub exp_rate: f64,
}

impl FermiDecay {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["d", "norm", "stderr"]);
        for (i, d) in self.distances.iter().enumerate() {
            t.push(vec![*d as f64, self.mean_norm[i], self.stderr[i]]);
        }
        t
    }
}

/// Off-diagonal decay of the Fermi projection `χ(H <= E)`.
pub fn fermi_projection_decay(
    model: &TightBindingOperator,
    spec: Option<&DisorderSpec>,
    e: f64,
    l: usize,
    realizations: usize,
    seed: u64,
) -> Result<FermiDecay> {
    let disordered = spec.is_some_and(|s| s.lambda > 0.0);
    let count = if disordered { realizations.max(1) } else { 1 };
    let max_dist = l / 2;
    let per: Vec<(Vec<f64>, f64, f64)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let h = realize(model, spec, [l, l], realization_seed(seed, i))?;
            let (vals, vecs) = h.eigen()?;
            let mut e_used = e;
            if let Some(pos) = vals.iter().position(|x| (x - e).abs() < 1e-8) {
                let below = if pos > 0 { vals[pos - 1] } else { vals[pos] - 1.0 };
                let above = vals
                    .iter()
                    .copied()
                    .find(|x| *x > vals[pos] + 1e-8)
                    .unwrap_or(vals[pos] + 1.0);
                e_used = if e - below < above - e {
                    0.5 * (below + vals[pos])
                } else {
                    0.5 * (vals[pos] + above)
                };
            }
            let occ: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] <= e_used).collect();
            let v = CMat::from_fn(vecs.nrows(), occ.len(), |r, k| vecs[(r, occ[k])]);
            let p = &v * v.adjoint();
            let idem = hs_norm(&(&p * &p - &p));
            let n0 = [l / 2, l / 2];
            let d = h.fiber.dim();
            let norms = (0..=max_dist)
                .map(|dist| {
                    let m = [(n0[0] + dist) % l, n0[1]];
                    hs_norm(&p.view((h.row(n0, 0), h.row(m, 0)), (d, d)).into_owned())
                })
                .collect();
            Ok((norms, (e_used - e).abs(), idem))
        })
        .collect::<Result<_>>()?;
    let (mean_norm, stderr): (Vec<f64>, Vec<f64>) = (0..=max_dist)
        .map(|d| mean_stderr(&per.iter().map(|p| p.0[d]).collect::<Vec<_>>()))
        .unzip();
    let window: Vec<usize> = (1..=max_dist / 2).filter(|&d| mean_norm[d] > 0.0).collect();
    let (power_exponent, exp_rate) = if window.len() >= 3 {
        let ln_d: Vec<f64> = window.iter().map(|&d| (d as f64).ln()).collect();
        let x: Vec<f64> = window.iter().map(|&d| d as f64).collect();
        let y: Vec<f64> = window.iter().map(|&d| mean_norm[d]).collect();
        let zeros = vec![0.0; x.len()];
        (
            fit_exponential(&ln_d, &y, &zeros)?.rate,
            fit_exponential(&x, &y, &zeros)?.rate,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(FermiDecay {
        distances: (0..=max_dist).collect(),
        mean_norm,
        stderr,
        energy_shift: per.iter().map(|p| p.1).fold(0.0, f64::max),
        idempotency_defect: per.iter().map(|p| p.2).fold(0.0, f64::max),
        power_exponent,
        exp_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Localized,
    NoVerdict,
    OutsideSpectrum,
}

impl Verdict {
    pub fn code(self) -> f64 {
        match self {
            Verdict::Localized => 1.0,
            Verdict::NoVerdict => 0.0,
            Verdict::OutsideSpectrum => -1.0,
        }
    }
}

/// Realization statistics of the spectrum at one disorder strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEdges {
    pub lambda: f64,
    /// Mean and standard deviation over realizations of `max |E|`.
    pub outer_mean: f64,
    pub outer_sd: f64,
    /// Mean and standard deviation of `min |E|`.
    pub inner_mean: f64,
    pub inner_sd: f64,
    /// Smallest `min |E|` over all realizations.
    pub inner_min: f64,
}

impl SpectralEdges {
    /// `|E|` certainly outside the realization spectra (3σ margins).
    pub fn outside(&self, e: f64) -> bool {
        e.abs() > self.outer_mean + 3.0 * self.outer_sd
            || e.abs() < self.inner_mean - 3.0 * self.inner_sd
    }
}

fn sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Inner and outer spectral edges at coupling `spec.lambda`.
pub fn spectral_edges(
    model: &TightBindingOperator,
    spec: &DisorderSpec,
    l: usize,
    realizations: usize,
    seed: u64,
) -> Result<SpectralEdges> {
    let count = if spec.lambda > 0.0 { realizations.max(1) } else { 1 };
    let per: Vec<(f64, f64)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let h = realize(model, Some(spec), [l, l], realization_seed(seed, i))?;
            let e = h.eigenvalues()?;
            let outer = e.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let inner = e.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
            Ok((outer, inner))
        })
        .collect::<Result<_>>()?;
    let (outer_mean, outer_sd) = sd(&per.iter().map(|p| p.0).collect::<Vec<_>>());
    let (inner_mean, inner_sd) = sd(&per.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(SpectralEdges {
        lambda: spec.lambda,
        outer_mean,
        outer_sd,
        inner_mean,
        inner_sd,
        inner_min: per.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub lambda: f64,
    pub e: f64,
    pub verdict: Verdict,
    pub rate: f64,
    pub rate_err: f64,
    pub r_squared: f64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub lambda_grid: Vec<f64>,
    pub e_grid: Vec<f64>,
    /// Row-major in `(lambda, E)`.
    pub cells: Vec<PhaseCell>,
    pub edges: Vec<SpectralEdges>,
}

impl PhaseDiagram {
    pub fn cell(&self, il: usize, ie: usize) -> &PhaseCell {
        &self.cells[il * self.e_grid.len() + ie]
    }

    /// Columns `lambda, E, verdict, rate, rate_err, r2, n_realizations`;
    /// verdict is 1 localized, 0 no verdict, -1 outside the spectrum.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["lambda", "E", "verdict", "rate", "rate_err", "r2", "n_realizations"]);
        for c in &self.cells {
            t.push(vec![
                c.lambda,
                c.e,
                c.verdict.code(),
                c.rate,
                c.rate_err,
                c.r_squared,
                c.n_realizations as f64,
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub s: f64,
    pub epsilon: f64,
    pub l: usize,
    pub realizations: usize,
    pub max_dist: usize,
    pub seed: u64,
}

/// Classifies each `(λ, E)` cell: outside the spectrum by the 3σ edges,
/// localized when the fractional moments decay at 2σ with `r² > 0.8`,
/// otherwise no verdict.
pub fn localization_phase_diagram(
    model: &TightBindingOperator,
    base: &DisorderSpec,
    lambda_grid: &[f64],
    e_grid: &[f64],
    cfg: &PhaseConfig,
) -> Result<PhaseDiagram> {
    let mut cells = Vec::new();
    let mut edges = Vec::new();
    for &lambda in lambda_grid {
        let spec = DisorderSpec {
            lambda,
            terms: base.terms.clone(),
        };
        let ed = spectral_edges(model, &spec, cfg.l, cfg.realizations, cfg.seed)?;
        for &e in e_grid {
            let mut cell = PhaseCell {
                lambda,
                e,
                verdict: Verdict::OutsideSpectrum,
                rate: f64::NAN,
                rate_err: f64::NAN,
                r_squared: f64::NAN,
                n_realizations: 0,
            };
            if !ed.outside(e) {
                let mc = MomentConfig {
                    z: c(e, cfg.epsilon),
                    s: cfg.s,
                    l: cfg.l,
                    realizations: cfg.realizations,
                    max_dist: cfg.max_dist,
                    seed: cfg.seed,
                };
                cell.verdict = Verdict::NoVerdict;
                if let Ok(est) = fractional_moment_scan(model, Some(&spec), &mc) {
                    cell.rate = est.rate;
                    cell.rate_err = est.rate_err;
                    cell.r_squared = est.r_squared;
                    cell.n_realizations = est.n_realizations;
                    if est.is_localized(0.8) {
                        cell.verdict = Verdict::Localized;
                    }
                }
            }
            cells.push(cell);
        }
        edges.push(ed);
    }
    Ok(PhaseDiagram {
        lambda_grid: lambda_grid.to_vec(),
        e_grid: e_grid.to_vec(),
        cells,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::Distribution;
    use crate::models::{build_model, ModelParams, PairingKind, Sign};
    use crate::operator::FiberShape;

    fn pip() -> TightBindingOperator {
        build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, -0.5)).unwrap()
    }

    #[test]
    fn zero_operator_resolvent() {
        let h = assemble_finite_volume(
            &TightBindingOperator::zero(FiberShape::new(1, true).unwrap()),
            [4, 4],
            Boundary::Periodic,
        )
        .unwrap();
        let g = green_matrix(&h, c(0.0, 1.0), [1, 2], [1, 2]).unwrap();
        assert_eq!(g, CMat::identity(2, 2) * c(0.0, -1.0));
        let g = green_matrix(&h, c(0.0, 1.0), [1, 2], [3, 0]).unwrap();
        assert_eq!(g, CMat::zeros(2, 2));
    }

    #[test]
    fn adjoint_symmetry_of_green_matrices() {
        let spec = DisorderSpec::potential(0.7, Distribution::default());
        let h = realize(&pip(), Some(&spec), [5, 6], 3).unwrap();
        let z = c(0.2, 0.05);
        let a = green_matrix(&h, z, [1, 4], [3, 0]).unwrap();
        let b = green_matrix(&h, z.conj(), [3, 0], [1, 4]).unwrap();
        assert!(hs_norm(&(a - b.adjoint())) < 1e-12);
    }

    #[test]
    fn green_row_matches_columns() {
        let h = realize(&pip(), None, [6, 6], 0).unwrap();
        let z = c(-0.1, 0.01);
        let row = green_row(&h, z, [2, 3]).unwrap();
        for m in [[2, 3], [5, 1], [0, 0]] {
            let g = green_matrix(&h, z, [2, 3], m).unwrap();
            assert!(hs_norm(&(&g - &row[h.site_index(m)])) < 1e-12);
        }
    }

    #[test]
    fn real_energy_in_spectrum_is_refused() {
        let h = assemble_finite_volume(
            &TightBindingOperator::identity(FiberShape::scalar()),
            [4, 4],
            Boundary::Periodic,
        )
        .unwrap();
        assert!(green_matrix(&h, real(1.0), [0, 0], [0, 0]).is_err());
    }

    #[test]
    fn exponential_fit_recovers_rate() {
        let x: Vec<f64> = (1..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|d| 3.0 * (-0.4 * d).exp()).collect();
        let f = fit_exponential(&x, &y, &vec![0.0; 9]).unwrap();
        assert!((f.rate - 0.4).abs() < 1e-12);
        assert!((f.amplitude - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tmatrix_vanishing_coupling_is_unperturbed() {
        let h = realize(&pip(), None, [4, 4], 0).unwrap();
        let w = crate::disorder::standard_w("W10", 1).unwrap();
        let z = c(0.3, 0.1);
        let (g, rank) = tmatrix_update(&h, 0.4, 0.0, &w, [1, 1], [1, 0], z).unwrap();
        let mut zh = -h.dense();
        for i in 0..zh.nrows() {
            zh[(i, i)] += z;
        }
        assert_eq!(rank, 0);
        assert!(hs_norm(&(g - zh.try_inverse().unwrap())) < 1e-12);
    }

    #[test]
    fn tmatrix_matches_dense_inverse() {
        let h = realize(&pip(), None, [4, 4], 0).unwrap();
        let w = crate::disorder::standard_w("W10", 1).unwrap();
        let z = c(0.3, 0.1);
        let (g, rank) = tmatrix_update(&h, 0.4, 0.8, &w, [1, 1], [1, 0], z).unwrap();
        let k = local_perturbation(&h, &w, [1, 1], [1, 0]).unwrap();
        let mut zh = -(h.dense() + k.to_dense() * real(0.32));
        for i in 0..zh.nrows() {
            zh[(i, i)] += z;
        }
        let want = zh.try_inverse().unwrap();
        assert!(hs_norm(&(&g - &want)) / hs_norm(&want) < 1e-10);
        assert!(rank <= 4);
    }

    #[test]
    fn fermi_projection_of_gapped_model_is_projector() {
        let f = fermi_projection_decay(&pip(), None, 0.0, 12, 1, 0).unwrap();
        assert!(f.idempotency_defect < 1e-10);
        assert_eq!(f.energy_shift, 0.0);
        assert!(f.exp_rate > 0.0);
    }

    #[test]
    fn moment_scan_argument_checks() {
        let cfg = MomentConfig { z: c(0.0, 1e-4), s: 1.2, l: 12, realizations: 8, max_dist: 4, seed: 0 };
        assert!(moment_profiles(&pip(), None, &cfg, [0, 0]).is_err());
        let cfg = MomentConfig { s: 0.3, max_dist: 6, ..cfg };
        assert!(moment_profiles(&pip(), None, &cfg, [0, 0]).is_err());
        let spec = DisorderSpec::potential(0.1, Distribution::default());
        let cfg = MomentConfig { max_dist: 4, realizations: 4, ..cfg };
        assert!(moment_profiles(&pip(), Some(&spec), &cfg, [0, 0]).is_err());
    }
}
