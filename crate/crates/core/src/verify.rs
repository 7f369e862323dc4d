//! The invariant suite: structural identities of the operators, spectral
//! symmetries, disorder covariance, resolvent identities and the agreement of
//! the Chern estimators. Each check reports a pass flag and the measured
//! defect.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chern::{
    self, berry_flux_chern, contracting_subspace, lagrangian_defect, real_space_chern,
    transfer_chern, transfer_matrix, transition_winding, u_matrix, ContourParams,
};
use crate::disorder::{
    build_random_hamiltonian, realization_seed, sample_realization,
    sample_realization_translated, standard_w, Distribution, DisorderSpec, TermSpec, WDoc,
};
use crate::error::{Error, Result};
use crate::green::{
    self, backward_error, combes_thomas_probe, green_column, local_perturbation,
    moment_profiles, tmatrix_update, MomentConfig,
};
use crate::linalg::{c, conj, hs_norm, real, CMat, C64};
use crate::models::{
    build_model, build_pairing, central_gap, example_bands, reduce_su2, Example, ModelParams,
    PairingKind, Sign,
};
use crate::operator::{
    assemble_bloch, assemble_finite_volume, bloch_grid_eigenvalues, check_bdg_equation,
    check_phs, phs_matrix, spectrum_symmetry_check, Boundary, Parity, TightBindingOperator,
};
use crate::spectral::{sample_spectra, signed_count, Ensemble};
use crate::table::Table;

/// Deliberate defects used to confirm that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Flips the sign of the forward hops `j = (1, 0), (0, 1)` of every
    /// pairing operator.
    PairingSign,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairing-sign" => Ok(Fault::PairingSign),
            _ => Err(Error::InvalidParameter(format!("unknown fault '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Seed of the statistical checks. Deterministic checks ignore it.
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 20240601, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Columns `check, passed, detail`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["check", "passed", "detail"]);
        for c in &self.checks {
            t.push_cells(vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]);
        }
        t
    }
}

type CheckFn = fn(&VerifyOptions) -> Result<(bool, String)>;

/// Names and functions of every check, in execution order.
pub fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("hermiticity", hermiticity as CheckFn),
        ("bdg-equation", bdg_equation),
        ("particle-hole", particle_hole),
        ("spectrum-pairing", spectrum_pairing),
        ("fourier-consistency", fourier_consistency),
        ("gap-law", gap_law),
        ("closed-form-bands", closed_form_bands),
        ("su2-odd-phs", su2_odd_phs),
        ("ids-identities", ids_identities),
        ("clean-count", clean_count),
        ("disorder-structure", disorder_structure),
        ("resolvent-residual", resolvent_residual),
        ("tmatrix-oracle", tmatrix_oracle),
        ("moment-covariance", moment_covariance),
        ("moment-epsilon", moment_epsilon),
        ("combes-thomas", combes_thomas),
        ("transfer-geometry", transfer_geometry),
        ("chern-agreement", chern_agreement),
        ("chern-stability", chern_stability),
    ]
}

pub fn run_check(name: &str, f: CheckFn, opts: &VerifyOptions) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f(opts) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every check. `progress` sees each result as it completes.
pub fn run_suite(opts: &VerifyOptions, mut progress: impl FnMut(&Check)) -> VerifyReport {
    let checks = checks()
        .into_iter()
        .map(|(name, f)| {
            let c = run_check(name, f, opts);
            progress(&c);
            c
        })
        .collect();
    VerifyReport { checks }
}

fn base_params() -> ModelParams {
    ModelParams::new(0.3, -0.5)
}

fn catalog() -> Result<Vec<(PairingKind, TightBindingOperator)>> {
    PairingKind::all()
        .into_iter()
        .map(|k| Ok((k, build_model(k, &base_params())?)))
        .collect()
}

fn with_fault(delta: TightBindingOperator, fault: Option<Fault>) -> Result<TightBindingOperator> {
    match fault {
        None => Ok(delta),
        Some(Fault::PairingSign) => TightBindingOperator::from_terms(
            delta.fiber(),
            delta.terms().iter().map(|(j, b)| {
                let flip = *j == [1, 0] || *j == [0, 1];
                (*j, if flip { -b.clone() } else { b.clone() })
            }),
        ),
    }
}

fn hermiticity(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (_, m) in catalog()? {
        for i in 0..8 {
            let k = [0.37 + 0.71 * i as f64, -1.3 + 0.43 * i as f64];
            let b = assemble_bloch(&m, k)?.matrix;
            worst = worst.max(hs_norm(&(&b - b.adjoint())) / hs_norm(&b));
        }
        for bc in [Boundary::Periodic, Boundary::Open] {
            let fv = assemble_finite_volume(&m, [5, 4], bc)?;
            worst = worst.max(fv.hermiticity_defect() / fv.matrix.frobenius());
        }
    }
    Ok((worst <= 1e-12, format!("max relative defect {worst:.3e}")))
}

fn bdg_equation(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for kind in PairingKind::all() {
        let delta = with_fault(build_pairing(kind, 0.3, None)?, opts.fault)?;
        let v = check_bdg_equation(&delta);
        worst = worst.max(v);
        if v != 0.0 {
            bad.push(kind.to_string());
        }
    }
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            "all pairing operators satisfy Δ* = -conj(Δ) exactly".into()
        } else {
            format!("violated by {} (max {worst:.3e})", bad.join(" "))
        },
    ))
}

fn particle_hole(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (_, m) in catalog()? {
        worst = worst.max(check_phs(&m, Parity::Even)?.max_violation);
    }
    for s in [Sign::Plus, Sign::Minus] {
        let (a, b) = reduce_su2(&build_model(PairingKind::Did(s), &ModelParams::new(1.0, 2.0))?)?;
        worst = worst.max(check_phs(&a, Parity::Odd)?.max_violation);
        worst = worst.max(check_phs(&b, Parity::Odd)?.max_violation);
    }
    Ok((worst <= 1e-12, format!("max operator-level defect {worst:.3e}")))
}

fn spectrum_pairing(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let spec = DisorderSpec::potential(0.5, Distribution::default());
    for (_, m) in catalog()? {
        for d in [None, Some(&spec)] {
            let h = crate::spectral::realize(&m, d, [6, 6], opts.seed)?;
            worst = worst.max(spectrum_symmetry_check(&h.eigenvalues()?));
        }
    }
    Ok((worst <= 1e-10, format!("max |e_i + e_(N-1-i)| {worst:.3e}")))
}

fn fourier_consistency(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (_, m) in catalog()? {
        let l = [6, 5];
        let fv = assemble_finite_volume(&m, l, Boundary::Periodic)?.eigenvalues()?;
        let bl = bloch_grid_eigenvalues(&m, l)?;
        let d = fv.iter().zip(&bl).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
    }
    Ok((worst <= 1e-10, format!("max eigenvalue mismatch {worst:.3e}")))
}

fn gap_law(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut ok = true;
    let mut notes = Vec::new();
    let mus: Vec<f64> = (0..20).map(|i| -4.75 + 0.5 * i as f64).collect();
    let pip_gaps: Vec<(f64, f64)> = mus
        .par_iter()
        .map(|&mu| Ok((mu, central_gap(&Example::PIp(Sign::Plus).operator(&ModelParams::new(0.3, mu))?, 64)?)))
        .collect::<Result<_>>()?;
    let pip_viol = pip_gaps.iter().filter(|(mu, g)| *g > mu.abs() + 1e-9).count();
    let did_gaps: Vec<(f64, f64)> = mus
        .par_iter()
        .map(|&mu| Ok((mu, central_gap(&Example::DId(Sign::Plus).operator(&ModelParams::new(1.0, mu))?, 64)?)))
        .collect::<Result<_>>()?;
    let did_viol = did_gaps
        .iter()
        .filter(|(mu, g)| *g > (4.0 - mu.abs()).abs() + 1e-9)
        .count();
    ok &= pip_viol == 0 && did_viol == 0;
    notes.push(format!("bound violations p+ip {pip_viol}, d+id {did_viol}"));
    // d±id stays gapped at μ = 0: p3 = 0 forces c1 c2 <= 0, so p1² + p2²
    // = δ² (c1 c2 - 1)² >= δ². Only |μ| = 4 closes it.
    let mut closed = 0.0_f64;
    for (ex, d, mu) in [
        (Example::PIp(Sign::Plus), 0.3, 0.0),
        (Example::PIp(Sign::Plus), 0.3, 4.0),
        (Example::PIp(Sign::Minus), 0.3, -4.0),
        (Example::DId(Sign::Plus), 1.0, 4.0),
        (Example::DId(Sign::Minus), 1.0, -4.0),
    ] {
        closed = closed.max(central_gap(&ex.operator(&ModelParams::new(d, mu))?, 64)?);
    }
    ok &= closed < 1e-6;
    let did0 = central_gap(&Example::DId(Sign::Plus).operator(&ModelParams::new(1.0, 0.0))?, 64)?;
    notes.push(format!("max gap on the closing set {closed:.3e} (d+id at μ=0: {did0:.4})"));
    let mut lin: f64 = 0.0;
    for mu in [0.02, 0.05, 0.1] {
        let g = central_gap(&Example::PIp(Sign::Plus).operator(&ModelParams::new(0.3, mu))?, 64)?;
        lin = lin.max((g - mu).abs());
    }
    ok &= lin <= 1e-6;
    notes.push(format!("|g - |μ|| for small μ {lin:.3e}"));
    Ok((ok, notes.join("; ")))
}

fn closed_form_bands(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (ex, p) in [
        (Example::PIp(Sign::Plus), ModelParams::new(0.3, -0.5)),
        (Example::PIp(Sign::Minus), ModelParams::new(0.3, 0.7)),
        (Example::DId(Sign::Plus), ModelParams::new(1.0, 2.0)),
        (Example::DId(Sign::Minus), ModelParams::new(0.6, -1.0)),
    ] {
        let op = ex.operator(&p)?;
        for i1 in 0..32 {
            for i2 in 0..32 {
                let k = [2.0 * PI * i1 as f64 / 32.0, 2.0 * PI * i2 as f64 / 32.0];
                let e = assemble_bloch(&op, k)?.eigenvalues();
                let bp = example_bands(ex, &p, k);
                worst = worst.max((e[0] - bp.e_minus).abs()).max((e[1] - bp.e_plus).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.3e}")))
}

fn su2_odd_phs(_: &VerifyOptions) -> Result<(bool, String)> {
    let u = phs_matrix(Parity::Odd, 1);
    let mut worst: f64 = 0.0;
    for s in [Sign::Plus, Sign::Minus] {
        let (a, b) = reduce_su2(&build_model(PairingKind::Did(s), &ModelParams::new(1.0, 2.0))?)?;
        for h in [a, b] {
            for i in 0..16 {
                let k = [-PI + 0.41 * i as f64, 0.9 - 0.37 * i as f64];
                let hk = h.bloch_unchecked(k);
                let hm = h.bloch_unchecked([-k[0], -k[1]]);
                worst = worst.max(hs_norm(&(u.adjoint() * conj(&hm) * &u + &hk)));
            }
        }
    }
    Ok((worst <= 1e-12, format!("max Bloch-level defect {worst:.3e}")))
}

fn ids_identities(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let spec = DisorderSpec::potential(0.1, Distribution::default());
    let ens = Ensemble { l: [16, 16], realizations: 32, seed: opts.seed };
    let s = sample_spectra(&model, Some(&spec), &ens, true)?;
    let (sym, sq) = ids_deviations(&s)?;
    Ok((
        sym <= 3.0 && sq <= 3.0,
        format!("max |N(E)+N(-E)|/σ {sym:.3}, max |N(E)-N2(E²)/2|/σ {sq:.3}"),
    ))
}

/// The nine energies of the IDS tests.
pub fn ids_energies() -> Vec<f64> {
    vec![-1.6, -1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2, 1.6]
}

/// Largest standardized deviations of `N(E) + N(-E)` and `N(E) - ½ N⁽²⁾(E²)`
/// over `ids_energies`. Realization-level differences give the standard error.
pub fn ids_deviations(s: &crate::spectral::Spectra) -> Result<(f64, f64)> {
    let h2 = s
        .h2
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("squared spectra missing".into()))?;
    let vol = s.volume as f64;
    let signed = |eigs: &[f64], e: f64| {
        let n = signed_count(eigs, e) as f64 / vol;
        if e < 0.0 {
            -n
        } else {
            n
        }
    };
    let stat = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, (v / n).sqrt())
    };
    let z = |m: f64, se: f64| {
        if m == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            m.abs() / se
        }
    };
    let mut sym: f64 = 0.0;
    let mut sq: f64 = 0.0;
    for e in ids_energies() {
        let a: Vec<f64> = s.h.iter().map(|x| signed(x, e) + signed(x, -e)).collect();
        let (m, se) = stat(&a);
        sym = sym.max(z(m, se));
        let b: Vec<f64> = s
            .h
            .iter()
            .zip(h2)
            .map(|(x, y)| {
                let n2 = signed(y, e * e);
                signed(x, e) - 0.5 * if e < 0.0 { -n2 } else { n2 }
            })
            .collect();
        let (m, se) = stat(&b);
        sq = sq.max(z(m, se));
    }
    Ok((sym, sq))
}

fn clean_count(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0usize;
    for (_, m) in catalog()? {
        let l = [6, 6];
        let fv = assemble_finite_volume(&m, l, Boundary::Periodic)?.eigenvalues()?;
        let bl = bloch_grid_eigenvalues(&m, l)?;
        for i in 0..=40 {
            let e = -2.0 + 0.1 * i as f64 + 0.013;
            worst = worst.max(signed_count(&fv, e).abs_diff(signed_count(&bl, e)));
        }
    }
    Ok((worst == 0, format!("max count difference {worst}")))
}

fn mixed_spec(lambda: f64) -> DisorderSpec {
    let term = |j: [i32; 2], name: &str| TermSpec {
        j,
        w: WDoc::Named(name.into()),
        nu: Distribution::default(),
    };
    DisorderSpec {
        lambda,
        terms: vec![term([0, 0], "W00"), term([1, 0], "W10"), term([0, 1], "W01")],
    }
}

fn disorder_structure(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let spec = mixed_spec(0.4);
    let terms = spec.resolve(1)?;
    let l = [7, 6];
    let mut herm: f64 = 0.0;
    let mut deterministic = true;
    let mut covariant: f64 = 0.0;
    for i in 0..5 {
        let seed = realization_seed(opts.seed, i);
        let f1 = sample_realization(&terms, l, seed)?;
        let f2 = sample_realization(&terms, l, seed)?;
        deterministic &= f1 == f2;
        let h = build_random_hamiltonian(&model, &terms, spec.lambda, &f1)?;
        herm = herm.max(h.hermiticity_defect());
        let t = [2i64 + i as i64, 3];
        let ft = sample_realization_translated(&terms, l, seed, t)?;
        let ht = build_random_hamiltonian(&model, &terms, spec.lambda, &ft)?;
        for n in 0..h.sites() {
            let a = h.site_of(n);
            let at = [(a[0] + t[0] as usize) % l[0], (a[1] + t[1] as usize) % l[1]];
            for m in 0..h.sites() {
                let b = h.site_of(m);
                let bt = [(b[0] + t[0] as usize) % l[0], (b[1] + t[1] as usize) % l[1]];
                covariant = covariant.max(hs_norm(&(h.block(a, b) - ht.block(at, bt))));
            }
        }
    }
    Ok((
        herm <= 1e-12 && deterministic && covariant == 0.0,
        format!("hermiticity {herm:.3e}, deterministic {deterministic}, translation defect {covariant:.3e}"),
    ))
}

fn resolvent_residual(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let spec = DisorderSpec::potential(0.3, Distribution::default());
    let h = crate::spectral::realize(&model, Some(&spec), [12, 12], opts.seed)?;
    let mut worst: f64 = 0.0;
    for z in [c(0.0, 1e-5), c(0.05, 1e-3), c(1.0, 0.1), c(-2.5, 0.0)] {
        let g = green_column(&h, z, [3, 4])?;
        let mut b = CMat::zeros(h.dim(), g.ncols());
        let r0 = h.row([3, 4], 0);
        for a in 0..g.ncols() {
            b[(r0 + a, a)] = c(1.0, 0.0);
        }
        let full = green::resolvent_solve(&h, z, &b)?;
        worst = worst.max(backward_error(&h, z, &full, &b));
    }
    Ok((worst <= green::RESIDUAL_TOL, format!("max backward error {worst:.3e}")))
}

/// `(max relative error, instances)` of the finite-rank update against dense
/// inversion on randomized small instances.
pub fn tmatrix_oracle_error(seed: u64, instances: usize) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let kind = if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus };
        let p = ModelParams::new(rng.random_range(0.1..1.0), rng.random_range(-3.0..3.0));
        let model = build_model(PairingKind::Pip(kind), &p)?;
        let l = [rng.random_range(3..6), rng.random_range(3..6)];
        let spec = mixed_spec(rng.random_range(0.0..0.8));
        let terms = spec.resolve(1)?;
        let field = sample_realization(&terms, l, rng.random())?;
        let h = build_random_hamiltonian(&model, &terms, spec.lambda, &field)?;
        let (name, j) = [("W00", [0, 0]), ("W10", [1, 0]), ("W01", [0, 1])][rng.random_range(0..3)];
        let w = standard_w(name, 1)?;
        let site = [rng.random_range(0..l[0]), rng.random_range(0..l[1])];
        let lambda = rng.random_range(0.05..1.0);
        let v = rng.random_range(-1.0..1.0);
        let z = C64::new(rng.random_range(-2.0..2.0), rng.random_range(0.01..0.5));
        let (g, _) = tmatrix_update(&h, lambda, v, &w, site, j, z)?;
        let k = local_perturbation(&h, &w, site, j)?;
        let mut zh = -(h.dense() + k.to_dense() * real(lambda * v));
        for i in 0..zh.nrows() {
            zh[(i, i)] += z;
        }
        let want = zh
            .try_inverse()
            .ok_or_else(|| Error::Singular("dense oracle".into()))?;
        worst = worst.max(hs_norm(&(&g - &want)) / hs_norm(&want));
    }
    Ok(worst)
}

fn tmatrix_oracle(opts: &VerifyOptions) -> Result<(bool, String)> {
    let worst = tmatrix_oracle_error(opts.seed, 20)?;
    Ok((worst <= 1e-10, format!("max relative error {worst:.3e} over 20 instances")))
}

fn moment_covariance(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let spec = DisorderSpec::potential(0.2, Distribution::default());
    let cfg = MomentConfig {
        z: c(0.0, 1e-3),
        s: 0.3,
        l: 12,
        realizations: 8,
        max_dist: 5,
        seed: opts.seed,
    };
    let a = moment_profiles(&model, Some(&spec), &cfg, [0, 0])?;
    let b = moment_profiles(&model, Some(&spec), &cfg, [5, 2])?;
    let worst = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(1e-300))
        .fold(0.0, f64::max);
    Ok((worst <= 1e-9, format!("max relative difference {worst:.3e}")))
}

fn moment_epsilon(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let spec = DisorderSpec::potential(0.05, Distribution::default());
    let cfg = |eps: f64| MomentConfig {
        z: c(0.0, eps),
        s: 0.3,
        l: 20,
        realizations: 16,
        max_dist: 8,
        seed: opts.seed,
    };
    let a = green::fractional_moment_scan(&model, Some(&spec), &cfg(1e-3))?;
    let b = green::fractional_moment_scan(&model, Some(&spec), &cfg(1e-5))?;
    let worst = (0..a.tau.len())
        .map(|d| (a.tau[d] - b.tau[d]).abs() / (2.0 * a.tau_stderr[d].max(b.tau_stderr[d])))
        .fold(0.0, f64::max);
    Ok((worst <= 1.0, format!("max |Δτ| / (2 stderr) {worst:.3}")))
}

/// Energies of the Combes-Thomas ladder in the `p+ip (0.3, -0.5)` gap, from
/// the band edge inwards.
pub fn combes_thomas_ladder() -> Vec<f64> {
    vec![0.17, 0.16, 0.148, 0.12, 0.065]
}

/// `(strictly increasing, diagonal bound holds, points)` for the clean probe.
pub fn combes_thomas_run() -> Result<(bool, bool, Vec<green::CombesThomasPoint>)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let z: Vec<C64> = combes_thomas_ladder().into_iter().map(|e| c(e, 0.0)).collect();
    let pts = combes_thomas_probe(&model, &z, [160, 48], (5, 40))?;
    let increasing = pts
        .windows(2)
        .all(|w| w[1].distance > w[0].distance && w[1].rate > w[0].rate);
    let bounded = pts.iter().all(|p| p.diagonal_norm <= 1.0 / p.distance);
    Ok((increasing, bounded, pts))
}

fn combes_thomas(_: &VerifyOptions) -> Result<(bool, String)> {
    let (inc, bnd, pts) = combes_thomas_run()?;
    let rates: Vec<String> = pts
        .iter()
        .map(|p| format!("D={:.4}:{:.4}", p.distance, p.rate))
        .collect();
    Ok((inc && bnd, format!("increasing {inc}, diagonal bound {bnd}; {}", rates.join(" "))))
}

fn transfer_geometry(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut cons: f64 = 0.0;
    let mut lag: f64 = 0.0;
    let mut uni: f64 = 0.0;
    for (ex, p) in [
        (Example::PIp(Sign::Plus), ModelParams::new(0.3, -0.5)),
        (Example::PIp(Sign::Minus), ModelParams::new(0.3, 0.01)),
        (Example::DId(Sign::Plus), ModelParams::new(1.0, 2.0)),
    ] {
        let h = ex.operator(&p)?;
        for i in 0..100 {
            let k1 = -PI + 2.0 * PI * (i as f64 + 0.5) / 100.0;
            let td = transfer_matrix(&h, k1)?;
            let n = hs_norm(&td.t);
            cons = cons.max(td.conservation_defect() / (n * n));
            let phi = contracting_subspace(&td)?;
            lag = lag.max(lagrangian_defect(&phi));
            uni = uni.max(u_matrix(k1, &phi)?.unitarity_defect());
        }
    }
    Ok((
        cons <= 1e-10 && lag <= 1e-8 && uni <= 1e-8,
        format!("I-conservation {cons:.3e}, Lagrangian {lag:.3e}, unitarity {uni:.3e}"),
    ))
}

fn chern_agreement(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut ok = true;
    let mut notes = Vec::new();
    let four_zeros = ContourParams {
        expected_zeros: vec![[0.0, 0.0], [0.0, PI], [PI, 0.0], [PI, PI]],
        ..Default::default()
    };
    let mut cases: Vec<(String, TightBindingOperator, ContourParams)> = Vec::new();
    for s in [Sign::Plus, Sign::Minus] {
        for mu in [-5.0, -2.0, -0.5, 0.5, 2.0, 5.0] {
            cases.push((
                format!("pip{} μ={mu}", s.suffix()),
                Example::PIp(s).operator(&ModelParams::new(0.3, mu))?,
                four_zeros.clone(),
            ));
        }
        for mu in [-5.0, -2.0, 2.0, 5.0] {
            cases.push((
                format!("did{} μ={mu}", s.suffix()),
                Example::DId(s).operator(&ModelParams::new(1.0, mu))?,
                ContourParams::default(),
            ));
        }
    }
    let results: Vec<(String, Vec<Option<i64>>)> = cases
        .par_iter()
        .map(|(name, h, cp)| {
            let v = vec![
                transfer_chern(h, 64)?.value,
                transfer_chern(h, 128)?.value,
                berry_flux_chern(h, 32)?.value,
                berry_flux_chern(h, 64)?.value,
                transition_winding(h, cp)?.value,
            ];
            Ok((name.clone(), v))
        })
        .collect::<Result<_>>()?;
    for (name, v) in &results {
        if v.iter().any(|x| *x != v[0] || x.is_none()) {
            ok = false;
            notes.push(format!("{name}: {v:?}"));
        }
    }
    // Chirality flips the sign: entries for `-` follow those for `+`.
    let half = results.len() / 2;
    for i in 0..half {
        if results[i].1[0].map(|x| -x) != results[half + i].1[0] {
            ok = false;
            notes.push(format!("sign pair {} / {}", results[i].0, results[half + i].0));
        }
    }
    let summary: Vec<String> = results
        .iter()
        .map(|(n, v)| format!("{n}:{}", v[0].unwrap_or(i64::MIN)))
        .collect();
    notes.push(summary.join(" "));
    Ok((ok, notes.join("; ")))
}

fn chern_stability(opts: &VerifyOptions) -> Result<(bool, String)> {
    let model = build_model(PairingKind::Pip(Sign::Plus), &base_params())?;
    let clean = transfer_chern(&model, 64)?.value;
    let rs_clean = real_space_chern(&assemble_finite_volume(&model, [20, 20], Boundary::Periodic)?)?;
    let spec = DisorderSpec::potential(0.05, Distribution::default());
    let values = disordered_real_space(&model, &spec, 20, 8, opts.seed)?;
    let agree = values.iter().filter(|v| **v == clean).count();
    Ok((
        rs_clean.value == clean && rs_clean.residual < 0.15 && agree >= 7,
        format!(
            "clean {clean:?} (real-space raw {:.4}); disordered agree in {agree}/8: {values:?}",
            rs_clean.raw
        ),
    ))
}

/// Real-space Chern integers of `count` disorder realizations on an `l x l`
/// torus (`None` for no verdict).
pub fn disordered_real_space(
    model: &TightBindingOperator,
    spec: &DisorderSpec,
    l: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Option<i64>>> {
    (0..count as u64)
        .map(|i| {
            let h = crate::spectral::realize(model, Some(spec), [l, l], realization_seed(seed, i))?;
            Ok(chern::real_space_chern(&h)?.value)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_names_parse() {
        assert_eq!("pairing-sign".parse::<Fault>().unwrap(), Fault::PairingSign);
        assert!("other".parse::<Fault>().is_err());
    }

    #[test]
    fn check_names_are_unique() {
        let names: std::collections::BTreeSet<&str> = checks().iter().map(|(n, _)| *n).collect();
        assert_eq!(names.len(), checks().len());
    }

    #[test]
    fn errors_become_failed_checks() {
        fn broken(_: &VerifyOptions) -> Result<(bool, String)> {
            Err(Error::InvalidParameter("boom".into()))
        }
        let c = run_check("broken", broken, &VerifyOptions::default());
        assert!(!c.passed);
        assert!(c.detail.contains("boom"));
        let report = VerifyReport { checks: vec![c] };
        assert!(!report.all_passed());
        assert!(report.to_table().to_csv().starts_with("check,passed,detail\nbroken,false,"));
    }

    #[test]
    fn fault_breaks_bdg_equation_only_when_injected() {
        let clean = VerifyOptions::default();
        let faulty = VerifyOptions { fault: Some(Fault::PairingSign), ..clean };
        assert!(bdg_equation(&clean).unwrap().0);
        assert!(!bdg_equation(&faulty).unwrap().0);
    }
}
