//! Random perturbations `V = Σ_{j,l} v_{j,l} π*_{l+j} W_j π_l` of a clean BdG
//! operator, sampled with a counter-based generator so that each constrained
//! pair `v_{j,l} = v_{-j,l+j}` is a single draw.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hs_norm, kron, real, CMat};
use crate::operator::{
    assemble_finite_volume, matrix_from_doc, Boundary, ComplexDoc, FiniteVolumeOperator,
    TightBindingOperator,
};

/// Single-site law of the random coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform on `[-r_support, r_support]`.
    Uniform { r_support: f64 },
    /// Centered normal with deviation `sigma`, conditioned on `|v| <= cutoff * sigma`.
    TruncatedGaussian { sigma: f64, cutoff: f64 },
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Uniform { r_support: 1.0 }
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Uniform { r_support } => r_support.is_finite() && r_support > 0.0,
            Distribution::TruncatedGaussian { sigma, cutoff } => {
                sigma.is_finite() && sigma > 0.0 && cutoff.is_finite() && cutoff > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad distribution {self:?}")))
        }
    }

    /// Largest possible `|v|`.
    pub fn half_width(&self) -> f64 {
        match *self {
            Distribution::Uniform { r_support } => r_support,
            Distribution::TruncatedGaussian { sigma, cutoff } => sigma * cutoff,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Uniform { r_support } => rng.random_range(-r_support..=r_support),
            Distribution::TruncatedGaussian { sigma, cutoff } => loop {
                let x: f64 = StandardNormal.sample(rng);
                if x.abs() <= cutoff {
                    break sigma * x;
                }
            },
        }
    }
}

/// Named fiber matrices for the random terms.
pub fn standard_w(name: &str, r: usize) -> Result<CMat> {
    if r == 0 {
        return Err(Error::InvalidParameter("fiber needs r >= 1".into()));
    }
    let (z, o, i) = (c(0.0, 0.0), real(1.0), c(0.0, 1.0));
    let base = match name {
        "W00" => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        "W10" => CMat::from_row_slice(2, 2, &[z, o, -o, z]),
        "W01" => CMat::from_row_slice(2, 2, &[z, i, i, z]),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown disorder matrix '{other}', expected W00, W10 or W01"
            )))
        }
    };
    Ok(kron(&base, &CMat::identity(r, r)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WDoc {
    Named(String),
    Matrix(Vec<Vec<ComplexDoc>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub j: [i32; 2],
    #[serde(rename = "W")]
    pub w: WDoc,
    #[serde(default)]
    pub nu: Distribution,
}

/// Serialized form `{lambda, terms:[{j, W, nu:{kind,…}}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    pub lambda: f64,
    pub terms: Vec<TermSpec>,
}

impl DisorderSpec {
    /// Random potential only: the single `W00` term.
    pub fn potential(lambda: f64, nu: Distribution) -> Self {
        Self {
            lambda,
            terms: vec![TermSpec {
                j: [0, 0],
                w: WDoc::Named("W00".into()),
                nu,
            }],
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Resolves names to matrices on the `2r` fiber and completes the term set
    /// with mirror terms `(-j, W_j*)` where they are missing.
    pub fn resolve(&self, r: usize) -> Result<Vec<DisorderTerm>> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter("lambda must be finite and >= 0".into()));
        }
        let dim = 2 * r;
        let mut terms: BTreeMap<[i32; 2], DisorderTerm> = BTreeMap::new();
        for t in &self.terms {
            t.nu.validate()?;
            let w = match &t.w {
                WDoc::Named(n) => standard_w(n, r)?,
                WDoc::Matrix(rows) => matrix_from_doc(rows)?,
            };
            if w.shape() != (dim, dim) {
                return Err(Error::FiberMismatch(format!(
                    "disorder matrix at ({}, {}) is {}x{}, fiber is {dim}",
                    t.j[0],
                    t.j[1],
                    w.nrows(),
                    w.ncols()
                )));
            }
            if terms.contains_key(&t.j) {
                return Err(Error::Structure(format!(
                    "duplicate disorder term at ({}, {})",
                    t.j[0], t.j[1]
                )));
            }
            terms.insert(t.j, DisorderTerm { j: t.j, w, nu: t.nu });
        }
        let keys: Vec<[i32; 2]> = terms.keys().copied().collect();
        for j in keys {
            let mirror = [-j[0], -j[1]];
            let t = terms[&j].clone();
            match terms.get(&mirror) {
                Some(m) => {
                    let defect = hs_norm(&(&m.w - t.w.adjoint()));
                    if defect > 1e-12 * hs_norm(&t.w).max(1.0) {
                        return Err(Error::NotClosed {
                            displacement: j,
                            defect,
                        });
                    }
                    if m.nu != t.nu {
                        return Err(Error::Structure(format!(
                            "terms at ({}, {}) and its mirror use different laws",
                            j[0], j[1]
                        )));
                    }
                }
                None => {
                    terms.insert(
                        mirror,
                        DisorderTerm {
                            j: mirror,
                            w: t.w.adjoint(),
                            nu: t.nu,
                        },
                    );
                }
            }
        }
        Ok(terms.into_values().collect())
    }

    /// Largest `|v|` over all terms.
    pub fn max_half_width(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.nu.half_width())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisorderTerm {
    pub j: [i32; 2],
    pub w: CMat,
    pub nu: Distribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisorderRealization {
    pub l: [usize; 2],
    pub seed: u64,
    /// `v_{j,l}` keyed by `(j, l)`, both members of every constrained pair.
    pub values: BTreeMap<([i32; 2], [usize; 2]), f64>,
}

impl DisorderRealization {
    pub fn get(&self, j: [i32; 2], l: [usize; 2]) -> Option<f64> {
        self.values.get(&(j, l)).copied()
    }

    /// Audit dump with header `j1,j2,l1,l2,v`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("j1,j2,l1,l2,v\n");
        for ((j, l), v) in &self.values {
            writeln!(s, "{},{},{},{},{:.16e}", j[0], j[1], l[0], l[1], v).unwrap();
        }
        s
    }
}

fn lex_positive(j: [i32; 2]) -> bool {
    j[0] > 0 || (j[0] == 0 && j[1] > 0)
}

fn wrap(x: i64, len: usize) -> usize {
    x.rem_euclid(len as i64) as usize
}

/// Stream id for the class with canonical representative `(j, l)`.
fn stream_key(j: [i32; 2], l: [usize; 2]) -> u64 {
    let jb = |x: i32| ((x + 128) as u64) & 0xff;
    (jb(j[0]) << 56) | (jb(j[1]) << 48) | ((l[0] as u64 & 0xff_ffff) << 24) | (l[1] as u64 & 0xff_ffff)
}

pub fn sample_realization(
    terms: &[DisorderTerm],
    l: [usize; 2],
    seed: u64,
) -> Result<DisorderRealization> {
    sample_realization_translated(terms, l, seed, [0, 0])
}

/// Realization whose field is the `t`-translate of the untranslated one:
/// `v'_{j,l} = v_{j,l-t}` on the torus.
pub fn sample_realization_translated(
    terms: &[DisorderTerm],
    l: [usize; 2],
    seed: u64,
    t: [i64; 2],
) -> Result<DisorderRealization> {
    if l[0] == 0 || l[1] == 0 || l[0] > 0xff_ffff || l[1] > 0xff_ffff {
        return Err(Error::InvalidParameter(format!("unsupported torus {l:?}")));
    }
    if terms.iter().any(|t| t.j[0].abs() > 127 || t.j[1].abs() > 127) {
        return Err(Error::InvalidParameter("disorder range above 127".into()));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = Vec::new();
    for term in terms.iter().filter(|t| t.j == [0, 0] || lex_positive(t.j)) {
        for l2 in 0..l[1] {
            for l1 in 0..l[0] {
                classes.push((term, [l1, l2]));
            }
        }
    }
    let drawn: Vec<(([i32; 2], [usize; 2]), f64)> = classes
        .par_iter()
        .map(|(term, site)| {
            let key_site = [
                wrap(site[0] as i64 - t[0], l[0]),
                wrap(site[1] as i64 - t[1], l[1]),
            ];
            let mut rng = base.clone();
            rng.set_stream(stream_key(term.j, key_site));
            ((term.j, *site), term.nu.sample(&mut rng))
        })
        .collect();
    let mut values = BTreeMap::new();
    for ((j, site), v) in drawn {
        values.insert((j, site), v);
        if j != [0, 0] {
            let partner = [
                wrap(site[0] as i64 + j[0] as i64, l[0]),
                wrap(site[1] as i64 + j[1] as i64, l[1]),
            ];
            values.insert(([-j[0], -j[1]], partner), v);
        }
    }
    Ok(DisorderRealization { l, seed, values })
}

/// Seed of realization `index` in an ensemble started from `seed`.
pub fn realization_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// `H_{μ,λ} = H_{μ,0} + (λ/2) V` on the periodic torus.
///
/// The factor ½ matches the BdG prefactor, so a constant `v ≡ c` on the
/// `W00` term shifts the chemical potential by `-λ c`.
pub fn build_random_hamiltonian(
    h0: &TightBindingOperator,
    terms: &[DisorderTerm],
    lambda: f64,
    realization: &DisorderRealization,
) -> Result<FiniteVolumeOperator> {
    let dim = h0.fiber().dim();
    if let Some(t) = terms.iter().find(|t| t.w.nrows() != dim || t.w.ncols() != dim) {
        return Err(Error::FiberMismatch(format!(
            "disorder matrix at ({}, {}) does not fit fiber {dim}",
            t.j[0], t.j[1]
        )));
    }
    let l = realization.l;
    let mut fv = assemble_finite_volume(h0, l, Boundary::Periodic)?;
    let range = terms
        .iter()
        .map(|t| t.j[0].unsigned_abs().max(t.j[1].unsigned_abs()) as usize)
        .max()
        .unwrap_or(0);
    if l[0] <= 2 * range || l[1] <= 2 * range {
        return Err(Error::TorusTooSmall {
            l1: l[0],
            l2: l[1],
            range,
        });
    }
    if lambda == 0.0 {
        return Ok(fv);
    }
    for t in terms {
        for l2 in 0..l[1] {
            for l1 in 0..l[0] {
                let site = [l1, l2];
                let v = realization.get(t.j, site).ok_or_else(|| {
                    Error::Structure(format!(
                        "realization has no value for j=({}, {}) at {site:?}",
                        t.j[0], t.j[1]
                    ))
                })?;
                let dst = fv.translate(site, t.j).expect("periodic");
                fv.add_block(dst, site, &(&t.w * real(0.5 * lambda * v)));
            }
        }
    }
    Ok(fv)
}

/// Disorder strength `μ / r` at which the random potential can close the gap.
pub fn gap_closure_threshold(mu: f64, r_support: f64) -> Result<f64> {
    if !(r_support > 0.0) {
        return Err(Error::InvalidParameter("support radius must be > 0".into()));
    }
    Ok(mu / r_support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelParams, PairingKind, Sign};
    use crate::operator::spectrum_symmetry_check;

    fn pip_terms() -> Vec<DisorderTerm> {
        let spec = DisorderSpec {
            lambda: 0.1,
            terms: vec![
                TermSpec { j: [0, 0], w: WDoc::Named("W00".into()), nu: Distribution::default() },
                TermSpec { j: [1, 0], w: WDoc::Named("W10".into()), nu: Distribution::default() },
                TermSpec { j: [0, 1], w: WDoc::Named("W01".into()), nu: Distribution::default() },
            ],
        };
        spec.resolve(1).unwrap()
    }

    #[test]
    fn standard_matrices() {
        let w = standard_w("W00", 1).unwrap();
        assert_eq!(w, CMat::from_row_slice(2, 2, &[real(1.0), real(0.0), real(0.0), real(-1.0)]));
        let w = standard_w("W10", 1).unwrap();
        assert_eq!(w, CMat::from_row_slice(2, 2, &[real(0.0), real(1.0), real(-1.0), real(0.0)]));
        let w = standard_w("W01", 1).unwrap();
        assert_eq!(w, CMat::from_row_slice(2, 2, &[real(0.0), c(0.0, 1.0), c(0.0, 1.0), real(0.0)]));
        assert_eq!(w.adjoint(), -&w);
        assert_eq!(standard_w("W00", 2).unwrap().nrows(), 4);
        assert!(standard_w("W11", 1).is_err());
    }

    #[test]
    fn mirrors_are_completed() {
        let terms = pip_terms();
        let js: Vec<[i32; 2]> = terms.iter().map(|t| t.j).collect();
        assert_eq!(js, vec![[-1, 0], [0, -1], [0, 0], [0, 1], [1, 0]]);
        let m = terms.iter().find(|t| t.j == [-1, 0]).unwrap();
        assert_eq!(m.w, standard_w("W10", 1).unwrap().adjoint());
    }

    #[test]
    fn inconsistent_mirror_rejected() {
        let spec = DisorderSpec {
            lambda: 1.0,
            terms: vec![
                TermSpec { j: [1, 0], w: WDoc::Named("W10".into()), nu: Distribution::default() },
                TermSpec { j: [-1, 0], w: WDoc::Named("W10".into()), nu: Distribution::default() },
            ],
        };
        assert!(matches!(spec.resolve(1), Err(Error::NotClosed { .. })));
    }

    #[test]
    fn pair_constraint_holds_everywhere() {
        let terms = pip_terms();
        let real = sample_realization(&terms, [6, 6], 11).unwrap();
        assert_eq!(real.values.len(), 5 * 36);
        for ((j, l), v) in &real.values {
            let partner = [wrap(l[0] as i64 + j[0] as i64, 6), wrap(l[1] as i64 + j[1] as i64, 6)];
            assert_eq!(real.get([-j[0], -j[1]], partner), Some(*v));
        }
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let terms = pip_terms();
        let a = sample_realization(&terms, [8, 8], 3).unwrap();
        let b = sample_realization(&terms, [8, 8], 3).unwrap();
        let c = sample_realization(&terms, [8, 8], 4).unwrap();
        assert_eq!(a, b);
        let differ = a.values.iter().filter(|(k, v)| c.values[k] != **v).count();
        assert!(differ as f64 >= 0.99 * a.values.len() as f64);
    }

    #[test]
    fn uniform_moments() {
        let nu = Distribution::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| nu.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // sd of the mean is sqrt(1/3 / n); sd of the variance is sqrt((1/5 - 1/9) / n).
        assert!(mean.abs() < 4.0 * (1.0 / 3.0 / n as f64).sqrt());
        assert!((var - 1.0 / 3.0).abs() < 4.0 * ((0.2 - 1.0 / 9.0) / n as f64).sqrt());
    }

    #[test]
    fn truncated_gaussian_respects_cutoff() {
        let nu = Distribution::TruncatedGaussian { sigma: 0.5, cutoff: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| nu.sample(&mut rng).abs() <= 1.0));
        assert_eq!(nu.half_width(), 1.0);
    }

    #[test]
    fn lambda_zero_is_clean() {
        let h0 = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, -0.5)).unwrap();
        let terms = pip_terms();
        let r = sample_realization(&terms, [5, 5], 9).unwrap();
        let h = build_random_hamiltonian(&h0, &terms, 0.0, &r).unwrap();
        let clean = assemble_finite_volume(&h0, [5, 5], Boundary::Periodic).unwrap();
        assert_eq!(h.dense(), clean.dense());
    }

    #[test]
    fn constant_potential_shifts_mu() {
        let p = ModelParams::new(0.3, -0.5);
        let h0 = build_model(PairingKind::Pip(Sign::Plus), &p).unwrap();
        let terms = DisorderSpec::potential(0.2, Distribution::default()).resolve(1).unwrap();
        let mut r = sample_realization(&terms, [5, 5], 1).unwrap();
        let cval = 0.37;
        r.values.values_mut().for_each(|v| *v = cval);
        let h = build_random_hamiltonian(&h0, &terms, 0.2, &r).unwrap();
        let shifted = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, -0.5 - 0.2 * cval)).unwrap();
        let want = assemble_finite_volume(&shifted, [5, 5], Boundary::Periodic).unwrap();
        assert!(hs_norm(&(h.dense() - want.dense())) < 1e-14);
    }

    #[test]
    fn random_pairing_keeps_hermiticity_and_phs() {
        let h0 = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, -0.5)).unwrap();
        let terms = pip_terms();
        let r = sample_realization(&terms, [6, 6], 2).unwrap();
        let h = build_random_hamiltonian(&h0, &terms, 0.8, &r).unwrap();
        assert!(h.hermiticity_defect() < 1e-12);
        let e = h.eigenvalues().unwrap();
        assert!(spectrum_symmetry_check(&e) < 1e-10);
    }

    #[test]
    fn translated_field_gives_translated_operator() {
        let h0 = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, -0.5)).unwrap();
        let terms = pip_terms();
        let l = [6, 5];
        let t = [2i64, -1];
        let a = build_random_hamiltonian(&h0, &terms, 0.5, &sample_realization(&terms, l, 8).unwrap()).unwrap();
        let b = build_random_hamiltonian(
            &h0,
            &terms,
            0.5,
            &sample_realization_translated(&terms, l, 8, t).unwrap(),
        )
        .unwrap();
        for n in 0..a.sites() {
            for m in 0..a.sites() {
                let (sn, sm) = (a.site_of(n), a.site_of(m));
                let shift = |s: [usize; 2]| {
                    [wrap(s[0] as i64 + t[0], l[0]), wrap(s[1] as i64 + t[1], l[1])]
                };
                assert_eq!(a.block(sn, sm), b.block(shift(sn), shift(sm)));
            }
        }
    }

    #[test]
    fn threshold_formula() {
        assert_eq!(gap_closure_threshold(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(gap_closure_threshold(0.1, 2.0).unwrap(), 0.05);
        assert!(gap_closure_threshold(0.1, 0.0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = r#"{"lambda":0.1,"terms":[{"j":[0,0],"W":"W00","nu":{"kind":"uniform","r_support":1.0}},
            {"j":[1,0],"W":[[{"re":0.0,"im":0.0},{"re":1.0,"im":0.0}],[{"re":-1.0,"im":0.0},{"re":0.0,"im":0.0}]],
             "nu":{"kind":"truncated_gaussian","sigma":0.5,"cutoff":3.0}}]}"#;
        let spec = DisorderSpec::from_json(s).unwrap();
        assert_eq!(DisorderSpec::from_json(&spec.to_json().unwrap()).unwrap(), spec);
        assert_eq!(spec.resolve(1).unwrap().len(), 3);
    }
}
