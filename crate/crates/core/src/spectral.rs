//! Integrated density of states normalized by `N(0) = 0`, its analogue for
//! `H²`, and eigenvalue histograms, estimated from torus spectra.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{build_random_hamiltonian, realization_seed, sample_realization, DisorderSpec};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, small_hermitian_eigen};
use crate::operator::{
    assemble_finite_volume, bloch_grid_eigenvalues, torus_momenta, Boundary,
    FiniteVolumeOperator, TightBindingOperator,
};
use crate::table::Table;

/// Eigenvalues closer than this to an interval edge are treated as on it.
pub const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ensemble {
    pub l: [usize; 2],
    pub realizations: usize,
    pub seed: u64,
}

/// The operator of one disorder realization, or the clean operator.
pub fn realize(
    model: &TightBindingOperator,
    disorder: Option<&DisorderSpec>,
    l: [usize; 2],
    seed: u64,
) -> Result<FiniteVolumeOperator> {
    match disorder {
        Some(spec) if spec.lambda > 0.0 => {
            let terms = spec.resolve(model.fiber().r)?;
            let field = sample_realization(&terms, l, seed)?;
            build_random_hamiltonian(model, &terms, spec.lambda, &field)
        }
        _ => assemble_finite_volume(model, l, Boundary::Periodic),
    }
}

/// Torus spectra of an ensemble, one entry per realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    /// Number of lattice sites `L1 L2`.
    pub volume: usize,
    pub fiber_dim: usize,
    pub h: Vec<Vec<f64>>,
    /// Eigenvalues of the explicitly squared matrices, when requested.
    pub h2: Option<Vec<Vec<f64>>>,
}

/// Diagonalizes every realization; a clean model (no disorder or `λ = 0`)
/// uses the Bloch eigenvalues on the torus momenta as its single sample.
pub fn sample_spectra(
    model: &TightBindingOperator,
    disorder: Option<&DisorderSpec>,
    ensemble: &Ensemble,
    squared: bool,
) -> Result<Spectra> {
    let l = ensemble.l;
    let volume = l[0] * l[1];
    let fiber_dim = model.fiber().dim();
    let disordered = disorder.is_some_and(|d| d.lambda > 0.0);
    if !disordered {
        let h = bloch_grid_eigenvalues(model, l)?;
        let h2 = squared.then(|| {
            let mut v: Vec<f64> = torus_momenta(l)
                .into_iter()
                .flat_map(|k| {
                    let m = model.bloch_unchecked(k);
                    small_hermitian_eigen(&(&m * &m)).0
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v
        });
        return Ok(Spectra {
            volume,
            fiber_dim,
            h: vec![h],
            h2: h2.map(|v| vec![v]),
        });
    }
    if ensemble.realizations == 0 {
        return Err(Error::InvalidParameter(
            "a disordered ensemble needs at least one realization".into(),
        ));
    }
    let per: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..ensemble.realizations as u64)
        .into_par_iter()
        .map(|i| {
            let fv = realize(model, disorder, l, realization_seed(ensemble.seed, i))?;
            let dense = fv.dense();
            let e = hermitian_eigenvalues(&dense)?;
            let e2 = if squared {
                Some(hermitian_eigenvalues(&(&dense * &dense))?)
            } else {
                None
            };
            Ok((e, e2))
        })
        .collect::<Result<_>>()?;
    let (h, h2): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(Spectra {
        volume,
        fiber_dim,
        h,
        h2: if squared {
            Some(h2.into_iter().map(Option::unwrap).collect())
        } else {
            None
        },
    })
}

/// Signed count normalized by `N(0) = 0`: eigenvalues in `(0, E]` for
/// `E > 0`, minus those in `[E, 0)` for `E < 0`. Zero modes are excluded.
pub fn signed_count(eigs: &[f64], e: f64) -> usize {
    if e >= 0.0 {
        eigs.iter()
            .filter(|&&x| x > EDGE_TOL && x <= e + EDGE_TOL)
            .count()
    } else {
        eigs.iter()
            .filter(|&&x| x < -EDGE_TOL && x >= e - EDGE_TOL)
            .count()
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsCurve {
    pub energies: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub normalization: String,
}

impl IdsCurve {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["E", "N", "stderr"]);
        for i in 0..self.energies.len() {
            t.push(vec![self.energies[i], self.values[i], self.stderr[i]]);
        }
        t
    }
}

fn ids_from(samples: &[Vec<f64>], volume: usize, energies: &[f64]) -> Result<IdsCurve> {
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidParameter("energies must be finite".into()));
    }
    let mut energies = energies.to_vec();
    energies.sort_by(f64::total_cmp);
    let (values, stderr) = energies
        .iter()
        .map(|&e| {
            let per: Vec<f64> = samples
                .iter()
                .map(|s| {
                    let n = signed_count(s, e) as f64 / volume as f64;
                    if e < 0.0 {
                        -n
                    } else {
                        n
                    }
                })
                .collect();
            mean_and_stderr(&per)
        })
        .unzip();
    Ok(IdsCurve {
        energies,
        values,
        stderr,
        normalization: "N0".into(),
    })
}

impl Spectra {
    pub fn ids(&self, energies: &[f64]) -> Result<IdsCurve> {
        ids_from(&self.h, self.volume, energies)
    }

    /// IDS of `H²`; `energies` are in squared units.
    pub fn ids_squared(&self, energies: &[f64]) -> Result<IdsCurve> {
        let h2 = self
            .h2
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("spectra of H^2 were not sampled".into()))?;
        ids_from(h2, self.volume, energies)
    }

    /// Largest `|E|` over all samples.
    pub fn max_abs(&self) -> f64 {
        self.h
            .iter()
            .flatten()
            .map(|x| x.abs())
            .fold(0.0, f64::max)
    }

    /// Normalized histogram of `H` on `bins` equal bins over `[-emax, emax]`.
    pub fn dos(&self, bins: usize, emax: f64) -> Result<DosHistogram> {
        if bins < 16 {
            return Err(Error::InvalidParameter("histograms need at least 16 bins".into()));
        }
        if !(emax > 0.0) {
            return Err(Error::InvalidParameter("histogram range must be positive".into()));
        }
        let edges: Vec<f64> = (0..=bins)
            .map(|i| -emax + 2.0 * emax * i as f64 / bins as f64)
            .collect();
        Ok(histogram(&self.h, self.volume, edges))
    }

    /// Histograms of `H` and `H²` on matched bins: `2 half_bins` symmetric
    /// bins for `H` and the squared positive edges for `H²`.
    pub fn dos_pair(&self, half_bins: usize, emax: f64) -> Result<DosPair> {
        let h = self.dos(2 * half_bins, emax)?;
        let h2 = self
            .h2
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("spectra of H^2 were not sampled".into()))?;
        let edges2: Vec<f64> = h.bin_edges[half_bins..].iter().map(|e| e * e).collect();
        Ok(DosPair {
            h2: histogram(h2, self.volume, edges2),
            h,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosHistogram {
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Monte-Carlo standard error of each bin.
    pub stderr: Vec<f64>,
    /// `∫ρ`, i.e. states per site captured by the bins.
    pub total_weight: f64,
}

impl DosHistogram {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["bin_lo", "bin_hi", "rho"]);
        for i in 0..self.density.len() {
            t.push(vec![self.bin_edges[i], self.bin_edges[i + 1], self.density[i]]);
        }
        t
    }
}

/// Bin index of `x` for half-open bins `[lo, hi)`; the last bin is closed.
fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if x < edges[0] || x > edges[n] {
        return None;
    }
    let i = edges.partition_point(|e| *e <= x);
    Some(i.saturating_sub(1).min(n - 1))
}

fn histogram(samples: &[Vec<f64>], volume: usize, edges: Vec<f64>) -> DosHistogram {
    let nb = edges.len() - 1;
    let per: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let mut counts = vec![0.0; nb];
            for &x in s {
                if let Some(b) = bin_of(&edges, x) {
                    counts[b] += 1.0;
                }
            }
            counts
                .iter()
                .enumerate()
                .map(|(b, n)| n / (volume as f64 * (edges[b + 1] - edges[b])))
                .collect()
        })
        .collect();
    let (density, stderr): (Vec<f64>, Vec<f64>) = (0..nb)
        .map(|b| mean_and_stderr(&per.iter().map(|p| p[b]).collect::<Vec<_>>()))
        .unzip();
    let total_weight = density
        .iter()
        .enumerate()
        .map(|(b, d)| d * (edges[b + 1] - edges[b]))
        .sum();
    DosHistogram {
        bin_edges: edges,
        density,
        stderr,
        total_weight,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosPair {
    pub h: DosHistogram,
    pub h2: DosHistogram,
}

/// One positive-energy bin of the comparison `ρ(E) = |E| ρ⁽²⁾(E²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareRelationBin {
    pub e_mid: f64,
    /// Average of the `±E` bins of `H`.
    pub rho: f64,
    pub rho_err: f64,
    /// `E_mid ρ⁽²⁾` on the squared bin.
    pub rhs: f64,
    pub rhs_err: f64,
}

impl DosPair {
    pub fn square_relation(&self) -> Vec<SquareRelationBin> {
        let nb = self.h.density.len();
        let half = nb / 2;
        (0..half)
            .map(|i| {
                let pos = half + i;
                let neg = half - 1 - i;
                let lo = self.h.bin_edges[pos];
                let hi = self.h.bin_edges[pos + 1];
                let e_mid = 0.5 * (lo + hi);
                let rho = 0.5 * (self.h.density[pos] + self.h.density[neg]);
                let rho_err = 0.5 * self.h.stderr[pos].hypot(self.h.stderr[neg]);
                SquareRelationBin {
                    e_mid,
                    rho,
                    rho_err,
                    rhs: e_mid * self.h2.density[i],
                    rhs_err: e_mid * self.h2.stderr[i],
                }
            })
            .collect()
    }
}

pub fn ids_estimate(
    model: &TightBindingOperator,
    disorder: Option<&DisorderSpec>,
    ensemble: &Ensemble,
    energies: &[f64],
) -> Result<IdsCurve> {
    sample_spectra(model, disorder, ensemble, false)?.ids(energies)
}

pub fn ids_squared_estimate(
    model: &TightBindingOperator,
    disorder: Option<&DisorderSpec>,
    ensemble: &Ensemble,
    energies: &[f64],
) -> Result<IdsCurve> {
    sample_spectra(model, disorder, ensemble, true)?.ids_squared(energies)
}

pub fn dos_histogram(
    model: &TightBindingOperator,
    disorder: Option<&DisorderSpec>,
    ensemble: &Ensemble,
    bins: usize,
) -> Result<DosHistogram> {
    let s = sample_spectra(model, disorder, ensemble, false)?;
    let emax = s.max_abs() * (1.0 + 1e-9) + 1e-12;
    s.dos(bins, emax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::Distribution;
    use crate::models::{build_model, central_gap, ModelParams, PairingKind, Sign};

    fn pip(mu: f64) -> TightBindingOperator {
        build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, mu)).unwrap()
    }

    #[test]
    fn counting_rules() {
        let e = [-2.0, -1.0, 0.0, 1e-14, 1.0, 2.0];
        assert_eq!(signed_count(&e, 0.0), 0);
        assert_eq!(signed_count(&e, 1.0), 1);
        assert_eq!(signed_count(&e, 1.0 - 1e-13), 1);
        assert_eq!(signed_count(&e, -1.0), 1);
        assert_eq!(signed_count(&e, 5.0), 2);
        assert_eq!(signed_count(&e, -5.0), 2);
    }

    #[test]
    fn clean_grid_matches_finite_volume_count() {
        let h = pip(-0.5);
        let l = [8, 6];
        let grid = bloch_grid_eigenvalues(&h, l).unwrap();
        let fv = assemble_finite_volume(&h, l, Boundary::Periodic).unwrap();
        let direct = fv.eigenvalues().unwrap();
        for e in [-2.0, -0.7, -0.26, 0.0, 0.26, 0.5, 1.3, 3.0] {
            assert_eq!(signed_count(&grid, e), signed_count(&direct, e));
        }
    }

    #[test]
    fn clean_ids_vanishes_in_gap_and_saturates() {
        let h = pip(-0.5);
        let g = central_gap(&h, 64).unwrap();
        let ens = Ensemble { l: [16, 16], realizations: 1, seed: 0 };
        let c = ids_estimate(&h, None, &ens, &[-0.49 * g, 0.0, 0.49 * g, 10.0, -10.0]).unwrap();
        assert_eq!(c.values, vec![-1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn disordered_ids_is_antisymmetric_and_matches_squares() {
        let h = pip(-0.5);
        let spec = DisorderSpec::potential(0.3, Distribution::default());
        let ens = Ensemble { l: [6, 6], realizations: 4, seed: 17 };
        let s = sample_spectra(&h, Some(&spec), &ens, true).unwrap();
        let es = [0.1, 0.3, 0.6, 1.0, 2.0];
        let pos = s.ids(&es).unwrap();
        let neg = s.ids(&es.map(|e| -e)).unwrap();
        let sq = s.ids_squared(&es.map(|e| e * e)).unwrap();
        for i in 0..es.len() {
            let j = es.len() - 1 - i;
            assert!((pos.values[i] + neg.values[j]).abs() < 1e-12);
            assert!((pos.values[i] - 0.5 * sq.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_integrates_to_fiber_dimension() {
        let h = pip(-0.5);
        let ens = Ensemble { l: [12, 12], realizations: 1, seed: 0 };
        let d = dos_histogram(&h, None, &ens, 40).unwrap();
        assert!((d.total_weight - 2.0).abs() < 1e-12);
        assert!(d.density.iter().all(|&x| x >= 0.0));
        assert!(dos_histogram(&h, None, &ens, 8).is_err());
    }

    #[test]
    fn square_relation_is_exact_for_symmetric_spectra() {
        let h = pip(0.0);
        let ens = Ensemble { l: [10, 10], realizations: 1, seed: 0 };
        let s = sample_spectra(&h, None, &ens, true).unwrap();
        let pair = s.dos_pair(16, 3.1).unwrap();
        for b in pair.square_relation() {
            assert!((b.rho - b.rhs).abs() < 1e-9 * b.rho.max(1.0), "{b:?}");
        }
    }

    #[test]
    fn disorder_needs_realizations() {
        let spec = DisorderSpec::potential(0.1, Distribution::default());
        let ens = Ensemble { l: [4, 4], realizations: 0, seed: 0 };
        assert!(ids_estimate(&pip(0.5), Some(&spec), &ens, &[0.0]).is_err());
    }
}
