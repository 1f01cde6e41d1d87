//! Fréchet distance between Gaussians fitted to activation matrices,
//! with pluggable activation sources.
//!
//! Scoring against a trained classifier consumes its activations from
//! file (see [`crate::io`]); the network itself stays outside this
//! crate. The built-in surrogate instead derives a seven-dimensional
//! activation vector per cloud (the five fixed correlators, the jet
//! mass, and the cardinality) so the full pipeline can run and be
//! tested without any model file. Surrogate scores are labeled as such
//! and are not comparable to classifier-based numbers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efp::{efp_set_features, EfpConfig, EfpError};
use crate::kinematics::{cardinality, jet_mass};
use crate::model::{CloudSample, FeatureSeries};
use crate::rng::{sample_without_replacement, substream, tag};

/// Default number of clouds drawn per side.
pub const DEFAULT_FPND_SAMPLES: usize = 50_000;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;
const EIG_RESIDUAL_REL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FrechetError {
    #[error("need at least two rows to fit a Gaussian, got {0}")]
    DegenerateSample(usize),
    #[error("summary dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not symmetric within {SYMMETRY_TOL:e}")]
    NotSymmetric,
    #[error("covariance has eigenvalue {0:.3e} below the PSD tolerance")]
    NotPositiveSemiDefinite(f64),
    #[error("eigendecomposition residual {residual:.3e} exceeds {bound:.3e}")]
    NumericalFailure { residual: f64, bound: f64 },
    #[error("activation matrix rows ({rows}) do not cover the sample ({sample})")]
    ProviderMismatch { rows: usize, sample: usize },
    #[error("activation matrix contains a non-finite value at row {row}")]
    NonFiniteActivation { row: usize },
    #[error(transparent)]
    Efp(#[from] EfpError),
}

/// A dense row-major activation matrix: one row per cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ActivationMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f64>) -> Result<Self, FrechetError> {
        assert_eq!(data.len(), n_rows * dim, "activation matrix shape mismatch");
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(FrechetError::NonFiniteActivation { row: bad / dim.max(1) });
        }
        Ok(Self { n_rows, dim, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn select_rows(&self, indices: &[usize]) -> ActivationMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        ActivationMatrix { n_rows: indices.len(), dim: self.dim, data }
    }
}

/// Gaussian summary of an activation matrix: column means plus the
/// unbiased sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n: usize,
}

impl GaussianSummary {
    /// Build a summary from explicit moments, checking the symmetry and
    /// positive-semidefiniteness invariants.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self, FrechetError> {
        if n < 2 {
            return Err(FrechetError::DegenerateSample(n));
        }
        let d = mean.len();
        assert_eq!(cov.nrows(), d, "covariance shape mismatch");
        assert_eq!(cov.ncols(), d, "covariance shape mismatch");
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(FrechetError::NotSymmetric);
                }
            }
        }
        let eig = cov.clone().symmetric_eigen();
        if let Some(lambda) = eig.eigenvalues.iter().copied().find(|&l| l < -PSD_TOL) {
            return Err(FrechetError::NotPositiveSemiDefinite(lambda));
        }
        Ok(Self { mean: DVector::from_vec(mean), cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Fit a Gaussian to the rows of an activation matrix: column means and
/// the unbiased (divisor `n - 1`) sample covariance.
pub fn fit_gaussian(acts: &ActivationMatrix) -> Result<GaussianSummary, FrechetError> {
    let n = acts.n_rows();
    if n < 2 {
        return Err(FrechetError::DegenerateSample(n));
    }
    let d = acts.dim();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(acts.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0f64; d];
    for i in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(acts.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    GaussianSummary::new(mean, cov, n)
}

/// Symmetric PSD square root via eigendecomposition, with a residual
/// certificate on the decomposition.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, FrechetError> {
    let eig = m.clone().symmetric_eigen();
    let residual = (&eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose()
        - m)
        .norm();
    let bound = EIG_RESIDUAL_REL * m.norm().max(1e-300);
    if residual > bound {
        return Err(FrechetError::NumericalFailure { residual, bound });
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})`,
/// clamped at zero.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64, FrechetError> {
    if a.dim() != b.dim() {
        return Err(FrechetError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_term = (a.mean() - b.mean()).norm_squared();
    let sqrt_a = psd_sqrt(a.cov())?;
    let mut inner = &sqrt_a * b.cov() * &sqrt_a;
    // Symmetrize before decomposing; the product picks up round-off.
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.clone().symmetric_eigen();
    let residual = (&eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose()
        - &inner)
        .norm();
    let bound = EIG_RESIDUAL_REL * inner.norm().max(1e-300);
    if residual > bound {
        return Err(FrechetError::NumericalFailure { residual, bound });
    }
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let value = mean_term + a.cov().trace() + b.cov().trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}

/// Where activations come from.
#[derive(Debug, Clone)]
pub enum ActivationProvider<'a> {
    /// Row `i` of each matrix is the activation of cloud `i` of the
    /// corresponding sample.
    ExternalFile { real: &'a ActivationMatrix, gen: &'a ActivationMatrix },
    /// Correlator/mass/cardinality features computed from the clouds.
    EfpSurrogate { cfg: EfpConfig },
}

/// Surrogate activations: the five fixed correlators plus jet mass and
/// cardinality per cloud (dimension seven).
pub fn efp_surrogate_activations(
    sample: &CloudSample,
    cfg: &EfpConfig,
) -> Result<ActivationMatrix, FrechetError> {
    let series = efp_set_features(sample, cfg)?;
    surrogate_from_series(sample, &series)
}

pub(crate) fn surrogate_from_series(
    sample: &CloudSample,
    series: &[FeatureSeries],
) -> Result<ActivationMatrix, FrechetError> {
    let n = sample.len();
    let dim = series.len() + 2;
    let mut data = Vec::with_capacity(n * dim);
    for (i, cloud) in sample.clouds().iter().enumerate() {
        for s in series {
            data.push(s.values()[i]);
        }
        data.push(jet_mass(cloud));
        data.push(cardinality(cloud) as f64);
    }
    ActivationMatrix::new(n, dim, data)
}

/// Fréchet distance between Gaussians fitted to `n` seeded draws of
/// activations per side. Both sides consume identical draw streams, so
/// equal inputs score zero.
pub fn fpnd(
    real: &CloudSample,
    gen: &CloudSample,
    provider: &ActivationProvider,
    n: usize,
    seed: u64,
) -> Result<f64, FrechetError> {
    let (acts_real, acts_gen) = match provider {
        ActivationProvider::ExternalFile { real: ar, gen: ag } => ((*ar).clone(), (*ag).clone()),
        ActivationProvider::EfpSurrogate { cfg } => {
            (efp_surrogate_activations(real, cfg)?, efp_surrogate_activations(gen, cfg)?)
        }
    };
    if acts_real.n_rows() != real.len() {
        return Err(FrechetError::ProviderMismatch {
            rows: acts_real.n_rows(),
            sample: real.len(),
        });
    }
    if acts_gen.n_rows() != gen.len() {
        return Err(FrechetError::ProviderMismatch { rows: acts_gen.n_rows(), sample: gen.len() });
    }
    fpnd_from_matrices(&acts_real, &acts_gen, n, seed)
}

/// Core of [`fpnd`], reusable with precomputed activation matrices.
pub fn fpnd_from_matrices(
    acts_real: &ActivationMatrix,
    acts_gen: &ActivationMatrix,
    n: usize,
    seed: u64,
) -> Result<f64, FrechetError> {
    let k = n.min(acts_real.n_rows()).min(acts_gen.n_rows()).max(2);
    let rng = substream(seed, &[tag::FPND_DRAW]);
    let idx_real = sample_without_replacement(&mut rng.clone(), acts_real.n_rows(), k);
    let idx_gen = sample_without_replacement(&mut rng.clone(), acts_gen.n_rows(), k);
    let a = fit_gaussian(&acts_real.select_rows(&idx_real))?;
    let b = fit_gaussian(&acts_gen.select_rows(&idx_gen))?;
    frechet_distance(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_core::Rng;

    fn matrix(rows: &[&[f64]]) -> ActivationMatrix {
        let dim = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ActivationMatrix::new(rows.len(), dim, data).unwrap()
    }

    #[test]
    fn constant_rows_give_zero_covariance() {
        let acts = matrix(&[&[1.0, -2.0], &[1.0, -2.0], &[1.0, -2.0]]);
        let g = fit_gaussian(&acts).unwrap();
        assert_eq!(g.mean().as_slice(), &[1.0, -2.0]);
        assert!(g.cov().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_row_unbiased_covariance() {
        let acts = matrix(&[&[0.0], &[2.0]]);
        let g = fit_gaussian(&acts).unwrap();
        assert_relative_eq!(g.mean()[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(g.cov()[(0, 0)], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn fit_rejects_single_row() {
        let acts = matrix(&[&[1.0]]);
        assert!(matches!(fit_gaussian(&acts), Err(FrechetError::DegenerateSample(1))));
    }

    #[test]
    fn monte_carlo_standard_normal_moments() {
        // 1e5 standardized draws: mean within 0.02, covariance within 0.05
        // of the identity.
        let mut rng = substream(404, &[]);
        let d = 3;
        let n = 100_000;
        let mut data = Vec::with_capacity(n * d);
        let mut spare: Option<f64> = None;
        let mut normal = |rng: &mut rand_chacha::ChaCha20Rng| -> f64 {
            if let Some(z) = spare.take() {
                return z;
            }
            // Box-Muller.
            let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            spare = Some(r * s);
            r * c
        };
        for _ in 0..n * d {
            data.push(normal(&mut rng));
        }
        let acts = ActivationMatrix::new(n, d, data).unwrap();
        let g = fit_gaussian(&acts).unwrap();
        for i in 0..d {
            assert!(g.mean()[i].abs() < 0.02, "mean {}", g.mean()[i]);
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.cov()[(i, j)] - want).abs() < 0.05);
            }
        }
    }

    fn summary_1d(mu: f64, var: f64) -> GaussianSummary {
        GaussianSummary::new(vec![mu], DMatrix::from_element(1, 1, var), 2).unwrap()
    }

    #[test]
    fn identical_summaries_score_zero() {
        let g = summary_1d(0.3, 0.7);
        assert!(frechet_distance(&g, &g).unwrap() <= 1e-9);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = summary_1d(0.0, 1.0);
        let b = summary_1d(1.0, 1.0);
        assert_relative_eq!(frechet_distance(&a, &b).unwrap(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn commuting_diagonal_closed_form() {
        let av = [0.5f64, 1.5, 2.5];
        let bv = [1.0f64, 0.5, 3.0];
        let a = GaussianSummary::new(
            vec![0.0; 3],
            DMatrix::from_diagonal(&DVector::from_row_slice(&av)),
            2,
        )
        .unwrap();
        let b = GaussianSummary::new(
            vec![0.0; 3],
            DMatrix::from_diagonal(&DVector::from_row_slice(&bv)),
            2,
        )
        .unwrap();
        let expect: f64 =
            av.iter().zip(&bv).map(|(x, y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt())).sum();
        assert_relative_eq!(frechet_distance(&a, &b).unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_within_tolerance() {
        let a = GaussianSummary::new(
            vec![0.1, -0.2],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
            5,
        )
        .unwrap();
        let b = GaussianSummary::new(
            vec![0.4, 0.0],
            DMatrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 1.2]),
            5,
        )
        .unwrap();
        let dab = frechet_distance(&a, &b).unwrap();
        let dba = frechet_distance(&b, &a).unwrap();
        assert!((dab - dba).abs() <= 1e-9);
    }

    #[test]
    fn rotation_invariance() {
        // Rotating both activation sets by one orthogonal matrix must not
        // change the distance.
        let mut rng = substream(7, &[]);
        let n = 500;
        let d = 3;
        let mut raw = |scale: f64, shift: f64| {
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n * d {
                data.push(shift + scale * crate::rng::uniform_f64(&mut rng));
            }
            ActivationMatrix::new(n, d, data).unwrap()
        };
        let x = raw(1.0, 0.0);
        let y = raw(1.3, 0.2);
        // Givens rotation in the (0, 1) plane by 0.7 radians.
        let (s, c) = (0.7f64).sin_cos();
        let rotate = |m: &ActivationMatrix| {
            let mut data = Vec::with_capacity(n * d);
            for i in 0..n {
                let r = m.row(i);
                data.push(c * r[0] - s * r[1]);
                data.push(s * r[0] + c * r[1]);
                data.push(r[2]);
            }
            ActivationMatrix::new(n, d, data).unwrap()
        };
        let d0 = frechet_distance(&fit_gaussian(&x).unwrap(), &fit_gaussian(&y).unwrap()).unwrap();
        let d1 = frechet_distance(
            &fit_gaussian(&rotate(&x)).unwrap(),
            &fit_gaussian(&rotate(&y)).unwrap(),
        )
        .unwrap();
        assert!((d0 - d1).abs() <= 1e-8 * d0.max(1.0));
    }

    #[test]
    fn equal_external_activations_score_zero() {
        let acts = matrix(&[&[0.1, 0.2], &[0.4, -0.3], &[0.0, 0.9], &[1.0, 0.5]]);
        let d = fpnd_from_matrices(&acts, &acts, 4, 3).unwrap();
        assert!(d <= 1e-9);
    }

    #[test]
    fn provider_mismatch_is_detected() {
        let cloud = crate::model::ParticleCloud::from_genuine([(0.0, 0.0, 1.0)], 1);
        let sample =
            crate::model::CloudSample::new(vec![cloud; 5], crate::model::JetClass::Toy, None)
                .unwrap();
        let acts = matrix(&[&[0.1], &[0.2], &[0.3]]);
        let provider = ActivationProvider::ExternalFile { real: &acts, gen: &acts };
        assert!(matches!(
            fpnd(&sample, &sample, &provider, 5, 0),
            Err(FrechetError::ProviderMismatch { rows: 3, sample: 5 })
        ));
    }
}
