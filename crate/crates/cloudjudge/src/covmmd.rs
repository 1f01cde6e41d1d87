//! Coverage and minimum matching distance between two samples under the
//! energy mover's distance.
//!
//! Direction convention: every cloud of the second sample (`y`) is
//! matched to its nearest neighbor in the first (`x`); coverage is the
//! fraction of distinct matched `x` clouds, MMD the mean matched
//! distance. Ties break toward the lowest `x` index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emd::{emd, EmdConfig, EmdError};
use crate::model::CloudSample;
use crate::rng::{sample_without_replacement, substream, tag};

/// Batched matching constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovMmdProtocol {
    pub subsample: usize,
    pub n_batches: usize,
    pub rng_seed: u64,
}

impl Default for CovMmdProtocol {
    fn default() -> Self {
        Self { subsample: 100, n_batches: 10, rng_seed: 0 }
    }
}

/// Effective per-batch subsample size after clamping to both samples.
pub fn effective_subsample(proto: &CovMmdProtocol, x: &CloudSample, y: &CloudSample) -> usize {
    proto.subsample.min(x.len()).min(y.len()).max(1)
}

/// Coverage and minimum matching distance, averaged over seeded batches.
/// Deterministic given the protocol seed, independent of thread count.
pub fn cov_mmd(
    x: &CloudSample,
    y: &CloudSample,
    proto: &CovMmdProtocol,
    cfg: &EmdConfig,
) -> Result<(f64, f64), EmdError> {
    let s = effective_subsample(proto, x, y);
    let per_batch: Vec<(f64, f64)> = (0..proto.n_batches)
        .into_par_iter()
        .map(|batch| -> Result<(f64, f64), EmdError> {
            let rng = substream(proto.rng_seed, &[tag::COV_BATCH, batch as u64]);
            let idx_x = sample_without_replacement(&mut rng.clone(), x.len(), s);
            let idx_y = sample_without_replacement(&mut rng.clone(), y.len(), s);

            let mut matched = vec![false; s];
            let mut total_distance = 0.0;
            for (jy, &iy) in idx_y.iter().enumerate() {
                let mut best = f64::INFINITY;
                let mut best_ix = 0usize;
                for (jx, &ix) in idx_x.iter().enumerate() {
                    let (d, _) = emd(&x.clouds()[ix], &y.clouds()[iy], cfg)
                        .map_err(|e| EmdError::Pair { row: jx, col: jy, source: Box::new(e) })?;
                    if d < best {
                        best = d;
                        best_ix = jx;
                    }
                }
                matched[best_ix] = true;
                total_distance += best;
            }
            let cov = matched.iter().filter(|&&m| m).count() as f64 / s as f64;
            let mmd = total_distance / s as f64;
            Ok((cov, mmd))
        })
        .collect::<Result<_, _>>()?;

    let n = per_batch.len() as f64;
    let cov = per_batch.iter().map(|v| v.0).sum::<f64>() / n;
    let mmd = per_batch.iter().map(|v| v.1).sum::<f64>() / n;
    Ok((cov, mmd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JetClass, Particle, ParticleCloud};

    fn cloud(parts: &[(f64, f64, f64)], capacity: usize) -> ParticleCloud {
        let mut slots: Vec<Particle> =
            parts.iter().map(|&(e, p, t)| Particle::genuine(e, p, t)).collect();
        slots.resize(capacity, Particle::padding());
        ParticleCloud::new(slots, capacity)
    }

    fn toy_sample(n: usize, seed: u64) -> CloudSample {
        crate::toygen::generate(&crate::toygen::ToyConfig {
            n_jets: n,
            max_particles: 8,
            split_prob: 0.7,
            angle_scale: 0.1,
            prongs: 2,
            rng_seed: seed,
        })
        .unwrap()
    }

    #[test]
    fn same_sample_same_draws_is_perfect() {
        let sample = toy_sample(30, 2);
        let proto = CovMmdProtocol { subsample: 12, n_batches: 3, rng_seed: 5 };
        let (cov, mmd) = cov_mmd(&sample, &sample, &proto, &EmdConfig::default()).unwrap();
        assert_eq!(cov, 1.0);
        assert!(mmd <= 1e-12);
    }

    #[test]
    fn copies_of_one_cloud_cover_one_target() {
        // Y holds `subsample` copies of a cloud that also sits in X: every
        // y matches that single x at distance zero.
        let distinct: Vec<ParticleCloud> =
            (0..6).map(|i| cloud(&[(0.05 * i as f64, -0.02 * i as f64, 1.0)], 2)).collect();
        let x = CloudSample::new(distinct.clone(), JetClass::Toy, None).unwrap();
        let y = CloudSample::new(vec![distinct[0].clone(); 6], JetClass::Toy, None).unwrap();
        let proto = CovMmdProtocol { subsample: 6, n_batches: 2, rng_seed: 1 };
        let (cov, mmd) = cov_mmd(&x, &y, &proto, &EmdConfig::default()).unwrap();
        assert!((cov - 1.0 / 6.0).abs() <= 1e-12);
        assert!(mmd <= 1e-12);
    }

    #[test]
    fn matches_brute_force_from_distance_matrix() {
        let x = toy_sample(9, 7);
        let y = toy_sample(9, 8);
        let proto = CovMmdProtocol { subsample: 9, n_batches: 1, rng_seed: 3 };
        let cfg = EmdConfig::default();
        let (cov, mmd) = cov_mmd(&x, &y, &proto, &cfg).unwrap();

        // With subsample == len the batch draw is a permutation, so the
        // full pairwise matrix reproduces the same matching.
        let matrix = crate::emd::emd_matrix(&x, &y, &cfg).unwrap();
        let mut matched = [false; 9];
        let mut total = 0.0;
        for j in 0..9 {
            let mut best = f64::INFINITY;
            let mut best_i = 0;
            for (i, row) in matrix.iter().enumerate() {
                if row[j] < best {
                    best = row[j];
                    best_i = i;
                }
            }
            matched[best_i] = true;
            total += best;
        }
        let cov_ref = matched.iter().filter(|&&m| m).count() as f64 / 9.0;
        let mmd_ref = total / 9.0;
        assert!((cov - cov_ref).abs() <= 1e-12);
        assert!((mmd - mmd_ref).abs() <= 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let x = toy_sample(20, 1);
        let y = toy_sample(20, 2);
        let proto = CovMmdProtocol { subsample: 10, n_batches: 4, rng_seed: 9 };
        let a = cov_mmd(&x, &y, &proto, &EmdConfig::default()).unwrap();
        let b = cov_mmd(&x, &y, &proto, &EmdConfig::default()).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn scaling_pt_keeps_cov_and_scales_mmd() {
        let x = toy_sample(12, 4);
        let y = toy_sample(12, 5);
        let scale = |s: &CloudSample, lambda: f64| {
            CloudSample::new(
                s.clouds()
                    .iter()
                    .map(|c| {
                        ParticleCloud::new(
                            c.particles()
                                .iter()
                                .map(|p| Particle { pt_rel: p.pt_rel * lambda, ..*p })
                                .collect(),
                            c.capacity(),
                        )
                    })
                    .collect(),
                JetClass::Toy,
                None,
            )
            .unwrap()
        };
        let proto = CovMmdProtocol { subsample: 8, n_batches: 2, rng_seed: 6 };
        let cfg = EmdConfig::default();
        let (cov, mmd) = cov_mmd(&x, &y, &proto, &cfg).unwrap();
        let (cov2, mmd2) = cov_mmd(&scale(&x, 2.0), &scale(&y, 2.0), &proto, &cfg).unwrap();
        assert_eq!(cov.to_bits(), cov2.to_bits());
        assert_eq!((2.0 * mmd).to_bits(), mmd2.to_bits());
    }
}
