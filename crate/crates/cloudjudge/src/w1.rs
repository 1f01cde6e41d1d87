//! One-dimensional Wasserstein distances between empirical feature
//! distributions, the batched W1-M / W1-P / W1-EFP protocol, and the
//! real-vs-real bootstrap baseline.
//!
//! Protocol ops draw `batch_size` clouds without replacement from each
//! side per batch and report the mean and the sample standard deviation
//! across batches. Per-batch draw streams are derived from
//! `(seed, batch index)` and the two sides consume identical streams, so
//! evaluating a sample against itself scores exactly zero and results
//! are independent of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efp::{efp_set_features, EfpConfig, EfpError};
use crate::kinematics::jet_mass;
use crate::model::{CloudSample, FeatureSeries};
use crate::rng::{sample_without_replacement, substream, tag};

#[derive(Debug, Error)]
pub enum W1Error {
    #[error("cannot compute a Wasserstein distance of an empty series")]
    EmptySeries,
    #[error("two runs with the same seed produced different scores")]
    DeterminismViolation,
    #[error(transparent)]
    Efp(#[from] EfpError),
}

/// Batched evaluation constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct W1Protocol {
    pub batch_size: usize,
    pub n_batches: usize,
    pub rng_seed: u64,
}

impl Default for W1Protocol {
    fn default() -> Self {
        Self { batch_size: 10_000, n_batches: 5, rng_seed: 0 }
    }
}

/// A batched score: mean over batches plus the sample standard deviation
/// across batches (zero for a single batch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Score {
    pub mean: f64,
    pub stderr: f64,
}

impl W1Score {
    fn from_batches(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            var.sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions.
///
/// Equal-length inputs reduce to the mean absolute difference of the
/// sorted values; unequal lengths integrate |F_x - F_y| over the merged
/// support, which is exact for empirical CDFs.
pub fn w1_1d(x: &FeatureSeries, y: &FeatureSeries) -> Result<f64, W1Error> {
    w1_slice(x.values(), y.values())
}

pub(crate) fn w1_slice(x: &[f64], y: &[f64]) -> Result<f64, W1Error> {
    if x.is_empty() || y.is_empty() {
        return Err(W1Error::EmptySeries);
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    if xs.len() == ys.len() {
        let n = xs.len() as f64;
        return Ok(xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n);
    }
    // Sweep the merged sorted support accumulating |F_x - F_y| * dt.
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let mut ix = 0usize;
    let mut iy = 0usize;
    let mut distance = 0.0;
    let mut prev = f64::NAN;
    while ix < xs.len() || iy < ys.len() {
        let t = match (xs.get(ix), ys.get(iy)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if !prev.is_nan() && t > prev {
            let fx = ix as f64 / nx;
            let fy = iy as f64 / ny;
            distance += (fx - fy).abs() * (t - prev);
        }
        while ix < xs.len() && xs[ix] == t {
            ix += 1;
        }
        while iy < ys.len() && ys[iy] == t {
            iy += 1;
        }
        prev = t;
    }
    Ok(distance)
}

/// Effective per-batch draw size: the configured batch size clamped to
/// what both samples can supply without replacement.
pub fn effective_batch_size(proto: &W1Protocol, real: &CloudSample, gen: &CloudSample) -> usize {
    proto.batch_size.min(real.len()).min(gen.len()).max(1)
}

/// Per-batch index draws. Both sides consume clones of one derived
/// stream, so equal-length sides see identical index sets.
fn batch_draws(
    proto: &W1Protocol,
    batch: usize,
    n_real: usize,
    n_gen: usize,
    k: usize,
) -> (Vec<usize>, Vec<usize>) {
    let rng = substream(proto.rng_seed, &[tag::W1_BATCH, batch as u64]);
    let real = sample_without_replacement(&mut rng.clone(), n_real, k);
    let gen = sample_without_replacement(&mut rng.clone(), n_gen, k);
    (real, gen)
}

fn batched_scores(
    proto: &W1Protocol,
    batch_value: impl Fn(usize) -> Result<f64, W1Error> + Sync,
) -> Result<W1Score, W1Error> {
    let values: Vec<f64> =
        (0..proto.n_batches).into_par_iter().map(&batch_value).collect::<Result<_, _>>()?;
    Ok(W1Score::from_batches(&values))
}

fn mass_table(sample: &CloudSample) -> Vec<f64> {
    sample.clouds().par_iter().map(jet_mass).collect()
}

/// W1 distance between the jet-mass distributions.
pub fn w1m(real: &CloudSample, gen: &CloudSample, proto: &W1Protocol) -> Result<W1Score, W1Error> {
    w1m_from_tables(&mass_table(real), &mass_table(gen), proto)
}

pub(crate) fn w1m_from_tables(
    real_mass: &[f64],
    gen_mass: &[f64],
    proto: &W1Protocol,
) -> Result<W1Score, W1Error> {
    let k = proto.batch_size.min(real_mass.len()).min(gen_mass.len()).max(1);
    batched_scores(proto, |batch| {
        let (ir, ig) = batch_draws(proto, batch, real_mass.len(), gen_mass.len(), k);
        let xs: Vec<f64> = ir.iter().map(|&i| real_mass[i]).collect();
        let ys: Vec<f64> = ig.iter().map(|&i| gen_mass[i]).collect();
        w1_slice(&xs, &ys)
    })
}

fn pooled_particle_features(sample: &CloudSample, indices: &[usize]) -> [Vec<f64>; 3] {
    let mut eta = Vec::new();
    let mut phi = Vec::new();
    let mut pt = Vec::new();
    for &i in indices {
        for p in sample.clouds()[i].unmasked() {
            eta.push(p.eta_rel);
            phi.push(p.phi_rel);
            pt.push(p.pt_rel);
        }
    }
    [eta, phi, pt]
}

/// W1 distance averaged over the three particle features, pooling the
/// genuine particles of the drawn clouds on each side.
pub fn w1p(real: &CloudSample, gen: &CloudSample, proto: &W1Protocol) -> Result<W1Score, W1Error> {
    let k = effective_batch_size(proto, real, gen);
    batched_scores(proto, |batch| {
        let (ir, ig) = batch_draws(proto, batch, real.len(), gen.len(), k);
        let fx = pooled_particle_features(real, &ir);
        let fy = pooled_particle_features(gen, &ig);
        let mut total = 0.0;
        for (xs, ys) in fx.iter().zip(fy.iter()) {
            total += w1_slice(xs, ys)?;
        }
        Ok(total / 3.0)
    })
}

/// W1 distance averaged over the five fixed energy-flow polynomials.
pub fn w1efp(
    real: &CloudSample,
    gen: &CloudSample,
    proto: &W1Protocol,
    cfg: &EfpConfig,
) -> Result<W1Score, W1Error> {
    let real_series = efp_set_features(real, cfg)?;
    let gen_series = efp_set_features(gen, cfg)?;
    w1efp_from_series(&real_series, &gen_series, proto)
}

pub(crate) fn w1efp_from_series(
    real_series: &[FeatureSeries],
    gen_series: &[FeatureSeries],
    proto: &W1Protocol,
) -> Result<W1Score, W1Error> {
    assert_eq!(real_series.len(), gen_series.len());
    let n_real = real_series[0].len();
    let n_gen = gen_series[0].len();
    let k = proto.batch_size.min(n_real).min(n_gen).max(1);
    batched_scores(proto, |batch| {
        let (ir, ig) = batch_draws(proto, batch, n_real, n_gen, k);
        let mut total = 0.0;
        for (sx, sy) in real_series.iter().zip(gen_series) {
            let xs: Vec<f64> = ir.iter().map(|&i| sx.values()[i]).collect();
            let ys: Vec<f64> = ig.iter().map(|&i| sy.values()[i]).collect();
            total += w1_slice(&xs, &ys)?;
        }
        Ok(total / real_series.len() as f64)
    })
}

/// Real-vs-real bootstrap baseline: two disjoint draws from one sample
/// per batch, scored exactly like `(w1m, w1p, w1efp)`.
pub fn baseline(
    real: &CloudSample,
    proto: &W1Protocol,
    cfg: &EfpConfig,
) -> Result<(W1Score, W1Score, W1Score), W1Error> {
    let masses = mass_table(real);
    let series = efp_set_features(real, cfg)?;
    baseline_from_tables(real, &masses, &series, proto)
}

pub(crate) fn baseline_from_tables(
    real: &CloudSample,
    masses: &[f64],
    series: &[FeatureSeries],
    proto: &W1Protocol,
) -> Result<(W1Score, W1Score, W1Score), W1Error> {
    let n = real.len();
    let k = proto.batch_size.min(n / 2).max(1);
    let per_batch: Vec<(f64, f64, f64)> = (0..proto.n_batches)
        .into_par_iter()
        .map(|batch| -> Result<(f64, f64, f64), W1Error> {
            let mut rng = substream(proto.rng_seed, &[tag::BASELINE_BATCH, batch as u64]);
            let draw = sample_without_replacement(&mut rng, n, 2 * k);
            let (ia, ib) = draw.split_at(k);

            let ma: Vec<f64> = ia.iter().map(|&i| masses[i]).collect();
            let mb: Vec<f64> = ib.iter().map(|&i| masses[i]).collect();
            let m = w1_slice(&ma, &mb)?;

            let fa = pooled_particle_features(real, ia);
            let fb = pooled_particle_features(real, ib);
            let mut p = 0.0;
            for (xs, ys) in fa.iter().zip(fb.iter()) {
                p += w1_slice(xs, ys)?;
            }
            p /= 3.0;

            let mut e = 0.0;
            for s in series {
                let xs: Vec<f64> = ia.iter().map(|&i| s.values()[i]).collect();
                let ys: Vec<f64> = ib.iter().map(|&i| s.values()[i]).collect();
                e += w1_slice(&xs, &ys)?;
            }
            e /= series.len() as f64;

            Ok((m, p, e))
        })
        .collect::<Result<_, _>>()?;

    let ms: Vec<f64> = per_batch.iter().map(|v| v.0).collect();
    let ps: Vec<f64> = per_batch.iter().map(|v| v.1).collect();
    let es: Vec<f64> = per_batch.iter().map(|v| v.2).collect();
    Ok((W1Score::from_batches(&ms), W1Score::from_batches(&ps), W1Score::from_batches(&es)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JetClass, ParticleCloud};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> FeatureSeries {
        FeatureSeries::new("s", values.to_vec()).unwrap()
    }

    #[test]
    fn identical_series_score_zero() {
        let x = series(&[0.3, 1.2, -0.5]);
        assert_eq!(w1_1d(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn point_masses() {
        assert_relative_eq!(
            w1_1d(&series(&[0.0]), &series(&[1.0])).unwrap(),
            1.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn sorted_pairing_hand_value() {
        let d = w1_1d(&series(&[0.0, 1.0]), &series(&[0.5, 1.5])).unwrap();
        assert_relative_eq!(d, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn empty_series_is_rejected() {
        let empty = FeatureSeries::new("e", vec![]).unwrap();
        assert!(matches!(w1_1d(&empty, &series(&[1.0])), Err(W1Error::EmptySeries)));
    }

    #[test]
    fn unequal_lengths_agree_with_replication() {
        let x = series(&[0.0, 0.25, 1.0]);
        let y = series(&[0.1, 0.5]);
        let d = w1_1d(&x, &y).unwrap();
        // Replicating both series to a common length makes the equal-length
        // path applicable; the two routes must agree.
        let xr = series(&[0.0, 0.0, 0.25, 0.25, 1.0, 1.0]);
        let yr = series(&[0.1, 0.1, 0.1, 0.5, 0.5, 0.5]);
        let dr = w1_1d(&xr, &yr).unwrap();
        assert!((d - dr).abs() <= 1e-12, "{d} vs {dr}");
    }

    #[test]
    fn translation_properties() {
        let x = series(&[0.1, 0.7, 0.3, 0.9]);
        let y = series(&[0.2, 0.6, 0.4]);
        let c = 0.5;
        let xc = series(&x.values().iter().map(|v| v + c).collect::<Vec<_>>());
        let yc = series(&y.values().iter().map(|v| v + c).collect::<Vec<_>>());
        let base = w1_1d(&x, &y).unwrap();
        assert!((w1_1d(&xc, &yc).unwrap() - base).abs() <= 1e-15);
        assert!((w1_1d(&xc, &x).unwrap() - c).abs() <= 1e-15);
    }

    proptest! {
        #[test]
        fn metric_properties(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..24),
            ys in proptest::collection::vec(-5.0f64..5.0, 1..24),
            zs in proptest::collection::vec(-5.0f64..5.0, 1..24),
        ) {
            let x = series(&xs);
            let y = series(&ys);
            let z = series(&zs);
            let dxy = w1_1d(&x, &y).unwrap();
            let dyx = w1_1d(&y, &x).unwrap();
            prop_assert_eq!(dxy.to_bits(), dyx.to_bits());
            prop_assert!(dxy >= 0.0);
            // Triangle inequality only binds for comparable sample counts.
            if xs.len() == ys.len() && ys.len() == zs.len() {
                let dxz = w1_1d(&x, &z).unwrap();
                let dyz = w1_1d(&y, &z).unwrap();
                prop_assert!(dxy <= dxz + dyz + 1e-12);
            }
        }

        #[test]
        fn replication_invariance(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..12),
            ys in proptest::collection::vec(-5.0f64..5.0, 1..12),
            reps in 2usize..4,
        ) {
            let x = series(&xs);
            let y = series(&ys);
            let d = w1_1d(&x, &y).unwrap();
            let repeat = |vals: &[f64]| {
                let mut out = Vec::new();
                for _ in 0..reps { out.extend_from_slice(vals); }
                out
            };
            let dr = w1_1d(&series(&repeat(&xs)), &series(&repeat(&ys))).unwrap();
            prop_assert!((d - dr).abs() <= 1e-12);
        }
    }

    fn toy_sample(n: usize, seed: u64) -> CloudSample {
        crate::toygen::generate(&crate::toygen::ToyConfig {
            n_jets: n,
            max_particles: 12,
            split_prob: 0.8,
            angle_scale: 0.1,
            prongs: 2,
            rng_seed: seed,
        })
        .unwrap()
    }

    #[test]
    fn same_sample_same_seed_scores_zero() {
        let sample = toy_sample(60, 5);
        let proto = W1Protocol { batch_size: 40, n_batches: 3, rng_seed: 9 };
        assert_eq!(w1m(&sample, &sample, &proto).unwrap().mean, 0.0);
        assert_eq!(w1p(&sample, &sample, &proto).unwrap().mean, 0.0);
        assert_eq!(w1efp(&sample, &sample, &proto, &EfpConfig::default()).unwrap().mean, 0.0);
    }

    #[test]
    fn protocol_ops_are_deterministic() {
        let a = toy_sample(80, 5);
        let b = toy_sample(80, 6);
        let proto = W1Protocol { batch_size: 50, n_batches: 4, rng_seed: 11 };
        let s1 = w1m(&a, &b, &proto).unwrap();
        let s2 = w1m(&a, &b, &proto).unwrap();
        assert_eq!(s1.mean.to_bits(), s2.mean.to_bits());
        assert_eq!(s1.stderr.to_bits(), s2.stderr.to_bits());
    }

    #[test]
    fn constant_sample_baseline_is_zero() {
        let cloud = ParticleCloud::from_genuine([(0.1, -0.1, 0.6), (-0.1, 0.1, 0.4)], 2);
        let sample = CloudSample::new(vec![cloud; 40], JetClass::Toy, None).unwrap();
        let proto = W1Protocol { batch_size: 10, n_batches: 3, rng_seed: 1 };
        let (m, p, e) = baseline(&sample, &proto, &EfpConfig::default()).unwrap();
        assert_eq!(m.mean, 0.0);
        assert_eq!(p.mean, 0.0);
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn baseline_is_seed_stable() {
        let sample = toy_sample(200, 3);
        let cfg = EfpConfig::default();
        let proto = |seed| W1Protocol { batch_size: 50, n_batches: 5, rng_seed: seed };
        let (m1, _, _) = baseline(&sample, &proto(1), &cfg).unwrap();
        let (m2, _, _) = baseline(&sample, &proto(2), &cfg).unwrap();
        let spread = m1.stderr + m2.stderr;
        assert!(
            (m1.mean - m2.mean).abs() <= 3.0 * spread.max(1e-12),
            "baselines {m1:?} vs {m2:?} disagree beyond mutual spread"
        );
    }

    #[test]
    fn phi_shift_moves_w1p_by_a_third() {
        let a = toy_sample(400, 21);
        let delta = 0.05;
        let shifted = CloudSample::new(
            a.clouds()
                .iter()
                .map(|c| {
                    ParticleCloud::new(
                        c.particles()
                            .iter()
                            .map(|p| {
                                if p.is_genuine() {
                                    crate::model::Particle { phi_rel: p.phi_rel + delta, ..*p }
                                } else {
                                    *p
                                }
                            })
                            .collect(),
                        c.capacity(),
                    )
                })
                .collect(),
            JetClass::Toy,
            None,
        )
        .unwrap();
        let proto = W1Protocol { batch_size: 200, n_batches: 4, rng_seed: 17 };
        let score = w1p(&a, &shifted, &proto).unwrap();
        // Only one of the three pooled features moves.
        assert!(
            (score.mean - delta / 3.0).abs() <= 0.1 * delta,
            "expected about {}, got {}",
            delta / 3.0,
            score.mean
        );
    }
}
