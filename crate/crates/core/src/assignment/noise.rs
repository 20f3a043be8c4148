use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::matrix::{softmax_in_place, ProbabilityMatrix, QMatrix};
use crate::assignment::solve::floored_ln;
use crate::error::{Error, Result};

/// Replaces `ceil(epsilon * F)` uniformly chosen finite entries of `q` (out of
/// its `F` finite entries) with `boost`. Masked entries are never touched.
pub fn inject_exploration<R: Rng + ?Sized>(q: &QMatrix, epsilon: f64, boost: f64, rng: &mut R) -> QMatrix {
    let epsilon = epsilon.clamp(0.0, 1.0);
    let finite: Vec<usize> = (0..q.values.len()).filter(|&k| q.values[k].is_finite()).collect();
    let k = (epsilon * finite.len() as f64).ceil() as usize;
    let mut out = q.clone();
    if k == 0 {
        return out;
    }
    for idx in sample(rng, finite.len(), k.min(finite.len())) {
        out.values[finite[idx]] = boost;
    }
    out
}

/// Exploration noise applied to a probability matrix in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    None,
    /// Adds `N(0, sigma^2)` to each log-probability.
    Gaussian { sigma: f64 },
    /// Adds `U(-a, a)` to each log-probability.
    Uniform { a: f64 },
    /// Boosts each entry with probability `epsilon` to the row's maximum
    /// log-probability plus one.
    Bsc { epsilon: f64 },
}

impl NoiseSpec {
    pub fn magnitude(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Uniform { a } => a,
            NoiseSpec::Bsc { epsilon } => epsilon,
        }
    }

    /// Same kind of noise with a different magnitude.
    pub fn with_magnitude(&self, m: f64) -> NoiseSpec {
        match self {
            NoiseSpec::None => NoiseSpec::None,
            NoiseSpec::Gaussian { .. } => NoiseSpec::Gaussian { sigma: m },
            NoiseSpec::Uniform { .. } => NoiseSpec::Uniform { a: m },
            NoiseSpec::Bsc { .. } => NoiseSpec::Bsc { epsilon: m.min(1.0) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.magnitude();
        if !m.is_finite() || m < 0.0 {
            return Err(Error::Config(format!("noise magnitude must be finite and non-negative, got {m}")));
        }
        if let NoiseSpec::Bsc { epsilon } = self {
            if *epsilon > 1.0 {
                return Err(Error::Config(format!("BSC flip probability must be at most 1, got {epsilon}")));
            }
        }
        Ok(())
    }
}

/// Perturbs every available row of `p` and renormalizes it. Unavailable rows
/// and zero-magnitude noise leave the matrix untouched.
pub fn perturb_probabilities<R: Rng + ?Sized>(
    p: &ProbabilityMatrix,
    noise: NoiseSpec,
    rng: &mut R,
) -> Result<ProbabilityMatrix> {
    noise.validate()?;
    let mut out = p.clone();
    if noise.magnitude() == 0.0 {
        return Ok(out);
    }
    let width = p.width();
    let gaussian = match noise {
        NoiseSpec::Gaussian { sigma } => Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?),
        _ => None,
    };
    let mut logs = vec![0.0; width];
    for r in 0..p.rows {
        if !p.available[r] {
            continue;
        }
        for (l, &v) in logs.iter_mut().zip(p.row(r)) {
            *l = floored_ln(v);
        }
        let mut touched = true;
        match noise {
            NoiseSpec::None => touched = false,
            NoiseSpec::Gaussian { .. } => {
                let normal = gaussian.as_ref().expect("built above");
                logs.iter_mut().for_each(|l| *l += normal.sample(rng));
            }
            NoiseSpec::Uniform { a } => logs.iter_mut().for_each(|l| *l += rng.random_range(-a..a)),
            NoiseSpec::Bsc { epsilon } => {
                let boosted = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
                touched = false;
                for l in logs.iter_mut() {
                    if rng.random_bool(epsilon) {
                        *l = boosted;
                        touched = true;
                    }
                }
            }
        }
        if touched {
            softmax_in_place(&mut logs);
            out.probs[r * width..(r + 1) * width].copy_from_slice(&logs);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q4() -> QMatrix {
        QMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0], vec![true, true, false]).unwrap()
    }

    #[test]
    fn exploration_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(inject_exploration(&q4(), 0.0, 1e6, &mut rng), q4());
        let all = inject_exploration(&q4(), 1.0, 1e6, &mut rng);
        assert!(all.values[..4].iter().all(|v| *v == 1e6));
        assert!(all.values[4..].iter().all(|v| *v == f64::NEG_INFINITY));
    }

    #[test]
    fn exploration_count_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = [0usize; 4];
        let trials = 4000;
        for _ in 0..trials {
            let out = inject_exploration(&q4(), 0.5, 1e6, &mut rng);
            let replaced: Vec<usize> = (0..4).filter(|&k| out.values[k] == 1e6).collect();
            assert_eq!(replaced.len(), 2);
            replaced.iter().for_each(|&k| hits[k] += 1);
        }
        // Each finite entry is selected with probability 1/2.
        for h in hits {
            let freq = h as f64 / trials as f64;
            assert!((freq - 0.5).abs() < 3.0 * (0.25 / trials as f64).sqrt() + 1e-3, "{freq}");
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = ProbabilityMatrix::from_probs(1, 2, vec![0.2, 0.3, 0.5], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for noise in [NoiseSpec::None, NoiseSpec::Gaussian { sigma: 0.0 }, NoiseSpec::Uniform { a: 0.0 }, NoiseSpec::Bsc { epsilon: 0.0 }] {
            assert_eq!(perturb_probabilities(&p, noise, &mut rng).unwrap(), p);
        }
    }

    #[test]
    fn full_bsc_flattens_row() {
        let p = ProbabilityMatrix::from_probs(1, 1, vec![0.9, 0.1], vec![true]).unwrap();
        let out = perturb_probabilities(&p, NoiseSpec::Bsc { epsilon: 1.0 }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rows_stay_normalized_and_unavailable_untouched() {
        let p = ProbabilityMatrix::from_probs(2, 2, vec![0.2, 0.3, 0.5, 0.0, 0.0, 1.0], vec![true, false]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for noise in [NoiseSpec::Gaussian { sigma: 1.0 }, NoiseSpec::Uniform { a: 2.0 }, NoiseSpec::Bsc { epsilon: 0.4 }] {
            for _ in 0..50 {
                let out = perturb_probabilities(&p, noise, &mut rng).unwrap();
                out.check_rows(1e-9).unwrap();
                assert_eq!(out.row(1), p.row(1));
            }
        }
    }

    #[test]
    fn negative_magnitudes_rejected() {
        let p = ProbabilityMatrix::from_probs(1, 1, vec![0.5, 0.5], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for noise in [NoiseSpec::Gaussian { sigma: -1.0 }, NoiseSpec::Uniform { a: -0.1 }, NoiseSpec::Bsc { epsilon: -0.5 }] {
            assert!(perturb_probabilities(&p, noise, &mut rng).is_err());
        }
    }
}
