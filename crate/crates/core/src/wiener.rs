//! Source-image recovery with the multichannel Wiener filter.
//!
//! The DC bin is not modelled by either estimator; its observation is split
//! evenly across sources so that the images still sum to the mixture.

use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::fastfca::{FastFcaParams, TransformedStats};
use crate::fca::{self, FcaParams, PosteriorStats};
use crate::stft::{synthesize, ObservationTensor, StftConfig};

/// STFT-domain estimate of every source image.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparatedImages {
    pub tensors: Vec<ObservationTensor>,
}

impl SeparatedImages {
    pub fn sources(&self) -> usize {
        self.tensors.len()
    }

    pub fn image(&self, j: usize) -> &ObservationTensor {
        &self.tensors[j]
    }

    pub fn sum(&self) -> Option<ObservationTensor> {
        let first = self.tensors.first()?;
        let mut total = first.clone();
        for t in &self.tensors[1..] {
            total.accumulate(t).expect("images share one shape");
        }
        Some(total)
    }
}

fn split_dc(images: &mut [ObservationTensor], obs: &ObservationTensor) {
    let share = 1.0 / images.len() as f64;
    for n in 0..obs.frames() {
        let y = obs.dc_vector(n);
        for img in images.iter_mut() {
            for (x, &yi) in img.dc_vector_mut(n).iter_mut().zip(y) {
                *x = yi * share;
            }
        }
    }
}

/// Posterior means of a full-rank model as source images.
pub fn images_from_fca_stats(stats: &PosteriorStats, obs: &ObservationTensor) -> SeparatedImages {
    let mut tensors =
        vec![ObservationTensor::zeros(obs.channels(), obs.frames(), obs.bins()); stats.sources()];
    for (j, img) in tensors.iter_mut().enumerate() {
        for f in 0..obs.bins() {
            for n in 0..obs.frames() {
                img.vector_mut(n, f).copy_from_slice(stats.mu(j, n, f));
            }
        }
    }
    split_dc(&mut tensors, obs);
    SeparatedImages { tensors }
}

pub fn mmse_images_fca(params: &FcaParams, obs: &ObservationTensor) -> Result<SeparatedImages> {
    let stats = fca::e_step(params, obs)?;
    Ok(images_from_fca_stats(&stats, obs))
}

/// Back-transforms `μ̃` by solving `P^H μ = μ̃` with one LU factorization per bin.
pub fn mmse_images_fastfca(
    params: &FastFcaParams,
    stats: &TransformedStats,
    obs: &ObservationTensor,
) -> Result<SeparatedImages> {
    params.check_shape(obs)?;
    let order = params.order();
    let mut tensors =
        vec![ObservationTensor::zeros(order, params.frames(), params.bins()); params.sources()];
    for f in 0..params.bins() {
        let lu = params
            .basis(f)
            .lu()
            .map_err(|_| Error::SingularP { bin: f })?;
        for n in 0..params.frames() {
            for (j, img) in tensors.iter_mut().enumerate() {
                let mu = lu.solve_adjoint(stats.mu_tilde(j, n, f));
                img.vector_mut(n, f).copy_from_slice(&mu[..order]);
            }
        }
    }
    split_dc(&mut tensors, obs);
    Ok(SeparatedImages { tensors })
}

/// Largest entrywise deviation of `sum_j x_j` from `y`, over every bin including DC.
pub fn partition_error(images: &SeparatedImages, obs: &ObservationTensor) -> f64 {
    let Some(total) = images.sum() else {
        return f64::INFINITY;
    };
    let mut worst: f64 = 0.0;
    for n in 0..obs.frames() {
        for f in 0..obs.bins() {
            for (a, b) in total.vector(n, f).iter().zip(obs.vector(n, f)) {
                worst = worst.max((a - b).norm());
            }
        }
        for (a, b) in total.dc_vector(n).iter().zip(obs.dc_vector(n)) {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}

/// Time-domain images, cut or zero-padded to `len` samples.
pub fn resynthesize_images(
    images: &SeparatedImages,
    cfg: &StftConfig,
    len: usize,
) -> Result<Vec<Audio>> {
    images
        .tensors
        .iter()
        .map(|t| {
            let mut channels = synthesize(t, cfg)?;
            for c in channels.iter_mut() {
                c.resize(len, 0.0);
            }
            Audio::new(cfg.sample_rate, channels)
        })
        .collect()
}

/// Scales every image by one common factor so the loudest sample is `peak`.
pub fn peak_normalize(images: &mut [Audio], peak: f64) {
    let max = images.iter().map(Audio::peak).fold(0.0, f64::max);
    if max > 0.0 {
        let g = peak / max;
        for a in images.iter_mut() {
            for x in a.channels.iter_mut().flatten() {
                *x *= g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastfca::{self, reconstruct_s};
    use crate::fca::tests::random_instance;
    use crate::matcore::testutil::{random_complex, random_matrix};
    use crate::matcore::{ComplexMatrix, DiagonalPd, HermitianPd};
    use crate::stft::analyze;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fast(
        rng: &mut ChaCha8Rng,
        order: usize,
        sources: usize,
        frames: usize,
        bins: usize,
    ) -> FastFcaParams {
        let bases: Vec<ComplexMatrix> = (0..bins)
            .map(|_| {
                random_matrix(rng, order)
                    .add(&ComplexMatrix::identity(order).scale(Complex64::new(2.0, 0.0)))
            })
            .collect();
        let lam: Vec<Vec<f64>> = (0..sources * bins)
            .map(|_| (0..order).map(|_| rng.random_range(0.1..2.0)).collect())
            .collect();
        let pw: Vec<f64> = (0..sources * frames * bins)
            .map(|_| rng.random_range(0.1..2.0))
            .collect();
        FastFcaParams::from_fn(
            order,
            sources,
            frames,
            bins,
            |f| bases[f],
            |j, f| DiagonalPd::new(&lam[f * sources + j]).unwrap(),
            |j, n, f| pw[(f * frames + n) * sources + j],
        )
        .unwrap()
    }

    fn with_dc(rng: &mut ChaCha8Rng, mut obs: ObservationTensor) -> ObservationTensor {
        for n in 0..obs.frames() {
            for x in obs.dc_vector_mut(n) {
                *x = random_complex(rng);
            }
        }
        obs
    }

    #[test]
    fn single_source_returns_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let (p, obs) = random_instance(&mut rng, 3, 1, 4, 3);
        let obs = with_dc(&mut rng, obs);
        let images = mmse_images_fca(&p, &obs).unwrap();
        assert!(partition_error(&images, &obs) < 1e-12);
        for f in 0..3 {
            for n in 0..4 {
                for (a, b) in images.image(0).vector(n, f).iter().zip(obs.vector(n, f)) {
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dominant_source_takes_its_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (frames, bins) = (6, 2);
        let floor = 1e-8;
        let s = [HermitianPd::identity(2), HermitianPd::identity(2)];
        let p = FcaParams::from_fn(
            2,
            2,
            frames,
            bins,
            |j, _| s[j],
            |j, n, _| if (n % 2 == 0) == (j == 0) { 1.0 } else { floor },
        )
        .unwrap();
        let obs = ObservationTensor::from_fn(2, frames, bins, |_, _, _| random_complex(&mut rng));
        let images = mmse_images_fca(&p, &obs).unwrap();
        for f in 0..bins {
            for n in (0..frames).step_by(2) {
                let y = obs.vector(n, f);
                let norm: f64 = y.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                let err: f64 = images
                    .image(0)
                    .vector(n, f)
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(err <= 1e-3 * norm);
            }
        }
    }

    #[test]
    fn fca_images_equal_e_step_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (p, obs) = random_instance(&mut rng, 3, 3, 5, 4);
        let obs = with_dc(&mut rng, obs);
        let images = mmse_images_fca(&p, &obs).unwrap();
        let stats = fca::e_step(&p, &obs).unwrap();
        for j in 0..3 {
            for f in 0..4 {
                for n in 0..5 {
                    for (a, b) in images.image(j).vector(n, f).iter().zip(stats.mu(j, n, f)) {
                        assert!((a - b).norm() < 1e-12);
                    }
                }
            }
        }
        assert!(partition_error(&images, &obs) < 1e-8);
    }

    #[test]
    fn fastfca_identity_basis_gives_mu_tilde() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let params = random_fast(&mut rng, 3, 2, 4, 2)
            .with_bases(vec![ComplexMatrix::identity(3); 2])
            .unwrap();
        let obs = ObservationTensor::from_fn(3, 4, 2, |_, _, _| random_complex(&mut rng));
        let yt = fastfca::transform_observations(params.bases(), &obs);
        let stats = fastfca::e_step_diag(&params, &yt).unwrap();
        let images = mmse_images_fastfca(&params, &stats, &obs).unwrap();
        for j in 0..2 {
            for f in 0..2 {
                for n in 0..4 {
                    assert_eq!(images.image(j).vector(n, f), stats.mu_tilde(j, n, f));
                }
            }
        }
    }

    #[test]
    fn fastfca_matches_fca_on_reconstruction_and_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for order in 2..=4 {
            let params = random_fast(&mut rng, order, order, 5, 3);
            let obs = ObservationTensor::from_fn(order, 5, 3, |_, _, _| random_complex(&mut rng));
            let obs = with_dc(&mut rng, obs);
            let yt = fastfca::transform_observations(params.bases(), &obs);
            let stats = fastfca::e_step_diag(&params, &yt).unwrap();
            let fast = mmse_images_fastfca(&params, &stats, &obs).unwrap();
            let dense = FcaParams::from_fn(
                order,
                order,
                5,
                3,
                |j, f| reconstruct_s(&params, j, f).unwrap(),
                |j, n, f| params.power(j, n, f),
            )
            .unwrap();
            let full = mmse_images_fca(&dense, &obs).unwrap();
            for j in 0..order {
                for (a, b) in fast
                    .image(j)
                    .as_slice()
                    .iter()
                    .zip(full.image(j).as_slice())
                {
                    assert!((a - b).norm() < 1e-8);
                }
            }
            assert!(partition_error(&fast, &obs) < 1e-8);
        }
    }

    #[test]
    fn resynthesis_cases() {
        let cfg = StftConfig {
            frame_length: 64,
            frame_shift: 32,
            ..StftConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let len = 640;
        let audio: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let obs = analyze(&audio, &cfg).unwrap();

        let silent = SeparatedImages {
            tensors: vec![ObservationTensor::zeros(2, obs.frames(), obs.bins())],
        };
        let out = resynthesize_images(&silent, &cfg, len).unwrap();
        assert_eq!(out[0].energy(), 0.0);

        let passthrough = SeparatedImages {
            tensors: vec![obs.clone()],
        };
        let out = resynthesize_images(&passthrough, &cfg, len).unwrap();
        for (a, b) in out[0].channels.iter().zip(&audio) {
            for t in 64..len - 64 {
                assert!((a[t] - b[t]).abs() < 1e-10);
            }
        }

        let (p, _) = random_instance(&mut rng, 2, 3, obs.frames(), obs.bins());
        let images = mmse_images_fca(&p, &obs).unwrap();
        let outs = resynthesize_images(&images, &cfg, len).unwrap();
        let whole = resynthesize_images(&passthrough, &cfg, len).unwrap();
        let mut err = 0.0;
        let mut total = 0.0;
        for i in 0..2 {
            for t in 0..len {
                let s: f64 = outs.iter().map(|a| a.channels[i][t]).sum();
                err += (s - whole[0].channels[i][t]).powi(2);
                total += whole[0].channels[i][t].powi(2);
            }
        }
        assert!((err / total).sqrt() < 1e-8);
    }

    #[test]
    fn peak_normalization_is_common_gain() {
        let mut images = vec![
            Audio::new(16000, vec![vec![0.5, -0.25]]).unwrap(),
            Audio::new(16000, vec![vec![0.1, 0.2]]).unwrap(),
        ];
        peak_normalize(&mut images, 1.0);
        assert_eq!(images[0].channels[0], vec![1.0, -0.5]);
        assert!((images[1].channels[0][1] - 0.4).abs() < 1e-15);
    }
}
