//! End-to-end separation and benchmarking on top of the estimators.

use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::evalkit::{
    compute_sdr, expected_counts, measure_rtf, Algorithm, EvalReport, OpCounters,
};
use crate::fastfca::run_fastfca;
use crate::fca::{run_fca, FcaParams};
use crate::init::{fastfca_from_fca, init_diffuse, init_oracle, InitMethod};
use crate::scene::{generate_scene, SceneConfig};
use crate::stft::{analyze, ObservationTensor, StftConfig};
use crate::wiener::{
    images_from_fca_stats, mmse_images_fastfca, resynthesize_images, SeparatedImages,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub inner_k: usize,
    pub stft: StftConfig,
    pub init: InitMethod,
    /// Number of sources; ignored by the oracle initializer, which uses one per reference.
    pub sources: usize,
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FastFca,
            iterations: 20,
            inner_k: 1,
            stft: StftConfig::default(),
            init: InitMethod::Oracle,
            sources: 3,
            seed: 0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.inner_k == 0 {
            return Err(Error::InvalidConfig("inner_k must be at least 1".into()));
        }
        if self.init == InitMethod::Diffuse && self.sources == 0 {
            return Err(Error::InvalidConfig("sources must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of one estimator run.
#[derive(Clone, Debug)]
pub struct Separation {
    pub algorithm: Algorithm,
    pub images: Vec<Audio>,
    pub stft_images: SeparatedImages,
    pub observation: ObservationTensor,
    /// Totals over the whole run.
    pub counters: OpCounters,
    /// Real-time factor of the parameter estimation alone.
    pub rtf: f64,
    pub iterations: usize,
    pub inner_k: usize,
}

impl Separation {
    pub fn order(&self) -> usize {
        self.observation.channels()
    }

    pub fn frames(&self) -> usize {
        self.observation.frames()
    }

    pub fn bins(&self) -> usize {
        self.observation.bins()
    }

    pub fn sources(&self) -> usize {
        self.images.len()
    }

    pub fn counters_per_iteration(&self) -> OpCounters {
        self.counters
            .per_iteration(self.iterations)
            .unwrap_or(self.counters)
    }
}

/// Builds the FCA starting point; the oracle initializer needs reference images.
pub fn initial_params(
    obs: &ObservationTensor,
    references: Option<&[Audio]>,
    cfg: &SeparationConfig,
) -> Result<FcaParams> {
    match cfg.init {
        InitMethod::Oracle => {
            let refs = references.ok_or_else(|| {
                Error::InvalidConfig("oracle initialization needs reference source images".into())
            })?;
            let tensors = refs
                .iter()
                .map(|r| analyze(&r.channels, &cfg.stft))
                .collect::<Result<Vec<_>>>()?;
            init_oracle(&tensors, obs)
        }
        InitMethod::Diffuse => init_diffuse(obs, cfg.sources, cfg.seed),
    }
}

/// Runs the configured estimator from `init` and applies the Wiener filter.
/// Only the estimator call is timed.
pub fn separate_from_init(
    obs: &ObservationTensor,
    init: &FcaParams,
    cfg: &SeparationConfig,
    len: usize,
) -> Result<Separation> {
    cfg.validate()?;
    let duration = len as f64 / cfg.stft.sample_rate as f64;
    let (stft_images, counters, rtf) = match cfg.algorithm {
        Algorithm::Fca => {
            let (run, rtf) = measure_rtf(|| run_fca(obs, init, cfg.iterations), duration);
            let run = run?;
            (images_from_fca_stats(&run.stats, obs), run.counters, rtf)
        }
        Algorithm::FastFca => {
            let start = fastfca_from_fca(init)?;
            let (run, rtf) = measure_rtf(
                || run_fastfca(obs, &start, cfg.iterations, cfg.inner_k),
                duration,
            );
            let run = run?;
            (
                mmse_images_fastfca(&run.params, &run.stats, obs)?,
                run.counters,
                rtf,
            )
        }
    };
    let images = resynthesize_images(&stft_images, &cfg.stft, len)?;
    Ok(Separation {
        algorithm: cfg.algorithm,
        images,
        stft_images,
        observation: obs.clone(),
        counters,
        rtf,
        iterations: cfg.iterations,
        inner_k: cfg.inner_k,
    })
}

pub fn separate(
    mixture: &Audio,
    references: Option<&[Audio]>,
    cfg: &SeparationConfig,
) -> Result<Separation> {
    cfg.validate()?;
    if mixture.sample_rate != cfg.stft.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: cfg.stft.sample_rate,
            got: mixture.sample_rate,
        });
    }
    if let Some(refs) = references {
        for r in refs {
            if r.num_channels() != mixture.num_channels() {
                return Err(Error::ChannelCountMismatch {
                    expected: mixture.num_channels(),
                    got: r.num_channels(),
                });
            }
            if r.len() != mixture.len() {
                return Err(Error::LengthMismatch {
                    reference: r.len(),
                    estimate: mixture.len(),
                });
            }
        }
    }
    let obs = analyze(&mixture.channels, &cfg.stft)?;
    let init = initial_params(&obs, references, cfg)?;
    separate_from_init(&obs, &init, cfg, mixture.len())
}

/// SDR of each separated image and of the unprocessed mixture against the references.
pub fn evaluate(
    sep: &Separation,
    references: &[Audio],
    mixture: &Audio,
    trial: usize,
) -> Result<EvalReport> {
    if references.len() != sep.images.len() {
        return Err(Error::DimensionMismatch {
            expected: references.len(),
            actual: sep.images.len(),
        });
    }
    let sdr_per_source = references
        .iter()
        .zip(&sep.images)
        .map(|(r, e)| compute_sdr(&r.channels, &e.channels))
        .collect::<Result<Vec<_>>>()?;
    let sdr_input = references
        .iter()
        .map(|r| compute_sdr(&r.channels, &mixture.channels))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        algorithm: sep.algorithm,
        order: sep.order(),
        sources: sep.sources(),
        frames: sep.frames(),
        bins: sep.bins(),
        iterations: sep.iterations,
        inner_k: sep.inner_k,
        rtf: sep.rtf,
        sdr_per_source,
        sdr_input,
        counters: sep.counters_per_iteration(),
        trial,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub scene: SceneConfig,
    /// Shared settings; `algorithm` is overridden per run.
    pub separation: SeparationConfig,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            separation: SeparationConfig::default(),
            algorithms: vec![Algorithm::Fca, Algorithm::FastFca],
            trials: 1,
        }
    }
}

/// Heavy-operation ratio FCA / FastFCA-AS per iteration, counting inversions and products alike.
pub fn counter_ratio(
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    inner_k: usize,
) -> f64 {
    let fca = expected_counts(Algorithm::Fca, order, sources, frames, bins, inner_k);
    let fast = expected_counts(Algorithm::FastFca, order, sources, frames, bins, inner_k);
    (fca.inversions + fca.matmuls) as f64 / (fast.inversions + fast.matmuls) as f64
}

/// Runs every algorithm on the same scenes and starting points, one trial per seed
/// `scene.seed + t`. Reports are in trial order, then algorithm order.
pub fn bench(cfg: &BenchConfig, mut on_report: impl FnMut(&EvalReport)) -> Result<Vec<EvalReport>> {
    cfg.separation.validate()?;
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let mut reports = Vec::with_capacity(cfg.trials * cfg.algorithms.len());
    for trial in 0..cfg.trials {
        let scene_cfg = SceneConfig {
            seed: cfg.scene.seed + trial as u64,
            ..cfg.scene.clone()
        };
        let scene = generate_scene(&scene_cfg)?;
        let obs = analyze(&scene.mixture.channels, &cfg.separation.stft)?;
        let sep_cfg = SeparationConfig {
            sources: scene_cfg.sources,
            seed: cfg.separation.seed + trial as u64,
            ..cfg.separation.clone()
        };
        let init = initial_params(&obs, Some(&scene.images), &sep_cfg)?;
        for &algorithm in &cfg.algorithms {
            let run_cfg = SeparationConfig {
                algorithm,
                ..sep_cfg.clone()
            };
            let sep = separate_from_init(&obs, &init, &run_cfg, scene.mixture.len())?;
            let report = evaluate(&sep, &scene.images, &scene.mixture, trial)?;
            on_report(&report);
            reports.push(report);
        }
    }
    Ok(reports)
}

/// Mean RTF of `numerator` over mean RTF of `denominator`, or `None` if either is absent.
pub fn rtf_ratio(
    reports: &[EvalReport],
    numerator: Algorithm,
    denominator: Algorithm,
) -> Option<f64> {
    let mean_rtf = |a: Algorithm| {
        let xs: Vec<f64> = reports
            .iter()
            .filter(|r| r.algorithm == a)
            .map(|r| r.rtf)
            .collect();
        (!xs.is_empty()).then(|| crate::evalkit::mean(&xs))
    };
    Some(mean_rtf(numerator)? / mean_rtf(denominator)?)
}
