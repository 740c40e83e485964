//! Flat run configuration: defaults, then a TOML file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use fca_core::scene::{RoomConfig, SceneConfig};
use fca_core::{Algorithm, BenchConfig, InitMethod, SeparationConfig, StftConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: String,
    pub iterations: usize,
    pub inner_k: usize,
    pub init: String,
    pub seed: u64,
    pub sources: usize,
    pub mics: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub rt60: f64,
    pub room_volume: f64,
    pub mic_spacing: f64,
    pub source_distance: f64,
    pub trials: usize,
    pub peak_normalize: bool,
    pub mixture: Option<PathBuf>,
    pub references: Vec<PathBuf>,
    pub dry: Vec<PathBuf>,
    pub rirs: Vec<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sep = SeparationConfig::default();
        let scene = SceneConfig::default();
        Self {
            algorithm: sep.algorithm.to_string(),
            iterations: sep.iterations,
            inner_k: sep.inner_k,
            init: sep.init.to_string(),
            seed: sep.seed,
            sources: scene.sources,
            mics: scene.mics,
            duration_secs: scene.duration_secs,
            sample_rate: scene.sample_rate,
            frame_length: sep.stft.frame_length,
            frame_shift: sep.stft.frame_shift,
            rt60: scene.room.rt60,
            room_volume: scene.room.volume,
            mic_spacing: scene.room.mic_spacing,
            source_distance: scene.room.source_distance,
            trials: 1,
            peak_normalize: false,
            mixture: None,
            references: Vec::new(),
            dry: Vec::new(),
            rirs: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

/// Flags shared by every subcommand that runs the pipeline. Each one, when
/// given, overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Flat TOML file with any subset of the run settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Estimator: fca or fastfca
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Outer EM iterations
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Fixed-point iterations per outer iteration (fastfca)
    #[arg(long)]
    pub inner_k: Option<usize>,
    /// Initializer: oracle or diffuse
    #[arg(long)]
    pub init: Option<String>,
    /// Seed for scene synthesis and the diffuse initializer
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of sources (synthetic scenes and diffuse init)
    #[arg(long)]
    pub sources: Option<usize>,
    /// Number of microphones in synthetic scenes
    #[arg(long)]
    pub mics: Option<usize>,
    /// Synthetic scene length in seconds
    #[arg(long)]
    pub duration: Option<f64>,
    /// Reverberation time of synthetic scenes in seconds
    #[arg(long)]
    pub rt60: Option<f64>,
    /// Benchmark trials
    #[arg(long)]
    pub trials: Option<usize>,
    /// Mixture WAV to separate instead of a synthetic scene
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Reference source-image WAVs, one per source
    #[arg(long, value_delimiter = ',')]
    pub references: Option<Vec<PathBuf>>,
    /// Dry mono source WAVs for synth
    #[arg(long, value_delimiter = ',')]
    pub dry: Option<Vec<PathBuf>>,
    /// Impulse-response WAVs for synth, one multichannel file per source
    #[arg(long, value_delimiter = ',')]
    pub rirs: Option<Vec<PathBuf>>,
    /// Scale separated images by one common gain to a 0.99 peak
    #[arg(long)]
    pub peak_normalize: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($field:ident <- $flag:expr),* $(,)?) => {
                $(if let Some(v) = $flag.clone() {
                    cfg.$field = v;
                })*
            };
        }
        set!(
            algorithm <- o.algorithm,
            iterations <- o.iterations,
            inner_k <- o.inner_k,
            init <- o.init,
            seed <- o.seed,
            out <- o.out,
            sources <- o.sources,
            mics <- o.mics,
            duration_secs <- o.duration,
            rt60 <- o.rt60,
            trials <- o.trials,
            references <- o.references,
            dry <- o.dry,
            rirs <- o.rirs,
        );
        if o.mixture.is_some() {
            cfg.mixture = o.mixture.clone();
        }
        if o.peak_normalize {
            cfg.peak_normalize = true;
        }
        cfg.separation()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Ok(self.algorithm.parse()?)
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            frame_length: self.frame_length,
            frame_shift: self.frame_shift,
            sample_rate: self.sample_rate,
            ..StftConfig::default()
        }
    }

    pub fn separation(&self) -> Result<SeparationConfig> {
        let init: InitMethod = self.init.parse()?;
        let cfg = SeparationConfig {
            algorithm: self.algorithm()?,
            iterations: self.iterations,
            inner_k: self.inner_k,
            stft: self.stft(),
            init,
            sources: self.sources,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            sources: self.sources,
            mics: self.mics,
            duration_secs: self.duration_secs,
            sample_rate: self.sample_rate,
            room: RoomConfig {
                mic_spacing: self.mic_spacing,
                source_distance: self.source_distance,
                rt60: self.rt60,
                volume: self.room_volume,
                ..RoomConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn bench(&self) -> Result<BenchConfig> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        Ok(BenchConfig {
            scene: self.scene(),
            separation: self.separation()?,
            trials: self.trials,
            ..BenchConfig::default()
        })
    }
}
