//! Synthetic reverberant mixtures for testing and benchmarking.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::audio::Audio;
use crate::error::{Error, Result};

/// Half-width of the windowed-sinc fractional delay kernel.
const SINC_HALF_WIDTH: usize = 16;

/// Simple room model: a linear microphone array, sources on a circle
/// around its centre, and an exponentially decaying diffuse tail whose
/// energy follows from the reverberation time and room volume.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomConfig {
    /// Microphone spacing in metres.
    pub mic_spacing: f64,
    /// Source distance from the array centre in metres.
    pub source_distance: f64,
    /// Reverberation time in seconds; zero gives anechoic responses.
    pub rt60: f64,
    /// Room volume in cubic metres.
    pub volume: f64,
    pub speed_of_sound: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            mic_spacing: 0.08,
            source_distance: 1.2,
            rt60: 0.3,
            volume: 100.0,
            speed_of_sound: 343.0,
        }
    }
}

impl RoomConfig {
    pub fn anechoic() -> Self {
        Self {
            rt60: 0.0,
            ..Self::default()
        }
    }

    /// Distance at which direct and diffuse energies are equal, `0.057 sqrt(V / RT60)`.
    pub fn critical_distance(&self) -> f64 {
        if self.rt60 > 0.0 {
            0.057 * (self.volume / self.rt60).sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Diffuse-to-direct energy ratio at the source distance.
    pub fn reverb_ratio(&self) -> f64 {
        (self.source_distance / self.critical_distance()).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub sources: usize,
    pub mics: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub room: RoomConfig,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sources: 3,
            mics: 3,
            duration_secs: 8.0,
            sample_rate: 16000,
            room: RoomConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub mixture: Audio,
    /// Reference source images, one multichannel signal per source.
    pub images: Vec<Audio>,
    pub dry: Vec<Vec<f64>>,
    /// `rirs[j][i]` is the response from source `j` to microphone `i`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    /// Source azimuths in radians, broadside = 0.
    pub azimuths: Vec<f64>,
}

/// Linear convolution computed with FFTs, truncated to `x.len()` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let size = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |s: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); size];
        for (d, &v) in b.iter_mut().zip(s) {
            d.re = v;
        }
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..x.len()].iter().map(|z| z.re * scale).collect()
}

/// `x_j = rir_j * s_j` per microphone and `y = sum_j x_j`.
pub fn synth_mixture(
    dry: &[Vec<f64>],
    rirs: &[Vec<Vec<f64>>],
    sample_rate: u32,
) -> Result<(Audio, Vec<Audio>)> {
    if dry.len() != rirs.len() {
        return Err(Error::DimensionMismatch {
            expected: dry.len(),
            actual: rirs.len(),
        });
    }
    let Some(first) = rirs.first() else {
        return Err(Error::InvalidConfig("scene has no sources".into()));
    };
    let mics = first.len();
    if mics == 0 {
        return Err(Error::InvalidConfig(
            "impulse response set has no channels".into(),
        ));
    }
    if let Some(bad) = rirs.iter().find(|r| r.len() != mics) {
        return Err(Error::ChannelCountMismatch {
            expected: mics,
            got: bad.len(),
        });
    }
    let len = dry[0].len();
    if let Some((channel, s)) = dry.iter().enumerate().find(|(_, s)| s.len() != len) {
        return Err(Error::ChannelLengthMismatch {
            channel,
            expected: len,
            got: s.len(),
        });
    }
    let mut images = Vec::with_capacity(dry.len());
    let mut mix = vec![vec![0.0; len]; mics];
    for (s, set) in dry.iter().zip(rirs) {
        let channels: Vec<Vec<f64>> = set.iter().map(|h| convolve(s, h)).collect();
        for (m, c) in mix.iter_mut().zip(&channels) {
            for (a, b) in m.iter_mut().zip(c) {
                *a += b;
            }
        }
        images.push(Audio::new(sample_rate, channels)?);
    }
    Ok((Audio::new(sample_rate, mix)?, images))
}

/// Hann-windowed sinc kernel delaying by `delay` samples, added into `h` with `gain`.
fn add_fractional_delay(h: &mut [f64], delay: f64, gain: f64) {
    let centre = delay.floor() as isize;
    let frac = delay - delay.floor();
    let hw = SINC_HALF_WIDTH as isize;
    for k in -hw + 1..=hw {
        let idx = centre + k;
        if idx < 0 || idx as usize >= h.len() {
            continue;
        }
        let t = k as f64 - frac;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            (PI * t).sin() / (PI * t)
        };
        let win = 0.5 + 0.5 * (PI * t / hw as f64).cos();
        h[idx as usize] += gain * sinc * win;
    }
}

/// Microphone positions along the x axis, centred on the origin.
pub fn mic_positions(mics: usize, spacing: f64) -> Vec<f64> {
    let mid = (mics as f64 - 1.0) / 2.0;
    (0..mics).map(|i| (i as f64 - mid) * spacing).collect()
}

/// Impulse responses from a source at `azimuth` to every microphone.
pub fn synthetic_rirs(
    room: &RoomConfig,
    mics: usize,
    azimuth: f64,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let fs = sample_rate as f64;
    let (sx, sy) = (
        room.source_distance * azimuth.sin(),
        room.source_distance * azimuth.cos(),
    );
    let positions = mic_positions(mics, room.mic_spacing);
    let dists: Vec<f64> = positions
        .iter()
        .map(|&mx| ((sx - mx).powi(2) + sy * sy).sqrt())
        .collect();
    let min_delay = dists.iter().fold(f64::INFINITY, |m, &d| m.min(d)) / room.speed_of_sound * fs;
    // keep the earliest arrival a few samples in, so the sinc kernel is not cut
    let offset = SINC_HALF_WIDTH as f64 - min_delay.floor();
    let tail_len = (room.rt60 * fs).ceil() as usize;
    let max_delay = dists.iter().fold(0.0f64, |m, &d| m.max(d)) / room.speed_of_sound * fs + offset;
    let len = max_delay.ceil() as usize + SINC_HALF_WIDTH + 1 + tail_len;
    let decay = if room.rt60 > 0.0 {
        3.0 * 10f64.ln() / (room.rt60 * fs)
    } else {
        0.0
    };
    dists
        .iter()
        .map(|&d| {
            let mut h = vec![0.0; len];
            let delay = d / room.speed_of_sound * fs + offset;
            let gain = 1.0 / d;
            add_fractional_delay(&mut h, delay, gain);
            let reverb_ratio = room.reverb_ratio();
            if tail_len > 0 && reverb_ratio > 0.0 {
                let start = delay.ceil() as usize + 1;
                // geometric sum of exp(-2 decay t) gives the tail energy normalizer
                let energy = 1.0 / (1.0 - (-2.0 * decay).exp());
                let amp = gain * (reverb_ratio / energy).sqrt();
                for t in 0..tail_len.min(len - start) {
                    let z: f64 = StandardNormal.sample(rng);
                    h[start + t] += amp * z * (-decay * t as f64).exp();
                }
            }
            h
        })
        .collect()
}

/// Seeded speech-like signal: voiced syllables with drifting pitch and a few
/// formant-like resonances, unvoiced noise bursts, and pauses. Unit RMS.
pub fn speech_like(len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut out = vec![0.0; len];
    let base_f0 = rng.random_range(90.0..240.0);
    let mut t = (rng.random_range(0.0..0.3) * fs) as usize;
    while t < len {
        let syllable = (rng.random_range(0.08..0.35) * fs) as usize;
        let end = (t + syllable).min(len);
        if rng.random_bool(0.7) {
            let f0_start = base_f0 * rng.random_range(0.8..1.25);
            let f0_end = f0_start * rng.random_range(0.85..1.15);
            let formants = [
                rng.random_range(300.0..900.0),
                rng.random_range(900.0..2400.0),
                rng.random_range(2400.0..3500.0),
            ];
            let amp = rng.random_range(0.3..1.0);
            let mut phase = 0.0;
            let n = (end - t) as f64;
            for (k, x) in out[t..end].iter_mut().enumerate() {
                let u = k as f64 / n;
                let f0 = f0_start + (f0_end - f0_start) * u;
                phase += 2.0 * PI * f0 / fs;
                let env = (PI * u).sin().powi(2);
                let mut s = 0.0;
                let mut h = 1;
                while h as f64 * f0 < 0.45 * fs && h <= 40 {
                    let fh = h as f64 * f0;
                    let weight: f64 = (formants
                        .iter()
                        .map(|&fm| 1.0 / (1.0 + ((fh - fm) / 200.0).powi(2)))
                        .sum::<f64>()
                        + 0.05)
                        / (h as f64).sqrt();
                    s += weight * (h as f64 * phase).sin();
                    h += 1;
                }
                *x += amp * env * s;
            }
        } else {
            let amp = rng.random_range(0.1..0.5);
            let n = (end - t) as f64;
            let mut prev = 0.0;
            for (k, x) in out[t..end].iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                // first difference tilts the burst towards high frequencies
                let env = (PI * k as f64 / n).sin();
                *x += amp * env * (z - prev);
                prev = z;
            }
        }
        t = end + (rng.random_range(0.02..0.4) * fs) as usize;
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        for x in out.iter_mut() {
            *x /= rms;
        }
    }
    out
}

/// Evenly spread azimuths in `[-60°, 60°]` with a small seeded jitter.
fn azimuths(sources: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let span = 120f64.to_radians();
    (0..sources)
        .map(|j| {
            let centre = if sources == 1 {
                0.0
            } else {
                -span / 2.0 + span * j as f64 / (sources - 1) as f64
            };
            centre + rng.random_range(-5f64..5.0).to_radians()
        })
        .collect()
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    if cfg.sources == 0 || cfg.mics == 0 {
        return Err(Error::InvalidConfig(
            "scene needs at least one source and one microphone".into(),
        ));
    }
    if !(cfg.duration_secs > 0.0) || cfg.sample_rate == 0 {
        return Err(Error::InvalidConfig(
            "scene duration and sample rate must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = (cfg.duration_secs * cfg.sample_rate as f64).round() as usize;
    let az = azimuths(cfg.sources, &mut rng);
    let dry: Vec<Vec<f64>> = (0..cfg.sources)
        .map(|_| speech_like(len, cfg.sample_rate, &mut rng))
        .collect();
    let rirs: Vec<Vec<Vec<f64>>> = az
        .iter()
        .map(|&a| synthetic_rirs(&cfg.room, cfg.mics, a, cfg.sample_rate, &mut rng))
        .collect();
    let (mixture, images) = synth_mixture(&dry, &rirs, cfg.sample_rate)?;
    Ok(Scene {
        mixture,
        images,
        dry,
        rirs,
        azimuths: az,
    })
}
