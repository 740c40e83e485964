//! Multichannel sample buffers and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Planar multichannel audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if let Some((channel, ch)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(Error::ChannelLengthMismatch {
                channel,
                expected: len,
                got: ch.len(),
            });
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn silence(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; channels],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|x| x * x).sum()
    }

    pub fn truncate(&mut self, len: usize) {
        for c in &mut self.channels {
            c.truncate(len);
        }
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedWav("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, 24) | (SampleFormat::Int, 32) => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!("{bits}-bit {fmt:?}")));
        }
    };
    let len = interleaved.len() / channels;
    let mut planar = vec![Vec::with_capacity(len); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &s) in planar.iter_mut().zip(frame) {
            c.push(s);
        }
    }
    Audio::new(spec.sample_rate, planar)
}

/// Writes 32-bit float PCM.
pub fn write_wav(path: impl AsRef<Path>, audio: &Audio) -> Result<()> {
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for t in 0..audio.len() {
        for c in &audio.channels {
            writer.write_sample(c[t] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
