//! Separation quality, real-time factor, and heavy-operation accounting.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::time::Instant;

use crate::error::{Error, Result};

/// SDR reported when the error energy vanishes relative to the reference.
pub const SDR_CAP_DB: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Fca,
    FastFca,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fca => "fca",
            Algorithm::FastFca => "fastfca",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fca" => Ok(Algorithm::Fca),
            "fastfca" | "fastfca-as" => Ok(Algorithm::FastFca),
            other => Err(Error::InvalidConfig(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Tallies of order-I matrix inversions and I×I by I×I products.
///
/// Operations on diagonal matrices are O(I) and never counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub inversions: u64,
    pub matmuls: u64,
}

impl OpCounters {
    pub fn is_zero(&self) -> bool {
        self.inversions == 0 && self.matmuls == 0
    }

    /// Per-iteration counts; `None` when the total is not an exact multiple.
    pub fn per_iteration(&self, iterations: usize) -> Option<OpCounters> {
        if iterations == 0 {
            return self.is_zero().then_some(*self);
        }
        let it = iterations as u64;
        (self.inversions % it == 0 && self.matmuls % it == 0).then(|| OpCounters {
            inversions: self.inversions / it,
            matmuls: self.matmuls / it,
        })
    }
}

impl Add for OpCounters {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            inversions: self.inversions + rhs.inversions,
            matmuls: self.matmuls + rhs.matmuls,
        }
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Heavy operations per iteration predicted by the complexity analysis.
///
/// FCA: `(J + N) F` inversions and `2 J N F` products.
/// FastFCA-AS: `(I + 1) F K` inversions and no products.
pub fn expected_counts(
    algorithm: Algorithm,
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    inner_k: usize,
) -> OpCounters {
    let (i, j, n, f, k) = (
        order as u64,
        sources as u64,
        frames as u64,
        bins as u64,
        inner_k as u64,
    );
    match algorithm {
        Algorithm::Fca => OpCounters {
            inversions: (j + n) * f,
            matmuls: 2 * j * n * f,
        },
        Algorithm::FastFca => OpCounters {
            inversions: (i + 1) * f * k,
            matmuls: 0,
        },
    }
}

/// Energy-ratio SDR `10 log10(||s||^2 / ||s - s_hat||^2)` over all channels.
pub fn compute_sdr(reference: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::ChannelCountMismatch {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    let mut signal = 0.0;
    let mut error = 0.0;
    for (r, e) in reference.iter().zip(estimate) {
        if r.len() != e.len() {
            return Err(Error::LengthMismatch {
                reference: r.len(),
                estimate: e.len(),
            });
        }
        for (a, b) in r.iter().zip(e) {
            signal += a * a;
            error += (a - b) * (a - b);
        }
    }
    if signal == 0.0 {
        return Err(Error::ZeroReference);
    }
    if error < 1e-20 * signal {
        return Ok(SDR_CAP_DB);
    }
    Ok(10.0 * (signal / error).log10())
}

pub fn rtf(elapsed_secs: f64, signal_duration_secs: f64) -> f64 {
    elapsed_secs / signal_duration_secs
}

/// Runs `run` and returns its output with the real-time factor of its wall-clock time.
pub fn measure_rtf<T>(run: impl FnOnce() -> T, signal_duration_secs: f64) -> (T, f64) {
    let start = Instant::now();
    let out = run();
    let elapsed = start.elapsed().as_secs_f64();
    (out, rtf(elapsed, signal_duration_secs))
}

/// One trial of one estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub order: usize,
    pub sources: usize,
    pub frames: usize,
    pub bins: usize,
    pub iterations: usize,
    pub inner_k: usize,
    pub rtf: f64,
    pub sdr_per_source: Vec<f64>,
    pub sdr_input: Vec<f64>,
    /// Per-iteration counts, or the run totals when `iterations == 0`.
    pub counters: OpCounters,
    pub trial: usize,
}

impl EvalReport {
    pub fn sdr_mean(&self) -> f64 {
        mean(&self.sdr_per_source)
    }

    pub fn sdr_input_mean(&self) -> f64 {
        mean(&self.sdr_input)
    }

    pub fn csv_header(sources: usize) -> String {
        let mut cols: Vec<String> = [
            "algorithm",
            "I",
            "J",
            "N",
            "F",
            "iterations",
            "K",
            "rtf",
            "sdr_mean",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend((1..=sources).map(|j| format!("sdr_{j}")));
        cols.extend(["inversions", "matmuls", "sdr_input_mean", "trial"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.algorithm.to_string(),
            self.order.to_string(),
            self.sources.to_string(),
            self.frames.to_string(),
            self.bins.to_string(),
            self.iterations.to_string(),
            self.inner_k.to_string(),
            format!("{:.6}", self.rtf),
            format!("{:.4}", self.sdr_mean()),
        ];
        cols.extend(self.sdr_per_source.iter().map(|s| format!("{s:.4}")));
        cols.push(self.counters.inversions.to_string());
        cols.push(self.counters.matmuls.to_string());
        cols.push(format!("{:.4}", self.sdr_input_mean()));
        cols.push(self.trial.to_string());
        cols.join(",")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} (I={}, J={}, N={}, F={}, iterations={}, K={})",
            self.algorithm,
            self.order,
            self.sources,
            self.frames,
            self.bins,
            self.iterations,
            self.inner_k
        )?;
        writeln!(f, "  RTF            {:.5}", self.rtf)?;
        write!(f, "  SDR [dB]       mean {:.2} (", self.sdr_mean())?;
        for (j, s) in self.sdr_per_source.iter().enumerate() {
            if j > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{s:.2}")?;
        }
        writeln!(f, "), input mean {:.2}", self.sdr_input_mean())?;
        write!(
            f,
            "  per iteration  {} inversions, {} matmuls",
            self.counters.inversions, self.counters.matmuls
        )
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn expected_counts_match_published_arithmetic() {
        assert_eq!(
            expected_counts(Algorithm::Fca, 3, 3, 249, 512, 1),
            OpCounters {
                inversions: 129024,
                matmuls: 764928
            }
        );
        assert_eq!(
            expected_counts(Algorithm::FastFca, 3, 3, 249, 512, 1),
            OpCounters {
                inversions: 2048,
                matmuls: 0
            }
        );
        assert_eq!(
            expected_counts(Algorithm::Fca, 1, 1, 1, 1, 1),
            OpCounters {
                inversions: 2,
                matmuls: 2
            }
        );
    }

    #[test]
    fn sdr_identity_and_silence() {
        let s = vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 0.25]];
        assert_eq!(compute_sdr(&s, &s).unwrap(), SDR_CAP_DB);
        let zeros = vec![vec![0.0; 3]; 2];
        assert_eq!(compute_sdr(&s, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn sdr_of_noise_at_minus_twenty_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..20000)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let noise: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..20000)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect::<Vec<f64>>()
            })
            .collect();
        let es: f64 = s.iter().flatten().map(|x| x * x).sum();
        let en: f64 = noise.iter().flatten().map(|x| x * x).sum();
        let g = (es / en * 0.01).sqrt();
        let est: Vec<Vec<f64>> = s
            .iter()
            .zip(&noise)
            .map(|(a, b)| a.iter().zip(b).map(|(x, n)| x + g * n).collect())
            .collect();
        let sdr = compute_sdr(&s, &est).unwrap();
        assert!((sdr - 20.0).abs() < 0.1, "sdr = {sdr}");
        // scale-sensitive: halving the estimate costs energy
        let half: Vec<Vec<f64>> = s
            .iter()
            .map(|c| c.iter().map(|x| 0.5 * x).collect())
            .collect();
        assert!((compute_sdr(&s, &half).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn sdr_errors() {
        let s = vec![vec![1.0, 2.0]];
        assert!(matches!(
            compute_sdr(&s, &[vec![1.0]]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            compute_sdr(&[vec![0.0, 0.0]], &s),
            Err(Error::ZeroReference)
        ));
        assert!(matches!(
            compute_sdr(&s, &[vec![1.0, 2.0], vec![0.0, 0.0]]),
            Err(Error::ChannelCountMismatch { .. })
        ));
    }

    #[test]
    fn rtf_arithmetic() {
        assert_eq!(rtf(4.0, 8.0), 0.5);
        assert_eq!(rtf(16.0, 8.0), 2.0);
        let (v, r) = measure_rtf(|| 7, 8.0);
        assert_eq!(v, 7);
        assert!(r >= 0.0);
    }

    #[test]
    fn per_iteration_division() {
        let c = OpCounters {
            inversions: 20,
            matmuls: 40,
        };
        assert_eq!(
            c.per_iteration(4),
            Some(OpCounters {
                inversions: 5,
                matmuls: 10
            })
        );
        assert_eq!(c.per_iteration(3), None);
    }

    #[test]
    fn csv_row_has_header_width() {
        let r = EvalReport {
            algorithm: Algorithm::FastFca,
            order: 3,
            sources: 3,
            frames: 249,
            bins: 512,
            iterations: 20,
            inner_k: 1,
            rtf: 0.01,
            sdr_per_source: vec![10.0, 11.0, 12.0],
            sdr_input: vec![-3.0, -3.0, -3.0],
            counters: OpCounters {
                inversions: 2048,
                matmuls: 0,
            },
            trial: 0,
        };
        let header = EvalReport::csv_header(3);
        assert_eq!(header.split(',').count(), r.csv_row().split(',').count());
        assert!(header.starts_with("algorithm,I,J,N,F,iterations,K,rtf,sdr_mean,sdr_1"));
        assert!(r.csv_row().starts_with("fastfca,3,3,249,512,20,1,"));
    }
}
