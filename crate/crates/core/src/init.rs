//! Starting points for the estimators.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fastfca::FastFcaParams;
use crate::fca::{power_floors, FcaParams};
use crate::matcore::{cholesky, ComplexMatrix, DiagonalPd, HermitianPd};
use crate::stft::ObservationTensor;

/// Diagonal loading of oracle covariances, relative to `tr/I`.
pub const ORACLE_LOADING: f64 = 1e-3;
/// Size of the random perturbation in the diffuse initializer, relative to `tr/I`.
pub const DIFFUSE_PERTURBATION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Oracle,
    Diffuse,
}

impl InitMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Diffuse => "diffuse",
        }
    }
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(Self::Oracle),
            "diffuse" => Ok(Self::Diffuse),
            other => Err(Error::InvalidConfig(format!(
                "unknown init method `{other}`"
            ))),
        }
    }
}

fn loaded(mut s: HermitianPd, rel: f64) -> HermitianPd {
    let load = rel * (s.trace() / s.order() as f64).max(f64::MIN_POSITIVE);
    s.add_identity(load);
    s
}

/// Covariances and powers estimated from reference source images:
/// `v_j = ||x_j||^2 / I` and `S_j = (1/N) sum_n x_j x_j^H / v_j`, lightly loaded.
pub fn init_oracle(images: &[ObservationTensor], obs: &ObservationTensor) -> Result<FcaParams> {
    let sources = images.len();
    if sources == 0 {
        return Err(Error::InvalidConfig(
            "oracle init needs reference images".into(),
        ));
    }
    let (order, frames, bins) = (obs.channels(), obs.frames(), obs.bins());
    for img in images {
        crate::fca::check_dims(
            (order, frames, bins),
            (img.channels(), img.frames(), img.bins()),
        )?;
    }
    let floors = power_floors(obs);
    let mut power = vec![0.0; sources * frames * bins];
    let mut spatial = Vec::with_capacity(sources * bins);
    for f in 0..bins {
        for (j, img) in images.iter().enumerate() {
            let mut acc = HermitianPd::zeros(order);
            for n in 0..frames {
                let x = img.vector(n, f);
                let v = (x.iter().map(|z| z.norm_sqr()).sum::<f64>() / order as f64).max(floors[f]);
                power[(f * frames + n) * sources + j] = v;
                acc.add_outer(1.0 / v, x);
            }
            spatial.push(loaded(acc.scale(1.0 / frames as f64), ORACLE_LOADING));
        }
    }
    FcaParams::from_fn(
        order,
        sources,
        frames,
        bins,
        |j, f| spatial[f * sources + j],
        |j, n, f| power[(f * frames + n) * sources + j],
    )
}

/// Whitening basis `P = L^{-H}` for `L L^H = sum_j S_j`, and `Λ_j = diag(P^H S_j P)`.
pub fn fastfca_from_fca(params: &FcaParams) -> Result<FastFcaParams> {
    let (order, sources, frames, bins) = (
        params.order(),
        params.sources(),
        params.frames(),
        params.bins(),
    );
    let mut bases = Vec::with_capacity(bins);
    let mut lambdas = Vec::with_capacity(bins * sources);
    for f in 0..bins {
        let mut total = HermitianPd::zeros(order);
        for j in 0..sources {
            total.add_scaled(1.0, params.spatial(j, f));
        }
        let l = cholesky(&total)?;
        let p = l.inverse()?.adjoint();
        for j in 0..sources {
            let d = params.spatial(j, f).congruence(&p);
            let diag: Vec<f64> = (0..order)
                .map(|i| d.diag(i).max(f64::MIN_POSITIVE))
                .collect();
            lambdas.push(DiagonalPd::new(&diag)?);
        }
        bases.push(p);
    }
    FastFcaParams::from_fn(
        order,
        sources,
        frames,
        bins,
        |f| bases[f],
        |j, f| lambdas[f * sources + j],
        |j, n, f| params.power(j, n, f),
    )
}

/// Blind starting point: the average observed covariance (scaled to unit
/// `tr/I`) plus a seeded source-dependent random PD perturbation, and powers
/// set to the observed power shared equally among sources.
pub fn init_diffuse(obs: &ObservationTensor, sources: usize, seed: u64) -> Result<FcaParams> {
    if sources == 0 {
        return Err(Error::InvalidConfig(
            "at least one source is required".into(),
        ));
    }
    let (order, frames, bins) = (obs.channels(), obs.frames(), obs.bins());
    let floors = power_floors(obs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut spatial = Vec::with_capacity(sources * bins);
    for f in 0..bins {
        let mut avg = HermitianPd::zeros(order);
        for n in 0..frames {
            avg.add_outer(1.0 / frames as f64, obs.vector(n, f));
        }
        let scale = avg.trace() / order as f64;
        let base = if scale > 0.0 {
            loaded(avg.scale(1.0 / scale), 1e-6)
        } else {
            HermitianPd::identity(order)
        };
        for _ in 0..sources {
            let b = ComplexMatrix::from_fn(order, |_, _| Complex64::new(normal(), normal()));
            let bbh = HermitianPd::from_lower_fn(order, |i, l| {
                (0..order).map(|k| b[(i, k)] * b[(l, k)].conj()).sum()
            });
            let mut s = base;
            s.add_scaled(DIFFUSE_PERTURBATION * order as f64 / bbh.trace(), &bbh);
            spatial.push(s);
        }
    }
    FcaParams::from_fn(
        order,
        sources,
        frames,
        bins,
        |j, f| spatial[f * sources + j],
        |_, n, f| {
            let y = obs.vector(n, f);
            let p = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / order as f64 / sources as f64;
            p.max(floors[f])
        },
    )
}
