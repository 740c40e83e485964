//! Conventional full-rank spatial covariance analysis (FCA).
//!
//! Each source image is modelled as `x_j(n,f) ~ N(0, v_j(n,f) S_j(f))` and the
//! parameters are fitted by EM. Every E-step inverts the mixture covariance
//! at each time-frequency point and forms two I×I products per source, which
//! is exactly what the operation counters track.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::evalkit::OpCounters;
use crate::matcore::{
    gaussian_logpdf, invert_pd_regularized, packed_len, ComplexMatrix, HermitianPd, SmallVec,
};
use crate::stft::ObservationTensor;

/// Power floor relative to the per-bin mean observed power.
pub const POWER_FLOOR_REL: f64 = 1e-10;
/// Diagonal loading (relative to `tr/I`) applied when a Cholesky fails.
pub const REGULARIZATION_EPS: f64 = 1e-10;

/// Per-bin lower bounds on `v_j(n,f)`.
pub fn power_floors(obs: &ObservationTensor) -> Vec<f64> {
    (0..obs.bins())
        .map(|f| (POWER_FLOOR_REL * obs.mean_power(f)).max(f64::MIN_POSITIVE))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcaParams {
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    spatial: Vec<HermitianPd>,
    power: Vec<f64>,
}

impl FcaParams {
    /// `spatial[j][f]` and `power[j][n][f]` are given through closures.
    pub fn from_fn(
        order: usize,
        sources: usize,
        frames: usize,
        bins: usize,
        mut spatial: impl FnMut(usize, usize) -> HermitianPd,
        mut power: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut s = Vec::with_capacity(sources * bins);
        for f in 0..bins {
            for j in 0..sources {
                let m = spatial(j, f);
                if m.order() != order {
                    return Err(Error::DimensionMismatch {
                        expected: order,
                        actual: m.order(),
                    });
                }
                s.push(m);
            }
        }
        let mut v = Vec::with_capacity(sources * frames * bins);
        for f in 0..bins {
            for n in 0..frames {
                for j in 0..sources {
                    let p = power(j, n, f);
                    if !(p > 0.0) || !p.is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "power v[{j}][{n}][{f}] = {p} must be positive"
                        )));
                    }
                    v.push(p);
                }
            }
        }
        Ok(Self {
            order,
            sources,
            frames,
            bins,
            spatial: s,
            power: v,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn spatial(&self, j: usize, f: usize) -> &HermitianPd {
        &self.spatial[f * self.sources + j]
    }

    pub fn spatial_mut(&mut self, j: usize, f: usize) -> &mut HermitianPd {
        &mut self.spatial[f * self.sources + j]
    }

    #[inline]
    pub fn power(&self, j: usize, n: usize, f: usize) -> f64 {
        self.power[(f * self.frames + n) * self.sources + j]
    }

    pub fn set_power(&mut self, j: usize, n: usize, f: usize, value: f64) {
        self.power[(f * self.frames + n) * self.sources + j] = value;
    }

    /// `v_j(n,f)` for all `j`.
    #[inline]
    pub fn powers(&self, n: usize, f: usize) -> &[f64] {
        let o = (f * self.frames + n) * self.sources;
        &self.power[o..o + self.sources]
    }

    pub fn check_shape(&self, obs: &ObservationTensor) -> Result<()> {
        check_dims(
            (self.order, self.frames, self.bins),
            (obs.channels(), obs.frames(), obs.bins()),
        )
    }
}

pub(crate) fn check_dims(
    expected: (usize, usize, usize),
    actual: (usize, usize, usize),
) -> Result<()> {
    let pairs = [
        (expected.0, actual.0),
        (expected.1, actual.1),
        (expected.2, actual.2),
    ];
    for (e, a) in pairs {
        if e != a {
            return Err(Error::DimensionMismatch {
                expected: e,
                actual: a,
            });
        }
    }
    Ok(())
}

/// Posterior means and covariances of every source image.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStats {
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    mu: Vec<Complex64>,
    phi: Vec<Complex64>,
}

impl PosteriorStats {
    fn zeros(order: usize, sources: usize, frames: usize, bins: usize) -> Self {
        let points = sources * frames * bins;
        Self {
            order,
            sources,
            frames,
            bins,
            mu: vec![Complex64::new(0.0, 0.0); points * order],
            phi: vec![Complex64::new(0.0, 0.0); points * packed_len(order)],
        }
    }

    /// Assembles stats from closures (mainly for tests and oracles).
    pub fn from_fn(
        order: usize,
        sources: usize,
        frames: usize,
        bins: usize,
        mut mu: impl FnMut(usize, usize, usize) -> Vec<Complex64>,
        mut phi: impl FnMut(usize, usize, usize) -> HermitianPd,
    ) -> Self {
        let mut s = Self::zeros(order, sources, frames, bins);
        for f in 0..bins {
            for n in 0..frames {
                for j in 0..sources {
                    let idx = s.index(j, n, f);
                    s.mu[idx * order..(idx + 1) * order].copy_from_slice(&mu(j, n, f));
                    let p = phi(j, n, f);
                    let pl = packed_len(order);
                    s.phi[idx * pl..(idx + 1) * pl].copy_from_slice(p.packed());
                }
            }
        }
        s
    }

    #[inline]
    fn index(&self, j: usize, n: usize, f: usize) -> usize {
        (f * self.frames + n) * self.sources + j
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    #[inline]
    pub fn mu(&self, j: usize, n: usize, f: usize) -> &[Complex64] {
        let o = self.index(j, n, f) * self.order;
        &self.mu[o..o + self.order]
    }

    pub fn phi(&self, j: usize, n: usize, f: usize) -> HermitianPd {
        let pl = packed_len(self.order);
        let o = self.index(j, n, f) * pl;
        HermitianPd::from_packed(self.order, &self.phi[o..o + pl])
    }

    /// `mu mu^H + Phi`.
    pub fn second_moment(&self, j: usize, n: usize, f: usize) -> HermitianPd {
        let mut c = self.phi(j, n, f);
        c.add_outer(1.0, self.mu(j, n, f));
        c
    }
}

/// `sum_j v_j(n,f) S_j(f)`.
pub fn mix_covariance(params: &FcaParams, n: usize, f: usize) -> HermitianPd {
    let mut mix = HermitianPd::zeros(params.order);
    for (j, &v) in params.powers(n, f).iter().enumerate() {
        mix.add_scaled(v, params.spatial(j, f));
    }
    mix
}

/// Log-likelihood of the observations under the full-rank model.
pub fn log_likelihood_l1(params: &FcaParams, obs: &ObservationTensor) -> Result<f64> {
    params.check_shape(obs)?;
    let mut total = 0.0;
    for f in 0..params.bins {
        for n in 0..params.frames {
            total += gaussian_logpdf(obs.vector(n, f), &mix_covariance(params, n, f))?;
        }
    }
    Ok(total)
}

pub fn e_step(params: &FcaParams, obs: &ObservationTensor) -> Result<PosteriorStats> {
    e_step_counted(params, obs, &mut OpCounters::default())
}

pub(crate) fn e_step_counted(
    params: &FcaParams,
    obs: &ObservationTensor,
    counters: &mut OpCounters,
) -> Result<PosteriorStats> {
    params.check_shape(obs)?;
    let (order, sources) = (params.order, params.sources);
    let pl = packed_len(order);
    let mut stats = PosteriorStats::zeros(order, sources, params.frames, params.bins);
    let mut dense = vec![ComplexMatrix::zeros(order); sources];
    for f in 0..params.bins {
        for (j, d) in dense.iter_mut().enumerate() {
            *d = params.spatial(j, f).to_matrix();
        }
        for n in 0..params.frames {
            let inv = invert_pd_regularized(&mix_covariance(params, n, f), REGULARIZATION_EPS)?
                .to_matrix();
            counters.inversions += 1;
            for (j, &v) in params.powers(n, f).iter().enumerate() {
                let (mu, phi) =
                    posterior_point(params.spatial(j, f), &dense[j], v, &inv, obs.vector(n, f));
                counters.matmuls += 2;
                let idx = stats.index(j, n, f);
                stats.mu[idx * order..(idx + 1) * order].copy_from_slice(&mu[..order]);
                stats.phi[idx * pl..(idx + 1) * pl].copy_from_slice(phi.packed());
            }
        }
    }
    Ok(stats)
}

/// `μ = R (ΣR)^{-1} y` and `Φ = R - R (ΣR)^{-1} R` for `R = v S`, using the
/// two products `G = S (ΣR)^{-1}` and `G S`.
#[inline]
fn posterior_point(
    s: &HermitianPd,
    s_dense: &ComplexMatrix,
    v: f64,
    mix_inv: &ComplexMatrix,
    y: &[Complex64],
) -> (SmallVec, HermitianPd) {
    let g = s_dense.mul(mix_inv);
    let gs = g.mul(s_dense);
    let mut mu = g.mul_vec(y);
    for m in mu.iter_mut() {
        *m *= v;
    }
    let v2 = v * v;
    let phi = HermitianPd::from_lower_fn(s.order(), |i, l| s.get(i, l) * v - gs[(i, l)] * v2);
    (mu, phi)
}

/// M-step: all `v` from the pre-update `S`, then every `S` from the new `v`.
pub fn m_step(
    stats: &PosteriorStats,
    params: &FcaParams,
    obs: &ObservationTensor,
) -> Result<FcaParams> {
    m_step_counted(stats, params, obs, &mut OpCounters::default())
}

pub(crate) fn m_step_counted(
    stats: &PosteriorStats,
    params: &FcaParams,
    obs: &ObservationTensor,
    counters: &mut OpCounters,
) -> Result<FcaParams> {
    params.check_shape(obs)?;
    let floors = power_floors(obs);
    let order = params.order;
    let inv_order = 1.0 / order as f64;
    let inv_frames = 1.0 / params.frames as f64;
    let mut next = params.clone();
    for f in 0..params.bins {
        for j in 0..params.sources {
            let s_inv = invert_pd_regularized(params.spatial(j, f), REGULARIZATION_EPS)?;
            counters.inversions += 1;
            let mut acc = HermitianPd::zeros(order);
            for n in 0..params.frames {
                let c = stats.second_moment(j, n, f);
                let v = (s_inv.trace_product(&c) * inv_order).max(floors[f]);
                next.set_power(j, n, f, v);
                acc.add_scaled(1.0 / v, &c);
            }
            *next.spatial_mut(j, f) = acc.scale(inv_frames);
        }
    }
    Ok(next)
}

/// One EM iteration computed bin by bin without materializing
/// [`PosteriorStats`]. Performs the same arithmetic, in the same order, as
/// `e_step` followed by `m_step`.
pub(crate) fn em_iteration_counted(
    params: &FcaParams,
    obs: &ObservationTensor,
    floors: &[f64],
    counters: &mut OpCounters,
) -> Result<FcaParams> {
    let (order, sources, frames) = (params.order, params.sources, params.frames);
    let inv_order = 1.0 / order as f64;
    let inv_frames = 1.0 / frames as f64;
    let mut next = params.clone();
    let mut dense = vec![ComplexMatrix::zeros(order); sources];
    let mut s_inv = vec![HermitianPd::zeros(order); sources];
    let mut acc = vec![HermitianPd::zeros(order); sources];
    for f in 0..params.bins {
        for j in 0..sources {
            dense[j] = params.spatial(j, f).to_matrix();
            s_inv[j] = invert_pd_regularized(params.spatial(j, f), REGULARIZATION_EPS)?;
            counters.inversions += 1;
            acc[j] = HermitianPd::zeros(order);
        }
        for n in 0..frames {
            let y = obs.vector(n, f);
            let inv = invert_pd_regularized(&mix_covariance(params, n, f), REGULARIZATION_EPS)?
                .to_matrix();
            counters.inversions += 1;
            for (j, &v) in params.powers(n, f).iter().enumerate() {
                let (mu, mut c) = posterior_point(params.spatial(j, f), &dense[j], v, &inv, y);
                counters.matmuls += 2;
                c.add_outer(1.0, &mu[..order]);
                let v_new = (s_inv[j].trace_product(&c) * inv_order).max(floors[f]);
                next.set_power(j, n, f, v_new);
                acc[j].add_scaled(1.0 / v_new, &c);
            }
        }
        for j in 0..sources {
            *next.spatial_mut(j, f) = acc[j].scale(inv_frames);
        }
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct FcaRun {
    pub params: FcaParams,
    /// Posterior stats of the returned parameters.
    pub stats: PosteriorStats,
    pub counters: OpCounters,
}

pub fn run_fca(obs: &ObservationTensor, init: &FcaParams, iterations: usize) -> Result<FcaRun> {
    run_fca_observed(obs, init, iterations, |_, _| {})
}

/// Like [`run_fca`], calling `observer(t, params)` with the initial parameters
/// (`t = 0`) and after every iteration `t`.
pub fn run_fca_observed(
    obs: &ObservationTensor,
    init: &FcaParams,
    iterations: usize,
    mut observer: impl FnMut(usize, &FcaParams),
) -> Result<FcaRun> {
    init.check_shape(obs)?;
    let mut counters = OpCounters::default();
    let mut params = init.clone();
    observer(0, &params);
    let floors = power_floors(obs);
    for t in 1..=iterations {
        params = em_iteration_counted(&params, obs, &floors, &mut counters)?;
        observer(t, &params);
    }
    let stats = e_step(&params, obs)?;
    Ok(FcaRun {
        params,
        stats,
        counters,
    })
}
