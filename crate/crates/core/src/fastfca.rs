//! FastFCA-AS: FCA with jointly diagonalized spatial covariances.
//!
//! Every spatial covariance shares one basis transform per bin,
//! `S_j(f) = P(f)^{-H} Λ_j(f) P(f)^{-1}` with diagonal `Λ_j(f)`. In the
//! transformed domain `ỹ = P^H y` the EM updates of `Λ` and `v` only touch
//! diagonal entries. `P(f)` itself is refreshed by a fixed-point iteration on
//! the stationarity condition of the likelihood, which needs `I + 1` order-I
//! inversions per bin and per inner iteration, independent of the frame count.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::evalkit::OpCounters;
use crate::fca::{check_dims, power_floors, REGULARIZATION_EPS};
use crate::matcore::{invert_pd, ComplexMatrix, DiagonalPd, HermitianPd, SmallVec, MAX_ORDER};
use crate::stft::ObservationTensor;

/// Floor on `Λ` entries relative to the bin's mean diagonal value.
pub const LAMBDA_FLOOR_REL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct FastFcaParams {
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    basis: Vec<ComplexMatrix>,
    lambda: Vec<f64>,
    power: Vec<f64>,
}

impl FastFcaParams {
    pub fn from_fn(
        order: usize,
        sources: usize,
        frames: usize,
        bins: usize,
        mut basis: impl FnMut(usize) -> ComplexMatrix,
        mut lambda: impl FnMut(usize, usize) -> DiagonalPd,
        mut power: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut p = Vec::with_capacity(bins);
        for f in 0..bins {
            let m = basis(f);
            if m.order() != order {
                return Err(Error::DimensionMismatch {
                    expected: order,
                    actual: m.order(),
                });
            }
            if m.lu().is_err() {
                return Err(Error::SingularP { bin: f });
            }
            p.push(m);
        }
        let mut l = Vec::with_capacity(bins * sources * order);
        for f in 0..bins {
            for j in 0..sources {
                let d = lambda(j, f);
                if d.order() != order {
                    return Err(Error::DimensionMismatch {
                        expected: order,
                        actual: d.order(),
                    });
                }
                l.extend_from_slice(d.as_slice());
            }
        }
        let mut v = Vec::with_capacity(sources * frames * bins);
        for f in 0..bins {
            for n in 0..frames {
                for j in 0..sources {
                    let x = power(j, n, f);
                    if !(x > 0.0) || !x.is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "power v[{j}][{n}][{f}] = {x} must be positive"
                        )));
                    }
                    v.push(x);
                }
            }
        }
        Ok(Self {
            order,
            sources,
            frames,
            bins,
            basis: p,
            lambda: l,
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

    /// `P(f)`.
    #[inline]
    pub fn basis(&self, f: usize) -> &ComplexMatrix {
        &self.basis[f]
    }

    pub fn bases(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    /// Diagonal of `Λ_j(f)`.
    #[inline]
    pub fn lambda(&self, j: usize, f: usize) -> &[f64] {
        let o = (f * self.sources + j) * self.order;
        &self.lambda[o..o + self.order]
    }

    pub fn lambda_diag(&self, j: usize, f: usize) -> DiagonalPd {
        DiagonalPd::new(self.lambda(j, f)).expect("Λ entries are floored positive")
    }

    #[inline]
    pub fn power(&self, j: usize, n: usize, f: usize) -> f64 {
        self.power[(f * self.frames + n) * self.sources + j]
    }

    #[inline]
    pub fn powers(&self, n: usize, f: usize) -> &[f64] {
        let o = (f * self.frames + n) * self.sources;
        &self.power[o..o + self.sources]
    }

    /// Replaces every `P(f)`; the new bases must be non-singular.
    pub fn with_bases(&self, bases: Vec<ComplexMatrix>) -> Result<Self> {
        if bases.len() != self.bins {
            return Err(Error::DimensionMismatch {
                expected: self.bins,
                actual: bases.len(),
            });
        }
        for (f, p) in bases.iter().enumerate() {
            if p.order() != self.order {
                return Err(Error::DimensionMismatch {
                    expected: self.order,
                    actual: p.order(),
                });
            }
            if p.lu().is_err() {
                return Err(Error::SingularP { bin: f });
            }
        }
        Ok(Self {
            basis: bases,
            ..self.clone()
        })
    }

    pub fn check_shape(&self, obs: &ObservationTensor) -> Result<()> {
        check_dims(
            (self.order, self.frames, self.bins),
            (obs.channels(), obs.frames(), obs.bins()),
        )
    }

    /// `w_i(n,f) = sum_j v_j(n,f) Λ_j(f)_ii`, floored away from zero.
    #[inline]
    fn weights(&self, n: usize, f: usize) -> [f64; MAX_ORDER] {
        let mut w = [0.0; MAX_ORDER];
        for (j, &v) in self.powers(n, f).iter().enumerate() {
            for (wi, &l) in w.iter_mut().zip(self.lambda(j, f)) {
                *wi += v * l;
            }
        }
        for wi in w.iter_mut().take(self.order) {
            *wi = wi.max(f64::MIN_POSITIVE);
        }
        w
    }

    /// Reciprocals of [`Self::weights`].
    #[inline]
    fn inv_weights(&self, n: usize, f: usize) -> [f64; MAX_ORDER] {
        let mut w = self.weights(n, f);
        for wi in w.iter_mut().take(self.order) {
            *wi = 1.0 / *wi;
        }
        w
    }

    /// Reciprocals of every `Λ_j(f)` entry at bin `f`, indexed `j * I + i`.
    fn inv_lambdas(&self, f: usize) -> Vec<f64> {
        self.lambda[f * self.sources * self.order..(f + 1) * self.sources * self.order]
            .iter()
            .map(|l| 1.0 / l)
            .collect()
    }
}

/// `P(f)^H y(n,f)` for every time-frequency point.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedObservation(ObservationTensor);

impl TransformedObservation {
    #[inline]
    pub fn vector(&self, n: usize, f: usize) -> &[Complex64] {
        self.0.vector(n, f)
    }

    pub fn as_tensor(&self) -> &ObservationTensor {
        &self.0
    }
}

/// Posterior statistics in the transformed basis: `μ̃ = P^H μ` and the
/// diagonal of `Φ̃ = P^H Φ P`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedStats {
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    mu_tilde: Vec<Complex64>,
    phi_tilde: Vec<f64>,
}

impl TransformedStats {
    fn zeros(order: usize, sources: usize, frames: usize, bins: usize) -> Self {
        let len = order * sources * frames * bins;
        Self {
            order,
            sources,
            frames,
            bins,
            mu_tilde: vec![Complex64::new(0.0, 0.0); len],
            phi_tilde: vec![0.0; len],
        }
    }

    pub fn from_fn(
        order: usize,
        sources: usize,
        frames: usize,
        bins: usize,
        mut mu: impl FnMut(usize, usize, usize) -> Vec<Complex64>,
        mut phi: impl FnMut(usize, usize, usize) -> Vec<f64>,
    ) -> Self {
        let mut s = Self::zeros(order, sources, frames, bins);
        for f in 0..bins {
            for n in 0..frames {
                for j in 0..sources {
                    let o = s.offset(j, n, f);
                    s.mu_tilde[o..o + order].copy_from_slice(&mu(j, n, f));
                    s.phi_tilde[o..o + order].copy_from_slice(&phi(j, n, f));
                }
            }
        }
        s
    }

    #[inline]
    fn offset(&self, j: usize, n: usize, f: usize) -> usize {
        ((f * self.frames + n) * self.sources + j) * self.order
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    #[inline]
    pub fn mu_tilde(&self, j: usize, n: usize, f: usize) -> &[Complex64] {
        let o = self.offset(j, n, f);
        &self.mu_tilde[o..o + self.order]
    }

    #[inline]
    pub fn phi_tilde(&self, j: usize, n: usize, f: usize) -> &[f64] {
        let o = self.offset(j, n, f);
        &self.phi_tilde[o..o + self.order]
    }
}

/// `S_j(f) = P^{-H} Λ_j P^{-1}`.
pub fn reconstruct_s(params: &FastFcaParams, j: usize, f: usize) -> Result<HermitianPd> {
    let p_inv = params
        .basis(f)
        .inverse()
        .map_err(|_| Error::SingularP { bin: f })?;
    let lambda = params.lambda(j, f);
    let order = params.order;
    Ok(HermitianPd::from_lower_fn(order, |i, l| {
        (0..order)
            .map(|k| p_inv[(k, i)].conj() * lambda[k] * p_inv[(k, l)])
            .sum()
    }))
}

pub fn transform_observations(
    bases: &[ComplexMatrix],
    obs: &ObservationTensor,
) -> TransformedObservation {
    let mut out = ObservationTensor::zeros(obs.channels(), obs.frames(), obs.bins());
    for (f, p) in bases.iter().enumerate().take(obs.bins()) {
        for n in 0..obs.frames() {
            let yt = p.adjoint_mul_vec(obs.vector(n, f));
            out.vector_mut(n, f).copy_from_slice(&yt[..obs.channels()]);
        }
    }
    TransformedObservation(out)
}

/// E-step in the transformed basis; every operation is on diagonal entries.
pub fn e_step_diag(
    params: &FastFcaParams,
    yt: &TransformedObservation,
) -> Result<TransformedStats> {
    params.check_shape(&yt.0)?;
    let order = params.order;
    let mut stats = TransformedStats::zeros(order, params.sources, params.frames, params.bins);
    for f in 0..params.bins {
        for n in 0..params.frames {
            let inv_w = params.inv_weights(n, f);
            let y = yt.vector(n, f);
            for (j, &v) in params.powers(n, f).iter().enumerate() {
                let lambda = params.lambda(j, f);
                let o = stats.offset(j, n, f);
                for i in 0..order {
                    let a = v * lambda[i];
                    let gain = a * inv_w[i];
                    stats.mu_tilde[o + i] = y[i] * gain;
                    stats.phi_tilde[o + i] = a - a * gain;
                }
            }
        }
    }
    Ok(stats)
}

/// M-step for `v` (with the pre-update `Λ`) and then `Λ` (with the new `v`).
pub fn m_step_diag(
    stats: &TransformedStats,
    params: &FastFcaParams,
    obs: &ObservationTensor,
) -> Result<FastFcaParams> {
    params.check_shape(obs)?;
    let floors = power_floors(obs);
    let (order, sources, frames) = (params.order, params.sources, params.frames);
    let inv_order = 1.0 / order as f64;
    let inv_frames = 1.0 / frames as f64;
    let mut next = params.clone();
    let mut moment = [0.0; MAX_ORDER];
    for f in 0..params.bins {
        let inv_lambda = params.inv_lambdas(f);
        for j in 0..sources {
            let inv_lambda = &inv_lambda[j * order..(j + 1) * order];
            let mut acc = [0.0; MAX_ORDER];
            for n in 0..frames {
                let o = stats.offset(j, n, f);
                let mu = &stats.mu_tilde[o..o + order];
                let phi = &stats.phi_tilde[o..o + order];
                let mut v = 0.0;
                for i in 0..order {
                    moment[i] = mu[i].norm_sqr() + phi[i];
                    v += moment[i] * inv_lambda[i];
                }
                let v = (v * inv_order).max(floors[f]);
                next.power[(f * frames + n) * sources + j] = v;
                let inv_v = 1.0 / v;
                for i in 0..order {
                    acc[i] += moment[i] * inv_v;
                }
            }
            let o = (f * sources + j) * order;
            for i in 0..order {
                next.lambda[o + i] = acc[i] * inv_frames;
            }
        }
        let block = &mut next.lambda[f * sources * order..(f + 1) * sources * order];
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        let floor = (LAMBDA_FLOOR_REL * mean).max(f64::MIN_POSITIVE);
        for l in block.iter_mut() {
            *l = l.max(floor);
        }
    }
    Ok(next)
}

/// One EM step on `(Λ, v)` computed bin by bin without materializing
/// [`TransformedStats`]. Same arithmetic, in the same order, as
/// `e_step_diag` followed by `m_step_diag`.
pub(crate) fn em_iteration_diag(
    params: &FastFcaParams,
    yt: &TransformedObservation,
    floors: &[f64],
) -> FastFcaParams {
    let (order, sources, frames) = (params.order, params.sources, params.frames);
    let inv_order = 1.0 / order as f64;
    let inv_frames = 1.0 / frames as f64;
    let mut next = params.clone();
    let mut acc = vec![0.0; sources * order];
    for f in 0..params.bins {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let inv_lambda = params.inv_lambdas(f);
        for n in 0..frames {
            let inv_w = params.inv_weights(n, f);
            let y = yt.vector(n, f);
            let base = (f * frames + n) * sources;
            for (j, &v) in params.powers(n, f).iter().enumerate() {
                let lambda = params.lambda(j, f);
                let mut moment = [0.0; MAX_ORDER];
                let mut v_new = 0.0;
                for i in 0..order {
                    let a = v * lambda[i];
                    let gain = a * inv_w[i];
                    let mu = y[i] * gain;
                    moment[i] = mu.norm_sqr() + (a - a * gain);
                    v_new += moment[i] * inv_lambda[j * order + i];
                }
                let v_new = (v_new * inv_order).max(floors[f]);
                next.power[base + j] = v_new;
                let inv_v = 1.0 / v_new;
                for i in 0..order {
                    acc[j * order + i] += moment[i] * inv_v;
                }
            }
        }
        let block = &mut next.lambda[f * sources * order..(f + 1) * sources * order];
        for (l, a) in block.iter_mut().zip(&acc) {
            *l = a * inv_frames;
        }
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        let floor = (LAMBDA_FLOOR_REL * mean).max(f64::MIN_POSITIVE);
        for l in block.iter_mut() {
            *l = l.max(floor);
        }
    }
    next
}

/// Weighted covariances `(1/N) sum_n y y^H / w_i(n)` for every column `i` of bin `f`.
fn weighted_covariances(
    params: &FastFcaParams,
    obs: &ObservationTensor,
    f: usize,
) -> [HermitianPd; MAX_ORDER] {
    let order = params.order;
    let mut cov = [HermitianPd::zeros(order); MAX_ORDER];
    for n in 0..params.frames {
        let inv_w = params.inv_weights(n, f);
        let outer = HermitianPd::outer(obs.vector(n, f));
        for i in 0..order {
            cov[i].add_scaled(inv_w[i], &outer);
        }
    }
    let inv_frames = 1.0 / params.frames as f64;
    for c in cov.iter_mut().take(order) {
        *c = c.scale(inv_frames);
    }
    cov
}

fn invert_weighted(cov: &HermitianPd, f: usize, column: usize) -> Result<HermitianPd> {
    invert_pd(cov).or_else(|_| {
        let mut reg = *cov;
        reg.add_identity(REGULARIZATION_EPS * cov.trace().max(f64::MIN_POSITIVE));
        invert_pd(&reg).map_err(|_| Error::SingularWeightedCovariance { bin: f, column })
    })
}

/// One column update `[P]_i <- C_i^{-1} [P^{-H}]_i` for all columns, applied `inner_k` times.
pub fn fixed_point_update_p(
    params: &FastFcaParams,
    obs: &ObservationTensor,
    inner_k: usize,
) -> Result<Vec<ComplexMatrix>> {
    fixed_point_update_p_counted(params, obs, inner_k, &mut OpCounters::default())
}

pub(crate) fn fixed_point_update_p_counted(
    params: &FastFcaParams,
    obs: &ObservationTensor,
    inner_k: usize,
    counters: &mut OpCounters,
) -> Result<Vec<ComplexMatrix>> {
    params.check_shape(obs)?;
    if inner_k == 0 {
        return Err(Error::InvalidConfig(
            "fixed-point inner iterations must be at least 1".into(),
        ));
    }
    let order = params.order;
    let mut out = Vec::with_capacity(params.bins);
    let mut columns: [SmallVec; MAX_ORDER] = [[Complex64::new(0.0, 0.0); MAX_ORDER]; MAX_ORDER];
    for f in 0..params.bins {
        let cov = weighted_covariances(params, obs, f);
        let mut p = *params.basis(f);
        for _ in 0..inner_k {
            let p_inv = p.inverse().map_err(|_| Error::SingularP { bin: f })?;
            counters.inversions += 1;
            for (i, col) in columns.iter_mut().enumerate().take(order) {
                let c_inv = invert_weighted(&cov[i], f, i)?;
                counters.inversions += 1;
                // column i of P^{-H} is the conjugate of row i of P^{-1}
                let mut target = [Complex64::new(0.0, 0.0); MAX_ORDER];
                for (t, x) in target.iter_mut().zip(p_inv.row(i)) {
                    *t = x.conj();
                }
                *col = c_inv.mul_vec(&target[..order]);
            }
            p = ComplexMatrix::from_columns(&columns, order);
        }
        out.push(p);
    }
    Ok(out)
}

/// Column-wise relative change `max_i ||[P]_i - update([P]_i)|| / ||[P]_i||` of one fixed-point step.
pub fn fixed_point_residual(params: &FastFcaParams, obs: &ObservationTensor) -> Result<f64> {
    let updated = fixed_point_update_p(params, obs, 1)?;
    let order = params.order;
    let mut worst: f64 = 0.0;
    for (f, q) in updated.iter().enumerate() {
        let p = params.basis(f);
        for i in 0..order {
            let (a, b) = (p.column(i), q.column(i));
            let num: f64 = (0..order)
                .map(|k| (a[k] - b[k]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let den: f64 = (0..order).map(|k| a[k].norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}

/// Log-likelihood under the jointly diagonalized model, using
/// `ln det(model) = -2 ln|det P| + sum_i ln w_i` and `y^H model^{-1} y = sum_i |ỹ_i|^2 / w_i`.
pub fn log_likelihood_l2(params: &FastFcaParams, obs: &ObservationTensor) -> Result<f64> {
    params.check_shape(obs)?;
    let order = params.order;
    let log_pi = order as f64 * PI.ln();
    let mut total = 0.0;
    for f in 0..params.bins {
        let p = params.basis(f);
        let log_abs_det = p
            .lu()
            .map_err(|_| Error::SingularP { bin: f })?
            .log_abs_det();
        for n in 0..params.frames {
            let w = params.weights(n, f);
            let yt = p.adjoint_mul_vec(obs.vector(n, f));
            let mut term = -log_pi + 2.0 * log_abs_det;
            for i in 0..order {
                term -= w[i].ln() + yt[i].norm_sqr() / w[i];
            }
            total += term;
        }
    }
    Ok(total)
}

/// Stage reported to the observer of [`run_fastfca_observed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastFcaStage {
    Initial,
    /// After the EM update of `Λ` and `v` in outer iteration `t` (P unchanged).
    AfterEm(usize),
    /// After the fixed-point update of `P` in outer iteration `t`.
    AfterBasis(usize),
}

#[derive(Clone, Debug)]
pub struct FastFcaRun {
    pub params: FastFcaParams,
    /// Transformed stats computed from the returned parameters.
    pub stats: TransformedStats,
    pub counters: OpCounters,
}

pub fn run_fastfca(
    obs: &ObservationTensor,
    init: &FastFcaParams,
    iterations: usize,
    inner_k: usize,
) -> Result<FastFcaRun> {
    run_fastfca_observed(obs, init, iterations, inner_k, |_, _| {})
}

/// Alternates one EM step on `(Λ, v)` with a fixed-point update of `P`.
pub fn run_fastfca_observed(
    obs: &ObservationTensor,
    init: &FastFcaParams,
    iterations: usize,
    inner_k: usize,
    mut observer: impl FnMut(FastFcaStage, &FastFcaParams),
) -> Result<FastFcaRun> {
    init.check_shape(obs)?;
    if inner_k == 0 {
        return Err(Error::InvalidConfig(
            "fixed-point inner iterations must be at least 1".into(),
        ));
    }
    let mut counters = OpCounters::default();
    let mut params = init.clone();
    observer(FastFcaStage::Initial, &params);
    let floors = power_floors(obs);
    let mut yt = transform_observations(&params.basis, obs);
    for t in 1..=iterations {
        params = em_iteration_diag(&params, &yt, &floors);
        observer(FastFcaStage::AfterEm(t), &params);
        params.basis = fixed_point_update_p_counted(&params, obs, inner_k, &mut counters)?;
        observer(FastFcaStage::AfterBasis(t), &params);
        yt = transform_observations(&params.basis, obs);
    }
    let stats = e_step_diag(&params, &yt)?;
    Ok(FastFcaRun {
        params,
        stats,
        counters,
    })
}
