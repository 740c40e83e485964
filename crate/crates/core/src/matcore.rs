//! Small dense complex linear algebra for matrix orders up to [`MAX_ORDER`].
//!
//! Every matrix lives in fixed-capacity inline storage so the estimator inner
//! loops never touch the allocator. Hermitian matrices keep only their lower
//! triangle; the upper triangle is produced by conjugation on read, which makes
//! Hermitian symmetry exact rather than approximate.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported matrix order (number of microphones).
pub const MAX_ORDER: usize = 8;

const CAP: usize = MAX_ORDER * MAX_ORDER;
const TRI_CAP: usize = MAX_ORDER * (MAX_ORDER + 1) / 2;

/// Cholesky pivots at or below this fraction of the largest diagonal entry
/// are treated as loss of positive definiteness.
pub const PIVOT_THRESHOLD: f64 = 1e-13;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// A complex vector of length at most [`MAX_ORDER`]; entries past `len` are zero.
pub type SmallVec = [Complex64; MAX_ORDER];

#[inline]
fn tri(i: usize, l: usize) -> usize {
    debug_assert!(l <= i);
    i * (i + 1) / 2 + l
}

fn check_order(order: usize) {
    assert!(
        (1..=MAX_ORDER).contains(&order),
        "matrix order {order} outside 1..={MAX_ORDER}"
    );
}

/// General square complex matrix, row-major with stride equal to its order.
#[derive(Clone, Copy, PartialEq)]
pub struct ComplexMatrix {
    order: usize,
    data: [Complex64; CAP],
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[Complex64]> = (0..self.order).map(|i| self.row(i)).collect();
        f.debug_struct("ComplexMatrix")
            .field("order", &self.order)
            .field("rows", &rows)
            .finish()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, l): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.order && l < self.order);
        &self.data[i * self.order + l]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, l): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.order && l < self.order);
        &mut self.data[i * self.order + l]
    }
}

impl ComplexMatrix {
    pub fn zeros(order: usize) -> Self {
        check_order(order);
        Self {
            order,
            data: [ZERO; CAP],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            for l in 0..order {
                m[(i, l)] = f(i, l);
            }
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Builds a matrix from `order` columns.
    pub fn from_columns(columns: &[SmallVec], order: usize) -> Self {
        Self::from_fn(order, |i, l| columns[l][i])
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.order..(i + 1) * self.order]
    }

    pub fn column(&self, l: usize) -> SmallVec {
        let mut out = [ZERO; MAX_ORDER];
        for (i, o) in out.iter_mut().enumerate().take(self.order) {
            *o = self[(i, l)];
        }
        out
    }

    pub fn set_column(&mut self, l: usize, col: &[Complex64]) {
        for i in 0..self.order {
            self[(i, l)] = col[i];
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.order, |i, l| self[(l, i)].conj())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = *self;
        for x in out.data[..self.order * self.order].iter_mut() {
            *x *= s;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.order, other.order);
        let mut out = *self;
        let n = self.order * self.order;
        for (x, y) in out.data[..n].iter_mut().zip(&other.data[..n]) {
            *x += *y;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.order, other.order);
        let mut out = *self;
        let n = self.order * self.order;
        for (x, y) in out.data[..n].iter_mut().zip(&other.data[..n]) {
            *x -= *y;
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.order, other.order);
        let n = self.order;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for l in 0..n {
                    out.data[i * n + l] += a * other.data[k * n + l];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> SmallVec {
        let n = self.order;
        let mut out = [ZERO; MAX_ORDER];
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Computes `self^H x` without forming the adjoint.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> SmallVec {
        let n = self.order;
        let mut out = [ZERO; MAX_ORDER];
        for (k, &xk) in x.iter().enumerate().take(n) {
            for (i, o) in out.iter_mut().enumerate().take(n) {
                *o += self[(k, i)].conj() * xk;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data[..self.order * self.order]
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.order, other.order);
        let n = self.order * self.order;
        self.data[..n]
            .iter()
            .zip(&other.data[..n])
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data[..self.order * self.order]
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// LU factorization with partial pivoting.
    pub fn lu(&self) -> Result<Lu> {
        let n = self.order;
        let mut a = *self;
        let mut perm = [0usize; MAX_ORDER];
        for (i, p) in perm.iter_mut().enumerate().take(n) {
            *p = i;
        }
        let scale = self
            .data
            .iter()
            .take(n * n)
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::SingularMatrix);
        }
        let mut swaps = 0usize;
        for k in 0..n {
            let (piv, mag) = (k..n)
                .map(|r| (r, a[(r, k)].norm()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if !(mag > f64::EPSILON * scale * n as f64) {
                return Err(Error::SingularMatrix);
            }
            if piv != k {
                for c in 0..n {
                    a.data.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
                swaps += 1;
            }
            let inv = a[(k, k)].inv();
            for r in k + 1..n {
                let factor = a[(r, k)] * inv;
                a[(r, k)] = factor;
                for c in k + 1..n {
                    let t = a[(k, c)];
                    a[(r, c)] -= factor * t;
                }
            }
        }
        Ok(Lu {
            lu: a,
            perm,
            odd: swaps % 2 == 1,
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(self.lu()?.inverse())
    }
}

/// Packed LU factors with row permutation: `P·A = L·U`.
#[derive(Clone, Copy, Debug)]
pub struct Lu {
    lu: ComplexMatrix,
    perm: [usize; MAX_ORDER],
    odd: bool,
}

impl Lu {
    pub fn order(&self) -> usize {
        self.lu.order
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> SmallVec {
        let n = self.lu.order;
        let mut x = [ZERO; MAX_ORDER];
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> SmallVec {
        // A^H = U^H L^H P, so solve U^H z = b, L^H w = z, then x = P^T w.
        let n = self.lu.order;
        let mut z = [ZERO; MAX_ORDER];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lu[(k, i)].conj() * z[k];
            }
            z[i] = s / self.lu[(i, i)].conj();
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.lu[(k, i)].conj() * z[k];
            }
            z[i] = s;
        }
        let mut x = [ZERO; MAX_ORDER];
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }

    pub fn inverse(&self) -> ComplexMatrix {
        let n = self.lu.order;
        let mut out = ComplexMatrix::zeros(n);
        let mut e = [ZERO; MAX_ORDER];
        for l in 0..n {
            e[l] = ONE;
            let col = self.solve(&e);
            out.set_column(l, &col);
            e[l] = ZERO;
        }
        out
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.lu.order)
            .map(|i| self.lu[(i, i)].norm().ln())
            .sum()
    }

    pub fn det(&self) -> Complex64 {
        let d: Complex64 = (0..self.lu.order).map(|i| self.lu[(i, i)]).product();
        if self.odd {
            -d
        } else {
            d
        }
    }
}

/// Hermitian matrix held as its packed lower triangle.
///
/// Positive definiteness is the expected use but is only verified when a
/// factorization is requested ([`cholesky`]).
#[derive(Clone, Copy, PartialEq)]
pub struct HermitianPd {
    order: usize,
    lower: [Complex64; TRI_CAP],
}

impl fmt::Debug for HermitianPd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianPd")
            .field("order", &self.order)
            .field("lower", &&self.lower[..self.packed_len()])
            .finish()
    }
}

impl HermitianPd {
    pub fn zeros(order: usize) -> Self {
        check_order(order);
        Self {
            order,
            lower: [ZERO; TRI_CAP],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.lower[tri(i, i)] = ONE;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.lower[tri(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Builds from a function evaluated on the lower triangle (`l <= i`).
    /// Diagonal imaginary parts are discarded.
    pub fn from_lower_fn(order: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            for l in 0..=i {
                m.set(i, l, f(i, l));
            }
        }
        m
    }

    /// Takes the lower triangle of `m` as-is.
    pub fn from_lower(m: &ComplexMatrix) -> Self {
        Self::from_lower_fn(m.order(), |i, l| m[(i, l)])
    }

    /// Hermitian part `(m + m^H) / 2`.
    pub fn hermitian_part(m: &ComplexMatrix) -> Self {
        Self::from_lower_fn(m.order(), |i, l| (m[(i, l)] + m[(l, i)].conj()) * 0.5)
    }

    /// Packed lower triangle, row by row, as produced by [`Self::packed`].
    pub fn from_packed(order: usize, packed: &[Complex64]) -> Self {
        let mut m = Self::zeros(order);
        m.lower[..packed_len(order)].copy_from_slice(&packed[..packed_len(order)]);
        m
    }

    /// `y y^H`.
    pub fn outer(y: &[Complex64]) -> Self {
        Self::from_lower_fn(y.len(), |i, l| y[i] * y[l].conj())
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn packed_len(&self) -> usize {
        packed_len(self.order)
    }

    pub fn packed(&self) -> &[Complex64] {
        &self.lower[..self.packed_len()]
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> Complex64 {
        if l <= i {
            self.lower[tri(i, l)]
        } else {
            self.lower[tri(l, i)].conj()
        }
    }

    /// Sets entry `(i, l)` and, implicitly, its mirror `(l, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, l: usize, value: Complex64) {
        if i == l {
            self.lower[tri(i, i)] = Complex64::new(value.re, 0.0);
        } else if l < i {
            self.lower[tri(i, l)] = value;
        } else {
            self.lower[tri(l, i)] = value.conj();
        }
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.lower[tri(i, i)].re
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.diag(i)).sum()
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.order)
            .map(|i| self.diag(i))
            .fold(f64::MIN, f64::max)
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.order, |i, l| self.get(i, l))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for x in out.lower[..self.packed_len()].iter_mut() {
            *x *= s;
        }
        out
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.order, other.order);
        let n = self.packed_len();
        for (x, y) in self.lower[..n].iter_mut().zip(&other.lower[..n]) {
            *x += *y * alpha;
        }
    }

    /// `self += alpha * y y^H`.
    pub fn add_outer(&mut self, alpha: f64, y: &[Complex64]) {
        for i in 0..self.order {
            let yi = y[i] * alpha;
            for l in 0..=i {
                self.lower[tri(i, l)] += yi * y[l].conj();
            }
        }
    }

    pub fn add_identity(&mut self, alpha: f64) {
        for i in 0..self.order {
            self.lower[tri(i, i)].re += alpha;
        }
    }

    /// `Re tr(self · other)`, computed without forming the product.
    pub fn trace_product(&self, other: &Self) -> f64 {
        assert_eq!(self.order, other.order);
        let mut acc = 0.0;
        for i in 0..self.order {
            acc += self.diag(i) * other.diag(i);
            for l in 0..i {
                // a_il * b_li + a_li * b_il = 2 Re(a_il * conj(b_il))
                acc += 2.0 * (self.lower[tri(i, l)] * other.lower[tri(i, l)].conj()).re;
            }
        }
        acc
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> SmallVec {
        let mut out = [ZERO; MAX_ORDER];
        for (i, o) in out.iter_mut().enumerate().take(self.order) {
            for (l, xl) in x.iter().enumerate().take(self.order) {
                *o += self.get(i, l) * xl;
            }
        }
        out
    }

    /// `(x^H self x)`, real for Hermitian `self`.
    pub fn quadratic_form(&self, x: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.order {
            acc += self.diag(i) * x[i].norm_sqr();
            for l in 0..i {
                acc += 2.0 * (x[i].conj() * self.lower[tri(i, l)] * x[l]).re;
            }
        }
        acc
    }

    /// `Q^H self Q` for a general `Q`.
    pub fn congruence(&self, q: &ComplexMatrix) -> Self {
        let full = self.to_matrix();
        Self::hermitian_part(&q.adjoint().mul(&full).mul(q))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.order, other.order);
        let n = self.packed_len();
        self.lower[..n]
            .iter()
            .zip(&other.lower[..n])
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.to_matrix().frobenius_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.packed()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[inline]
pub fn packed_len(order: usize) -> usize {
    order * (order + 1) / 2
}

/// Diagonal matrix with strictly positive real entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagonalPd {
    order: usize,
    diag: [f64; MAX_ORDER],
}

impl DiagonalPd {
    pub fn new(diag: &[f64]) -> Result<Self> {
        check_order(diag.len());
        if diag.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut out = [0.0; MAX_ORDER];
        out[..diag.len()].copy_from_slice(diag);
        Ok(Self {
            order: diag.len(),
            diag: out,
        })
    }

    pub fn identity(order: usize) -> Self {
        check_order(order);
        let mut diag = [0.0; MAX_ORDER];
        diag[..order].fill(1.0);
        Self { order, diag }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.diag[..self.order]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn inverse(&self) -> Self {
        let mut out = *self;
        for d in out.diag[..self.order].iter_mut() {
            *d = 1.0 / *d;
        }
        out
    }

    pub fn to_hermitian(&self) -> HermitianPd {
        HermitianPd::from_diag(self.as_slice())
    }
}

/// Lower-triangular `L` with `L L^H = m`.
pub fn cholesky(m: &HermitianPd) -> Result<ComplexMatrix> {
    let n = m.order();
    let max_diag = m.max_diag();
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    let threshold = PIVOT_THRESHOLD * max_diag;
    let mut l = ComplexMatrix::zeros(n);
    for j in 0..n {
        let mut d = m.diag(j);
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > threshold) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let ljj = d.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        let inv = 1.0 / ljj;
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s * inv;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with real positive diagonal.
fn invert_lower(l: &ComplexMatrix) -> ComplexMatrix {
    let n = l.order();
    let mut inv = ComplexMatrix::zeros(n);
    let mut recip = [0.0; MAX_ORDER];
    for (i, r) in recip.iter_mut().enumerate().take(n) {
        *r = 1.0 / l[(i, i)].re;
    }
    for j in 0..n {
        inv[(j, j)] = Complex64::new(recip[j], 0.0);
        for i in j + 1..n {
            let mut s = ZERO;
            for k in j..i {
                s -= l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = s * recip[i];
        }
    }
    inv
}

/// Solves `L z = y` for lower-triangular `L`.
fn forward_solve(l: &ComplexMatrix, y: &[Complex64]) -> SmallVec {
    let n = l.order();
    let mut z = [ZERO; MAX_ORDER];
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)].re;
    }
    z
}

pub fn invert_pd(m: &HermitianPd) -> Result<HermitianPd> {
    let l = cholesky(m)?;
    let linv = invert_lower(&l);
    let n = m.order();
    // m^{-1} = L^{-H} L^{-1}
    Ok(HermitianPd::from_lower_fn(n, |i, j| {
        let mut s = ZERO;
        for k in i..n {
            s += linv[(k, i)].conj() * linv[(k, j)];
        }
        s
    }))
}

/// Inverts `m`, retrying once with `eps * tr(m)/I` added to the diagonal.
pub fn invert_pd_regularized(m: &HermitianPd, eps: f64) -> Result<HermitianPd> {
    match invert_pd(m) {
        Ok(inv) => Ok(inv),
        Err(_) => {
            let mut reg = *m;
            let load = eps * (m.trace() / m.order() as f64).max(f64::MIN_POSITIVE);
            reg.add_identity(load);
            invert_pd(&reg)
        }
    }
}

pub fn logdet_pd(m: &HermitianPd) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(2.0 * (0..m.order()).map(|i| l[(i, i)].re.ln()).sum::<f64>())
}

/// `ln N(y; 0, r)` for the circularly-symmetric complex Gaussian:
/// `-I ln(pi) - ln det r - y^H r^{-1} y`.
pub fn gaussian_logpdf(y: &[Complex64], r: &HermitianPd) -> Result<f64> {
    if y.len() != r.order() {
        return Err(Error::DimensionMismatch {
            expected: r.order(),
            actual: y.len(),
        });
    }
    let l = cholesky(r)?;
    let n = r.order();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].re.ln()).sum::<f64>();
    let z = forward_solve(&l, y);
    let quad: f64 = z[..n].iter().map(|c| c.norm_sqr()).sum();
    Ok(-(n as f64) * PI.ln() - logdet - quad)
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn cholesky_of_identity_is_identity() {
        let l = cholesky(&HermitianPd::identity(3)).unwrap();
        assert_eq!(l, ComplexMatrix::identity(3));
    }

    #[test]
    fn cholesky_of_diagonal_takes_square_roots() {
        let l = cholesky(&HermitianPd::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(l, ComplexMatrix::from_diag(&[2.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for order in 1..=MAX_ORDER {
            let m = random_pd(&mut rng, order);
            let l = cholesky(&m).unwrap();
            for i in 0..order {
                for k in i + 1..order {
                    assert_eq!(l[(i, k)], ZERO);
                }
            }
            let recon = l.mul(&l.adjoint());
            assert!(rel_err(&recon, &m.to_matrix()) <= 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_and_singular() {
        let indefinite = HermitianPd::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            cholesky(&indefinite),
            Err(Error::NotPositiveDefinite)
        ));
        let singular = HermitianPd::outer(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        assert!(matches!(
            cholesky(&singular),
            Err(Error::NotPositiveDefinite)
        ));
        let nan = HermitianPd::from_diag(&[f64::NAN, 1.0]);
        assert!(cholesky(&nan).is_err());
        assert!(cholesky(&HermitianPd::zeros(2)).is_err());
    }

    #[test]
    fn invert_pd_trivial_cases() {
        assert_eq!(
            invert_pd(&HermitianPd::identity(2)).unwrap(),
            HermitianPd::identity(2)
        );
        let inv = invert_pd(&HermitianPd::from_diag(&[2.0, 4.0, 8.0])).unwrap();
        assert!(inv.max_abs_diff(&HermitianPd::from_diag(&[0.5, 0.25, 0.125])) < 1e-15);
    }

    #[test]
    fn invert_pd_matches_gauss_jordan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for order in 1..=MAX_ORDER {
            for _ in 0..20 {
                let m = random_pd(&mut rng, order);
                let inv = invert_pd(&m).unwrap().to_matrix();
                let oracle = gauss_jordan_inverse(&m.to_matrix());
                assert!(inv.max_abs_diff(&oracle) <= 1e-10 * oracle.frobenius_norm());
                let prod = m.to_matrix().mul(&inv);
                assert!(rel_err(&prod, &ComplexMatrix::identity(order)) <= 1e-10);
            }
        }
    }

    #[test]
    fn regularized_inverse_rescues_singular_matrix() {
        let y = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let singular = HermitianPd::outer(&y);
        assert!(invert_pd(&singular).is_err());
        let inv = invert_pd_regularized(&singular, 1e-6).unwrap();
        assert!(inv.is_finite());
    }

    #[test]
    fn logdet_trivial_cases() {
        assert_eq!(logdet_pd(&HermitianPd::identity(3)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let v = logdet_pd(&HermitianPd::from_diag(&[e, e])).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_cofactor_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = random_pd(&mut rng, 3);
            let det = cofactor_det(&to_rows(&m.to_matrix()));
            assert!(det.im.abs() < 1e-9 * det.re.abs());
            assert!((logdet_pd(&m).unwrap() - det.re.ln()).abs() <= 1e-9);
        }
    }

    #[test]
    fn gaussian_logpdf_trivial_cases() {
        let r = HermitianPd::identity(2);
        let zero = [ZERO; 2];
        let v = gaussian_logpdf(&zero, &r).unwrap();
        assert!((v + 2.0 * PI.ln()).abs() < 1e-15);
        let y = [ONE, ZERO];
        let v = gaussian_logpdf(&y, &r).unwrap();
        assert!((v + 2.0 * PI.ln() + 1.0).abs() < 1e-15);
        assert!(matches!(
            gaussian_logpdf(&[ONE; 3], &r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_logpdf_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for order in 1..=5 {
            for _ in 0..20 {
                let r = random_pd(&mut rng, order);
                let y: Vec<Complex64> = (0..order).map(|_| random_complex(&mut rng)).collect();
                let inv = gauss_jordan_inverse(&r.to_matrix());
                let iy = inv.mul_vec(&y);
                let quad: Complex64 = y.iter().zip(&iy[..order]).map(|(a, b)| a.conj() * b).sum();
                let det = cofactor_det(&to_rows(&r.to_matrix()));
                let oracle = -(order as f64) * PI.ln() - det.re.ln() - quad.re;
                assert!((gaussian_logpdf(&y, &r).unwrap() - oracle).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_logpdf_decreases_with_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_pd(&mut rng, 3);
        let y: Vec<Complex64> = (0..3).map(|_| random_complex(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let s = k as f64 * 0.5;
            let ys: Vec<Complex64> = y.iter().map(|c| c * s).collect();
            let v = gaussian_logpdf(&ys, &r).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        // I = 1, r = 2: integrate exp(logpdf) over a disc of radius 12 in polar coordinates.
        let r = HermitianPd::from_diag(&[2.0]);
        let radial_steps = 4000;
        let r_max = 12.0;
        let h = r_max / radial_steps as f64;
        let mut total = 0.0;
        for k in 0..radial_steps {
            let rho = (k as f64 + 0.5) * h;
            // density is rotationally symmetric; sample a single angle
            let y = [Complex64::from_polar(rho, 0.3)];
            let p = gaussian_logpdf(&y, &r).unwrap().exp();
            total += p * 2.0 * PI * rho * h;
        }
        assert!((total - 1.0).abs() < 1e-3, "integral = {total}");
    }

    #[test]
    fn lu_inverse_and_adjoint_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for order in 1..=MAX_ORDER {
            let a = random_matrix(&mut rng, order);
            let lu = a.lu().unwrap();
            let inv = lu.inverse();
            let oracle = gauss_jordan_inverse(&a);
            assert!(inv.max_abs_diff(&oracle) <= 1e-9 * oracle.frobenius_norm());
            let b: Vec<Complex64> = (0..order).map(|_| random_complex(&mut rng)).collect();
            let x = lu.solve_adjoint(&b);
            let back = a.adjoint().mul_vec(&x[..order]);
            for i in 0..order {
                assert!((back[i] - b[i]).norm() < 1e-9);
            }
            let det = cofactor_det(&to_rows(&a));
            if order <= 5 {
                assert!((lu.det() - det).norm() <= 1e-9 * det.norm().max(1.0));
                assert!((lu.log_abs_det() - det.norm().ln()).abs() < 1e-9);
            }
        }
        assert!(matches!(
            ComplexMatrix::zeros(3).lu(),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn trace_product_and_quadratic_form_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_pd(&mut rng, 4);
        let b = random_pd(&mut rng, 4);
        let dense = a.to_matrix().mul(&b.to_matrix());
        let tr: f64 = (0..4).map(|i| dense[(i, i)].re).sum();
        assert!((a.trace_product(&b) - tr).abs() < 1e-12 * tr.abs());
        let x: Vec<Complex64> = (0..4).map(|_| random_complex(&mut rng)).collect();
        let ax = a.to_matrix().mul_vec(&x);
        let q: Complex64 = x.iter().zip(&ax[..4]).map(|(u, v)| u.conj() * v).sum();
        assert!((a.quadratic_form(&x) - q.re).abs() < 1e-12 * q.re.abs());
    }

    #[test]
    fn diagonal_pd_rejects_nonpositive() {
        assert!(DiagonalPd::new(&[1.0, 0.0]).is_err());
        assert!(DiagonalPd::new(&[1.0, -2.0]).is_err());
        let d = DiagonalPd::new(&[2.0, 4.0]).unwrap();
        assert_eq!(d.inverse().as_slice(), &[0.5, 0.25]);
    }

    fn pd_strategy() -> impl Strategy<Value = HermitianPd> {
        (1usize..=MAX_ORDER, any::<u64>()).prop_map(|(order, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_pd(&mut rng, order)
        })
    }

    proptest! {
        #[test]
        fn double_inverse_is_identity_map(m in pd_strategy()) {
            let back = invert_pd(&invert_pd(&m).unwrap()).unwrap();
            prop_assert!(back.to_matrix().sub(&m.to_matrix()).frobenius_norm()
                <= 1e-9 * m.frobenius_norm());
        }

        #[test]
        fn logdet_of_inverse_negates(m in pd_strategy()) {
            let a = logdet_pd(&m).unwrap();
            let b = logdet_pd(&invert_pd(&m).unwrap()).unwrap();
            prop_assert!((a + b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn hermitian_storage_is_exact(
            order in 1usize..=MAX_ORDER,
            vals in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 64),
        ) {
            let m = HermitianPd::from_lower_fn(order, |i, l| {
                let (re, im) = vals[i * MAX_ORDER + l];
                Complex64::new(re, im)
            });
            for i in 0..order {
                for l in 0..order {
                    prop_assert_eq!(m.get(i, l), m.get(l, i).conj());
                }
            }
        }
    }
}
