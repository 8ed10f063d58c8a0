//! Dense real matrix kernels.
//!
//! Everything here is sized for systems with at most a few hundred states:
//! row-major storage, straightforward loops, no BLAS. The matrix exponential
//! uses scaling and squaring around a diagonal Padé approximant; the φ₁
//! function has its own scaled Taylor series so that the two can be checked
//! against each other.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Dense real matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries. All entries must be finite.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("DenseMatrix::from_row_major", "rows, cols >= 1", format!("{rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("DenseMatrix::from_row_major", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    ///
    /// Panics if the rows are ragged or empty; meant for literals in code and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty(), "empty matrix literal");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix literal");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Builds a matrix by evaluating `f(row, col)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &DenseMatrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self += s * I`.
    pub fn add_diagonal(&mut self, s: f64) {
        assert!(self.is_square(), "add_diagonal on non-square matrix");
        let n = self.rows;
        for i in 0..n {
            self.data[i * n + i] += s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self[(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Matrix product with shape checking.
    pub fn try_mul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(
                "matrix product",
                format!("lhs cols = rhs rows ({})", self.cols),
                format!("{}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        Ok(self.mul_unchecked(rhs))
    }

    fn mul_unchecked(&self, rhs: &DenseMatrix) -> DenseMatrix {
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        DenseMatrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matrix-vector shape mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;
    /// Panics on incompatible shapes; use [`DenseMatrix::try_mul`] for a checked product.
    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        self.mul_unchecked(rhs)
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;
    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum shape mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;
    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix difference shape mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&DenseMatrix> for DenseMatrix {
    fn add_assign(&mut self, rhs: &DenseMatrix) {
        self.axpy(1.0, rhs);
    }
}

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;
    fn neg(self) -> DenseMatrix {
        self.scale(-1.0)
    }
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn require_square(op: &'static str, a: &DenseMatrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::dim(op, "square matrix", format!("{}x{}", a.rows, a.cols)))
    }
}

// ---------------------------------------------------------------------------
// LU with partial pivoting
// ---------------------------------------------------------------------------

/// Relative pivot threshold below which a matrix counts as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-14;

/// Packed LU factors of a square matrix with row permutation.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes `a`. Fails when a pivot falls below `1e-14 * ||a||_F`.
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        require_square("lu", a)?;
        let n = a.rows;
        let threshold = SINGULAR_PIVOT_TOL * frobenius_norm(a);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv_row, piv_val) = (k..n)
                .map(|r| (r, lu[(r, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_val <= threshold || piv_val == 0.0 {
                return Err(Error::SingularMatrix { pivot: piv_val });
            }
            if piv_row != k {
                for c in 0..n {
                    lu.data.swap(k * n + c, piv_row * n + c);
                }
                perm.swap(k, piv_row);
            }
            let pivot = lu[(k, k)];
            for r in k + 1..n {
                let factor = lu[(r, k)] / pivot;
                lu[(r, k)] = factor;
                if factor != 0.0 {
                    for c in k + 1..n {
                        lu.data[r * n + c] -= factor * lu.data[k * n + c];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.lu.rows;
        if b.rows != n {
            return Err(Error::dim("lu solve", format!("{n} rows"), b.rows));
        }
        let m = b.cols;
        let mut x = DenseMatrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.data[i * m..(i + 1) * m].copy_from_slice(b.row(p));
        }
        // forward substitution, unit lower triangle
        for i in 0..n {
            for k in 0..i {
                let l = self.lu.data[i * n + k];
                if l != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= l * x.data[k * m + c];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu.data[i * n + k];
                if u != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= u * x.data[k * m + c];
                    }
                }
            }
            let d = self.lu.data[i * n + i];
            for c in 0..m {
                x.data[i * m + c] /= d;
            }
        }
        Ok(x)
    }
}

/// Returns `X` with `A X = B` using partial-pivot LU.
pub fn solve_linear(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    Lu::new(a)?.solve(b)
}

/// True when `a` is square and LU factorization hits a pivot below the singularity threshold.
pub fn is_singular(a: &DenseMatrix) -> bool {
    matches!(Lu::new(a), Err(Error::SingularMatrix { .. }))
}

// ---------------------------------------------------------------------------
// Matrix exponential
// ---------------------------------------------------------------------------

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm bounds under which each Padé degree reaches unit roundoff (Higham 2005).
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.53939833006323e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

/// Matrix exponential `e^A` by scaling and squaring with a diagonal Padé approximant.
pub fn mat_exp(a: &DenseMatrix) -> Result<DenseMatrix> {
    require_square("mat_exp", a)?;
    if !a.is_finite() {
        return Err(Error::NonFinite("mat_exp input"));
    }
    let n = a.rows;
    let norm = a.norm_1();
    if norm == 0.0 {
        return Ok(DenseMatrix::identity(n));
    }

    for (theta, coeffs) in [
        (THETA3, &PADE3[..]),
        (THETA5, &PADE5[..]),
        (THETA7, &PADE7[..]),
        (THETA9, &PADE9[..]),
    ] {
        if norm <= theta {
            let (u, v) = pade_low(a, coeffs);
            return pade_quotient(&u, &v);
        }
    }

    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings));
    let (u, v) = pade13(&scaled);
    let mut r = pade_quotient(&u, &v)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Odd and even parts `(U, V)` of a low-degree Padé numerator.
fn pade_low(a: &DenseMatrix, b: &[f64]) -> (DenseMatrix, DenseMatrix) {
    let n = a.rows;
    let a2 = a * a;
    let mut powers = vec![DenseMatrix::identity(n), a2.clone()];
    while powers.len() < b.len() / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = DenseMatrix::zeros(n, n);
    let mut v = DenseMatrix::zeros(n, n);
    for (j, p) in powers.iter().enumerate() {
        u_inner.axpy(b[2 * j + 1], p);
        v.axpy(b[2 * j], p);
    }
    (a * &u_inner, v)
}

fn pade13(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let b = &PADE13;
    let n = a.rows;
    let ident = DenseMatrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let mut u_hi = a6.scale(b[13]);
    u_hi.axpy(b[11], &a4);
    u_hi.axpy(b[9], &a2);
    let mut u_inner = &a6 * &u_hi;
    u_inner.axpy(b[7], &a6);
    u_inner.axpy(b[5], &a4);
    u_inner.axpy(b[3], &a2);
    u_inner.axpy(b[1], &ident);
    let u = a * &u_inner;

    let mut v_hi = a6.scale(b[12]);
    v_hi.axpy(b[10], &a4);
    v_hi.axpy(b[8], &a2);
    let mut v = &a6 * &v_hi;
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.axpy(b[0], &ident);
    (u, v)
}

/// `(V - U)^{-1} (V + U)`.
fn pade_quotient(u: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    solve_linear(&(v - u), &(v + u))
}

// ---------------------------------------------------------------------------
// φ₁
// ---------------------------------------------------------------------------

const PHI_TAYLOR_DEGREE: usize = 13;
const PHI_SCALE_BOUND: f64 = 0.5;

/// Returns `(e^X, (e^X - I) X^{-1})` from one scaled Taylor series.
///
/// The second factor is the power series `Σ X^h / (h+1)!`, so it is well defined
/// for singular `X`. Scaling uses `φ₁(2Y) = ½ φ₁(Y) (e^Y + I)`.
pub fn exp_and_phi1(x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    require_square("exp_and_phi1", x)?;
    if !x.is_finite() {
        return Err(Error::NonFinite("exp_and_phi1 input"));
    }
    let n = x.rows;
    let norm = x.norm_1();
    let squarings = if norm > PHI_SCALE_BOUND {
        (norm / PHI_SCALE_BOUND).log2().ceil() as i32
    } else {
        0
    };
    let y = x.scale(0.5f64.powi(squarings));

    // Horner on Σ_{h=0}^{d} Y^h / (h+1)!
    let inv_fact = |k: usize| -> f64 { (1..=k).fold(1.0, |acc, i| acc / i as f64) };
    let mut phi = DenseMatrix::identity(n).scale(inv_fact(PHI_TAYLOR_DEGREE + 1));
    for h in (0..PHI_TAYLOR_DEGREE).rev() {
        phi = &y * &phi;
        phi.add_diagonal(inv_fact(h + 1));
    }
    let mut exp = &y * &phi;
    exp.add_diagonal(1.0);

    for _ in 0..squarings {
        let mut e_plus_i = exp.clone();
        e_plus_i.add_diagonal(1.0);
        phi = (&phi * &e_plus_i).scale(0.5);
        exp = &exp * &exp;
    }
    Ok((exp, phi))
}

/// `Σ_{h≥0} (-1)^h A^h / (h+1)!`, i.e. the matrix `M` with `M A = A M = I - e^{-A}`.
///
/// Equals `(I - e^{-A}) A^{-1}` when `A` is invertible and stays finite when it is not.
pub fn phi1(a: &DenseMatrix) -> Result<DenseMatrix> {
    require_square("phi1", a)?;
    Ok(exp_and_phi1(&-a)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> DenseMatrix {
        DenseMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0) * scale)
    }

    fn with_norm(a: DenseMatrix, target: f64) -> DenseMatrix {
        let s = target / a.frobenius_norm();
        a.scale(s)
    }

    /// Plain Taylor series with scaling, no Padé: the independent oracle for small inputs.
    fn taylor_exp(a: &DenseMatrix) -> DenseMatrix {
        let s = (a.frobenius_norm().max(1e-300).log2().ceil().max(0.0)) as i32 + 1;
        let y = a.scale(0.5f64.powi(s));
        let n = a.rows();
        let mut term = DenseMatrix::identity(n);
        let mut sum = DenseMatrix::identity(n);
        for k in 1..40 {
            term = (&term * &y).scale(1.0 / k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        (a - b).frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(mat_exp(&DenseMatrix::zeros(2, 2)).unwrap(), DenseMatrix::identity(2));
    }

    #[test]
    fn exp_of_nilpotent_terminates() {
        let a = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let e = mat_exp(&a).unwrap();
        let expected = DenseMatrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert!((&e - &expected).max_abs() < 1e-15, "{e:?}");
    }

    #[test]
    fn exp_scalar_matches_taylor_oracle() {
        let a = DenseMatrix::from_rows(&[&[-0.2]]);
        let oracle = taylor_exp(&a)[(0, 0)];
        assert!((oracle - 0.818_730_753_077_981_9).abs() < 1e-15);
        assert!((mat_exp(&a).unwrap()[(0, 0)] - oracle).abs() < 1e-15);
    }

    #[test]
    fn exp_matches_taylor_across_pade_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm in [1e-3, 0.1, 0.5, 1.5, 4.0, 9.0, 30.0] {
            let a = with_norm(random_matrix(&mut rng, 5, 5, 1.0), norm);
            let err = rel_err(&mat_exp(&a).unwrap(), &taylor_exp(&a));
            assert!(err < 1e-12, "norm {norm}: rel err {err:e}");
        }
    }

    #[test]
    fn exp_of_symmetric_matches_spectral_form() {
        // Q from Gram-Schmidt, A = Q D Q^T with ||A||_F = 50.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let raw = random_matrix(&mut rng, n, n, 1.0);
        let mut q = DenseMatrix::zeros(n, n);
        for c in 0..n {
            let mut v: Vec<f64> = (0..n).map(|r| raw[(r, c)]).collect();
            for p in 0..c {
                let dot: f64 = (0..n).map(|r| q[(r, p)] * v[r]).sum();
                for r in 0..n {
                    v[r] -= dot * q[(r, p)];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for r in 0..n {
                q[(r, c)] = v[r] / norm;
            }
        }
        let eig = [-30.0, -25.0, 20.0, 26.0];
        let scale = 50.0 / eig.iter().map(|e| e * e).sum::<f64>().sqrt();
        let d: Vec<f64> = eig.iter().map(|e| e * scale).collect();
        let a = &(&q * &DenseMatrix::from_diagonal(&d)) * &q.transpose();
        let ed: Vec<f64> = d.iter().map(|v| v.exp()).collect();
        let expected = &(&q * &DenseMatrix::from_diagonal(&ed)) * &q.transpose();
        let err = rel_err(&mat_exp(&a).unwrap(), &expected);
        assert!(err < 1e-12, "rel err {err:e}");
    }

    #[test]
    fn exp_times_exp_neg_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let norm = rng.gen_range(0.01..10.0);
            let a = with_norm(random_matrix(&mut rng, 4, 4, 1.0), norm);
            let prod = &mat_exp(&a).unwrap() * &mat_exp(&-&a).unwrap();
            let dev = (&prod - &DenseMatrix::identity(4)).frobenius_norm();
            assert!(dev < 1e-10, "norm {norm}: deviation {dev:e}");
        }
    }

    #[test]
    fn exp_of_block_diagonal_is_block_diagonal() {
        let a = DenseMatrix::from_rows(&[
            &[-1.0, 2.0, 0.0, 0.0],
            &[0.5, -3.0, 0.0, 0.0],
            &[0.0, 0.0, 0.3, 1.0],
            &[0.0, 0.0, -1.0, 0.3],
        ]);
        let e = mat_exp(&a).unwrap();
        let b1 = mat_exp(&DenseMatrix::from_rows(&[&[-1.0, 2.0], &[0.5, -3.0]])).unwrap();
        let b2 = mat_exp(&DenseMatrix::from_rows(&[&[0.3, 1.0], &[-1.0, 0.3]])).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((e[(r, c)] - b1[(r, c)]).abs() < 1e-14);
                assert!((e[(r + 2, c + 2)] - b2[(r, c)]).abs() < 1e-14);
                assert_eq!(e[(r, c + 2)], 0.0);
                assert_eq!(e[(r + 2, c)], 0.0);
            }
        }
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(matches!(mat_exp(&DenseMatrix::zeros(2, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn phi1_of_zero_is_identity() {
        assert_eq!(phi1(&DenseMatrix::zeros(3, 3)).unwrap(), DenseMatrix::identity(3));
    }

    #[test]
    fn phi1_scalar_closed_form() {
        let v = phi1(&DenseMatrix::from_rows(&[&[1.0]])).unwrap()[(0, 0)];
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 0.632_120_56).abs() < 1e-8);
        // larger argument goes through the squaring recursion
        let v = phi1(&DenseMatrix::from_rows(&[&[-7.5]])).unwrap()[(0, 0)];
        let exact = (1.0 - 7.5f64.exp()) / -7.5;
        assert!(((v - exact) / exact).abs() < 1e-13);
    }

    #[test]
    fn phi1_identity_against_mat_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..20 {
            let mut a = random_matrix(&mut rng, 4, 4, 2.0);
            if i % 4 == 0 {
                // rank-deficient: duplicate a row
                for c in 0..4 {
                    a[(3, c)] = a[(0, c)];
                }
            }
            let lhs = &(&phi1(&a).unwrap() * &a) + &mat_exp(&-&a).unwrap();
            let dev = (&lhs - &DenseMatrix::identity(4)).frobenius_norm();
            assert!(dev < 1e-10, "case {i}: deviation {dev:e}");
            let rhs = &a * &phi1(&a).unwrap();
            let dev = (&(&rhs + &mat_exp(&-&a).unwrap()) - &DenseMatrix::identity(4)).frobenius_norm();
            assert!(dev < 1e-10);
        }
    }

    #[test]
    fn phi1_of_exactly_singular_matrix() {
        let a = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        // series: I - A/2 (A^2 = 0)
        let m = phi1(&a).unwrap();
        let expected = DenseMatrix::from_rows(&[&[1.0, -0.5], &[0.0, 1.0]]);
        assert!((&m - &expected).max_abs() < 1e-15);
        assert!(is_singular(&a));
    }

    #[test]
    fn exp_and_phi1_agree_with_mat_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for norm in [0.2, 3.0, 40.0] {
            let x = with_norm(random_matrix(&mut rng, 6, 6, 1.0), norm);
            let (e, _) = exp_and_phi1(&x).unwrap();
            let err = rel_err(&e, &mat_exp(&x).unwrap());
            assert!(err < 1e-11, "norm {norm}: {err:e}");
        }
    }

    #[test]
    fn frobenius_examples() {
        assert!((frobenius_norm(&DenseMatrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(2, 5)), 0.0);
        assert_eq!(frobenius_norm(&DenseMatrix::from_rows(&[&[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn solve_examples() {
        let b = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(solve_linear(&DenseMatrix::identity(2), &b).unwrap(), b);

        let a = DenseMatrix::from_diagonal(&[2.0, 4.0]);
        let x = solve_linear(&a, &DenseMatrix::from_rows(&[&[2.0], &[8.0]])).unwrap();
        assert_eq!(x, DenseMatrix::from_rows(&[&[1.0], &[2.0]]));
    }

    #[test]
    fn solve_residual_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let mut a = random_matrix(&mut rng, 5, 5, 1.0);
            a.add_diagonal(3.0);
            let b = random_matrix(&mut rng, 5, 3, 1.0);
            let x = solve_linear(&a, &b).unwrap();
            let res = (&(&a * &x) - &b).frobenius_norm();
            assert!(res <= 1e-10 * b.frobenius_norm(), "residual {res:e}");
        }
    }

    #[test]
    fn solve_reports_singular_pivot() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        match solve_linear(&a, &DenseMatrix::identity(2)) {
            Err(Error::SingularMatrix { pivot }) => assert!(pivot < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(DenseMatrix::from_row_major(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::from_row_major(0, 2, vec![]).is_err());
        assert!(matches!(
            DenseMatrix::from_row_major(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn try_mul_checks_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(a.try_mul(&DenseMatrix::zeros(2, 3)).is_err());
        assert_eq!(a.try_mul(&DenseMatrix::zeros(3, 4)).unwrap().shape(), (2, 4));
    }
}
