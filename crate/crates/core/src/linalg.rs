//! Small dense and sparse linear-algebra helpers shared by the modules.
//!
//! Dense eigenproblems go through `faer`; iterative pieces (CG, banded LU,
//! CSR products) are thin loops over plain slices.

use crate::error::{Error, Result};
use faer::complex_native::c64;
use faer::prelude::*;
use faer::{Mat, Side};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { n, m, data: vec![0.0; n * m] }
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::zeros(n, n);
        for i in 0..n {
            d.data[i * n + i] = 1.0;
        }
        d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.m);
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.m..(i + 1) * self.m];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.m, self.n);
        for i in 0..self.n {
            for j in 0..self.m {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        assert_eq!(self.m, other.n);
        let mut out = Dense::zeros(self.n, other.m);
        for i in 0..self.n {
            for k in 0..self.m {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.m..(k + 1) * other.m];
                let dst = &mut out.data[i * other.m..(i + 1) * other.m];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.m, |i, j| self.get(i, j))
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending; `vectors[k]` is the k-th eigenvector.
pub fn sym_eig(a: &Dense) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.n != a.m {
        return Err(Error::Invalid("sym_eig needs a square matrix".into()));
    }
    let n = a.n;
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let evd = sym.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();
    let mut idx: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| s.read(i)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("symmetric eigensolve produced non-finite values".into()));
    }
    idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let values = idx.iter().map(|&k| vals[k]).collect();
    let vectors = idx.iter().map(|&k| (0..n).map(|i| u.read(i, k)).collect()).collect();
    Ok((values, vectors))
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &Dense) -> Result<Vec<(f64, f64)>> {
    if a.n != a.m {
        return Err(Error::Invalid("eigenvalues needs a square matrix".into()));
    }
    let ev: Vec<c64> = a.to_faer().eigenvalues();
    let out: Vec<(f64, f64)> = ev.into_iter().map(|z| (z.re, z.im)).collect();
    if out.iter().any(|(r, i)| !r.is_finite() || !i.is_finite()) {
        return Err(Error::Numerical("eigensolve did not converge".into()));
    }
    Ok(out)
}

/// Solve `a x = b` with partial-pivoting LU.
pub fn dense_solve(a: &Dense, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.to_faer().partial_piv_lu();
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..b.len()).map(|i| x.read(i, 0)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("dense solve produced non-finite values".into()));
    }
    Ok(out)
}

/// Inverse via partial-pivoting LU.
pub fn inverse(a: &Dense) -> Result<Dense> {
    if a.n != a.m {
        return Err(Error::Invalid("inverse needs a square matrix".into()));
    }
    let n = a.n;
    let x = a.to_faer().partial_piv_lu().solve(Mat::<f64>::identity(n, n));
    let out = Dense { n, m: n, data: (0..n * n).map(|k| x.read(k / n, k % n)).collect() };
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("singular matrix in inverse".into()));
    }
    Ok(out)
}

/// `exp(τA)` by scaling and squaring with a degree-16 Taylor polynomial.
pub fn expm(a: &Dense, tau: f64) -> Dense {
    let n = a.n;
    let norm1 = (0..n).map(|j| (0..n).map(|i| a.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max) * tau.abs();
    let s = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as i32 } else { 0 };
    let scale = tau / 2f64.powi(s);
    let mut b = a.clone();
    b.data.iter_mut().for_each(|x| *x *= scale);
    let mut out = Dense::identity(n);
    let mut term = Dense::identity(n);
    for k in 1..=16 {
        term = term.matmul(&b);
        term.data.iter_mut().for_each(|x| *x /= k as f64);
        out.data.iter_mut().zip(&term.data).for_each(|(o, t)| *o += t);
    }
    for _ in 0..s {
        out = out.matmul(&out);
    }
    out
}

/// Pencil `xᵀKx / xᵀDx` (K, D symmetric, D positive on the subspace) restricted to
/// `{cᵀx = 0 for every c in constraints}`; ascending eigenvalues, vectors in original coordinates.
pub fn generalized_sym_eig(k: &Dense, d: &Dense, constraints: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k.n;
    if k.m != n || d.n != n || d.m != n || constraints.iter().any(|c| c.len() != n) {
        return Err(Error::Invalid("pencil dimensions disagree".into()));
    }
    let q: Mat<f64> = if constraints.is_empty() {
        Mat::identity(n, n)
    } else {
        let c = Mat::from_fn(n, constraints.len(), |i, a| constraints[a][i]);
        let cct = &c * c.transpose();
        let evd = cct.selfadjoint_eigendecomposition(Side::Lower);
        let ev = evd.s().column_vector();
        let top = (0..n).map(|i| ev.read(i).abs()).fold(0.0, f64::max);
        let keep: Vec<usize> = (0..n).filter(|&i| ev.read(i).abs() <= 1e-12 * top).collect();
        if keep.is_empty() {
            return Err(Error::Invalid("constraints leave an empty subspace".into()));
        }
        let u = evd.u();
        Mat::from_fn(n, keep.len(), |i, a| u.read(i, keep[a]))
    };
    let kf = Mat::from_fn(n, n, |i, j| 0.5 * (k.get(i, j) + k.get(j, i)));
    let df = Mat::from_fn(n, n, |i, j| 0.5 * (d.get(i, j) + d.get(j, i)));
    let kr = q.transpose() * &kf * &q;
    let dr = q.transpose() * &df * &q;
    let r = q.ncols();
    let devd = dr.selfadjoint_eigendecomposition(Side::Lower);
    let dv = devd.s().column_vector();
    let dmax = (0..r).map(|i| dv.read(i)).fold(0.0, f64::max);
    if (0..r).any(|i| !(dv.read(i) > 1e-13 * dmax)) {
        return Err(Error::Numerical("pencil denominator is singular on the constraint subspace".into()));
    }
    let du = devd.u();
    let isq = Mat::from_fn(r, r, |i, j| {
        (0..r).map(|a| du.read(i, a) * du.read(j, a) / dv.read(a).sqrt()).sum::<f64>()
    });
    let c = &isq * &kr * &isq;
    let evd = c.selfadjoint_eigendecomposition(Side::Lower);
    let ev = evd.s().column_vector();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| ev.read(a).total_cmp(&ev.read(b)));
    let x = &q * (&isq * evd.u());
    let vals: Vec<f64> = order.iter().map(|&a| ev.read(a)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("pencil eigensolve produced non-finite values".into()));
    }
    let vecs = order.iter().map(|&a| (0..n).map(|i| x.read(i, a)).collect()).collect();
    Ok((vals, vecs))
}

/// Orthonormal basis of the orthogonal complement of `c` (Householder reflection).
pub fn complement_basis(c: &[f64]) -> Vec<Vec<f64>> {
    let n = c.len();
    let norm = dot(c, c).sqrt();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut u = c.to_vec();
    u[0] += sign * norm;
    let un = dot(&u, &u);
    (1..n)
        .map(|k| {
            // column k of I − 2uuᵀ/uᵀu
            let f = 2.0 * u[k] / un;
            (0..n).map(|i| if i == k { 1.0 } else { 0.0 } - f * u[i]).collect()
        })
        .collect()
}

/// Smallest eigenvalues of the pencil `x ↦ xᵀKx / xᵀDx` (D diagonal positive) on `{cᵀx = 0}`.
/// Returns ascending eigenvalues and eigenvectors in the original coordinates.
pub fn constrained_pencil(k: &Dense, d: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k.n;
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numerical("pencil weight must be positive".into()));
    }
    let s: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let cs: Vec<f64> = c.iter().zip(&s).map(|(a, b)| a * b).collect();
    let basis = complement_basis(&cs);
    let r = basis.len();
    let q = Mat::from_fn(n, r, |i, a| basis[a][i]);
    let h = Mat::from_fn(n, n, |i, j| s[i] * 0.5 * (k.get(i, j) + k.get(j, i)) * s[j]);
    let red = q.transpose() * &h * &q;
    let evd = red.selfadjoint_eigendecomposition(Side::Lower);
    let ev = evd.s().column_vector();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| ev.read(a).total_cmp(&ev.read(b)));
    let vals: Vec<f64> = order.iter().map(|&a| ev.read(a)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("pencil eigensolve produced non-finite values".into()));
    }
    let x = &q * evd.u();
    let vectors = order
        .iter()
        .map(|&a| (0..n).map(|i| x.read(i, a) * s[i]).collect())
        .collect();
    Ok((vals, vectors))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
/// `project` is applied to every residual/direction, e.g. to stay in a mean-zero subspace.
pub fn conjugate_gradient<A, P>(
    apply: A,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    project: P,
) -> Result<CgOutcome>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64]),
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = norm2(&r);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, relative_residual: 0.0 });
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        let mut ap = apply(&p);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!("CG breakdown at iteration {it} (pAp = {pap})")));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        if rel <= tol {
            project(&mut x);
            return Ok(CgOutcome { x, iterations: it, relative_residual: rel });
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Err(Error::Numerical(format!(
        "CG did not reach tolerance {tol:e} in {max_iter} iterations"
    )))
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Build from triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.values[k] * x[i];
            }
        }
        y
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, self.indices[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d.add(i, j, v);
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

/// LU factorization without pivoting of a banded matrix with half-bandwidth `bw`.
/// Intended for matrices whose symmetric part is positive definite.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    // row i stores columns i-bw ..= i+bw
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &Csr) -> Result<Self> {
        let n = a.nrows;
        let mut bw = 0usize;
        for (i, j, _) in a.triplets() {
            bw = bw.max(i.abs_diff(j));
        }
        let w = 2 * bw + 1;
        let mut band = vec![0.0; n * w];
        for (i, j, v) in a.triplets() {
            band[i * w + (j + bw - i)] += v;
        }
        let idx = |i: usize, j: usize| i * w + (j + bw - i);
        for k in 0..n {
            let piv = band[idx(k, k)];
            if piv.abs() < 1e-300 {
                return Err(Error::Numerical(format!("zero pivot at row {k} in banded LU")));
            }
            let iend = (k + bw).min(n - 1);
            for i in k + 1..=iend {
                let l = band[idx(i, k)] / piv;
                if l == 0.0 {
                    continue;
                }
                band[idx(i, k)] = l;
                for j in k + 1..=iend {
                    let ukj = band[idx(k, j)];
                    band[idx(i, j)] -= l * ukj;
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = 2 * bw + 1;
        let idx = |i: usize, j: usize| i * w + (j + bw - i);
        let mut y = b.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut acc = y[i];
            for j in j0..i {
                acc -= self.band[idx(i, j)] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let jend = (i + bw).min(n - 1);
            let mut acc = y[i];
            for j in i + 1..=jend {
                acc -= self.band[idx(i, j)] * y[j];
            }
            y[i] = acc / self.band[idx(i, i)];
        }
        y
    }
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Ordinary least squares line fit; returns `(slope, intercept, r²)`.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_eig_diagonal() {
        let mut a = Dense::zeros(3, 3);
        a.set(0, 0, 3.0);
        a.set(1, 1, -1.0);
        a.set(2, 2, 2.0);
        let (v, _) = sym_eig(&a).unwrap();
        assert_eq!(v.len(), 3);
        assert!((v[0] + 1.0).abs() < 1e-14 && (v[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn nonsymmetric_rotation_spectrum() {
        let mut a = Dense::zeros(2, 2);
        a.set(0, 1, -2.0);
        a.set(1, 0, 2.0);
        let mut ev = eigenvalues(&a).unwrap();
        ev.sort_by(|x, y| x.1.total_cmp(&y.1));
        assert!(ev[0].0.abs() < 1e-14 && (ev[0].1 + 2.0).abs() < 1e-14);
    }

    #[test]
    fn complement_is_orthonormal() {
        let c = [0.3, -1.0, 2.0, 0.5];
        let q = complement_basis(&c);
        assert_eq!(q.len(), 3);
        for a in 0..3 {
            assert!(dot(&q[a], &c).abs() < 1e-13);
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot(&q[a], &q[b]) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn banded_lu_matches_dense() {
        let n = 30;
        let mut t = vec![];
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.01));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, 0.5));
            }
            if i + 3 < n {
                t.push((i, i + 3, 0.25));
                t.push((i + 3, i, -0.25));
            }
        }
        let a = Csr::from_triplets(n, n, t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = BandedLu::factor(&a).unwrap().solve(&b);
        let y = dense_solve(&a.to_dense(), &b).unwrap();
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 50;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let l = if i > 0 { x[i - 1] } else { 0.0 };
                    let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                    2.0 * x[i] - l - r
                })
                .collect()
        };
        let b = vec![1.0; n];
        let out = conjugate_gradient(apply, &b, 1e-12, 500, |_| {}).unwrap();
        let r = apply(&out.x);
        for i in 0..n {
            assert!((r[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn constrained_pencil_two_state() {
        // K = [[1,-1],[-1,1]], D = I, constraint x0 + x1 = 0 → eigenvalue 2
        let mut k = Dense::zeros(2, 2);
        k.set(0, 0, 1.0);
        k.set(1, 1, 1.0);
        k.set(0, 1, -1.0);
        k.set(1, 0, -1.0);
        let (v, _) = constrained_pencil(&k, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn expm_rotation_and_inverse() {
        let mut a = Dense::zeros(2, 2);
        a.set(0, 1, -1.0);
        a.set(1, 0, 1.0);
        let e = expm(&a, 3.0);
        assert!((e.get(0, 0) - 3f64.cos()).abs() < 1e-13 && (e.get(1, 0) - 3f64.sin()).abs() < 1e-13);
        let mut m = Dense::identity(2);
        m.set(0, 1, 2.0);
        let p = m.matmul(&inverse(&m).unwrap());
        assert!((p.get(0, 1)).abs() < 1e-14 && (p.get(1, 1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generalized_pencil_with_constraint() {
        let mut k = Dense::identity(3);
        k.set(2, 2, 5.0);
        let mut d = Dense::identity(3);
        d.set(0, 0, 2.0);
        let (vals, vecs) = generalized_sym_eig(&k, &d, &[vec![0.0, 1.0, 0.0]]).unwrap();
        assert!((vals[0] - 0.5).abs() < 1e-12 && (vals[1] - 5.0).abs() < 1e-12);
        assert!(vecs[0][1].abs() < 1e-12);
    }
}
