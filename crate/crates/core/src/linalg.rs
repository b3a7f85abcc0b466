//! Dense linear-algebra kernels: Bartels–Stewart Sylvester/Lyapunov solves
//! on real Schur forms, plus a few norm helpers.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

const SCHUR_MAX_ITER: usize = 10_000;

/// Diagonal block layout of a quasi-triangular matrix: `(start, size)` with
/// size 1 or 2.
fn upper_blocks<T: Real>(t: &DMatrix<T>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != T::zero() {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves `L Y + Y U = F` where `L` is lower and `U` upper quasi-triangular.
///
/// `lb` and `ub` are the diagonal block layouts of `L` and `U`.
fn solve_quasi_triangular<T: Real>(
    l: &DMatrix<T>,
    lb: &[(usize, usize)],
    u: &DMatrix<T>,
    ub: &[(usize, usize)],
    f: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let p = l.nrows();
    let q = u.nrows();
    let mut y = DMatrix::<T>::zeros(p, q);
    for &(kc, ks) in ub {
        // Right-hand side for this column block with the already solved
        // columns folded in.
        let mut rhs = f.columns(kc, ks).into_owned();
        if kc > 0 {
            rhs -= y.columns(0, kc) * u.view((0, kc), (kc, ks));
        }
        for &(ir, is) in lb {
            let mut r = rhs.rows(ir, is).into_owned();
            if ir > 0 {
                r -= l.view((ir, 0), (is, ir)) * y.view((0, kc), (ir, ks));
            }
            let block = solve_small(
                &l.view((ir, ir), (is, is)).into_owned(),
                &u.view((kc, kc), (ks, ks)).into_owned(),
                &r,
            )?;
            y.view_mut((ir, kc), (is, ks)).copy_from(&block);
        }
    }
    Ok(y)
}

/// Solves the at most 4x4 system `A Y + Y B = R` by vectorization.
fn solve_small<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (p, q) = (a.nrows(), b.nrows());
    if p == 1 && q == 1 {
        let d = a[(0, 0)] + b[(0, 0)];
        if d == T::zero() {
            return Err(Error::Singular(
                "Sylvester operator has a zero eigenvalue sum".into(),
            ));
        }
        return Ok(DMatrix::from_element(1, 1, r[(0, 0)] / d));
    }
    let dim = p * q;
    let mut k = DMatrix::<T>::zeros(dim, dim);
    // vec(A Y) = (I_q ⊗ A) vec(Y); vec(Y B) = (Bᵀ ⊗ I_p) vec(Y), column-major.
    for c in 0..q {
        for i in 0..p {
            for j in 0..p {
                k[(c * p + i, c * p + j)] += a[(i, j)];
            }
        }
    }
    for c in 0..q {
        for d in 0..q {
            for i in 0..p {
                k[(c * p + i, d * p + i)] += b[(d, c)];
            }
        }
    }
    let rhs = DVector::from_iterator(dim, r.iter().copied());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Sylvester operator has a zero eigenvalue sum".into()))?;
    Ok(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

fn schur<T: Real>(m: DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    Schur::try_new(m, T::unit_roundoff(), SCHUR_MAX_ITER)
        .map(Schur::unpack)
        .ok_or_else(|| Error::Singular("real Schur decomposition did not converge".into()))
}

fn reverse_rows<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    DMatrix::from_fn(n, m.ncols(), |i, j| m[(n - 1 - i, j)])
}

/// Solves the Sylvester equation `A X + X B = C` (Bartels–Stewart).
pub fn solve_sylvester<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (p, q) = (a.nrows(), b.nrows());
    if a.ncols() != p || b.ncols() != q || c.shape() != (p, q) {
        return Err(Error::Contract(format!(
            "Sylvester shapes A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let (qa, ta) = schur(a.clone())?;
    let (qb, tb) = schur(b.clone())?;
    let f = qa.transpose() * c * &qb;
    // Reversing the row order turns the upper quasi-triangular Ta into a
    // lower one: (J Ta J)(J Y) + (J Y) Tb = J F.
    let ta_blocks = upper_blocks(&ta);
    let l = DMatrix::from_fn(p, p, |i, j| ta[(p - 1 - i, p - 1 - j)]);
    let lb: Vec<(usize, usize)> = ta_blocks
        .iter()
        .rev()
        .map(|&(start, size)| (p - start - size, size))
        .collect();
    let ub = upper_blocks(&tb);
    let yr = solve_quasi_triangular(&l, &lb, &tb, &ub, &reverse_rows(&f))?;
    let y = reverse_rows(&yr);
    Ok(&qa * y * qb.transpose())
}

/// Solves the Lyapunov-type equation `Gᵀ X + X G = C` with one Schur
/// factorization of `G`.
pub fn solve_lyapunov<T: Real>(g: &DMatrix<T>, c: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = g.nrows();
    if g.ncols() != n || c.shape() != (n, n) {
        return Err(Error::Contract(format!(
            "Lyapunov shapes G {:?}, C {:?}",
            g.shape(),
            c.shape()
        )));
    }
    let (q, t) = schur(g.clone())?;
    let blocks = upper_blocks(&t);
    let f = q.transpose() * c * &q;
    let y = solve_quasi_triangular(&t.transpose(), &blocks, &t, &blocks, &f)?;
    Ok(&q * y * q.transpose())
}

/// Replaces `m` by its symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let lmax = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(T::zero(), |acc, v| acc.max(v));
    lmax.sqrt()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_eigen_range<T: Real>(m: &DMatrix<T>) -> (T, T) {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let mut lo = ev[0];
    let mut hi = ev[0];
    for &v in ev.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Relative symmetry defect `‖M − Mᵀ‖_F / max(‖M‖_F, tiny)`.
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let norm = m.norm();
    if norm == T::zero() {
        return T::zero();
    }
    (m - m.transpose()).norm() / norm
}
