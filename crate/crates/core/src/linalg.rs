//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::rng::RngStream;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let mut s = m.clone().svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Orthogonal polar factor `U Vᵀ` of `M = U Σ Vᵀ`, the maximizer of `tr(Oᵀ M)`
/// over orthogonal `O`.
pub fn orthogonal_polar(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    u * v_t
}

/// Haar-distributed orthogonal `n × n` matrix.
pub fn random_orthogonal(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    random_orthonormal_columns(n, n, rng)
}

/// `rows × cols` matrix with orthonormal columns (`cols <= rows`), Haar on the Stiefel manifold.
pub fn random_orthonormal_columns(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    assert!(cols <= rows, "need cols <= rows");
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.columns(0, cols).into_owned()
}

/// Gram matrix `XᵀX / n` of the rows of `x`.
pub fn second_moment(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    let mut g = x.tr_mul(x);
    g /= n;
    g
}

/// Minimum-norm least-squares solution of `a w = b`, plus whether `a` was rank deficient.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let full_rank = a.nrows().min(a.ncols());
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let w = svd
        .solve(b, tol)
        .expect("svd computed with u and v_t");
    (w, rank < full_rank)
}

/// Solves the symmetric positive semi-definite system `g w = h`, falling back to the
/// pseudo-inverse when `g` is singular. The flag reports the fallback.
pub fn solve_psd(g: &DMatrix<f64>, h: &DVector<f64>) -> (DVector<f64>, bool) {
    let scale = g.diagonal().iter().copied().fold(0.0, f64::max);
    if scale > 0.0 {
        if let Some(chol) = g.clone().cholesky() {
            let l = chol.l();
            let min_pivot = l.diagonal().iter().copied().fold(f64::INFINITY, f64::min);
            // reject numerically singular factorizations
            if min_pivot * min_pivot > scale * 1e-13 {
                return (chol.solve(h), false);
            }
        }
    }
    let (w, _) = lstsq_min_norm(g, h);
    (w, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_descending_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rec - m).norm() < 1e-12);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = RngStream::new(3, 0);
        let q = random_orthogonal(5, &mut rng);
        assert!((q.transpose() * &q - DMatrix::identity(5, 5)).norm() < 1e-12);
        let c = random_orthonormal_columns(7, 3, &mut rng);
        assert!((c.transpose() * &c - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn polar_factor_of_orthogonal_is_itself() {
        let mut rng = RngStream::new(4, 0);
        let q = random_orthogonal(4, &mut rng);
        assert!((orthogonal_polar(&q) - &q).norm() < 1e-10);
    }

    #[test]
    fn singular_psd_solve_falls_back() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let h = DVector::from_vec(vec![2.0, 2.0]);
        let (w, flagged) = solve_psd(&g, &h);
        assert!(flagged);
        assert!((w - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-12);
    }
}
