//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Symmetric eigendecomposition sorted by descending eigenvalue.
///
/// Ties keep the original index order. Each eigenvector's sign is fixed so
/// that its largest-magnitude entry is positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

fn fix_sign(col: &mut DVector<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in col.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        col.neg_mut();
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    SVD::new(m.clone(), false, false).singular_values
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().cloned().fold(0.0, f64::max)
}

/// Count of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 || !top.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if top > 0.0 && s > rel_tol * top {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Symmetric square root `G^{1/2}` of a PSD matrix and its pseudo-inverse.
pub fn psd_sqrt_pair(g: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = g.nrows();
    let (vals, vecs) = sym_eigen_desc(g);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let mut root = DMatrix::zeros(n, n);
    let mut root_pinv = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = vals[k];
        if lam > 1e-12 * top.max(f64::MIN_POSITIVE) {
            let u = vecs.column(k);
            let outer = u * u.transpose();
            root += &outer * lam.sqrt();
            root_pinv += outer / lam.sqrt();
        }
    }
    (root, root_pinv)
}

/// Orthonormal columns spanning `basis` (assumed orthonormal, m×k), extended
/// to `r` columns by Gram-Schmidt against the standard basis e₁, e₂, ….
pub fn complete_orthonormal(basis: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let m = basis.nrows();
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < r && e < m {
        let mut cand = DVector::zeros(m);
        cand[e] = 1.0;
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&cand);
                cand.axpy(-proj, c, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            cols.push(cand / norm);
        }
        e += 1;
    }
    DMatrix::from_columns(&cols[..r.min(cols.len())])
}

/// Max-abs deviation of `VᵀV` from the identity.
pub fn orthonormality_gap(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending_with_sign_rule() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[5.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((vecs[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, 1e-10);
        let back = &m * &p * &m;
        assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn completion_fills_missing_directions() {
        let mut b = DMatrix::zeros(3, 1);
        b[(0, 0)] = 1.0;
        let c = complete_orthonormal(&b, 3);
        assert!(orthonormality_gap(&c) < 1e-12);
        assert_eq!(c.ncols(), 3);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (root, inv) = psd_sqrt_pair(&a);
        assert!((&root * &root - &a).abs().max() < 1e-12);
        assert!((&root * &inv - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }
}
