//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Eigen-decomposition of a symmetric matrix with ascending eigenvalues.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Deterministic orthonormal basis of the column space of `subspace`
/// (assumed orthonormal): unit vectors `e_0, e_1, ...` are projected onto
/// the subspace and orthonormalized in turn.
pub fn canonical_basis(subspace: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = subspace.shape();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    for e in 0..n {
        if out.len() == k {
            break;
        }
        let mut v: DVector<f64> = subspace * subspace.row(e).transpose();
        for b in &out {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm > 1e-6 {
            out.push(v / norm);
        }
    }
    DMatrix::from_columns(&out)
}

/// Flips the sign of `v` so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

/// `max(||M||_1, 1) ||M^-1||_1`.
pub fn cond1(m: &DMatrix<f64>, inv: &DMatrix<f64>) -> f64 {
    norm1(m).max(1.0) * norm1(inv)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Groups sorted values into clusters whose neighbours differ by less than `tol`.
pub fn clusters(sorted: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || (sorted[i] - sorted[i - 1]).abs() >= tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_basis_is_rotation_invariant() {
        let th: f64 = 0.7;
        let s = DMatrix::from_row_slice(3, 2, &[th.cos(), -th.sin(), th.sin(), th.cos(), 0.0, 0.0]);
        let b = canonical_basis(&s);
        assert!((b[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((b[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_grouping() {
        let c = clusters(&[0.1, 0.1 + 1e-12, 0.5, 0.7], 1e-8);
        assert_eq!(c, vec![0..2, 2..3, 3..4]);
    }
}
