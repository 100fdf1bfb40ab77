//! Small dense and sparse linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::{Error, Result};

type Vec3 = Vector3<f64>;

/// Principal components of the rows of a sample matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Sample variances (normalized by `m - 1`), descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, one per eigenvalue.
    pub components: DMatrix<f64>,
}

/// PCA through the `m x m` Gram matrix, so cost scales with the sample count.
///
/// Returns `n` components. Directions beyond the data rank get eigenvalue 0
/// and are completed to an orthonormal set.
pub fn pca(samples: &DMatrix<f64>, n: usize) -> Result<Pca> {
    pca_impl(samples, n, true)
}

/// Like [`pca`] but about the origin: the mean is taken to be zero and the
/// second-moment matrix is normalized by `m`.
pub fn pca_uncentered(samples: &DMatrix<f64>, n: usize) -> Result<Pca> {
    pca_impl(samples, n, false)
}

fn pca_impl(samples: &DMatrix<f64>, n: usize, centered: bool) -> Result<Pca> {
    let (m, d) = samples.shape();
    let dof = if centered { m.saturating_sub(1) } else { m };
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 samples, got {m}"
        )));
    }
    if n > d.min(dof) {
        return Err(Error::InvalidArgument(format!(
            "requested {n} components from {m} samples of dimension {d}"
        )));
    }
    let mean = if centered {
        samples.row_mean().transpose()
    } else {
        DVector::zeros(d)
    };
    let mut x = samples.clone();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    // Variation at rounding level of the raw data counts as none.
    let raw_scale = samples.norm_squared();
    let floor = (top * 1e-12).max(raw_scale * 1e-26).max(f64::MIN_POSITIVE);

    let mut components = DMatrix::zeros(d, n);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut filled = 0;
    for &i in &order {
        if filled == n {
            break;
        }
        let lambda = eig.eigenvalues[i];
        if lambda <= floor {
            break;
        }
        let u = eig.eigenvectors.column(i);
        let mut v = x.transpose() * u;
        // Small eigenvalues lose orthogonality through rounding.
        for _ in 0..2 {
            for j in 0..filled {
                let col = components.column(j);
                let dot = col.dot(&v);
                v -= col * dot;
            }
        }
        v /= v.norm();
        canonical_sign(&mut v);
        components.set_column(filled, &v);
        eigenvalues.push(lambda / dof as f64);
        filled += 1;
    }
    complete_basis(&mut components, filled);
    eigenvalues.resize(n, 0.0);
    Ok(Pca {
        mean,
        eigenvalues,
        components,
    })
}

/// Flip `v` so that its largest-magnitude entry is positive.
fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Fill columns `filled..` with unit vectors orthogonal to all previous ones.
fn complete_basis(c: &mut DMatrix<f64>, mut filled: usize) {
    let (d, n) = c.shape();
    let mut e = 0;
    while filled < n && e < d {
        let mut v = DVector::zeros(d);
        v[e] = 1.0;
        for _ in 0..2 {
            for j in 0..filled {
                let col = c.column(j);
                let dot = col.dot(&v);
                v -= col * dot;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            c.set_column(filled, &(v / norm));
            filled += 1;
        }
        e += 1;
    }
}

/// Rigid `(R, t)` minimizing `sum |R source_i + t - target_i|^2`.
pub fn procrustes(source: &[Vec3], target: &[Vec3]) -> (Matrix3<f64>, Vec3) {
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vec3>() / n;
    let ct = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (t - ct) * (s - cs).transpose();
    }
    let r = nearest_rotation(&h);
    (r, ct - r * cs)
}

/// Rotation maximizing `tr(R^T m)`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let k = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .unwrap();
        let mut u2 = u;
        u2.column_mut(k).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Jacobi-preconditioned conjugate gradients on a symmetric positive
/// definite operator. Starts from `x`, which is updated in place.
/// Returns the iteration count.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diagonal: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    tolerance: f64,
    max_iterations: usize,
) -> usize {
    let n = rhs.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(diagonal).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iterations {
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tolerance * rhs_norm {
            return it;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return it;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diagonal[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    max_iterations
}

/// Largest principal angle between the column spans of two orthonormal bases.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // sin of the largest angle is the norm of the part of `a` outside span(b).
    let residual = a - b * (b.transpose() * a);
    let s = residual.svd(false, false).singular_values;
    s.iter().fold(0.0f64, |m, &v| m.max(v)).min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::rodrigues_to_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pca_of_two_samples_is_their_difference() {
        let s = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 3.0, 2.0, 3.0]);
        let p = pca(&s, 1).unwrap();
        assert!((p.components[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((p.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert_eq!(p.mean.as_slice(), &[2.0, 2.0, 3.0]);
    }

    #[test]
    fn pca_matches_dense_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::from_fn(6, 10, |_, _| rng.random_range(-1.0..1.0));
        let p = pca(&s, 5).unwrap();
        let mut x = s.clone();
        for mut row in x.row_iter_mut() {
            row -= p.mean.transpose();
        }
        let cov = x.transpose() * &x / 5.0;
        let mut dense: Vec<f64> = SymmetricEigen::new(cov)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        for k in 0..5 {
            assert!((dense[k] - p.eigenvalues[k]).abs() < 1e-10 * dense[0]);
        }
        let gram = p.components.transpose() * &p.components;
        assert!((gram - DMatrix::identity(5, 5)).norm() < 1e-10);
    }

    #[test]
    fn pca_completes_rank_deficient_basis() {
        let s = DMatrix::from_row_slice(
            3,
            4,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        );
        let p = pca(&s, 2).unwrap();
        assert_eq!(p.eigenvalues, vec![0.0, 0.0]);
        let gram = p.components.transpose() * &p.components;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!(pca(&s, 3).is_err());
    }

    #[test]
    fn procrustes_recovers_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src: Vec<Vec3> = (0..10)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let r = rodrigues_to_matrix(&Vec3::new(0.3, -1.2, 2.0));
        let t = Vec3::new(1.0, -2.0, 0.5);
        let dst: Vec<Vec3> = src.iter().map(|p| r * p + t).collect();
        let (r2, t2) = procrustes(&src, &dst);
        assert!((r2 - r).norm() < 1e-10);
        assert!((t2 - t).norm() < 1e-10);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let apply = |v: &[f64], out: &mut [f64]| {
            let r = &a * DVector::from_column_slice(v);
            out.copy_from_slice(r.as_slice());
        };
        conjugate_gradient(apply, &[4.0, 3.0, 2.0], &b, &mut x, 1e-14, 50);
        let exact = a.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..3 {
            assert!((x[i] - exact[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn principal_angle_of_rotated_plane() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t: f64 = 0.2;
        let b = DMatrix::from_row_slice(3, 1, &[t.cos(), t.sin(), 0.0]);
        assert!((max_principal_angle(&a, &b) - t).abs() < 1e-12);
    }
}
