//! Small fixed-size helpers on top of nalgebra's static matrices.

use nalgebra::{DMatrix, SMatrix, SVector};

pub type Vector<const K: usize> = SVector<f64, K>;
pub type Matrix<const R: usize, const C: usize> = SMatrix<f64, R, C>;

/// Deviation of `x` from having orthonormal columns, as the max-abs entry of `xᵀx − I`.
pub fn orthonormality_defect<const R: usize, const C: usize>(x: &Matrix<R, C>) -> f64 {
    (x.tr_mul(x) - Matrix::<C, C>::identity()).amax()
}

/// Ratio of the extreme singular values of `x`.
pub fn condition_number<const R: usize, const C: usize>(x: &Matrix<R, C>) -> f64 {
    let gram = DMatrix::from_column_slice(C, C, x.tr_mul(x).as_slice());
    let eig = gram.symmetric_eigenvalues();
    let hi = eig.max().max(0.0);
    let lo = eig.min().max(0.0);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

/// Orthogonal polar factor `x (xᵀx)^{-1/2}`.
///
/// Near-orthonormal inputs go through Newton–Schulz; anything else falls back to an SVD.
pub fn polar<const R: usize, const C: usize>(x: &Matrix<R, C>) -> Matrix<R, C> {
    let eye = Matrix::<C, C>::identity();
    if orthonormality_defect(x) < 0.25 {
        let mut q = *x;
        for _ in 0..40 {
            let gram = q.tr_mul(&q);
            let defect = (gram - eye).amax();
            if defect < 1e-15 {
                break;
            }
            q = q * (eye * 3.0 - gram) * 0.5;
        }
        return q;
    }
    let dense = DMatrix::from_column_slice(R, C, x.as_slice());
    let svd = dense.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return *x,
    };
    let q = u * vt;
    Matrix::<R, C>::from_column_slice(q.as_slice())
}

/// Skew part `(a − aᵀ)/2`; the result is exactly antisymmetric in floating point.
pub fn skew_part<const D: usize>(a: &Matrix<D, D>) -> Matrix<D, D> {
    (a - a.transpose()) * 0.5
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm<const D: usize>(a: &Matrix<D, D>) -> Matrix<D, D> {
    let norm = a.abs().row_sum().amax();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a * scale;
    let eye = Matrix::<D, D>::identity();
    let mut term = eye;
    let mut sum = eye;
    for k in 1..=12 {
        term = term * scaled / k as f64;
        sum += term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Exponential of an antisymmetric matrix; closed form in dimensions 1 to 3.
pub fn expm_skew<const D: usize>(a: &Matrix<D, D>) -> Matrix<D, D> {
    match D {
        1 => Matrix::identity(),
        2 => {
            let (s, c) = a[(1, 0)].sin_cos();
            let mut r = Matrix::identity();
            r[(0, 0)] = c;
            r[(1, 1)] = c;
            r[(1, 0)] = s;
            r[(0, 1)] = -s;
            r
        }
        3 => {
            let theta2 = a[(2, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 0)].powi(2);
            let theta = theta2.sqrt();
            let (f, g) = if theta < 1e-4 {
                (
                    1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                    0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                )
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
            };
            Matrix::identity() + a * f + a * a * g
        }
        _ => expm(a),
    }
}

/// `u vᵀ − v uᵀ`.
pub fn wedge<const D: usize>(u: &Vector<D>, v: &Vector<D>) -> Matrix<D, D> {
    u * v.transpose() - v * u.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_of_perturbed_frame_is_orthonormal() {
        let x = Matrix::<3, 2>::new(1.0, 0.01, 0.02, 0.98, -0.03, 0.01);
        let q = polar(&x);
        assert!(orthonormality_defect(&q) < 1e-14);
        // polar factor is the closest orthonormal frame, so it stays close
        assert!((q - x).amax() < 0.05);
    }

    #[test]
    fn polar_falls_back_for_far_inputs() {
        let x = Matrix::<3, 2>::new(3.0, 0.0, 0.0, 0.1, 0.0, 0.0);
        let q = polar(&x);
        assert!(orthonormality_defect(&q) < 1e-12);
    }

    #[test]
    fn expm_of_planar_rotation_generator() {
        let theta = 0.7_f64;
        let a = Matrix::<2, 2>::new(0.0, -theta, theta, 0.0);
        let e = expm(&a);
        let want = Matrix::<2, 2>::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos());
        assert!((e - want).amax() < 1e-14);
    }

    #[test]
    fn expm_of_large_skew_stays_orthogonal() {
        let a = Matrix::<3, 3>::new(0.0, 2.0, -1.5, -2.0, 0.0, 3.0, 1.5, -3.0, 0.0);
        let e = expm(&a);
        assert!(orthonormality_defect(&e) < 1e-12);
    }

    #[test]
    fn closed_form_skew_exponentials_match_series() {
        let a2 = Matrix::<2, 2>::new(0.0, -0.3, 0.3, 0.0);
        assert!((expm_skew(&a2) - expm(&a2)).amax() < 1e-15);
        for scale in [1e-6, 1e-3, 0.7, 2.5] {
            let a3 = Matrix::<3, 3>::new(0.0, 2.0, -1.5, -2.0, 0.0, 3.0, 1.5, -3.0, 0.0) * scale;
            assert!((expm_skew(&a3) - expm(&a3)).amax() < 1e-14, "{scale}");
        }
    }

    #[test]
    fn skew_part_is_exactly_antisymmetric() {
        let a = Matrix::<3, 3>::new(0.1, 0.7, 0.3, 1e-17, 2.0, 0.9, 0.4, 0.33, 5.0);
        let s = skew_part(&a);
        assert_eq!(s + s.transpose(), Matrix::<3, 3>::zeros());
    }

    #[test]
    fn condition_number_of_scaled_columns() {
        let x = Matrix::<3, 2>::new(2.0, 0.0, 0.0, 0.5, 0.0, 0.0);
        assert!((condition_number(&x) - 4.0).abs() < 1e-12);
    }
}
