//! Geometric oracles shared by the integration tests.
#![allow(dead_code)]

use pathflow_core::geometry::Manifold;
use pathflow_core::lift::horizontal_lift;
use pathflow_core::linalg::{skew_part, Matrix, Vector};
use pathflow_core::wiener::{DiscretePath, TimeGrid};

pub fn slerp<const N: usize>(a: &Vector<N>, b: &Vector<N>, t: f64) -> Vector<N> {
    let angle = a.dot(b).clamp(-1.0, 1.0).acos();
    if angle < 1e-15 {
        return *a;
    }
    (a * ((1.0 - t) * angle).sin() + b * (t * angle).sin()) / angle.sin()
}

/// Closed geodesic polygon through `vertices`, with `per_side` grid steps on each arc.
pub fn polygon<const N: usize>(vertices: &[Vector<N>], per_side: &[usize]) -> DiscretePath<N> {
    let total: usize = per_side.iter().sum();
    let mut values = vec![vertices[0]];
    for (k, &steps) in per_side.iter().enumerate() {
        let a = vertices[k];
        let b = vertices[(k + 1) % vertices.len()];
        for j in 1..=steps {
            values.push(slerp(&a, &b, j as f64 / steps as f64));
        }
    }
    DiscretePath::new(TimeGrid::new(total).unwrap(), values).unwrap()
}

pub fn sphere_exp<const N: usize>(p: &Vector<N>, v: &Vector<N>) -> Vector<N> {
    let rho = v.norm();
    if rho == 0.0 {
        return *p;
    }
    p * rho.cos() + v * (rho.sin() / rho)
}

pub fn planar_angle(h: &Matrix<2, 2>) -> f64 {
    h[(1, 0)].atan2(h[(0, 0)])
}

/// `(I − H)/ε²` for the geodesic square of side `eps` spanned by frame axes `i`, `j`.
pub fn holonomy_quotient<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    i: usize,
    j: usize,
    eps: f64,
) -> f64 {
    let r0 = m.base_frame();
    let p0 = r0.base;
    let (u, v) = (
        r0.basis.column(i).into_owned(),
        r0.basis.column(j).into_owned(),
    );
    let corners = [(0.0, 0.0), (eps, 0.0), (eps, eps), (0.0, eps)]
        .map(|(a, b)| sphere_exp(&p0, &(u * a + v * b)));
    let path = polygon(&corners, &[2000; 4]);
    let fp = horizontal_lift(m, &path, &r0).unwrap();
    let h = skew_part(&fp.holonomy());
    -h[(i, j)] / (eps * eps)
}

pub fn extrapolated_curvature<const N: usize, const D: usize>(m: &Manifold<N, D>) -> Matrix<D, D> {
    let mut omega = Matrix::<D, D>::zeros();
    for i in 0..D {
        for j in 0..D {
            if i != j {
                let eps = 0.02;
                let coarse = holonomy_quotient(m, i, j, eps);
                let fine = holonomy_quotient(m, i, j, eps / 2.0);
                omega[(i, j)] = (4.0 * fine - coarse) / 3.0;
            }
        }
    }
    omega
}
