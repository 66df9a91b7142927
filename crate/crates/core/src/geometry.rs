//! Embedded Riemannian manifolds with their Levi-Civita connection data.
//!
//! Two spaces are built in: flat `ℝ^d` (ambient dimension `d`) and the unit sphere
//! `S^d ⊂ ℝ^{d+1}`. Both are exposed through [`Manifold<N, D>`], where `N` is the
//! ambient dimension and `D` the intrinsic one. A frame at `x` is an `N×D` matrix
//! whose columns form an orthonormal basis of `T_xM`, so frame coordinates and the
//! ambient metric coincide and `r⁻¹ = rᵀ` on tangent vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_defect, wedge, Matrix, Vector};

/// Inner and outer radius of the tube around the sphere on which projection is defined.
pub const SPHERE_TUBE: (f64, f64) = (0.5, 1.5);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Flat,
    Sphere,
}

/// Runtime description of a manifold: its name and intrinsic dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: Kind,
    pub dim: usize,
}

impl ManifoldSpec {
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            Kind::Flat => self.dim,
            Kind::Sphere => self.dim + 1,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            Kind::Flat => format!("flat{}", self.dim),
            Kind::Sphere => format!("sphere{}", self.dim),
        }
    }

    /// Parses `flat`, `sphere`, or a name with a trailing dimension such as `sphere2`.
    pub fn parse(name: &str, default_dim: usize) -> Result<Self> {
        let split = name
            .find(|c: char| c.is_ascii_digit())
            .unwrap_or(name.len());
        let (base, digits) = name.split_at(split);
        let dim = if digits.is_empty() {
            default_dim
        } else {
            digits
                .parse()
                .map_err(|_| Error::Config(format!("bad manifold dimension in '{name}'")))?
        };
        make_manifold(base, dim)
    }
}

/// Validates a manifold request.
pub fn make_manifold(name: &str, d: usize) -> Result<ManifoldSpec> {
    if d == 0 {
        return Err(Error::Config(
            "manifold dimension must be at least 1".into(),
        ));
    }
    let kind = match name {
        "flat" => Kind::Flat,
        "sphere" => Kind::Sphere,
        other => return Err(Error::Config(format!("unknown manifold '{other}'"))),
    };
    Ok(ManifoldSpec { kind, dim: d })
}

/// A point of `M` in ambient coordinates.
pub type Point<const N: usize> = Vector<N>;

/// An orthonormal frame: a base point and an `N×D` basis of the tangent space there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame<const N: usize, const D: usize> {
    pub base: Point<N>,
    pub basis: Matrix<N, D>,
}

impl<const N: usize, const D: usize> Frame<N, D> {
    pub fn new(base: Point<N>, basis: Matrix<N, D>) -> Self {
        Self { base, basis }
    }

    /// Frame coordinates of an ambient vector, `rᵀv`.
    pub fn coords(&self, v: &Vector<N>) -> Vector<D> {
        self.basis.tr_mul(v)
    }

    /// Ambient vector with the given frame coordinates, `r·v`.
    pub fn apply(&self, v: &Vector<D>) -> Vector<N> {
        self.basis * v
    }
}

/// Antisymmetric `D×D` matrix, an element of `so(D)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkewMatrix<const D: usize>(Matrix<D, D>);

impl<const D: usize> SkewMatrix<D> {
    pub fn zero() -> Self {
        Self(Matrix::zeros())
    }

    /// Skew part of an arbitrary square matrix.
    pub fn from_matrix(a: &Matrix<D, D>) -> Self {
        Self(crate::linalg::skew_part(a))
    }

    /// Builds from the strictly-lower triangle, filling the upper part by negation.
    pub fn from_lower(a: &Matrix<D, D>) -> Self {
        let mut m = Matrix::<D, D>::zeros();
        for j in 0..D {
            for i in (j + 1)..D {
                m[(i, j)] = a[(i, j)];
                m[(j, i)] = -a[(i, j)];
            }
        }
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix<D, D> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<D, D> {
        self.0
    }
}

impl<const D: usize> std::ops::Add for SkewMatrix<D> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl<const D: usize> std::ops::Mul<f64> for SkewMatrix<D> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self(self.0 * rhs)
    }
}

/// An embedded manifold with ambient dimension `N` and intrinsic dimension `D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Manifold<const N: usize, const D: usize> {
    kind: Kind,
}

impl<const N: usize, const D: usize> Manifold<N, D> {
    /// Flat `ℝ^D`; requires `N == D`.
    pub fn flat() -> Self {
        assert!(N == D && D >= 1, "flat space needs N == D >= 1");
        Self { kind: Kind::Flat }
    }

    /// Unit sphere `S^D ⊂ ℝ^{D+1}`; requires `N == D + 1`.
    pub fn sphere() -> Self {
        assert!(N == D + 1 && D >= 1, "the sphere needs N == D + 1");
        Self { kind: Kind::Sphere }
    }

    pub fn from_spec(spec: &ManifoldSpec) -> Result<Self> {
        if spec.dim != D || spec.ambient_dim() != N {
            return Err(Error::Dimension {
                expected: D,
                found: spec.dim,
            });
        }
        Ok(match spec.kind {
            Kind::Flat => Self::flat(),
            Kind::Sphere => Self::sphere(),
        })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn spec(&self) -> ManifoldSpec {
        ManifoldSpec {
            kind: self.kind,
            dim: D,
        }
    }

    /// Torsion is identically zero for every built-in connection.
    pub fn torsion_free(&self) -> bool {
        true
    }

    /// Starting point `m₀`: the origin, or the north pole `e_N` of the sphere.
    pub fn base_point(&self) -> Point<N> {
        match self.kind {
            Kind::Flat => Vector::zeros(),
            Kind::Sphere => {
                let mut p = Vector::zeros();
                p[N - 1] = 1.0;
                p
            }
        }
    }

    /// Starting frame `r₀`: the first `D` ambient coordinate axes.
    pub fn base_frame(&self) -> Frame<N, D> {
        let mut basis = Matrix::<N, D>::zeros();
        for i in 0..D {
            basis[(i, i)] = 1.0;
        }
        Frame::new(self.base_point(), basis)
    }

    /// Closest point of `M` to `y`.
    pub fn project(&self, y: &Vector<N>) -> Result<Point<N>> {
        match self.kind {
            Kind::Flat => Ok(*y),
            Kind::Sphere => {
                let r = y.norm();
                if !(SPHERE_TUBE.0..=SPHERE_TUBE.1).contains(&r) {
                    return Err(Error::Domain { radius: r });
                }
                Ok(y / r)
            }
        }
    }

    /// Distance from `y` to `M`.
    pub fn distance(&self, y: &Vector<N>) -> f64 {
        match self.kind {
            Kind::Flat => 0.0,
            Kind::Sphere => (y.norm() - 1.0).abs(),
        }
    }

    /// Orthogonal projector onto `T_xM`.
    pub fn tangent_projector(&self, x: &Point<N>) -> Matrix<N, N> {
        match self.kind {
            Kind::Flat => Matrix::identity(),
            Kind::Sphere => {
                let n = x.normalize();
                Matrix::identity() - n * n.transpose()
            }
        }
    }

    pub fn tangent_project(&self, x: &Point<N>, v: &Vector<N>) -> Vector<N> {
        match self.kind {
            Kind::Flat => *v,
            Kind::Sphere => {
                let n = x.normalize();
                v - n * n.dot(v)
            }
        }
    }

    /// Connection one-form `Γ_y(v)` as an `N×N` matrix.
    ///
    /// On the sphere this is `ŷvᵀ − vŷᵀ` with `ŷ = y/|y|`, defined on the whole tube.
    pub fn christoffel(&self, y: &Vector<N>, v: &Vector<N>) -> Matrix<N, N> {
        match self.kind {
            Kind::Flat => Matrix::zeros(),
            Kind::Sphere => {
                let n = y.normalize();
                n * v.transpose() - v * n.transpose()
            }
        }
    }

    /// `Γ_y(v)·X` without forming the `N×N` matrix.
    pub fn christoffel_apply(
        &self,
        y: &Vector<N>,
        v: &Vector<N>,
        x: &Matrix<N, D>,
    ) -> Matrix<N, D> {
        match self.kind {
            Kind::Flat => Matrix::zeros(),
            Kind::Sphere => {
                let n = y.normalize();
                n * v.tr_mul(x) - v * n.tr_mul(x)
            }
        }
    }

    /// Curvature form `Ω_r(u, v)` in frame coordinates.
    pub fn curvature(&self, _r: &Frame<N, D>, u: &Vector<D>, v: &Vector<D>) -> SkewMatrix<D> {
        match self.kind {
            Kind::Flat => SkewMatrix::zero(),
            Kind::Sphere => SkewMatrix::from_matrix(&wedge(u, v)),
        }
    }

    /// Curvature is the same in every frame (true for both built-in spaces).
    pub fn frame_independent_curvature(&self) -> bool {
        true
    }

    /// `sup |Ω_r(u, v)|` over frames and unit `u`, `v` (operator norm).
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            Kind::Flat => 0.0,
            Kind::Sphere if D == 1 => 0.0,
            Kind::Sphere => 1.0,
        }
    }

    /// Ricci action `ric_r(v) = −Σ_i Ω_r(e_i, v) e_i`.
    pub fn ricci(&self, r: &Frame<N, D>, v: &Vector<D>) -> Vector<D> {
        self.ricci_matrix(r) * v
    }

    /// Ricci action computed by summing the curvature form over a basis.
    pub fn ricci_generic(&self, r: &Frame<N, D>, v: &Vector<D>) -> Vector<D> {
        let mut out = Vector::<D>::zeros();
        for i in 0..D {
            let mut e = Vector::<D>::zeros();
            e[i] = 1.0;
            out -= self.curvature(r, &e, v).matrix() * e;
        }
        out
    }

    /// Ricci action as a `D×D` matrix.
    pub fn ricci_matrix(&self, _r: &Frame<N, D>) -> Matrix<D, D> {
        match self.kind {
            Kind::Flat => Matrix::zeros(),
            Kind::Sphere => Matrix::identity() * (D as f64 - 1.0),
        }
    }

    /// Ricci curvature as a scalar multiple of the identity, when it is one.
    pub fn constant_ricci(&self) -> Option<f64> {
        match self.kind {
            Kind::Flat => Some(0.0),
            Kind::Sphere => Some(D as f64 - 1.0),
        }
    }

    /// Torsion form `Θ_r(u, v)`; zero for the Levi-Civita connection.
    pub fn torsion(&self, _r: &Frame<N, D>, _u: &Vector<D>, _v: &Vector<D>) -> Vector<D> {
        Vector::zeros()
    }

    /// Checks the frame invariants: base on `M`, columns tangent and orthonormal.
    pub fn check_frame(&self, r: &Frame<N, D>, tol: f64) -> Result<()> {
        let off = self.distance(&r.base);
        if off > tol {
            return Err(Error::Contract(format!(
                "frame base is {off:.3e} off the manifold"
            )));
        }
        let defect = orthonormality_defect(&r.basis);
        if defect > tol {
            return Err(Error::Contract(format!(
                "frame columns not orthonormal ({defect:.3e})"
            )));
        }
        let normal = (self.tangent_projector(&r.base) * r.basis - r.basis).amax();
        if normal > tol {
            return Err(Error::Contract(format!(
                "frame columns not tangent ({normal:.3e})"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!(
            ManifoldSpec::parse("sphere2", 7).unwrap(),
            ManifoldSpec {
                kind: Kind::Sphere,
                dim: 2
            }
        );
        assert_eq!(
            ManifoldSpec::parse("flat", 3).unwrap(),
            ManifoldSpec {
                kind: Kind::Flat,
                dim: 3
            }
        );
        assert!(ManifoldSpec::parse("torus", 2).is_err());
        assert!(make_manifold("sphere", 0).is_err());
    }

    #[test]
    fn sphere_projection_examples() {
        let m = Manifold::<3, 2>::sphere();
        let p = m.project(&Vector::from([0.0, 0.0, 2.0])).unwrap_err();
        assert!(matches!(p, Error::Domain { .. }));
        let p = m.project(&Vector::from([0.0, 0.0, 1.4])).unwrap();
        assert_eq!(p, Vector::from([0.0, 0.0, 1.0]));
        let y = Vector::from([0.6 * 1.1, 0.8 * 1.1, 0.0]);
        let p = m.project(&y).unwrap();
        assert!((p.norm() - 1.0).abs() < 1e-14);
        assert!((p - Vector::from([0.6, 0.8, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn skew_from_lower_mirrors() {
        let a = Matrix::<3, 3>::new(9.0, 9.0, 9.0, 1.0, 9.0, 9.0, 2.0, 3.0, 9.0);
        let s = SkewMatrix::from_lower(&a);
        assert_eq!(s.matrix() + s.matrix().transpose(), Matrix::<3, 3>::zeros());
        assert_eq!(s.matrix()[(2, 1)], 3.0);
        assert_eq!(s.matrix()[(1, 2)], -3.0);
    }
}
