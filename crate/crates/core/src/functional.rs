//! Cylindrical functionals `F(p) = f(p(s₁), …, p(sₙ))` with analytic derivatives.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::path_rng;
use crate::wiener::{DiscretePath, TimeGrid};

/// The smooth function `f` of a cylindrical functional, acting on `n` ambient points.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel<const N: usize> {
    /// `x_slot[axis]`.
    Coordinate { slot: usize, axis: usize },
    /// `x_a[i]·x_b[j]`.
    Product {
        a: (usize, usize),
        b: (usize, usize),
    },
    /// `exp(−|x_slot − center|²/(2·width²))`.
    Gaussian {
        slot: usize,
        center: Vector<N>,
        width: f64,
    },
    /// `cos(Σ_k ⟨weights_k, x_k⟩)`.
    Cosine { weights: Vec<Vector<N>> },
    /// `|x_slot|²`.
    SquaredNorm { slot: usize },
}

/// A functional of a path through its values at grid indices `times`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cylindrical<const N: usize> {
    pub name: String,
    pub times: Vec<usize>,
    pub kernel: Kernel<N>,
}

impl<const N: usize> Cylindrical<N> {
    /// Builds and checks the analytic gradient against central differences.
    pub fn new(name: impl Into<String>, times: Vec<usize>, kernel: Kernel<N>) -> Result<Self> {
        let f = Self {
            name: name.into(),
            times,
            kernel,
        };
        f.check_shape()?;
        f.validate_gradient()?;
        Ok(f)
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.times.len();
        let slot_ok = |s: usize| s < n;
        let axis_ok = |a: usize| a < N;
        let ok = match &self.kernel {
            Kernel::Coordinate { slot, axis } => slot_ok(*slot) && axis_ok(*axis),
            Kernel::Product { a, b } => {
                slot_ok(a.0) && slot_ok(b.0) && axis_ok(a.1) && axis_ok(b.1)
            }
            Kernel::Gaussian { slot, width, .. } => slot_ok(*slot) && *width > 0.0,
            Kernel::Cosine { weights } => weights.len() == n,
            Kernel::SquaredNorm { slot } => slot_ok(*slot),
        };
        if ok && n > 0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "functional '{}' is malformed",
                self.name
            )))
        }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Whether `f` is bounded on all of `(ℝ^N)ⁿ`.
    pub fn bounded(&self) -> bool {
        matches!(self.kernel, Kernel::Gaussian { .. } | Kernel::Cosine { .. })
    }

    /// Path values at the functional's times.
    pub fn gather(&self, path: &DiscretePath<N>) -> Vec<Vector<N>> {
        self.times.iter().map(|&i| path.values[i]).collect()
    }

    pub fn eval(&self, path: &DiscretePath<N>) -> f64 {
        self.value(&self.gather(path))
    }

    pub fn value(&self, x: &[Vector<N>]) -> f64 {
        match &self.kernel {
            Kernel::Coordinate { slot, axis } => x[*slot][*axis],
            Kernel::Product { a, b } => x[a.0][a.1] * x[b.0][b.1],
            Kernel::Gaussian {
                slot,
                center,
                width,
            } => (-(x[*slot] - center).norm_squared() / (2.0 * width * width)).exp(),
            Kernel::Cosine { weights } => phase(weights, x).cos(),
            Kernel::SquaredNorm { slot } => x[*slot].norm_squared(),
        }
    }

    /// Ambient partial gradients `∂_k f`, one per time.
    pub fn gradient(&self, x: &[Vector<N>]) -> Vec<Vector<N>> {
        let mut g = vec![Vector::<N>::zeros(); x.len()];
        match &self.kernel {
            Kernel::Coordinate { slot, axis } => g[*slot][*axis] = 1.0,
            Kernel::Product { a, b } => {
                g[a.0][a.1] += x[b.0][b.1];
                g[b.0][b.1] += x[a.0][a.1];
            }
            Kernel::Gaussian {
                slot,
                center,
                width,
            } => {
                let w2 = width * width;
                let d = x[*slot] - center;
                let e = (-d.norm_squared() / (2.0 * w2)).exp();
                g[*slot] = d * (-e / w2);
            }
            Kernel::Cosine { weights } => {
                let s = -phase(weights, x).sin();
                for (gk, wk) in g.iter_mut().zip(weights) {
                    *gk = wk * s;
                }
            }
            Kernel::SquaredNorm { slot } => g[*slot] = x[*slot] * 2.0,
        }
        g
    }

    /// Hessian over the stacked coordinates, index `k·N + a`.
    pub fn hessian(&self, x: &[Vector<N>]) -> DMatrix<f64> {
        let n = x.len() * N;
        let mut h = DMatrix::<f64>::zeros(n, n);
        let at = |slot: usize, axis: usize| slot * N + axis;
        match &self.kernel {
            Kernel::Coordinate { .. } => {}
            Kernel::Product { a, b } => {
                h[(at(a.0, a.1), at(b.0, b.1))] += 1.0;
                h[(at(b.0, b.1), at(a.0, a.1))] += 1.0;
            }
            Kernel::Gaussian {
                slot,
                center,
                width,
            } => {
                let w2 = width * width;
                let d = x[*slot] - center;
                let e = (-(d.norm_squared() / (2.0 * w2))).exp();
                for i in 0..N {
                    for j in 0..N {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[(at(*slot, i), at(*slot, j))] =
                            e * (d[i] * d[j] / (w2 * w2) - delta / w2);
                    }
                }
            }
            Kernel::Cosine { weights } => {
                let c = -phase(weights, x).cos();
                for (k, wk) in weights.iter().enumerate() {
                    for (l, wl) in weights.iter().enumerate() {
                        for i in 0..N {
                            for j in 0..N {
                                h[(at(k, i), at(l, j))] = c * wk[i] * wl[j];
                            }
                        }
                    }
                }
            }
            Kernel::SquaredNorm { slot } => {
                for i in 0..N {
                    h[(at(*slot, i), at(*slot, i))] = 2.0;
                }
            }
        }
        h
    }

    fn validate_gradient(&self) -> Result<()> {
        let mut rng = path_rng(0x5eed, u64::MAX >> 24, 0);
        let eps = 1e-5;
        for _ in 0..4 {
            let x: Vec<Vector<N>> = (0..self.n_times())
                .map(|_| Vector::<N>::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let g = self.gradient(&x);
            let scale = g.iter().map(|v| v.amax()).fold(1.0, f64::max);
            for k in 0..x.len() {
                for a in 0..N {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k][a] += eps;
                    xm[k][a] -= eps;
                    let fd = (self.value(&xp) - self.value(&xm)) / (2.0 * eps);
                    if (fd - g[k][a]).abs() > 1e-6 * scale {
                        return Err(Error::Contract(format!(
                            "gradient of '{}' disagrees with finite differences ({} vs {fd})",
                            self.name, g[k][a]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Looks up a functional by name: `z1`, `xz`, `gauss1`, `cos`, `xy1`, `sq1`.
    pub fn named(name: &str, grid: TimeGrid) -> Result<Self> {
        let n = grid.n_steps();
        if n % 4 != 0 {
            return Err(Error::Config(
                "named functionals need a step count divisible by 4".into(),
            ));
        }
        let last = N - 1;
        let (quarter, half) = (n / 4, n / 2);
        let (times, kernel) = match name {
            "z1" => (
                vec![n],
                Kernel::Coordinate {
                    slot: 0,
                    axis: last,
                },
            ),
            "xz" => (
                vec![half, n],
                Kernel::Product {
                    a: (0, 0),
                    b: (1, last),
                },
            ),
            "gauss1" => {
                let mut center = Vector::<N>::zeros();
                center[0] = 0.6;
                center[last] += 0.8;
                (
                    vec![n],
                    Kernel::Gaussian {
                        slot: 0,
                        center,
                        width: 0.7,
                    },
                )
            }
            "cos" => {
                let a = Vector::<N>::from_fn(|i, _| [1.0, 0.5, -0.3, 0.2][i % 4]);
                let b = Vector::<N>::from_fn(|i, _| [0.0, -0.7, 0.4, 1.0][(i + 4 - N % 4) % 4]);
                (
                    vec![quarter, n],
                    Kernel::Cosine {
                        weights: vec![a, b],
                    },
                )
            }
            "xy1" => (
                vec![n],
                Kernel::Product {
                    a: (0, 0),
                    b: (0, 1.min(last)),
                },
            ),
            "sq1" => (vec![n], Kernel::SquaredNorm { slot: 0 }),
            other => return Err(Error::Config(format!("unknown functional '{other}'"))),
        };
        Self::new(name, times, kernel)
    }

    /// The five functionals used by the statistical checks.
    pub fn battery(grid: TimeGrid) -> Result<Vec<Self>> {
        ["z1", "xz", "gauss1", "cos", "xy1"]
            .iter()
            .map(|n| Self::named(n, grid))
            .collect()
    }
}

fn phase<const N: usize>(weights: &[Vector<N>], x: &[Vector<N>]) -> f64 {
    weights.iter().zip(x).map(|(w, p)| w.dot(p)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_builds_for_each_dimension() {
        let g = TimeGrid::new(16).unwrap();
        assert_eq!(Cylindrical::<3>::battery(g).unwrap().len(), 5);
        assert_eq!(Cylindrical::<1>::battery(g).unwrap().len(), 5);
        assert!(Cylindrical::<3>::named("nope", g).is_err());
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let g = TimeGrid::new(8).unwrap();
        let x = vec![
            Vector::<3>::new(0.1, -0.4, 0.9),
            Vector::<3>::new(0.5, 0.2, -0.3),
        ];
        for name in ["xz", "cos", "gauss1"] {
            let f = Cylindrical::<3>::named(name, g).unwrap();
            let x = &x[..f.n_times()];
            let h = f.hessian(x);
            let eps = 1e-6;
            for k in 0..x.len() {
                for a in 0..3 {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[k][a] += eps;
                    xm[k][a] -= eps;
                    let (gp, gm) = (f.gradient(&xp), f.gradient(&xm));
                    for l in 0..x.len() {
                        for b in 0..3 {
                            let fd = (gp[l][b] - gm[l][b]) / (2.0 * eps);
                            assert!((fd - h[(l * 3 + b, k * 3 + a)]).abs() < 1e-7, "{name}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn malformed_is_rejected() {
        let k = Kernel::<2>::Coordinate { slot: 3, axis: 0 };
        assert!(Cylindrical::new("bad", vec![1], k).is_err());
    }
}
