//! Flat Wiener space on a uniform grid of `[0, 1]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_defect, Matrix, Vector};
use crate::rng::path_rng;

/// Bound applied to log-densities before exponentiating.
pub const LOG_DENSITY_CLIP: f64 = 50.0;

static CLIPPED_DENSITIES: AtomicUsize = AtomicUsize::new(0);

/// Number of Girsanov weights whose log was clipped since process start.
pub fn clipped_density_count() -> usize {
    CLIPPED_DENSITIES.load(Ordering::Relaxed)
}

/// Uniform grid `0 = s₀ < … < s_n = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        Ok(Self { n: n_steps })
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// Index of the grid point `s`, which must lie on the grid.
    pub fn index_of(&self, s: f64) -> Result<usize> {
        let x = s * self.n as f64;
        let i = x.round();
        if !(0.0..=self.n as f64).contains(&i) || (x - i).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "time {s} is not a point of the {}-step grid",
                self.n
            )));
        }
        Ok(i as usize)
    }
}

/// Values of a path at every grid point, `values.len() == n + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath<const K: usize> {
    pub grid: TimeGrid,
    pub values: Vec<Vector<K>>,
}

impl<const K: usize> DiscretePath<K> {
    pub fn new(grid: TimeGrid, values: Vec<Vector<K>>) -> Result<Self> {
        if values.len() != grid.n_steps() + 1 {
            return Err(Error::Dimension {
                expected: grid.n_steps() + 1,
                found: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Path starting at `start` with the given increments.
    pub fn from_increments(
        grid: TimeGrid,
        start: Vector<K>,
        increments: &[Vector<K>],
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut x = start;
        values.push(x);
        for dx in increments {
            x += dx;
            values.push(x);
        }
        Self::new(grid, values)
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn increment(&self, i: usize) -> Vector<K> {
        self.values[i + 1] - self.values[i]
    }

    pub fn increments(&self) -> Vec<Vector<K>> {
        self.values.windows(2).map(|p| p[1] - p[0]).collect()
    }

    pub fn last(&self) -> &Vector<K> {
        &self.values[self.values.len() - 1]
    }

    /// Maximum over the grid of `|self − other|`.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// A standard Gaussian vector.
pub fn standard_normal_vector<const K: usize>(rng: &mut ChaCha8Rng) -> Vector<K> {
    Vector::<K>::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian increments with covariance `Δs·I`.
pub fn brownian_increments<const K: usize>(grid: TimeGrid, rng: &mut ChaCha8Rng) -> Vec<Vector<K>> {
    let scale = grid.dt().sqrt();
    (0..grid.n_steps())
        .map(|_| standard_normal_vector::<K>(rng) * scale)
        .collect()
}

/// Brownian path from 0 drawn from the stream `(seed, path_index)`.
pub fn sample_brownian<const K: usize>(
    grid: TimeGrid,
    seed: u64,
    path_index: u64,
) -> DiscretePath<K> {
    let mut rng = path_rng(seed, 0, path_index);
    let incs = brownian_increments::<K>(grid, &mut rng);
    DiscretePath::from_increments(grid, Vector::zeros(), &incs)
        .expect("increment count matches grid")
}

/// Left-point sum `Σ f_{s_i}·Δw_i`; `integrand` holds at least `n` values.
pub fn ito_integral<const K: usize>(integrand: &[Vector<K>], w: &DiscretePath<K>) -> Result<f64> {
    let n = w.n_steps();
    if integrand.len() < n {
        return Err(Error::Dimension {
            expected: n,
            found: integrand.len(),
        });
    }
    Ok((0..n).map(|i| integrand[i].dot(&w.increment(i))).sum())
}

/// Midpoint sum `Σ ½(f_{s_i} + f_{s_{i+1}})·Δw_i`; `integrand` holds `n + 1` values.
pub fn stratonovich_integral<const K: usize>(
    integrand: &[Vector<K>],
    w: &DiscretePath<K>,
) -> Result<f64> {
    let n = w.n_steps();
    if integrand.len() != n + 1 {
        return Err(Error::Dimension {
            expected: n + 1,
            found: integrand.len(),
        });
    }
    Ok((0..n)
        .map(|i| 0.5 * (integrand[i] + integrand[i + 1]).dot(&w.increment(i)))
        .sum())
}

/// Recipes for Cameron–Martin directions. All deterministic recipes have unit energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftRecipe {
    /// `ḣ = e₁`.
    Linear,
    /// `ḣ_s = cos(2πs)e₁ + sin(2πs)e₂`, or `√2 cos(2πs)` in one dimension.
    Sinusoid,
    /// `ḣ_s = √3·s·e_d`.
    Ramp,
    /// `ḣ = e_k` for a fixed axis `k`.
    Constant { axis: usize },
    /// `ḣ_s = tanh(w¹_s)e₁`.
    AdaptedTanh,
    /// `ḣ_s = cos(2πs + w¹_s)e₁ + sin(2πs + w¹_s)e₂`.
    AdaptedSinusoid,
}

impl ShiftRecipe {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "linear" => Self::Linear,
            "sinusoid" => Self::Sinusoid,
            "ramp" => Self::Ramp,
            "tanh" | "adapted-tanh" => Self::AdaptedTanh,
            "adapted-sinusoid" => Self::AdaptedSinusoid,
            other => {
                if let Some(k) = other.strip_prefix("axis") {
                    let axis = k
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad axis in shift '{other}'")))?;
                    if axis == 0 {
                        return Err(Error::Config("shift axes are numbered from 1".into()));
                    }
                    Self::Constant { axis: axis - 1 }
                } else {
                    return Err(Error::Config(format!("unknown shift recipe '{other}'")));
                }
            }
        })
    }

    pub fn is_adapted(&self) -> bool {
        matches!(self, Self::AdaptedTanh | Self::AdaptedSinusoid)
    }

    /// Unclipped density at time `s`; `w` is the driving path value at `s`.
    pub fn raw<const D: usize>(&self, s: f64, w: &Vector<D>) -> Vector<D> {
        let tau = std::f64::consts::TAU;
        let mut v = Vector::<D>::zeros();
        let planar = |v: &mut Vector<D>, angle: f64| {
            if D == 1 {
                v[0] = std::f64::consts::SQRT_2 * angle.cos();
            } else {
                v[0] = angle.cos();
                v[1] = angle.sin();
            }
        };
        match *self {
            Self::Linear => v[0] = 1.0,
            Self::Sinusoid => planar(&mut v, tau * s),
            Self::Ramp => v[D - 1] = 3f64.sqrt() * s,
            Self::Constant { axis } => v[axis.min(D - 1)] = 1.0,
            Self::AdaptedTanh => v[0] = w[0].tanh(),
            Self::AdaptedSinusoid => planar(&mut v, tau * s + w[0]),
        }
        v
    }
}

/// Incremental evaluator of a shift density that clips to the energy bound as it goes.
///
/// Deterministic recipes are rescaled as a whole; adapted ones spend a running budget
/// so that `ḣ_{s_i}` never looks past `w_{s_i}`.
#[derive(Clone, Debug)]
pub struct ShiftSource<const D: usize> {
    recipe: ShiftRecipe,
    grid: TimeGrid,
    bound: f64,
    scale: f64,
    spent: f64,
}

impl<const D: usize> ShiftSource<D> {
    pub fn new(recipe: ShiftRecipe, grid: TimeGrid, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::Config("shift bound must be positive".into()));
        }
        if let ShiftRecipe::Constant { axis } = recipe {
            if axis >= D {
                return Err(Error::Config(format!(
                    "shift axis {} exceeds dimension {D}",
                    axis + 1
                )));
            }
        }
        let mut scale = 1.0;
        if !recipe.is_adapted() {
            let zero = Vector::<D>::zeros();
            let energy: f64 = (0..grid.n_steps())
                .map(|i| recipe.raw(grid.time(i), &zero).norm_squared() * grid.dt())
                .sum();
            if energy > bound {
                scale = (bound / energy).sqrt();
            }
        }
        Ok(Self {
            recipe,
            grid,
            bound,
            scale,
            spent: 0.0,
        })
    }

    pub fn recipe(&self) -> ShiftRecipe {
        self.recipe
    }

    /// Density on `[s_i, s_{i+1})` given the driving value `w_{s_i}`. Call with `i = 0, 1, …`.
    pub fn next(&mut self, i: usize, w_left: &Vector<D>) -> Vector<D> {
        let dt = self.grid.dt();
        let mut v = self.recipe.raw(self.grid.time(i), w_left) * self.scale;
        if self.recipe.is_adapted() {
            let cost = v.norm_squared() * dt;
            let left = (self.bound - self.spent).max(0.0);
            if cost > left {
                v *= (left / cost).sqrt();
                self.spent = self.bound;
            } else {
                self.spent += cost;
            }
        }
        v
    }
}

/// A Cameron–Martin direction given by its density on the grid intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct CMShift<const D: usize> {
    pub grid: TimeGrid,
    pub hdot: Vec<Vector<D>>,
    pub adapted: bool,
    pub bound: f64,
}

impl<const D: usize> CMShift<D> {
    /// Deterministic shift from explicit densities, clipped to `bound`.
    pub fn from_density(grid: TimeGrid, mut hdot: Vec<Vector<D>>, bound: f64) -> Result<Self> {
        if hdot.len() != grid.n_steps() {
            return Err(Error::Dimension {
                expected: grid.n_steps(),
                found: hdot.len(),
            });
        }
        let energy: f64 = hdot.iter().map(|v| v.norm_squared()).sum::<f64>() * grid.dt();
        if energy > bound {
            let k = (bound / energy).sqrt();
            hdot.iter_mut().for_each(|v| *v *= k);
        }
        Ok(Self {
            grid,
            hdot,
            adapted: false,
            bound,
        })
    }

    /// `Σ|ḣ_i|²Δs`.
    pub fn energy(&self) -> f64 {
        self.hdot.iter().map(|v| v.norm_squared()).sum::<f64>() * self.grid.dt()
    }

    /// `h_{s_i} = Σ_{j<i} ḣ_j Δs` at every grid point.
    pub fn path(&self) -> DiscretePath<D> {
        let dt = self.grid.dt();
        let incs: Vec<_> = self.hdot.iter().map(|v| v * dt).collect();
        DiscretePath::from_increments(self.grid, Vector::zeros(), &incs).expect("grid sized")
    }
}

/// Builds a shift from a recipe; adapted recipes read the driving path `w`.
pub fn make_cm_shift<const D: usize>(
    recipe: ShiftRecipe,
    grid: TimeGrid,
    bound: f64,
    w: Option<&DiscretePath<D>>,
) -> Result<CMShift<D>> {
    let mut src = ShiftSource::<D>::new(recipe, grid, bound)?;
    let zero = Vector::<D>::zeros();
    let hdot = match (recipe.is_adapted(), w) {
        (true, None) => {
            return Err(Error::Config(
                "adapted shift recipes need a driving path".into(),
            ))
        }
        (true, Some(w)) => (0..grid.n_steps())
            .map(|i| src.next(i, &w.values[i]))
            .collect(),
        (false, _) => (0..grid.n_steps()).map(|i| src.next(i, &zero)).collect(),
    };
    Ok(CMShift {
        grid,
        hdot,
        adapted: recipe.is_adapted(),
        bound,
    })
}

/// Adapted rotation `o` and drift `a`, one value per grid interval.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedRotationDrift<const D: usize> {
    pub o: Vec<Matrix<D, D>>,
    pub a: Vec<Vector<D>>,
    pub orthogonal: bool,
}

impl<const D: usize> AdaptedRotationDrift<D> {
    pub fn identity(n: usize) -> Self {
        Self {
            o: vec![Matrix::identity(); n],
            a: vec![Vector::zeros(); n],
            orthogonal: true,
        }
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        self.o.iter().map(orthonormality_defect).fold(0.0, f64::max)
    }
}

/// A strictly positive reweighting factor kept in log form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weight {
    pub log: f64,
    pub clipped: bool,
}

impl Weight {
    pub fn from_log(log: f64) -> Self {
        let clipped = log.abs() > LOG_DENSITY_CLIP;
        if clipped {
            CLIPPED_DENSITIES.fetch_add(1, Ordering::Relaxed);
        }
        Self {
            log: log.clamp(-LOG_DENSITY_CLIP, LOG_DENSITY_CLIP),
            clipped,
        }
    }

    pub fn value(&self) -> f64 {
        self.log.exp()
    }
}

/// `exp(Σ a_i·o_iΔw_i − ½Σ|a_i|²Δs)`.
pub fn girsanov_density<const D: usize>(
    w: &DiscretePath<D>,
    od: &AdaptedRotationDrift<D>,
) -> Result<Weight> {
    let n = w.n_steps();
    if od.o.len() != n || od.a.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: od.o.len().min(od.a.len()),
        });
    }
    if od.orthogonal {
        let defect = od.max_orthogonality_defect();
        if defect > 1e-8 {
            return Err(Error::Contract(format!(
                "rotation process is not orthogonal ({defect:.2e})"
            )));
        }
    } else {
        return Err(Error::Contract(
            "rotation process is not flagged orthogonal".into(),
        ));
    }
    let dt = w.grid.dt();
    let log: f64 = (0..n)
        .map(|i| od.a[i].dot(&(od.o[i] * w.increment(i))) - 0.5 * od.a[i].norm_squared() * dt)
        .sum();
    Ok(Weight::from_log(log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_indexing() {
        let g = TimeGrid::new(8).unwrap();
        assert_eq!(g.index_of(0.5).unwrap(), 4);
        assert!(g.index_of(0.3).is_err());
        assert!(TimeGrid::new(0).is_err());
    }

    #[test]
    fn brownian_is_reproducible() {
        let g = TimeGrid::new(16).unwrap();
        let a = sample_brownian::<2>(g, 7, 3);
        let b = sample_brownian::<2>(g, 7, 3);
        let c = sample_brownian::<2>(g, 7, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.values[0], Vector::<2>::zeros());
    }

    #[test]
    fn stratonovich_of_w_telescopes() {
        let g = TimeGrid::new(37).unwrap();
        let w = sample_brownian::<1>(g, 1, 0);
        let s = stratonovich_integral(&w.values, &w).unwrap();
        assert!((s - 0.5 * w.last()[0].powi(2)).abs() < 1e-13);
    }

    #[test]
    fn ito_of_unit_vector_is_endpoint() {
        let g = TimeGrid::new(10).unwrap();
        let w = sample_brownian::<2>(g, 5, 0);
        let e1 = vec![Vector::<2>::new(1.0, 0.0); 10];
        assert!((ito_integral(&e1, &w).unwrap() - w.last()[0]).abs() < 1e-14);
        assert!(ito_integral(&e1[..5], &w).is_err());
    }

    #[test]
    fn linear_shift_is_straight() {
        let g = TimeGrid::new(4).unwrap();
        let h = make_cm_shift::<2>(ShiftRecipe::Linear, g, 1.0, None).unwrap();
        let p = h.path();
        assert!((p.values[2] - Vector::<2>::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn deterministic_clip_hits_bound() {
        let g = TimeGrid::new(32).unwrap();
        let raw = vec![Vector::<2>::new(2.0, 0.0); 32];
        let h = CMShift::from_density(g, raw, 1.0).unwrap();
        assert!((h.energy() - 1.0).abs() < 1e-12);
        let h = make_cm_shift::<2>(ShiftRecipe::Linear, g, 0.25, None).unwrap();
        assert!((h.energy() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unit_energy_recipes() {
        let g = TimeGrid::new(64).unwrap();
        for r in [ShiftRecipe::Linear, ShiftRecipe::Sinusoid] {
            let h = make_cm_shift::<2>(r, g, 10.0, None).unwrap();
            assert!((h.energy() - 1.0).abs() < 1e-12, "{r:?}");
        }
        let h = make_cm_shift::<1>(ShiftRecipe::Sinusoid, g, 10.0, None).unwrap();
        assert!((h.energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adapted_budget_is_respected() {
        let g = TimeGrid::new(64).unwrap();
        let w = sample_brownian::<2>(g, 9, 1);
        let h = make_cm_shift(ShiftRecipe::AdaptedSinusoid, g, 0.3, Some(&w)).unwrap();
        assert!(h.energy() <= 0.3 + 1e-12);
        assert!(make_cm_shift::<2>(ShiftRecipe::AdaptedTanh, g, 1.0, None).is_err());
    }

    #[test]
    fn recipe_names() {
        assert_eq!(
            ShiftRecipe::parse("axis2").unwrap(),
            ShiftRecipe::Constant { axis: 1 }
        );
        assert!(ShiftRecipe::parse("axis0").is_err());
        assert!(ShiftRecipe::parse("zigzag").is_err());
    }

    #[test]
    fn density_contract() {
        let g = TimeGrid::new(8).unwrap();
        let w = sample_brownian::<2>(g, 2, 0);
        let od = AdaptedRotationDrift::<2>::identity(8);
        assert_eq!(girsanov_density(&w, &od).unwrap().value(), 1.0);
        let mut bad = od.clone();
        bad.o[3] *= 1.1;
        assert!(matches!(
            girsanov_density(&w, &bad),
            Err(Error::Contract(_))
        ));
    }
}
