//! Gradients on path space, the damped gradient, tangent processes and the
//! Monte Carlo checks of the integration-by-parts and intertwining identities.
//!
//! Every gradient is returned in frame coordinates: one `ℝ^d` vector per grid
//! interval `[s_j, s_{j+1})`, piecewise constant between the functional's times.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Cylindrical;
use crate::geometry::{Manifold, SkewMatrix};
use crate::lift::{roll, roll_increments, Correction, FramePath};
use crate::linalg::{expm_skew, Matrix, Vector};
use crate::montecarlo::{par_try_map, Batch};
use crate::stats::Estimate;
use crate::wiener::{make_cm_shift, sample_brownian, CMShift, DiscretePath, ShiftRecipe};

/// Default finite-difference step.
pub const FD_EPS: f64 = 1e-4;

/// `r_{s_i}ᵀ ∇_i f` for each time of the functional.
pub fn frame_gradients<const N: usize, const D: usize>(
    f: &Cylindrical<N>,
    fp: &FramePath<N, D>,
) -> Vec<Vector<D>> {
    let x = f.gather(&fp.base_path());
    f.gradient(&x)
        .iter()
        .zip(&f.times)
        .map(|(g, &i)| fp.frames[i].basis.tr_mul(g))
        .collect()
}

/// `D^M_s F` on each grid interval.
pub fn gradient_dm<const N: usize, const D: usize>(
    f: &Cylindrical<N>,
    fp: &FramePath<N, D>,
) -> Vec<Vector<D>> {
    let n = fp.grid.n_steps();
    let g = frame_gradients(f, fp);
    let mut out = vec![Vector::<D>::zeros(); n];
    let mut acc = Vector::<D>::zeros();
    for j in (0..n).rev() {
        acc += arrivals(f, &g, j + 1);
        out[j] = acc;
    }
    out
}

fn arrivals<const N: usize, const D: usize>(
    f: &Cylindrical<N>,
    g: &[Vector<D>],
    idx: usize,
) -> Vector<D> {
    f.times
        .iter()
        .zip(g)
        .filter(|(&t, _)| t == idx)
        .fold(Vector::zeros(), |a, (_, v)| a + v)
}

/// One-step propagators of `dQ/ds = −½ ric Q` along a frame path.
#[derive(Clone, Debug)]
pub struct DampingKernel<const D: usize> {
    steps: Vec<Matrix<D, D>>,
}

impl<const D: usize> DampingKernel<D> {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Propagator over `[s_k, s_{k+1}]`.
    pub fn step(&self, k: usize) -> &Matrix<D, D> {
        &self.steps[k]
    }

    /// `Q_{s_i, s_j}` for `i ≥ j`.
    pub fn q(&self, i: usize, j: usize) -> Matrix<D, D> {
        assert!(i >= j, "damping kernel is stored for s ≥ s′");
        self.steps[j..i]
            .iter()
            .fold(Matrix::identity(), |acc, p| p * acc)
    }

    /// `Q_{s_i, s_j}` for every `i ≥ j`.
    pub fn slice(&self, j: usize) -> Vec<Matrix<D, D>> {
        let mut out = Vec::with_capacity(self.steps.len() + 1 - j);
        let mut acc = Matrix::<D, D>::identity();
        out.push(acc);
        for p in &self.steps[j..] {
            acc = p * acc;
            out.push(acc);
        }
        out
    }
}

/// Classical fourth-order Runge–Kutta propagators for the damping equation.
pub fn solve_q<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    fp: &FramePath<N, D>,
) -> DampingKernel<D> {
    let h = fp.grid.dt();
    let gen: Vec<Matrix<D, D>> = fp.frames.iter().map(|r| m.ricci_matrix(r) * -0.5).collect();
    let steps = gen
        .windows(2)
        .map(|a| {
            let mid = (a[0] + a[1]) * 0.5;
            let k1 = a[0];
            let k2 = mid * (Matrix::identity() + k1 * (h / 2.0));
            let k3 = mid * (Matrix::identity() + k2 * (h / 2.0));
            let k4 = a[1] * (Matrix::identity() + k3 * h);
            Matrix::identity() + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        })
        .collect();
    DampingKernel { steps }
}

/// `D̃_s F` on each grid interval, evaluated at the interval's left end.
pub fn gradient_damped<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    f: &Cylindrical<N>,
    fp: &FramePath<N, D>,
) -> Vec<Vector<D>> {
    let q = solve_q(m, fp);
    damped_with(&q, f, &frame_gradients(f, fp))
}

/// `D̃ F` from precomputed frame gradients and damping kernel.
pub fn damped_with<const N: usize, const D: usize>(
    q: &DampingKernel<D>,
    f: &Cylindrical<N>,
    g: &[Vector<D>],
) -> Vec<Vector<D>> {
    let n = q.n_steps();
    let mut out = vec![Vector::<D>::zeros(); n];
    let mut acc = Vector::<D>::zeros();
    for j in (0..n).rev() {
        acc = q.step(j).tr_mul(&(acc + arrivals(f, g, j + 1)));
        out[j] = acc;
    }
    out
}

/// `∫⟨grad_s, ḣ_s⟩ ds` on the grid.
pub fn pair<const D: usize>(grad: &[Vector<D>], hdot: &[Vector<D>], dt: f64) -> f64 {
    grad.iter().zip(hdot).map(|(g, h)| g.dot(h)).sum::<f64>() * dt
}

/// Adapted perturbation `dξ = A dw + ḣ ds`, one value of each per grid interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentProcess<const D: usize> {
    pub rotation: Vec<SkewMatrix<D>>,
    pub hdot: Vec<Vector<D>>,
}

impl<const D: usize> TangentProcess<D> {
    pub fn shift(hdot: Vec<Vector<D>>) -> Self {
        Self {
            rotation: vec![SkewMatrix::zero(); hdot.len()],
            hdot,
        }
    }

    pub fn rotation(rotation: Vec<SkewMatrix<D>>) -> Self {
        Self {
            hdot: vec![Vector::zeros(); rotation.len()],
            rotation,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.hdot.len()
    }

    fn check(&self, w: &DiscretePath<D>) -> Result<()> {
        let n = w.n_steps();
        if self.hdot.len() != n || self.rotation.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: self.hdot.len().min(self.rotation.len()),
            });
        }
        Ok(())
    }

    /// `ξ_{s_i} = Σ_{j<i} (A_j Δw_j + ḣ_j Δs)`.
    pub fn path(&self, w: &DiscretePath<D>) -> Result<DiscretePath<D>> {
        self.check(w)?;
        let dt = w.grid.dt();
        let incs: Vec<Vector<D>> = (0..w.n_steps())
            .map(|j| self.rotation[j].matrix() * w.increment(j) + self.hdot[j] * dt)
            .collect();
        DiscretePath::from_increments(w.grid, Vector::zeros(), &incs)
    }

    /// Increments of `∫e^{εA}dw + εh`.
    pub fn perturb(&self, w: &DiscretePath<D>, eps: f64) -> Result<Vec<Vector<D>>> {
        self.check(w)?;
        let dt = w.grid.dt();
        Ok((0..w.n_steps())
            .map(|j| {
                expm_skew(&(self.rotation[j].matrix() * eps)) * w.increment(j)
                    + self.hdot[j] * (eps * dt)
            })
            .collect())
    }
}

/// Central difference with a Richardson-style consistency check at `2ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdEstimate {
    pub value: f64,
    /// `|D(ε) − D(2ε)|`, which is `3·O(ε²)` for a smooth functional.
    pub gap: f64,
}

/// `d/dε F(∫e^{εA}dw + εh)` at zero by central differences.
pub fn directional_derivative_fd<const D: usize>(
    f: &dyn Fn(&DiscretePath<D>) -> Result<f64>,
    w: &DiscretePath<D>,
    xi: &TangentProcess<D>,
    eps: f64,
) -> Result<FdEstimate> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-6, 1e-2]"
        )));
    }
    let at = |e: f64| -> Result<f64> {
        let incs = xi.perturb(w, e)?;
        f(&DiscretePath::from_increments(w.grid, w.values[0], &incs)?)
    };
    let central = |e: f64| -> Result<f64> { Ok((at(e)? - at(-e)?) / (2.0 * e)) };
    let value = central(eps)?;
    let coarse = central(2.0 * eps)?;
    Ok(FdEstimate {
        value,
        gap: (value - coarse).abs(),
    })
}

/// Flat derivative of `F∘I` along a Cameron–Martin density, by central differences of the rolling map.
pub fn manifold_shift_derivative<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    f: &Cylindrical<N>,
    w: &DiscretePath<D>,
    hdot: &[Vector<D>],
    eps: f64,
) -> Result<FdEstimate> {
    let xi = TangentProcess::shift(hdot.to_vec());
    let r0 = m.base_frame();
    let composed =
        |p: &DiscretePath<D>| -> Result<f64> { Ok(f.eval(&roll(m, p, &r0)?.base_path())) };
    directional_derivative_fd(&composed, w, &xi, eps)
}

/// Analytic rotational derivative `D^R_A α` of a flat cylindrical functional, split into
/// its Skorohod part and its Hessian trace part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RotationalDerivative {
    pub skorohod: f64,
    pub trace: f64,
}

impl RotationalDerivative {
    pub fn value(&self) -> f64 {
        self.skorohod + self.trace
    }
}

/// `D^R_A α = δ(Aᵀ D α) + ∫ A_{ab} D^b_s D^a_s α ds` for `α` a cylindrical functional of `w`.
pub fn rotational_derivative<const D: usize>(
    alpha: &Cylindrical<D>,
    w: &DiscretePath<D>,
    rotation: &[SkewMatrix<D>],
) -> Result<RotationalDerivative> {
    let n = w.n_steps();
    if rotation.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: rotation.len(),
        });
    }
    let dt = w.grid.dt();
    let x = alpha.gather(w);
    let grad = alpha.gradient(&x);
    let hess = alpha.hessian(&x);
    let k = alpha.n_times();
    let mut skorohod = 0.0;
    let mut trace = 0.0;
    for j in 0..n {
        let live: Vec<usize> = (0..k).filter(|&i| alpha.times[i] > j).collect();
        if live.is_empty() {
            continue;
        }
        let a = rotation[j].matrix();
        let dj: Vector<D> = live.iter().map(|&i| grad[i]).sum();
        // second flat derivative at a common time: Σ over pairs of live times
        let mut s = Matrix::<D, D>::zeros();
        for &i in &live {
            for &l in &live {
                for p in 0..D {
                    for q in 0..D {
                        s[(p, q)] += hess[(i * D + p, l * D + q)];
                    }
                }
            }
        }
        let u = a.tr_mul(&dj);
        let div: f64 = (0..D)
            .map(|b| (0..D).map(|p| a[(p, b)] * s[(p, b)]).sum::<f64>())
            .sum();
        skorohod += u.dot(&w.increment(j)) - div * dt;
        trace += div * dt;
    }
    Ok(RotationalDerivative { skorohod, trace })
}

/// `D^M_ξ F = Σ_i ⟨∇_i f, r_{s_i} ξ_{s_i}⟩`.
pub fn manifold_tangent_derivative<const N: usize, const D: usize>(
    f: &Cylindrical<N>,
    fp: &FramePath<N, D>,
    xi_path: &DiscretePath<D>,
) -> f64 {
    frame_gradients(f, fp)
        .iter()
        .zip(&f.times)
        .map(|(g, &i)| g.dot(&xi_path.values[i]))
        .sum()
}

/// The corrected direction `dξ* = dξ − γ∘dw` of the intertwining formula, with
/// `γ = ∫Ω(∘dw, ξ)` and the Stratonovich product taken at the interval midpoint.
pub fn intertwined<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    fp: &FramePath<N, D>,
    w: &DiscretePath<D>,
    xi: &TangentProcess<D>,
) -> Result<TangentProcess<D>> {
    let path = xi.path(w)?;
    let n = w.n_steps();
    let mut gamma = Matrix::<D, D>::zeros();
    let mut rotation = Vec::with_capacity(n);
    let mut hdot = Vec::with_capacity(n);
    for j in 0..n {
        let r = fp.frame(j);
        let mid = (path.values[j] + path.values[j + 1]) * 0.5;
        let dg = (m.curvature(r, &w.increment(j), &mid).into_matrix()
            + m.curvature(fp.frame(j + 1), &w.increment(j), &mid)
                .into_matrix())
            * 0.5;
        rotation.push(SkewMatrix::from_matrix(
            &(xi.rotation[j].matrix() - gamma - dg * 0.5),
        ));
        hdot.push(xi.hdot[j]);
        gamma += dg;
    }
    Ok(TangentProcess { rotation, hdot })
}

/// Both sides of the intertwining formula on one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntertwiningSample {
    pub analytic: f64,
    pub finite_difference: f64,
    pub fd_gap: f64,
}

pub fn intertwining_sample<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    f: &Cylindrical<N>,
    w: &DiscretePath<D>,
    xi: &TangentProcess<D>,
    eps: f64,
) -> Result<IntertwiningSample> {
    let r0 = m.base_frame();
    let fp = roll(m, w, &r0)?;
    let analytic = manifold_tangent_derivative(f, &fp, &xi.path(w)?);
    let star = intertwined(m, &fp, w, xi)?;
    let composed = |p: &DiscretePath<D>| -> Result<f64> {
        let incs = p.increments();
        Ok(f.eval(&roll_increments(m, p.grid, &incs, &r0, Correction::Polar)?.base_path()))
    };
    let fd = directional_derivative_fd(&composed, w, &star, eps)?;
    Ok(IntertwiningSample {
        analytic,
        finite_difference: fd.value,
        fd_gap: fd.gap,
    })
}

/// Built-in tangent processes: `shift`, `rotation`, `mixed`.
pub fn named_tangent_process<const D: usize>(
    name: &str,
    w: &DiscretePath<D>,
) -> Result<TangentProcess<D>> {
    let grid = w.grid;
    let n = grid.n_steps();
    let shift = || -> Result<Vec<Vector<D>>> {
        Ok(make_cm_shift(ShiftRecipe::Linear, grid, 1.0, Some(w))?.hdot)
    };
    let rotation = || -> Vec<SkewMatrix<D>> {
        let mut gen = Matrix::<D, D>::zeros();
        if D > 1 {
            gen[(0, 1)] = 1.0;
            gen[(1, 0)] = -1.0;
        }
        (0..n)
            .map(|j| SkewMatrix::from_matrix(&(gen * (0.8 * w.values[j][D - 1].cos()))))
            .collect()
    };
    match name {
        "shift" => Ok(TangentProcess::shift(shift()?)),
        "rotation" => Ok(TangentProcess::rotation(rotation())),
        "mixed" => Ok(TangentProcess {
            rotation: rotation(),
            hdot: shift()?,
        }),
        other => Err(Error::Config(format!("unknown tangent process '{other}'"))),
    }
}

/// Aggregate intertwining comparison over a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntertwiningReport {
    pub functional: String,
    pub process: String,
    pub n_paths: usize,
    /// `‖L − R‖₂ / ‖L‖₂` over paths.
    pub relative_error: f64,
    pub max_fd_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn intertwining_check<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    f: &Cylindrical<N>,
    process: &str,
    batch: &Batch,
    eps: f64,
    slack: f64,
) -> Result<IntertwiningReport> {
    let rows = par_try_map(batch.n_paths, 0.0, |p| {
        let w = sample_brownian::<D>(batch.grid, batch.seed, p as u64);
        let xi = named_tangent_process(process, &w)?;
        intertwining_sample(m, f, &w, &xi, eps)
    })?;
    let num: f64 = rows
        .iter()
        .map(|r| (r.analytic - r.finite_difference).powi(2))
        .sum();
    let den: f64 = rows.iter().map(|r| r.analytic.powi(2)).sum();
    let relative_error = (num / den).sqrt();
    let tolerance = 1e-3f64.max(slack * (eps + batch.grid.dt()));
    Ok(IntertwiningReport {
        functional: f.name.clone(),
        process: process.into(),
        n_paths: rows.len(),
        relative_error,
        max_fd_gap: rows.iter().map(|r| r.fd_gap).fold(0.0, f64::max),
        tolerance,
        pass: relative_error <= tolerance,
    })
}

/// Which integration-by-parts identity to test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IbpKind {
    /// `E D^M_h F = E F ∫(ḣ + ½ ric h) dw`.
    Bismut,
    /// `E D̃_h F = E F ∫ḣ dw`.
    Damped,
}

impl IbpKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bismut" => Ok(Self::Bismut),
            "damped" => Ok(Self::Damped),
            other => Err(Error::Config(format!("unknown IBP kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IbpRow {
    pub kind: IbpKind,
    pub functional: String,
    pub shift: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Right side with the control variate `F̄·∫… dw` removed.
    pub rhs_cv: Estimate,
    pub tolerance: f64,
    pub pass: bool,
}

/// Per-path values `(⟨grad, ḣ⟩, F, stochastic integral)` for one functional and shift.
fn ibp_terms<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    kind: IbpKind,
    f: &Cylindrical<N>,
    h: &CMShift<D>,
    fp: &FramePath<N, D>,
    w: &DiscretePath<D>,
    q: &DampingKernel<D>,
) -> (f64, f64, f64) {
    let dt = w.grid.dt();
    let g = frame_gradients(f, fp);
    let grad = match kind {
        IbpKind::Bismut => gradient_dm(f, fp),
        IbpKind::Damped => damped_with(q, f, &g),
    };
    let lhs = pair(&grad, &h.hdot, dt);
    let hp = h.path();
    let integral: f64 = (0..w.n_steps())
        .map(|j| {
            let mut v = h.hdot[j];
            if kind == IbpKind::Bismut {
                v += m.ricci(fp.frame(j), &hp.values[j]) * 0.5;
            }
            v.dot(&w.increment(j))
        })
        .sum();
    (lhs, f.eval(&fp.base_path()), integral)
}

/// Checks an IBP identity over every functional × deterministic shift pair on common paths.
pub fn ibp_check<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    kind: IbpKind,
    functionals: &[Cylindrical<N>],
    shifts: &[ShiftRecipe],
    batch: &Batch,
    slack: f64,
) -> Result<Vec<IbpRow>> {
    if let Some(r) = shifts.iter().find(|r| r.is_adapted()) {
        return Err(Error::Config(format!(
            "IBP checks take deterministic shifts, got {r:?}"
        )));
    }
    let hs: Vec<CMShift<D>> = shifts
        .iter()
        .map(|&r| make_cm_shift::<D>(r, batch.grid, 1.0, None))
        .collect::<Result<_>>()?;
    let r0 = m.base_frame();
    let samples = par_try_map(batch.n_paths, 0.0, |p| {
        let w = sample_brownian::<D>(batch.grid, batch.seed, p as u64);
        let fp = roll(m, &w, &r0)?;
        let q = solve_q(m, &fp);
        let mut out = Vec::with_capacity(functionals.len() * hs.len());
        for f in functionals {
            for h in &hs {
                out.push(ibp_terms(m, kind, f, h, &fp, &w, &q));
            }
        }
        Ok(out)
    })?;
    if samples
        .iter()
        .flatten()
        .any(|t| !(t.0.is_finite() && t.1.is_finite() && t.2.is_finite()))
    {
        return Err(Error::Solver("non-finite value in IBP sample".into()));
    }
    let mut rows = Vec::new();
    let cell = batch.grid.dt().sqrt() * slack;
    for (fi, f) in functionals.iter().enumerate() {
        for (hi, recipe) in shifts.iter().enumerate() {
            let k = fi * hs.len() + hi;
            let lhs: Vec<f64> = samples.iter().map(|s| s[k].0).collect();
            let fv: Vec<f64> = samples.iter().map(|s| s[k].1).collect();
            let rhs: Vec<f64> = samples.iter().map(|s| s[k].1 * s[k].2).collect();
            let fbar = fv.iter().sum::<f64>() / fv.len() as f64;
            let rhs_cv: Vec<f64> = samples.iter().map(|s| (s[k].1 - fbar) * s[k].2).collect();
            let (l, r) = (Estimate::from_samples(&lhs), Estimate::from_samples(&rhs));
            let tolerance = 3.0 * (l.se + r.se) + cell;
            rows.push(IbpRow {
                kind,
                functional: f.name.clone(),
                shift: format!("{recipe:?}").to_lowercase(),
                lhs: l,
                rhs: r,
                rhs_cv: Estimate::from_samples(&rhs_cv),
                tolerance,
                pass: (l.mean - r.mean).abs() <= tolerance,
            });
        }
    }
    Ok(rows)
}

/// Gauss–Hermite rule for the standard normal weight (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Both sides of the flat IBP `E⟨∇f(w_t), h_t⟩ = E f(w_t)⟨h_t, w_t⟩/t` by tensor Gauss–Hermite quadrature,
/// for a single-time functional of the flat path and a deterministic shift.
pub fn flat_ibp_quadrature<const D: usize>(
    f: &Cylindrical<D>,
    h: &CMShift<D>,
    nodes: usize,
) -> Result<(f64, f64)> {
    if f.n_times() != 1 || h.adapted {
        return Err(Error::Unsupported(
            "quadrature IBP needs a single-time functional and a fixed shift".into(),
        ));
    }
    let i = f.times[0];
    let t = h.grid.time(i);
    let ht = h.path().values[i];
    let (x, wt) = gauss_hermite(nodes);
    let sd = t.sqrt();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let total = nodes.pow(D as u32);
    for flat in 0..total {
        let mut idx = flat;
        let mut point = Vector::<D>::zeros();
        let mut weight = 1.0;
        for a in 0..D {
            let k = idx % nodes;
            idx /= nodes;
            point[a] = x[k] * sd;
            weight *= wt[k];
        }
        let pts = [point];
        lhs += weight * f.gradient(&pts)[0].dot(&ht);
        rhs += weight * f.value(&pts) * ht.dot(&point) / t;
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::Kernel;
    use crate::wiener::TimeGrid;

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(20);
        let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_after_last_time() {
        let g = TimeGrid::new(8).unwrap();
        let m = Manifold::<3, 2>::sphere();
        let w = sample_brownian::<2>(g, 1, 0);
        let fp = roll(&m, &w, &m.base_frame()).unwrap();
        let f = Cylindrical::new("mid", vec![4], Kernel::Coordinate { slot: 0, axis: 2 }).unwrap();
        let d = gradient_dm(&f, &fp);
        assert!(d[4..].iter().all(|v| v.norm() == 0.0));
        assert!(d[..4].iter().all(|v| *v == d[0]));
    }

    #[test]
    fn rotation_of_radial_functional_is_zero() {
        let g = TimeGrid::new(16).unwrap();
        let w = sample_brownian::<2>(g, 4, 2);
        let f = Cylindrical::<2>::named("sq1", g).unwrap();
        let rot = vec![SkewMatrix::from_lower(&Matrix::<2, 2>::new(0.0, 0.0, 1.0, 0.0)); 16];
        let d = rotational_derivative(&f, &w, &rot).unwrap();
        assert!(d.value().abs() < 1e-12);
    }
}
