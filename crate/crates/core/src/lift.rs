//! Frame-bundle integrators: rolling, horizontal lift, development, parallel transport.
//!
//! All integrators take one Heun (predictor-corrector) step per grid interval, which is
//! the Stratonovich-consistent choice. After each step the base point is projected back
//! onto the manifold and the frame is tangent-projected and replaced by its polar factor.
//! The size of both corrections is recorded in a [`CorrectionLog`].

use crate::error::{Error, Result};
use crate::geometry::{Frame, Manifold};
use crate::linalg::{condition_number, orthonormality_defect, polar, Matrix, Vector};
use crate::wiener::{DiscretePath, TimeGrid};

/// Frames whose columns are more than this badly conditioned are rejected.
pub const MAX_FRAME_CONDITION: f64 = 1e6;

/// Whether to re-project and re-orthonormalize after every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Correction {
    #[default]
    Polar,
    None,
}

/// Largest per-step corrections applied while integrating a frame path.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorrectionLog {
    pub max_base: f64,
    pub max_frame: f64,
}

impl CorrectionLog {
    fn record(&mut self, base: f64, frame: f64) {
        self.max_base = self.max_base.max(base);
        self.max_frame = self.max_frame.max(frame);
    }
}

/// A path of orthonormal frames on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePath<const N: usize, const D: usize> {
    pub grid: TimeGrid,
    pub frames: Vec<Frame<N, D>>,
    pub log: CorrectionLog,
}

impl<const N: usize, const D: usize> FramePath<N, D> {
    /// The projected manifold path `π∘r`.
    pub fn base_path(&self) -> DiscretePath<N> {
        DiscretePath {
            grid: self.grid,
            values: self.frames.iter().map(|f| f.base).collect(),
        }
    }

    pub fn frame(&self, i: usize) -> &Frame<N, D> {
        &self.frames[i]
    }

    /// Ambient matrix of `t_{s_i ← s_j} = r_{s_i} r_{s_j}⁻¹`, mapping `T_{x_j}M` onto `T_{x_i}M`.
    pub fn transport(&self, i: usize, j: usize) -> Matrix<N, N> {
        self.frames[i].basis * self.frames[j].basis.transpose()
    }

    /// `r₀ᵀ r_n`: the rotation picked up by the starting frame, meaningful for closed loops.
    pub fn holonomy(&self) -> Matrix<D, D> {
        self.frames[0]
            .basis
            .tr_mul(&self.frames[self.frames.len() - 1].basis)
    }

    pub fn max_orthonormality_defect(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| orthonormality_defect(&f.basis))
            .fold(0.0, f64::max)
    }
}

fn in_tube<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    y: &Vector<N>,
    step: usize,
) -> Result<()> {
    m.project(y).map(|_| ()).map_err(|e| Error::Integration {
        step,
        reason: e.to_string(),
    })
}

fn finish_step<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    x: Vector<N>,
    basis: Matrix<N, D>,
    correction: Correction,
    step: usize,
    log: &mut CorrectionLog,
) -> Result<Frame<N, D>> {
    match correction {
        Correction::None => {
            in_tube(m, &x, step)?;
            Ok(Frame::new(x, basis))
        }
        Correction::Polar => {
            let base = m.project(&x).map_err(|e| Error::Integration {
                step,
                reason: e.to_string(),
            })?;
            let tangent = m.tangent_projector(&base) * basis;
            if orthonormality_defect(&tangent) > 0.5
                && condition_number(&tangent) > MAX_FRAME_CONDITION
            {
                return Err(Error::Integration {
                    step,
                    reason: "frame degenerated".into(),
                });
            }
            let q = polar(&tangent);
            log.record((base - x).norm(), (q - basis).amax());
            Ok(Frame::new(base, q))
        }
    }
}

/// One rolling step of `dr = L(r)∘dw` driven by the increment `dw`.
pub fn roll_step<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    r: &Frame<N, D>,
    dw: &Vector<D>,
    correction: Correction,
    step: usize,
    log: &mut CorrectionLog,
) -> Result<Frame<N, D>> {
    let (x, basis) = (r.base, r.basis);
    let v = basis * dw;
    let dbasis = -m.christoffel_apply(&x, &v, &basis);
    let x_pred = x + v;
    in_tube(m, &x_pred, step)?;
    let basis_pred = basis + dbasis;
    let v_pred = basis_pred * dw;
    let dbasis_pred = -m.christoffel_apply(&x_pred, &v_pred, &basis_pred);
    let x_new = x + (v + v_pred) * 0.5;
    let basis_new = basis + (dbasis + dbasis_pred) * 0.5;
    finish_step(m, x_new, basis_new, correction, step, log)
}

/// Rolls the flat path `w` onto `M` without slipping, starting from `r0`.
pub fn roll<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    w: &DiscretePath<D>,
    r0: &Frame<N, D>,
) -> Result<FramePath<N, D>> {
    roll_with(m, w, r0, Correction::Polar)
}

pub fn roll_with<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    w: &DiscretePath<D>,
    r0: &Frame<N, D>,
    correction: Correction,
) -> Result<FramePath<N, D>> {
    roll_increments(m, w.grid, &w.increments(), r0, correction)
}

pub fn roll_increments<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    grid: TimeGrid,
    increments: &[Vector<D>],
    r0: &Frame<N, D>,
    correction: Correction,
) -> Result<FramePath<N, D>> {
    let mut log = CorrectionLog::default();
    let mut frames = Vec::with_capacity(increments.len() + 1);
    let mut r = *r0;
    frames.push(r);
    for (i, dw) in increments.iter().enumerate() {
        r = roll_step(m, &r, dw, correction, i, &mut log)?;
        frames.push(r);
    }
    Ok(FramePath { grid, frames, log })
}

/// One step of `dX = −Γ_x(∘dx)X` from `x_i` to `x_{i+1}`.
pub fn lift_step<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    basis: &Matrix<N, D>,
    x0: &Vector<N>,
    x1: &Vector<N>,
    step: usize,
    log: &mut CorrectionLog,
) -> Result<Frame<N, D>> {
    let dx = x1 - x0;
    let k0 = m.christoffel_apply(x0, &dx, basis);
    let pred = basis - k0;
    let k1 = m.christoffel_apply(x1, &dx, &pred);
    let next = basis - (k0 + k1) * 0.5;
    finish_step(m, *x1, next, Correction::Polar, step, log)
}

/// Horizontal lift of a manifold path with `x₀ = π(r₀)`.
pub fn horizontal_lift<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    x: &DiscretePath<N>,
    r0: &Frame<N, D>,
) -> Result<FramePath<N, D>> {
    let start = (x.values[0] - r0.base).norm();
    if start > 1e-9 {
        return Err(Error::Contract(format!(
            "path starts {start:.2e} away from the frame base"
        )));
    }
    let mut log = CorrectionLog::default();
    let mut frames = Vec::with_capacity(x.values.len());
    let mut basis = r0.basis;
    frames.push(*r0);
    for i in 0..x.n_steps() {
        let f = lift_step(m, &basis, &x.values[i], &x.values[i + 1], i, &mut log)?;
        basis = f.basis;
        frames.push(f);
    }
    Ok(FramePath {
        grid: x.grid,
        frames,
        log,
    })
}

/// Anti-development `ξ = ∫ rᵀ∘dx`, with midpoint frames on each interval.
pub fn develop<const N: usize, const D: usize>(path: &FramePath<N, D>) -> DiscretePath<D> {
    let incs: Vec<Vector<D>> = path
        .frames
        .windows(2)
        .map(|f| (f[0].basis + f[1].basis).tr_mul(&(f[1].base - f[0].base)) * 0.5)
        .collect();
    DiscretePath::from_increments(path.grid, Vector::zeros(), &incs).expect("grid sized")
}
