//! Driver's flow on path space and its quasi-invariance.
//!
//! The flow `dσ/dt = H(σ(t))h` is solved two ways. [`solve_flow_picard`] integrates it
//! directly on the discretized manifold path with an implicit trapezoid in `t`, each step
//! solved by fixed-point iteration. [`solve_flow_pullback`] works on the flat side: the
//! development `φ(t)` of `σ(t)` satisfies `dφ = o dw + a ds` with
//!
//! ```text
//! do/dt = −c·o,    da/dt = −c·a + ḣ + ½ ric h,    c_s = ∫₀^s Ω(∘dφ, h),
//! ```
//!
//! and `σ(t)` is recovered by rolling `φ(t)`. The march runs over `s` on the outside and
//! advances every `t`-node together, so each `c_{s_i}(t_k)` is known before `o` and `a` are
//! stepped in `t` on the interval `[s_i, s_{i+1})`.
//!
//! Because the discrete map `w ↦ φ(t)` is triangular with orthogonal Gaussian part, it can be
//! inverted one interval at a time ([`pullback_preimage`]), which gives the exact
//! Radon–Nikodým derivative of the law of `φ(t)` used by [`quasi_invariance_report`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Cylindrical;
use crate::geometry::{Frame, Manifold};
use crate::lift::{develop, horizontal_lift, roll_step, Correction, CorrectionLog, FramePath};
use crate::linalg::{expm_skew, orthonormality_defect, Matrix, Vector};
use crate::montecarlo::{par_try_map, Batch};
use crate::rng::path_rng;
use crate::stats::Estimate;
use crate::wiener::{
    brownian_increments, AdaptedRotationDrift, CMShift, DiscretePath, ShiftRecipe, ShiftSource,
    TimeGrid,
};

/// Orthogonality drift of `o` beyond this aborts the pullback solve.
pub const MAX_ROTATION_DEFECT: f64 = 1e-4;

/// How the Picard iteration decides it has converged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PicardStop {
    /// Each path stops when its own sup-norm update is below tolerance.
    PathSup,
    /// All paths iterate together until `(mean sup²)^{1/2}` is below tolerance.
    BatchMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Flow steps per unit of `t`.
    pub t_steps: usize,
    pub picard_tol: f64,
    pub max_iters: usize,
    pub stop: PicardStop,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_steps: 16,
            picard_tol: 1e-10,
            max_iters: 50,
            stop: PicardStop::PathSup,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 || !(self.picard_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config(
                "solver needs t_steps ≥ 1, picard_tol > 0, max_iters ≥ 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of flow steps used to reach `t`.
    pub fn steps_for(&self, t: f64) -> usize {
        if t == 0.0 {
            0
        } else {
            ((t.abs() * self.t_steps as f64).ceil() as usize).max(1)
        }
    }
}

/// Solver diagnostics collected along a flow solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    pub flow_steps: usize,
    pub max_rotation_defect: f64,
    pub max_skew_correction: f64,
    pub picard_iterations: Vec<usize>,
    pub worst_contraction: f64,
    pub corrections: (f64, f64),
}

/// The flow at parameter `t`.
#[derive(Clone, Debug)]
pub struct FlowState<const N: usize, const D: usize> {
    pub t: f64,
    /// Horizontal lift of `σ(t)`; its base path is `σ(t)`.
    pub sigma: FramePath<N, D>,
    /// Development `φ(t)`.
    pub phi: DiscretePath<D>,
    /// `o(t)` and `a(t)`, available from the pullback solver.
    pub drift: Option<AdaptedRotationDrift<D>>,
    pub diagnostics: FlowDiagnostics,
}

fn reject_adapted<const D: usize>(h: &CMShift<D>) -> Result<()> {
    if h.hdot.len() != h.grid.n_steps() {
        return Err(Error::Dimension {
            expected: h.grid.n_steps(),
            found: h.hdot.len(),
        });
    }
    Ok(())
}

fn project_all<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    ys: &[Vector<N>],
) -> Result<Vec<Vector<N>>> {
    ys.iter()
        .enumerate()
        .map(|(i, y)| {
            m.project(y).map_err(|e| Error::Integration {
                step: i,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// `s ↦ H_s(σ)h_s` in ambient coordinates, with the lift it came from.
fn flow_field<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    sigma: &DiscretePath<N>,
    r0: &Frame<N, D>,
    h: &DiscretePath<D>,
) -> Result<(Vec<Vector<N>>, FramePath<N, D>)> {
    let lift = horizontal_lift(m, sigma, r0)?;
    let field = lift
        .frames
        .iter()
        .zip(&h.values)
        .map(|(f, hv)| f.basis * hv)
        .collect();
    Ok((field, lift))
}

struct PicardPath<const N: usize, const D: usize> {
    sigma: DiscretePath<N>,
    h: DiscretePath<D>,
    field: Vec<Vector<N>>,
    guess: DiscretePath<N>,
    residual: f64,
    active: bool,
    iterations: Vec<usize>,
    worst_ratio: f64,
}

/// Picard solve for a batch of paths sharing one stopping rule.
///
/// `starts[j]` is `σ(0)` for path `j` (normally `roll(w_j)`) and `shifts[j]` its shift.
pub fn solve_flow_picard_batch<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    starts: &[FramePath<N, D>],
    shifts: &[CMShift<D>],
    t: f64,
    cfg: &SolverConfig,
) -> Result<Vec<FlowState<N, D>>> {
    cfg.validate()?;
    if starts.len() != shifts.len() {
        return Err(Error::Dimension {
            expected: starts.len(),
            found: shifts.len(),
        });
    }
    let steps = cfg.steps_for(t);
    let dt = if steps == 0 { 0.0 } else { t / steps as f64 };
    let r0s: Vec<Frame<N, D>> = starts.iter().map(|s| s.frames[0]).collect();
    let mut paths = Vec::with_capacity(starts.len());
    for (s, h) in starts.iter().zip(shifts) {
        reject_adapted(h)?;
        let sigma = s.base_path();
        paths.push(PicardPath {
            guess: sigma.clone(),
            sigma,
            h: h.path(),
            field: Vec::new(),
            residual: 0.0,
            active: false,
            iterations: Vec::new(),
            worst_ratio: 0.0,
        });
    }
    for _ in 0..steps {
        for (p, r0) in paths.iter_mut().zip(&r0s) {
            let (field, _) = flow_field(m, &p.sigma, r0, &p.h)?;
            let ys: Vec<_> = p
                .sigma
                .values
                .iter()
                .zip(&field)
                .map(|(x, v)| x + v * dt)
                .collect();
            p.guess = DiscretePath::new(p.sigma.grid, project_all(m, &ys)?)?;
            p.field = field;
            p.active = true;
            p.iterations.push(0);
            p.residual = f64::INFINITY;
        }
        let mut iter = 0;
        loop {
            iter += 1;
            if iter > cfg.max_iters {
                let residual = paths
                    .iter()
                    .filter(|p| p.active)
                    .map(|p| p.residual)
                    .fold(0.0, f64::max);
                return Err(Error::NoConvergence {
                    iterations: cfg.max_iters,
                    residual,
                });
            }
            for (p, r0) in paths.iter_mut().zip(&r0s).filter(|(p, _)| p.active) {
                let (next_field, _) = flow_field(m, &p.guess, r0, &p.h)?;
                let ys: Vec<_> = p
                    .sigma
                    .values
                    .iter()
                    .zip(p.field.iter().zip(&next_field))
                    .map(|(x, (v0, v1))| x + (v0 + v1) * (0.5 * dt))
                    .collect();
                let next = DiscretePath::new(p.sigma.grid, project_all(m, &ys)?)?;
                let residual = next.sup_distance(&p.guess);
                if p.residual.is_finite() && p.residual > 0.0 {
                    p.worst_ratio = p.worst_ratio.max(residual / p.residual);
                }
                p.residual = residual;
                p.guess = next;
                *p.iterations.last_mut().expect("step pushed") += 1;
            }
            let done = match cfg.stop {
                PicardStop::PathSup => {
                    for p in paths.iter_mut() {
                        if p.residual < cfg.picard_tol {
                            p.active = false;
                        }
                    }
                    paths.iter().all(|p| !p.active)
                }
                PicardStop::BatchMean => {
                    let ms = paths.iter().map(|p| p.residual * p.residual).sum::<f64>()
                        / paths.len() as f64;
                    ms.sqrt() < cfg.picard_tol
                }
            };
            if done {
                break;
            }
        }
        for p in paths.iter_mut() {
            p.active = false;
            p.sigma = p.guess.clone();
        }
    }
    paths
        .into_iter()
        .zip(&r0s)
        .map(|(p, r0)| {
            let sigma = horizontal_lift(m, &p.sigma, r0)?;
            let phi = develop(&sigma);
            let corrections = (sigma.log.max_base, sigma.log.max_frame);
            Ok(FlowState {
                t,
                sigma,
                phi,
                drift: None,
                diagnostics: FlowDiagnostics {
                    flow_steps: steps,
                    picard_iterations: p.iterations,
                    worst_contraction: p.worst_ratio,
                    corrections,
                    ..Default::default()
                },
            })
        })
        .collect()
}

/// Picard solve of the flow for a single driving path `w`, starting from `roll(w)`.
pub fn solve_flow_picard<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    w: &DiscretePath<D>,
    h: &CMShift<D>,
    t: f64,
    cfg: &SolverConfig,
) -> Result<FlowState<N, D>> {
    let start = crate::lift::roll(m, w, &m.base_frame())?;
    let mut out = solve_flow_picard_batch(m, &[start], std::slice::from_ref(h), t, cfg)?;
    Ok(out.pop().expect("one path"))
}

/// Which side of the flow map is given.
#[derive(Clone, Copy, Debug)]
enum Drive<'a, const D: usize> {
    /// Increments of the Brownian driver `w`.
    Forward(&'a [Vector<D>]),
    /// Increments of the target `φ(t)`; the driver is solved for.
    Inverse(&'a [Vector<D>]),
}

struct March<const N: usize, const D: usize> {
    start: FramePath<N, D>,
    end: FramePath<N, D>,
    driver: Vec<Vector<D>>,
    developed: Vec<Vector<D>>,
    drift: AdaptedRotationDrift<D>,
    log_density: f64,
    log_literal: f64,
    log_reverse: f64,
    diagnostics: FlowDiagnostics,
}

fn march<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    grid: TimeGrid,
    drive: Drive<'_, D>,
    hdot: &mut dyn FnMut(usize, &Vector<D>) -> Vector<D>,
    t: f64,
    cfg: &SolverConfig,
) -> Result<March<N, D>> {
    cfg.validate()?;
    let n = grid.n_steps();
    let ds = grid.dt();
    let given = match drive {
        Drive::Forward(x) | Drive::Inverse(x) => x,
    };
    if given.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: given.len(),
        });
    }
    let kt = cfg.steps_for(t);
    let dt = if kt == 0 { 0.0 } else { t / kt as f64 };
    let nodes = kt + 1;
    let r0 = m.base_frame();

    let mut frames = vec![r0; nodes];
    let mut c = vec![Matrix::<D, D>::zeros(); nodes];
    let mut o = vec![Matrix::<D, D>::identity(); nodes];
    let mut a = vec![Vector::<D>::zeros(); nodes];
    let mut b = vec![Vector::<D>::zeros(); nodes];
    let mut start = vec![r0];
    let mut end = vec![r0];
    let mut log = CorrectionLog::default();
    let mut diag = FlowDiagnostics {
        flow_steps: kt,
        ..Default::default()
    };
    let mut drift = AdaptedRotationDrift::identity(n);
    let mut driver = Vec::with_capacity(n);
    let mut developed = Vec::with_capacity(n);
    let mut w_left = Vector::<D>::zeros();
    let mut h_left = Vector::<D>::zeros();
    let (mut log_density, mut log_literal, mut log_reverse) = (0.0, 0.0, 0.0);

    for i in 0..n {
        let hd = hdot(i, &w_left);
        let h_right = h_left + hd * ds;
        let h_mid = (h_left + h_right) * 0.5;

        for k in 0..nodes {
            b[k] = hd + m.ricci(&frames[k], &h_left) * 0.5;
        }
        o[0] = Matrix::identity();
        a[0] = Vector::zeros();
        for k in 1..nodes {
            let e = expm_skew(&((c[k - 1] + c[k]) * (-0.5 * dt)));
            o[k] = e * o[k - 1];
            a[k] = e * a[k - 1] + (e * b[k - 1] + b[k]) * (0.5 * dt);
            diag.max_rotation_defect = diag.max_rotation_defect.max(orthonormality_defect(&o[k]));
        }
        if diag.max_rotation_defect > MAX_ROTATION_DEFECT {
            return Err(Error::Solver(format!(
                "rotation lost orthogonality at step {i} ({:.2e})",
                diag.max_rotation_defect
            )));
        }

        let (o_t, a_t) = (o[kt], a[kt]);
        let dw = match drive {
            Drive::Forward(w) => w[i],
            Drive::Inverse(x) => o_t.tr_mul(&(x[i] - a_t * ds)),
        };
        for k in 0..nodes {
            let dphi = o[k] * dw + a[k] * ds;
            let next = roll_step(m, &frames[k], &dphi, Correction::Polar, i, &mut log)?;
            let inc = (m.curvature(&frames[k], &dphi, &h_mid).into_matrix()
                + m.curvature(&next, &dphi, &h_mid).into_matrix())
                * 0.5;
            let raw = c[k] + inc;
            let skew = (raw - raw.transpose()) * 0.5;
            diag.max_skew_correction = diag.max_skew_correction.max((raw - skew).amax());
            c[k] = skew;
            frames[k] = next;
            if k == kt {
                developed.push(dphi);
                log_density += a_t.dot(&dphi) - 0.5 * a_t.norm_squared() * ds;
            }
        }
        let rotated = o_t * dw;
        log_literal += a_t.dot(&rotated) - 0.5 * a_t.norm_squared() * ds;
        log_reverse += -a_t.dot(&rotated) - 0.5 * a_t.norm_squared() * ds;
        drift.o[i] = o_t;
        drift.a[i] = a_t;
        start.push(frames[0]);
        end.push(frames[kt]);
        driver.push(dw);
        w_left += dw;
        h_left = h_right;
    }
    diag.corrections = (log.max_base, log.max_frame);
    Ok(March {
        start: FramePath {
            grid,
            frames: start,
            log,
        },
        end: FramePath {
            grid,
            frames: end,
            log,
        },
        driver,
        developed,
        drift,
        log_density,
        log_literal,
        log_reverse,
        diagnostics: diag,
    })
}

fn realized<const D: usize>(h: &CMShift<D>) -> impl FnMut(usize, &Vector<D>) -> Vector<D> + '_ {
    move |i, _| h.hdot[i]
}

/// Pullback solve of the flow driven by `w` with a realized shift `h`.
pub fn solve_flow_pullback<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    w: &DiscretePath<D>,
    h: &CMShift<D>,
    t: f64,
    cfg: &SolverConfig,
) -> Result<FlowState<N, D>> {
    reject_adapted(h)?;
    let incs = w.increments();
    let out = march(m, w.grid, Drive::Forward(&incs), &mut realized(h), t, cfg)?;
    Ok(out.into_state(t))
}

impl<const N: usize, const D: usize> March<N, D> {
    fn into_state(self, t: f64) -> FlowState<N, D> {
        let phi = DiscretePath::from_increments(self.end.grid, Vector::zeros(), &self.developed)
            .expect("grid sized");
        FlowState {
            t,
            sigma: self.end,
            phi,
            drift: Some(self.drift),
            diagnostics: self.diagnostics,
        }
    }
}

/// Result of running the flow on a freshly sampled driver.
#[derive(Clone, Debug)]
pub struct ForwardSample<const N: usize, const D: usize> {
    /// `p = roll(w)`.
    pub start: FramePath<N, D>,
    pub state: FlowState<N, D>,
    /// `Σ a·oΔw − ½Σ|a|²Δs` on the driver.
    pub log_literal: f64,
    /// `−Σ a·oΔw − ½Σ|a|²Δs`, the density that turns `φ(t)` back into a Brownian motion.
    pub log_reverse: f64,
}

/// Runs the pullback flow on the driver `w`, with the shift built incrementally from `w`.
pub fn pullback_forward<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    w: &DiscretePath<D>,
    source: ShiftSource<D>,
    t: f64,
    cfg: &SolverConfig,
) -> Result<ForwardSample<N, D>> {
    let mut src = source;
    let incs = w.increments();
    let out = march(
        m,
        w.grid,
        Drive::Forward(&incs),
        &mut |i, wl| src.next(i, wl),
        t,
        cfg,
    )?;
    let (log_literal, log_reverse) = (out.log_literal, out.log_reverse);
    let start = out.start.clone();
    Ok(ForwardSample {
        start,
        state: out.into_state(t),
        log_literal,
        log_reverse,
    })
}

/// A driver recovered from a target development.
#[derive(Clone, Debug)]
pub struct Preimage<const N: usize, const D: usize> {
    /// The driver `w'` with `φ(t)(w') = x`.
    pub driver: DiscretePath<D>,
    /// `roll(x)`.
    pub target: FramePath<N, D>,
    pub drift: AdaptedRotationDrift<D>,
    /// `log dμ_t/dμ (x) = Σ a_i·Δx_i − ½Σ|a_i|²Δs`.
    pub log_density: f64,
    pub diagnostics: FlowDiagnostics,
}

/// Solves `φ(t)(w') = x` for the driver one interval at a time.
pub fn pullback_preimage<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    x: &DiscretePath<D>,
    source: ShiftSource<D>,
    t: f64,
    cfg: &SolverConfig,
) -> Result<Preimage<N, D>> {
    let mut src = source;
    let incs = x.increments();
    let out = march(
        m,
        x.grid,
        Drive::Inverse(&incs),
        &mut |i, wl| src.next(i, wl),
        t,
        cfg,
    )?;
    let driver = DiscretePath::from_increments(x.grid, Vector::zeros(), &out.driver)?;
    Ok(Preimage {
        driver,
        target: out.end,
        drift: out.drift,
        log_density: out.log_density,
        diagnostics: out.diagnostics,
    })
}

/// One row of a quasi-invariance report.
#[derive(Clone, Debug, Serialize)]
pub struct QiRow {
    pub functional: String,
    /// `Ê[F(σ(t))]` on the first batch.
    pub direct: Estimate,
    /// `Ê[F(p)·dμ_t/dμ]` on the second batch.
    pub reweighted: Estimate,
    /// `Ê[F(p)·exp(Σ a·oΔw − ½Σ|a|²Δs)]` on the first batch, `o`, `a` taken along the forward flow.
    pub literal: Estimate,
    /// `Ê[F(σ(t))·exp(−Σ a·oΔw − ½Σ|a|²Δs)]` on the first batch.
    pub reverse: Estimate,
    /// `Ê[F(p)]` on the first batch.
    pub base: Estimate,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct QiReport {
    pub t: f64,
    pub recipe: ShiftRecipe,
    pub n_paths: usize,
    pub rows: Vec<QiRow>,
    pub max_rotation_defect: f64,
    pub max_skew_correction: f64,
    pub failed_paths: usize,
}

impl QiReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.max_rotation_defect <= 1e-6
    }
}

/// Checks `Ê[F(σ(t))] = Ê[F(p)·dμ_t/dμ]` for each functional.
///
/// `slack` is the constant in front of `Δs^{1/2}` in the tolerance
/// `3·(SE_A + SE_B) + slack·Δs^{1/2}`.
pub fn quasi_invariance_report<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    functionals: &[Cylindrical<N>],
    recipe: ShiftRecipe,
    bound: f64,
    t: f64,
    batch: &Batch,
    cfg: &SolverConfig,
    slack: f64,
) -> Result<QiReport> {
    let grid = batch.grid;
    let source = ShiftSource::<D>::new(recipe, grid, bound)?;
    let nf = functionals.len();

    let forward = par_try_map(batch.n_paths, 0.01, |j| {
        let mut rng = path_rng(batch.seed, 1, j as u64);
        let w = DiscretePath::from_increments(
            grid,
            Vector::zeros(),
            &brownian_increments::<D>(grid, &mut rng),
        )?;
        let s = pullback_forward(m, &w, source.clone(), t, cfg)?;
        let p = s.start.base_path();
        let sig = s.state.sigma.base_path();
        let fp: Vec<f64> = functionals.iter().map(|f| f.eval(&p)).collect();
        let fs: Vec<f64> = functionals.iter().map(|f| f.eval(&sig)).collect();
        Ok((fp, fs, s.log_reverse, s.state.diagnostics, s.log_literal))
    })?;
    let backward = par_try_map(batch.n_paths, 0.01, |j| {
        let mut rng = path_rng(batch.seed, 2, j as u64);
        let x = DiscretePath::from_increments(
            grid,
            Vector::zeros(),
            &brownian_increments::<D>(grid, &mut rng),
        )?;
        let pre = pullback_preimage(m, &x, source.clone(), t, cfg)?;
        let p = pre.target.base_path();
        let fx: Vec<f64> = functionals.iter().map(|f| f.eval(&p)).collect();
        Ok((fx, pre.log_density, pre.diagnostics))
    })?;

    let failed_paths = 2 * batch.n_paths - forward.len() - backward.len();
    let mut max_rotation_defect: f64 = 0.0;
    let mut max_skew_correction: f64 = 0.0;
    for d in forward
        .iter()
        .map(|f| &f.3)
        .chain(backward.iter().map(|b| &b.2))
    {
        max_rotation_defect = max_rotation_defect.max(d.max_rotation_defect);
        max_skew_correction = max_skew_correction.max(d.max_skew_correction);
    }
    let weight = |log: f64| crate::wiener::Weight::from_log(log).value();
    let sqrt_ds = grid.dt().sqrt();
    let rows = (0..nf)
        .map(|q| {
            let direct =
                Estimate::from_samples(&forward.iter().map(|f| f.1[q]).collect::<Vec<_>>());
            let base = Estimate::from_samples(&forward.iter().map(|f| f.0[q]).collect::<Vec<_>>());
            let reverse = Estimate::from_samples(
                &forward
                    .iter()
                    .map(|f| f.1[q] * weight(f.2))
                    .collect::<Vec<_>>(),
            );
            let reweighted = Estimate::from_samples(
                &backward
                    .iter()
                    .map(|b| b.0[q] * weight(b.1))
                    .collect::<Vec<_>>(),
            );
            let literal = Estimate::from_samples(
                &forward
                    .iter()
                    .map(|f| f.0[q] * weight(f.4))
                    .collect::<Vec<_>>(),
            );
            let tolerance = 3.0 * (direct.se + reweighted.se) + slack * sqrt_ds;
            QiRow {
                functional: functionals[q].name.clone(),
                pass: (direct.mean - reweighted.mean).abs() <= tolerance,
                direct,
                reweighted,
                literal,
                reverse,
                base,
                tolerance,
            }
        })
        .collect();
    Ok(QiReport {
        t,
        recipe,
        n_paths: batch.n_paths,
        rows,
        max_rotation_defect,
        max_skew_correction,
        failed_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wiener::{make_cm_shift, sample_brownian};

    #[test]
    fn zero_time_is_identity() {
        let m = Manifold::<3, 2>::sphere();
        let g = TimeGrid::new(32).unwrap();
        let w = sample_brownian::<2>(g, 1, 0);
        let h = make_cm_shift::<2>(ShiftRecipe::Sinusoid, g, 1.0, None).unwrap();
        let cfg = SolverConfig::default();
        let p = crate::lift::roll(&m, &w, &m.base_frame())
            .unwrap()
            .base_path();
        let a = solve_flow_picard(&m, &w, &h, 0.0, &cfg).unwrap();
        let b = solve_flow_pullback(&m, &w, &h, 0.0, &cfg).unwrap();
        assert!(a.sigma.base_path().sup_distance(&p) < 1e-14);
        assert!(b.sigma.base_path().sup_distance(&p) < 1e-15);
    }

    #[test]
    fn preimage_inverts_forward() {
        let m = Manifold::<3, 2>::sphere();
        let g = TimeGrid::new(64).unwrap();
        let w = sample_brownian::<2>(g, 8, 0);
        let cfg = SolverConfig::default();
        for recipe in [ShiftRecipe::Sinusoid, ShiftRecipe::AdaptedSinusoid] {
            let src = ShiftSource::new(recipe, g, 1.0).unwrap();
            let fwd = pullback_forward(&m, &w, src.clone(), 0.5, &cfg).unwrap();
            let pre = pullback_preimage(&m, &fwd.state.phi, src, 0.5, &cfg).unwrap();
            assert!(pre.driver.sup_distance(&w) < 1e-12);
            assert!(
                pre.target
                    .base_path()
                    .sup_distance(&fwd.state.sigma.base_path())
                    < 1e-12
            );
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            t_steps: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(SolverConfig::default().steps_for(0.5), 8);
        assert_eq!(SolverConfig::default().steps_for(-0.5), 8);
    }
}
