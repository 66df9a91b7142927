//! Anticipative integrals of step processes: the flat Skorohod integral `δ`, its damped
//! counterpart `δ̃` (trace and one-sided-limit formulas) and the manifold integral `δ^M`
//! (direct, Volterra and rotational routes), with their Monte Carlo adjoint checks,
//! the anticipative Itô formula on flat space and the L¹ estimate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Cylindrical;
use crate::geometry::{Kind, Manifold, SkewMatrix};
use crate::lift::{roll, roll_increments, Correction, FramePath};
use crate::linalg::{Matrix, Vector};
use crate::malliavin::{
    damped_with, frame_gradients, gradient_dm, pair, solve_q, DampingKernel, TangentProcess, FD_EPS,
};
use crate::montecarlo::{par_try_map, Batch};
use crate::rng::path_rng;
use crate::stats::Estimate;
use crate::wiener::{sample_brownian, DiscretePath, TimeGrid};

/// The random coefficient of a step-process term.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient<const N: usize, const D: usize> {
    Constant(f64),
    /// A cylindrical functional of the driving path `w`.
    Flat(Cylindrical<D>),
    /// A cylindrical functional of the rolled path `p = I(w)`.
    Manifold(Cylindrical<N>),
}

impl<const N: usize, const D: usize> Coefficient<N, D> {
    pub fn name(&self) -> String {
        match self {
            Self::Constant(c) => format!("{c}"),
            Self::Flat(f) => format!("w:{}", f.name),
            Self::Manifold(f) => f.name.clone(),
        }
    }
}

/// `α · ḣ` with `ḣ` given per grid interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Term<const N: usize, const D: usize> {
    pub coefficient: Coefficient<N, D>,
    pub profile: Vec<Vector<D>>,
}

/// `u(s) = Σ_k α_k ḣ_k(s)`, piecewise constant on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProcess<const N: usize, const D: usize> {
    pub name: String,
    pub grid: TimeGrid,
    pub terms: Vec<Term<N, D>>,
}

impl<const N: usize, const D: usize> StepProcess<N, D> {
    /// `α · 1_{[s_start, s_end)} e_axis`.
    pub fn indicator(
        name: impl Into<String>,
        grid: TimeGrid,
        coefficient: Coefficient<N, D>,
        start: usize,
        end: usize,
        axis: usize,
    ) -> Result<Self> {
        if start >= end || end > grid.n_steps() || axis >= D {
            return Err(Error::Config(format!(
                "indicator [{start}, {end}) on axis {axis} does not fit the grid"
            )));
        }
        let mut e = Vector::<D>::zeros();
        e[axis] = 1.0;
        let profile = (0..grid.n_steps())
            .map(|j| {
                if (start..end).contains(&j) {
                    e
                } else {
                    Vector::zeros()
                }
            })
            .collect();
        Self::rank_one(name, grid, coefficient, profile)
    }

    pub fn rank_one(
        name: impl Into<String>,
        grid: TimeGrid,
        coefficient: Coefficient<N, D>,
        profile: Vec<Vector<D>>,
    ) -> Result<Self> {
        if profile.len() != grid.n_steps() {
            return Err(Error::Dimension {
                expected: grid.n_steps(),
                found: profile.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            grid,
            terms: vec![Term {
                coefficient,
                profile,
            }],
        })
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.name = format!("{k}*{}", self.name);
        for t in &mut out.terms {
            t.profile.iter_mut().for_each(|v| *v *= k);
        }
        out
    }

    pub fn is_rank_one(&self) -> bool {
        self.terms.len() == 1
    }

    /// Same coefficients with every profile replaced by `map(profile)`.
    fn map_profiles(&self, map: impl Fn(&[Vector<D>]) -> Vec<Vector<D>>) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.profile = map(&t.profile);
        }
        out
    }

    /// `ǔ = u + ½ ric ∫₀^s u`, for constant Ricci curvature `ric`.
    pub fn ricci_lift(&self, ric: f64) -> Self {
        let dt = self.grid.dt();
        self.map_profiles(|p| {
            let mut acc = Vector::<D>::zeros();
            p.iter()
                .map(|v| {
                    let out = v + acc * (0.5 * ric);
                    acc += v * dt;
                    out
                })
                .collect()
        })
    }

    /// The solution `ũ` of `ũ + ½ ric ∫₀^s ũ = u` (left-rectangle rule), for constant `ric`.
    pub fn volterra_solve(&self, ric: f64) -> Self {
        let dt = self.grid.dt();
        self.map_profiles(|p| {
            let mut acc = Vector::<D>::zeros();
            p.iter()
                .map(|v| {
                    let out = v - acc * (0.5 * ric);
                    acc += out * dt;
                    out
                })
                .collect()
        })
    }
}

/// `ḣ(s ± Δs)` on the grid, zero outside `[0, 1)`.
fn shifted<const D: usize>(p: &[Vector<D>], forward: bool) -> Vec<Vector<D>> {
    let n = p.len();
    (0..n)
        .map(|j| match forward {
            true if j + 1 < n => p[j + 1],
            false if j > 0 => p[j - 1],
            _ => Vector::zeros(),
        })
        .collect()
}

/// A named decomposition whose value is the sum of its parts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnticipativeResult {
    pub value: f64,
    pub ledger: Vec<(String, f64)>,
}

impl AnticipativeResult {
    fn new(ledger: Vec<(&str, f64)>) -> Self {
        let ledger: Vec<(String, f64)> = ledger
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            value: ledger.iter().map(|e| e.1).sum(),
            ledger,
        }
    }

    fn nested(parts: Vec<(&str, AnticipativeResult)>, extra: Vec<(&str, f64)>) -> Self {
        let mut ledger = Vec::new();
        for (prefix, r) in parts {
            ledger.extend(
                r.ledger
                    .into_iter()
                    .map(|(k, v)| (format!("{prefix}.{k}"), v)),
            );
        }
        ledger.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
        Self {
            value: ledger.iter().map(|e| e.1).sum(),
            ledger,
        }
    }
}

/// One driving path with its rolled frames and damping kernel.
pub struct PathContext<'a, const N: usize, const D: usize> {
    pub m: &'a Manifold<N, D>,
    pub w: DiscretePath<D>,
    pub fp: FramePath<N, D>,
    pub q: DampingKernel<D>,
    pub eps: f64,
    base: DiscretePath<N>,
}

impl<'a, const N: usize, const D: usize> PathContext<'a, N, D> {
    pub fn new(m: &'a Manifold<N, D>, w: DiscretePath<D>) -> Result<Self> {
        let fp = roll(m, &w, &m.base_frame())?;
        let q = solve_q(m, &fp);
        let base = fp.base_path();
        Ok(Self {
            m,
            w,
            fp,
            q,
            eps: FD_EPS,
            base,
        })
    }

    pub fn value(&self, c: &Coefficient<N, D>) -> f64 {
        match c {
            Coefficient::Constant(v) => *v,
            Coefficient::Flat(f) => f.eval(&self.w),
            Coefficient::Manifold(f) => f.eval(&self.base),
        }
    }

    pub fn eval(&self, f: &Cylindrical<N>) -> f64 {
        f.eval(&self.base)
    }

    /// `∫⟨v_s, dw_s⟩` on the grid (left point).
    pub fn ito(&self, profile: &[Vector<D>]) -> f64 {
        profile
            .iter()
            .enumerate()
            .map(|(j, v)| v.dot(&self.w.increment(j)))
            .sum()
    }

    fn composed(&self, f: &Cylindrical<N>, incs: &[Vector<D>]) -> Result<f64> {
        let r0 = self.m.base_frame();
        Ok(
            f.eval(
                &roll_increments(self.m, self.w.grid, incs, &r0, Correction::Polar)?.base_path(),
            ),
        )
    }

    /// Central difference of `F∘I` along a tangent process.
    pub fn fd(&self, f: &Cylindrical<N>, xi: &TangentProcess<D>) -> Result<f64> {
        let plus = self.composed(f, &xi.perturb(&self.w, self.eps)?)?;
        let minus = self.composed(f, &xi.perturb(&self.w, -self.eps)?)?;
        Ok((plus - minus) / (2.0 * self.eps))
    }

    /// Flat Malliavin derivative `D_h α` along the density `profile`.
    pub fn flat_derivative(&self, c: &Coefficient<N, D>, profile: &[Vector<D>]) -> Result<f64> {
        match c {
            Coefficient::Constant(_) => Ok(0.0),
            Coefficient::Flat(f) => Ok(flat_cylindrical_derivative(f, &self.w, profile)),
            Coefficient::Manifold(f) if self.m.kind() == Kind::Flat => {
                Ok(pair(&gradient_dm(f, &self.fp), profile, self.w.grid.dt()))
            }
            Coefficient::Manifold(f) => self.fd(f, &TangentProcess::shift(profile.to_vec())),
        }
    }

    /// `D̃_h α`.
    pub fn damped_derivative(&self, c: &Coefficient<N, D>, profile: &[Vector<D>]) -> Result<f64> {
        match c {
            Coefficient::Constant(_) => Ok(0.0),
            Coefficient::Flat(f) => self.flat_only(f, profile),
            Coefficient::Manifold(f) => Ok(pair(&self.damped(f), profile, self.w.grid.dt())),
        }
    }

    /// `D^M_h α`.
    pub fn manifold_derivative(&self, c: &Coefficient<N, D>, profile: &[Vector<D>]) -> Result<f64> {
        match c {
            Coefficient::Constant(_) => Ok(0.0),
            Coefficient::Flat(f) => self.flat_only(f, profile),
            Coefficient::Manifold(f) => {
                Ok(pair(&gradient_dm(f, &self.fp), profile, self.w.grid.dt()))
            }
        }
    }

    fn flat_only(&self, f: &Cylindrical<D>, profile: &[Vector<D>]) -> Result<f64> {
        if self.m.kind() != Kind::Flat {
            return Err(Error::Unsupported(
                "manifold gradients of functionals of the driving path need a flat space".into(),
            ));
        }
        Ok(flat_cylindrical_derivative(f, &self.w, profile))
    }

    pub fn damped(&self, f: &Cylindrical<N>) -> Vec<Vector<D>> {
        damped_with(&self.q, f, &frame_gradients(f, &self.fp))
    }

    fn constant_ricci(&self) -> Result<f64> {
        self.m.constant_ricci().ok_or_else(|| {
            Error::Unsupported("the Volterra route needs constant Ricci curvature".into())
        })
    }

    /// `γ_h` at interval midpoints, `γ_h(s) = ∫₀^s Ω(∘dw, h)`.
    fn curvature_rotation(&self, profile: &[Vector<D>]) -> Vec<SkewMatrix<D>> {
        let dt = self.w.grid.dt();
        let mut h = Vector::<D>::zeros();
        let mut gamma = Matrix::<D, D>::zeros();
        let mut out = Vec::with_capacity(profile.len());
        for (j, v) in profile.iter().enumerate() {
            let next = h + v * dt;
            let mid = (h + next) * 0.5;
            let dw = self.w.increment(j);
            let dg = (self.m.curvature(self.fp.frame(j), &dw, &mid).into_matrix()
                + self
                    .m
                    .curvature(self.fp.frame(j + 1), &dw, &mid)
                    .into_matrix())
                * 0.5;
            out.push(SkewMatrix::from_matrix(&(gamma + dg * 0.5)));
            gamma += dg;
            h = next;
        }
        out
    }

    /// `D^R_{γ_h} α` in Itô form, realized as the midpoint rotation plus its drift correction `½ ric h`.
    pub fn curvature_rotational_derivative(
        &self,
        f: &Cylindrical<N>,
        profile: &[Vector<D>],
    ) -> Result<f64> {
        let dt = self.w.grid.dt();
        let mut h = Vector::<D>::zeros();
        let mut drift = Vec::with_capacity(profile.len());
        for (j, v) in profile.iter().enumerate() {
            drift.push(self.m.ricci(self.fp.frame(j), &h) * 0.5);
            h += v * dt;
        }
        let xi = TangentProcess {
            rotation: self.curvature_rotation(profile),
            hdot: drift,
        };
        self.fd(f, &xi)
    }
}

/// `Σ_i ⟨∇_i f(w), h(s_i)⟩` for a cylindrical functional of the flat path.
pub fn flat_cylindrical_derivative<const D: usize>(
    f: &Cylindrical<D>,
    w: &DiscretePath<D>,
    profile: &[Vector<D>],
) -> f64 {
    let dt = w.grid.dt();
    let g = f.gradient(&f.gather(w));
    f.times
        .iter()
        .zip(&g)
        .map(|(&i, gi)| {
            let h: Vector<D> = profile[..i].iter().sum::<Vector<D>>() * dt;
            gi.dot(&h)
        })
        .sum()
}

/// `δ(u) = Σ_k [α_k ∫ḣ_k dw − D_{h_k} α_k]`.
pub fn skorohod_flat<const N: usize, const D: usize>(
    u: &StepProcess<N, D>,
    ctx: &PathContext<N, D>,
) -> Result<AnticipativeResult> {
    let mut ito = 0.0;
    let mut corr = 0.0;
    for t in &u.terms {
        ito += ctx.value(&t.coefficient) * ctx.ito(&t.profile);
        corr -= ctx.flat_derivative(&t.coefficient, &t.profile)?;
    }
    Ok(AnticipativeResult::new(vec![
        ("ito", ito),
        ("derivative", corr),
    ]))
}

/// `δ̃(u) = δ(u) + Trace(D·u) − Trace(D̃·u)`, traces taken on the finite-rank form.
pub fn tilde_delta_trace<const N: usize, const D: usize>(
    u: &StepProcess<N, D>,
    ctx: &PathContext<N, D>,
) -> Result<AnticipativeResult> {
    let mut ito = 0.0;
    let mut flat = 0.0;
    let mut damped = 0.0;
    for t in &u.terms {
        ito += ctx.value(&t.coefficient) * ctx.ito(&t.profile);
        flat += ctx.flat_derivative(&t.coefficient, &t.profile)?;
        damped += ctx.damped_derivative(&t.coefficient, &t.profile)?;
    }
    Ok(AnticipativeResult::new(vec![
        ("ito", ito),
        ("derivative", -flat),
        ("trace_flat", flat),
        ("trace_damped", -damped),
    ]))
}

/// `δ̃(u) = δ(u) + ½∫(D⁺+D⁻)·u − ½∫(D̃⁺+D̃⁻)·u` with one-step offsets.
pub fn tilde_delta_limits<const N: usize, const D: usize>(
    u: &StepProcess<N, D>,
    ctx: &PathContext<N, D>,
) -> Result<AnticipativeResult> {
    let delta = skorohod_flat(u, ctx)?;
    let mut flat = 0.0;
    let mut damped = 0.0;
    for t in &u.terms {
        for forward in [true, false] {
            let p = shifted(&t.profile, forward);
            flat += 0.5 * ctx.flat_derivative(&t.coefficient, &p)?;
            damped += 0.5 * ctx.damped_derivative(&t.coefficient, &p)?;
        }
    }
    Ok(AnticipativeResult::nested(
        vec![("delta", delta)],
        vec![("limits_flat", flat), ("limits_damped", -damped)],
    ))
}

/// How `δ^M` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// `Σ_k [α_k ∫ǔ_k dw − D^M_{h_k} α_k]` with `ǔ = ḣ + ½ ric h`.
    Direct,
    /// `δ̃(ǔ)`, the damped integral of the Ricci-lifted process.
    Volterra,
    /// `δ(α ǔ) + D^R_{γ_h} α` for rank-one `u = α ḣ`.
    Explicit,
}

pub fn delta_m<const N: usize, const D: usize>(
    u: &StepProcess<N, D>,
    ctx: &PathContext<N, D>,
    route: Route,
) -> Result<AnticipativeResult> {
    let lifted_profile = |p: &[Vector<D>]| -> Vec<Vector<D>> {
        let dt = ctx.w.grid.dt();
        let mut h = Vector::<D>::zeros();
        p.iter()
            .enumerate()
            .map(|(j, v)| {
                let out = v + ctx.m.ricci(ctx.fp.frame(j), &h) * 0.5;
                h += v * dt;
                out
            })
            .collect()
    };
    match route {
        Route::Direct => {
            let mut ito = 0.0;
            let mut corr = 0.0;
            for t in &u.terms {
                ito += ctx.value(&t.coefficient) * ctx.ito(&lifted_profile(&t.profile));
                corr -= ctx.manifold_derivative(&t.coefficient, &t.profile)?;
            }
            Ok(AnticipativeResult::new(vec![
                ("ito", ito),
                ("derivative", corr),
            ]))
        }
        Route::Volterra => {
            let ric = ctx.constant_ricci()?;
            Ok(AnticipativeResult::nested(
                vec![("tilde", tilde_delta_trace(&u.ricci_lift(ric), ctx)?)],
                vec![],
            ))
        }
        Route::Explicit => {
            if !u.is_rank_one() {
                return Err(Error::Unsupported(
                    "the rotational route takes a rank-one process".into(),
                ));
            }
            let t = &u.terms[0];
            let lifted = lifted_profile(&t.profile);
            let ito = ctx.value(&t.coefficient) * ctx.ito(&lifted);
            let flat = ctx.flat_derivative(&t.coefficient, &lifted)?;
            let rotation = match &t.coefficient {
                Coefficient::Manifold(f) => ctx.curvature_rotational_derivative(f, &t.profile)?,
                Coefficient::Constant(_) => 0.0,
                Coefficient::Flat(_) if ctx.m.kind() == Kind::Flat => 0.0,
                Coefficient::Flat(_) => {
                    return Err(Error::Unsupported(
                        "rotational route with a driving-path coefficient needs a flat space"
                            .into(),
                    ))
                }
            };
            Ok(AnticipativeResult::new(vec![
                ("ito", ito),
                ("derivative", -flat),
                ("rotation", rotation),
            ]))
        }
    }
}

/// Every way of evaluating an anticipative integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Flat,
    Trace,
    Limits,
    Direct,
    Volterra,
    Explicit,
}

impl Formula {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "flat" | "skorohod" => Self::Flat,
            "trace" => Self::Trace,
            "limits" => Self::Limits,
            "direct" => Self::Direct,
            "volterra" => Self::Volterra,
            "explicit" => Self::Explicit,
            other => return Err(Error::Config(format!("unknown formula '{other}'"))),
        })
    }

    pub fn evaluate<const N: usize, const D: usize>(
        self,
        u: &StepProcess<N, D>,
        ctx: &PathContext<N, D>,
    ) -> Result<AnticipativeResult> {
        match self {
            Self::Flat => skorohod_flat(u, ctx),
            Self::Trace => tilde_delta_trace(u, ctx),
            Self::Limits => tilde_delta_limits(u, ctx),
            Self::Direct => delta_m(u, ctx, Route::Direct),
            Self::Volterra => delta_m(u, ctx, Route::Volterra),
            Self::Explicit => delta_m(u, ctx, Route::Explicit),
        }
    }

    /// `⟨grad φ, u⟩` with the gradient this integral is adjoint to.
    pub fn pairing<const N: usize, const D: usize>(
        self,
        phi: &Cylindrical<N>,
        u: &StepProcess<N, D>,
        ctx: &PathContext<N, D>,
    ) -> Result<f64> {
        let dt = ctx.w.grid.dt();
        let mut total = 0.0;
        match self {
            Self::Flat => {
                for t in &u.terms {
                    let d = ctx.fd(phi, &TangentProcess::shift(t.profile.clone()))?;
                    total += ctx.value(&t.coefficient) * d;
                }
            }
            Self::Trace | Self::Limits => {
                let g = ctx.damped(phi);
                for t in &u.terms {
                    total += ctx.value(&t.coefficient) * pair(&g, &t.profile, dt);
                }
            }
            Self::Direct | Self::Volterra | Self::Explicit => {
                let g = gradient_dm(phi, &ctx.fp);
                for t in &u.terms {
                    total += ctx.value(&t.coefficient) * pair(&g, &t.profile, dt);
                }
            }
        }
        Ok(total)
    }
}

/// `E⟨grad φ, u⟩` against `E[φ · integral(u)]` for one test functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjointRow {
    pub formula: Formula,
    pub process: String,
    pub test: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub mean_integral: Estimate,
    pub tolerance: f64,
    pub pass: bool,
}

/// Monte Carlo check of the defining adjoint identity for one formula and process.
pub fn adjoint_check<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    formula: Formula,
    u: &StepProcess<N, D>,
    tests: &[Cylindrical<N>],
    batch: &Batch,
    slack: f64,
) -> Result<Vec<AdjointRow>> {
    let samples = par_try_map(batch.n_paths, 0.0, |p| {
        let ctx = PathContext::new(m, sample_brownian::<D>(batch.grid, batch.seed, p as u64))?;
        let integral = formula.evaluate(u, &ctx)?.value;
        let mut out = vec![(integral, 0.0, 0.0)];
        for phi in tests {
            out.push((ctx.eval(phi), formula.pairing(phi, u, &ctx)?, integral));
        }
        Ok(out)
    })?;
    let mean_integral = Estimate::from_samples(&samples.iter().map(|s| s[0].0).collect::<Vec<_>>());
    let cell = slack * batch.grid.dt().sqrt();
    Ok(tests
        .iter()
        .enumerate()
        .map(|(k, phi)| {
            let lhs =
                Estimate::from_samples(&samples.iter().map(|s| s[k + 1].1).collect::<Vec<_>>());
            let rhs = Estimate::from_samples(
                &samples
                    .iter()
                    .map(|s| s[k + 1].0 * s[k + 1].2)
                    .collect::<Vec<_>>(),
            );
            let tolerance = 3.0 * (lhs.se + rhs.se) + cell;
            AdjointRow {
                formula,
                process: u.name.clone(),
                test: phi.name.clone(),
                lhs,
                rhs,
                mean_integral,
                tolerance,
                pass: (lhs.mean - rhs.mean).abs() <= tolerance,
            }
        })
        .collect())
}

/// The three readings of the relation between `δ^M` and `δ̃` through the Ricci Volterra transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reading {
    /// `δ^M(u) = δ̃(u)`.
    Plain,
    /// `δ^M(u) = δ̃(ũ)` with `ũ + ½ ric ∫ũ = u`.
    VolterraSolved,
    /// `δ^M(u) = δ̃(ǔ)` with `ǔ = u + ½ ric ∫u`, i.e. `δ^M(ũ) = δ̃(u)`.
    VolterraApplied,
}

impl Reading {
    pub const ALL: [Reading; 3] = [
        Reading::Plain,
        Reading::VolterraSolved,
        Reading::VolterraApplied,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReadingRow {
    pub reading: Reading,
    pub test: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub tolerance: f64,
    pub pass: bool,
}

/// Tests each reading against `E⟨D^M φ, u⟩ = E[φ δ^M(u)]`.
pub fn arbitrate_readings<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    u: &StepProcess<N, D>,
    tests: &[Cylindrical<N>],
    batch: &Batch,
    slack: f64,
) -> Result<Vec<ReadingRow>> {
    let ric = m
        .constant_ricci()
        .ok_or_else(|| Error::Unsupported("arbitration needs constant Ricci curvature".into()))?;
    let variants = [u.clone(), u.volterra_solve(ric), u.ricci_lift(ric)];
    let samples = par_try_map(batch.n_paths, 0.0, |p| {
        let ctx = PathContext::new(m, sample_brownian::<D>(batch.grid, batch.seed, p as u64))?;
        let values: Vec<f64> = variants
            .iter()
            .map(|v| tilde_delta_trace(v, &ctx).map(|r| r.value))
            .collect::<Result<_>>()?;
        let mut rows = Vec::with_capacity(tests.len());
        for phi in tests {
            rows.push((ctx.eval(phi), Formula::Direct.pairing(phi, u, &ctx)?));
        }
        Ok((values, rows))
    })?;
    let cell = slack * batch.grid.dt().sqrt();
    let mut out = Vec::new();
    for (ri, reading) in Reading::ALL.iter().enumerate() {
        for (k, phi) in tests.iter().enumerate() {
            let lhs = Estimate::from_samples(&samples.iter().map(|s| s.1[k].1).collect::<Vec<_>>());
            let rhs = Estimate::from_samples(
                &samples
                    .iter()
                    .map(|s| s.1[k].0 * s.0[ri])
                    .collect::<Vec<_>>(),
            );
            let tolerance = 3.0 * (lhs.se + rhs.se) + cell;
            out.push(ReadingRow {
                reading: *reading,
                test: phi.name.clone(),
                lhs,
                rhs,
                tolerance,
                pass: (lhs.mean - rhs.mean).abs() <= tolerance,
            });
        }
    }
    Ok(out)
}

/// Flat one-dimensional test cases for the anticipative Itô formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItoCase {
    /// `φ(x) = x`, `u = w₁`.
    Identity,
    /// `φ(x) = x²`, adapted `u_s = w_s`.
    AdaptedSquare,
    /// `φ(x) = x²`, anticipating `u_s = w₁`, so that `X_t = w₁ w_t − t`.
    AnticipatingSquare,
}

impl ItoCase {
    pub const ALL: [ItoCase; 3] = [
        ItoCase::Identity,
        ItoCase::AdaptedSquare,
        ItoCase::AnticipatingSquare,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Self::Identity,
            "adapted-square" => Self::AdaptedSquare,
            "anticipating-square" => Self::AnticipatingSquare,
            other => return Err(Error::Config(format!("unknown Itô case '{other}'"))),
        })
    }

    fn phi(self, x: f64) -> (f64, f64, f64) {
        match self {
            Self::Identity => (x, 1.0, 0.0),
            _ => (x * x, 2.0 * x, 2.0),
        }
    }

    fn anticipating(self) -> bool {
        !matches!(self, Self::AdaptedSquare)
    }
}

/// Both sides of `φ(X_t) = φ(X₀) + ∫φ′(X)u δw + ½∫φ″(X)(D⁺X + D⁻X)u ds` on one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ItoSample {
    pub lhs: f64,
    pub skorohod: f64,
    pub correction: f64,
    /// `X_t` from the Stratonovich representation minus `X_t` from the step formula.
    pub stratonovich_gap: f64,
    /// `X_t` from the step formula minus the closed form, where one exists.
    pub closed_form_gap: f64,
}

impl ItoSample {
    pub fn discrepancy(&self) -> f64 {
        self.lhs - self.skorohod - self.correction
    }
}

/// Evaluates the Itô formula at `t = s_k` for a flat scalar Brownian path.
pub fn ito_sample(case: ItoCase, w: &DiscretePath<1>, k: usize) -> Result<ItoSample> {
    let n = w.n_steps();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "Itô formula time index {k} outside (0, {n}]"
        )));
    }
    let dt = w.grid.dt();
    let x = |j: usize| w.values[j][0];
    let w1 = x(n);
    let dw = |j: usize| w.increment(j)[0];
    // u_j, D_j u_j and the step-formula X_j with D_i X_j for i = j − 1, j, j + 1
    let u = |j: usize| if case.anticipating() { w1 } else { x(j) };
    let du_diag = |_: usize| if case.anticipating() { 1.0 } else { 0.0 };
    let mut xs = Vec::with_capacity(n + 1);
    let mut running = 0.0;
    for j in 0..=n {
        if case.anticipating() {
            xs.push(w1 * x(j) - w.grid.time(j));
        } else {
            xs.push(running);
            if j < n {
                running += x(j) * dw(j);
            }
        }
    }
    let big_x = |j: usize| xs[j];
    // D_i X_j on the interval i
    let dx = |i: usize, j: usize| -> f64 {
        if case.anticipating() {
            x(j) + if i < j { w1 } else { 0.0 }
        } else if i < j {
            x(i) + x(j) - x(i + 1)
        } else {
            0.0
        }
    };
    let (phi_t, _, _) = case.phi(big_x(k));
    let (phi_0, _, _) = case.phi(big_x(0));
    let mut skorohod = 0.0;
    let mut correction = 0.0;
    let mut strat = 0.0;
    for j in 0..k {
        let xj = big_x(j);
        let (_, d1, d2) = case.phi(xj);
        let v = d1 * u(j);
        let dv = d2 * dx(j, j) * u(j) + d1 * du_diag(j);
        skorohod += v * dw(j) - dv * dt;
        let plus = dx(j, j + 1);
        let minus = if j > 0 { dx(j, j - 1) } else { 0.0 };
        correction += 0.5 * d2 * (plus + minus) * u(j) * dt;
        // Stratonovich midpoint term and its one-sided-limit correction for u itself
        let u_mid = if case.anticipating() {
            w1
        } else {
            0.5 * (x(j) + x(j + 1))
        };
        let du_minus = if case.anticipating() { 1.0 } else { 0.0 };
        strat += u_mid * dw(j) - 0.5 * (1.0 + du_minus) * dt;
    }
    let xk = big_x(k);
    let closed_form_gap = match case {
        ItoCase::AdaptedSquare => xk - 0.5 * (x(k) * x(k) - w.grid.time(k)),
        _ => xk - (w1 * x(k) - w.grid.time(k)),
    };
    Ok(ItoSample {
        lhs: phi_t - phi_0,
        skorohod,
        correction,
        stratonovich_gap: strat - xk,
        closed_form_gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoRow {
    pub case: ItoCase,
    pub n_steps: usize,
    /// `(E|discrepancy|²)^{1/2}`.
    pub rms_discrepancy: f64,
    pub mean_discrepancy: Estimate,
    pub rms_stratonovich_gap: f64,
    pub rms_closed_form_gap: f64,
}

/// The Itô formula at `t = 1` over a batch.
pub fn ito_formula_check(case: ItoCase, batch: &Batch) -> Result<ItoRow> {
    let n = batch.grid.n_steps();
    let samples = par_try_map(batch.n_paths, 0.0, |p| {
        ito_sample(
            case,
            &sample_brownian::<1>(batch.grid, batch.seed, p as u64),
            n,
        )
    })?;
    let rms = |f: &dyn Fn(&ItoSample) -> f64| {
        (samples.iter().map(|s| f(s).powi(2)).sum::<f64>() / samples.len() as f64).sqrt()
    };
    Ok(ItoRow {
        case,
        n_steps: n,
        rms_discrepancy: rms(&|s| s.discrepancy()),
        mean_discrepancy: Estimate::from_samples(
            &samples.iter().map(|s| s.discrepancy()).collect::<Vec<_>>(),
        ),
        rms_stratonovich_gap: rms(&|s| s.stratonovich_gap),
        rms_closed_form_gap: rms(&|s| s.closed_form_gap),
    })
}

/// `‖u‖` with `‖u‖² = E∫|u|² + E∫∫|D_s u_t|²` and the L¹ norm of `δ^M(u)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormSample {
    pub process: String,
    pub l1_delta: Estimate,
    pub norm: f64,
}

impl NormSample {
    /// The smallest `C ≥ 0` for which `E|δ^M u| ≤ ‖u‖ + C·κ(‖u‖ + ‖u‖²)` holds at the upper 3·SE limit.
    pub fn required_constant(&self, curvature: f64) -> f64 {
        if curvature == 0.0 {
            return 0.0;
        }
        let upper = self.l1_delta.mean + 3.0 * self.l1_delta.se;
        ((upper - self.norm) / (curvature * (self.norm + self.norm * self.norm))).max(0.0)
    }

    pub fn bound(&self, curvature: f64, c: f64) -> f64 {
        self.norm + c * curvature * (self.norm + self.norm * self.norm)
    }
}

/// Per-path `(|δ^M u|, α², |∫ D α · noise|²)` together with `∫|ḣ|²`.
struct NormDraws {
    process: String,
    profile_energy: f64,
    draws: Vec<(f64, f64, f64)>,
}

impl NormDraws {
    fn summary(&self, n_paths: usize) -> NormSample {
        let draws = &self.draws[..n_paths.min(self.draws.len())];
        let k = draws.len() as f64;
        let e_alpha2 = draws.iter().map(|s| s.1).sum::<f64>() / k;
        let e_grad2 = draws.iter().map(|s| s.2).sum::<f64>() / k;
        NormSample {
            process: self.process.clone(),
            l1_delta: Estimate::from_samples(&draws.iter().map(|s| s.0).collect::<Vec<_>>()),
            norm: (self.profile_energy * (e_alpha2 + e_grad2)).sqrt(),
        }
    }
}

fn norm_draws<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    u: &StepProcess<N, D>,
    batch: &Batch,
) -> Result<NormDraws> {
    if !u.is_rank_one() {
        return Err(Error::Unsupported(
            "the L¹ check takes rank-one processes".into(),
        ));
    }
    let t = &u.terms[0];
    let dt = batch.grid.dt();
    let profile_energy: f64 = t.profile.iter().map(|v| v.norm_squared()).sum::<f64>() * dt;
    let draws = par_try_map(batch.n_paths, 0.0, |p| {
        let ctx = PathContext::new(m, sample_brownian::<D>(batch.grid, batch.seed, p as u64))?;
        let delta = delta_m(u, &ctx, Route::Direct)?.value;
        let alpha = ctx.value(&t.coefficient);
        let grad_sq = match &t.coefficient {
            Coefficient::Constant(_) => 0.0,
            c => {
                let mut rng = path_rng(batch.seed, 3, p as u64);
                let noise: Vec<Vector<D>> = (0..batch.grid.n_steps())
                    .map(|_| crate::wiener::standard_normal_vector::<D>(&mut rng) / dt.sqrt())
                    .collect();
                ctx.flat_derivative(c, &noise)?.powi(2)
            }
        };
        Ok((delta.abs(), alpha * alpha, grad_sq))
    })?;
    Ok(NormDraws {
        process: u.name.clone(),
        profile_energy,
        draws,
    })
}

/// Estimates both sides of the L¹ bound for a rank-one process `α ḣ`.
///
/// `∫|D_s α|² ds` is estimated without bias from one derivative along white-noise
/// directions `ḣ_j = Z_j / √Δs` drawn from a separate stream.
pub fn l1_norms<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    u: &StepProcess<N, D>,
    batch: &Batch,
) -> Result<NormSample> {
    Ok(norm_draws(m, u, batch)?.summary(batch.n_paths))
}

/// The unit-energy scalar profile maximizing `‖ḣ + ½ ric h‖ / ‖ḣ‖` on the grid, by power iteration.
pub fn resonant_profile(grid: TimeGrid, ric: f64) -> Vec<f64> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        v.iter()
            .map(|x| {
                let out = x + 0.5 * ric * acc;
                acc += x * dt;
                out
            })
            .collect()
    };
    let adjoint = |v: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0; n];
        for j in (0..n).rev() {
            out[j] = v[j] + 0.5 * ric * dt * acc;
            acc += v[j];
        }
        out
    };
    let normalize = |v: &mut Vec<f64>| {
        let e = (v.iter().map(|x| x * x).sum::<f64>() * dt).sqrt();
        v.iter_mut().for_each(|x| *x /= e);
    };
    let mut v = vec![1.0; n];
    normalize(&mut v);
    for _ in 0..200 {
        v = adjoint(&apply(&v));
        normalize(&mut v);
    }
    v
}

/// Largest relative change of the fitted constant allowed between half and full batches.
pub const L1_STABILITY: f64 = 0.2;

/// Fitted constant of the L¹ bound, its stability under doubling the batch, and held-out verification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct L1Report {
    pub curvature: f64,
    /// Fitted on the first half of the batch.
    pub half_constant: f64,
    /// Fitted on the full batch.
    pub fitted_constant: f64,
    pub fit: Vec<NormSample>,
    pub holdout: Vec<NormSample>,
    /// Held-out processes satisfying `E|δ^M u| ≤ bound` with the full-batch constant.
    pub holdout_pass: Vec<bool>,
}

impl L1Report {
    pub fn relative_change(&self) -> f64 {
        if self.fitted_constant == self.half_constant {
            return 0.0;
        }
        (self.fitted_constant - self.half_constant).abs()
            / self.half_constant.abs().max(f64::MIN_POSITIVE)
    }

    pub fn stable(&self) -> bool {
        self.fitted_constant.is_finite()
            && self.half_constant.is_finite()
            && self.relative_change() <= L1_STABILITY
    }

    pub fn pass(&self) -> bool {
        self.stable() && self.holdout_pass.iter().all(|&p| p)
    }
}

/// Fits the constant on `fit` at `n_paths/2` and `n_paths` (the first half shared), then checks `holdout`.
pub fn l1_bound_check<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    fit: &[StepProcess<N, D>],
    holdout: &[StepProcess<N, D>],
    batch: &Batch,
) -> Result<L1Report> {
    let curvature = m.curvature_bound();
    let draws: Vec<NormDraws> = fit
        .iter()
        .map(|u| norm_draws(m, u, batch))
        .collect::<Result<_>>()?;
    let constant = |k: usize| {
        draws
            .iter()
            .map(|d| d.summary(k).required_constant(curvature))
            .fold(0.0, f64::max)
    };
    let half_constant = constant(batch.n_paths / 2);
    let fitted_constant = constant(batch.n_paths);
    let fit = draws.iter().map(|d| d.summary(batch.n_paths)).collect();
    let holdout: Vec<NormSample> = holdout
        .iter()
        .map(|u| l1_norms(m, u, batch))
        .collect::<Result<_>>()?;
    let holdout_pass = holdout
        .iter()
        .map(|s| s.l1_delta.mean <= s.bound(curvature, fitted_constant))
        .collect();
    Ok(L1Report {
        curvature,
        half_constant,
        fitted_constant,
        fit,
        holdout,
        holdout_pass,
    })
}

/// The fitting and held-out process families used by the L¹ check.
pub fn l1_batteries<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    grid: TimeGrid,
) -> Result<(Vec<StepProcess<N, D>>, Vec<StepProcess<N, D>>)> {
    let n = grid.n_steps();
    let ric = m.constant_ricci().unwrap_or(0.0);
    let axis = |v: &[f64]| -> Vec<Vector<D>> {
        v.iter()
            .map(|x| {
                let mut e = Vector::<D>::zeros();
                e[0] = *x;
                e
            })
            .collect()
    };
    let resonant = axis(&resonant_profile(grid, ric));
    let linear = axis(&vec![1.0; n]);
    let decay = axis(
        &(0..n)
            .map(|j| 3f64.sqrt() * (1.0 - grid.time(j)))
            .collect::<Vec<_>>(),
    );
    let sinusoid =
        crate::wiener::make_cm_shift::<D>(crate::wiener::ShiftRecipe::Sinusoid, grid, 1.0, None)?
            .hdot;
    let f = |s: &str| -> Result<Coefficient<N, D>> {
        Ok(Coefficient::Manifold(Cylindrical::<N>::named(s, grid)?))
    };
    let one = Coefficient::Constant(1.0);
    let mk = |name: &str, c: Coefficient<N, D>, p: &Vec<Vector<D>>| {
        StepProcess::rank_one(name, grid, c, p.clone())
    };
    let base_resonant = mk("resonant", one.clone(), &resonant)?;
    let fit = vec![
        base_resonant.clone(),
        base_resonant.scaled(0.5),
        base_resonant.scaled(2.0),
        mk("linear", one.clone(), &linear)?,
        mk("sinusoid", one.clone(), &sinusoid)?,
        mk("z1*linear", f("z1")?, &linear)?,
        mk("gauss1*linear", f("gauss1")?, &linear)?,
        mk("cos*sinusoid", f("cos")?, &sinusoid)?,
        mk("xz*decay", f("xz")?, &decay)?,
        mk("z1*resonant", f("z1")?, &resonant)?,
    ];
    let holdout = vec![
        base_resonant.scaled(0.75),
        mk("linear", one.clone(), &linear)?.scaled(1.5),
        mk("decay", one, &decay)?.scaled(3.0),
        mk("gauss1*resonant", f("gauss1")?, &resonant)?,
        mk("z1*sinusoid", f("z1")?, &sinusoid)?,
        mk("cos*linear", f("cos")?, &linear)?,
    ];
    Ok((fit, holdout))
}
