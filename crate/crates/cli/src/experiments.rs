//! Experiment runners. Each appends rows to the report as it goes, so a solver failure
//! part-way through still leaves the finished checks behind.

use pathflow_core::driverflow::{
    quasi_invariance_report, solve_flow_picard, solve_flow_pullback, SolverConfig,
};
use pathflow_core::functional::Cylindrical;
use pathflow_core::geometry::{Kind, Manifold, ManifoldSpec};
use pathflow_core::lift::{develop, roll};
use pathflow_core::linalg::Vector;
use pathflow_core::malliavin::{ibp_check, intertwining_check, IbpKind};
use pathflow_core::montecarlo::{par_try_map, Batch};
use pathflow_core::skorohod::{
    adjoint_check, arbitrate_readings, ito_formula_check, l1_batteries, l1_bound_check,
    tilde_delta_limits, tilde_delta_trace, Coefficient, Formula, ItoCase, PathContext, Reading,
    StepProcess,
};
use pathflow_core::stats::loglog_fit;
use pathflow_core::wiener::{make_cm_shift, sample_brownian, DiscretePath, ShiftRecipe, TimeGrid};
use pathflow_core::{Error, Result};

use crate::config::{Experiment, ExperimentConfig};
use crate::report::{Report, Row, Table};

const TANGENT_PROCESSES: [&str; 3] = ["shift", "rotation", "mixed"];
const IBP_SHIFTS: [ShiftRecipe; 3] = [
    ShiftRecipe::Linear,
    ShiftRecipe::Sinusoid,
    ShiftRecipe::Ramp,
];

/// Runs `$body` with `$m` bound to the manifold described by `$spec`.
macro_rules! with_manifold {
    ($spec:expr, $m:ident => $body:expr) => {{
        let spec: ManifoldSpec = $spec;
        match (spec.kind, spec.dim) {
            (Kind::Flat, 1) => {
                let $m = Manifold::<1, 1>::from_spec(&spec)?;
                $body
            }
            (Kind::Flat, 2) => {
                let $m = Manifold::<2, 2>::from_spec(&spec)?;
                $body
            }
            (Kind::Flat, 3) => {
                let $m = Manifold::<3, 3>::from_spec(&spec)?;
                $body
            }
            (Kind::Sphere, 1) => {
                let $m = Manifold::<2, 1>::from_spec(&spec)?;
                $body
            }
            (Kind::Sphere, 2) => {
                let $m = Manifold::<3, 2>::from_spec(&spec)?;
                $body
            }
            (Kind::Sphere, 3) => {
                let $m = Manifold::<4, 3>::from_spec(&spec)?;
                $body
            }
            (_, d) => Err(Error::Config(format!(
                "dimension {d} is not supported (use 1, 2 or 3)"
            ))),
        }
    }};
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    if experiment == Experiment::Ito {
        return ito(cfg, report);
    }
    with_manifold!(cfg.manifold_spec()?, m => match experiment {
        Experiment::Simulate => simulate(&m, cfg, report),
        Experiment::Flow => flow(&m, cfg, report),
        Experiment::Qi => qi(&m, cfg, report),
        Experiment::Ibp => ibp(&m, cfg, report),
        Experiment::Intertwine => intertwine(&m, cfg, report),
        Experiment::Skorohod => skorohod(&m, cfg, report),
        Experiment::L1bound => l1bound(&m, cfg, report),
        Experiment::Convergence => convergence(&m, cfg, report),
        Experiment::Ito => unreachable!("handled above"),
    })
}

fn grid(n: usize) -> Result<TimeGrid> {
    TimeGrid::new(n)
}

fn batch(cfg: &ExperimentConfig) -> Result<Batch> {
    Ok(Batch {
        grid: grid(cfg.steps)?,
        n_paths: cfg.paths,
        seed: cfg.seed,
    })
}

fn num(x: f64) -> String {
    x.to_string()
}

fn simulate<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let g = grid(cfg.steps)?;
    let rows = par_try_map(cfg.paths, 0.0, |p| {
        let w = sample_brownian::<D>(g, cfg.seed, p as u64);
        let fp = roll(m, &w, &m.base_frame())?;
        Ok((
            *fp.base_path().last(),
            fp.max_orthonormality_defect(),
            develop(&fp).sup_distance(&w),
        ))
    })?;
    let mut columns = vec!["path".to_string()];
    columns.extend((1..=N).map(|k| format!("x{k}")));
    columns.extend(["orthonormality_defect".into(), "round_trip_error".into()]);
    let mut table = Table {
        columns,
        rows: Vec::new(),
    };
    for (p, (end, defect, round_trip)) in rows.iter().enumerate() {
        let mut r = vec![p.to_string()];
        r.extend(end.iter().map(|v| num(*v)));
        r.extend([num(*defect), num(*round_trip)]);
        table.push(r);
    }
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    report.push(Row::at_most(
        "simulate/orthonormality",
        worst,
        cfg.tolerances.orthonormality,
    ));
    report.table = Some(table);
    Ok(())
}

fn shift_recipe(cfg: &ExperimentConfig) -> Result<ShiftRecipe> {
    ShiftRecipe::parse(&cfg.shift)
}

fn flow<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let g = grid(cfg.steps)?;
    let recipe = shift_recipe(cfg)?;
    let solver = SolverConfig::default();
    let rows = par_try_map(cfg.paths, 0.0, |p| {
        let w = sample_brownian::<D>(g, cfg.seed, p as u64);
        let h = make_cm_shift::<D>(recipe, g, cfg.bound, Some(&w))?;
        let a = solve_flow_picard(m, &w, &h, cfg.t, &solver)?;
        let b = solve_flow_pullback(m, &w, &h, cfg.t, &solver)?;
        let iterations = a
            .diagnostics
            .picard_iterations
            .iter()
            .copied()
            .max()
            .unwrap_or(0);
        let rotation = b
            .drift
            .as_ref()
            .map_or(0.0, |d| d.max_orthogonality_defect());
        Ok((
            a.sigma.base_path().sup_distance(&b.sigma.base_path()),
            iterations,
            rotation,
        ))
    })?;
    let mut table = Table::new(&["path", "sup_gap", "picard_iterations", "rotation_defect"]);
    for (p, r) in rows.iter().enumerate() {
        table.push(vec![p.to_string(), num(r.0), r.1.to_string(), num(r.2)]);
    }
    let mean_gap = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let limit = cfg.tolerances.cross_method * (g.dt().sqrt() + 1.0 / solver.t_steps as f64);
    report.push(Row::at_most(
        "flow/picard-vs-pullback mean sup gap",
        mean_gap,
        limit,
    ));
    let rotation = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    report.push(Row::at_most(
        "flow/rotation defect",
        rotation,
        cfg.tolerances.rotation,
    ));
    report.table = Some(table);
    Ok(())
}

fn qi<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let b = batch(cfg)?;
    let battery = Cylindrical::<N>::battery(b.grid)?;
    let r = quasi_invariance_report(
        m,
        &battery,
        shift_recipe(cfg)?,
        cfg.bound,
        cfg.t,
        &b,
        &SolverConfig::default(),
        cfg.tolerances.qi_slack,
    )?;
    for row in &r.rows {
        report.push(Row::compare(
            format!("qi/{}", row.functional),
            row.direct.mean,
            row.reweighted.mean,
            row.direct.se + row.reweighted.se,
            row.tolerance,
        ));
    }
    report.push(Row::at_most(
        "qi/rotation defect",
        r.max_rotation_defect,
        cfg.tolerances.rotation,
    ));
    if r.failed_paths > 0 {
        report
            .notes
            .push(format!("{} paths failed and were dropped", r.failed_paths));
    }
    Ok(())
}

fn ibp<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let b = batch(cfg)?;
    let battery = Cylindrical::<N>::battery(b.grid)?;
    let kinds = match cfg.formula.as_deref() {
        None | Some("both") => vec![IbpKind::Bismut, IbpKind::Damped],
        Some(k) => vec![IbpKind::parse(k)?],
    };
    for kind in kinds {
        for row in ibp_check(m, kind, &battery, &IBP_SHIFTS, &b, cfg.tolerances.ibp_slack)? {
            report.push(Row::compare(
                format!("ibp/{kind:?}/{}/{}", row.functional, row.shift).to_lowercase(),
                row.lhs.mean,
                row.rhs.mean,
                row.lhs.se + row.rhs.se,
                row.tolerance,
            ));
        }
    }
    Ok(())
}

fn intertwine<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let b = batch(cfg)?;
    let battery = Cylindrical::<N>::battery(b.grid)?;
    let processes: Vec<&str> = match cfg.process.as_deref() {
        None | Some("all") => TANGENT_PROCESSES.to_vec(),
        Some(p) => vec![p],
    };
    for process in processes {
        for f in &battery {
            let r = intertwining_check(
                m,
                f,
                process,
                &b,
                cfg.tolerances.fd_eps,
                cfg.tolerances.intertwining_slack,
            )?;
            report.push(Row::at_most(
                format!("intertwine/{process}/{}", f.name),
                r.relative_error,
                r.tolerance,
            ));
        }
    }
    Ok(())
}

/// `step1`: `z(p₁)·1_{[1/4, 3/4)} e₁`; `rankone`: `(x_{1/2} z₁)·ḣ` with the sinusoid `ḣ`.
fn step_process<const N: usize, const D: usize>(
    name: &str,
    g: TimeGrid,
) -> Result<StepProcess<N, D>> {
    let n = g.n_steps();
    match name {
        "step1" => StepProcess::indicator(
            "step1",
            g,
            Coefficient::Manifold(Cylindrical::named("z1", g)?),
            n / 4,
            3 * n / 4,
            0,
        ),
        "rankone" => StepProcess::rank_one(
            "rankone",
            g,
            Coefficient::Manifold(Cylindrical::named("xz", g)?),
            make_cm_shift::<D>(ShiftRecipe::Sinusoid, g, 1.0, None)?.hdot,
        ),
        // a constant profile makes the readings of the damped integral far apart
        "constant" => StepProcess::rank_one(
            "constant",
            g,
            Coefficient::Manifold(Cylindrical::named("z1", g)?),
            make_cm_shift::<D>(ShiftRecipe::Linear, g, 1.0, None)?.hdot,
        ),
        other => Err(Error::Config(format!(
            "unknown process '{other}' (use step1, rankone or constant)"
        ))),
    }
}

fn skorohod<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let b = batch(cfg)?;
    let formula = Formula::parse(cfg.formula.as_deref().unwrap_or("trace"))?;
    let u = step_process::<N, D>(cfg.process.as_deref().unwrap_or("rankone"), b.grid)?;
    let tests = Cylindrical::<N>::battery(b.grid)?;
    let rows = adjoint_check(m, formula, &u, &tests, &b, cfg.tolerances.adjoint_slack)?;
    for row in &rows {
        report.push(Row::compare(
            format!("skorohod/{formula:?}/{}/{}", u.name, row.test).to_lowercase(),
            row.lhs.mean,
            row.rhs.mean,
            row.lhs.se + row.rhs.se,
            row.tolerance,
        ));
    }
    let mean = rows[0].mean_integral;
    report.push(Row::compare(
        format!("skorohod/{formula:?}/{}/mean", u.name).to_lowercase(),
        mean.mean,
        0.0,
        mean.se,
        3.0 * mean.se,
    ));
    if formula == Formula::Volterra && m.constant_ricci().is_some_and(|r| r > 0.0) {
        let readings = arbitrate_readings(m, &u, &tests, &b, cfg.tolerances.adjoint_slack)?;
        let mut table = Table::new(&["reading", "test", "lhs", "rhs", "tolerance", "pass"]);
        for r in &readings {
            table.push(vec![
                format!("{:?}", r.reading),
                r.test.clone(),
                num(r.lhs.mean),
                num(r.rhs.mean),
                num(r.tolerance),
                r.pass.to_string(),
            ]);
        }
        let passing: Vec<Reading> = Reading::ALL
            .into_iter()
            .filter(|&k| readings.iter().filter(|r| r.reading == k).all(|r| r.pass))
            .collect();
        report
            .notes
            .push(format!("readings passing the adjoint test: {passing:?}"));
        report.push(Row::compare(
            "skorohod/arbitration/passing readings",
            passing.len() as f64,
            1.0,
            0.0,
            0.0,
        ));
        report.table = Some(table);
    }
    Ok(())
}

fn ito(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let b = batch(cfg)?;
    let limit = cfg.tolerances.ito_slack * b.grid.dt().sqrt();
    let mut table = Table::new(&[
        "case",
        "n_steps",
        "rms_discrepancy",
        "mean_discrepancy",
        "se",
        "rms_closed_form_gap",
    ]);
    for case in ItoCase::ALL {
        let r = ito_formula_check(case, &b)?;
        let name = format!("ito/{case:?}").to_lowercase();
        let bound = if case == ItoCase::Identity {
            cfg.tolerances.exact
        } else {
            limit
        };
        report.push(Row::at_most(
            format!("{name}/rms discrepancy"),
            r.rms_discrepancy,
            bound,
        ));
        if case != ItoCase::Identity {
            report.push(Row::at_most(
                format!("{name}/closed form"),
                r.rms_closed_form_gap,
                limit,
            ));
        }
        table.push(vec![
            name,
            r.n_steps.to_string(),
            num(r.rms_discrepancy),
            num(r.mean_discrepancy.mean),
            num(r.mean_discrepancy.se),
            num(r.rms_closed_form_gap),
        ]);
    }
    report.table = Some(table);
    Ok(())
}

fn l1bound<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let b = batch(cfg)?;
    let (fit, holdout) = l1_batteries(m, b.grid)?;
    let r = l1_bound_check(m, &fit, &holdout, &b)?;
    let mut table = Table::new(&[
        "set",
        "process",
        "l1_delta",
        "se",
        "norm",
        "required_constant",
    ]);
    for (set, samples) in [("fit", &r.fit), ("holdout", &r.holdout)] {
        for s in samples {
            table.push(vec![
                set.into(),
                s.process.clone(),
                num(s.l1_delta.mean),
                num(s.l1_delta.se),
                num(s.norm),
                num(s.required_constant(r.curvature)),
            ]);
        }
    }
    report.notes.push(format!(
        "fitted constant {} (half batch {})",
        r.fitted_constant, r.half_constant
    ));
    report.push(Row::at_most(
        "l1bound/constant change under doubling",
        r.relative_change(),
        cfg.tolerances.l1_stability,
    ));
    for s in &r.holdout {
        report.push(Row::at_most(
            format!("l1bound/holdout/{}", s.process),
            s.l1_delta.mean,
            s.bound(r.curvature, r.fitted_constant),
        ));
    }
    report.table = Some(table);
    Ok(())
}

fn convergence<const N: usize, const D: usize>(
    m: &Manifold<N, D>,
    cfg: &ExperimentConfig,
    report: &mut Report,
) -> Result<()> {
    let mut grids = cfg.grids.clone();
    grids.sort_unstable();
    grids.dedup();
    if grids.len() < 3 {
        return Err(Error::Config(
            "a convergence study needs at least three grid sizes".into(),
        ));
    }
    let finest = *grids.last().expect("nonempty");
    if grids.iter().any(|n| finest % n != 0) {
        return Err(Error::Config(
            "grid sizes must divide the finest grid".into(),
        ));
    }
    let paths = cfg.paths;
    let driver = |p: usize, n: usize| -> Result<DiscretePath<D>> {
        let fine = sample_brownian::<D>(grid(finest)?, cfg.seed, p as u64).increments();
        let incs: Vec<Vector<D>> = fine.chunks(finest / n).map(|c| c.iter().sum()).collect();
        DiscretePath::from_increments(grid(n)?, Vector::zeros(), &incs)
    };
    let errors: Vec<f64> = match cfg.study.as_str() {
        "roundtrip" => grids
            .iter()
            .map(|&n| {
                let e = par_try_map(paths, 0.0, |p| {
                    let w = driver(p, n)?;
                    Ok(develop(&roll(m, &w, &m.base_frame())?).sup_distance(&w))
                })?;
                Ok(e.iter().sum::<f64>() / paths as f64)
            })
            .collect::<Result<_>>()?,
        "tracelimits" => grids
            .iter()
            .map(|&n| {
                let g = grid(n)?;
                let u = StepProcess::<N, D>::rank_one(
                    "xz*linear",
                    g,
                    Coefficient::Manifold(Cylindrical::named("xz", g)?),
                    make_cm_shift::<D>(ShiftRecipe::Linear, g, 1.0, None)?.hdot,
                )?;
                let e = par_try_map(paths, 0.0, |p| {
                    let ctx = PathContext::new(m, driver(p, n)?)?;
                    Ok(
                        (tilde_delta_trace(&u, &ctx)?.value - tilde_delta_limits(&u, &ctx)?.value)
                            .abs(),
                    )
                })?;
                Ok(e.iter().sum::<f64>() / paths as f64)
            })
            .collect::<Result<_>>()?,
        "flatflow" => {
            if m.kind() != Kind::Flat {
                return Err(Error::Config(
                    "the flatflow study needs a flat manifold".into(),
                ));
            }
            grids
                .iter()
                .map(|&n| {
                    let g = grid(n)?;
                    let h = make_cm_shift::<D>(ShiftRecipe::Sinusoid, g, cfg.bound, None)?;
                    let hp = h.path();
                    let e = par_try_map(paths, 0.0, |p| {
                        let w = driver(p, n)?;
                        let want: Vec<Vector<D>> = w
                            .values
                            .iter()
                            .zip(&hp.values)
                            .map(|(a, b)| a + b * cfg.t)
                            .collect();
                        let sigma =
                            solve_flow_picard(m, &w, &h, cfg.t, &SolverConfig::default())?.sigma;
                        let got = sigma.base_path();
                        Ok((0..=n)
                            .map(|k| (got.values[k].fixed_rows::<D>(0) - want[k]).norm())
                            .fold(0.0, f64::max))
                    })?;
                    Ok(e.into_iter().fold(0.0, f64::max))
                })
                .collect::<Result<_>>()?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown study '{other}' (roundtrip, tracelimits, flatflow)"
            )))
        }
    };
    let mut table = Table::new(&["n_steps", "error"]);
    for (n, e) in grids.iter().zip(&errors) {
        table.push(vec![n.to_string(), num(*e)]);
    }
    report.table = Some(table);
    let name = format!("convergence/{}", cfg.study);
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let ds: Vec<f64> = grids.iter().map(|&n| 1.0 / n as f64).collect();
    match loglog_fit(&ds, &errors) {
        Some(fit) if worst > cfg.tolerances.exact => {
            report
                .notes
                .push(format!("fitted order {:.4} (r² {:.4})", fit.slope, fit.r2));
            match cfg.study.as_str() {
                "tracelimits" => report.push(Row::compare(
                    format!("{name}/order"),
                    fit.slope,
                    1.0,
                    0.0,
                    cfg.tolerances.trace_limits_order,
                )),
                "roundtrip" => report.push(Row::at_least(
                    format!("{name}/order"),
                    fit.slope,
                    cfg.tolerances.round_trip_slope,
                )),
                _ => report.push(Row::at_most(
                    format!("{name}/error"),
                    worst,
                    cfg.tolerances.exact,
                )),
            }
        }
        _ => {
            report
                .notes
                .push("exact: errors vanish at every grid".into());
            report.push(Row::at_most(
                format!("{name}/exact"),
                worst,
                cfg.tolerances.exact,
            ));
        }
    }
    Ok(())
}
