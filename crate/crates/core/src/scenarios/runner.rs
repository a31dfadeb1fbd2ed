//! Executes scenarios: static checks, simulation and expectation scoring.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::omodels::verify_optimality_model;
use crate::optprob::oracle_optimal_output;
use crate::plant::build_augmented_qp;
use crate::simulate::{
    assemble, convergence_metrics, equilibrium_solve, integrate_rk4, write_csv, ConvergenceMetrics, IntegrationOptions,
};
use crate::stabilize::{
    closed_loop_matrix, om_conditions, pbh_detectable_info, plant_conditions, sorted_spectrum, spectrum_over_samples,
    ConditionReport, SampleSpectrum, PBH_TOL,
};
use crate::subspaces::{robustness_report, RobustnessReport};

use super::{LoopSetup, Run, Scenario};

/// Error below which a trajectory counts as settled.
pub const SETTLE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn expectation(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> ExpectationResult {
    ExpectationResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentedSummary {
    pub stabilizable: bool,
    pub detectable: bool,
    pub min_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub scenario: String,
    pub variant: Option<String>,
    pub robustness: RobustnessReport,
    pub plant_conditions: Option<ConditionReport>,
    pub om_conditions: Option<ConditionReport>,
    /// Why a condition report is missing.
    pub notes: Vec<String>,
    pub augmented: Option<AugmentedSummary>,
    /// Nominal closed-loop eigenvalues as `[re, im]`.
    pub spectrum: Vec<[f64; 2]>,
    pub samples: Vec<SampleSpectrum>,
    pub expectations: Vec<ExpectationResult>,
    pub passed: bool,
}

/// Static analysis of the scenario's base loop. Nothing is simulated.
pub fn check_scenario(s: &Scenario) -> Result<CheckReport> {
    let up = &s.plant;
    let LoopSetup { om, stabilizer, .. } = &s.base;
    let prog = &om.program;
    let pm = up.nominal()?;
    let robustness = robustness_report(up, &prog.h)?;
    let mut notes = Vec::new();
    let plant_rep = match plant_conditions(&pm) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("plant conditions: {e}"));
            None
        }
    };
    let mut om_rep = None;
    let mut augmented = None;
    let mut spectrum = Vec::new();
    let mut samples = Vec::new();
    match prog.as_qp() {
        Some(qp) => {
            match om_conditions(om.variant, &pm, qp, &prog.h, &prog.l, &om.basis) {
                Ok(r) => om_rep = Some(r),
                Err(e) => notes.push(format!("{} conditions: {e}", om.variant)),
            }
            let aug = build_augmented_qp(&pm, qp, &prog.h, &prog.l, om.variant, &om.basis)?;
            let stab = crate::stabilize::pbh_stabilizable_info(&aug.a, &aug.b, PBH_TOL)?;
            let det = pbh_detectable_info(&aug.c, &aug.a, PBH_TOL)?;
            augmented = Some(AugmentedSummary {
                stabilizable: stab.holds,
                detectable: det.holds,
                min_gap: stab.min_gap.min(det.min_gap),
            });
            let (_, eig) = closed_loop_matrix(&aug, stabilizer)?;
            spectrum = sorted_spectrum(eig).iter().map(|l| [l.re, l.im]).collect();
            samples = spectrum_over_samples(up, qp, &prog.h, &prog.l, om.variant, &om.basis, stabilizer)?;
        }
        None => notes.push("objective is not quadratic or has inequalities; linear analysis skipped".into()),
    }

    let e = &s.expect;
    let mut exp = Vec::new();
    let mut flag = |name: &str, want: Option<bool>, got: Option<bool>| {
        if let Some(want) = want {
            let passed = got == Some(want);
            exp.push(expectation(
                name,
                passed,
                format!("expected {want}, got {}", fmt_opt(got)),
            ));
        }
    };
    flag("ros", e.ros, Some(robustness.ros));
    flag("rfs", e.rfs, Some(robustness.rfs));
    flag(
        "robust_full_rank",
        e.robust_full_rank,
        Some(robustness.robust_full_rank),
    );
    flag(
        "plant_conditions",
        e.plant_conditions,
        plant_rep.as_ref().map(|r| r.overall),
    );
    flag("om_conditions", e.om_conditions, om_rep.as_ref().map(|r| r.overall));
    flag(
        "augmented_stabilizable",
        e.augmented_stabilizable,
        augmented.as_ref().map(|a| a.stabilizable),
    );
    let hurwitz = (!samples.is_empty()).then(|| samples.iter().all(|x| x.hurwitz));
    flag("hurwitz", e.hurwitz, hurwitz);
    if let Some(sp) = &e.spectrum {
        let mut want: Vec<[f64; 2]> = sp.values.clone();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let err = if want.len() == spectrum.len() {
            want.iter()
                .zip(&spectrum)
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        exp.push(expectation(
            "spectrum",
            err <= sp.tol,
            format!("max eigenvalue error {err:.3e} (tol {:.1e})", sp.tol),
        ));
    }
    let passed = exp.iter().all(|x| x.passed);
    Ok(CheckReport {
        scenario: s.name.clone(),
        variant: s.variant.clone(),
        robustness,
        plant_conditions: plant_rep,
        om_conditions: om_rep,
        notes,
        augmented,
        spectrum,
        samples,
        expectations: exp,
        passed,
    })
}

fn fmt_opt(v: Option<bool>) -> String {
    match v {
        Some(b) => b.to_string(),
        None => "n/a".into(),
    }
}

/// Overrides applied to every run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSummary {
    pub residual: f64,
    pub y: Vec<f64>,
    /// `‖ȳ − y*‖`
    pub gap: f64,
    pub optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub label: String,
    pub delta: Vec<f64>,
    pub y_star: Vec<f64>,
    pub oracle_cost: f64,
    pub final_y: Vec<f64>,
    pub final_cost: f64,
    pub metrics: ConvergenceMetrics,
    pub equilibrium: Option<EquilibriumSummary>,
    pub notes: Vec<String>,
    pub diverged: bool,
    pub expectations: Vec<ExpectationResult>,
    pub passed: bool,
    #[serde(skip)]
    pub csv: String,
}

fn opts_for(setup: &LoopSetup, o: RunOptions) -> IntegrationOptions {
    IntegrationOptions {
        h: o.h.unwrap_or(setup.sim.h),
        t_end: o.t_end.unwrap_or(setup.sim.t_end),
        record_every: setup.sim.record_every,
    }
}

/// Simulates one run and scores its expectations.
pub fn run_one(s: &Scenario, run: &Run, o: RunOptions) -> Result<RunResult> {
    let setup = &run.setup;
    let sim = &setup.sim;
    let sys = assemble(&s.plant, &sim.delta, &sim.w, &setup.om, &setup.stabilizer)?;
    let traj = integrate_rk4(&sys, &sim.z0, opts_for(setup, o))?;
    let pm = s.plant.eval(&sim.delta)?;
    let oracle = oracle_optimal_output(&setup.om.program, &pm, &sim.w)?;
    let metrics = convergence_metrics(&traj, &oracle.y_star, SETTLE_TOL);
    let last = traj.outputs.last().expect("trajectory holds the initial point");
    let mut notes = Vec::new();
    let mut equilibrium = None;
    if traj.diverged {
        notes.push(format!(
            "diverged before t = {}",
            traj.times.last().copied().unwrap_or(0.0)
        ));
    } else {
        match equilibrium_solve(&sys, traj.final_state()) {
            Ok(eq) => {
                let out = sys.outputs(&eq.z)?;
                let point = sys.equilibrium_point(&eq.z)?;
                let optimal = verify_optimality_model(&setup.om, &s.plant, &sim.delta, &sim.w, &point, 1e-8)?;
                equilibrium = Some(EquilibriumSummary {
                    residual: eq.residual,
                    gap: (&out.y - &oracle.y_star).norm(),
                    y: out.y.iter().copied().collect(),
                    optimal,
                });
            }
            Err(e) => notes.push(format!("equilibrium: {e}")),
        }
    }
    let mut buf = Vec::new();
    write_csv(&traj, &sys.layout, &mut buf).map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    let csv = String::from_utf8(buf).expect("csv is ascii");

    let e = &run.expect;
    let mut exp = Vec::new();
    let fe = metrics.final_err;
    if let Some(m) = e.final_err_max {
        exp.push(expectation(
            "final_err_max",
            fe <= m,
            format!("final error {fe:.3e} <= {m:.1e}"),
        ));
    }
    if let Some(m) = e.final_err_min {
        exp.push(expectation(
            "final_err_min",
            fe >= m,
            format!("final error {fe:.3e} >= {m:.1e}"),
        ));
    }
    let gap = equilibrium.as_ref().map(|q| q.gap);
    if let Some(m) = e.equilibrium_gap_min {
        exp.push(expectation(
            "equilibrium_gap_min",
            gap.is_some_and(|g| g >= m),
            format!("equilibrium gap {} >= {m:.1e}", fmt_f(gap)),
        ));
    }
    if let Some(m) = e.equilibrium_gap_max {
        exp.push(expectation(
            "equilibrium_gap_max",
            gap.is_some_and(|g| g <= m),
            format!("equilibrium gap {} <= {m:.1e}", fmt_f(gap)),
        ));
    }
    let ex = metrics.extrema_count;
    if let Some(m) = e.extrema_min {
        exp.push(expectation("extrema_min", ex >= m, format!("{ex} cost extrema >= {m}")));
    }
    if let Some(m) = e.extrema_max {
        exp.push(expectation("extrema_max", ex <= m, format!("{ex} cost extrema <= {m}")));
    }
    if let Some(m) = e.cost_err_max {
        let ce = (last.cost - oracle.cost).abs();
        exp.push(expectation(
            "cost_err_max",
            ce <= m,
            format!("cost error {ce:.3e} <= {m:.1e}"),
        ));
    }
    for c in &e.component_err_max {
        let err = c
            .indices
            .iter()
            .map(|&i| match (last.y.get(i), oracle.y_star.get(i)) {
                (Some(a), Some(b)) => (a - b).abs(),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        exp.push(expectation(
            "component_err_max",
            err <= c.max,
            format!("y{:?} error {err:.3e} <= {:.1e}", c.indices, c.max),
        ));
    }
    if let Some(c) = &e.gradient_spread_max {
        let g = setup.om.program.objective.gradient(&last.y, &sim.w);
        let picked: Vec<f64> = c
            .indices
            .iter()
            .map(|&i| g.get(i).copied().unwrap_or(f64::NAN))
            .collect();
        let hi = picked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = picked.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = if picked.iter().all(|v| v.is_finite()) {
            hi - lo
        } else {
            f64::INFINITY
        };
        exp.push(expectation(
            "gradient_spread_max",
            spread <= c.max,
            format!("gradient spread over {:?} is {spread:.3e} <= {:.1e}", c.indices, c.max),
        ));
    }
    if traj.diverged {
        exp.push(expectation("no_divergence", false, "trajectory diverged"));
    }
    let passed = exp.iter().all(|x| x.passed);
    Ok(RunResult {
        label: run.label.clone(),
        delta: sim.delta.clone(),
        y_star: oracle.y_star.iter().copied().collect(),
        oracle_cost: oracle.cost,
        final_y: last.y.iter().copied().collect(),
        final_cost: last.cost,
        metrics,
        equilibrium,
        notes,
        diverged: traj.diverged,
        expectations: exp,
        passed,
        csv,
    })
}

fn fmt_f(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |g| format!("{g:.3e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub check: CheckReport,
    pub runs: Vec<RunResult>,
    pub passed: bool,
    pub diverged: bool,
}

pub fn run_scenario(s: &Scenario, o: RunOptions) -> Result<RunReport> {
    let check = check_scenario(s)?;
    let runs = s.runs.iter().map(|r| run_one(s, r, o)).collect::<Result<Vec<_>>>()?;
    let passed = check.passed && runs.iter().all(|r| r.passed);
    let diverged = runs.iter().any(|r| r.diverged);
    Ok(RunReport {
        scenario: s.name.clone(),
        check,
        runs,
        passed,
        diverged,
    })
}

/// One δ sample of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub label: String,
    pub delta: Vec<f64>,
    pub final_err: Option<f64>,
    pub diverged: bool,
    pub error: Option<String>,
}

fn sweep_point(s: &Scenario, run: &Run, delta: &[f64], o: RunOptions) -> SweepPoint {
    let setup = &run.setup;
    let res = (|| -> Result<(f64, bool)> {
        let sys = assemble(&s.plant, delta, &setup.sim.w, &setup.om, &setup.stabilizer)?;
        let traj = integrate_rk4(&sys, &setup.sim.z0, opts_for(setup, o))?;
        let pm = s.plant.eval(delta)?;
        let oracle = oracle_optimal_output(&setup.om.program, &pm, &setup.sim.w)?;
        let y = &traj.outputs.last().expect("nonempty").y;
        Ok(((y - &oracle.y_star).norm(), traj.diverged))
    })();
    match res {
        Ok((err, diverged)) => SweepPoint {
            label: run.label.clone(),
            delta: delta.to_vec(),
            final_err: Some(err),
            diverged,
            error: None,
        },
        Err(e) => SweepPoint {
            label: run.label.clone(),
            delta: delta.to_vec(),
            final_err: None,
            diverged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every run at every δ sample on worker threads. Results come back
/// ordered by run, then by sample.
pub fn run_sweep(s: &Scenario, o: RunOptions) -> Vec<SweepPoint> {
    let jobs: Vec<(&Run, &Vec<f64>)> = s
        .runs
        .iter()
        .flat_map(|r| s.plant.delta_samples.iter().map(move |d| (r, d)))
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(r, d)| scope.spawn(move || sweep_point(s, r, d, o)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}
