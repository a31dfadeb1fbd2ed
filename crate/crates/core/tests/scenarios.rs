use oss_core::matlib::{block_diag, eye, hstack, vstack, zeros, Matrix};
use oss_core::scenarios::tracking::{seeded_stable_plant, TRACKING_SEED};
use oss_core::scenarios::{
    bundled_names, bundled_scenario, bundled_text, check_scenario, run_scenario, run_sweep, RunOptions,
};

#[test]
fn tracking_plant_matches_generator() {
    let g = seeded_stable_plant(TRACKING_SEED, 4, 2, 1, 3).unwrap();
    let json: serde_json::Value = serde_json::from_str(bundled_text("tracking-sparse").unwrap()).unwrap();
    assert_eq!(json["plant"]["seed"].as_u64(), Some(TRACKING_SEED));
    let pm = bundled_scenario("tracking-sparse", None)
        .unwrap()
        .plant
        .nominal()
        .unwrap();
    // Bw and Q carry the disturbance in their first column; the other three
    // columns are the reference. The last two outputs are the inputs.
    assert_eq!(pm.a, g.a);
    assert_eq!(pm.b, g.b);
    assert_eq!(pm.bw, hstack(&[&g.bw, &zeros(4, 3)]));
    assert_eq!(pm.c, vstack(&[&g.c, &zeros(2, 4)]));
    assert_eq!(pm.d, vstack(&[&g.d, &eye(2)]));
    assert_eq!(pm.q, block_diag(&[&g.dw, &zeros(2, 3)]));
}

#[test]
fn every_bundled_scenario_meets_its_expectations() {
    for name in bundled_names() {
        let s = bundled_scenario(name, None).unwrap();
        let check = check_scenario(&s).unwrap();
        assert!(check.passed, "{name} check: {:?}", check.expectations);
        let report = run_scenario(&s, RunOptions::default()).unwrap();
        assert!(!report.diverged, "{name} diverged");
        for r in &report.runs {
            assert!(r.passed, "{name}/{}: {:?}", r.label, r.expectations);
        }
    }
}

#[test]
fn csv_traces_are_deterministic() {
    let s = bundled_scenario("equilibrium-necessity", None).unwrap();
    let o = RunOptions {
        h: None,
        t_end: Some(2.0),
    };
    let a = run_scenario(&s, o).unwrap();
    let b = run_scenario(&s, o).unwrap();
    assert_eq!(a.runs[0].csv, b.runs[0].csv);
    assert!(a.runs[0].csv.starts_with("t,"));
}

#[test]
fn sweep_covers_runs_times_samples_in_order() {
    let s = bundled_scenario("rfs-violation", None).unwrap();
    let o = RunOptions {
        h: None,
        t_end: Some(1.0),
    };
    let a = run_sweep(&s, o);
    assert_eq!(a.len(), s.runs.len() * s.plant.delta_samples.len());
    let b = run_sweep(&s, o);
    let key = |v: &[oss_core::scenarios::SweepPoint]| {
        v.iter()
            .map(|p| (p.label.clone(), p.delta.clone(), p.final_err))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
}

#[test]
fn power_gather_broadcast_uses_a_scalar_integrator() {
    let s = bundled_scenario("power-gb", None).unwrap();
    assert_eq!(s.base.om.eps_dim(), 1);
    let h: &Matrix = &s.base.om.program.h;
    // η̇ = −cᵀω: negative feedback on the weighted frequency.
    assert!(h.iter().all(|v| *v <= 0.0));
}
