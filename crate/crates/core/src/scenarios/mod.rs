//! Ready-to-run scenario definitions and the JSON format that carries them.

pub mod power;
pub mod runner;
pub mod schema;
pub mod tracking;

use crate::error::{Error, Result};
use crate::matlib::{zeros, Matrix, Vector};
use crate::omodels::OptimalityModel;
use crate::optprob::{ConvexProgram, Inequality, NormTerm, Objective, QPData};
use crate::plant::{build_augmented_qp, AffineTerm, OmVariant, PlantMatrices, UncertainPlant};
use crate::stabilize::{synthesize_lqr, Gains, Stabilizer};
use crate::subspaces::{check_rfs, check_ros, equilibrium_geometry};

pub use power::{
    build_dapi, build_gather_broadcast, build_novel_freq_controller, build_swing_plant, dispatch_oracle, PowerNetwork,
};
pub use runner::{check_scenario, run_scenario, run_sweep, CheckReport, RunOptions, RunReport, RunResult, SweepPoint};
pub use schema::{CheckExpect, RunExpect};

use schema::{
    vector_of, BasisSpec, ControllerSpec, LoopSpec, ObjectiveSpec, OmSpec, PlantBuilder, PlantSpec, ProgramSpec,
    StabilizerSpec,
};

/// Simulation settings after resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub h: f64,
    pub t_end: f64,
    pub w: Vector,
    pub delta: Vec<f64>,
    pub z0: Vector,
    pub record_every: usize,
}

/// Resolved closed-loop pieces for one run.
#[derive(Debug, Clone)]
pub struct LoopSetup {
    pub om: OptimalityModel,
    pub stabilizer: Stabilizer,
    pub sim: SimParams,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub label: String,
    pub setup: LoopSetup,
    pub expect: RunExpect,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub variant: Option<String>,
    pub plant: UncertainPlant,
    /// Model, stabilizer and simulation defaults used by the static checks.
    pub base: LoopSetup,
    pub expect: CheckExpect,
    pub runs: Vec<Run>,
}

/// The bundled scenario files, in listing order.
pub const BUNDLED: [(&str, &str); 8] = [
    ("tracking-sparse", include_str!("../../scenarios/tracking-sparse.json")),
    (
        "equilibrium-necessity",
        include_str!("../../scenarios/equilibrium-necessity.json"),
    ),
    ("rfs-violation", include_str!("../../scenarios/rfs-violation.json")),
    ("no-hurwitz", include_str!("../../scenarios/no-hurwitz.json")),
    ("pd-vs-oss", include_str!("../../scenarios/pd-vs-oss.json")),
    ("power-dapi", include_str!("../../scenarios/power-dapi.json")),
    ("power-novel", include_str!("../../scenarios/power-novel.json")),
    ("power-gb", include_str!("../../scenarios/power-gb.json")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads every bundled scenario with its default variant.
pub fn bundled_scenarios() -> Result<Vec<Scenario>> {
    BUNDLED.iter().map(|(_, t)| load_scenario(t, None)).collect()
}

pub fn bundled_scenario(name: &str, variant: Option<&str>) -> Result<Scenario> {
    let text = bundled_text(name).ok_or_else(|| Error::scenario("<name>", format!("no bundled scenario `{name}`")))?;
    load_scenario(text, variant)
}

/// Parses and resolves scenario text.
pub fn load_scenario(text: &str, variant: Option<&str>) -> Result<Scenario> {
    let parsed = schema::parse_scenario(text, variant)?;
    let plant = build_plant(&parsed.base.plant)?;
    let base = build_loop(&parsed.base, &plant, "")?;
    let mut runs = Vec::new();
    for (i, r) in parsed.runs.iter().enumerate() {
        let setup = build_loop(&r.spec, &plant, &format!("runs[{i}]."))?;
        runs.push(Run {
            label: r.label.clone(),
            setup,
            expect: r.expect.clone(),
        });
    }
    Ok(Scenario {
        name: parsed.header.name,
        description: parsed.header.description,
        variant: parsed.variant,
        plant,
        base,
        expect: parsed.header.expect,
        runs,
    })
}

fn opt_matrix(m: &Option<schema::MatrixSpec>, key: &str, default: Matrix) -> Result<Matrix> {
    match m {
        Some(s) => s.to_matrix(key),
        None => Ok(default),
    }
}

fn keyed<T>(r: Result<T>, key: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Scenario { .. } => e,
        other => Error::scenario(key, other.to_string()),
    })
}

fn build_plant(spec: &PlantSpec) -> Result<UncertainPlant> {
    match (spec.builder, &spec.matrices) {
        (Some(PlantBuilder::Swing), None) => {
            let net = spec.network.clone().unwrap_or_else(PowerNetwork::four_bus_line);
            keyed(
                build_swing_plant(&net, spec.delta_samples.clone(), spec.delta_box.clone()),
                "plant",
            )
        }
        (None, Some(m)) => {
            let k = |name: &str| format!("plant.matrices.{name}");
            let mut pm = keyed(
                PlantMatrices::new(
                    m.a.to_matrix(&k("a"))?,
                    m.b.to_matrix(&k("b"))?,
                    m.bw.to_matrix(&k("bw"))?,
                    m.c.to_matrix(&k("c"))?,
                    m.d.to_matrix(&k("d"))?,
                    m.q.to_matrix(&k("q"))?,
                ),
                "plant.matrices",
            )?;
            if m.cm.is_some() || m.dm.is_some() || m.qm.is_some() {
                let cm = opt_matrix(&m.cm, &k("cm"), pm.cm.clone())?;
                let dm = opt_matrix(&m.dm, &k("dm"), zeros(cm.nrows(), pm.m()))?;
                let qm = opt_matrix(&m.qm, &k("qm"), zeros(cm.nrows(), pm.nw()))?;
                pm = keyed(pm.with_measurement(cm, dm, qm), "plant.matrices")?;
            }
            let mut terms = Vec::new();
            for (i, t) in spec.affine.iter().enumerate() {
                let key = |name: &str| format!("plant.affine[{i}].{name}");
                let conv = |m: &Option<schema::MatrixSpec>, name: &str| {
                    m.as_ref().map(|s| s.to_matrix(&key(name))).transpose()
                };
                terms.push(AffineTerm {
                    a: conv(&t.a, "a")?,
                    b: conv(&t.b, "b")?,
                    bw: conv(&t.bw, "bw")?,
                    c: conv(&t.c, "c")?,
                    d: conv(&t.d, "d")?,
                    q: conv(&t.q, "q")?,
                    ..AffineTerm::default()
                });
            }
            keyed(
                UncertainPlant::affine(pm, terms, spec.delta_samples.clone(), spec.delta_box.clone()),
                "plant",
            )
        }
        _ => Err(Error::scenario("plant", "give exactly one of `matrices` or `builder`")),
    }
}

fn build_program(spec: &ProgramSpec, p: usize, nw: usize, prefix: &str) -> Result<ConvexProgram> {
    let key = |name: &str| format!("{prefix}program.{name}");
    let h = opt_matrix(&spec.h, &key("h"), zeros(0, p))?;
    let l = opt_matrix(&spec.l, &key("l"), zeros(h.nrows(), nw))?;
    let objective = match &spec.objective {
        ObjectiveSpec::Quadratic { m, n } => Objective::Quadratic(keyed(
            QPData::new(m.to_matrix(&key("objective.m"))?, n.to_matrix(&key("objective.n"))?),
            &key("objective"),
        )?),
        ObjectiveSpec::Norms { terms } => {
            let mut out = Vec::new();
            for (i, t) in terms.iter().enumerate() {
                let tk = key(&format!("objective.terms[{i}]"));
                let select = t.select.to_matrix(&format!("{tk}.select"))?;
                let reference = opt_matrix(&t.reference, &format!("{tk}.reference"), zeros(select.nrows(), nw))?;
                out.push(NormTerm {
                    select,
                    reference,
                    weight: t.weight,
                    kind: t.norm,
                });
            }
            Objective::Norms(out)
        }
    };
    let mut ineqs = Vec::new();
    for (i, q) in spec.inequalities.iter().enumerate() {
        let ik = key(&format!("inequalities[{i}]"));
        let a = vector_of(&q.a, &format!("{ik}.a"), p)?;
        let c = match &q.c {
            Some(c) => vector_of(c, &format!("{ik}.c"), nw)?,
            None => Vector::zeros(nw),
        };
        ineqs.push(Inequality::Affine { a, c, b: q.b });
    }
    keyed(ConvexProgram::new(p, nw, objective, h, l, ineqs), &key(""))
}

/// Resolves `"auto"` from the nominal geometry, preferring a basis that
/// works for every δ sample.
fn resolve_basis(spec: &OmSpec, plant: &UncertainPlant, prog: &ConvexProgram, key: &str) -> Result<Matrix> {
    let word = match &spec.basis {
        BasisSpec::Matrix(m) => return m.to_matrix(key),
        BasisSpec::Keyword(w) => w,
    };
    if word != "auto" {
        return Err(Error::scenario(
            key,
            format!("expected a matrix or \"auto\", found \"{word}\""),
        ));
    }
    let auto = match spec.variant {
        OmVariant::Ros => {
            let r = keyed(check_ros(plant), key)?;
            match r.basis {
                Some(b) => b,
                None => {
                    keyed(equilibrium_geometry(&plant.nominal()?, &prog.h), key)?
                        .range_g()
                        .basis
                }
            }
        }
        OmVariant::Rfs | OmVariant::Rerfs => {
            let r = keyed(check_rfs(plant, &prog.h), key)?;
            let b = match r.basis {
                Some(b) => b,
                None => keyed(equilibrium_geometry(&plant.nominal()?, &prog.h), key)?.t.basis,
            };
            if spec.variant == OmVariant::Rerfs && b.ncols() != prog.n_ec() {
                return Err(Error::scenario(
                    key,
                    format!(
                        "\"auto\" gives {} columns but the reduced-error model needs n_ec = {}",
                        b.ncols(),
                        prog.n_ec()
                    ),
                ));
            }
            b
        }
    };
    Ok(auto)
}

fn build_stabilizer(
    spec: &StabilizerSpec,
    plant: &UncertainPlant,
    om: &OptimalityModel,
    prefix: &str,
) -> Result<Stabilizer> {
    let pm = plant.nominal()?;
    let (m, n) = (pm.m(), pm.n());
    let n_xi = om.n_nu() + om.n_mu();
    let n_eta = om.eps_dim();
    match spec {
        StabilizerSpec::Gains(g) => {
            let key = |name: &str| format!("{prefix}stabilizer.gains.{name}");
            let z = Gains::zero(m, n, n_xi, n_eta);
            Ok(Stabilizer::gains(Gains {
                kx: opt_matrix(&g.kx, &key("kx"), z.kx)?,
                kxi: opt_matrix(&g.kxi, &key("kxi"), z.kxi)?,
                keta: opt_matrix(&g.keta, &key("keta"), z.keta)?,
                keps: opt_matrix(&g.keps, &key("keps"), z.keps)?,
            }))
        }
        StabilizerSpec::Lqr(l) => {
            let key = format!("{prefix}stabilizer.lqr");
            let qp = om
                .program
                .as_qp()
                .ok_or_else(|| Error::scenario(&key, "LQR synthesis needs a quadratic program without inequalities"))?;
            let aug = keyed(
                build_augmented_qp(&pm, qp, &om.program.h, &om.program.l, om.variant, &om.basis),
                &key,
            )?;
            let q = l.q.as_ref().map(|s| s.to_matrix(&format!("{key}.q"))).transpose()?;
            let r = l.r.as_ref().map(|s| s.to_matrix(&format!("{key}.r"))).transpose()?;
            keyed(synthesize_lqr(&aug, q.as_ref(), r.as_ref()), &key)
        }
    }
}

fn build_loop(spec: &LoopSpec, plant: &UncertainPlant, prefix: &str) -> Result<LoopSetup> {
    let pm = plant.nominal()?;
    let (om, stabilizer) = match &spec.controller {
        Some(c) => {
            let key = format!("{prefix}controller");
            if spec.program.is_some() || spec.om.is_some() || spec.stabilizer.is_some() {
                return Err(Error::scenario(
                    &key,
                    "a controller builder replaces program, om and stabilizer",
                ));
            }
            if spec.plant.builder != Some(PlantBuilder::Swing) {
                return Err(Error::scenario(&key, "controller builders need the swing plant"));
            }
            let net = spec.plant.network.clone().unwrap_or_else(PowerNetwork::four_bus_line);
            let built = match c {
                ControllerSpec::Dapi { k } => build_dapi(&net, *k),
                ControllerSpec::Novel { c, k1, k2, k3 } => build_novel_freq_controller(
                    &net,
                    c,
                    &k1.to_matrix(&format!("{key}.k1"))?,
                    &k2.to_matrix(&format!("{key}.k2"))?,
                    &k3.to_matrix(&format!("{key}.k3"))?,
                ),
                ControllerSpec::GatherBroadcast { c } => build_gather_broadcast(&net, c),
            };
            keyed(built, &key)?
        }
        None => {
            let prog_spec = spec
                .program
                .as_ref()
                .ok_or_else(|| Error::scenario(format!("{prefix}program"), "missing"))?;
            let om_spec = spec
                .om
                .as_ref()
                .ok_or_else(|| Error::scenario(format!("{prefix}om"), "missing"))?;
            let st_spec = spec
                .stabilizer
                .as_ref()
                .ok_or_else(|| Error::scenario(format!("{prefix}stabilizer"), "missing"))?;
            let prog = build_program(prog_spec, pm.p(), pm.nw(), prefix)?;
            let basis = resolve_basis(om_spec, plant, &prog, &format!("{prefix}om.basis"))?;
            let om = keyed(
                OptimalityModel::new(om_spec.variant, prog, basis),
                &format!("{prefix}om"),
            )?
            .with_phi(om_spec.phi);
            let st = build_stabilizer(st_spec, plant, &om, prefix)?;
            (om, st)
        }
    };
    let s = &spec.sim;
    let key = |name: &str| format!("{prefix}sim.{name}");
    if !(s.h > 0.0) || !(s.t_end >= s.h) {
        return Err(Error::scenario(
            key("h"),
            format!("need h > 0 and t_end >= h, got h = {}, t_end = {}", s.h, s.t_end),
        ));
    }
    let w = vector_of(&s.w, &key("w"), pm.nw())?;
    let delta = match &s.delta {
        Some(d) => {
            keyed(plant.eval(d), &key("delta"))?;
            d.clone()
        }
        None => plant.nominal_delta(),
    };
    let dim = pm.n() + om.n_nu() + om.n_mu() + om.eps_dim();
    let z0 = match (&s.z0, &s.x0) {
        (Some(_), Some(_)) => return Err(Error::scenario(key("z0"), "give at most one of z0 and x0")),
        (Some(z), None) => vector_of(z, &key("z0"), dim)?,
        (None, Some(x)) => {
            let mut z = Vector::zeros(dim);
            z.rows_mut(0, pm.n()).copy_from(&vector_of(x, &key("x0"), pm.n())?);
            z
        }
        (None, None) => Vector::zeros(dim),
    };
    Ok(LoopSetup {
        om,
        stabilizer,
        sim: SimParams {
            h: s.h,
            t_end: s.t_end,
            w,
            delta,
            z0,
            record_every: s.record_every.max(1),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_load() {
        let all = bundled_scenarios().unwrap();
        assert_eq!(all.len(), 8);
        for (s, name) in all.iter().zip(bundled_names()) {
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn kkt_variant_loads() {
        let s = bundled_scenario("equilibrium-necessity", Some("kkt-controller")).unwrap();
        assert_eq!(s.base.om.variant, OmVariant::Rfs);
        assert!(s.runs.is_empty());
    }

    #[test]
    fn missing_variant_is_reported() {
        let e = bundled_scenario("no-hurwitz", Some("nope")).unwrap_err();
        assert!(e.to_string().contains("variants.nope"));
    }
}
