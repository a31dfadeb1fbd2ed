//! On-disk JSON scenario format.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::matlib::{diag, eye, zeros, Matrix, Vector};
use crate::omodels::PhiNu;
use crate::optprob::SmoothNorm;
use crate::plant::OmVariant;

use super::power::PowerNetwork;

/// Row-major matrix with explicit dimensions, or a shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    },
    Eye {
        eye: usize,
    },
    Zeros {
        zeros: (usize, usize),
    },
    Diag {
        diag: Vec<f64>,
    },
}

impl MatrixSpec {
    pub fn to_matrix(&self, key: &str) -> Result<Matrix> {
        match self {
            MatrixSpec::Dense { rows, cols, data } => {
                if data.len() != *rows {
                    return Err(Error::scenario(
                        key,
                        format!("declares {rows} rows but lists {}", data.len()),
                    ));
                }
                let mut m = zeros(*rows, *cols);
                for (i, r) in data.iter().enumerate() {
                    if r.len() != *cols {
                        return Err(Error::scenario(
                            format!("{key}.data[{i}]"),
                            format!("declares {cols} columns but row has {}", r.len()),
                        ));
                    }
                    for (j, v) in r.iter().enumerate() {
                        if !v.is_finite() {
                            return Err(Error::scenario(format!("{key}.data[{i}][{j}]"), "non-finite entry"));
                        }
                        m[(i, j)] = *v;
                    }
                }
                Ok(m)
            }
            MatrixSpec::Eye { eye: n } => Ok(eye(*n)),
            MatrixSpec::Zeros { zeros: (r, c) } => Ok(zeros(*r, *c)),
            MatrixSpec::Diag { diag: d } => Ok(diag(d)),
        }
    }
}

pub fn vector_of(v: &[f64], key: &str, len: usize) -> Result<Vector> {
    if v.len() != len {
        return Err(Error::scenario(
            key,
            format!("expected {len} entries, found {}", v.len()),
        ));
    }
    Ok(Vector::from_column_slice(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantMatricesSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub bw: MatrixSpec,
    pub c: MatrixSpec,
    pub d: MatrixSpec,
    pub q: MatrixSpec,
    #[serde(default)]
    pub cm: Option<MatrixSpec>,
    #[serde(default)]
    pub dm: Option<MatrixSpec>,
    #[serde(default)]
    pub qm: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineTermSpec {
    #[serde(default)]
    pub a: Option<MatrixSpec>,
    #[serde(default)]
    pub b: Option<MatrixSpec>,
    #[serde(default)]
    pub bw: Option<MatrixSpec>,
    #[serde(default)]
    pub c: Option<MatrixSpec>,
    #[serde(default)]
    pub d: Option<MatrixSpec>,
    #[serde(default)]
    pub q: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantBuilder {
    /// Swing equations of a power network.
    Swing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(default)]
    pub matrices: Option<PlantMatricesSpec>,
    /// One term per δ coordinate.
    #[serde(default)]
    pub affine: Vec<AffineTermSpec>,
    #[serde(default)]
    pub builder: Option<PlantBuilder>,
    #[serde(default)]
    pub network: Option<PowerNetwork>,
    #[serde(default)]
    pub delta_samples: Vec<Vec<f64>>,
    #[serde(default)]
    pub delta_box: Option<Vec<(f64, f64)>>,
    /// Seed that produced randomly generated matrices, kept for reference.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormTermSpec {
    pub select: MatrixSpec,
    #[serde(default)]
    pub reference: Option<MatrixSpec>,
    #[serde(default = "one")]
    pub weight: f64,
    pub norm: SmoothNorm,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½yᵀMy − yᵀNw`
    Quadratic {
        m: MatrixSpec,
        n: MatrixSpec,
    },
    Norms {
        terms: Vec<NormTermSpec>,
    },
}

/// `aᵀy − cᵀw − b ≤ 0`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalitySpec {
    pub a: Vec<f64>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSpec {
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub h: Option<MatrixSpec>,
    #[serde(default)]
    pub l: Option<MatrixSpec>,
    #[serde(default)]
    pub inequalities: Vec<InequalitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisSpec {
    /// `"auto"`: resolved from the nominal geometry.
    Keyword(String),
    Matrix(MatrixSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmSpec {
    pub variant: OmVariant,
    pub basis: BasisSpec,
    #[serde(default)]
    pub phi: PhiNu,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    #[serde(default)]
    pub kx: Option<MatrixSpec>,
    #[serde(default)]
    pub kxi: Option<MatrixSpec>,
    #[serde(default)]
    pub keta: Option<MatrixSpec>,
    #[serde(default)]
    pub keps: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSpec {
    #[serde(default)]
    pub q: Option<MatrixSpec>,
    #[serde(default)]
    pub r: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StabilizerSpec {
    Gains(GainsSpec),
    Lqr(LqrSpec),
}

/// Power-network controllers; each fixes program, model and stabilizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Dapi {
        k: f64,
    },
    Novel {
        c: Vec<f64>,
        k1: MatrixSpec,
        k2: MatrixSpec,
        k3: MatrixSpec,
    },
    GatherBroadcast {
        c: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_h")]
    pub h: f64,
    pub t_end: f64,
    pub w: Vec<f64>,
    /// Full closed-loop initial state.
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    /// Plant part of the initial state; the rest starts at zero.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    #[serde(default = "default_record")]
    pub record_every: usize,
}

fn default_h() -> f64 {
    crate::simulate::DEFAULT_STEP
}

fn default_record() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumExpect {
    /// `[re, im]` pairs.
    pub values: Vec<[f64; 2]>,
    pub tol: f64,
}

/// Expectations on the static analysis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckExpect {
    #[serde(default)]
    pub ros: Option<bool>,
    #[serde(default)]
    pub rfs: Option<bool>,
    #[serde(default)]
    pub robust_full_rank: Option<bool>,
    #[serde(default)]
    pub plant_conditions: Option<bool>,
    #[serde(default)]
    pub om_conditions: Option<bool>,
    #[serde(default)]
    pub augmented_stabilizable: Option<bool>,
    #[serde(default)]
    pub hurwitz: Option<bool>,
    #[serde(default)]
    pub spectrum: Option<SpectrumExpect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentExpect {
    pub indices: Vec<usize>,
    pub max: f64,
}

/// Expectations on one simulated run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunExpect {
    #[serde(default)]
    pub final_err_max: Option<f64>,
    #[serde(default)]
    pub final_err_min: Option<f64>,
    #[serde(default)]
    pub equilibrium_gap_min: Option<f64>,
    #[serde(default)]
    pub equilibrium_gap_max: Option<f64>,
    #[serde(default)]
    pub extrema_min: Option<usize>,
    #[serde(default)]
    pub extrema_max: Option<usize>,
    #[serde(default)]
    pub cost_err_max: Option<f64>,
    #[serde(default)]
    pub component_err_max: Vec<ComponentExpect>,
    /// Largest spread of `∇f0(ȳ)` over the listed indices.
    #[serde(default)]
    pub gradient_spread_max: Option<ComponentExpect>,
}

/// Everything needed to build one closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub plant: PlantSpec,
    #[serde(default)]
    pub program: Option<ProgramSpec>,
    #[serde(default)]
    pub om: Option<OmSpec>,
    #[serde(default)]
    pub stabilizer: Option<StabilizerSpec>,
    #[serde(default)]
    pub controller: Option<ControllerSpec>,
    pub sim: SimSpec,
}

/// Top-level header; the loop keys are read separately so that runs and
/// variants can overlay them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub expect: CheckExpect,
    #[serde(default)]
    pub runs: Vec<Value>,
    #[serde(default)]
    pub variants: BTreeMap<String, Value>,
}

const HEADER_KEYS: [&str; 5] = ["name", "description", "expect", "runs", "variants"];
const LOOP_KEYS: [&str; 6] = ["plant", "program", "om", "stabilizer", "controller", "sim"];

const MATRIX_KEYS: [&str; 4] = ["rows", "eye", "zeros", "diag"];

fn is_matrix(v: &serde_json::Map<String, Value>) -> bool {
    MATRIX_KEYS.iter().any(|k| v.contains_key(*k))
}

/// Recursive overlay: objects merge key by key, everything else replaces.
/// Matrices are replaced whole.
pub fn overlay(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if !is_matrix(b) && !is_matrix(t) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn json_err(key: &str, e: serde_json::Error) -> Error {
    Error::scenario(key, e.to_string())
}

/// A run after overlaying it on the scenario's loop keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRun {
    pub label: String,
    pub spec: LoopSpec,
    pub expect: RunExpect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScenario {
    pub header: ScenarioHeader,
    pub base: LoopSpec,
    pub runs: Vec<ParsedRun>,
    pub variant: Option<String>,
}

/// Parses scenario text, applying `variant` if given. Errors carry the key
/// path or the line and column of the offending token.
pub fn parse_scenario(text: &str, variant: Option<&str>) -> Result<ParsedScenario> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| json_err("<document>", e))?;
    let Value::Object(top) = &doc else {
        return Err(Error::scenario("<document>", "top level must be an object"));
    };
    for k in top.keys() {
        if !HEADER_KEYS.contains(&k.as_str()) && !LOOP_KEYS.contains(&k.as_str()) {
            return Err(Error::scenario(k, "unknown top-level key"));
        }
    }
    // Typed pass over the raw text for line diagnostics.
    let _: ScenarioHeader = serde_json::from_str(text).map_err(|e| json_err("<document>", e))?;
    if let Some(name) = variant {
        let over = top
            .get("variants")
            .and_then(|v| v.get(name))
            .cloned()
            .ok_or_else(|| Error::scenario(format!("variants.{name}"), "no such variant"))?;
        overlay(&mut doc, &over);
    }
    let header: ScenarioHeader = serde_json::from_value(doc.clone()).map_err(|e| json_err("<header>", e))?;
    let mut base_v = serde_json::Map::new();
    if let Value::Object(top) = &doc {
        for k in LOOP_KEYS {
            if let Some(v) = top.get(k) {
                base_v.insert(k.to_string(), v.clone());
            }
        }
    }
    let base_v = Value::Object(base_v);
    let base: LoopSpec = serde_json::from_value(base_v.clone()).map_err(|e| json_err("<loop>", e))?;
    let mut runs = Vec::new();
    let mut labels = Vec::new();
    for (i, r) in header.runs.iter().enumerate() {
        let key = format!("runs[{i}]");
        let Value::Object(obj) = r else {
            return Err(Error::scenario(key, "run must be an object"));
        };
        let label = obj
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::scenario(format!("{key}.label"), "missing string label"))?
            .to_string();
        if labels.contains(&label) {
            return Err(Error::scenario(
                format!("{key}.label"),
                format!("duplicate label `{label}`"),
            ));
        }
        labels.push(label.clone());
        let expect: RunExpect = match obj.get("expect") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| json_err(&format!("{key}.expect"), e))?,
            None => RunExpect::default(),
        };
        let mut over = serde_json::Map::new();
        for (k, v) in obj {
            match k.as_str() {
                "label" | "expect" => {}
                "plant" => return Err(Error::scenario(format!("{key}.plant"), "runs share the scenario plant")),
                k if LOOP_KEYS.contains(&k) => {
                    over.insert(k.to_string(), v.clone());
                }
                other => return Err(Error::scenario(format!("{key}.{other}"), "unknown run key")),
            }
        }
        let mut merged = base_v.clone();
        overlay(&mut merged, &Value::Object(over));
        let spec: LoopSpec = serde_json::from_value(merged).map_err(|e| json_err(&key, e))?;
        runs.push(ParsedRun { label, spec, expect });
    }
    Ok(ParsedScenario {
        header,
        base,
        runs,
        variant: variant.map(str::to_string),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_matrix_shape_checked() {
        let m: MatrixSpec = serde_json::from_str(r#"{"rows":2,"cols":2,"data":[[1,2],[3,4]]}"#).unwrap();
        assert_eq!(m.to_matrix("a").unwrap()[(1, 0)], 3.0);
        let bad: MatrixSpec = serde_json::from_str(r#"{"rows":2,"cols":2,"data":[[1,2],[3]]}"#).unwrap();
        let e = bad.to_matrix("plant.matrices.a").unwrap_err();
        assert!(e.to_string().contains("plant.matrices.a.data[1]"));
    }

    #[test]
    fn overlay_merges_objects() {
        let mut a: Value = serde_json::json!({"sim": {"h": 0.1, "t_end": 5}, "x": [1, 2]});
        overlay(&mut a, &serde_json::json!({"sim": {"t_end": 9}, "x": [3]}));
        assert_eq!(a, serde_json::json!({"sim": {"h": 0.1, "t_end": 9}, "x": [3]}));
        let mut m = serde_json::json!({"basis": {"rows": 1, "cols": 1, "data": [[1]]}});
        overlay(&mut m, &serde_json::json!({"basis": {"eye": 2}}));
        assert_eq!(m, serde_json::json!({"basis": {"eye": 2}}));
    }

    #[test]
    fn syntax_error_reports_line() {
        let e = parse_scenario("{\n\"name\": \"x\",\n\"plant\": }", None).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        let e = parse_scenario(r#"{"name":"x","plnt":{}}"#, None).unwrap_err();
        assert!(e.to_string().contains("plnt"));
    }
}
