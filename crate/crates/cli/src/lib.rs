//! `oss` command implementations. `main.rs` only parses arguments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use oss_core::scenarios::{
    self, check_scenario, run_scenario, run_sweep, CheckReport, RunOptions, RunReport, Scenario, SweepPoint,
};
use oss_core::stabilize::ConditionReport;
use oss_core::Error;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass = 0,
    ExpectationFailed = 1,
    InputError = 2,
    Diverged = 3,
}

impl Outcome {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Failure before any verdict could be produced.
#[derive(Debug)]
pub struct CliError(pub String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError(e.to_string())
    }
}

/// Reads a scenario from a file, or by bundled name when no such file exists.
pub fn load(path: &str, variant: Option<&str>) -> Result<Scenario, CliError> {
    let p = Path::new(path);
    if p.is_file() {
        let text = fs::read_to_string(p).map_err(|e| CliError(format!("{path}: {e}")))?;
        return scenarios::load_scenario(&text, variant).map_err(|e| CliError(format!("{path}: {e}")));
    }
    match scenarios::bundled_text(path) {
        Some(text) => Ok(scenarios::load_scenario(text, variant)?),
        None => Err(CliError(format!(
            "`{path}` is neither a file nor a bundled scenario (try `oss list`)"
        ))),
    }
}

pub fn cmd_list() -> Vec<&'static str> {
    scenarios::bundled_names()
}

pub fn cmd_check(path: &str, variant: Option<&str>) -> Result<CheckReport, CliError> {
    let s = load(path, variant)?;
    Ok(check_scenario(&s)?)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub out: Option<PathBuf>,
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub sweep: bool,
    pub variant: Option<String>,
}

pub struct RunOutput {
    pub report: RunReport,
    pub csv_files: Vec<PathBuf>,
    pub sweep: Vec<SweepPoint>,
}

pub fn cmd_run(path: &str, args: &RunArgs) -> Result<RunOutput, CliError> {
    let s = load(path, args.variant.as_deref())?;
    let opts = RunOptions {
        h: args.h,
        t_end: args.t_end,
    };
    let report = run_scenario(&s, opts)?;
    let mut csv_files = Vec::new();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| CliError(format!("{}: {e}", dir.display())))?;
        for r in &report.runs {
            let file = dir.join(format!("{}-{}.csv", report.scenario, r.label));
            fs::write(&file, &r.csv).map_err(|e| CliError(format!("{}: {e}", file.display())))?;
            csv_files.push(file);
        }
    }
    let sweep = if args.sweep { run_sweep(&s, opts) } else { Vec::new() };
    Ok(RunOutput {
        report,
        csv_files,
        sweep,
    })
}

pub fn check_outcome(r: &CheckReport) -> Outcome {
    if r.passed {
        Outcome::Pass
    } else {
        Outcome::ExpectationFailed
    }
}

pub fn run_outcome(r: &RunReport) -> Outcome {
    if r.diverged {
        Outcome::Diverged
    } else if r.passed {
        Outcome::Pass
    } else {
        Outcome::ExpectationFailed
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn write_conditions(out: &mut String, title: &str, r: &ConditionReport) {
    let _ = writeln!(out, "{title}: {}", if r.overall { "all hold" } else { "not all hold" });
    for c in &r.clauses {
        let _ = writeln!(out, "  [{}] {}: {}", if c.holds { "x" } else { " " }, c.name, c.detail);
    }
    if let Some(p) = r.pbh {
        let _ = writeln!(
            out,
            "  direct PBH on augmented plant: {p}{}",
            if r.borderline { " (borderline)" } else { "" }
        );
    }
}

pub fn format_check(r: &CheckReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "scenario {}", r.scenario);
    if let Some(v) = &r.variant {
        let _ = write!(out, " (variant {v})");
    }
    out.push('\n');
    let rb = &r.robustness;
    let _ = writeln!(
        out,
        "robustness over {} samples: ros={} rfs={} robust_full_rank={}",
        rb.samples, rb.ros, rb.rfs, rb.robust_full_rank
    );
    for (name, w) in [("ros", &rb.ros_witness), ("rfs", &rb.rfs_witness)] {
        if let Some((a, b)) = w {
            let _ = writeln!(out, "  {name} witness: delta {} vs {}", fmt_vec(a), fmt_vec(b));
        }
    }
    if let Some(p) = &r.plant_conditions {
        write_conditions(&mut out, "plant conditions", p);
    }
    if let Some(p) = &r.om_conditions {
        write_conditions(&mut out, "model conditions", p);
    }
    for n in &r.notes {
        let _ = writeln!(out, "note: {n}");
    }
    if let Some(a) = &r.augmented {
        let _ = writeln!(
            out,
            "augmented plant: stabilizable={} detectable={}",
            a.stabilizable, a.detectable
        );
    }
    if !r.spectrum.is_empty() {
        let eig: Vec<String> = r
            .spectrum
            .iter()
            .map(|[re, im]| {
                if *im == 0.0 {
                    format!("{re:.6}")
                } else {
                    format!("{re:.6}{im:+.6}i")
                }
            })
            .collect();
        let _ = writeln!(out, "nominal closed-loop spectrum: {}", eig.join(", "));
    }
    for s in &r.samples {
        let _ = writeln!(
            out,
            "  delta {}: abscissa {:.6} {}",
            fmt_vec(&s.delta),
            s.abscissa,
            if s.hurwitz { "hurwitz" } else { "not hurwitz" }
        );
    }
    for e in &r.expectations {
        let _ = writeln!(out, "{} {}: {}", mark(e.passed), e.name, e.detail);
    }
    out
}

pub fn format_run(o: &RunOutput) -> String {
    let r = &o.report;
    let mut out = format_check(&r.check);
    for run in &r.runs {
        let m = &run.metrics;
        let _ = writeln!(
            out,
            "run {} at delta {}: final error {:.3e}, settled {}, cost extrema {}",
            run.label,
            fmt_vec(&run.delta),
            m.final_err,
            m.settling_time
                .map_or("never".to_string(), |t| format!("at t = {t:.3}")),
            m.extrema_count
        );
        let _ = writeln!(out, "  y* = {} (cost {:.6e})", fmt_vec(&run.y_star), run.oracle_cost);
        if let Some(eq) = &run.equilibrium {
            let _ = writeln!(
                out,
                "  equilibrium: residual {:.1e}, gap to optimum {:.6e}, optimal {}",
                eq.residual, eq.gap, eq.optimal
            );
        }
        for n in &run.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        for e in &run.expectations {
            let _ = writeln!(out, "  {} {}: {}", mark(e.passed), e.name, e.detail);
        }
    }
    for f in &o.csv_files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    for p in &o.sweep {
        let status = match (&p.error, p.final_err) {
            (Some(e), _) => format!("error: {e}"),
            (None, Some(err)) if p.diverged => format!("diverged (error {err:.3e})"),
            (None, Some(err)) => format!("final error {err:.3e}"),
            (None, None) => "no result".into(),
        };
        let _ = writeln!(out, "sweep {} delta {}: {status}", p.label, fmt_vec(&p.delta));
    }
    let _ = writeln!(out, "result: {}", if r.diverged { "DIVERGED" } else { mark(r.passed) });
    out
}

pub fn run_json(o: &RunOutput) -> serde_json::Value {
    serde_json::json!({
        "report": o.report,
        "csv_files": o.csv_files,
        "sweep": o.sweep,
    })
}
