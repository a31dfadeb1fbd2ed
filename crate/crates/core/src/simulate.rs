//! Closed-loop assembly, fixed-step integration, equilibrium solves and
//! convergence metrics.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matlib::{self, zeros, Matrix, Vector};
use crate::omodels::{om_dynamics, EquilibriumPoint, OptimalityModel};
use crate::plant::{PlantMatrices, UncertainPlant};
use crate::stabilize::{ControlLaw, Stabilizer};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Block offsets of the closed-loop state `z = (x, ν, μ, η)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub n: usize,
    pub n_nu: usize,
    pub n_mu: usize,
    pub n_eta: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.n + self.n_nu + self.n_mu + self.n_eta
    }
    pub fn nu_at(&self) -> usize {
        self.n
    }
    pub fn mu_at(&self) -> usize {
        self.n + self.n_nu
    }
    pub fn eta_at(&self) -> usize {
        self.n + self.n_nu + self.n_mu
    }
}

/// Plant, optimality model, integrators and stabilizer wired together for a
/// fixed `δ` and constant `w`.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub pm: PlantMatrices,
    pub om: OptimalityModel,
    pub stab: Stabilizer,
    pub w: Vector,
    pub layout: Layout,
}

/// Signals derived from a closed-loop state.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub y: Vector,
    pub u: Vector,
    pub eps: Vector,
    pub cost: f64,
}

pub fn assemble(
    up: &UncertainPlant,
    delta: &[f64],
    w: &Vector,
    om: &OptimalityModel,
    stab: &Stabilizer,
) -> Result<ClosedLoopSystem> {
    let pm = up.eval(delta)?;
    let prog = &om.program;
    if pm.p() != prog.p {
        return Err(Error::dim("optimization output (plant p vs program p)", prog.p, pm.p()));
    }
    if pm.nw() != prog.nw || w.len() != prog.nw {
        return Err(Error::dim(
            "disturbance w",
            pm.nw(),
            format!("program {} / w {}", prog.nw, w.len()),
        ));
    }
    let layout = Layout {
        n: pm.n(),
        n_nu: om.n_nu(),
        n_mu: om.n_mu(),
        n_eta: om.eps_dim(),
    };
    let m = pm.m();
    match &stab.law {
        ControlLaw::Gains(g) => {
            let n_xi = layout.n_nu + layout.n_mu;
            let checks = [
                ("Kx", g.kx.shape(), (m, layout.n)),
                ("Kξ", g.kxi.shape(), (m, n_xi)),
                ("Kη", g.keta.shape(), (m, layout.n_eta)),
                ("Kε", g.keps.shape(), (m, layout.n_eta)),
            ];
            for (name, got, want) in checks {
                if got != want {
                    return Err(Error::dim(
                        format!("stabilizer block {name}"),
                        format!("{}x{}", want.0, want.1),
                        format!("{}x{}", got.0, got.1),
                    ));
                }
            }
        }
        ControlLaw::InverseGradient { a, b } => {
            if a.len() != m || b.len() != m {
                return Err(Error::dim(
                    "inverse-gradient coefficients",
                    m,
                    format!("{}/{}", a.len(), b.len()),
                ));
            }
            if layout.n_eta != 1 {
                return Err(Error::dim("inverse-gradient integrator state", 1, layout.n_eta));
            }
        }
    }
    Ok(ClosedLoopSystem {
        pm,
        om: om.clone(),
        stab: stab.clone(),
        w: w.clone(),
        layout,
    })
}

impl ClosedLoopSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn zero_state(&self) -> Vector {
        Vector::zeros(self.dim())
    }

    pub fn split(&self, z: &Vector) -> (Vector, Vector, Vector, Vector) {
        let l = self.layout;
        (
            z.rows(0, l.n).into_owned(),
            z.rows(l.nu_at(), l.n_nu).into_owned(),
            z.rows(l.mu_at(), l.n_mu).into_owned(),
            z.rows(l.eta_at(), l.n_eta).into_owned(),
        )
    }

    fn output_y(&self, x: &Vector, u: &Vector) -> Vector {
        &self.pm.c * x + &self.pm.d * u + &self.pm.q * &self.w
    }

    fn eps_at(&self, x: &Vector, nu: &Vector, mu: &Vector, u: &Vector) -> Result<Vector> {
        let y = self.output_y(x, u);
        Ok(om_dynamics(&self.om, &y, &self.w, nu, mu)?.eps)
    }

    /// Control input at state `z`. A feedthrough from `u` to `ε` creates an
    /// algebraic loop, solved by Newton iteration.
    pub fn control(&self, z: &Vector) -> Result<Vector> {
        let (x, nu, mu, eta) = self.split(z);
        match &self.stab.law {
            ControlLaw::InverseGradient { a, b } => crate::omodels::gather_broadcast_input(a, b, eta[0]),
            ControlLaw::Gains(g) => {
                let xi = Vector::from_iterator(nu.len() + mu.len(), nu.iter().chain(mu.iter()).copied());
                let base = -(&g.kx * &x + &g.kxi * xi + &g.keta * &eta);
                let m = base.len();
                if g.keps.amax() == 0.0 {
                    return Ok(base);
                }
                let loop_free = self.pm.d.amax() == 0.0;
                let eps0 = self.eps_at(&x, &nu, &mu, &base)?;
                let mut u = &base - &g.keps * eps0;
                if loop_free {
                    return Ok(u);
                }
                let resid = |u: &Vector| -> Result<Vector> { Ok(u - &base + &g.keps * self.eps_at(&x, &nu, &mu, u)?) };
                let mut r = resid(&u)?;
                for _ in 0..50 {
                    if r.amax() <= 1e-13 * (1.0 + u.amax()) {
                        return Ok(u);
                    }
                    let hstep = 1e-7 * (1.0 + u.amax());
                    let mut jac = zeros(m, m);
                    for i in 0..m {
                        let mut up = u.clone();
                        up[i] += hstep;
                        jac.set_column(i, &((resid(&up)? - &r) / hstep));
                    }
                    let step = matlib::solve_vec(&jac, &r)?;
                    u -= step;
                    r = resid(&u)?;
                }
                if r.amax() <= 1e-9 * (1.0 + u.amax()) {
                    Ok(u)
                } else {
                    Err(Error::Newton(format!("algebraic loop residual {:.3e}", r.amax())))
                }
            }
        }
    }

    pub fn outputs(&self, z: &Vector) -> Result<Outputs> {
        let (x, nu, mu, _) = self.split(z);
        let u = self.control(z)?;
        let y = self.output_y(&x, &u);
        let eps = om_dynamics(&self.om, &y, &self.w, &nu, &mu)?.eps;
        let cost = self.om.program.objective.value(&y, &self.w);
        Ok(Outputs { y, u, eps, cost })
    }

    /// `ż` at `z`. Time invariant.
    pub fn rhs(&self, z: &Vector) -> Result<Vector> {
        let l = self.layout;
        let (x, nu, mu, _) = self.split(z);
        let u = self.control(z)?;
        let y = self.output_y(&x, &u);
        let om = om_dynamics(&self.om, &y, &self.w, &nu, &mu)?;
        let mut dz = Vector::zeros(l.dim());
        dz.rows_mut(0, l.n)
            .copy_from(&(&self.pm.a * &x + &self.pm.b * &u + &self.pm.bw * &self.w));
        dz.rows_mut(l.nu_at(), l.n_nu).copy_from(&om.nu_dot);
        dz.rows_mut(l.mu_at(), l.n_mu).copy_from(&om.mu_dot);
        dz.rows_mut(l.eta_at(), l.n_eta).copy_from(&om.eps);
        Ok(dz)
    }

    /// Central-difference Jacobian of the right-hand side.
    pub fn jacobian(&self, z: &Vector) -> Result<Matrix> {
        let k = z.len();
        let mut j = zeros(k, k);
        for i in 0..k {
            let h = 1e-6 * (1.0 + z[i].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            j.set_column(i, &((self.rhs(&zp)? - self.rhs(&zm)?) / (2.0 * h)));
        }
        Ok(j)
    }

    /// Equilibrium data in the form used by the model check.
    pub fn equilibrium_point(&self, z: &Vector) -> Result<EquilibriumPoint> {
        let (x, nu, mu, _) = self.split(z);
        Ok(EquilibriumPoint {
            x,
            nu,
            mu,
            u: self.control(z)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub outputs: Vec<Outputs>,
    pub diverged: bool,
    pub step: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory holds the initial state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    pub h: f64,
    pub t_end: f64,
    /// Keep every k-th step.
    pub record_every: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            h: DEFAULT_STEP,
            t_end: 10.0,
            record_every: 1,
        }
    }
}

fn rk4_step(sys: &ClosedLoopSystem, z: &Vector, h: f64) -> Result<Vector> {
    let k1 = sys.rhs(z)?;
    let k2 = sys.rhs(&(z + &k1 * (h / 2.0)))?;
    let k3 = sys.rhs(&(z + &k2 * (h / 2.0)))?;
    let k4 = sys.rhs(&(z + &k3 * h))?;
    Ok(z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Classical fixed-step RK4. A state that leaves `‖z‖ ≤ 1e12` or becomes
/// non-finite ends the run with `diverged` set.
pub fn integrate_rk4(sys: &ClosedLoopSystem, z0: &Vector, opts: IntegrationOptions) -> Result<Trajectory> {
    if !(opts.h > 0.0) || !(opts.t_end >= opts.h) {
        return Err(Error::Invalid(format!(
            "need h > 0 and t_end >= h, got h = {}, t_end = {}",
            opts.h, opts.t_end
        )));
    }
    if z0.len() != sys.dim() {
        return Err(Error::dim("initial state", sys.dim(), z0.len()));
    }
    let steps = (opts.t_end / opts.h).round() as usize;
    let every = opts.record_every.max(1);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![z0.clone()],
        outputs: vec![sys.outputs(z0)?],
        diverged: false,
        step: opts.h,
    };
    let mut z = z0.clone();
    for k in 1..=steps {
        let next = rk4_step(sys, &z, opts.h);
        let next = match next {
            Ok(v) if v.iter().all(|c| c.is_finite()) && v.norm() <= DIVERGENCE_NORM => v,
            Ok(_) | Err(Error::Newton(_)) => {
                traj.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        z = next;
        if k % every == 0 || k == steps {
            traj.times.push(k as f64 * opts.h);
            traj.outputs.push(sys.outputs(&z)?);
            traj.states.push(z.clone());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub z: Vector,
    pub residual: f64,
    pub iterations: usize,
}

pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// Damped Newton on `rhs(z) = 0` with a finite-difference Jacobian.
pub fn equilibrium_solve(sys: &ClosedLoopSystem, z_guess: &Vector) -> Result<EquilibriumSolution> {
    if z_guess.len() != sys.dim() {
        return Err(Error::dim("equilibrium guess", sys.dim(), z_guess.len()));
    }
    let mut z = z_guess.clone();
    let mut f = sys.rhs(&z)?;
    for it in 0..100 {
        if f.amax() <= EQUILIBRIUM_TOL {
            return Ok(EquilibriumSolution {
                residual: f.amax(),
                z,
                iterations: it,
            });
        }
        let j = sys.jacobian(&z)?;
        let info = matlib::rank_info(&j, 1e-12);
        if info.rank < j.nrows() && info.rank < j.ncols() && it > 0 && f.amax() > 1e-6 {
            return Err(Error::Newton(format!(
                "singular Jacobian (rank {} of {})",
                info.rank,
                j.nrows()
            )));
        }
        // LU keeps full accuracy on ill-conditioned but nonsingular
        // Jacobians; the truncated least-squares solve is the fallback.
        let step = match j.clone().lu().solve(&f) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => matlib::solve_vec(&j, &f)?,
        };
        let f0 = f.norm();
        let mut t = 1.0;
        loop {
            let zn = &z - &step * t;
            let fnext = sys.rhs(&zn)?;
            if fnext.norm() < (1.0 - 1e-4 * t) * f0 || t < 1e-8 {
                z = zn;
                f = fnext;
                break;
            }
            t *= 0.5;
        }
    }
    if f.amax() <= EQUILIBRIUM_TOL {
        Ok(EquilibriumSolution {
            residual: f.amax(),
            z,
            iterations: 100,
        })
    } else {
        Err(Error::Newton(format!(
            "no convergence in 100 iterations (residual {:.3e})",
            f.amax()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceMetrics {
    pub final_err: f64,
    pub settling_time: Option<f64>,
    pub ise: f64,
    pub extrema_count: usize,
}

/// Strict local extrema of `values`, ignoring wiggles below `tol`.
pub fn count_extrema(values: &[f64], tol: f64) -> usize {
    let Some(&first) = values.first() else {
        return 0;
    };
    // dir: 0 undecided, 1 rising, -1 falling
    let mut dir = 0i8;
    let mut hi = first;
    let mut lo = first;
    let mut count = 0;
    for &v in &values[1..] {
        match dir {
            0 => {
                if v > first + tol {
                    dir = 1;
                    hi = v;
                } else if v < first - tol {
                    dir = -1;
                    lo = v;
                }
            }
            1 => {
                if v > hi {
                    hi = v;
                } else if v < hi - tol {
                    count += 1;
                    dir = -1;
                    lo = v;
                }
            }
            _ => {
                if v < lo {
                    lo = v;
                } else if v > lo + tol {
                    count += 1;
                    dir = 1;
                    hi = v;
                }
            }
        }
    }
    count
}

pub fn convergence_metrics(traj: &Trajectory, y_star: &Vector, settle_tol: f64) -> ConvergenceMetrics {
    let errs: Vec<f64> = traj.outputs.iter().map(|o| (&o.y - y_star).norm()).collect();
    let final_err = *errs.last().unwrap_or(&f64::INFINITY);
    let mut settling_time = None;
    for (i, e) in errs.iter().enumerate().rev() {
        if *e >= settle_tol {
            settling_time = traj.times.get(i + 1).copied();
            break;
        }
        if i == 0 {
            settling_time = Some(traj.times[0]);
        }
    }
    let mut ise = 0.0;
    for i in 1..errs.len() {
        let dt = traj.times[i] - traj.times[i - 1];
        ise += 0.5 * dt * (errs[i] * errs[i] + errs[i - 1] * errs[i - 1]);
    }
    let t_end = *traj.times.last().unwrap_or(&0.0);
    let late: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.outputs)
        .filter(|(t, _)| **t > 0.05 * t_end)
        .map(|(_, o)| o.cost)
        .collect();
    let (lo, hi) = late
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let range = if late.is_empty() { 0.0 } else { hi - lo };
    ConvergenceMetrics {
        final_err,
        settling_time,
        ise,
        extrema_count: count_extrema(&late, 1e-6 * range + 1e-12),
    }
}

/// Writes `t,x1..,u1..,y1..,eps1..,cost` rows with 15 significant digits.
pub fn write_csv<W: Write>(traj: &Trajectory, layout: &Layout, out: &mut W) -> std::io::Result<()> {
    let Some(o0) = traj.outputs.first() else {
        return Ok(());
    };
    let mut header = vec!["t".to_string()];
    header.extend((1..=layout.n).map(|i| format!("x{i}")));
    header.extend((1..=o0.u.len()).map(|i| format!("u{i}")));
    header.extend((1..=o0.y.len()).map(|i| format!("y{i}")));
    header.extend((1..=o0.eps.len()).map(|i| format!("eps{i}")));
    header.push("cost".into());
    writeln!(out, "{}", header.join(","))?;
    for ((t, z), o) in traj.times.iter().zip(&traj.states).zip(&traj.outputs) {
        let mut row = vec![format!("{t:.14e}")];
        row.extend(z.rows(0, layout.n).iter().map(|v| format!("{v:.14e}")));
        row.extend(o.u.iter().map(|v| format!("{v:.14e}")));
        row.extend(o.y.iter().map(|v| format!("{v:.14e}")));
        row.extend(o.eps.iter().map(|v| format!("{v:.14e}")));
        row.push(format!("{:.14e}", o.cost));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
