//! Steady-state convex programs, KKT residuals and the ground-truth
//! optimizer oracle.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matlib::{self, hstack, numerical_rank, range_basis, vstack, zeros, Matrix, Vector, DEFAULT_TOL};
use crate::plant::PlantMatrices;
use crate::subspaces::equilibrium_geometry;

/// `½yᵀMy − yᵀNw`
#[derive(Debug, Clone, PartialEq)]
pub struct QPData {
    pub m: Matrix,
    pub n: Matrix,
}

impl QPData {
    pub fn new(m: Matrix, n: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if n.nrows() != m.nrows() {
            return Err(Error::dim("QP N rows", m.nrows(), n.nrows()));
        }
        matlib::check_finite(&m, "QP M")?;
        matlib::check_finite(&n, "QP N")?;
        let asym = matlib::max_abs(&(&m - m.transpose()));
        if asym > 1e-12 * (1.0 + matlib::max_abs(&m)) {
            return Err(Error::Invalid(format!(
                "QP cost matrix is not symmetric (defect {asym:.3e})"
            )));
        }
        if m.nrows() > 0 {
            let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * (1.0 + matlib::max_abs(&m)) {
                return Err(Error::Invalid(format!(
                    "QP cost matrix is not PSD (min eigenvalue {min_eig:.3e})"
                )));
            }
        }
        Ok(QPData { m, n })
    }

    pub fn check_dims(&self, p: usize, nw: usize) -> Result<()> {
        if self.m.nrows() != p {
            return Err(Error::dim("QP M", p, self.m.nrows()));
        }
        if self.n.ncols() != nw {
            return Err(Error::dim("QP N columns", nw, self.n.ncols()));
        }
        Ok(())
    }
}

/// Differentiable scalar function of `(y, w)`.
pub trait SmoothFn: Send + Sync {
    fn value(&self, y: &Vector, w: &Vector) -> f64;
    fn gradient(&self, y: &Vector, w: &Vector) -> Vector;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothNorm {
    L2,
    L1Logcosh { beta: f64 },
    LinfLogsumexp { beta: f64 },
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Value and gradient of a (smoothed) norm.
pub fn smooth_norm(kind: SmoothNorm, y: &Vector) -> (f64, Vector) {
    match kind {
        SmoothNorm::L2 => {
            let r = y.norm();
            if r == 0.0 {
                (0.0, Vector::zeros(y.len()))
            } else {
                (r, y / r)
            }
        }
        SmoothNorm::L1Logcosh { beta } => {
            let v = y.iter().map(|&t| log_cosh(beta * t)).sum::<f64>() / beta;
            (v, y.map(|t| (beta * t).tanh()))
        }
        SmoothNorm::LinfLogsumexp { beta } => {
            let p = y.len();
            if p == 0 {
                return (0.0, Vector::zeros(0));
            }
            let s = y.iter().fold(0.0_f64, |a, t| a.max(beta * t.abs()));
            let mut total = 0.0;
            let mut g = Vector::zeros(p);
            for i in 0..p {
                let ep = (beta * y[i] - s).exp();
                let em = (-beta * y[i] - s).exp();
                total += ep + em;
                g[i] = ep - em;
            }
            let v = (s + total.ln() - (2.0 * p as f64).ln()) / beta;
            (v, g / total)
        }
    }
}

/// `weight · norm(S·y − R·w)`
#[derive(Debug, Clone, PartialEq)]
pub struct NormTerm {
    pub select: Matrix,
    pub reference: Matrix,
    pub weight: f64,
    pub kind: SmoothNorm,
}

#[derive(Clone)]
pub enum Objective {
    Quadratic(QPData),
    Norms(Vec<NormTerm>),
    Custom(Arc<dyn SmoothFn>),
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            Objective::Norms(t) => f.debug_tuple("Norms").field(t).finish(),
            Objective::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

// Central-difference Jacobian of a vector field.
fn fd_jacobian(f: &dyn Fn(&Vector) -> Vector, y: &Vector) -> Matrix {
    let h = 1e-6 * (1.0 + y.amax());
    let k = y.len();
    let f0 = f(y);
    let mut j = zeros(f0.len(), k);
    for i in 0..k {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[i] += h;
        ym[i] -= h;
        j.set_column(i, &((f(&yp) - f(&ym)) / (2.0 * h)));
    }
    j
}

impl Objective {
    pub fn value(&self, y: &Vector, w: &Vector) -> f64 {
        match self {
            Objective::Quadratic(q) => 0.5 * y.dot(&(&q.m * y)) - y.dot(&(&q.n * w)),
            Objective::Norms(terms) => terms
                .iter()
                .map(|t| t.weight * smooth_norm(t.kind, &(&t.select * y - &t.reference * w)).0)
                .sum(),
            Objective::Custom(f) => f.value(y, w),
        }
    }

    pub fn gradient(&self, y: &Vector, w: &Vector) -> Vector {
        match self {
            Objective::Quadratic(q) => &q.m * y - &q.n * w,
            Objective::Norms(terms) => {
                let mut g = Vector::zeros(y.len());
                for t in terms {
                    let (_, gn) = smooth_norm(t.kind, &(&t.select * y - &t.reference * w));
                    g += t.select.transpose() * gn * t.weight;
                }
                g
            }
            Objective::Custom(f) => f.gradient(y, w),
        }
    }

    pub fn hessian(&self, y: &Vector, w: &Vector) -> Matrix {
        match self {
            Objective::Quadratic(q) => q.m.clone(),
            _ => {
                let h = fd_jacobian(&|v: &Vector| self.gradient(v, w), y);
                (&h + h.transpose()) * 0.5
            }
        }
    }
}

/// Engineering inequality `f(y; w) ≤ 0`.
#[derive(Clone)]
pub enum Inequality {
    /// `aᵀy − cᵀw − b ≤ 0`
    Affine {
        a: Vector,
        c: Vector,
        b: f64,
    },
    Custom(Arc<dyn SmoothFn>),
}

impl fmt::Debug for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inequality::Affine { a, c, b } => f
                .debug_struct("Affine")
                .field("a", a)
                .field("c", c)
                .field("b", b)
                .finish(),
            Inequality::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Inequality {
    pub fn value(&self, y: &Vector, w: &Vector) -> f64 {
        match self {
            Inequality::Affine { a, c, b } => a.dot(y) - c.dot(w) - b,
            Inequality::Custom(f) => f.value(y, w),
        }
    }

    pub fn gradient(&self, y: &Vector, w: &Vector) -> Vector {
        match self {
            Inequality::Affine { a, .. } => a.clone(),
            Inequality::Custom(f) => f.gradient(y, w),
        }
    }

    fn hessian(&self, y: &Vector, w: &Vector) -> Matrix {
        match self {
            Inequality::Affine { a, .. } => zeros(a.len(), a.len()),
            Inequality::Custom(_) => {
                let h = fd_jacobian(&|v: &Vector| self.gradient(v, w), y);
                (&h + h.transpose()) * 0.5
            }
        }
    }
}

/// `minimize f0(y; w)` over the plant's steady states subject to `Hy = Lw`
/// and `f_i(y; w) ≤ 0`.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub p: usize,
    pub nw: usize,
    pub objective: Objective,
    pub h: Matrix,
    pub l: Matrix,
    pub inequalities: Vec<Inequality>,
}

impl ConvexProgram {
    pub fn new(
        p: usize,
        nw: usize,
        objective: Objective,
        h: Matrix,
        l: Matrix,
        inequalities: Vec<Inequality>,
    ) -> Result<Self> {
        if h.ncols() != p {
            return Err(Error::dim("H columns", p, h.ncols()));
        }
        if l.shape() != (h.nrows(), nw) {
            return Err(Error::dim(
                "L",
                format!("{}x{}", h.nrows(), nw),
                format!("{}x{}", l.nrows(), l.ncols()),
            ));
        }
        match &objective {
            Objective::Quadratic(q) => q.check_dims(p, nw)?,
            Objective::Norms(terms) => {
                for t in terms {
                    if t.select.ncols() != p || t.reference.ncols() != nw || t.reference.nrows() != t.select.nrows() {
                        return Err(Error::dim(
                            "norm term",
                            format!("k x {p} / k x {nw}"),
                            format!("{:?} / {:?}", t.select.shape(), t.reference.shape()),
                        ));
                    }
                }
            }
            Objective::Custom(_) => {}
        }
        for ineq in &inequalities {
            if let Inequality::Affine { a, c, .. } = ineq {
                if a.len() != p || c.len() != nw {
                    return Err(Error::dim(
                        "affine inequality",
                        format!("{p}/{nw}"),
                        format!("{}/{}", a.len(), c.len()),
                    ));
                }
            }
        }
        Ok(ConvexProgram {
            p,
            nw,
            objective,
            h,
            l,
            inequalities,
        })
    }

    /// Equality-constrained QP with `Hy = Lw`.
    pub fn qp(qp: QPData, h: Matrix, l: Matrix) -> Result<Self> {
        let (p, nw) = (qp.m.nrows(), qp.n.ncols());
        Self::new(p, nw, Objective::Quadratic(qp), h, l, Vec::new())
    }

    pub fn n_ec(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_ic(&self) -> usize {
        self.inequalities.len()
    }

    /// QP data when the program is an equality-constrained QP.
    pub fn as_qp(&self) -> Option<&QPData> {
        match &self.objective {
            Objective::Quadratic(q) if self.inequalities.is_empty() => Some(q),
            _ => None,
        }
    }

    /// Stacked inequality values `𝖿(y; w)`.
    pub fn f_values(&self, y: &Vector, w: &Vector) -> Vector {
        Vector::from_iterator(self.n_ic(), self.inequalities.iter().map(|f| f.value(y, w)))
    }

    /// `∇f0 + Σ νᵢ∇fᵢ`
    pub fn lagrangian_gradient(&self, y: &Vector, w: &Vector, nu: &Vector) -> Vector {
        let mut g = self.objective.gradient(y, w);
        for (i, f) in self.inequalities.iter().enumerate() {
            if nu[i] != 0.0 {
                g += f.gradient(y, w) * nu[i];
            }
        }
        g
    }

    /// Largest relative mismatch between each registered gradient and a
    /// central finite difference at `(y, w)`.
    pub fn gradient_check(&self, y: &Vector, w: &Vector) -> f64 {
        let mut worst = fd_gradient_error(
            &|v: &Vector| self.objective.value(v, w),
            &self.objective.gradient(y, w),
            y,
        );
        for f in &self.inequalities {
            worst = worst.max(fd_gradient_error(&|v: &Vector| f.value(v, w), &f.gradient(y, w), y));
        }
        worst
    }
}

/// Relative error between `grad` and the central difference of `f` at `y`
/// with step `1e-6·(1 + ‖y‖)`.
pub fn fd_gradient_error(f: &dyn Fn(&Vector) -> f64, grad: &Vector, y: &Vector) -> f64 {
    let h = 1e-6 * (1.0 + y.norm());
    let mut fd = Vector::zeros(y.len());
    for i in 0..y.len() {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[i] += h;
        ym[i] -= h;
        fd[i] = (f(&yp) - f(&ym)) / (2.0 * h);
    }
    (grad - fd).amax() / (1.0_f64).max(grad.amax())
}

/// Primal point with multipliers for the G⊥-form KKT system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KKTPoint {
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktResidual {
    pub stationarity: Vec<f64>,
    pub primal: Vec<f64>,
    pub complementarity: Vec<f64>,
}

impl KktResidual {
    pub fn max_abs(&self) -> f64 {
        self.stationarity
            .iter()
            .chain(&self.primal)
            .chain(&self.complementarity)
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Residual blocks of the KKT system with equilibrium constraint
/// `G⊥ y = b`.
pub fn kkt_residual(
    prog: &ConvexProgram,
    gperp: &Matrix,
    b: &Vector,
    pt: &KKTPoint,
    w: &Vector,
) -> Result<KktResidual> {
    let y = Vector::from_column_slice(&pt.y);
    let lambda = Vector::from_column_slice(&pt.lambda);
    let mu = Vector::from_column_slice(&pt.mu);
    let nu = Vector::from_column_slice(&pt.nu);
    if y.len() != prog.p || gperp.ncols() != prog.p {
        return Err(Error::dim(
            "kkt y / G⊥ columns",
            prog.p,
            format!("{}/{}", y.len(), gperp.ncols()),
        ));
    }
    if lambda.len() != gperp.nrows() || b.len() != gperp.nrows() {
        return Err(Error::dim(
            "kkt λ / b",
            gperp.nrows(),
            format!("{}/{}", lambda.len(), b.len()),
        ));
    }
    if mu.len() != prog.n_ec() || nu.len() != prog.n_ic() {
        return Err(Error::dim(
            "kkt μ/ν",
            format!("{}/{}", prog.n_ec(), prog.n_ic()),
            format!("{}/{}", mu.len(), nu.len()),
        ));
    }
    let stat = prog.lagrangian_gradient(&y, w, &nu) + gperp.transpose() * &lambda + prog.h.transpose() * &mu;
    let fv = prog.f_values(&y, w);
    let mut primal: Vec<f64> = (gperp * &y - b).iter().copied().collect();
    primal.extend((&prog.h * &y - &prog.l * w).iter());
    primal.extend(fv.iter().map(|f| f.max(0.0)));
    let comp = fv.iter().zip(nu.iter()).map(|(f, n)| f * n).collect();
    Ok(KktResidual {
        stationarity: stat.iter().copied().collect(),
        primal,
        complementarity: comp,
    })
}

/// Ground-truth optimizer together with a steady state producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub y_star: Vector,
    pub x_bar: Vector,
    pub u_bar: Vector,
    pub kkt: KKTPoint,
    pub gperp: Matrix,
    pub b: Vector,
    pub active: Vec<usize>,
    pub cost: f64,
}

pub const MAX_ORACLE_INEQUALITIES: usize = 12;

struct Candidate {
    z: Vector,
    pi: Vector,
    nu: Vector,
    active: Vec<usize>,
}

/// Solves the steady-state program over `(x̄, ū)` directly, which avoids
/// ever forming the offset `b(w, δ)`.
pub fn oracle_optimal_output(prog: &ConvexProgram, pm: &PlantMatrices, w: &Vector) -> Result<OracleSolution> {
    pm.validate()?;
    if pm.p() != prog.p || pm.nw() != prog.nw || w.len() != prog.nw {
        return Err(Error::dim(
            "oracle p/nw",
            format!("{}/{}", prog.p, prog.nw),
            format!("{}/{}/{}", pm.p(), pm.nw(), w.len()),
        ));
    }
    let nic = prog.n_ic();
    if nic > MAX_ORACLE_INEQUALITIES {
        return Err(Error::TooManyInequalities(nic));
    }
    let (n, m) = (pm.n(), pm.m());
    let e = pm.cd();
    let aeq = vstack(&[&pm.ab(), &(&prog.h * &e)]);
    let mut beq = Vector::zeros(aeq.nrows());
    beq.rows_mut(0, n).copy_from(&(-(&pm.bw * w)));
    beq.rows_mut(n, prog.n_ec())
        .copy_from(&(&prog.l * w - &prog.h * (&pm.q * w)));
    let qw = &pm.q * w;

    let scale = 1.0 + beq.amax() + matlib::max_abs(&aeq);
    let mut found: Vec<Candidate> = Vec::new();
    let mut any_feasible = false;
    for mask in 0..(1usize << nic) {
        let active: Vec<usize> = (0..nic).filter(|i| mask >> i & 1 == 1).collect();
        let Some(c) = solve_active_set(prog, &e, &qw, &aeq, &beq, w, &active, scale) else {
            continue;
        };
        any_feasible = true;
        let y = &e * &c.z + &qw;
        let fv = prog.f_values(&y, w);
        let ftol = 1e-9 * (1.0 + y.amax());
        let primal_ok = (0..nic).all(|i| active.contains(&i) || fv[i] <= ftol);
        let dual_ok = c.nu.iter().all(|&v| v >= -1e-9);
        if primal_ok && dual_ok {
            found.push(c);
        }
    }
    if found.is_empty() {
        return Err(Error::Infeasible(if any_feasible {
            "no active set satisfies the KKT conditions".into()
        } else {
            "equilibrium and equality constraints are inconsistent".into()
        }));
    }
    let ys: Vec<Vector> = found.iter().map(|c| &e * &c.z + &qw).collect();
    for y in &ys[1..] {
        if (y - &ys[0]).amax() > 1e-6 * (1.0 + ys[0].amax()) {
            return Err(Error::Nonunique("two KKT points with different outputs".into()));
        }
    }
    let best = found.remove(0);
    let y = ys[0].clone();

    // Curvature of the Lagrangian on the output directions left free by the
    // constraints that are binding.
    let mut hl = prog.objective.hessian(&y, w);
    for (k, &i) in best.active.iter().enumerate() {
        if best.nu[k] != 0.0 {
            hl += prog.inequalities[i].hessian(&y, w) * best.nu[k];
        }
    }
    let mut cons = aeq.clone();
    for &i in &best.active {
        let g = prog.inequalities[i].gradient(&y, w);
        let gr = Matrix::from_iterator(1, e.ncols(), (e.transpose() * &g).iter().copied());
        cons = vstack(&[&cons, &gr]);
    }
    let zfree = matlib::null_basis(&cons, DEFAULT_TOL).basis;
    let dirs = range_basis(&(&e * &zfree), DEFAULT_TOL).basis;
    if dirs.ncols() > 0 {
        let red = dirs.transpose() * &hl * &dirs;
        let red = (&red + red.transpose()) * 0.5;
        let min_eig = red.symmetric_eigen().eigenvalues.min();
        if min_eig <= 1e-10 * (1.0 + matlib::max_abs(&hl)) {
            return Err(Error::Nonunique(format!(
                "objective is flat along a feasible output direction (curvature {min_eig:.3e})"
            )));
        }
    }

    let mut nu = Vector::zeros(nic);
    for (k, &i) in best.active.iter().enumerate() {
        nu[i] = best.nu[k].max(0.0);
    }
    let mu = best.pi.rows(n, prog.n_ec()).into_owned();
    let geom = equilibrium_geometry(pm, &prog.h)?;
    let g = prog.lagrangian_gradient(&y, w, &nu) + prog.h.transpose() * &mu;
    let lambda = -(&geom.gperp * g);
    let b = &geom.gperp * &y;
    let x_bar = best.z.rows(0, n).into_owned();
    let u_bar = best.z.rows(n, m).into_owned();
    Ok(OracleSolution {
        cost: prog.objective.value(&y, w),
        kkt: KKTPoint {
            y: y.iter().copied().collect(),
            lambda: lambda.iter().copied().collect(),
            mu: mu.iter().copied().collect(),
            nu: nu.iter().copied().collect(),
        },
        y_star: y,
        x_bar,
        u_bar,
        gperp: geom.gperp,
        b,
        active: best.active,
    })
}

// Newton iteration on the KKT system with the inequalities in `active`
// treated as equalities. Returns `None` when the system has no solution.
#[allow(clippy::too_many_arguments)]
fn solve_active_set(
    prog: &ConvexProgram,
    e: &Matrix,
    qw: &Vector,
    aeq: &Matrix,
    beq: &Vector,
    w: &Vector,
    active: &[usize],
    scale: f64,
) -> Option<Candidate> {
    let nz = e.ncols();
    let ne = aeq.nrows();
    let na = active.len();
    let dim = nz + ne + na;

    let residual = |z: &Vector, pi: &Vector, nu: &Vector| -> Vector {
        let y = e * z + qw;
        let mut g = prog.objective.gradient(&y, w);
        for (k, &i) in active.iter().enumerate() {
            g += prog.inequalities[i].gradient(&y, w) * nu[k];
        }
        let mut r = Vector::zeros(dim);
        r.rows_mut(0, nz).copy_from(&(e.transpose() * g + aeq.transpose() * pi));
        r.rows_mut(nz, ne).copy_from(&(aeq * z - beq));
        for (k, &i) in active.iter().enumerate() {
            r[nz + ne + k] = prog.inequalities[i].value(&y, w);
        }
        r
    };

    let mut z = matlib::solve_vec(aeq, beq).ok()?;
    if aeq.nrows() == 0 {
        z = Vector::zeros(nz);
    }
    let mut pi = Vector::zeros(ne);
    let mut nu = Vector::zeros(na);
    let mut r = residual(&z, &pi, &nu);
    let tol = 1e-11 * scale;
    for _ in 0..100 {
        if r.amax() <= tol {
            break;
        }
        let y = e * &z + qw;
        let mut hl = prog.objective.hessian(&y, w);
        let mut jg = zeros(na, prog.p);
        for (k, &i) in active.iter().enumerate() {
            hl += prog.inequalities[i].hessian(&y, w) * nu[k];
            jg.set_row(k, &prog.inequalities[i].gradient(&y, w).transpose());
        }
        let jge = &jg * e;
        let top = hstack(&[&(e.transpose() * &hl * e), &aeq.transpose(), &jge.transpose()]);
        let mid = hstack(&[aeq, &zeros(ne, ne), &zeros(ne, na)]);
        let bot = hstack(&[&jge, &zeros(na, ne), &zeros(na, na)]);
        let jac = vstack(&[&top, &mid, &bot]);
        let step = matlib::solve_vec(&jac, &(-&r)).ok()?;
        let mut t = 1.0;
        let r0 = r.norm();
        loop {
            let zn = &z + step.rows(0, nz) * t;
            let pn = &pi + step.rows(nz, ne) * t;
            let nn = &nu + step.rows(nz + ne, na) * t;
            let rn = residual(&zn, &pn, &nn);
            if rn.norm() < (1.0 - 1e-4 * t) * r0 || t < 1e-6 {
                z = zn;
                pi = pn;
                nu = nn;
                r = rn;
                break;
            }
            t *= 0.5;
        }
    }
    // Least-squares steps leave a residual when the active equalities are
    // inconsistent; accept only genuine solutions.
    if r.amax() <= 1e-8 * scale {
        Some(Candidate {
            z,
            pi,
            nu,
            active: active.to_vec(),
        })
    } else {
        None
    }
}

/// Smallest value of `vᵀMv` over unit vectors `v ∈ range T0`.
pub fn min_curvature_on_range(m: &Matrix, t0: &Matrix) -> f64 {
    let u = range_basis(t0, DEFAULT_TOL).basis;
    if u.ncols() == 0 {
        return f64::INFINITY;
    }
    let red = u.transpose() * m * &u;
    let red = (&red + red.transpose()) * 0.5;
    red.symmetric_eigen().eigenvalues.min()
}

/// Whether `M` is positive definite on `range T0`, i.e. the QP with feasible
/// directions `range T0` has a unique optimizer.
pub fn unique_optimizer_check(m: &Matrix, t0: &Matrix) -> bool {
    min_curvature_on_range(m, t0) > 1e-9 * (1.0 + matlib::max_abs(m))
}

/// Whether `[G⊥; H]` has full row rank.
pub fn nonredundant_check(gperp: &Matrix, h: &Matrix) -> bool {
    let s = vstack(&[gperp, h]);
    numerical_rank(&s, 1e-9) == s.nrows()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{col, diag, eye, mat, row, vector};

    fn vb_plant() -> PlantMatrices {
        PlantMatrices::new(
            mat(2, 2, &[-1., 0., 1., -1.]),
            col(&[1., -1.]),
            col(&[1., 1.]),
            mat(2, 2, &[1., 0., 0., 0.]),
            col(&[0., 1.]),
            zeros(2, 1),
        )
        .unwrap()
    }

    #[test]
    fn qp_validation() {
        assert!(QPData::new(mat(2, 2, &[1., 1., 0., 1.]), zeros(2, 1)).is_err());
        assert!(QPData::new(diag(&[1., -1.]), zeros(2, 1)).is_err());
        assert!(QPData::new(diag(&[1., 0.]), zeros(2, 1)).is_ok());
    }

    #[test]
    fn smooth_norms() {
        let (v, g) = smooth_norm(SmoothNorm::L1Logcosh { beta: 20. }, &vector(&[0.]));
        assert_eq!(v, 0.);
        assert_eq!(g[0], 0.);
        let (v, _) = smooth_norm(SmoothNorm::L1Logcosh { beta: 20. }, &vector(&[1.]));
        assert!((v - (1. - std::f64::consts::LN_2 / 20.)).abs() < 1e-12);
        assert!((v - 1.).abs() < 0.05);
        let (v, g) = smooth_norm(SmoothNorm::L2, &vector(&[0., 0.]));
        assert_eq!(v, 0.);
        assert_eq!(g.amax(), 0.);
        let (v, g) = smooth_norm(SmoothNorm::L2, &vector(&[3., 4.]));
        assert!((v - 5.).abs() < 1e-15 && (g[0] - 0.6).abs() < 1e-15);
        let (v, _) = smooth_norm(SmoothNorm::LinfLogsumexp { beta: 50. }, &vector(&[0., 0., 0.]));
        assert!(v.abs() < 1e-15);
        let (v, _) = smooth_norm(SmoothNorm::LinfLogsumexp { beta: 50. }, &vector(&[1., -3., 0.5]));
        assert!((v - 3.).abs() < 0.05);
    }

    #[test]
    fn unconstrained_quadratic_stationary_at_zero() {
        let prog = ConvexProgram::qp(QPData::new(eye(2), zeros(2, 1)).unwrap(), zeros(0, 2), zeros(0, 1)).unwrap();
        let pt = KKTPoint {
            y: vec![0., 0.],
            lambda: vec![],
            mu: vec![],
            nu: vec![],
        };
        let r = kkt_residual(&prog, &zeros(0, 2), &Vector::zeros(0), &pt, &vector(&[0.])).unwrap();
        assert_eq!(r.max_abs(), 0.);
    }

    #[test]
    fn oracle_on_two_state_example() {
        let prog = ConvexProgram::qp(QPData::new(eye(2), zeros(2, 1)).unwrap(), zeros(0, 2), zeros(0, 1)).unwrap();
        let sol = oracle_optimal_output(&prog, &vb_plant(), &vector(&[0.])).unwrap();
        assert!(sol.y_star.amax() < 1e-14);
        let r = kkt_residual(&prog, &sol.gperp, &sol.b, &sol.kkt, &vector(&[0.])).unwrap();
        assert!(r.max_abs() <= 1e-12);
        // With a disturbance the equilibrium line y1 − y2 = w shifts the optimizer.
        let sol = oracle_optimal_output(&prog, &vb_plant(), &vector(&[1.])).unwrap();
        assert!((sol.y_star[0] - 0.5).abs() < 1e-12 && (sol.y_star[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_static_plant_by_elimination() {
        // y = G u + Gw w, minimize ½yᵀMy with y1 + y2 + y3 = 0.
        let g = mat(3, 2, &[1., 0., 0., 1., 0., 1.]);
        let gw = col(&[1., 2., 3.]);
        let pm = PlantMatrices::new(zeros(0, 0), zeros(0, 2), zeros(0, 1), zeros(3, 0), g, gw).unwrap();
        let prog = ConvexProgram::qp(
            QPData::new(diag(&[0.1, 0.2, 0.3]), zeros(3, 1)).unwrap(),
            row(&[1., 1., 1.]),
            zeros(1, 1),
        )
        .unwrap();
        let sol = oracle_optimal_output(&prog, &pm, &vector(&[1.])).unwrap();
        // u1 = −6 − 2u2; cost 0.1(u1+1)² + 0.2(u2+2)² + 0.3(u2+3)² minimized at u2 = −23/9.
        let u2 = -23.0 / 9.0;
        let u1 = -6.0 - 2.0 * u2;
        let want = [u1 + 1.0, u2 + 2.0, u2 + 3.0];
        for (got, want) in sol.y_star.iter().zip(want) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!((sol.cost - 0.0611111111111111).abs() < 1e-10);
    }

    #[test]
    fn oracle_detects_flat_objective() {
        let prog = ConvexProgram::qp(QPData::new(zeros(2, 2), zeros(2, 1)).unwrap(), zeros(0, 2), zeros(0, 1)).unwrap();
        assert!(matches!(
            oracle_optimal_output(&prog, &vb_plant(), &vector(&[0.])),
            Err(Error::Nonunique(_))
        ));
    }

    #[test]
    fn oracle_with_active_inequality() {
        // Minimize ½|y|² on the line y1 − y2 = w with y1 ≥ 1 (i.e. 1 − y1 ≤ 0).
        let ineq = Inequality::Affine {
            a: vector(&[-1., 0.]),
            c: vector(&[0.]),
            b: -1.0,
        };
        let prog = ConvexProgram::new(
            2,
            1,
            Objective::Quadratic(QPData::new(eye(2), zeros(2, 1)).unwrap()),
            zeros(0, 2),
            zeros(0, 1),
            vec![ineq],
        )
        .unwrap();
        let w = vector(&[0.]);
        let sol = oracle_optimal_output(&prog, &vb_plant(), &w).unwrap();
        assert!((sol.y_star[0] - 1.).abs() < 1e-10 && (sol.y_star[1] - 1.).abs() < 1e-10);
        assert_eq!(sol.active, vec![0]);
        assert!(sol.kkt.nu[0] > 0.);
        let r = kkt_residual(&prog, &sol.gperp, &sol.b, &sol.kkt, &w).unwrap();
        assert!(r.max_abs() < 1e-8);
    }

    #[test]
    fn oracle_reports_infeasible_constraints() {
        // Static plant y = u (scalar twice): y1 = y2 forced, plus H asks y1 − y2 = 1.
        let pm = PlantMatrices::new(
            zeros(0, 0),
            zeros(0, 1),
            zeros(0, 1),
            zeros(2, 0),
            col(&[1., 1.]),
            zeros(2, 1),
        )
        .unwrap();
        let prog = ConvexProgram::qp(QPData::new(eye(2), zeros(2, 1)).unwrap(), row(&[1., -1.]), col(&[1.])).unwrap();
        assert!(matches!(
            oracle_optimal_output(&prog, &pm, &vector(&[1.])),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn too_many_inequalities_refused() {
        let ineqs = (0..13)
            .map(|_| Inequality::Affine {
                a: vector(&[1., 0.]),
                c: vector(&[0.]),
                b: 10.,
            })
            .collect();
        let prog = ConvexProgram::new(
            2,
            1,
            Objective::Quadratic(QPData::new(eye(2), zeros(2, 1)).unwrap()),
            zeros(0, 2),
            zeros(0, 1),
            ineqs,
        )
        .unwrap();
        assert_eq!(
            oracle_optimal_output(&prog, &vb_plant(), &vector(&[0.])),
            Err(Error::TooManyInequalities(13))
        );
    }

    #[test]
    fn uniqueness_and_redundancy_checks() {
        let t0 = mat(3, 2, &[1., 0., 0., 1., 0., 0.]);
        assert!(unique_optimizer_check(&eye(3), &t0));
        assert!(!unique_optimizer_check(&zeros(3, 3), &t0));
        // Positive definite on the range even though T0 repeats a column.
        let t0_dup = mat(3, 2, &[1., 1., 0., 0., 0., 0.]);
        assert!(unique_optimizer_check(&diag(&[1., 0., 0.]), &t0_dup));
        assert!(nonredundant_check(&row(&[1., 0.]), &row(&[0., 1.])));
        assert!(!nonredundant_check(&row(&[1., 0.]), &row(&[1., 0.])));
    }

    #[test]
    fn norm_objective_gradients_match_fd() {
        let terms = vec![
            NormTerm {
                select: mat(2, 3, &[1., 0., 0., 0., 1., 0.]),
                reference: mat(2, 1, &[1., -1.]),
                weight: 1.0,
                kind: SmoothNorm::L2,
            },
            NormTerm {
                select: mat(1, 3, &[0., 0., 1.]),
                reference: zeros(1, 1),
                weight: 0.05,
                kind: SmoothNorm::L1Logcosh { beta: 20. },
            },
        ];
        let prog = ConvexProgram::new(3, 1, Objective::Norms(terms), zeros(0, 3), zeros(0, 1), vec![]).unwrap();
        let err = prog.gradient_check(&vector(&[0.3, -0.2, 0.1]), &vector(&[0.5]));
        assert!(err < 1e-5, "{err}");
    }
}
