//! Stabilizability and detectability tests for augmented plants, the clause
//! checkers that predict them, and stabilizer synthesis.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matlib::{
    self, cluster_eigenvalues, eigenvalues, eye, hstack, numerical_rank, range_basis, subspace_equal, vstack, zeros,
    Matrix, C64, DEFAULT_TOL,
};
use crate::optprob::{min_curvature_on_range, nonredundant_check, QPData};
use crate::plant::{build_augmented_qp, AugmentedPlant, OmVariant, PlantMatrices};
use crate::subspaces::{equilibrium_geometry, SUBSPACE_TOL};

/// Modes with `Re λ ≥ −PBH_TOL·max(1, ‖A‖)` are tested.
pub const PBH_TOL: f64 = 1e-8;
/// Relative rank threshold used by the PBH rank tests.
pub const PBH_RANK_TOL: f64 = 1e-9;
/// Spectral gaps below this make a verdict borderline.
pub const BORDERLINE_GAP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PbhResult {
    pub holds: bool,
    /// Worst separation between the decisive singular value and the rank
    /// threshold over all tested modes.
    pub min_gap: f64,
    pub failing_modes: Vec<(f64, f64)>,
}

fn complex(m: &Matrix) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

// Singular values of a complex matrix, descending. Computed from the real
// embedding [[X, −Y], [Y, X]], which repeats each of them twice; nalgebra's
// complex SVD can fail to terminate on some inputs.
fn complex_singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Vec::new();
    }
    let re = m.map(|z| z.re);
    let im = m.map(|z| z.im);
    let mut emb = Matrix::zeros(2 * r, 2 * c);
    emb.view_mut((0, 0), (r, c)).copy_from(&re);
    emb.view_mut((0, c), (r, c)).copy_from(&(-&im));
    emb.view_mut((r, 0), (r, c)).copy_from(&im);
    emb.view_mut((r, c), (r, c)).copy_from(&re);
    let mut s = matlib::singular_values(&emb);
    s.sort_by(|a, b| b.total_cmp(a));
    s.into_iter().step_by(2).collect()
}

/// Eigenvalue-wise rank test of `[λI − A, B]`.
pub fn pbh_stabilizable_info(a: &Matrix, b: &Matrix, tol: f64) -> Result<PbhResult> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(Error::dim("PBH B rows", n, b.nrows()));
    }
    matlib::check_finite(a, "PBH A")?;
    matlib::check_finite(b, "PBH B")?;
    let scale = matlib::max_abs(a).max(matlib::max_abs(b)).max(1.0);
    let anorm = matlib::max_abs(a).max(1.0);
    let thr = PBH_RANK_TOL * scale * (n + b.ncols()).max(1) as f64;
    let mut out = PbhResult {
        holds: true,
        min_gap: f64::INFINITY,
        failing_modes: Vec::new(),
    };
    let eigs = cluster_eigenvalues(&eigenvalues(a)?, 1e-6);
    let ac = complex(a);
    let bc = complex(b);
    for mut lam in eigs {
        if lam.norm() < 1e-9 * anorm {
            lam = C64::new(0.0, 0.0);
        }
        if lam.re < -tol * anorm {
            continue;
        }
        let li = DMatrix::<C64>::identity(n, n) * lam - &ac;
        let mut m = DMatrix::<C64>::zeros(n, n + b.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&li);
        m.view_mut((0, n), (n, b.ncols())).copy_from(&bc);
        let s = complex_singular_values(&m);
        let rank = s.iter().filter(|v| **v > thr).count();
        let gap = if rank == n {
            s[n - 1] / thr
        } else if rank == 0 {
            f64::INFINITY
        } else {
            s[rank - 1] / s[rank].max(1e-300)
        };
        out.min_gap = out.min_gap.min(gap);
        if rank < n {
            out.holds = false;
            out.failing_modes.push((lam.re, lam.im));
        }
    }
    Ok(out)
}

pub fn pbh_stabilizable(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    pbh_stabilizable_info(a, b, tol).map(|r| r.holds).unwrap_or(false)
}

/// Dual test on `[λI − Aᵀ, Cᵀ]`.
pub fn pbh_detectable_info(c: &Matrix, a: &Matrix, tol: f64) -> Result<PbhResult> {
    if c.ncols() != a.nrows() {
        return Err(Error::dim("PBH C columns", a.nrows(), c.ncols()));
    }
    pbh_stabilizable_info(&a.transpose(), &c.transpose(), tol)
}

pub fn pbh_detectable(c: &Matrix, a: &Matrix, tol: f64) -> bool {
    pbh_detectable_info(c, a, tol).map(|r| r.holds).unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

impl Clause {
    fn new(name: &str, holds: bool, detail: String) -> Self {
        Clause {
            name: name.to_string(),
            holds,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub clauses: Vec<Clause>,
    pub overall: bool,
    /// Direct PBH verdict on the assembled augmented plant, when computed.
    pub pbh: Option<bool>,
    /// Smallest rank gap seen by the direct test.
    pub min_gap: f64,
    /// The two verdicts differ but the rank decisions were too close to call.
    pub borderline: bool,
}

impl ConditionReport {
    fn from_clauses(clauses: Vec<Clause>) -> Self {
        let overall = clauses.iter().all(|c| c.holds);
        ConditionReport {
            clauses,
            overall,
            pbh: None,
            min_gap: f64::INFINITY,
            borderline: false,
        }
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

fn stab_detect_clause(pm: &PlantMatrices) -> Result<Clause> {
    let s = pbh_stabilizable_info(&pm.a, &pm.b, PBH_TOL)?;
    let d = pbh_detectable_info(&pm.cm, &pm.a, PBH_TOL)?;
    Ok(Clause::new(
        "stabilizable_detectable",
        s.holds && d.holds,
        format!("(A,B) stabilizable: {}, (Cm,A) detectable: {}", s.holds, d.holds),
    ))
}

/// Solvability conditions for the plant alone: stabilizable and detectable,
/// and `[A B; C D]` of full row rank.
pub fn plant_conditions(pm: &PlantMatrices) -> Result<ConditionReport> {
    pm.validate()?;
    let info = matlib::rank_info(&pm.system_matrix(), DEFAULT_TOL);
    let need = pm.n() + pm.p();
    Ok(ConditionReport::from_clauses(vec![
        stab_detect_clause(pm)?,
        Clause::new(
            "full_row_rank",
            info.rank == need,
            format!("rank [A B; C D] = {}, required {need}, gap {:.3e}", info.rank, info.gap),
        ),
    ]))
}

fn unique_clause(m: &Matrix, t: &Matrix) -> Clause {
    let c = min_curvature_on_range(m, t);
    Clause::new(
        "unique_optimizer",
        c > 1e-9 * (1.0 + matlib::max_abs(m)),
        format!("min curvature on feasible directions {c:.3e}"),
    )
}

fn full_col_rank_clause(name: &str, t: &Matrix) -> Clause {
    let r = numerical_rank(t, DEFAULT_TOL);
    Clause::new(name, r == t.ncols(), format!("rank {r} of {} columns", t.ncols()))
}

fn nonredundant_clause(gperp: &Matrix, h: &Matrix) -> Clause {
    let s = vstack(&[gperp, h]);
    Clause::new(
        "nonredundant",
        nonredundant_check(gperp, h),
        format!("rank [G⊥; H] = {} of {} rows", numerical_rank(&s, 1e-9), s.nrows()),
    )
}

fn require_same_range(basis: &Matrix, target: &matlib::SubspaceBasis, what: &str) -> Result<()> {
    let r = range_basis(basis, DEFAULT_TOL);
    if !subspace_equal(&r, target, SUBSPACE_TOL)? {
        return Err(Error::Invalid(format!(
            "range of {what} does not match the equilibrium geometry at this sample"
        )));
    }
    Ok(())
}

/// Direct stabilizability and detectability of an augmented plant.
pub fn augmented_pbh(aug: &AugmentedPlant) -> Result<(bool, f64)> {
    let s = pbh_stabilizable_info(&aug.a, &aug.b, PBH_TOL)?;
    let d = pbh_detectable_info(&aug.c, &aug.a, PBH_TOL)?;
    Ok((s.holds && d.holds, s.min_gap.min(d.min_gap)))
}

fn cross_validate(mut report: ConditionReport, aug: &AugmentedPlant) -> Result<ConditionReport> {
    let (direct, gap) = augmented_pbh(aug)?;
    report.pbh = Some(direct);
    report.min_gap = gap;
    if direct != report.overall {
        if gap >= BORDERLINE_GAP {
            return Err(Error::Disagreement(format!(
                "clauses say {}, PBH says {direct} (gap {gap:.3e})",
                report.overall
            )));
        }
        report.borderline = true;
    }
    Ok(report)
}

/// Clause checker for the RFS model of an equality-constrained QP, cross
/// validated against PBH on the assembled augmented plant.
pub fn rfs_conditions(pm: &PlantMatrices, qp: &QPData, h: &Matrix, l: &Matrix, t0: &Matrix) -> Result<ConditionReport> {
    let geom = equilibrium_geometry(pm, h)?;
    require_same_range(t0, &geom.t, "T0")?;
    let report = ConditionReport::from_clauses(vec![
        stab_detect_clause(pm)?,
        nonredundant_clause(&geom.gperp, h),
        unique_clause(&qp.m, t0),
        full_col_rank_clause("basis_full_column_rank", t0),
    ]);
    let aug = build_augmented_qp(pm, qp, h, l, OmVariant::Rfs, t0)?;
    cross_validate(report, &aug)
}

/// Clause checker for the ROS model.
pub fn ros_conditions(pm: &PlantMatrices, qp: &QPData, h: &Matrix, l: &Matrix, g0: &Matrix) -> Result<ConditionReport> {
    let geom = equilibrium_geometry(pm, h)?;
    require_same_range(g0, &geom.range_g(), "G0")?;
    let report = ConditionReport::from_clauses(vec![
        stab_detect_clause(pm)?,
        nonredundant_clause(&geom.gperp, h),
        unique_clause(&qp.m, &geom.t.basis),
        full_col_rank_clause("basis_full_column_rank", g0),
    ]);
    let aug = build_augmented_qp(pm, qp, h, l, OmVariant::Ros, g0)?;
    cross_validate(report, &aug)
}

/// Clause checker for the reduced-error model.
pub fn rerfs_conditions(
    pm: &PlantMatrices,
    qp: &QPData,
    h: &Matrix,
    l: &Matrix,
    t0: &Matrix,
) -> Result<ConditionReport> {
    let geom = equilibrium_geometry(pm, h)?;
    require_same_range(t0, &geom.t, "T0")?;
    let nec = h.nrows();
    let hg = range_basis(&(h * &geom.g), DEFAULT_TOL);
    let tt = range_basis(&t0.transpose(), DEFAULT_TOL);
    let fix = |s: matlib::SubspaceBasis| {
        if s.ambient_dim == nec {
            s
        } else {
            matlib::SubspaceBasis::empty(nec, DEFAULT_TOL)
        }
    };
    let inter = matlib::subspace_intersection(&fix(hg).complement(), &fix(tt).complement())?;
    let report = ConditionReport::from_clauses(vec![
        stab_detect_clause(pm)?,
        unique_clause(&qp.m, t0),
        Clause::new(
            "complement_intersection_trivial",
            inter.is_empty(),
            format!("dim of intersection {}", inter.dim()),
        ),
    ]);
    let aug = build_augmented_qp(pm, qp, h, l, OmVariant::Rerfs, t0)?;
    cross_validate(report, &aug)
}

/// Dispatches to the checker matching `variant`.
pub fn om_conditions(
    variant: OmVariant,
    pm: &PlantMatrices,
    qp: &QPData,
    h: &Matrix,
    l: &Matrix,
    basis: &Matrix,
) -> Result<ConditionReport> {
    match variant {
        OmVariant::Rfs => rfs_conditions(pm, qp, h, l, basis),
        OmVariant::Ros => ros_conditions(pm, qp, h, l, basis),
        OmVariant::Rerfs => rerfs_conditions(pm, qp, h, l, basis),
    }
}

/// `u = −Kx·x − Kξ·ξ − Kη·η − Kε·ε` with `ξ = (ν, μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub kx: Matrix,
    pub kxi: Matrix,
    pub keta: Matrix,
    pub keps: Matrix,
}

impl Gains {
    pub fn zero(m: usize, n: usize, n_xi: usize, n_eta: usize) -> Self {
        Gains {
            kx: zeros(m, n),
            kxi: zeros(m, n_xi),
            keta: zeros(m, n_eta),
            keps: zeros(m, n_eta),
        }
    }

    pub fn m(&self) -> usize {
        self.kx.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlLaw {
    Gains(Gains),
    /// `uᵢ = (η − bᵢ)/aᵢ` for a scalar integrator state.
    InverseGradient {
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilizerKind {
    StaticGains,
    LqrStateFeedback,
    InverseGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stabilizer {
    pub kind: StabilizerKind,
    pub law: ControlLaw,
}

impl Stabilizer {
    pub fn gains(g: Gains) -> Self {
        Stabilizer {
            kind: StabilizerKind::StaticGains,
            law: ControlLaw::Gains(g),
        }
    }

    pub fn inverse_gradient(a: Vec<f64>, b: Vec<f64>) -> Self {
        Stabilizer {
            kind: StabilizerKind::InverseGradient,
            law: ControlLaw::InverseGradient { a, b },
        }
    }

    /// Linear part `(Kx, Kξ, Kη, Kε)` with the constant offset of the
    /// inverse-gradient law dropped.
    pub fn linear_gains(&self, n: usize, n_xi: usize) -> Result<Gains> {
        match &self.law {
            ControlLaw::Gains(g) => Ok(g.clone()),
            ControlLaw::InverseGradient { a, .. } => {
                let m = a.len();
                let mut g = Gains::zero(m, n, n_xi, 1);
                for (i, ai) in a.iter().enumerate() {
                    g.keta[(i, 0)] = -1.0 / ai;
                }
                Ok(g)
            }
        }
    }
}

/// Continuous-time LQR gain `K` (with `u = −K·z`) from the stable invariant
/// subspace of the Hamiltonian matrix.
pub fn lqr_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim(
            "LQR data",
            format!("A {n}x{n}, B {n}x{m}, Q {n}x{n}, R {m}x{m}"),
            format!("{:?} {:?} {:?} {:?}", a.shape(), b.shape(), q.shape(), r.shape()),
        ));
    }
    if n == 0 {
        return Ok(zeros(m, 0));
    }
    if !pbh_stabilizable(a, b, PBH_TOL) {
        return Err(Error::NotStabilizable);
    }
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Riccati("R is singular".into()))?;
    let ham = vstack(&[
        &hstack(&[a, &(-(b * &rinv * b.transpose()))]),
        &hstack(&[&(-q), &(-a.transpose())]),
    ]);
    let hscale = matlib::max_abs(&ham).max(1.0);
    let hc = complex(&ham);
    let eigs = eigenvalues(&ham)?;
    let stable: Vec<C64> = eigs.iter().copied().filter(|l| l.re < 0.0).collect();
    if stable.len() != n {
        return Err(Error::Riccati(format!(
            "Hamiltonian has {} stable eigenvalues, expected {n}",
            stable.len()
        )));
    }
    if stable.iter().any(|l| l.re > -1e-9 * hscale) {
        return Err(Error::Riccati("Hamiltonian eigenvalue on the imaginary axis".into()));
    }
    // Distinct stable eigenvalues with their multiplicities.
    let centers = cluster_eigenvalues(&stable, 1e-6);
    let mut cols: Vec<nalgebra::DVector<C64>> = Vec::with_capacity(n);
    for c in &centers {
        let k = stable
            .iter()
            .filter(|l| (**l - c).norm() <= 1e-6 * (1.0 + c.norm()) * 2.0)
            .count()
            .max(1);
        let shifted = &hc - DMatrix::<C64>::identity(2 * n, 2 * n) * *c;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Riccati("SVD failed".into()))?;
        let mut idx: Vec<usize> = (0..2 * n).collect();
        idx.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let worst = svd.singular_values[idx[k - 1]];
        if worst > 1e-6 * hscale {
            return Err(Error::Riccati(format!(
                "defective Hamiltonian eigenvalue {c} (residual {worst:.2e})"
            )));
        }
        for &i in idx.iter().take(k) {
            cols.push(vt.row(i).adjoint());
        }
    }
    if cols.len() != n {
        return Err(Error::Riccati("stable subspace has the wrong dimension".into()));
    }
    let v = DMatrix::<C64>::from_columns(&cols);
    let v1 = v.rows(0, n).into_owned();
    let v2 = v.rows(n, n).into_owned();
    let v1inv = v1
        .try_inverse()
        .ok_or_else(|| Error::Riccati("stable subspace is not a graph".into()))?;
    let xc = v2 * v1inv;
    let x = xc.map(|z| z.re);
    let x = (&x + x.transpose()) * 0.5;
    let k = &rinv * b.transpose() * x;
    let acl = a - b * &k;
    if matlib::spectral_abscissa(&acl)? >= 0.0 {
        return Err(Error::Riccati("Riccati solution does not stabilize".into()));
    }
    Ok(k)
}

/// LQR stabilizer on the full augmented state. `Q = I`, `R = I` by default.
pub fn synthesize_lqr(aug: &AugmentedPlant, q: Option<&Matrix>, r: Option<&Matrix>) -> Result<Stabilizer> {
    let dim = aug.dim();
    let m = aug.b.ncols();
    let q = q.cloned().unwrap_or_else(|| eye(dim));
    let r = r.cloned().unwrap_or_else(|| eye(m));
    let k = lqr_gain(&aug.a, &aug.b, &q, &r)?;
    Ok(Stabilizer {
        kind: StabilizerKind::LqrStateFeedback,
        law: ControlLaw::Gains(Gains {
            kx: k.columns(0, aug.n).into_owned(),
            kxi: k.columns(aug.n, aug.n_mu).into_owned(),
            keta: k.columns(aug.n + aug.n_mu, aug.n_eta).into_owned(),
            keps: zeros(m, aug.n_eta),
        }),
    })
}

/// State-feedback matrix `F` with `u = F·z + (offset terms)`, including the
/// algebraic loop through `Kε·Eu`.
pub fn feedback_matrix(aug: &AugmentedPlant, stab: &Stabilizer) -> Result<Matrix> {
    let g = stab.linear_gains(aug.n, aug.n_mu)?;
    let m = aug.b.ncols();
    if g.m() != m
        || g.kx.ncols() != aug.n
        || g.kxi.ncols() != aug.n_mu
        || g.keta.ncols() != aug.n_eta
        || g.keps.shape() != (m, aug.n_eta)
    {
        return Err(Error::dim(
            "stabilizer gains (Kx | Kξ | Kη | Kε)",
            format!("{m}x({} | {} | {} | {})", aug.n, aug.n_mu, aug.n_eta, aug.n_eta),
            format!(
                "{:?} | {:?} | {:?} | {:?}",
                g.kx.shape(),
                g.kxi.shape(),
                g.keta.shape(),
                g.keps.shape()
            ),
        ));
    }
    let kz = hstack(&[&g.kx, &g.kxi, &g.keta]);
    let loop_m = eye(m) + &g.keps * &aug.eps_u;
    let rhs = -(kz + &g.keps * &aug.eps_z);
    let inv = loop_m
        .try_inverse()
        .ok_or_else(|| Error::Invalid("algebraic loop I + Kε·Eu is singular".into()))?;
    Ok(inv * rhs)
}

/// `A_cl = Aaug + Baug·F` and its spectrum.
pub fn closed_loop_matrix(aug: &AugmentedPlant, stab: &Stabilizer) -> Result<(Matrix, Vec<C64>)> {
    let f = feedback_matrix(aug, stab)?;
    let acl = &aug.a + &aug.b * f;
    let spec = eigenvalues(&acl)?;
    Ok((acl, spec))
}

/// Spectral abscissa of the closed loop at each δ sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSpectrum {
    pub delta: Vec<f64>,
    pub abscissa: f64,
    pub hurwitz: bool,
}

pub fn spectrum_over_samples(
    up: &crate::plant::UncertainPlant,
    qp: &QPData,
    h: &Matrix,
    l: &Matrix,
    variant: OmVariant,
    basis: &Matrix,
    stab: &Stabilizer,
) -> Result<Vec<SampleSpectrum>> {
    let mut out = Vec::new();
    for d in &up.delta_samples {
        let pm = up.eval(d)?;
        let aug = build_augmented_qp(&pm, qp, h, l, variant, basis)?;
        let (_, spec) = closed_loop_matrix(&aug, stab)?;
        let abscissa = spec.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l.re));
        out.push(SampleSpectrum {
            delta: d.clone(),
            abscissa,
            hurwitz: abscissa < 0.0,
        });
    }
    Ok(out)
}

/// Eigenvalues sorted by real part, then imaginary part.
pub fn sorted_spectrum(mut s: Vec<C64>) -> Vec<C64> {
    s.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    s
}
