//! Optimality models: the dynamic filters whose zero-output equilibria pin
//! the plant output to the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{Matrix, Vector};
use crate::optprob::{oracle_optimal_output, ConvexProgram};
use crate::plant::{OmVariant, UncertainPlant};

/// Function whose zeros encode `α ≥ 0, β ≤ 0, αᵀβ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiNu {
    /// `max(α + β, 0) − α`
    #[default]
    ProjectionMax,
    /// `βᵢ` when `αᵢ > 0`, else `max(0, βᵢ)`. Discontinuous.
    SaddlePoint,
}

impl PhiNu {
    pub fn eval(self, alpha: &Vector, beta: &Vector) -> Vector {
        match self {
            PhiNu::ProjectionMax => alpha.zip_map(beta, |a, b| (a + b).max(0.0) - a),
            PhiNu::SaddlePoint => alpha.zip_map(beta, |a, b| if a > 0.0 { b } else { b.max(0.0) }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimalityModel {
    pub variant: OmVariant,
    /// T0 for the RFS and reduced-error variants, G0 for ROS.
    pub basis: Matrix,
    pub phi: PhiNu,
    pub program: ConvexProgram,
}

/// Time derivative of the model state and its error output.
#[derive(Debug, Clone, PartialEq)]
pub struct OmOutput {
    pub nu_dot: Vector,
    pub mu_dot: Vector,
    pub eps: Vector,
}

impl OptimalityModel {
    pub fn new(variant: OmVariant, program: ConvexProgram, basis: Matrix) -> Result<Self> {
        if basis.nrows() != program.p {
            return Err(Error::dim("T0/G0 rows", program.p, basis.nrows()));
        }
        if variant == OmVariant::Rerfs && basis.ncols() != program.n_ec() {
            return Err(Error::Invalid(format!(
                "reduced-error model needs T0 with exactly n_ec = {} columns so that Hy - Lw and T0ᵀ∇f add up, got {}",
                program.n_ec(),
                basis.ncols()
            )));
        }
        Ok(OptimalityModel {
            variant,
            basis,
            phi: PhiNu::default(),
            program,
        })
    }

    pub fn with_phi(mut self, phi: PhiNu) -> Self {
        self.phi = phi;
        self
    }

    pub fn n_nu(&self) -> usize {
        self.program.n_ic()
    }

    pub fn n_mu(&self) -> usize {
        match self.variant {
            OmVariant::Ros => self.program.n_ec(),
            _ => 0,
        }
    }

    pub fn eps_dim(&self) -> usize {
        match self.variant {
            OmVariant::Rfs => self.program.n_ec() + self.basis.ncols(),
            OmVariant::Ros => self.basis.ncols(),
            OmVariant::Rerfs => self.program.n_ec(),
        }
    }
}

pub fn om_dynamics(om: &OptimalityModel, y: &Vector, w: &Vector, nu: &Vector, mu: &Vector) -> Result<OmOutput> {
    let prog = &om.program;
    if y.len() != prog.p || w.len() != prog.nw {
        return Err(Error::dim(
            "om input y/w",
            format!("{}/{}", prog.p, prog.nw),
            format!("{}/{}", y.len(), w.len()),
        ));
    }
    if nu.len() != om.n_nu() || mu.len() != om.n_mu() {
        return Err(Error::dim(
            "om state ν/μ",
            format!("{}/{}", om.n_nu(), om.n_mu()),
            format!("{}/{}", nu.len(), mu.len()),
        ));
    }
    let nu_dot = om.phi.eval(nu, &prog.f_values(y, w));
    let grad = prog.lagrangian_gradient(y, w, nu);
    let resid = &prog.h * y - &prog.l * w;
    let bt = om.basis.transpose();
    let (mu_dot, eps) = match om.variant {
        OmVariant::Rfs => {
            let mut eps = Vector::zeros(om.eps_dim());
            eps.rows_mut(0, prog.n_ec()).copy_from(&resid);
            eps.rows_mut(prog.n_ec(), om.basis.ncols()).copy_from(&(&bt * grad));
            (Vector::zeros(0), eps)
        }
        OmVariant::Ros => {
            let eps = &bt * (grad + prog.h.transpose() * mu);
            (resid, eps)
        }
        OmVariant::Rerfs => (Vector::zeros(0), resid + &bt * grad),
    };
    Ok(OmOutput { nu_dot, mu_dot, eps })
}

/// Steady state of plant and model.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub x: Vector,
    pub nu: Vector,
    pub mu: Vector,
    pub u: Vector,
}

/// Checks the defining implication at a concrete point: if the plant is at
/// rest, the model state is stationary and `ε = 0`, then `ȳ` is the
/// optimizer.
///
/// Returns `false` when the premise fails or when `ȳ` misses the oracle
/// optimizer by more than `10·tol`.
pub fn verify_optimality_model(
    om: &OptimalityModel,
    up: &UncertainPlant,
    delta: &[f64],
    w: &Vector,
    eq: &EquilibriumPoint,
    tol: f64,
) -> Result<bool> {
    let pm = up.eval(delta)?;
    if eq.x.len() != pm.n() || eq.u.len() != pm.m() {
        return Err(Error::dim(
            "equilibrium x/u",
            format!("{}/{}", pm.n(), pm.m()),
            format!("{}/{}", eq.x.len(), eq.u.len()),
        ));
    }
    let xdot = &pm.a * &eq.x + &pm.b * &eq.u + &pm.bw * w;
    let y = &pm.c * &eq.x + &pm.d * &eq.u + &pm.q * w;
    let out = om_dynamics(om, &y, w, &eq.nu, &eq.mu)?;
    let premise = [xdot.amax(), out.nu_dot.amax(), out.mu_dot.amax(), out.eps.amax()]
        .iter()
        .all(|r| *r <= tol);
    if !premise {
        return Ok(false);
    }
    let sol = oracle_optimal_output(&om.program, &pm, w)?;
    Ok((y - sol.y_star).amax() <= 10.0 * tol)
}

/// `uᵢ = (η − bᵢ)/aᵢ`, the inverse marginal cost of `Jᵢ = ½aᵢuᵢ² + bᵢuᵢ`.
pub fn gather_broadcast_input(a: &[f64], b: &[f64], eta: f64) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::dim("cost coefficients", a.len(), b.len()));
    }
    if let Some(bad) = a.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Invalid(format!(
            "quadratic cost coefficient must be positive, got {bad}"
        )));
    }
    Ok(Vector::from_iterator(
        a.len(),
        a.iter().zip(b).map(|(ai, bi)| (eta - bi) / ai),
    ))
}
