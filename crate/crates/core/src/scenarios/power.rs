//! Swing-equation network model and the frequency controllers derived from
//! the optimal frequency regulation problem.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{diag, eye, hstack, vstack, zeros, Matrix, Vector};
use crate::omodels::OptimalityModel;
use crate::optprob::{ConvexProgram, QPData};
use crate::plant::{OmVariant, PlantMatrices, UncertainPlant};
use crate::stabilize::{Gains, Stabilizer};

/// Acyclic power network with per-bus quadratic costs `Jᵢ = ½aᵢuᵢ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNetwork {
    pub n: usize,
    /// Transmission lines `(from, to)`, zero based.
    pub edges: Vec<(usize, usize)>,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    /// One susceptance per line.
    pub susceptance: Vec<f64>,
    pub cost: Vec<f64>,
    /// Undirected communication links with unit weight.
    pub comm_edges: Vec<(usize, usize)>,
}

impl PowerNetwork {
    /// Four buses in a line. These values are illustrative, not measured.
    pub fn four_bus_line() -> Self {
        PowerNetwork {
            n: 4,
            edges: vec![(0, 1), (1, 2), (2, 3)],
            inertia: vec![1.0, 1.2, 0.8, 1.0],
            damping: vec![1.0; 4],
            susceptance: vec![1.0; 3],
            cost: vec![1.0, 2.0, 3.0, 4.0],
            comm_edges: vec![(0, 1), (1, 2), (2, 3)],
        }
    }

    pub fn n_lines(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Invalid("network needs at least one bus".into()));
        }
        for (what, len) in [
            ("inertia", self.inertia.len()),
            ("damping", self.damping.len()),
            ("cost", self.cost.len()),
        ] {
            if len != n {
                return Err(Error::dim(format!("network {what}"), n, len));
            }
        }
        if self.susceptance.len() != self.edges.len() {
            return Err(Error::dim(
                "network susceptance",
                self.edges.len(),
                self.susceptance.len(),
            ));
        }
        let positive = self
            .inertia
            .iter()
            .chain(&self.damping)
            .chain(&self.susceptance)
            .chain(&self.cost)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::Invalid(
                "inertia, damping, susceptance and cost must be positive".into(),
            ));
        }
        if !spanning_tree(n, &self.edges) {
            return Err(Error::Invalid(format!(
                "transmission graph must be a connected tree ({} buses need {} lines and no cycles)",
                n,
                n - 1
            )));
        }
        if !connected(n, &self.comm_edges) {
            return Err(Error::Invalid("communication graph must be connected".into()));
        }
        Ok(())
    }

    /// Signed node-edge incidence matrix `𝒜` (n × lines).
    pub fn incidence(&self) -> Matrix {
        let mut a = zeros(self.n, self.n_lines());
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            a[(i, k)] = 1.0;
            a[(j, k)] = -1.0;
        }
        a
    }

    /// Laplacian of the communication graph.
    pub fn comm_laplacian(&self) -> Matrix {
        let mut l = zeros(self.n, self.n);
        for &(i, j) in &self.comm_edges {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }

    /// Laplacian with its first row removed.
    pub fn reduced_laplacian(&self) -> Matrix {
        let l = self.comm_laplacian();
        l.rows(1, self.n - 1).into_owned()
    }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

fn spanning_tree(n: usize, edges: &[(usize, usize)]) -> bool {
    if edges.len() != n - 1 {
        return false;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in edges {
        if i >= n || j >= n || i == j {
            return false;
        }
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in edges {
        if i >= n || j >= n {
            return false;
        }
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

/// Swing equations with state `(ω, p)`, input `u`, disturbance `w = P⋆` and
/// optimization output `y = (u, ω)`. Each δ coordinate scales the damping of
/// one bus, `Dᵢ(δ) = Dᵢ(1 + δᵢ)`.
pub fn build_swing_plant(
    net: &PowerNetwork,
    delta_samples: Vec<Vec<f64>>,
    delta_box: Option<Vec<(f64, f64)>>,
) -> Result<UncertainPlant> {
    net.validate()?;
    let net2 = net.clone();
    let f = move |delta: &[f64]| -> Result<PlantMatrices> {
        let n = net2.n;
        let nt = net2.n_lines();
        let minv = diag(&net2.inertia.iter().map(|m| 1.0 / m).collect::<Vec<_>>());
        let d = diag(
            &net2
                .damping
                .iter()
                .zip(delta)
                .map(|(d, dl)| d * (1.0 + dl))
                .collect::<Vec<_>>(),
        );
        let inc = net2.incidence();
        let bsus = diag(&net2.susceptance);
        let a = vstack(&[
            &hstack(&[&(-(&minv * d)), &(-(&minv * &inc))]),
            &hstack(&[&(bsus * inc.transpose()), &zeros(nt, nt)]),
        ]);
        let b = vstack(&[&minv, &zeros(nt, n)]);
        let c = vstack(&[&zeros(n, n + nt), &hstack(&[&eye(n), &zeros(n, nt)])]);
        let dm = vstack(&[&eye(n), &zeros(n, n)]);
        PlantMatrices::new(a, b.clone(), b, c, dm, zeros(2 * n, n))
    };
    UncertainPlant::new(net.n, Arc::new(f), delta_samples, delta_box)
}

/// Reserve cost `J(u)` subject to `Fω = 0`, posed on `y = (u, ω)`.
pub fn power_program(net: &PowerNetwork, f: &Matrix) -> Result<ConvexProgram> {
    let n = net.n;
    if f.ncols() != n {
        return Err(Error::dim("F columns", n, f.ncols()));
    }
    let mut m = zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, i)] = net.cost[i];
    }
    let h = hstack(&[&zeros(f.nrows(), n), f]);
    ConvexProgram::qp(QPData::new(m, zeros(2 * n, n))?, h, zeros(f.nrows(), n))
}

/// `Σuᵢ = −ΣP⋆` at equal marginal cost `aᵢuᵢ = α`.
pub fn dispatch_oracle(net: &PowerNetwork, p_star: &[f64]) -> Vector {
    let total: f64 = p_star.iter().sum();
    let inv: f64 = net.cost.iter().map(|a| 1.0 / a).sum();
    let alpha = -total / inv;
    Vector::from_iterator(net.n, net.cost.iter().map(|a| alpha / a))
}

/// Reduced-error model `ε = ω + L_c∇J(u)` with `u = −η/k`.
pub fn build_dapi(net: &PowerNetwork, k: f64) -> Result<(OptimalityModel, Stabilizer)> {
    net.validate()?;
    if !(k > 0.0) {
        return Err(Error::Invalid(format!("DAPI gain must be positive, got {k}")));
    }
    let n = net.n;
    let prog = power_program(net, &eye(n))?;
    let t0 = vstack(&[&net.comm_laplacian().transpose(), &zeros(n, n)]);
    let om = OptimalityModel::new(OmVariant::Rerfs, prog, t0)?;
    let mut g = Gains::zero(n, 2 * n - 1, 0, n);
    g.keta = eye(n) / k;
    Ok((om, Stabilizer::gains(g)))
}

fn check_convex_weights(c: &[f64], n: usize) -> Result<()> {
    if c.len() != n {
        return Err(Error::dim("convex weights", n, c.len()));
    }
    if c.iter().any(|v| *v < 0.0) || (c.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(
            "convex weights must be nonnegative and sum to one".into(),
        ));
    }
    Ok(())
}

/// RFS model `ε = (cᵀω, L̃_c∇J(u))` with `u = −K1·η1 − K2·η2 − K3·ω`.
pub fn build_novel_freq_controller(
    net: &PowerNetwork,
    c: &[f64],
    k1: &Matrix,
    k2: &Matrix,
    k3: &Matrix,
) -> Result<(OptimalityModel, Stabilizer)> {
    net.validate()?;
    let n = net.n;
    if n < 2 {
        return Err(Error::Invalid("the reduced Laplacian needs at least two buses".into()));
    }
    check_convex_weights(c, n)?;
    if k1.shape() != (n, 1) || k2.shape() != (n, n - 1) || k3.shape() != (n, n) {
        return Err(Error::dim(
            "K1 | K2 | K3",
            format!("{n}x1 | {n}x{} | {n}x{n}", n - 1),
            format!("{:?} | {:?} | {:?}", k1.shape(), k2.shape(), k3.shape()),
        ));
    }
    let f = Matrix::from_row_slice(1, n, c);
    let prog = power_program(net, &f)?;
    let t0 = vstack(&[&net.reduced_laplacian().transpose(), &zeros(n, n - 1)]);
    let om = OptimalityModel::new(OmVariant::Rfs, prog, t0)?;
    let nt = net.n_lines();
    let mut g = Gains::zero(n, n + nt, 0, n);
    g.kx.view_mut((0, 0), (n, n)).copy_from(k3);
    g.keta.view_mut((0, 0), (n, 1)).copy_from(k1);
    g.keta.view_mut((0, 1), (n, n - 1)).copy_from(k2);
    Ok((om, Stabilizer::gains(g)))
}

/// Scalar integrator `η̇ = −cᵀω` with `uᵢ = (∇Jᵢ)⁻¹(η)`.
///
/// The integrator is driven by `−cᵀω` so that rising frequency lowers the
/// reserve set point; with `+cᵀω` the loop has positive feedback.
pub fn build_gather_broadcast(net: &PowerNetwork, c: &[f64]) -> Result<(OptimalityModel, Stabilizer)> {
    net.validate()?;
    let n = net.n;
    check_convex_weights(c, n)?;
    let f = -Matrix::from_row_slice(1, n, c);
    let prog = power_program(net, &f)?;
    let om = OptimalityModel::new(OmVariant::Rfs, prog, zeros(2 * n, 0))?;
    Ok((om, Stabilizer::inverse_gradient(net.cost.clone(), vec![0.0; n])))
}
