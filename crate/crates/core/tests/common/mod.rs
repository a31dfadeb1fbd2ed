//! Random equality-constrained QP instances shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oss_core::matlib::{block_diag, eye, hstack, pinv, vstack, zeros, Matrix, Vector};
use oss_core::optprob::QPData;
use oss_core::plant::{OmVariant, PlantMatrices};
use oss_core::subspaces::equilibrium_geometry;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Well conditioned random invertible `k×k` matrix.
pub fn invertible(rng: &mut ChaCha8Rng, k: usize) -> Matrix {
    uniform(rng, k, k) * 0.5 + eye(k) * 2.0
}

/// Matrix of rank at most `r` built from random factors.
pub fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: usize) -> Matrix {
    uniform(rng, rows, r) * uniform(rng, r, cols)
}

/// Ways a generated instance is made to violate a solvability condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Extra unstable state that no input reaches.
    Uncontrollable,
    /// Extra unstable state that the measurement does not see.
    Unobservable,
    /// Cost flat along a feasible direction.
    FlatCost,
    /// Constraint row already implied by the plant's steady states.
    RedundantConstraint,
}

pub const FAULTS: [Fault; 5] = [
    Fault::None,
    Fault::Uncontrollable,
    Fault::Unobservable,
    Fault::FlatCost,
    Fault::RedundantConstraint,
];

#[derive(Debug, Clone)]
pub struct QpInstance {
    pub variant: OmVariant,
    pub pm: PlantMatrices,
    pub qp: QPData,
    pub h: Matrix,
    pub l: Matrix,
    /// T0 for RFS and the reduced-error model, G0 for ROS. Random and not
    /// orthonormal; for the reduced-error model a spanning set of T.
    pub basis: Matrix,
    pub w: Vector,
}

fn dims(rng: &mut ChaCha8Rng, n_max: usize) -> (usize, usize, usize, usize) {
    (
        rng.random_range(1..=n_max),
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(1..=2),
    )
}

/// Particular steady-state output map `w ↦ y0(w)`.
fn particular_output(pm: &PlantMatrices) -> Matrix {
    let sol = pinv(&pm.ab()) * (-&pm.bw);
    pm.cd() * sol + &pm.q
}

/// Constraints for the reduced-error model. It needs `n_ec = rank G` rows
/// with `range(H·G)` of dimension `k ≤ n_ec`, so `H = E·H1 + Z·G⊥` and `L`
/// keeps `Hy = Lw` feasible on the steady-state manifold.
fn reduced_error_constraints(rng: &mut ChaCha8Rng, pm: &PlantMatrices) -> Option<(Matrix, Matrix, usize)> {
    let p = pm.p();
    let geom = equilibrium_geometry(pm, &zeros(0, p)).ok()?;
    let r = geom.range_g().dim();
    if r == 0 {
        return None;
    }
    let k = rng.random_range(0..=r);
    let e = uniform(rng, r, k);
    let z = uniform(rng, r, geom.gperp.nrows()) * &geom.gperp;
    let h = &e * uniform(rng, k, p) + &z;
    let l = &z * particular_output(pm) + &e * uniform(rng, k, pm.nw());
    Some((h, l, k))
}

/// One random instance with `n ≤ 6`, `m ≤ 3`, `p ≤ 4`. Returns `None` when
/// the fault cannot be injected into the drawn dimensions.
pub fn qp_instance(rng: &mut ChaCha8Rng, variant: OmVariant, fault: Fault) -> Option<QpInstance> {
    let extra = matches!(fault, Fault::Uncontrollable | Fault::Unobservable);
    let (n, m, p, nw) = dims(rng, if extra { 5 } else { 6 });
    let mut pm = PlantMatrices::new(
        uniform(rng, n, n),
        uniform(rng, n, m),
        uniform(rng, n, nw),
        uniform(rng, p, n),
        uniform(rng, p, m),
        uniform(rng, p, nw),
    )
    .ok()?;
    match fault {
        Fault::Uncontrollable => {
            let c = vstack(&[&pm.c.clone().transpose(), &uniform(rng, 1, p)]).transpose();
            pm = PlantMatrices::new(
                block_diag(&[&pm.a, &Matrix::from_element(1, 1, 0.5)]),
                vstack(&[&pm.b, &zeros(1, m)]),
                vstack(&[&pm.bw, &zeros(1, nw)]),
                c,
                pm.d.clone(),
                pm.q.clone(),
            )
            .ok()?;
        }
        Fault::Unobservable => {
            let a = vstack(&[
                &hstack(&[&pm.a, &zeros(n, 1)]),
                &hstack(&[&uniform(rng, 1, n), &Matrix::from_element(1, 1, 0.5)]),
            ]);
            pm = PlantMatrices::new(
                a,
                vstack(&[&pm.b, &uniform(rng, 1, m)]),
                vstack(&[&pm.bw, &zeros(1, nw)]),
                hstack(&[&pm.c, &zeros(p, 1)]),
                pm.d.clone(),
                pm.q.clone(),
            )
            .ok()?
            .with_measurement(hstack(&[&eye(n), &zeros(n, 1)]), zeros(n, m), zeros(n, nw))
            .ok()?;
        }
        _ => {}
    }
    let (h, l, k) = if variant == OmVariant::Rerfs {
        reduced_error_constraints(rng, &pm)?
    } else {
        let nec = rng.random_range(0..=m.min(p));
        let mut h = uniform(rng, nec, p);
        if fault == Fault::RedundantConstraint {
            let gperp = equilibrium_geometry(&pm, &zeros(0, p)).ok()?.gperp;
            let row = if gperp.nrows() > 0 {
                uniform(rng, 1, gperp.nrows()) * gperp
            } else if nec > 0 {
                h.rows(0, 1).into_owned() * 1.5
            } else {
                return None;
            };
            h = vstack(&[&h, &row]);
        }
        let l = uniform(rng, h.nrows(), nw);
        (h, l, 0)
    };
    let geom = equilibrium_geometry(&pm, &h).ok()?;
    let t = geom.t.basis.clone();
    let r = uniform(rng, p, p);
    let mut cost = &r * r.transpose() + eye(p) * 0.1;
    if fault == Fault::FlatCost {
        if t.ncols() == 0 {
            return None;
        }
        let dir = t.column(0).into_owned();
        let proj = eye(p) - &dir * dir.transpose();
        cost = &proj * &r * r.transpose() * &proj;
        cost = (&cost + cost.transpose()) * 0.5;
    }
    let qp = QPData::new(cost, uniform(rng, p, nw)).ok()?;
    let basis = match variant {
        OmVariant::Ros => {
            let g = geom.range_g().basis;
            let k = g.ncols();
            g * invertible(rng, k)
        }
        OmVariant::Rfs => {
            let k = t.ncols();
            t * invertible(rng, k)
        }
        // Spanning set of T with n_ec columns; for this variant the fault
        // puts part of range T0ᵀ inside range H·G.
        OmVariant::Rerfs => {
            let nec = h.nrows();
            let mut rt = uniform(rng, nec, t.ncols());
            if fault == Fault::RedundantConstraint {
                if k == 0 || t.ncols() == 0 {
                    return None;
                }
                let hg = &h * &geom.g;
                let inside = hg * uniform_vec(rng, geom.g.ncols());
                rt.set_column(0, &inside);
            }
            t * rt.transpose()
        }
    };
    let w = uniform_vec(rng, nw);
    Some(QpInstance {
        variant,
        pm,
        qp,
        h,
        l,
        basis,
        w,
    })
}
