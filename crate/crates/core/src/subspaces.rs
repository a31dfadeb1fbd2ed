//! Equilibrium output geometry and the robustness properties built on it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matlib::{
    left_null_basis, max_principal_sine, null_basis, numerical_rank, range_basis, subspace_equal,
    subspace_intersection, vstack, Matrix, SubspaceBasis, DEFAULT_TOL,
};
use crate::plant::{PlantMatrices, UncertainPlant};

/// Tolerance on the largest principal sine when comparing subspaces across
/// uncertainty samples.
pub const SUBSPACE_TOL: f64 = 1e-8;

/// Steady-state output geometry of one plant.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumGeometry {
    /// Basis of `null [A B]`.
    pub ndelta: Matrix,
    /// `[C D]·ndelta`
    pub g: Matrix,
    /// Orthonormal rows, `null gperp = range g`.
    pub gperp: Matrix,
    /// `null [gperp; H]`
    pub t: SubspaceBasis,
}

impl EquilibriumGeometry {
    pub fn range_g(&self) -> SubspaceBasis {
        range_basis(&self.g, DEFAULT_TOL)
    }
}

pub fn equilibrium_geometry(pm: &PlantMatrices, h: &Matrix) -> Result<EquilibriumGeometry> {
    pm.validate()?;
    if h.ncols() != pm.p() {
        return Err(Error::dim("H columns", pm.p(), h.ncols()));
    }
    let ndelta = null_basis(&pm.ab(), DEFAULT_TOL).basis;
    let g = pm.cd() * &ndelta;
    let gperp = left_null_basis(&g, DEFAULT_TOL).basis.transpose();
    let t = null_basis(&vstack(&[&gperp, h]), DEFAULT_TOL);
    let t = if t.ambient_dim == pm.p() {
        t
    } else {
        SubspaceBasis::empty(pm.p(), DEFAULT_TOL)
    };
    Ok(EquilibriumGeometry { ndelta, g, gperp, t })
}

/// Per-sample entry of a robustness check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleVerdict {
    pub delta: Vec<f64>,
    pub holds: bool,
    /// Largest principal sine against the nominal subspace, or the
    /// smallest singular value for rank checks.
    pub measure: f64,
}

/// Outcome of a sampled "for every δ" property.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCheck {
    pub holds: bool,
    /// G0 or T0 (orthonormal columns) when the property holds.
    pub basis: Option<Matrix>,
    /// First violating pair `(nominal, sample)`.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
    pub samples: Vec<SampleVerdict>,
}

fn compare_across_samples(
    up: &UncertainPlant,
    pick: &dyn Fn(&[f64]) -> Result<SubspaceBasis>,
) -> Result<RobustnessCheck> {
    let nominal = up.nominal_delta();
    let base = pick(&nominal)?;
    let mut samples = Vec::with_capacity(up.delta_samples.len());
    let mut witness = None;
    for d in &up.delta_samples {
        let s = pick(d)?;
        let ok = subspace_equal(&base, &s, SUBSPACE_TOL)?;
        let measure = if base.dim() == s.dim() {
            max_principal_sine(&base, &s)
        } else {
            1.0
        };
        if !ok && witness.is_none() {
            witness = Some((nominal.clone(), d.clone()));
        }
        samples.push(SampleVerdict {
            delta: d.clone(),
            holds: ok,
            measure,
        });
    }
    let holds = witness.is_none();
    Ok(RobustnessCheck {
        holds,
        basis: holds.then_some(base.basis),
        witness,
        samples,
    })
}

/// Whether `range G(δ)` is the same at every sample.
pub fn check_ros(up: &UncertainPlant) -> Result<RobustnessCheck> {
    compare_across_samples(up, &|d| {
        let pm = up.eval(d)?;
        let h = Matrix::zeros(0, pm.p());
        Ok(equilibrium_geometry(&pm, &h)?.range_g())
    })
}

/// Whether `null [G⊥(δ); H]` is the same at every sample.
pub fn check_rfs(up: &UncertainPlant, h: &Matrix) -> Result<RobustnessCheck> {
    check_rfs_with(up, &|_| Ok(h.clone()))
}

/// Variant of [`check_rfs`] with a δ-dependent constraint matrix `H(δ)`.
pub fn check_rfs_with(up: &UncertainPlant, h: &dyn Fn(&[f64]) -> Result<Matrix>) -> Result<RobustnessCheck> {
    compare_across_samples(up, &|d| {
        let pm = up.eval(d)?;
        Ok(equilibrium_geometry(&pm, &h(d)?)?.t)
    })
}

/// Rank test of `[A B; C D]` against `n + p` at every sample.
pub fn check_robust_full_rank(up: &UncertainPlant) -> Result<bool> {
    for d in &up.delta_samples {
        let pm = up.eval(d)?;
        if numerical_rank(&pm.system_matrix(), DEFAULT_TOL) != pm.n() + pm.p() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outcome of a per-sample triviality test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeCheck {
    pub holds: bool,
    pub witness: Option<Vec<f64>>,
    pub samples: Vec<SampleVerdict>,
}

fn hg_and_t0t(pm: &PlantMatrices, h: &Matrix, t0: &Matrix) -> Result<(SubspaceBasis, SubspaceBasis)> {
    if t0.nrows() != pm.p() {
        return Err(Error::dim("T0 rows", pm.p(), t0.nrows()));
    }
    let geom = equilibrium_geometry(pm, h)?;
    let hg = range_basis(&(h * &geom.g), DEFAULT_TOL);
    let tt = range_basis(&t0.transpose(), DEFAULT_TOL);
    let fix = |s: SubspaceBasis| {
        if s.ambient_dim == h.nrows() {
            s
        } else {
            SubspaceBasis::empty(h.nrows(), DEFAULT_TOL)
        }
    };
    Ok((fix(hg), fix(tt)))
}

fn trivial_at_every_sample(
    up: &UncertainPlant,
    h: &Matrix,
    t0: &Matrix,
    combine: &dyn Fn(SubspaceBasis, SubspaceBasis) -> Result<SubspaceBasis>,
) -> Result<RangeCheck> {
    let mut samples = Vec::new();
    let mut witness = None;
    for d in &up.delta_samples {
        let pm = up.eval(d)?;
        let (hg, tt) = hg_and_t0t(&pm, h, t0)?;
        let inter = combine(hg, tt)?;
        let ok = inter.is_empty();
        if !ok && witness.is_none() {
            witness = Some(d.clone());
        }
        samples.push(SampleVerdict {
            delta: d.clone(),
            holds: ok,
            measure: inter.dim() as f64,
        });
    }
    Ok(RangeCheck {
        holds: witness.is_none(),
        witness,
        samples,
    })
}

/// `range(H·G(δ)) ∩ range(T0ᵀ) = {0}` at every sample.
pub fn check_rerfs_range_condition(up: &UncertainPlant, h: &Matrix, t0: &Matrix) -> Result<RangeCheck> {
    trivial_at_every_sample(up, h, t0, &|a, b| subspace_intersection(&a, &b))
}

/// `(range H·G(δ))⊥ ∩ (range T0ᵀ)⊥ = {0}` at every sample.
pub fn check_complement_condition(up: &UncertainPlant, h: &Matrix, t0: &Matrix) -> Result<RangeCheck> {
    trivial_at_every_sample(up, h, t0, &|a, b| {
        subspace_intersection(&a.complement(), &b.complement())
    })
}

/// Summary consumed by the `check` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub samples: usize,
    pub ros: bool,
    pub ros_witness: Option<(Vec<f64>, Vec<f64>)>,
    pub rfs: bool,
    pub rfs_witness: Option<(Vec<f64>, Vec<f64>)>,
    pub robust_full_rank: bool,
    pub ros_sines: Vec<SampleVerdict>,
    pub rfs_sines: Vec<SampleVerdict>,
}

pub fn robustness_report(up: &UncertainPlant, h: &Matrix) -> Result<RobustnessReport> {
    let ros = check_ros(up)?;
    let rfs = check_rfs(up, h)?;
    Ok(RobustnessReport {
        samples: up.delta_samples.len(),
        ros: ros.holds,
        ros_witness: ros.witness,
        rfs: rfs.holds,
        rfs_witness: rfs.witness,
        robust_full_rank: check_robust_full_rank(up)?,
        ros_sines: ros.samples,
        rfs_sines: rfs.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{col, eye, mat, row, zeros};
    use crate::plant::AffineTerm;

    // Uncertain two-state plant whose equilibrium outputs rotate with δ.
    fn tilting_plant() -> UncertainPlant {
        let nominal = PlantMatrices::new(
            mat(2, 2, &[-1., 0., 1., -1.]),
            col(&[1., 0.]),
            zeros(2, 1),
            mat(2, 2, &[1., 0., 0., 1.]),
            zeros(2, 1),
            zeros(2, 1),
        )
        .unwrap();
        let term = AffineTerm {
            a: Some(mat(2, 2, &[-1., 0., 1., 0.])),
            ..Default::default()
        };
        UncertainPlant::affine(
            nominal,
            vec![term],
            vec![vec![0.], vec![0.5], vec![-0.5]],
            Some(vec![(-0.5, 0.5)]),
        )
        .unwrap()
    }

    #[test]
    fn dc_gain_matches_geometry() {
        let pm = PlantMatrices::new(
            mat(2, 2, &[-2., 1., 0., -3.]),
            mat(2, 1, &[1., 1.]),
            zeros(2, 1),
            mat(2, 2, &[1., 0., 1., 1.]),
            mat(2, 1, &[0.5, 0.]),
            zeros(2, 1),
        )
        .unwrap();
        let geom = equilibrium_geometry(&pm, &zeros(0, 2)).unwrap();
        let dc = -&pm.c * pm.a.clone().try_inverse().unwrap() * &pm.b + &pm.d;
        let a = range_basis(&dc, DEFAULT_TOL);
        assert!(subspace_equal(&a, &geom.range_g(), 1e-8).unwrap());
        assert!((&geom.gperp * &geom.g).amax() < 1e-12);
    }

    #[test]
    fn tilting_plant_fails_ros_and_rfs() {
        let up = tilting_plant();
        // G(δ) = col(1, 1+δ) up to scale.
        let pm = up.eval(&[0.5]).unwrap();
        let g = equilibrium_geometry(&pm, &zeros(0, 2)).unwrap().g;
        assert!((g[(1, 0)] / g[(0, 0)] - 1.5).abs() < 1e-12);
        let ros = check_ros(&up).unwrap();
        assert!(!ros.holds);
        assert_eq!(ros.witness, Some((vec![0.], vec![0.5])));
        assert!(!check_rfs(&up, &zeros(0, 2)).unwrap().holds);
    }

    #[test]
    fn certain_plant_always_ros() {
        let pm = PlantMatrices::new(zeros(1, 1), eye(1), zeros(1, 1), eye(1), zeros(1, 1), zeros(1, 1)).unwrap();
        let up = UncertainPlant::certain(pm).unwrap();
        let r = check_ros(&up).unwrap();
        assert!(r.holds && r.basis.is_some());
        // Single integrator ẋ = u, y = x has robust full rank.
        assert!(check_robust_full_rank(&up).unwrap());
    }

    #[test]
    fn range_conditions() {
        // Static plant y = u in ℝ², H = [1 0].
        let pm = PlantMatrices::new(zeros(0, 0), zeros(0, 2), zeros(0, 1), zeros(2, 0), eye(2), zeros(2, 1)).unwrap();
        let up = UncertainPlant::certain(pm).unwrap();
        let h = row(&[1., 0.]);
        assert!(
            check_rerfs_range_condition(&up, &zeros(0, 2), &zeros(2, 0))
                .unwrap()
                .holds
        );
        // T0ᵀ square and full rank with HG ≠ 0 forces an intersection.
        assert!(!check_rerfs_range_condition(&up, &h, &col(&[1., 0.])).unwrap().holds);
        assert!(check_complement_condition(&up, &h, &col(&[1., 0.])).unwrap().holds);
        assert!(
            !check_complement_condition(&up, &zeros(1, 2), &zeros(2, 1))
                .unwrap()
                .holds
        );
    }
}
