//! Uncertain LTI plant families and the augmented plants built on them.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matlib::{block_diag, eye, hstack, vstack, zeros, Matrix};
use crate::optprob::QPData;

/// Matrices of one member of the plant family:
///
/// ```text
/// ẋ   = A x + B u + Bw w
/// y   = C x + D u + Q w
/// y_m = Cm x + Dm u + Qm w
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMatrices {
    pub a: Matrix,
    pub b: Matrix,
    pub bw: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub q: Matrix,
    pub cm: Matrix,
    pub dm: Matrix,
    pub qm: Matrix,
}

impl PlantMatrices {
    /// Plant with full-state measurement `y_m = x`.
    pub fn new(a: Matrix, b: Matrix, bw: Matrix, c: Matrix, d: Matrix, q: Matrix) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let nw = bw.ncols();
        let pm = PlantMatrices {
            a,
            b,
            bw,
            c,
            d,
            q,
            cm: eye(n),
            dm: zeros(n, m),
            qm: zeros(n, nw),
        };
        pm.validate()?;
        Ok(pm)
    }

    pub fn with_measurement(mut self, cm: Matrix, dm: Matrix, qm: Matrix) -> Result<Self> {
        self.cm = cm;
        self.dm = dm;
        self.qm = qm;
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn nw(&self) -> usize {
        self.bw.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn pm(&self) -> usize {
        self.cm.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, nw, p, pm) = (self.n(), self.m(), self.nw(), self.p(), self.pm());
        let want = [
            ("A", &self.a, n, n),
            ("B", &self.b, n, m),
            ("Bw", &self.bw, n, nw),
            ("C", &self.c, p, n),
            ("D", &self.d, p, m),
            ("Q", &self.q, p, nw),
            ("Cm", &self.cm, pm, n),
            ("Dm", &self.dm, pm, m),
            ("Qm", &self.qm, pm, nw),
        ];
        for (name, mat, r, c) in want {
            if mat.shape() != (r, c) {
                return Err(Error::dim(
                    format!("plant matrix {name}"),
                    format!("{r}x{c}"),
                    format!("{}x{}", mat.nrows(), mat.ncols()),
                ));
            }
            crate::matlib::check_finite(mat, name)?;
        }
        Ok(())
    }

    /// `[A B]`
    pub fn ab(&self) -> Matrix {
        hstack(&[&self.a, &self.b])
    }

    /// `[C D]`
    pub fn cd(&self) -> Matrix {
        hstack(&[&self.c, &self.d])
    }

    /// `[A B; C D]`
    pub fn system_matrix(&self) -> Matrix {
        vstack(&[&self.ab(), &self.cd()])
    }
}

/// Perturbation contributed by one uncertain coordinate. Absent matrices do
/// not depend on that coordinate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineTerm {
    pub a: Option<Matrix>,
    pub b: Option<Matrix>,
    pub bw: Option<Matrix>,
    pub c: Option<Matrix>,
    pub d: Option<Matrix>,
    pub q: Option<Matrix>,
    pub cm: Option<Matrix>,
    pub dm: Option<Matrix>,
    pub qm: Option<Matrix>,
}

pub type PlantFn = dyn Fn(&[f64]) -> Result<PlantMatrices> + Send + Sync;

/// A plant family `δ ↦ PlantMatrices` together with the finite sample set
/// over which every "for all δ" statement is decided.
#[derive(Clone)]
pub struct UncertainPlant {
    evaluate: Arc<PlantFn>,
    pub delta_dim: usize,
    pub delta_samples: Vec<Vec<f64>>,
    pub delta_box: Option<Vec<(f64, f64)>>,
}

impl fmt::Debug for UncertainPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UncertainPlant")
            .field("delta_dim", &self.delta_dim)
            .field("delta_samples", &self.delta_samples)
            .field("delta_box", &self.delta_box)
            .finish()
    }
}

impl UncertainPlant {
    /// Builds a family. The nominal sample (all zeros) is inserted first if
    /// the caller did not list it.
    pub fn new(
        delta_dim: usize,
        evaluate: Arc<PlantFn>,
        mut delta_samples: Vec<Vec<f64>>,
        delta_box: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        for s in &delta_samples {
            if s.len() != delta_dim {
                return Err(Error::dim("delta sample", delta_dim, s.len()));
            }
        }
        if let Some(bx) = &delta_box {
            if bx.len() != delta_dim {
                return Err(Error::dim("delta box", delta_dim, bx.len()));
            }
        }
        let nominal = vec![0.0; delta_dim];
        if !delta_samples.contains(&nominal) {
            delta_samples.insert(0, nominal);
        }
        let up = UncertainPlant {
            evaluate,
            delta_dim,
            delta_samples,
            delta_box,
        };
        for s in &up.delta_samples {
            up.eval(s)?;
        }
        Ok(up)
    }

    /// Family with no uncertainty.
    pub fn certain(pm: PlantMatrices) -> Result<Self> {
        pm.validate()?;
        Self::new(0, Arc::new(move |_| Ok(pm.clone())), vec![vec![]], None)
    }

    /// Family affine in δ: `X(δ) = X0 + Σ δ_i X_i`.
    pub fn affine(
        nominal: PlantMatrices,
        terms: Vec<AffineTerm>,
        delta_samples: Vec<Vec<f64>>,
        delta_box: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        nominal.validate()?;
        let dim = terms.len();
        let f = move |delta: &[f64]| -> Result<PlantMatrices> {
            let mut pm = nominal.clone();
            for (t, &dv) in terms.iter().zip(delta) {
                let pairs: [(&mut Matrix, &Option<Matrix>); 9] = [
                    (&mut pm.a, &t.a),
                    (&mut pm.b, &t.b),
                    (&mut pm.bw, &t.bw),
                    (&mut pm.c, &t.c),
                    (&mut pm.d, &t.d),
                    (&mut pm.q, &t.q),
                    (&mut pm.cm, &t.cm),
                    (&mut pm.dm, &t.dm),
                    (&mut pm.qm, &t.qm),
                ];
                for (target, term) in pairs {
                    if let Some(x) = term {
                        if x.shape() != target.shape() {
                            return Err(Error::dim(
                                "affine term",
                                format!("{:?}", target.shape()),
                                format!("{:?}", x.shape()),
                            ));
                        }
                        *target += x * dv;
                    }
                }
            }
            Ok(pm)
        };
        Self::new(dim, Arc::new(f), delta_samples, delta_box)
    }

    pub fn nominal_delta(&self) -> Vec<f64> {
        vec![0.0; self.delta_dim]
    }

    pub fn nominal(&self) -> Result<PlantMatrices> {
        self.eval(&self.nominal_delta())
    }

    /// Evaluates the family at `δ`.
    pub fn eval(&self, delta: &[f64]) -> Result<PlantMatrices> {
        if delta.len() != self.delta_dim {
            return Err(Error::dim("delta", self.delta_dim, delta.len()));
        }
        if let Some(bx) = &self.delta_box {
            let inside = delta
                .iter()
                .zip(bx)
                .all(|(d, (lo, hi))| *d >= lo - 1e-12 && *d <= hi + 1e-12);
            if !inside {
                return Err(Error::OutsideBox { delta: delta.to_vec() });
            }
        }
        let pm = (self.evaluate)(delta)?;
        pm.validate()?;
        Ok(pm)
    }

    /// Adds every corner of the declared box to the sample list.
    pub fn with_box_corners(mut self) -> Self {
        if let Some(bx) = self.delta_box.clone() {
            let k = bx.len();
            for mask in 0..(1usize << k) {
                let corner: Vec<f64> = (0..k)
                    .map(|i| if mask >> i & 1 == 1 { bx[i].1 } else { bx[i].0 })
                    .collect();
                if !self.delta_samples.contains(&corner) {
                    self.delta_samples.push(corner);
                }
            }
        }
        self
    }
}

/// Evaluates the plant family at `δ`.
pub fn eval_plant(up: &UncertainPlant, delta: &[f64]) -> Result<PlantMatrices> {
    up.eval(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmVariant {
    Rfs,
    Ros,
    Rerfs,
}

impl fmt::Display for OmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OmVariant::Rfs => "rfs",
            OmVariant::Ros => "ros",
            OmVariant::Rerfs => "rerfs",
        })
    }
}

/// Plant in series with a QP optimality model and integrators on ε.
/// State order is `(x, μ, η)`; `μ` is empty except for the ROS variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub variant: OmVariant,
    pub n: usize,
    pub n_mu: usize,
    pub n_eta: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub bw: Matrix,
    /// Measurement map `blockdiag(Cm, I)`.
    pub c: Matrix,
    /// `ε = eps_z·z + eps_u·u + eps_w·w`
    pub eps_z: Matrix,
    pub eps_u: Matrix,
    pub eps_w: Matrix,
}

impl AugmentedPlant {
    pub fn dim(&self) -> usize {
        self.n + self.n_mu + self.n_eta
    }
}

/// Assembles the augmented plant for an equality-constrained QP.
///
/// `basis` is T0 for the RFS and reduced-error variants and G0 for ROS.
pub fn build_augmented_qp(
    pm: &PlantMatrices,
    qp: &QPData,
    h: &Matrix,
    l: &Matrix,
    variant: OmVariant,
    basis: &Matrix,
) -> Result<AugmentedPlant> {
    pm.validate()?;
    let (n, m, nw, p) = (pm.n(), pm.m(), pm.nw(), pm.p());
    qp.check_dims(p, nw)?;
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
    if basis.nrows() != p {
        return Err(Error::dim("T0/G0 rows", p, basis.nrows()));
    }
    let nec = h.nrows();
    let mc = &qp.m * &pm.c;
    let md = &qp.m * &pm.d;
    let mq_n = &qp.m * &pm.q - &qp.n;
    let hq_l = h * &pm.q - l;
    let bt = basis.transpose();

    let (n_mu, ez, eu, ew) = match variant {
        OmVariant::Rfs => {
            let ez = vstack(&[&(h * &pm.c), &(&bt * &mc)]);
            let eu = vstack(&[&(h * &pm.d), &(&bt * &md)]);
            let ew = vstack(&[&hq_l, &(&bt * &mq_n)]);
            (0, ez, eu, ew)
        }
        OmVariant::Ros => {
            let ez = hstack(&[&(&bt * &mc), &(&bt * h.transpose())]);
            (nec, ez, &bt * &md, &bt * &mq_n)
        }
        OmVariant::Rerfs => {
            if basis.ncols() != nec {
                return Err(Error::Invalid(format!(
                    "reduced-error model needs T0 with exactly n_ec = {nec} columns, got {}",
                    basis.ncols()
                )));
            }
            let k = h + &bt * &qp.m;
            (0, &k * &pm.c, &k * &pm.d, &hq_l + &bt * &mq_n)
        }
    };
    let n_eta = ez.nrows();
    let dim = n + n_mu + n_eta;

    let mut a = zeros(dim, dim);
    a.view_mut((0, 0), (n, n)).copy_from(&pm.a);
    let mut b = zeros(dim, m);
    b.view_mut((0, 0), (n, m)).copy_from(&pm.b);
    let mut bw = zeros(dim, nw);
    bw.view_mut((0, 0), (n, nw)).copy_from(&pm.bw);
    if n_mu > 0 {
        a.view_mut((n, 0), (n_mu, n)).copy_from(&(h * &pm.c));
        b.view_mut((n, 0), (n_mu, m)).copy_from(&(h * &pm.d));
        bw.view_mut((n, 0), (n_mu, nw)).copy_from(&hq_l);
    }
    a.view_mut((n + n_mu, 0), (n_eta, n + n_mu)).copy_from(&ez);
    b.view_mut((n + n_mu, 0), (n_eta, m)).copy_from(&eu);
    bw.view_mut((n + n_mu, 0), (n_eta, nw)).copy_from(&ew);

    let mut eps_z = zeros(n_eta, dim);
    eps_z.view_mut((0, 0), (n_eta, n + n_mu)).copy_from(&ez);

    Ok(AugmentedPlant {
        variant,
        n,
        n_mu,
        n_eta,
        a,
        b,
        bw,
        c: block_diag(&[&pm.cm, &eye(n_mu + n_eta)]),
        eps_z,
        eps_u: eu,
        eps_w: ew,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{col, mat};

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
    fn certain_plant_evaluates_to_itself() {
        let pm = vb_plant();
        let up = UncertainPlant::certain(pm.clone()).unwrap();
        assert_eq!(up.delta_samples, vec![Vec::<f64>::new()]);
        let e = eval_plant(&up, &[]).unwrap();
        assert_eq!(e.a, mat(2, 2, &[-1., 0., 1., -1.]));
        assert_eq!(e.b, col(&[1., -1.]));
        assert_eq!(e.bw, col(&[1., 1.]));
    }

    #[test]
    fn affine_family_and_box() {
        let term = AffineTerm {
            a: Some(mat(2, 2, &[-1., 0., 1., 0.])),
            ..Default::default()
        };
        let up = UncertainPlant::affine(
            vb_plant(),
            vec![term],
            vec![vec![0.5], vec![-0.5]],
            Some(vec![(-0.5, 0.5)]),
        )
        .unwrap();
        assert_eq!(up.delta_samples[0], vec![0.0]);
        let e = up.eval(&[0.5]).unwrap();
        assert_eq!(e.a, mat(2, 2, &[-1.5, 0., 1.5, -1.]));
        assert!(matches!(up.eval(&[0.7]), Err(Error::OutsideBox { .. })));
        assert!(up.eval(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn box_corners_are_added() {
        let up = UncertainPlant::affine(
            vb_plant(),
            vec![AffineTerm::default(), AffineTerm::default()],
            vec![],
            Some(vec![(-1., 1.), (0., 2.)]),
        )
        .unwrap()
        .with_box_corners();
        assert_eq!(up.delta_samples.len(), 5);
    }

    #[test]
    fn dimension_errors_are_reported() {
        let r = PlantMatrices::new(eye(2), col(&[1.]), col(&[1., 1.]), eye(2), zeros(2, 1), zeros(2, 1));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_plant_rfs_augmentation() {
        let pm = PlantMatrices::new(zeros(2, 2), eye(2), zeros(2, 1), eye(2), zeros(2, 2), zeros(2, 1)).unwrap();
        let qp = QPData::new(eye(2), zeros(2, 1)).unwrap();
        let aug = build_augmented_qp(&pm, &qp, &zeros(0, 2), &zeros(0, 1), OmVariant::Rfs, &eye(2)).unwrap();
        let mut want = zeros(4, 4);
        want.view_mut((2, 0), (2, 2)).copy_from(&eye(2));
        assert_eq!(aug.a, want);
        assert_eq!(aug.dim(), 4);
    }

    #[test]
    fn ros_augmentation_of_two_state_plant() {
        let qp = QPData::new(eye(2), zeros(2, 1)).unwrap();
        let aug = build_augmented_qp(
            &vb_plant(),
            &qp,
            &zeros(0, 2),
            &zeros(0, 1),
            OmVariant::Ros,
            &col(&[1., 1.]),
        )
        .unwrap();
        assert_eq!(aug.dim(), 3);
        // η̇ = y1 + y2 = x1 + u
        assert_eq!(aug.a.row(2).iter().copied().collect::<Vec<_>>(), vec![1., 0., 0.]);
        assert_eq!(aug.b[(2, 0)], 1.);
    }

    #[test]
    fn rerfs_rejects_wrong_t0_width() {
        let qp = QPData::new(eye(2), zeros(2, 1)).unwrap();
        let h = mat(1, 2, &[1., 0.]);
        let r = build_augmented_qp(&vb_plant(), &qp, &h, &zeros(1, 1), OmVariant::Rerfs, &eye(2));
        assert!(matches!(r, Err(Error::Invalid(_))));
    }
}
