//! Finite-difference discretization of the uncertain-diffusion operator
//! family `u ↦ (a(σ, x) u')'` on (0, 1) with homogeneous Dirichlet data.
//!
//! The state space carries the mesh-weighted inner product
//! `⟨u, v⟩_H = hx · Σ uᵢ vᵢ`, controls live in Euclidean `ℝ^m`, so the
//! control adjoint is `B* = hx · Bᵀ` and the adjoint of any matrix
//! operator on the state space is its plain transpose.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Uniform grid of interior nodes `x_i = i·hx`, `i = 1..n`, `hx = 1/(n+1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialGrid {
    n: usize,
    hx: f64,
}

impl SpatialGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 interior nodes, got {n}")));
        }
        Ok(Self {
            n,
            hx: 1.0 / (n as f64 + 1.0),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n).map(move |i| i as f64 * self.hx)
    }

    /// Cell midpoints `x_{i+1/2}`, `i = 0..n`.
    fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |i| (i as f64 + 0.5) * self.hx)
    }

    /// Samples `f` at the interior nodes.
    pub fn sample<T: Real>(&self, f: impl Fn(f64) -> f64) -> DVector<T> {
        DVector::from_iterator(self.n, self.nodes().map(|x| T::lit(f(x))))
    }

    /// `⟨u, v⟩_H`.
    pub fn inner<T: Real>(&self, u: &DVector<T>, v: &DVector<T>) -> T {
        u.dot(v) * T::lit(self.hx)
    }

    /// `‖u‖_H`.
    pub fn norm<T: Real>(&self, u: &DVector<T>) -> T {
        self.inner(u, u).sqrt()
    }
}

/// Affine Karhunen–Loève-type coefficient
/// `a(σ, x) = a0 + Σ_j σ_j · cbar · j^(-qdec) · sin(jπx)`, `σ_j ∈ [-1/2, 1/2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionField {
    a0: f64,
    cbar: f64,
    qdec: f64,
    smax: usize,
}

impl DiffusionField {
    pub fn new(a0: f64, cbar: f64, qdec: f64, smax: usize) -> Result<Self> {
        if !(a0 > 0.0) {
            return Err(Error::InvalidModel(format!("a0 must be positive, got {a0}")));
        }
        if !(cbar > 0.0) {
            return Err(Error::InvalidModel(format!("cbar must be positive, got {cbar}")));
        }
        if !(qdec > 1.0) {
            return Err(Error::InvalidModel(format!("qdec must exceed 1, got {qdec}")));
        }
        let field = Self {
            a0,
            cbar,
            qdec,
            smax,
        };
        let a_min = field.a_min();
        if !(a_min > 0.0) {
            return Err(Error::Ellipticity { a_min });
        }
        Ok(field)
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn cbar(&self) -> f64 {
        self.cbar
    }

    pub fn qdec(&self) -> f64 {
        self.qdec
    }

    pub fn smax(&self) -> usize {
        self.smax
    }

    /// Decay sequence `b_j = cbar · j^(-qdec)` (1-based `j`).
    pub fn b(&self, j: usize) -> f64 {
        self.cbar * (j as f64).powf(-self.qdec)
    }

    /// Mode `ψ_j(x) = b_j sin(jπx)`.
    pub fn psi(&self, j: usize, x: f64) -> f64 {
        self.b(j) * (j as f64 * PI * x).sin()
    }

    /// Uniform lower bound of the coefficient over the parameter box.
    pub fn a_min(&self) -> f64 {
        let tail: f64 = (1..=self.smax).map(|j| (j as f64).powf(-self.qdec)).sum();
        self.a0 - 0.5 * self.cbar * tail
    }
}

/// Second-order stencil for `(a u')'` with coefficient values at the `n+1`
/// cell midpoints.
fn stencil<T: Real>(grid: &SpatialGrid, mid: &[f64]) -> DMatrix<T> {
    let n = grid.n;
    let inv_h2 = 1.0 / (grid.hx * grid.hx);
    let mut a = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        let (left, right) = (mid[i], mid[i + 1]);
        a[(i, i)] = T::lit(-(left + right) * inv_h2);
        if i + 1 < n {
            a[(i, i + 1)] = T::lit(right * inv_h2);
            a[(i + 1, i)] = T::lit(right * inv_h2);
        }
    }
    a
}

/// Discrete operator family `A(σ) = A0 + Σ σ_j A_j` together with the
/// actuator, observation and terminal weights.
#[derive(Clone, Debug)]
pub struct OperatorFamily<T: Real> {
    grid: SpatialGrid,
    field: DiffusionField,
    a0: DMatrix<T>,
    ajs: Vec<DMatrix<T>>,
    bseq: Vec<f64>,
    bmat: DMatrix<T>,
    q_obs: f64,
    p_ter: f64,
}

/// Builds the operator family, actuator matrix and weights.
pub fn assemble_family<T: Real>(
    grid: SpatialGrid,
    field: DiffusionField,
    actuators: &[(f64, f64)],
    q_obs: f64,
    p_ter: f64,
) -> Result<OperatorFamily<T>> {
    if field.a_min() <= 0.0 {
        return Err(Error::Ellipticity {
            a_min: field.a_min(),
        });
    }
    if !(q_obs >= 0.0) || !(p_ter >= 0.0) {
        return Err(Error::InvalidModel(format!(
            "q_obs and p_ter must be nonnegative, got {q_obs} and {p_ter}"
        )));
    }
    for &(l, r) in actuators {
        if !(0.0 < l && l < r && r < 1.0) {
            return Err(Error::InvalidModel(format!(
                "actuator interval [{l}, {r}] must be nonempty and inside (0, 1)"
            )));
        }
    }
    let mid: Vec<f64> = grid.midpoints().collect();
    let a0 = stencil(&grid, &vec![field.a0; mid.len()]);
    let ajs = (1..=field.smax)
        .map(|j| {
            let coeff: Vec<f64> = mid.iter().map(|&x| field.psi(j, x)).collect();
            stencil(&grid, &coeff)
        })
        .collect();
    let bseq = (1..=field.smax).map(|j| field.b(j)).collect();
    let nodes: Vec<f64> = grid.nodes().collect();
    let bmat = DMatrix::from_fn(grid.n, actuators.len(), |i, c| {
        let (l, r) = actuators[c];
        if nodes[i] >= l && nodes[i] <= r {
            T::one()
        } else {
            T::zero()
        }
    });
    let fam = OperatorFamily {
        grid,
        field,
        a0,
        ajs,
        bseq,
        bmat,
        q_obs,
        p_ter,
    };
    fam.spot_check_definiteness(0, 4)?;
    Ok(fam)
}

impl<T: Real> OperatorFamily<T> {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn field(&self) -> &DiffusionField {
        &self.field
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// Number of actuators.
    pub fn m(&self) -> usize {
        self.bmat.ncols()
    }

    pub fn smax(&self) -> usize {
        self.ajs.len()
    }

    pub fn hx(&self) -> T {
        T::lit(self.grid.hx)
    }

    pub fn a0(&self) -> &DMatrix<T> {
        &self.a0
    }

    /// `A_j`, 1-based.
    pub fn a_j(&self, j: usize) -> &DMatrix<T> {
        &self.ajs[j - 1]
    }

    pub fn bseq(&self) -> &[f64] {
        &self.bseq
    }

    pub fn bmat(&self) -> &DMatrix<T> {
        &self.bmat
    }

    pub fn q_obs(&self) -> T {
        T::lit(self.q_obs)
    }

    pub fn p_ter(&self) -> T {
        T::lit(self.p_ter)
    }

    /// Copy of the family with every fluctuation operator replaced by zero.
    pub fn without_fluctuations(&self) -> Self {
        let mut fam = self.clone();
        for aj in &mut fam.ajs {
            aj.fill(T::zero());
        }
        fam
    }

    /// `A(σ) = A0 + Σ_{j ≤ s} σ_j A_j`; coordinates beyond `s` are zero.
    pub fn evaluate_operator(&self, sigma: &[T]) -> Result<DMatrix<T>> {
        if sigma.len() > self.ajs.len() {
            return Err(Error::Domain(format!(
                "parameter dimension {} exceeds smax = {}",
                sigma.len(),
                self.ajs.len()
            )));
        }
        let half = T::lit(0.5);
        let mut a = self.a0.clone();
        for (j, (&s, aj)) in sigma.iter().zip(&self.ajs).enumerate() {
            if !(s.abs() <= half) {
                return Err(Error::Domain(format!(
                    "sigma_{} = {} outside [-1/2, 1/2]",
                    j + 1,
                    s.as_f64()
                )));
            }
            if s != T::zero() {
                a += aj * s;
            }
        }
        Ok(a)
    }

    /// `B* = hx · Bᵀ`, the adjoint w.r.t. `⟨·,·⟩_H` and Euclidean controls.
    pub fn adjoint_control(&self) -> DMatrix<T> {
        self.bmat.transpose() * self.hx()
    }

    /// `S = B B*`.
    pub fn control_gramian(&self) -> DMatrix<T> {
        &self.bmat * self.adjoint_control()
    }

    /// Checks that `A(σ)` is negative definite at corner vertices
    /// `σ_j = ±1/2` over random coordinate subsets.
    pub fn spot_check_definiteness(&self, seed: u64, samples: usize) -> Result<()> {
        let s = self.ajs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let sigma: Vec<T> = (0..s)
                .map(|_| match rng.gen_range(0..3) {
                    0 => T::lit(-0.5),
                    1 => T::lit(0.5),
                    _ => T::zero(),
                })
                .collect();
            let a = self.evaluate_operator(&sigma)?;
            let (_, hi) = linalg::symmetric_eigen_range(&a);
            if hi >= T::zero() {
                return Err(Error::InvalidModel(format!(
                    "A(sigma) not negative definite at a corner vertex (max eigenvalue {:.3e})",
                    hi.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Time-dependent vector field on the spatial grid.
pub type TimeField<T> = Arc<dyn Fn(T) -> DVector<T> + Send + Sync>;

/// Which of the two built-in data sets a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `f = g = g_T = 0`.
    Homogeneous,
    /// `f = 0`, `g(t, x) = t sin(πx)`, `g_T = g(T)`, `y0 = 0`.
    Tracking,
}

/// Forcing, targets and initial state of the LQ problem.
#[derive(Clone)]
pub struct ProblemData<T: Real> {
    pub horizon: T,
    pub f: TimeField<T>,
    pub g: TimeField<T>,
    pub gdot: TimeField<T>,
    pub g_terminal: DVector<T>,
    pub y0: DVector<T>,
    pub scenario: Scenario,
}

impl<T: Real> std::fmt::Debug for ProblemData<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("horizon", &self.horizon)
            .field("scenario", &self.scenario)
            .field("y0", &self.y0)
            .finish_non_exhaustive()
    }
}

fn zero_field<T: Real>(n: usize) -> TimeField<T> {
    Arc::new(move |_| DVector::zeros(n))
}

impl<T: Real> ProblemData<T> {
    /// Homogeneous data with initial state `y0(x) = sin(πx)`.
    pub fn homogeneous(grid: &SpatialGrid, horizon: T) -> Self {
        let n = grid.n();
        Self {
            horizon,
            f: zero_field(n),
            g: zero_field(n),
            gdot: zero_field(n),
            g_terminal: DVector::zeros(n),
            y0: grid.sample(|x| (PI * x).sin()),
            scenario: Scenario::Homogeneous,
        }
    }

    /// Tracking data: `g(t, x) = t sin(πx)`, `g_T = g(T)`, `f = 0`, and the
    /// state starts on the target, `y0 = g(0) = 0`.
    pub fn tracking(grid: &SpatialGrid, horizon: T) -> Self {
        let n = grid.n();
        let shape: DVector<T> = grid.sample(|x| (PI * x).sin());
        let g_shape = shape.clone();
        let gdot_shape = shape.clone();
        Self {
            horizon,
            f: zero_field(n),
            g: Arc::new(move |t| &g_shape * t),
            gdot: Arc::new(move |_| gdot_shape.clone()),
            g_terminal: &shape * horizon,
            y0: DVector::zeros(n),
            scenario: Scenario::Tracking,
        }
    }

    pub fn for_scenario(scenario: Scenario, grid: &SpatialGrid, horizon: T) -> Self {
        match scenario {
            Scenario::Homogeneous => Self::homogeneous(grid, horizon),
            Scenario::Tracking => Self::tracking(grid, horizon),
        }
    }

    pub fn check_time(&self, t: T) -> Result<()> {
        let slack = self.horizon * T::lit(1e-12);
        if t < -slack || t > self.horizon + slack {
            return Err(Error::Domain(format!(
                "time {} outside [0, {}]",
                t.as_f64(),
                self.horizon.as_f64()
            )));
        }
        Ok(())
    }

    /// Initial state of the shifted variable `x = y − g`.
    pub fn shifted_initial_state(&self) -> DVector<T> {
        &self.y0 - (self.g)(T::zero())
    }
}

/// `r_σ(t) = f(t) + A(σ) g(t) − ġ(t)`.
pub fn forcing_r<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    sigma: &[T],
    t: T,
) -> Result<DVector<T>> {
    data.check_time(t)?;
    let a = fam.evaluate_operator(sigma)?;
    Ok(forcing_with(&a, data, t))
}

/// `r(t)` for an already evaluated operator.
pub(crate) fn forcing_with<T: Real>(a: &DMatrix<T>, data: &ProblemData<T>, t: T) -> DVector<T> {
    (data.f)(t) + a * (data.g)(t) - (data.gdot)(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn family(n: usize, smax: usize) -> OperatorFamily<f64> {
        let grid = SpatialGrid::new(n).unwrap();
        let field = DiffusionField::new(1.0, 0.5, 2.0, smax).unwrap();
        assemble_family(grid, field, &[(0.2, 0.4), (0.6, 0.8)], 1.0, 0.1).unwrap()
    }

    #[test]
    fn constant_coefficient_stencil_is_scaled_laplacian() {
        let grid = SpatialGrid::new(3).unwrap();
        assert_eq!(grid.hx(), 0.25);
        let field = DiffusionField::new(1.0, 0.1, 2.0, 0).unwrap();
        let fam = assemble_family::<f64>(grid, field, &[], 1.0, 0.0).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, -2.0]) * 16.0;
        assert_eq!(fam.a0(), &expected);
    }

    #[test]
    fn origin_evaluates_to_a0() {
        let fam = family(8, 2);
        assert_eq!(fam.evaluate_operator(&[0.0, 0.0]).unwrap(), *fam.a0());
        assert_eq!(fam.evaluate_operator(&[]).unwrap(), *fam.a0());
    }

    #[test]
    fn half_step_in_first_coordinate() {
        let fam = family(8, 3);
        let a = fam.evaluate_operator(&[0.5]).unwrap();
        let expected = fam.a0() + fam.a_j(1) * 0.5;
        assert!((&a - expected).norm() < 1e-12);
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn ellipticity_accepts_zeta_partial_sum_case() {
        let field = DiffusionField::new(1.0, 1.0, 2.0, 100).unwrap();
        // Independent partial sum of j^-2 up to 100.
        let mut partial = 0.0;
        let mut j = 100.0_f64;
        while j >= 1.0 {
            partial += 1.0 / (j * j);
            j -= 1.0;
        }
        assert!((field.a_min() - (1.0 - partial / 2.0)).abs() < 1e-14);
        assert!((field.a_min() - 0.182508).abs() < 1e-6);
    }

    #[test]
    fn ellipticity_violation_reports_bound() {
        let err = DiffusionField::new(0.5, 1.0, 2.0, 10).unwrap_err();
        match err {
            Error::Ellipticity { a_min } => assert!(a_min < 0.0),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn out_of_box_parameter_is_rejected() {
        let fam = family(6, 2);
        assert!(matches!(fam.evaluate_operator(&[0.6]), Err(Error::Domain(_))));
        assert!(matches!(fam.evaluate_operator(&[0.0, 0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_actuator_is_rejected() {
        let grid = SpatialGrid::new(4).unwrap();
        let field = DiffusionField::new(1.0, 0.1, 2.0, 1).unwrap();
        assert!(assemble_family::<f64>(grid, field, &[(0.5, 0.5)], 1.0, 0.0).is_err());
        assert!(assemble_family::<f64>(grid, field, &[(0.0, 0.5)], 1.0, 0.0).is_err());
    }

    #[test]
    fn forcing_for_zero_data_vanishes() {
        let fam = family(6, 2);
        let data = ProblemData::homogeneous(fam.grid(), 1.0);
        let r = forcing_r(&fam, &data, &[0.3, -0.2], 0.5).unwrap();
        assert_eq!(r.norm(), 0.0);
        assert!(forcing_r(&fam, &data, &[], 1.5).is_err());
    }

    #[test]
    fn forcing_matches_hand_discretization() {
        let n = 5;
        let grid = SpatialGrid::new(n).unwrap();
        let field = DiffusionField::new(1.0, 0.1, 2.0, 1).unwrap();
        let fam = assemble_family::<f64>(grid, field, &[(0.2, 0.8)], 1.0, 0.0).unwrap();
        let data = ProblemData::tracking(&grid, 1.0);
        let t = 0.4;
        let r = forcing_r(&fam, &data, &[0.0], t).unwrap();
        let h = grid.hx();
        let w: Vec<f64> = (0..=n + 1).map(|i| (PI * i as f64 * h).sin()).collect();
        for i in 1..=n {
            let lap = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h);
            let expected = t * lap - w[i];
            assert!((r[i - 1] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity() {
        let fam = family(9, 1);
        let bstar = fam.adjoint_control();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u = DVector::from_fn(fam.m(), |_, _| rng.gen_range(-1.0..1.0));
            let v = DVector::from_fn(fam.n(), |_, _| rng.gen_range(-1.0..1.0));
            let lhs = fam.grid().inner(&(fam.bmat() * &u), &v);
            let rhs = u.dot(&(&bstar * &v));
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_of_zero_and_full_actuators() {
        let grid = SpatialGrid::new(4).unwrap();
        let field = DiffusionField::new(1.0, 0.1, 2.0, 1).unwrap();
        // Interval between nodes: zero column.
        let fam = assemble_family::<f64>(grid, field, &[(0.21, 0.39)], 1.0, 0.0).unwrap();
        assert_eq!(fam.adjoint_control().norm(), 0.0);
        let fam = assemble_family::<f64>(grid, field, &[(0.01, 0.99)], 1.0, 0.0).unwrap();
        let expected = DMatrix::from_element(1, 4, 0.2);
        assert!((fam.adjoint_control() - expected).norm() < 1e-15);
    }

    #[test]
    fn bseq_nonincreasing_and_summable() {
        let field = DiffusionField::new(1.0, 0.1, 2.0, 400).unwrap();
        let grid = SpatialGrid::new(4).unwrap();
        let fam = assemble_family::<f64>(grid, field, &[(0.2, 0.5)], 1.0, 0.0).unwrap();
        let b = fam.bseq();
        assert!(b.windows(2).all(|w| w[1] <= w[0]));
        let tail: f64 = b[300..].iter().sum();
        assert!(tail < 1e-3 * 0.1);
        let partial = |k: usize| b[..k].iter().sum::<f64>();
        assert!((partial(400) - partial(399)).abs() < 1e-6);
    }

    #[test]
    fn single_precision_family() {
        let grid = SpatialGrid::new(4).unwrap();
        let field = DiffusionField::new(1.0, 0.1, 2.0, 2).unwrap();
        let fam = assemble_family::<f32>(grid, field, &[(0.2, 0.5)], 1.0, 0.0).unwrap();
        let a = fam.evaluate_operator(&[0.5, -0.5]).unwrap();
        assert_eq!(a, a.transpose());
    }

    proptest! {
        #[test]
        fn symmetric_affine_and_negative_definite(
            s1 in -0.5f64..0.5, s2 in -0.5f64..0.5, s3 in -0.5f64..0.5,
            t1 in -0.5f64..0.5, t2 in -0.5f64..0.5, t3 in -0.5f64..0.5,
        ) {
            let fam = family(12, 3);
            let sigma = [s1, s2, s3];
            let tau = [t1, t2, t3];
            let a = fam.evaluate_operator(&sigma).unwrap();
            prop_assert_eq!(&a, &a.transpose());
            let (_, hi) = linalg::symmetric_eigen_range(&a);
            let a_min = fam.field().a_min();
            prop_assert!(hi <= -a_min * PI * PI + 1e-8 * a.norm());

            let mid: Vec<f64> = sigma.iter().zip(&tau).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = fam.evaluate_operator(&mid).unwrap();
            let rhs = (a + fam.evaluate_operator(&tau).unwrap()) * 0.5;
            prop_assert!((&lhs - &rhs).amax() <= 1e-12 * lhs.amax());

            let neg: Vec<f64> = sigma.iter().map(|x| -x).collect();
            let sum = fam.evaluate_operator(&sigma).unwrap() + fam.evaluate_operator(&neg).unwrap();
            prop_assert!((sum - fam.a0() * 2.0).amax() <= 1e-12 * fam.a0().amax());
        }
    }
}
