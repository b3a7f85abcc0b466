//! Differential Riccati and offset equations on a uniform time grid.
//!
//! `Π` is integrated forward from `Π(0) = P*P`; the feedback at time `t`
//! reads `Π(T − t)`, so [`FeedbackLaw`] reverses the time index.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::spatial::{forcing_with, OperatorFamily, ProblemData};

const NEWTON_MAX_ITER: usize = 30;
const NEWTON_RTOL: f64 = 1e-10;

/// Uniform grid `t_k = k·dt`, `k = 0..nt`, on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    nt: usize,
    horizon: f64,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, nt: usize) -> Result<Self> {
        if nt < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 time steps, got {nt}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidModel(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            nt,
            horizon,
            dt: horizon / nt as f64,
        })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Grid on `[0, k·dt]` with the same step.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        let mut g = Self::new(self.t(k), k)?;
        g.dt = self.dt;
        Ok(g)
    }
}

/// `Π_k ≈ Π(t_k)`, `k = 0..nt`.
#[derive(Clone, Debug)]
pub struct RiccatiTrajectory<T: Real> {
    pub pis: Vec<DMatrix<T>>,
    pub grid: TimeGrid,
}

impl<T: Real> RiccatiTrajectory<T> {
    /// `Π(T)`.
    pub fn terminal(&self) -> &DMatrix<T> {
        &self.pis[self.grid.nt]
    }

    /// `Π(T − t_k)`.
    pub fn reversed(&self, k: usize) -> &DMatrix<T> {
        &self.pis[self.grid.nt - k]
    }
}

/// `h_k ≈ h(t_k)` with `h_nt = 0`.
#[derive(Clone, Debug)]
pub struct OffsetTrajectory<T: Real> {
    pub hs: Vec<DVector<T>>,
    pub grid: TimeGrid,
}

impl<T: Real> OffsetTrajectory<T> {
    pub fn zeros(n: usize, grid: TimeGrid) -> Self {
        Self {
            hs: vec![DVector::zeros(n); grid.nt + 1],
            grid,
        }
    }
}

/// Affine feedback `u(t_k) = gains[k]·x + offsets[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackLaw<T: Real> {
    pub gains: Vec<DMatrix<T>>,
    pub offsets: Vec<DVector<T>>,
    pub grid: TimeGrid,
}

impl<T: Real> FeedbackLaw<T> {
    /// Law with identically zero gain and offset.
    pub fn zero(n: usize, m: usize, grid: TimeGrid) -> Self {
        Self {
            gains: vec![DMatrix::zeros(m, n); grid.nt + 1],
            offsets: vec![DVector::zeros(m); grid.nt + 1],
            grid,
        }
    }

    pub fn n(&self) -> usize {
        self.gains[0].ncols()
    }

    pub fn m(&self) -> usize {
        self.gains[0].nrows()
    }
}

/// Implicit-Euler residual `X − Π_prev − dt·(XA + AᵀX − XSX + q²I)`.
fn step_residual<T: Real>(
    x: &DMatrix<T>,
    prev: &DMatrix<T>,
    a: &DMatrix<T>,
    s: &DMatrix<T>,
    q2: T,
    dt: T,
) -> DMatrix<T> {
    let xa = x * a;
    let mut rhs = &xa + xa.transpose() - x * s * x;
    for i in 0..rhs.nrows() {
        rhs[(i, i)] += q2;
    }
    x - prev - rhs * dt
}

/// Newton stopping threshold relative to `1 + ‖Π_k‖_F`. The factor
/// `min(1, dt)` also keeps the difference-quotient residual below the same
/// relative level; in single precision the floor is set by roundoff.
fn newton_tolerance<T: Real>(dt: f64) -> f64 {
    let rtol = NEWTON_RTOL * dt.min(1.0);
    rtol.max(1e3 * T::unit_roundoff().as_f64())
}

/// One implicit-Euler step of the DRE, solved by Newton's method with a
/// Lyapunov-type inner solve per iteration.
fn riccati_step<T: Real>(
    prev: &DMatrix<T>,
    a: &DMatrix<T>,
    s: &DMatrix<T>,
    q2: T,
    dt: T,
    tol: T,
    step: usize,
) -> Result<DMatrix<T>> {
    let n = prev.nrows();
    let half = T::lit(0.5);
    let mut x = prev.clone();
    let mut res = step_residual(&x, prev, a, s, q2, dt);
    let mut rnorm = res.norm();
    for _ in 0..NEWTON_MAX_ITER {
        if rnorm <= tol {
            return Ok(x);
        }
        // Fréchet derivative of the residual: H ↦ GᵀH + HG.
        let mut g = (a - s * &x) * (-dt);
        for i in 0..n {
            g[(i, i)] += half;
        }
        let dx = linalg::solve_lyapunov(&g, &(-&res))?;
        x += dx;
        linalg::symmetrize(&mut x);
        res = step_residual(&x, prev, a, s, q2, dt);
        rnorm = res.norm();
    }
    if rnorm <= tol {
        return Ok(x);
    }
    Err(Error::NewtonFailure {
        step,
        residual: rnorm.as_f64(),
        iterations: NEWTON_MAX_ITER,
    })
}

/// Integrates `Π̇ = ΠA + AᵀΠ − ΠSΠ + q²I`, `Π(0) = p²I`, with `S` given.
pub fn solve_riccati_raw<T: Real>(
    a: &DMatrix<T>,
    s: &DMatrix<T>,
    q_obs: T,
    p_ter: T,
    grid: &TimeGrid,
) -> Result<RiccatiTrajectory<T>> {
    let n = a.nrows();
    if a.ncols() != n || s.shape() != (n, n) {
        return Err(Error::Contract(format!(
            "Riccati shapes A {:?}, S {:?}",
            a.shape(),
            s.shape()
        )));
    }
    let dt = T::lit(grid.dt);
    let q2 = q_obs * q_obs;
    let tol_rel = T::lit(newton_tolerance::<T>(grid.dt));
    let mut pis = Vec::with_capacity(grid.nt + 1);
    pis.push(DMatrix::identity(n, n) * (p_ter * p_ter));
    for k in 0..grid.nt {
        let prev = &pis[k];
        let tol = tol_rel * (T::one() + prev.norm());
        let next = riccati_step(prev, a, s, q2, dt, tol, k + 1)?;
        pis.push(next);
    }
    Ok(RiccatiTrajectory { pis, grid: *grid })
}

/// Riccati trajectory for the operator `a` (typically `A(σ)`) with the
/// control and weights of `fam`.
pub fn solve_riccati<T: Real>(
    a: &DMatrix<T>,
    fam: &OperatorFamily<T>,
    grid: &TimeGrid,
) -> Result<RiccatiTrajectory<T>> {
    if a.shape() != (fam.n(), fam.n()) {
        return Err(Error::Contract(format!(
            "operator shape {:?} does not match state dimension {}",
            a.shape(),
            fam.n()
        )));
    }
    solve_riccati_raw(a, &fam.control_gramian(), fam.q_obs(), fam.p_ter(), grid)
}

/// Backward implicit Euler for
/// `−ḣ = (Aᵀ − Π(T−t)S) h + Π(T−t) r(t)`, `h(T) = 0`.
pub fn solve_offset<T: Real>(
    a: &DMatrix<T>,
    fam: &OperatorFamily<T>,
    traj: &RiccatiTrajectory<T>,
    data: &ProblemData<T>,
) -> Result<OffsetTrajectory<T>> {
    let grid = traj.grid;
    let n = fam.n();
    let s = fam.control_gramian();
    let dt = T::lit(grid.dt);
    let at = a.transpose();
    let mut hs = vec![DVector::zeros(n); grid.nt + 1];
    for k in (0..grid.nt).rev() {
        let pi = traj.reversed(k);
        let r = forcing_with(a, data, T::lit(grid.t(k)));
        let mut lhs = (&at - pi * &s) * (-dt);
        for i in 0..n {
            lhs[(i, i)] += T::one();
        }
        let rhs = &hs[k + 1] + pi * r * dt;
        hs[k] = lhs.lu().solve(&rhs).ok_or_else(|| {
            Error::Singular(format!(
                "offset step matrix singular at step {k} (dt = {:.3e}); reduce dt",
                grid.dt
            ))
        })?;
    }
    Ok(OffsetTrajectory { hs, grid })
}

/// `K_k = −B*Π_{nt−k}`, `κ_k = −B*h_k`.
pub fn feedback_from<T: Real>(
    traj: &RiccatiTrajectory<T>,
    offs: &OffsetTrajectory<T>,
    fam: &OperatorFamily<T>,
) -> Result<FeedbackLaw<T>> {
    if traj.grid != offs.grid || traj.pis.len() != offs.hs.len() {
        return Err(Error::Contract(
            "Riccati and offset trajectories live on different time grids".into(),
        ));
    }
    let bstar = -fam.adjoint_control();
    let nt = traj.grid.nt;
    let gains = (0..=nt).map(|k| &bstar * traj.reversed(k)).collect();
    let offsets = offs.hs.iter().map(|h| &bstar * h).collect();
    Ok(FeedbackLaw {
        gains,
        offsets,
        grid: traj.grid,
    })
}

/// `½⟨Π(T) y0, y0⟩_H`.
pub fn optimal_cost_homogeneous<T: Real>(
    traj: &RiccatiTrajectory<T>,
    fam: &OperatorFamily<T>,
    y0: &DVector<T>,
) -> T {
    fam.grid().inner(&(traj.terminal() * y0), y0) * T::lit(0.5)
}

/// `½⟨Π(T)x0, x0⟩ + ⟨h(0), x0⟩ + ∫(⟨h, r⟩ − ½‖B*h‖²) dt`, left-endpoint
/// quadrature, for the shifted state `x0 = y0 − g(0)`.
pub fn optimal_cost_nonhomogeneous<T: Real>(
    traj: &RiccatiTrajectory<T>,
    offs: &OffsetTrajectory<T>,
    a: &DMatrix<T>,
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    x0: &DVector<T>,
) -> T {
    let grid = fam.grid();
    let half = T::lit(0.5);
    let bstar = fam.adjoint_control();
    let dt = T::lit(traj.grid.dt);
    let mut integral = T::zero();
    for k in 0..traj.grid.nt {
        let h = &offs.hs[k];
        let r = forcing_with(a, data, T::lit(traj.grid.t(k)));
        integral += (grid.inner(h, &r) - (&bstar * h).norm_squared() * half) * dt;
    }
    optimal_cost_homogeneous(traj, fam, x0) + grid.inner(&offs.hs[0], x0) + integral
}

/// Convenience: Riccati, offset and feedback law at parameter `sigma`.
pub fn feedback_at<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    sigma: &[T],
    grid: &TimeGrid,
    with_offset: bool,
) -> Result<(RiccatiTrajectory<T>, FeedbackLaw<T>)> {
    let a = fam.evaluate_operator(sigma)?;
    let traj = solve_riccati(&a, fam, grid)?;
    let offs = if with_offset {
        solve_offset(&a, fam, &traj, data)?
    } else {
        OffsetTrajectory::zeros(fam.n(), *grid)
    };
    let law = feedback_from(&traj, &offs, fam)?;
    Ok((traj, law))
}
