//! All-at-once discrete optimality system for the LQ problem at a fixed
//! parameter, used as an independent check of the Riccati feedback.
//!
//! The state is advanced by implicit Euler,
//! `(I − dt·A) y_{k+1} = y_k + dt·(B u_{k+1} + f_{k+1})`, and the running
//! cost is integrated with the right-endpoint rule over `k = 1..nt`. The
//! adjoint rows are the exact discrete adjoint of that scheme, so the
//! gradient condition `u_k = B* q_k` holds without discretization error:
//!
//! ```text
//! (I − dt·Aᵀ) q_k + dt·q²·y_k − q_{k+1} = dt·q²·g_k              k < nt
//! (I − dt·Aᵀ) q_nt + (dt·q² + p²)·y_nt = dt·q²·g_nt + p²·g_T
//! ```
//!
//! With `z_k = (y_k, q_k)` the system is block tridiagonal and is solved by
//! block elimination in time.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::riccati::TimeGrid;
use crate::scalar::Real;
use crate::spatial::{OperatorFamily, ProblemData};

/// Discrete optimal state, adjoint and control at one parameter value.
#[derive(Clone, Debug)]
pub struct OptimalitySolution<T: Real> {
    pub ys: Vec<DVector<T>>,
    pub qs: Vec<DVector<T>>,
    pub us: Vec<DVector<T>>,
    pub cost: T,
    /// Relative residual of the assembled optimality system.
    pub kkt_residual: T,
}

struct Sampled<T: Real> {
    f: Vec<DVector<T>>,
    g: Vec<DVector<T>>,
}

fn sample<T: Real>(data: &ProblemData<T>, grid: &TimeGrid) -> Sampled<T> {
    let ts: Vec<T> = (0..=grid.nt()).map(|k| T::lit(grid.t(k))).collect();
    Sampled {
        f: ts.iter().map(|&t| (data.f)(t)).collect(),
        g: ts.iter().map(|&t| (data.g)(t)).collect(),
    }
}

/// Solves the discrete optimality system for the operator `a = A(σ)`.
pub fn solve_open_loop<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    a: &DMatrix<T>,
    grid: &TimeGrid,
) -> Result<OptimalitySolution<T>> {
    let n = fam.n();
    let nt = grid.nt();
    if a.shape() != (n, n) || data.y0.len() != n {
        return Err(Error::Contract("oracle: operator or data shape mismatch".into()));
    }
    let dt = T::lit(grid.dt());
    let q2 = fam.q_obs() * fam.q_obs();
    let p2 = fam.p_ter() * fam.p_ter();
    let s = fam.control_gramian();
    let eye = DMatrix::<T>::identity(n, n);
    let m_state = &eye - a * dt;
    let m_adj = m_state.transpose();
    let smp = sample(data, grid);

    let diag_block = |k: usize| {
        let c = if k == nt { dt * q2 + p2 } else { dt * q2 };
        let mut d = DMatrix::<T>::zeros(2 * n, 2 * n);
        d.view_mut((0, 0), (n, n)).copy_from(&m_state);
        d.view_mut((0, n), (n, n)).copy_from(&(&s * (-dt)));
        d.view_mut((n, n), (n, n)).copy_from(&m_adj);
        for i in 0..n {
            d[(n + i, i)] = c;
        }
        d
    };
    let rhs_block = |k: usize| {
        let mut b = DVector::<T>::zeros(2 * n);
        b.rows_mut(0, n).copy_from(&(&smp.f[k] * dt));
        let mut adj = &smp.g[k] * (dt * q2);
        if k == nt {
            adj += &data.g_terminal * p2;
        }
        b.rows_mut(n, n).copy_from(&adj);
        b
    };

    // Forward elimination over k = 1..nt.
    let mut factors = Vec::with_capacity(nt);
    let mut rhs = Vec::with_capacity(nt);
    for k in 1..=nt {
        let mut d = diag_block(k);
        let mut b = rhs_block(k);
        if k == 1 {
            let mut top = b.rows_mut(0, n);
            top += &data.y0;
        } else {
            let prev_lu: &nalgebra::LU<T, Dyn, Dyn> = &factors[k - 2];
            let prev_b = &rhs[k - 2];
            // Coupling through y_{k-1} = [D'^{-1}_{k-1}]_y (b'_{k-1} + [0; q_k]).
            let mut unit = DMatrix::<T>::zeros(2 * n, n);
            unit.view_mut((n, 0), (n, n)).copy_from(&eye);
            let x: DMatrix<T> = prev_lu
                .solve(&unit)
                .ok_or_else(|| singular_block(k - 1))?;
            let w: DVector<T> = prev_lu.solve(prev_b).ok_or_else(|| singular_block(k - 1))?;
            let mut upper = d.view_mut((0, n), (n, n));
            upper -= x.rows(0, n);
            let mut top = b.rows_mut(0, n);
            top += w.rows(0, n);
        }
        factors.push(d.lu());
        rhs.push(b);
    }

    // Back substitution.
    let mut ys = vec![DVector::<T>::zeros(n); nt + 1];
    let mut qs = vec![DVector::<T>::zeros(n); nt + 1];
    ys[0] = data.y0.clone();
    for k in (1..=nt).rev() {
        let mut b = rhs[k - 1].clone();
        if k < nt {
            let mut bottom = b.rows_mut(n, n);
            bottom += &qs[k + 1];
        }
        let z = factors[k - 1].solve(&b).ok_or_else(|| singular_block(k))?;
        ys[k] = z.rows(0, n).into_owned();
        qs[k] = z.rows(n, n).into_owned();
    }
    // The adjoint recursion extended to the initial node.
    let rhs0 = &qs[1] - (&ys[0] - &smp.g[0]) * (dt * q2);
    qs[0] = m_adj.clone().lu().solve(&rhs0).ok_or_else(|| singular_block(0))?;

    let bstar = fam.adjoint_control();
    let us: Vec<DVector<T>> = qs.iter().map(|q| &bstar * q).collect();

    let kkt_residual = kkt_residual(&m_state, &s, q2, p2, dt, data, &smp, &ys, &qs);
    let cost = compute_cost(&ys, &us, data, fam, grid);
    Ok(OptimalitySolution {
        ys,
        qs,
        us,
        cost,
        kkt_residual,
    })
}

fn singular_block(k: usize) -> Error {
    Error::Singular(format!("optimality system block {k} is singular"))
}

/// Relative residual `‖G z − b‖ / max(‖b‖, ‖G z‖)` over all rows.
#[allow(clippy::too_many_arguments)]
fn kkt_residual<T: Real>(
    m_state: &DMatrix<T>,
    s: &DMatrix<T>,
    q2: T,
    p2: T,
    dt: T,
    data: &ProblemData<T>,
    smp: &Sampled<T>,
    ys: &[DVector<T>],
    qs: &[DVector<T>],
) -> T {
    let nt = ys.len() - 1;
    let m_adj = m_state.transpose();
    let mut res2 = (&ys[0] - &data.y0).norm_squared();
    let mut scale2 = data.y0.norm_squared();
    for k in 1..=nt {
        let lhs = m_state * &ys[k] - &ys[k - 1] - s * &qs[k] * dt;
        let rhs = &smp.f[k] * dt;
        res2 += (&lhs - &rhs).norm_squared();
        scale2 += lhs.norm_squared().max(rhs.norm_squared());
    }
    for k in 1..=nt {
        let (lhs, rhs) = if k < nt {
            (
                &m_adj * &qs[k] + &ys[k] * (dt * q2) - &qs[k + 1],
                &smp.g[k] * (dt * q2),
            )
        } else {
            (
                &m_adj * &qs[k] + &ys[k] * (dt * q2 + p2),
                &smp.g[k] * (dt * q2) + &data.g_terminal * p2,
            )
        };
        res2 += (&lhs - &rhs).norm_squared();
        scale2 += lhs.norm_squared().max(rhs.norm_squared());
    }
    if scale2 == T::zero() {
        return T::zero();
    }
    (res2 / scale2).sqrt()
}

/// `½·dt·Σ_{k=1}^{nt} (q²‖y_k − g_k‖²_H + ‖u_k‖²) + ½·p²‖y_nt − g_T‖²_H`.
pub fn compute_cost<T: Real>(
    ys: &[DVector<T>],
    us: &[DVector<T>],
    data: &ProblemData<T>,
    fam: &OperatorFamily<T>,
    grid: &TimeGrid,
) -> T {
    let nt = grid.nt();
    let half = T::lit(0.5);
    let dt = T::lit(grid.dt());
    let q2 = fam.q_obs() * fam.q_obs();
    let p2 = fam.p_ter() * fam.p_ter();
    let sg = fam.grid();
    let mut running = T::zero();
    for k in 1..=nt {
        let dev = &ys[k] - (data.g)(T::lit(grid.t(k)));
        running += q2 * sg.norm(&dev).powi(2) + us[k].norm_squared();
    }
    let term = sg.norm(&(&ys[nt] - &data.g_terminal)).powi(2);
    half * dt * running + half * p2 * term
}

/// Implicit-Euler state for a given control sequence (`us[0]` unused).
pub fn simulate_open_loop<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    a: &DMatrix<T>,
    us: &[DVector<T>],
    grid: &TimeGrid,
) -> Result<Vec<DVector<T>>> {
    let n = fam.n();
    let dt = T::lit(grid.dt());
    let lu = (DMatrix::<T>::identity(n, n) - a * dt).lu();
    let mut ys = Vec::with_capacity(grid.nt() + 1);
    ys.push(data.y0.clone());
    for k in 1..=grid.nt() {
        let f = (data.f)(T::lit(grid.t(k)));
        let rhs = &ys[k - 1] + (fam.bmat() * &us[k] + f) * dt;
        ys.push(lu.solve(&rhs).ok_or_else(|| singular_block(k))?);
    }
    Ok(ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{assemble_family, DiffusionField, SpatialGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn family(n: usize, q: f64, p: f64) -> OperatorFamily<f64> {
        let grid = SpatialGrid::new(n).unwrap();
        let field = DiffusionField::new(0.1, 0.05, 2.0, 4).unwrap();
        assemble_family(grid, field, &[(0.1, 0.4), (0.6, 0.9)], q, p).unwrap()
    }

    /// Dense reference: assemble the full optimality system and solve it
    /// with one LU, unknowns ordered (y_1..y_nt, q_1..q_nt).
    fn dense_reference(
        fam: &OperatorFamily<f64>,
        data: &ProblemData<f64>,
        a: &DMatrix<f64>,
        grid: &TimeGrid,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = fam.n();
        let nt = grid.nt();
        let dt = grid.dt();
        let q2 = fam.q_obs().powi(2);
        let p2 = fam.p_ter().powi(2);
        let s = fam.control_gramian();
        let big = 2 * n * nt;
        let mut g = DMatrix::<f64>::zeros(big, big);
        let mut b = DVector::<f64>::zeros(big);
        let y = |k: usize| (k - 1) * n;
        let q = |k: usize| n * nt + (k - 1) * n;
        for k in 1..=nt {
            let t = grid.t(k);
            for i in 0..n {
                for j in 0..n {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    g[(y(k) + i, y(k) + j)] = delta - dt * a[(i, j)];
                    g[(y(k) + i, q(k) + j)] = -dt * s[(i, j)];
                    g[(q(k) + i, q(k) + j)] = delta - dt * a[(j, i)];
                }
                if k > 1 {
                    g[(y(k) + i, y(k - 1) + i)] = -1.0;
                }
                if k < nt {
                    g[(q(k) + i, q(k + 1) + i)] = -1.0;
                    g[(q(k) + i, y(k) + i)] = dt * q2;
                } else {
                    g[(q(k) + i, y(k) + i)] = dt * q2 + p2;
                }
            }
            let mut by = (data.f)(t) * dt;
            if k == 1 {
                by += &data.y0;
            }
            let mut bq = (data.g)(t) * (dt * q2);
            if k == nt {
                bq += &data.g_terminal * p2;
            }
            b.rows_mut(y(k), n).copy_from(&by);
            b.rows_mut(q(k), n).copy_from(&bq);
        }
        let z = g.lu().solve(&b).unwrap();
        let ys = (1..=nt).map(|k| z.rows(y(k), n).into_owned()).collect();
        let qs = (1..=nt).map(|k| z.rows(q(k), n).into_owned()).collect();
        (ys, qs)
    }

    #[test]
    fn block_elimination_matches_dense_solve() {
        let fam = family(6, 1.0, 0.5);
        let grid = TimeGrid::new(1.0, 7).unwrap();
        let data = ProblemData::tracking(fam.grid(), 1.0);
        let a = fam.evaluate_operator(&[0.3, -0.4]).unwrap();
        let sol = solve_open_loop(&fam, &data, &a, &grid).unwrap();
        let (ys, qs) = dense_reference(&fam, &data, &a, &grid);
        for k in 1..=grid.nt() {
            assert!((&sol.ys[k] - &ys[k - 1]).amax() < 1e-11);
            assert!((&sol.qs[k] - &qs[k - 1]).amax() < 1e-11);
        }
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let fam = family(8, 1.0, 0.1);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let mut data = ProblemData::homogeneous(fam.grid(), 1.0);
        data.y0 = DVector::zeros(8);
        let sol = solve_open_loop(&fam, &data, fam.a0(), &grid).unwrap();
        assert!(sol.ys.iter().chain(&sol.qs).chain(&sol.us).all(|v| v.amax() == 0.0));
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn no_weights_means_no_control() {
        let fam = family(8, 0.0, 0.0);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let data = ProblemData::homogeneous(fam.grid(), 1.0);
        let sol = solve_open_loop(&fam, &data, fam.a0(), &grid).unwrap();
        assert!(sol.us.iter().all(|u| u.amax() == 0.0));
        let free = simulate_open_loop(&fam, &data, fam.a0(), &sol.us, &grid).unwrap();
        for (a, b) in sol.ys.iter().zip(&free) {
            assert!((a - b).amax() < 1e-14);
        }
    }

    #[test]
    fn gradient_condition_is_built_in() {
        let fam = family(8, 1.0, 0.3);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let data = ProblemData::tracking(fam.grid(), 1.0);
        let sol = solve_open_loop(&fam, &data, fam.a0(), &grid).unwrap();
        let bstar = fam.adjoint_control();
        for (u, q) in sol.us.iter().zip(&sol.qs) {
            assert_eq!(u, &(&bstar * q));
        }
    }

    #[test]
    fn cost_examples() {
        let fam = family(6, 1.0, 0.5);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let data = ProblemData::tracking(fam.grid(), 1.0);
        let ys: Vec<_> = (0..=4).map(|k| (data.g)(grid.t(k))).collect();
        let us = vec![DVector::zeros(2); 5];
        assert!(compute_cost(&ys, &us, &data, &fam, &grid).abs() < 1e-15);

        let fam = family(6, 0.0, 0.5);
        let data = ProblemData::homogeneous(fam.grid(), 1.0);
        let ys: Vec<_> = (0..=4).map(|k| &data.y0 * (1.0 + k as f64)).collect();
        let expected = 0.5 * 0.25 * fam.grid().norm(&ys[4]).powi(2);
        assert!((compute_cost(&ys, &us, &data, &fam, &grid) - expected).abs() < 1e-14);
    }

    #[test]
    fn oracle_control_beats_random_perturbations() {
        let fam = family(10, 1.0, 0.5);
        let grid = TimeGrid::new(1.0, 12).unwrap();
        let data = ProblemData::tracking(fam.grid(), 1.0);
        let a = fam.evaluate_operator(&[0.2]).unwrap();
        let sol = solve_open_loop(&fam, &data, &a, &grid).unwrap();
        let recomputed = simulate_open_loop(&fam, &data, &a, &sol.us, &grid).unwrap();
        let j_opt = compute_cost(&recomputed, &sol.us, &data, &fam, &grid);
        assert!((j_opt - sol.cost).abs() <= 1e-10 * sol.cost);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let eps = if trial % 2 == 0 { 1e-2 } else { 1e-1 };
            let us: Vec<_> = sol
                .us
                .iter()
                .map(|u| u + DVector::from_fn(u.len(), |_, _| eps * rng.gen_range(-1.0..1.0)))
                .collect();
            let ys = simulate_open_loop(&fam, &data, &a, &us, &grid).unwrap();
            assert!(compute_cost(&ys, &us, &data, &fam, &grid) >= sol.cost);
        }
    }
}
