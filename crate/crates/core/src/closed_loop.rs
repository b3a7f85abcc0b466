//! Closed-loop simulation under a given affine feedback law, and how
//! errors in the law propagate to states and controls.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::riccati::{FeedbackLaw, TimeGrid};
use crate::scalar::Real;
use crate::spatial::{OperatorFamily, ProblemData};

/// States and reconstructed controls on the time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    pub ys: Vec<DVector<T>>,
    pub us: Vec<DVector<T>>,
    pub grid: TimeGrid,
}

/// Implicit Euler for `ẏ = A(σ)y + Bu + f` with `u_k = K_k (y_k − g_k) + κ_k`,
/// the feedback acting at the new time level:
/// `(I − dt(A + BK_{k+1})) y_{k+1} = y_k + dt(B(κ_{k+1} − K_{k+1}g_{k+1}) + f_{k+1})`.
pub fn simulate<T: Real>(
    fam: &OperatorFamily<T>,
    sigma: &[T],
    law: &FeedbackLaw<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
) -> Result<Trajectory<T>> {
    if law.grid != *grid || law.gains.len() != grid.nt() + 1 {
        return Err(Error::Contract("feedback law lives on a different time grid".into()));
    }
    if law.n() != fam.n() || law.m() != fam.m() || data.y0.len() != fam.n() {
        return Err(Error::Contract("feedback law or data shape does not match the model".into()));
    }
    let a = fam.evaluate_operator(sigma)?;
    let b = fam.bmat();
    let n = fam.n();
    let dt = T::lit(grid.dt());
    let control = |k: usize, y: &DVector<T>| -> DVector<T> {
        let g = (data.g)(T::lit(grid.t(k)));
        &law.gains[k] * (y - g) + &law.offsets[k]
    };
    let mut ys = Vec::with_capacity(grid.nt() + 1);
    let mut us = Vec::with_capacity(grid.nt() + 1);
    us.push(control(0, &data.y0));
    ys.push(data.y0.clone());
    for k in 1..=grid.nt() {
        let t = T::lit(grid.t(k));
        let kk = &law.gains[k];
        let lhs = DMatrix::<T>::identity(n, n) - (&a + b * kk) * dt;
        let rhs = &ys[k - 1] + (b * (&law.offsets[k] - kk * (data.g)(t)) + (data.f)(t)) * dt;
        let y = lhs.lu().solve(&rhs).ok_or_else(|| {
            Error::Singular(format!(
                "closed-loop step matrix singular at step {k} (dt = {:.3e}); reduce dt",
                grid.dt()
            ))
        })?;
        us.push(control(k, &y));
        ys.push(y);
    }
    Ok(Trajectory { ys, us, grid: *grid })
}

/// One evaluation point of a propagation study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropagationRow {
    pub index: usize,
    pub eps_fb: f64,
    pub eps_y: f64,
    pub eps_u: f64,
    pub ratio_y: f64,
    pub ratio_u: f64,
}

/// Simulates both laws at every `σ` and compares the results in
/// `sup_k ‖·‖_H` (states) and `sup_k ‖·‖` (controls).
pub fn propagation_study<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
    sigmas: &[Vec<T>],
    law_exact: &FeedbackLaw<T>,
    law_hat: &FeedbackLaw<T>,
) -> Result<Vec<PropagationRow>> {
    let eps_fb = crate::averaging::feedback_distance(law_exact, law_hat, fam.hx())?.as_f64();
    let sg = fam.grid();
    sigmas
        .par_iter()
        .enumerate()
        .map(|(index, sigma)| {
            let exact = simulate(fam, sigma, law_exact, data, grid)?;
            let hat = simulate(fam, sigma, law_hat, data, grid)?;
            let eps_y = sup_diff(&exact.ys, &hat.ys, |v| sg.norm(v).as_f64());
            let eps_u = sup_diff(&exact.us, &hat.us, |v| v.norm().as_f64());
            let ratio = |e: f64| if eps_fb == 0.0 { 0.0 } else { e / eps_fb };
            Ok(PropagationRow {
                index,
                eps_fb,
                eps_y,
                eps_u,
                ratio_y: ratio(eps_y),
                ratio_u: ratio(eps_u),
            })
        })
        .collect()
}

fn sup_diff<T: Real>(a: &[DVector<T>], b: &[DVector<T>], norm: impl Fn(&DVector<T>) -> f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| norm(&(x - y))).fold(0.0, f64::max)
}
