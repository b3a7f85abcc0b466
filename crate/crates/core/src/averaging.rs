//! Cubature averages of parametric feedback laws and the convergence
//! studies built on them (dimension truncation, QMC/MC rates, parametric
//! derivative decay).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::qmc::lattice::{cbc_lattice_kernel, nearest_prime, LatticeKernel};
use crate::qmc::points::{lattice_points, mc_points, random_shift, tent_fold, to_symmetric, QmcPointSet};
use crate::qmc::polylattice::cbc_interlaced;
use crate::qmc::weights::WeightSpec;
use crate::riccati::{
    feedback_at, optimal_cost_homogeneous, optimal_cost_nonhomogeneous, solve_offset, solve_riccati,
    FeedbackLaw, TimeGrid,
};
use crate::scalar::Real;
use crate::spatial::{OperatorFamily, ProblemData, Scenario};

/// Nodes per sequential block before the pairwise tree reduction.
const BLOCK: usize = 8;

/// Nodes in `[−1/2, 1/2]^s` with weights summing to one.
#[derive(Clone, Debug)]
pub struct CubatureRule {
    nodes: QmcPointSet,
    weights: Vec<f64>,
}

impl CubatureRule {
    /// Equal-weight rule.
    pub fn equal(nodes: QmcPointSet) -> Result<Self> {
        let n = nodes.n();
        Self::new(nodes, vec![1.0 / n as f64; n])
    }

    pub fn new(nodes: QmcPointSet, weights: Vec<f64>) -> Result<Self> {
        if nodes.n() == 0 || weights.len() != nodes.n() {
            return Err(Error::Contract(format!(
                "{} weights for {} nodes",
                weights.len(),
                nodes.n()
            )));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > 1e-14 {
            return Err(Error::Contract(format!("cubature weights sum to {total}, not 1")));
        }
        if !nodes.is_symmetric_box() {
            return Err(Error::Domain("cubature nodes must lie in [-1/2, 1/2]^s".into()));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &QmcPointSet {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Neumaier summation; equal weights `1/N` then sum to one within an ulp.
fn compensated_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Quantities that can be averaged: scaled and summed in place.
pub trait Accumulate: Send + Sized {
    fn scale(&mut self, w: f64);
    fn add(&mut self, other: &Self);
}

impl Accumulate for f64 {
    fn scale(&mut self, w: f64) {
        *self *= w;
    }

    fn add(&mut self, other: &Self) {
        *self += other;
    }
}

impl<T: Real> Accumulate for FeedbackLaw<T> {
    fn scale(&mut self, w: f64) {
        let w = T::lit(w);
        self.gains.iter_mut().for_each(|g| *g *= w);
        self.offsets.iter_mut().for_each(|o| *o *= w);
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.gains.iter_mut().zip(&other.gains) {
            *a += b;
        }
        for (a, b) in self.offsets.iter_mut().zip(&other.offsets) {
            *a += b;
        }
    }
}

/// Weighted sum `Σ α_k f(σ_k)` with per-node work in the rayon pool and a
/// fixed block/pairwise-tree summation order, so the result does not
/// depend on the number of threads.
pub fn cubature_sum<A, F>(rule: &CubatureRule, f: F) -> Result<A>
where
    A: Accumulate,
    F: Fn(&[f64]) -> Result<A> + Sync,
{
    let n = rule.len();
    let blocks: Vec<A> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc: Option<A> = None;
            for k in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let mut v = f(rule.nodes.point(k)).map_err(|e| Error::Node {
                    index: k,
                    source: Box::new(e),
                })?;
                v.scale(rule.weights[k]);
                match acc.as_mut() {
                    Some(a) => a.add(&v),
                    None => acc = Some(v),
                }
            }
            Ok(acc.expect("blocks are nonempty"))
        })
        .collect::<Result<_>>()?;
    Ok(tree_sum(blocks))
}

fn tree_sum<A: Accumulate>(mut items: Vec<A>) -> A {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add(&b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop().expect("at least one item")
}

fn with_offset<T: Real>(data: &ProblemData<T>) -> bool {
    data.scenario != Scenario::Homogeneous
}

fn to_sigma<T: Real>(p: &[f64]) -> Vec<T> {
    p.iter().map(|&x| T::lit(x)).collect()
}

/// Cubature mean of the parametric feedback `(K(σ), κ(σ))`; in the
/// homogeneous scenario the offsets are identically zero.
pub fn average_feedback<T: Real>(
    rule: &CubatureRule,
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
) -> Result<FeedbackLaw<T>> {
    if rule.nodes.s() > fam.smax() {
        return Err(Error::Domain(format!(
            "cubature dimension {} exceeds smax = {}",
            rule.nodes.s(),
            fam.smax()
        )));
    }
    let offsets = with_offset(data);
    cubature_sum(rule, |p| {
        feedback_at(fam, data, &to_sigma::<T>(p), grid, offsets).map(|(_, law)| law)
    })
}

/// Optimal cost `J(σ)` from the Riccati and offset solutions.
pub fn optimal_cost_at<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    sigma: &[T],
    grid: &TimeGrid,
) -> Result<T> {
    let a = fam.evaluate_operator(sigma)?;
    let traj = solve_riccati(&a, fam, grid)?;
    if with_offset(data) {
        let offs = solve_offset(&a, fam, &traj, data)?;
        let x0 = data.shifted_initial_state();
        Ok(optimal_cost_nonhomogeneous(&traj, &offs, &a, fam, data, &x0))
    } else {
        Ok(optimal_cost_homogeneous(&traj, fam, &data.y0))
    }
}

/// Cubature mean of the optimal cost.
pub fn average_cost<T: Real>(
    rule: &CubatureRule,
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
) -> Result<f64> {
    cubature_sum(rule, |p| {
        optimal_cost_at(fam, data, &to_sigma::<T>(p), grid).map(Real::as_f64)
    })
}

/// `sup_k [σ_max(ΔK_k)/√hx + ‖Δκ_k‖]`, the gain measured as an operator
/// from the `hx`-weighted state space to Euclidean controls.
pub fn feedback_distance<T: Real>(a: &FeedbackLaw<T>, b: &FeedbackLaw<T>, hx: T) -> Result<T> {
    if a.gains.len() != b.gains.len()
        || a.offsets.len() != b.offsets.len()
        || a.gains.iter().zip(&b.gains).any(|(x, y)| x.shape() != y.shape())
        || a.offsets.iter().zip(&b.offsets).any(|(x, y)| x.len() != y.len())
    {
        return Err(Error::Contract("feedback laws differ in shape or time grid".into()));
    }
    let scale = T::one() / hx.sqrt();
    let mut sup = T::zero();
    for k in 0..a.gains.len() {
        let dk = &a.gains[k] - &b.gains[k];
        let dkap = &a.offsets[k] - &b.offsets[k];
        let v = linalg::spectral_norm(&dk) * scale + dkap.norm();
        sup = sup.max(v);
    }
    Ok(sup)
}

/// Least-squares slope of `ln y` against `ln x`, skipping nonpositive `y`.
pub fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Running slopes: entry `i` is the slope fitted to rows `0..=i`.
pub fn running_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    (0..xs.len())
        .map(|i| fitted_slope(&xs[..=i], &ys[..=i]))
        .collect()
}

/// One row of the truncation study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationRow {
    pub s: usize,
    pub error: f64,
    pub corner_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationTable {
    pub rows: Vec<TruncationRow>,
    pub slope: f64,
}

/// Truncation error of the mean feedback, `s` against `s_ref`, with a common
/// rule in dimension `s_ref` whose trailing coordinates are zeroed; plus
/// `‖Π_{σ,s}(T) − Π_{σ,s_ref}(T)‖₂` at the corner `σ = (1/2, …)`.
pub fn truncation_study<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
    s_list: &[usize],
    s_ref: usize,
    nodes: &QmcPointSet,
) -> Result<TruncationTable> {
    if s_list.iter().any(|&s| s >= s_ref) || nodes.s() < s_ref || s_ref > fam.smax() {
        return Err(Error::Domain(format!(
            "truncation study needs every s below s_ref = {s_ref} <= min(rule dimension, smax)"
        )));
    }
    let hx = fam.hx();
    let mean_at = |s: usize| -> Result<FeedbackLaw<T>> {
        average_feedback(&CubatureRule::equal(nodes.truncate(s))?, fam, data, grid)
    };
    let reference = mean_at(s_ref)?;
    let corner = |s: usize| -> Result<DMatrix<T>> {
        let sigma = vec![T::lit(0.5); s];
        let a = fam.evaluate_operator(&sigma)?;
        Ok(solve_riccati(&a, fam, grid)?.terminal().clone())
    };
    let corner_ref = corner(s_ref)?;
    let mut rows = Vec::with_capacity(s_list.len());
    for &s in s_list {
        let err = feedback_distance(&mean_at(s)?, &reference, hx)?;
        let cerr = linalg::spectral_norm(&(corner(s)? - &corner_ref));
        rows.push(TruncationRow {
            s,
            error: err.as_f64(),
            corner_error: cerr.as_f64(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.s as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(TruncationTable {
        slope: fitted_slope(&xs, &ys),
        rows,
    })
}

/// Point-set family used by a rate study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMethod {
    /// CBC lattice with `R` random shifts.
    Shifted,
    /// CBC lattice for the tent kernel, tent-transformed, unshifted.
    Folded,
    /// Interlaced polynomial lattice, `N = 2^m`.
    Interlaced,
    /// Plain Monte Carlo, `R` independent repetitions.
    Mc,
}

/// Quantity whose cubature error is measured.
#[derive(Clone, Debug)]
pub enum Qoi<T: Real> {
    /// Mean feedback law, error in [`feedback_distance`].
    Feedback(FeedbackLaw<T>),
    /// Mean optimal cost, absolute error.
    Cost(f64),
}

/// Point sets for one size `n` (prime for lattices, `2^m` for interlaced).
pub fn rate_point_sets(
    method: RateMethod,
    n: usize,
    s: usize,
    alpha: usize,
    bseq: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<QmcPointSet>> {
    let pod = || WeightSpec::pod(bseq[..s].to_vec());
    Ok(match method {
        RateMethod::Shifted => {
            let (rule, _) = cbc_lattice_kernel(n, s, &pod()?, LatticeKernel::ShiftAveraged)?;
            (0..repeats as u64)
                .map(|r| to_symmetric(&random_shift(&rule, seed + r)))
                .collect()
        }
        RateMethod::Folded => {
            let (rule, _) = cbc_lattice_kernel(n, s, &pod()?, LatticeKernel::Tent)?;
            vec![to_symmetric(&tent_fold(&lattice_points(&rule)))]
        }
        RateMethod::Interlaced => {
            if !n.is_power_of_two() {
                return Err(Error::Domain(format!("interlaced rule size {n} is not a power of two")));
            }
            let w = WeightSpec::spod(bseq[..s].to_vec(), alpha)?;
            let rule = cbc_interlaced(n.trailing_zeros(), s, alpha, &w)?;
            vec![to_symmetric(&rule.points())]
        }
        RateMethod::Mc => (0..repeats as u64).map(|r| mc_points(n, s, seed + r)).collect(),
    })
}

/// Standard size ladder: primes nearest to `2^k` for lattices, `2^k` else.
pub fn size_ladder(method: RateMethod, exponents: &[u32]) -> Vec<usize> {
    exponents
        .iter()
        .map(|&k| match method {
            RateMethod::Shifted | RateMethod::Folded => nearest_prime(1 << k),
            RateMethod::Interlaced | RateMethod::Mc => 1 << k,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub rms_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub slope: f64,
}

impl RateTable {
    pub fn running_slopes(&self) -> Vec<f64> {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.rms_error).collect();
        running_slopes(&xs, &ys)
    }
}

/// Error of the cubature mean for one point set.
pub fn qoi_error<T: Real>(
    nodes: QmcPointSet,
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
    reference: &Qoi<T>,
) -> Result<f64> {
    let rule = CubatureRule::equal(nodes)?;
    match reference {
        Qoi::Feedback(r) => {
            let mean = average_feedback(&rule, fam, data, grid)?;
            Ok(feedback_distance(&mean, r, fam.hx())?.as_f64())
        }
        Qoi::Cost(r) => Ok((average_cost(&rule, fam, data, grid)? - r).abs()),
    }
}

/// RMS cubature error over `repeats` randomizations (one for deterministic
/// methods) for each size, and the fitted log–log slope. `bseq` feeds the
/// CBC weights.
#[allow(clippy::too_many_arguments)]
pub fn qmc_rate_study<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
    s: usize,
    sizes: &[usize],
    method: RateMethod,
    alpha: usize,
    bseq: &[f64],
    repeats: usize,
    seed: u64,
    reference: &Qoi<T>,
) -> Result<RateTable> {
    if s > fam.smax() || s > bseq.len() {
        return Err(Error::Domain(format!(
            "s = {s} exceeds smax = {} or the {} weight coefficients",
            fam.smax(),
            bseq.len()
        )));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let sets = rate_point_sets(method, n, s, alpha, bseq, repeats.max(1), seed)?;
        let count = sets.len() as f64;
        let mut sq = 0.0;
        for nodes in sets {
            sq += qoi_error(nodes, fam, data, grid, reference)?.powi(2);
        }
        rows.push(RateRow {
            n,
            rms_error: (sq / count).sqrt(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rms_error).collect();
    Ok(RateTable {
        slope: fitted_slope(&xs, &ys),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayRow {
    pub j: usize,
    /// `sup_t ‖∂_j K‖` by central differences.
    pub gain_fd: f64,
    /// `|∂_j J|` by central differences.
    pub cost_fd: f64,
    /// `‖∂_j Π(T)‖₂` by central differences.
    pub riccati_fd: f64,
    pub gain_ratio: f64,
    pub cost_ratio: f64,
    pub riccati_ratio: f64,
    pub b_ratio: f64,
}

/// Central finite differences at `σ = 0` in coordinate `j`, normalized by
/// the values for `j = 1`.
pub fn derivative_decay_study<T: Real>(
    fam: &OperatorFamily<T>,
    data: &ProblemData<T>,
    grid: &TimeGrid,
    j_list: &[usize],
    delta: f64,
) -> Result<Vec<DecayRow>> {
    if !(delta > 0.0 && delta <= 1e-2) {
        return Err(Error::Domain(format!("finite-difference step must be in (0, 1e-2], got {delta}")));
    }
    if let Some(&j) = j_list.iter().find(|&&j| j == 0 || j > fam.smax()) {
        return Err(Error::Domain(format!("coordinate {j} outside 1..={}", fam.smax())));
    }
    let hx = fam.hx();
    let two_delta = T::lit(2.0 * delta);
    let offsets = with_offset(data);
    let fd = |j: usize| -> Result<(f64, f64, f64)> {
        let mut plus = vec![T::zero(); j];
        let mut minus = vec![T::zero(); j];
        plus[j - 1] = T::lit(delta);
        minus[j - 1] = T::lit(-delta);
        let (tp, lp) = feedback_at(fam, data, &plus, grid, offsets)?;
        let (tm, lm) = feedback_at(fam, data, &minus, grid, offsets)?;
        let gain = feedback_distance(&lp, &lm, hx)? / two_delta;
        let cost = (optimal_cost_at(fam, data, &plus, grid)? - optimal_cost_at(fam, data, &minus, grid)?).abs()
            / two_delta;
        let ric = linalg::spectral_norm(&(tp.terminal() - tm.terminal())) / two_delta;
        Ok((gain.as_f64(), cost.as_f64(), ric.as_f64()))
    };
    let base = fd(1)?;
    let b1 = fam.bseq()[0];
    j_list
        .iter()
        .map(|&j| {
            let (g, c, r) = fd(j)?;
            let ratio = |v: f64, b: f64| if b == 0.0 { 0.0 } else { v / b };
            Ok(DecayRow {
                j,
                gain_fd: g,
                cost_fd: c,
                riccati_fd: r,
                gain_ratio: ratio(g, base.0),
                cost_ratio: ratio(c, base.1),
                riccati_ratio: ratio(r, base.2),
                b_ratio: fam.bseq()[j - 1] / b1,
            })
        })
        .collect()
}

/// Flattens a law into `gains ‖ offsets` (column-major blocks).
pub fn flatten_law<T: Real>(law: &FeedbackLaw<T>) -> Vec<f64> {
    law.gains
        .iter()
        .flat_map(|g| g.iter().map(|v| v.as_f64()))
        .chain(law.offsets.iter().flat_map(|o| o.iter().map(|v| v.as_f64())))
        .collect()
}

/// Inverse of [`flatten_law`].
pub fn unflatten_law<T: Real>(values: &[f64], m: usize, n: usize, grid: TimeGrid) -> Result<FeedbackLaw<T>> {
    let steps = grid.nt() + 1;
    if values.len() != steps * (m * n + m) {
        return Err(Error::Contract(format!(
            "flattened law has {} values, expected {}",
            values.len(),
            steps * (m * n + m)
        )));
    }
    let (g, o) = values.split_at(steps * m * n);
    let gains = g
        .chunks(m * n)
        .map(|c| DMatrix::from_iterator(m, n, c.iter().map(|&v| T::lit(v))))
        .collect();
    let offsets = o
        .chunks(m)
        .map(|c| DVector::from_iterator(m, c.iter().map(|&v| T::lit(v))))
        .collect();
    Ok(FeedbackLaw { gains, offsets, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmc::lattice::LatticeRule;
    use crate::qmc::points::{centered_lattice, PointMeta};
    use crate::spatial::{assemble_family, DiffusionField, SpatialGrid};

    fn setup(smax: usize) -> (OperatorFamily<f64>, ProblemData<f64>, TimeGrid) {
        let grid = SpatialGrid::new(8).unwrap();
        let field = DiffusionField::new(0.1, 0.05, 2.0, smax).unwrap();
        let fam = assemble_family(grid, field, &[(0.2, 0.4), (0.6, 0.8)], 1.0, 0.1).unwrap();
        let data = ProblemData::homogeneous(&grid, 1.0);
        (fam, data, TimeGrid::new(1.0, 8).unwrap())
    }

    #[test]
    fn weights_must_be_normalized() {
        let nodes = mc_points(4, 2, 1);
        assert!(CubatureRule::new(nodes.clone(), vec![0.25; 4]).is_ok());
        assert!(CubatureRule::new(nodes.clone(), vec![0.3; 4]).is_err());
        let rule = CubatureRule::equal(mc_points(7, 2, 1)).unwrap();
        assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        let outside = QmcPointSet::from_rows(&[vec![0.7]], PointMeta::Custom).unwrap();
        assert!(CubatureRule::equal(outside).is_err());
    }

    #[test]
    fn single_node_at_origin_is_nominal() {
        let (fam, data, grid) = setup(2);
        let origin = QmcPointSet::from_rows(&[vec![0.0, 0.0]], PointMeta::Custom).unwrap();
        let mean = average_feedback(&CubatureRule::equal(origin).unwrap(), &fam, &data, &grid).unwrap();
        let (_, nominal) = feedback_at(&fam, &data, &[], &grid, false).unwrap();
        assert_eq!(mean, nominal);
    }

    #[test]
    fn parameter_free_family_averages_to_nominal() {
        let (fam, data, grid) = setup(3);
        let fam = fam.without_fluctuations();
        let pts = centered_lattice(&LatticeRule::new(13, vec![1, 5, 8]).unwrap());
        let mean = average_feedback(&CubatureRule::equal(pts).unwrap(), &fam, &data, &grid).unwrap();
        let (_, nominal) = feedback_at(&fam, &data, &[], &grid, false).unwrap();
        assert!(feedback_distance(&mean, &nominal, fam.hx()).unwrap() <= 1e-13);
        assert!(mean.offsets.iter().all(|o| o.amax() == 0.0));
    }

    #[test]
    fn reduction_order_is_thread_independent() {
        let (fam, data, grid) = setup(3);
        let rule = CubatureRule::equal(mc_points(37, 3, 2)).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| average_feedback(&rule, &fam, &data, &grid)).unwrap();
        let b = three.install(|| average_feedback(&rule, &fam, &data, &grid)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn node_failures_carry_the_index() {
        let (fam, data, grid) = setup(1);
        let rule = CubatureRule::equal(mc_points(3, 2, 0)).unwrap();
        assert!(matches!(average_feedback(&rule, &fam, &data, &grid), Err(Error::Domain(_))));
        let bad = |p: &[f64]| -> Result<f64> {
            if p[0] > 0.0 {
                Err(Error::Singular("test".into()))
            } else {
                Ok(1.0)
            }
        };
        let pts = QmcPointSet::from_rows(&[vec![-0.1], vec![0.2]], PointMeta::Custom).unwrap();
        match cubature_sum(&CubatureRule::equal(pts).unwrap(), bad) {
            Err(Error::Node { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distance_examples() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let a = FeedbackLaw::<f64>::zero(4, 2, grid);
        assert_eq!(feedback_distance(&a, &a, 0.2).unwrap(), 0.0);
        let mut b = a.clone();
        b.offsets[2] = DVector::from_vec(vec![0.3, 0.4]);
        assert!((feedback_distance(&a, &b, 0.2).unwrap() - 0.5).abs() < 1e-15);
        // Rank-one gain u vᵀ: σ_max = ‖u‖‖v‖, scaled by hx^{-1/2}.
        let mut c = a.clone();
        let u = DVector::from_vec(vec![3.0, 4.0]);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        c.gains[1] = &u * v.transpose();
        let d1 = feedback_distance(&a, &c, 0.25).unwrap();
        assert!((d1 - 10.0).abs() < 1e-12);
        c.gains[1] *= 2.0;
        assert!((feedback_distance(&a, &c, 0.25).unwrap() - 2.0 * d1).abs() < 1e-12);
        let short = FeedbackLaw::<f64>::zero(4, 2, TimeGrid::new(1.0, 2).unwrap());
        assert!(feedback_distance(&a, &short, 0.2).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 20.0, 40.0, 80.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        assert!((fitted_slope(&xs, &ys) + 1.5).abs() < 1e-12);
        assert!(running_slopes(&xs, &ys)[0].is_nan());
    }

    #[test]
    fn truncation_reference_has_zero_error() {
        let (fam, data, grid) = setup(6);
        let pts = centered_lattice(&LatticeRule::new(13, vec![1, 5, 8, 3, 2, 7]).unwrap());
        let table = truncation_study(&fam, &data, &grid, &[2, 4], 6, &pts).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows[0].corner_error >= table.rows[1].corner_error);
        assert!(truncation_study(&fam, &data, &grid, &[6], 6, &pts).is_err());
    }

    #[test]
    fn decay_study_basics() {
        let (fam, data, grid) = setup(4);
        let rows = derivative_decay_study(&fam, &data, &grid, &[1, 2, 4], 1e-3).unwrap();
        assert!((rows[0].gain_ratio - 1.0).abs() < 1e-12);
        let zero = fam.without_fluctuations();
        let rows = derivative_decay_study(&zero, &data, &grid, &[2], 1e-3);
        // A_1 = 0 makes the normalizing derivative vanish; ratios report 0.
        let rows = rows.unwrap();
        assert_eq!(rows[0].gain_fd, 0.0);
        assert!(derivative_decay_study(&fam, &data, &grid, &[2], 0.1).is_err());
    }

    #[test]
    fn law_flattening_round_trip() {
        let (fam, data, grid) = setup(2);
        let (_, law) = feedback_at(&fam, &data, &[0.1], &grid, true).unwrap();
        let flat = flatten_law(&law);
        let back: FeedbackLaw<f64> = unflatten_law(&flat, fam.m(), fam.n(), grid).unwrap();
        assert_eq!(back, law);
    }

    #[test]
    fn rate_point_sets_have_requested_shape() {
        let b = WeightSpec::power_decay(0.1, 2.0, 4);
        for method in [RateMethod::Shifted, RateMethod::Folded, RateMethod::Mc] {
            let sets = rate_point_sets(method, 31, 4, 2, &b, 3, 7).unwrap();
            assert!(sets.iter().all(|p| p.n() == 31 && p.s() == 4 && p.is_symmetric_box()));
        }
        let sets = rate_point_sets(RateMethod::Interlaced, 64, 4, 2, &b, 1, 7).unwrap();
        assert_eq!(sets[0].n(), 64);
        assert!(rate_point_sets(RateMethod::Interlaced, 63, 4, 2, &b, 1, 7).is_err());
        assert_eq!(size_ladder(RateMethod::Shifted, &[5, 6, 7]), vec![31, 61, 127]);
    }
}
