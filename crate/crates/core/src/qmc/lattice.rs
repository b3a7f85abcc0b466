//! Rank-1 lattice rules: fast component-by-component construction for POD
//! weights, shift-averaged worst-case error and the a-priori bound.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmc::weights::WeightSpec;

/// Relative gap below which two CBC scores count as a tie.
const TIE_RTOL: f64 = 1e-12;

/// Rank-1 lattice `x_k = {k z / N}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeRule {
    n: usize,
    z: Vec<usize>,
}

impl LatticeRule {
    pub fn new(n: usize, z: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("lattice needs at least one point".into()));
        }
        if let Some(&bad) = z.iter().find(|&&zj| gcd(zj, n) != 1) {
            return Err(Error::Domain(format!("generator {bad} is not coprime to N = {n}")));
        }
        Ok(Self { n, z })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    /// Rule restricted to the first `s` coordinates.
    pub fn truncate(&self, s: usize) -> Self {
        Self {
            n: self.n,
            z: self.z[..s.min(self.z.len())].to_vec(),
        }
    }

    /// `k z_j mod N` as an integer numerator.
    pub fn numerator(&self, k: usize, j: usize) -> usize {
        ((k as u128 * self.z[j] as u128) % self.n as u128) as usize
    }
}

/// Which reproducing kernel the CBC search minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKernel {
    /// Shift-averaged kernel `B₂({x})` for randomly shifted rules.
    ShiftAveraged,
    /// Kernel `2·B₂({x})` of tent-transformed (folded) rules.
    Tent,
}

impl LatticeKernel {
    fn scale(self) -> f64 {
        match self {
            LatticeKernel::ShiftAveraged => 1.0,
            LatticeKernel::Tent => 2.0,
        }
    }
}

/// Bernoulli polynomial `B₂(x) = x² − x + 1/6`.
pub fn bernoulli2(x: f64) -> f64 {
    x * x - x + 1.0 / 6.0
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Smallest prime `≥ n`.
pub fn next_prime(n: usize) -> usize {
    (n.max(2)..).find(|&p| is_prime(p)).expect("primes are unbounded")
}

/// Prime closest to `target` (the smaller one on a tie).
pub fn nearest_prime(target: usize) -> usize {
    let up = next_prime(target);
    let down = (2..=target).rev().find(|&p| is_prime(p));
    match down {
        Some(d) if target - d <= up - target => d,
        _ => up,
    }
}

/// Euler's totient by trial factorization.
pub fn euler_totient(n: usize) -> usize {
    let mut result = n;
    let mut m = n;
    let mut p = 2;
    while p * p <= m {
        if m % p == 0 {
            while m % p == 0 {
                m /= p;
            }
            result -= result / p;
        }
        p += 1;
    }
    if m > 1 {
        result -= result / m;
    }
    result
}

/// Riemann zeta for real `x > 1`: partial sum plus an Euler–Maclaurin tail.
pub fn zeta(x: f64) -> Result<f64> {
    if !(x > 1.0) {
        return Err(Error::Domain(format!("zeta needs x > 1, got {x}")));
    }
    const K: usize = 64;
    let head: f64 = (1..K).rev().map(|k| (k as f64).powf(-x)).sum();
    let k = K as f64;
    let tail = k.powf(1.0 - x) / (x - 1.0) + 0.5 * k.powf(-x) + x * k.powf(-x - 1.0) / 12.0
        - x * (x + 1.0) * (x + 2.0) * k.powf(-x - 3.0) / 720.0
        + x * (x + 1.0) * (x + 2.0) * (x + 3.0) * (x + 4.0) * k.powf(-x - 5.0) / 30240.0;
    Ok(head + tail)
}

/// Kernel table `scale · B₂(j/N)`, symmetrized so that entries `j` and
/// `N − j` are bitwise equal.
fn kernel_table(n: usize, kernel: LatticeKernel) -> Vec<f64> {
    let scale = kernel.scale();
    (0..n)
        .map(|j| scale * bernoulli2(j.min(n - j) as f64 / n as f64))
        .collect()
}

/// CBC construction for the shift-averaged kernel; see
/// [`cbc_lattice_kernel`].
pub fn cbc_lattice(n: usize, s: usize, weights: &WeightSpec) -> Result<LatticeRule> {
    cbc_lattice_kernel(n, s, weights, LatticeKernel::ShiftAveraged).map(|(rule, _)| rule)
}

/// Greedy CBC for POD weights. Returns the rule and the squared
/// worst-case error after each component.
///
/// With `γ_u = Γ_{|u|} ∏ β_j` the error splits as
/// `e²_d = (1/N) Σ_k Σ_ℓ Γ_ℓ² p_{d,ℓ}(k)` where `p_{d,ℓ}` are the elementary
/// symmetric polynomials of `β_j² ω(k z_j)`; the candidate-dependent part of
/// step `d` is `Σ_k ω(k z) q(k)` with `q = Σ_ℓ Γ_ℓ² β_d² p_{d−1,ℓ−1}`.
pub fn cbc_lattice_kernel(
    n: usize,
    s: usize,
    weights: &WeightSpec,
    kernel: LatticeKernel,
) -> Result<(LatticeRule, Vec<f64>)> {
    if !is_prime(n) {
        return Err(Error::Domain(format!("CBC lattice size {n} is not prime")));
    }
    if s == 0 || s > weights.dim() {
        return Err(Error::Domain(format!(
            "dimension {s} outside 1..={} covered by the weights",
            weights.dim()
        )));
    }
    let (gam, beta) = weights.pod_parts()?;
    let omega = kernel_table(n, kernel);
    let inv_n = 1.0 / n as f64;
    let mut p = vec![vec![0.0; n]; s + 1];
    p[0].fill(1.0);
    let mut z = Vec::with_capacity(s);
    let mut e2 = Vec::with_capacity(s);
    let mut base = 0.0;
    let mut q = vec![0.0; n];
    for d in 0..s {
        let b2 = beta[d] * beta[d];
        q.fill(0.0);
        for l in 1..=d + 1 {
            let g2 = gam[l] * gam[l] * b2;
            for (qk, &pk) in q.iter_mut().zip(&p[l - 1]) {
                *qk += g2 * pk;
            }
        }
        // z and N − z give mirror-image point sets with equal error.
        let zmax = (n / 2).max(1);
        let mut best = (1, f64::INFINITY);
        for cand in 1..=zmax {
            let mut idx = 0;
            let mut score = 0.0;
            for &qk in &q {
                score += omega[idx] * qk;
                idx += cand;
                if idx >= n {
                    idx -= n;
                }
            }
            if cand == 1 || score < best.1 - TIE_RTOL * best.1.abs() {
                best = (cand, score);
            }
        }
        let zd = best.0;
        base += best.1 * inv_n;
        e2.push(base);
        z.push(zd);
        let mut idx = 0;
        let w: Vec<f64> = (0..n)
            .map(|_| {
                let v = b2 * omega[idx];
                idx += zd;
                if idx >= n {
                    idx -= n;
                }
                v
            })
            .collect();
        for l in (1..=d + 1).rev() {
            let (lo, hi) = p.split_at_mut(l);
            for ((pl, &pm), &wk) in hi[0].iter_mut().zip(&lo[l - 1]).zip(&w) {
                *pl += wk * pm;
            }
        }
    }
    Ok((LatticeRule { n, z }, e2))
}

/// Squared shift-averaged worst-case error
/// `Σ_{u≠∅} γ_u² (1/N) Σ_k ∏_{j∈u} B₂({k z_j / N})`, summed point by point.
pub fn wce_shift_avg(rule: &LatticeRule, weights: &WeightSpec) -> Result<f64> {
    wce_kernel(rule, weights, LatticeKernel::ShiftAveraged)
}

/// Squared worst-case error for either kernel.
pub fn wce_kernel(rule: &LatticeRule, weights: &WeightSpec, kernel: LatticeKernel) -> Result<f64> {
    let s = rule.s();
    if s > weights.dim() {
        return Err(Error::Domain("rule dimension exceeds the weights".into()));
    }
    let (gam, beta) = weights.pod_parts()?;
    let n = rule.n();
    let scale = kernel.scale();
    let mut total = 0.0;
    let mut e = vec![0.0; s + 1];
    for k in 0..n {
        e.fill(0.0);
        e[0] = 1.0;
        for j in 0..s {
            let x = rule.numerator(k, j) as f64 / n as f64;
            let w = beta[j] * beta[j] * scale * bernoulli2(x);
            for l in (1..=j + 1).rev() {
                e[l] += w * e[l - 1];
            }
        }
        total += (1..=s).map(|l| gam[l] * gam[l] * e[l]).sum::<f64>();
    }
    Ok(total / n as f64)
}

/// `((1/φ(N)) Σ_{u≠∅} γ_u^{2λ} ρ(λ)^{|u|})^{1/λ}` with
/// `ρ(λ) = 2ζ(2λ)/(2π²)^λ`.
pub fn theoretical_bound(n: usize, s: usize, weights: &WeightSpec, lambda: f64) -> Result<f64> {
    if !(lambda > 0.5 && lambda <= 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (1/2, 1], got {lambda}")));
    }
    if s > weights.dim() {
        return Err(Error::Domain("dimension exceeds the weights".into()));
    }
    let (gam, beta) = weights.pod_parts()?;
    let rho = 2.0 * zeta(2.0 * lambda)? / (2.0 * PI * PI).powf(lambda);
    let mut e = vec![0.0; s + 1];
    e[0] = 1.0;
    for j in 0..s {
        let w = beta[j].powf(2.0 * lambda) * rho;
        for l in (1..=j + 1).rev() {
            e[l] += w * e[l - 1];
        }
    }
    let sum: f64 = (1..=s).map(|l| gam[l].powf(2.0 * lambda) * e[l]).sum();
    Ok((sum / euler_totient(n) as f64).powf(1.0 / lambda))
}
