//! Product-and-order-dependent weights and their smoothness-driven variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmc::zeta;

/// Weight family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Pod,
    Spod,
}

/// How POD weights are derived from the decay sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PodMode {
    /// `γ_u = (|u|+2)! ∏ 2 b_j`.
    Standard,
    /// `γ_u = ((|u|+2)! ∏ b_j (2π²)^{λ/2} / √(2ζ(2λ)))^{1/(1+λ)}`.
    Refined { lambda: f64 },
}

/// Weight generator from a decay sequence `b_j` (index 0 is `b_1`).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    kind: WeightKind,
    bseq: Vec<f64>,
    alpha: usize,
    mode: PodMode,
}

fn factorial(k: usize) -> f64 {
    (2..=k).map(|i| i as f64).product()
}

fn check_bseq(bseq: &[f64]) -> Result<()> {
    if bseq.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Domain("weights need positive b_j".into()));
    }
    if bseq.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Domain("weights need nonincreasing b_j".into()));
    }
    Ok(())
}

impl WeightSpec {
    pub fn pod(bseq: Vec<f64>) -> Result<Self> {
        check_bseq(&bseq)?;
        Ok(Self {
            kind: WeightKind::Pod,
            bseq,
            alpha: 1,
            mode: PodMode::Standard,
        })
    }

    pub fn pod_refined(bseq: Vec<f64>, lambda: f64) -> Result<Self> {
        check_bseq(&bseq)?;
        if !(lambda > 0.5 && lambda <= 1.0) {
            return Err(Error::Domain(format!("lambda must lie in (1/2, 1], got {lambda}")));
        }
        Ok(Self {
            kind: WeightKind::Pod,
            bseq,
            alpha: 1,
            mode: PodMode::Refined { lambda },
        })
    }

    pub fn spod(bseq: Vec<f64>, alpha: usize) -> Result<Self> {
        check_bseq(&bseq)?;
        if alpha < 2 {
            return Err(Error::Domain(format!("SPOD weights need alpha >= 2, got {alpha}")));
        }
        Ok(Self {
            kind: WeightKind::Spod,
            bseq,
            alpha,
            mode: PodMode::Standard,
        })
    }

    /// `b_j = scale · j^(-decay)` for `j = 1..=s`.
    pub fn power_decay(scale: f64, decay: f64, s: usize) -> Vec<f64> {
        (1..=s).map(|j| scale * (j as f64).powf(-decay)).collect()
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn bseq(&self) -> &[f64] {
        &self.bseq
    }

    pub fn dim(&self) -> usize {
        self.bseq.len()
    }

    /// Order factors `Γ_ℓ` and coordinate factors `β_j` with
    /// `γ_u = Γ_{|u|} ∏_{j∈u} β_j` for `u ≠ ∅` (POD kind only).
    pub fn pod_parts(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.kind != WeightKind::Pod {
            return Err(Error::Contract("product form requested for SPOD weights".into()));
        }
        let s = self.bseq.len();
        Ok(match self.mode {
            PodMode::Standard => (
                (0..=s).map(|l| factorial(l + 2)).collect(),
                self.bseq.iter().map(|b| 2.0 * b).collect(),
            ),
            PodMode::Refined { lambda } => {
                let e = 1.0 / (1.0 + lambda);
                let c = (2.0 * std::f64::consts::PI.powi(2)).powf(lambda / 2.0)
                    / (2.0 * zeta(2.0 * lambda)?).sqrt();
                (
                    (0..=s).map(|l| factorial(l + 2).powf(e)).collect(),
                    self.bseq.iter().map(|b| (b * c).powf(e)).collect(),
                )
            }
        })
    }

    /// Coordinate factors `c_{j,ν} = 2^{δ(ν,α)} b_j^ν`, `ν = 1..=α`, so that
    /// `γ_u = Σ_ν (|ν|+2)! ∏_{j∈u} c_{j,ν_j}`.
    pub fn spod_factors(&self, j: usize) -> Vec<f64> {
        let b = self.bseq[j];
        (1..=self.alpha)
            .map(|nu| {
                let two = if nu == self.alpha { 2.0 } else { 1.0 };
                two * b.powi(nu as i32)
            })
            .collect()
    }

    /// `γ_u` for a set of zero-based coordinate indices.
    pub fn gamma(&self, u: &[usize]) -> f64 {
        if u.is_empty() {
            return 1.0;
        }
        let b: Vec<f64> = u.iter().map(|&j| self.bseq[j]).collect();
        match (self.kind, self.mode) {
            (WeightKind::Spod, _) => spod_weight(&b, self.alpha),
            (WeightKind::Pod, PodMode::Standard) => pod_weight(b.len(), &b),
            (WeightKind::Pod, PodMode::Refined { .. }) => {
                let (gam, beta) = self.pod_parts().expect("POD kind");
                gam[u.len()] * u.iter().map(|&j| beta[j]).product::<f64>()
            }
        }
    }
}

/// `(|u|+2)! ∏ 2 b_j`, and 1 for the empty set.
pub fn pod_weight(u_size: usize, b_subset: &[f64]) -> f64 {
    debug_assert_eq!(u_size, b_subset.len());
    if u_size == 0 {
        return 1.0;
    }
    factorial(u_size + 2) * b_subset.iter().map(|b| 2.0 * b).product::<f64>()
}

/// `Σ_{ν ∈ {1..α}^u} (|ν|+2)! ∏ 2^{δ(ν_j,α)} b_j^{ν_j}`, and 1 for the
/// empty set.
pub fn spod_weight(b_subset: &[f64], alpha: usize) -> f64 {
    if b_subset.is_empty() {
        return 1.0;
    }
    // Distribute over the total order |ν|: poly[ℓ] = Σ_{|ν| = ℓ} ∏ c_{j,ν_j}.
    let mut poly = vec![1.0];
    for &b in b_subset {
        let mut next = vec![0.0; poly.len() + alpha];
        for (l, &p) in poly.iter().enumerate() {
            for nu in 1..=alpha {
                let two = if nu == alpha { 2.0 } else { 1.0 };
                next[l + nu] += p * two * b.powi(nu as i32);
            }
        }
        poly = next;
    }
    poly.iter()
        .enumerate()
        .map(|(l, &p)| if p == 0.0 { 0.0 } else { factorial(l + 2) * p })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pod_examples() {
        assert_eq!(pod_weight(0, &[]), 1.0);
        assert!((pod_weight(1, &[0.1]) - 1.2).abs() < 1e-15);
        assert!((pod_weight(2, &[0.1, 0.1]) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn spod_examples() {
        assert!((spod_weight(&[0.1], 2) - 1.08).abs() < 1e-15);
        assert_eq!(spod_weight(&[], 3), 1.0);
        for b in [[0.3, 0.1, 0.05], [0.2, 0.2, 0.01]] {
            assert!((spod_weight(&b, 1) - pod_weight(3, &b)).abs() < 1e-14);
        }
    }

    #[test]
    fn spod_matches_brute_force_enumeration() {
        let b: [f64; 3] = [0.4, 0.2, 0.1];
        let alpha = 3;
        let mut total = 0.0;
        for n1 in 1..=alpha {
            for n2 in 1..=alpha {
                for n3 in 1..=alpha {
                    let nu = [n1, n2, n3];
                    let mut prod = factorial(n1 + n2 + n3 + 2);
                    for (j, &v) in nu.iter().enumerate() {
                        let two = if v == alpha { 2.0 } else { 1.0 };
                        prod *= two * b[j].powi(v as i32);
                    }
                    total += prod;
                }
            }
        }
        assert!((spod_weight(&b, alpha) - total).abs() <= 1e-13 * total);
    }

    #[test]
    fn spec_accessors() {
        let w = WeightSpec::pod(WeightSpec::power_decay(0.1, 2.0, 4)).unwrap();
        assert!((w.gamma(&[2]) - 6.0 * 0.2 / 9.0).abs() < 1e-15);
        assert_eq!(w.gamma(&[]), 1.0);
        let (gam, beta) = w.pod_parts().unwrap();
        assert_eq!(gam[2], 24.0);
        assert!((gam[2] * beta[0] * beta[1] - w.gamma(&[0, 1])).abs() < 1e-15);
        assert!(WeightSpec::spod(vec![0.1], 1).is_err());
        assert!(WeightSpec::pod(vec![0.1, 0.2]).is_err());
        let s = WeightSpec::spod(vec![0.1, 0.05], 2).unwrap();
        assert!(s.pod_parts().is_err());
        assert!((s.gamma(&[0]) - 1.08).abs() < 1e-15);
    }

    #[test]
    fn refined_weights_at_lambda_one() {
        // At λ = 1: (2π²)^{1/2} / √(2ζ(2)) = √6.
        let w = WeightSpec::pod_refined(vec![0.1], 1.0).unwrap();
        let expected = (6.0 * 0.1 * 6f64.sqrt()).sqrt();
        assert!((w.gamma(&[0]) - expected).abs() < 1e-12);
        assert!(WeightSpec::pod_refined(vec![0.1], 0.4).is_err());
    }
}
