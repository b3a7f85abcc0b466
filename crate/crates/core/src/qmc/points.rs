//! Point sets on `[−1/2, 1/2]^s` and the maps that produce them.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::qmc::lattice::LatticeRule;

/// How a point set was built.
#[derive(Clone, Debug, PartialEq)]
pub enum PointMeta {
    Lattice { z: Vec<usize> },
    Shifted { z: Vec<usize>, seed: u64 },
    Folded { z: Vec<usize> },
    Centered { z: Vec<usize> },
    Interlaced { alpha: usize, m: u32 },
    Mc { seed: u64 },
    Custom,
}

impl PointMeta {
    pub fn kind(&self) -> &'static str {
        match self {
            PointMeta::Lattice { .. } => "lattice",
            PointMeta::Shifted { .. } => "shifted",
            PointMeta::Folded { .. } => "folded",
            PointMeta::Centered { .. } => "centered",
            PointMeta::Interlaced { .. } => "interlaced",
            PointMeta::Mc { .. } => "mc",
            PointMeta::Custom => "custom",
        }
    }
}

fn join(z: &[usize]) -> String {
    z.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for PointMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointMeta::Lattice { z } | PointMeta::Folded { z } | PointMeta::Centered { z } => {
                write!(f, "kind={},z={}", self.kind(), join(z))
            }
            PointMeta::Shifted { z, seed } => write!(f, "kind=shifted,seed={seed},z={}", join(z)),
            PointMeta::Interlaced { alpha, m } => write!(f, "kind=interlaced,alpha={alpha},m={m}"),
            PointMeta::Mc { seed } => write!(f, "kind=mc,seed={seed}"),
            PointMeta::Custom => write!(f, "kind=custom"),
        }
    }
}

/// `N × s` points stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QmcPointSet {
    n: usize,
    s: usize,
    data: Vec<f64>,
    pub meta: PointMeta,
}

impl QmcPointSet {
    pub fn from_rows(rows: &[Vec<f64>], meta: PointMeta) -> Result<Self> {
        let s = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::Contract("ragged point rows".into()));
        }
        Ok(Self {
            n: rows.len(),
            s,
            data: rows.concat(),
            meta,
        })
    }

    pub(crate) fn from_flat(n: usize, s: usize, data: Vec<f64>, meta: PointMeta) -> Self {
        debug_assert_eq!(data.len(), n * s);
        Self { n, s, data, meta }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.s..(k + 1) * self.s]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.s.max(1)).take(self.n)
    }

    /// Points restricted to the first `s` coordinates.
    pub fn truncate(&self, s: usize) -> Self {
        let s = s.min(self.s);
        let data = self.iter().flat_map(|p| p[..s].iter().copied()).collect();
        Self::from_flat(self.n, s, data, self.meta.clone())
    }

    /// Metadata line `kind=…,N=…,s=…[,seed=…][,z=…]` (interlaced rules
    /// report `alpha` and `m` instead of `z`).
    pub fn describe(&self) -> String {
        let mut line = format!("kind={},N={},s={}", self.meta.kind(), self.n, self.s);
        match &self.meta {
            PointMeta::Shifted { z, seed } => line += &format!(",seed={seed},z={}", join(z)),
            PointMeta::Lattice { z } | PointMeta::Folded { z } | PointMeta::Centered { z } => {
                line += &format!(",z={}", join(z))
            }
            PointMeta::Interlaced { alpha, m } => line += &format!(",alpha={alpha},m={m}"),
            PointMeta::Mc { seed } => line += &format!(",seed={seed}"),
            PointMeta::Custom => {}
        }
        line
    }

    /// True if every coordinate lies in `[−1/2, 1/2]`.
    pub fn is_symmetric_box(&self) -> bool {
        self.data.iter().all(|x| (-0.5..=0.5).contains(x))
    }

    fn map(&self, f: impl Fn(f64) -> f64, meta: PointMeta) -> Self {
        Self::from_flat(self.n, self.s, self.data.iter().map(|&x| f(x)).collect(), meta)
    }
}

/// Unshifted lattice points `{k z / N}` in `[0, 1)^s`.
pub fn lattice_points(rule: &LatticeRule) -> QmcPointSet {
    let (n, s) = (rule.n(), rule.s());
    let mut data = Vec::with_capacity(n * s);
    for k in 0..n {
        for j in 0..s {
            data.push(rule.numerator(k, j) as f64 / n as f64);
        }
    }
    QmcPointSet::from_flat(n, s, data, PointMeta::Lattice { z: rule.z().to_vec() })
}

/// Uniform shift on `[0, 1)^s` from the generator seeded with `seed`.
pub fn shift_vector(s: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..s).map(|_| rng.gen::<f64>()).collect()
}

/// `{x_k + Δ}` for a given shift.
pub fn shift_by(points: &QmcPointSet, delta: &[f64], meta: PointMeta) -> Result<QmcPointSet> {
    if delta.len() != points.s() {
        return Err(Error::Contract("shift dimension mismatch".into()));
    }
    let mut out = points.clone();
    for row in out.data.chunks_mut(points.s().max(1)) {
        for (x, d) in row.iter_mut().zip(delta) {
            let v = *x + d;
            *x = v - v.floor();
        }
    }
    out.meta = meta;
    Ok(out)
}

/// Lattice points with a random shift drawn from `seed`, in `[0, 1)^s`.
pub fn random_shift(rule: &LatticeRule, seed: u64) -> QmcPointSet {
    let delta = shift_vector(rule.s(), seed);
    let meta = PointMeta::Shifted {
        z: rule.z().to_vec(),
        seed,
    };
    shift_by(&lattice_points(rule), &delta, meta).expect("matching dimension")
}

/// Tent map `φ(x) = 1 − |2x − 1|`.
pub fn tent(x: f64) -> f64 {
    1.0 - (2.0 * x - 1.0).abs()
}

/// Componentwise tent map.
pub fn tent_fold(points: &QmcPointSet) -> QmcPointSet {
    let meta = match &points.meta {
        PointMeta::Lattice { z } => PointMeta::Folded { z: z.clone() },
        other => other.clone(),
    };
    points.map(tent, meta)
}

/// `x ↦ x − 1/2` componentwise.
pub fn to_symmetric(points: &QmcPointSet) -> QmcPointSet {
    points.map(|x| x - 0.5, points.meta.clone())
}

/// Centered lattice `{k z / N + 1/2} − 1/2`, invariant under `x ↦ −x`.
pub fn centered_lattice(rule: &LatticeRule) -> QmcPointSet {
    let (n, s) = (rule.n(), rule.s());
    let mut data = Vec::with_capacity(n * s);
    for k in 0..n {
        for j in 0..s {
            // Exact integer arithmetic keeps antipodal points bitwise opposite.
            let r = (2 * rule.numerator(k, j) + n) % (2 * n);
            data.push((r as f64 - n as f64) / (2 * n) as f64);
        }
    }
    QmcPointSet::from_flat(n, s, data, PointMeta::Centered { z: rule.z().to_vec() })
}

/// Independent uniform points on `[−1/2, 1/2]^s`.
pub fn mc_points(n: usize, s: usize, seed: u64) -> QmcPointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * s).map(|_| rng.gen::<f64>() - 0.5).collect();
    QmcPointSet::from_flat(n, s, data, PointMeta::Mc { seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tent_values() {
        assert_eq!(tent(0.0), 0.0);
        assert_eq!(tent(0.5), 1.0);
        assert_eq!(tent(1.0), 0.0);
        assert_eq!(tent(0.25), 0.5);
    }

    #[test]
    fn lattice_point_example() {
        let rule = LatticeRule::new(8, vec![1, 5]).unwrap();
        let pts = lattice_points(&rule);
        assert_eq!(pts.point(3), &[0.375, 0.875]);
        let sym = to_symmetric(&pts);
        assert_eq!(sym.point(3), &[-0.125, 0.375]);
        assert!(sym.is_symmetric_box());
    }

    #[test]
    fn zero_shift_is_identity() {
        let rule = LatticeRule::new(7, vec![1, 3]).unwrap();
        let pts = lattice_points(&rule);
        let shifted = shift_by(&pts, &[0.0, 0.0], pts.meta.clone()).unwrap();
        assert_eq!(shifted, pts);
    }

    #[test]
    fn determinism() {
        let rule = LatticeRule::new(31, vec![1, 12, 7]).unwrap();
        assert_eq!(random_shift(&rule, 9), random_shift(&rule, 9));
        assert_ne!(random_shift(&rule, 9), random_shift(&rule, 10));
        assert_eq!(mc_points(50, 4, 3), mc_points(50, 4, 3));
        assert!(mc_points(50, 4, 3).is_symmetric_box());
    }

    #[test]
    fn centered_lattice_is_antipodal() {
        let rule = LatticeRule::new(31, vec![1, 12, 7]).unwrap();
        let pts = centered_lattice(&rule);
        assert_eq!(pts.point(0), &[0.0, 0.0, 0.0]);
        for k in 1..31 {
            let a = pts.point(k);
            let b = pts.point(31 - k);
            for j in 0..3 {
                assert_eq!(a[j], -b[j]);
            }
        }
        assert!(pts.is_symmetric_box());
    }

    #[test]
    fn folded_coordinates_are_nearly_uniform() {
        let rule = LatticeRule::new(251, vec![1, 97, 43]).unwrap();
        let folded = tent_fold(&lattice_points(&rule));
        let n = folded.n();
        for j in 0..3 {
            let mut xs: Vec<f64> = folded.iter().map(|p| p[j]).collect();
            xs.sort_by(f64::total_cmp);
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
                .fold(0.0, f64::max);
            assert!(ks <= 2.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn metadata_line() {
        let rule = LatticeRule::new(8, vec![1, 5]).unwrap();
        assert_eq!(lattice_points(&rule).meta.to_string(), "kind=lattice,z=1 5");
        assert_eq!(mc_points(2, 1, 4).meta.to_string(), "kind=mc,seed=4");
        assert_eq!(random_shift(&rule, 3).describe(), "kind=shifted,N=8,s=2,seed=3,z=1 5");
    }
}
