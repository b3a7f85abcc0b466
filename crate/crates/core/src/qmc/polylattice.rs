//! Interlaced polynomial lattice rules over GF(2).
//!
//! Polynomials are `u64` bitmasks, bit `i` holding the coefficient of `x^i`.

use crate::error::{Error, Result};
use crate::qmc::points::{PointMeta, QmcPointSet};
use crate::qmc::weights::{WeightKind, WeightSpec};

/// Primitive moduli for degrees 4 to 14.
const MODULI: [(u32, u64); 11] = [
    (4, 0b1_0011),                // x^4 + x + 1
    (5, 0b10_0101),               // x^5 + x^2 + 1
    (6, 0b100_0011),              // x^6 + x + 1
    (7, 0b1000_0011),             // x^7 + x + 1
    (8, 0b1_0001_1101),           // x^8 + x^4 + x^3 + x^2 + 1
    (9, 0b10_0001_0001),          // x^9 + x^4 + 1
    (10, 0b100_0000_1001),        // x^10 + x^3 + 1
    (11, 0b1000_0000_0101),       // x^11 + x^2 + 1
    (12, 0b1_0000_0101_0011),     // x^12 + x^6 + x^4 + x + 1
    (13, 0b10_0000_0001_1011),    // x^13 + x^4 + x^3 + x + 1
    (14, 0b100_0100_0100_0011),   // x^14 + x^10 + x^6 + x + 1
];

pub fn degree(p: u64) -> i32 {
    63 - p.leading_zeros() as i32
}

/// Remainder of `a` modulo `d` (`d ≠ 0`).
pub fn poly_rem(mut a: u64, d: u64) -> u64 {
    let dd = degree(d);
    while a != 0 && degree(a) >= dd {
        a ^= d << (degree(a) - dd);
    }
    a
}

/// `a · b mod p` for `deg a, deg b < deg p ≤ 32`.
pub fn poly_mulmod(a: u64, b: u64, p: u64) -> u64 {
    let m = degree(p);
    let mut acc = 0u64;
    let mut a = a;
    let mut b = b;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a >> m & 1 == 1 {
            a ^= p;
        }
    }
    acc
}

/// Irreducibility by trial division over all polynomials of degree `≤ m/2`.
pub fn is_irreducible(p: u64) -> bool {
    let m = degree(p);
    if m < 1 {
        return false;
    }
    for d in 2u64..(1u64 << (m / 2 + 1)) {
        if poly_rem(p, d) == 0 {
            return false;
        }
    }
    true
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn x_pow(e: u64, p: u64) -> u64 {
    let mut result = 1u64;
    let mut base = poly_rem(0b10, p);
    let mut e = e;
    while e > 0 {
        if e & 1 == 1 {
            result = poly_mulmod(result, base, p);
        }
        base = poly_mulmod(base, base, p);
        e >>= 1;
    }
    result
}

/// True if `x` generates the multiplicative group modulo the irreducible `p`.
pub fn is_primitive(p: u64) -> bool {
    if !is_irreducible(p) {
        return false;
    }
    let order = (1u64 << degree(p)) - 1;
    prime_factors(order).iter().all(|&q| x_pow(order / q, p) != 1)
}

/// Shipped primitive modulus of degree `m`, re-verified on every call.
pub fn modulus(m: u32) -> Result<u64> {
    let p = MODULI
        .iter()
        .find(|(d, _)| *d == m)
        .map(|&(_, p)| p)
        .ok_or_else(|| Error::Construction(format!("no irreducible modulus shipped for degree {m}")))?;
    if !is_irreducible(p) {
        return Err(Error::Construction(format!("shipped modulus of degree {m} is reducible")));
    }
    Ok(p)
}

/// Integer `Y` with `Y / 2^m = v_m(r / p)`, the first `m` digits of the
/// Laurent expansion of `r(x)/p(x)`.
fn digits(r: u64, p: u64, m: u32) -> u64 {
    let dp = degree(p);
    let mut rem = r;
    let mut y = 0u64;
    for _ in 0..m {
        rem <<= 1;
        y <<= 1;
        if rem >> dp & 1 == 1 {
            y |= 1;
            rem ^= p;
        }
    }
    y
}

/// Interlaced polynomial lattice rule with `N = 2^m` points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyLatticeRule {
    m: u32,
    modulus: u64,
    zpolys: Vec<u64>,
    alpha: usize,
}

impl PolyLatticeRule {
    pub fn new(m: u32, modulus: u64, zpolys: Vec<u64>, alpha: usize) -> Result<Self> {
        if degree(modulus) != m as i32 || !is_irreducible(modulus) {
            return Err(Error::Construction(format!(
                "modulus {modulus:#b} is not an irreducible polynomial of degree {m}"
            )));
        }
        if alpha == 0 || zpolys.len() % alpha != 0 {
            return Err(Error::Contract(format!(
                "{} generating polynomials do not split into streams of {alpha}",
                zpolys.len()
            )));
        }
        if zpolys.iter().any(|&q| q != 0 && degree(q) >= m as i32) {
            return Err(Error::Contract("generating polynomial degree must be below m".into()));
        }
        Ok(Self {
            m,
            modulus,
            zpolys,
            alpha,
        })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> usize {
        1 << self.m
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn s(&self) -> usize {
        self.zpolys.len() / self.alpha
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn zpolys(&self) -> &[u64] {
        &self.zpolys
    }

    /// Points in `[0, 1)^s`.
    pub fn points(&self) -> QmcPointSet {
        let (n, s, a) = (self.n(), self.s(), self.alpha);
        let m = self.m;
        let mut data = Vec::with_capacity(n * s);
        for k in 0..n as u64 {
            for j in 0..s {
                let ys: Vec<u64> = (0..a)
                    .map(|i| digits(poly_mulmod(k, self.zpolys[j * a + i], self.modulus), self.modulus, m))
                    .collect();
                data.push(interlace_integers(&ys, m));
            }
        }
        QmcPointSet::from_flat(n, s, data, PointMeta::Interlaced { alpha: a, m })
    }
}

/// Interlaces `m`-digit integers digit by digit and scales into `[0, 1)`,
/// keeping at most 53 digits.
fn interlace_integers(ys: &[u64], m: u32) -> f64 {
    let a = ys.len() as u32;
    let total = a * m;
    let mut out: u128 = 0;
    for d in 0..m {
        for y in ys {
            out = (out << 1) | u128::from(y >> (m - 1 - d) & 1);
        }
    }
    let keep = total.min(53);
    let out = out >> (total - keep);
    out as f64 / (1u128 << keep) as f64
}

/// Digit interlacing `ξ₁η₁…ξ₂η₂…` of `alpha` numbers in `[0, 1)`.
pub fn interlace_digits(streams: &[f64], alpha: usize) -> Result<f64> {
    if alpha == 0 || streams.len() != alpha {
        return Err(Error::Contract(format!(
            "interlacing expects {alpha} streams, got {}",
            streams.len()
        )));
    }
    if streams.iter().any(|x| !(0.0..1.0).contains(x)) {
        return Err(Error::Domain("interlacing inputs must lie in [0, 1)".into()));
    }
    let per = 53 / alpha as u32;
    let ys: Vec<u64> = streams
        .iter()
        .map(|&x| (x * (1u64 << per) as f64).floor() as u64)
        .collect();
    Ok(interlace_integers(&ys, per))
}

/// Walsh-series kernel of order `alpha` at `y / 2^m`.
fn omega(y: u64, m: u32, alpha: usize) -> f64 {
    let two_a = 2f64.powi(alpha as i32);
    if y == 0 {
        return 1.0 / (two_a - 2.0);
    }
    let i0 = m as i32 - degree(y);
    (1.0 - (two_a - 1.0) * 2f64.powi((1 - alpha as i32) * i0)) / (two_a - 2.0)
}

fn factorial(k: usize) -> f64 {
    (2..=k).map(|i| i as f64).product()
}

/// Component-by-component construction of an interlaced polynomial lattice
/// rule of order `alpha` for SPOD weights.
///
/// The criterion is `Σ_{u≠∅} γ_u (1/N) Σ_n ∏_{j∈u} C·(∏_i (1 + ω(y_{n,j,i})) − 1)`
/// with `C = 2^{α(α−1)/2}`. Candidates are `x^b mod P`; for a primitive
/// modulus the products `n·x^b` are read off log/antilog tables.
pub fn cbc_interlaced(m: u32, s: usize, alpha: usize, weights: &WeightSpec) -> Result<PolyLatticeRule> {
    if !(2..=4).contains(&alpha) {
        return Err(Error::Domain(format!("interlacing factor must be 2..=4, got {alpha}")));
    }
    if m > 14 || s == 0 || s > 64 {
        return Err(Error::Domain(format!("need m <= 14 and 1 <= s <= 64, got m={m}, s={s}")));
    }
    if weights.kind() != WeightKind::Spod || weights.alpha() != alpha {
        return Err(Error::Contract("interlaced CBC needs SPOD weights of the same order".into()));
    }
    if s > weights.dim() {
        return Err(Error::Domain("dimension exceeds the weights".into()));
    }
    let p = modulus(m)?;
    if !is_primitive(p) {
        return Err(Error::Construction(format!("modulus of degree {m} is not primitive")));
    }
    let n = 1usize << m;
    let order = n - 1;
    let mut antilog = vec![0u64; order];
    let mut v = 1u64;
    for slot in antilog.iter_mut() {
        *slot = v;
        v = poly_mulmod(v, 0b10, p);
    }
    // Kernel value at the point generated by the group element x^u.
    let w_of_log: Vec<f64> = antilog.iter().map(|&r| omega(digits(r, p, m), m, alpha)).collect();
    let c_fac = 2f64.powi((alpha * (alpha - 1) / 2) as i32);
    let max_order = alpha * s;
    let fact: Vec<f64> = (0..=max_order + 2).map(factorial).collect();

    // Order-dependent DP over finished coordinates, indexed by t with
    // n = x^t (n = 0 contributes a candidate-independent term and is skipped).
    let mut dp = vec![vec![0.0; order]; max_order + 1];
    dp[0].fill(1.0);
    let mut zpolys = Vec::with_capacity(alpha * s);
    for j in 0..s {
        let cj = weights.spod_factors(j);
        let top = alpha * j;
        let mut v_n = vec![0.0; order];
        for (nu, &c) in cj.iter().enumerate() {
            let nu = nu + 1;
            for l in 0..=top {
                let f = c_fac * c * fact[l + nu + 2];
                for (vn, &d) in v_n.iter_mut().zip(&dp[l]) {
                    *vn += f * d;
                }
            }
        }
        let mut prod = vec![1.0; order];
        for _ in 0..alpha {
            let a: Vec<f64> = v_n.iter().zip(&prod).map(|(x, y)| x * y).collect();
            let mut best = (0usize, f64::INFINITY);
            for b in 0..order {
                // Σ_t a(t)·ω(x^{t+b}), split to avoid a modulo in the loop.
                let (head, tail) = w_of_log.split_at(b);
                let score: f64 = a
                    .iter()
                    .zip(tail.iter().chain(head))
                    .map(|(x, y)| x * y)
                    .sum();
                let q = antilog[b];
                let better = b == 0 || score < best.1 - 1e-12 * best.1.abs();
                let tie = (score - best.1).abs() <= 1e-12 * best.1.abs() && q < antilog[best.0];
                if better || tie {
                    best = (b, score);
                }
            }
            let b = best.0;
            zpolys.push(antilog[b]);
            for (t, pr) in prod.iter_mut().enumerate() {
                let idx = if t + b >= order { t + b - order } else { t + b };
                *pr *= 1.0 + w_of_log[idx];
            }
        }
        let t_j: Vec<f64> = prod.iter().map(|pr| c_fac * (pr - 1.0)).collect();
        for l in (1..=top + alpha).rev() {
            for (nu, &c) in cj.iter().enumerate() {
                let nu = nu + 1;
                if nu > l {
                    break;
                }
                let (lo, hi) = dp.split_at_mut(l);
                for ((dl, &dm), &tj) in hi[0].iter_mut().zip(&lo[l - nu]).zip(&t_j) {
                    *dl += c * tj * dm;
                }
            }
        }
    }
    PolyLatticeRule::new(m, p, zpolys, alpha)
}
