//! Closed-form transition probabilities of the dual chain for the value and
//! coordinate models, the lumped value kernel, and the stationary masses.

use std::collections::{BTreeMap, HashMap};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::actions::{ActionError, ActionSpec, Model};
use crate::combinat::{
    binomial, factorial, integer, kappa, occupancy_pmf, ratio, rising_factorial, stirling2, stirling2_row,
    subfactorial,
};
use crate::matrix::RationalMatrix;
use crate::permgroup::{enumerate_sym, joint_orbits, PermError, Permutation};

/// Largest number of joint orbits for which colorings are enumerated.
pub const MAX_COLORING_ORBITS: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClosedFormError {
    #[error("{0} is a derangement; it is not a dual state of the value model")]
    Derangement(String),
    #[error("expected permutations of degree {expected}, found {found}")]
    WrongDegree { expected: usize, found: usize },
    #[error("cycle length t={t} must satisfy 2 <= t <= n={n}")]
    CycleLength { t: usize, n: usize },
    #[error("fixed-point class {s} is empty or out of range for k={k}")]
    EmptyClass { s: usize, k: usize },
    #[error("parameters must be positive (n={n}, k={k})")]
    InvalidParameters { n: usize, k: usize },
    #[error("binary form needs k=2, got k={0}")]
    NotBinary(usize),
    #[error("{s} joint orbits exceed the colorings cap {cap}")]
    TooManyOrbits { s: usize, cap: usize },
    #[error("floor violated at h={h}: {value} < {floor}")]
    FloorViolated { h: String, value: String, floor: String },
    #[error("floor equality at h={h} disagrees with transitivity")]
    FloorEquality { h: String },
    #[error(transparent)]
    Perm(#[from] PermError),
    #[error(transparent)]
    Action(#[from] ActionError),
}

fn check_positive(n: usize, k: usize) -> Result<(), ClosedFormError> {
    if n == 0 || k == 0 {
        return Err(ClosedFormError::InvalidParameters { n, k });
    }
    Ok(())
}

fn check_degree(expected: usize, perms: &[&Permutation]) -> Result<(), ClosedFormError> {
    for p in perms {
        if p.degree() != expected {
            return Err(ClosedFormError::WrongDegree { expected, found: p.degree() });
        }
    }
    Ok(())
}

fn inv(v: BigUint) -> BigRational {
    ratio(1u32, v)
}

fn pow_ratio(num: usize, den: usize, n: usize) -> BigRational {
    ratio(BigUint::from(num).pow(n as u32), BigUint::from(den).pow(n as u32))
}

/// Truncated bivariate polynomial in (z, u) with rational coefficients.
#[derive(Clone)]
struct Poly2 {
    dz: usize,
    du: usize,
    c: Vec<BigRational>,
}

impl Poly2 {
    fn zero(dz: usize, du: usize) -> Self {
        Poly2 { dz, du, c: vec![BigRational::zero(); (dz + 1) * (du + 1)] }
    }

    fn one(dz: usize, du: usize) -> Self {
        let mut p = Self::zero(dz, du);
        p.c[0] = BigRational::one();
        p
    }

    fn idx(&self, z: usize, u: usize) -> usize {
        z * (self.du + 1) + u
    }

    fn get(&self, z: usize, u: usize) -> &BigRational {
        &self.c[self.idx(z, u)]
    }

    fn add_to(&mut self, z: usize, u: usize, v: BigRational) {
        let i = self.idx(z, u);
        self.c[i] += v;
    }

    fn mul(&self, other: &Poly2) -> Poly2 {
        let mut out = Poly2::zero(self.dz, self.du);
        for z1 in 0..=self.dz {
            for u1 in 0..=self.du {
                let a = self.get(z1, u1);
                if a.is_zero() {
                    continue;
                }
                for z2 in 0..=self.dz - z1 {
                    for u2 in 0..=self.du - u1 {
                        let b = other.get(z2, u2);
                        if !b.is_zero() {
                            out.add_to(z1 + z2, u1 + u2, a * b);
                        }
                    }
                }
            }
        }
        out
    }

    fn pow(&self, e: usize) -> Poly2 {
        let mut acc = Poly2::one(self.dz, self.du);
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }
}

/// n! [u^n][z^s] e^z (1 + z(e^u - 1))^j.
fn value_coefficient(j: usize, n: usize, s: usize) -> BigRational {
    let mut inner = Poly2::one(s, n);
    if s >= 1 {
        for i in 1..=n {
            inner.add_to(1, i, inv(factorial(i)));
        }
    }
    let mut ez = Poly2::zero(s, n);
    for m in 0..=s {
        ez.add_to(m, 0, inv(factorial(m)));
    }
    let p = ez.mul(&inner.pow(j));
    p.get(s, n) * integer(factorial(n))
}

/// a = f(g) and j = |Fix(g) ∩ Fix(h)| for a value-model pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueOverlap {
    pub k: usize,
    pub n: usize,
    pub a: usize,
    pub j: usize,
}

impl ValueOverlap {
    pub fn new(k: usize, n: usize, g: &Permutation, h: &Permutation) -> Result<Self, ClosedFormError> {
        check_positive(n, k)?;
        check_degree(k, &[g, h])?;
        let fg = g.fixed_points();
        if fg.is_empty() {
            return Err(ClosedFormError::Derangement(g.to_string()));
        }
        let j = h.fixed_points().intersection(&fg).count();
        Ok(ValueOverlap { k, n, a: fg.len(), j })
    }

    /// (1/a^n) Σ_r C(j,r) S(n,r) r!/(k-r)!.
    pub fn stirling(&self) -> BigRational {
        let row = stirling2_row(self.n);
        let mut sum = BigRational::zero();
        for r in 1..=self.j.min(self.n) {
            sum += ratio(binomial(self.j, r) * &row[r] * factorial(r), factorial(self.k - r));
        }
        sum * pow_ratio(1, self.a, self.n)
    }

    /// (j/a)^n E[1/(k - R_{j,n})!].
    pub fn expectation(&self) -> BigRational {
        if self.j == 0 {
            return BigRational::zero();
        }
        let e: BigRational =
            occupancy_pmf(self.j, self.n).into_iter().map(|(r, p)| p * inv(factorial(self.k - r))).sum();
        pow_ratio(self.j, self.a, self.n) * e
    }

    /// n! a^{-n} [u^n][z^k] e^z (1 + z(e^u - 1))^j.
    pub fn coefficient(&self) -> BigRational {
        if self.j == 0 {
            return BigRational::zero();
        }
        value_coefficient(self.j, self.n, self.k) * pow_ratio(1, self.a, self.n)
    }
}

/// Value-model Q(g, h) by the Stirling sum.
pub fn q_value_stirling(k: usize, n: usize, g: &Permutation, h: &Permutation) -> Result<BigRational, ClosedFormError> {
    Ok(ValueOverlap::new(k, n, g, h)?.stirling())
}

/// Value-model Q(g, h) by the occupancy expectation.
pub fn q_value_expectation(
    k: usize,
    n: usize,
    g: &Permutation,
    h: &Permutation,
) -> Result<BigRational, ClosedFormError> {
    Ok(ValueOverlap::new(k, n, g, h)?.expectation())
}

/// Value-model Q(g, h) by bivariate coefficient extraction.
pub fn q_value_coefficient(
    k: usize,
    n: usize,
    g: &Permutation,
    h: &Permutation,
) -> Result<BigRational, ClosedFormError> {
    Ok(ValueOverlap::new(k, n, g, h)?.coefficient())
}

/// Σ_{d ≤ k} S(n, d), the value-model orbit count.
pub fn value_normalizer(k: usize, n: usize) -> BigUint {
    if k >= n {
        crate::combinat::bell(n)
    } else {
        (0..=k).map(|d| stirling2(n, d)).sum()
    }
}

/// πQ(g) = f(g)^n / (k! Z).
pub fn pi_value(k: usize, n: usize, g: &Permutation) -> Result<BigRational, ClosedFormError> {
    check_positive(n, k)?;
    check_degree(k, &[g])?;
    let f = g.fixed_point_count();
    if f == 0 {
        return Err(ClosedFormError::Derangement(g.to_string()));
    }
    Ok(ratio(BigUint::from(f).pow(n as u32), factorial(k) * value_normalizer(k, n)))
}

/// Coefficients of F_k(x) = Σ_{g ∈ S_k} x^{f(g)} = k! Σ_{m ≤ k} (x-1)^m/m!,
/// lowest degree first.
pub fn cycle_index_fk(k: usize) -> Vec<BigInt> {
    let kf = BigInt::from(factorial(k));
    let mut out = vec![BigInt::zero(); k + 1];
    for m in 0..=k {
        let scale = &kf / BigInt::from(factorial(m));
        for (s, slot) in out.iter_mut().enumerate().take(m + 1) {
            let term = &scale * BigInt::from(binomial(m, s));
            if (m - s) % 2 == 0 {
                *slot += term;
            } else {
                *slot -= term;
            }
        }
    }
    out
}

/// (x d/dx)^n applied to a polynomial and evaluated at x = 1.
pub fn euler_operator_at_one(coeffs: &[BigInt], n: usize) -> BigInt {
    coeffs.iter().enumerate().map(|(s, c)| c * BigInt::from(s).pow(n as u32)).sum()
}

/// The fixed-point classes 𝓕 = {1, ..., k-2} ∪ {k} of the value model.
pub fn fixed_point_classes(k: usize) -> Vec<usize> {
    (1..=k).filter(|&s| s == k || s + 2 <= k).collect()
}

/// |C_s| = C(k, s) · !(k - s).
pub fn fixed_point_class_size(k: usize, s: usize) -> BigUint {
    binomial(k, s) * subfactorial(k - s)
}

fn check_class(k: usize, s: usize) -> Result<(), ClosedFormError> {
    if fixed_point_classes(k).contains(&s) {
        Ok(())
    } else {
        Err(ClosedFormError::EmptyClass { s, k })
    }
}

/// θ_{k,s} = !(k-s)/(k-s)!.
pub fn theta(k: usize, s: usize) -> BigRational {
    ratio(subfactorial(k - s), factorial(k - s))
}

fn qbar_checked(k: usize, n: usize, r: usize, s: usize) -> Result<(), ClosedFormError> {
    check_positive(n, k)?;
    check_class(k, r)?;
    check_class(k, s)
}

/// Lumped kernel Q̄(r, s) by the Stirling sum.
pub fn qbar_value(k: usize, n: usize, r: usize, s: usize) -> Result<BigRational, ClosedFormError> {
    qbar_checked(k, n, r, s)?;
    let row = stirling2_row(n);
    let mut sum = BigRational::zero();
    for m in 1..=r.min(s).min(n) {
        sum += ratio(binomial(r, m) * &row[m] * factorial(m), factorial(s - m));
    }
    Ok(theta(k, s) * sum * pow_ratio(1, r, n))
}

/// Q̄(r, s) = θ_{k,s} E[1/(s - R_{r,n})!].
pub fn qbar_value_expectation(k: usize, n: usize, r: usize, s: usize) -> Result<BigRational, ClosedFormError> {
    qbar_checked(k, n, r, s)?;
    let e: BigRational = occupancy_pmf(r, n)
        .into_iter()
        .filter(|&(m, _)| m <= s)
        .map(|(m, p)| p * inv(factorial(s - m)))
        .sum();
    Ok(theta(k, s) * e)
}

/// Q̄(r, s) = θ_{k,s} n!/r^n [u^n][z^s] e^z (1 + z(e^u - 1))^r.
pub fn qbar_value_coefficient(k: usize, n: usize, r: usize, s: usize) -> Result<BigRational, ClosedFormError> {
    qbar_checked(k, n, r, s)?;
    Ok(theta(k, s) * value_coefficient(r, n, s) * pow_ratio(1, r, n))
}

/// Q̄(r, s) = Σ_m P(R_{r,n} = m) · P(f(h) = s | R = m), the two-stage form.
pub fn qbar_value_two_stage(k: usize, n: usize, r: usize, s: usize) -> Result<BigRational, ClosedFormError> {
    qbar_checked(k, n, r, s)?;
    let mut sum = BigRational::zero();
    for (m, p) in occupancy_pmf(r, n) {
        if m > s {
            continue;
        }
        let cond = ratio(binomial(k - m, s - m) * subfactorial(k - s), factorial(k - m));
        sum += p * cond;
    }
    Ok(sum)
}

/// π̄(s) = θ_{k,s} s^n / (s! Z).
pub fn pibar_value(k: usize, n: usize, s: usize) -> Result<BigRational, ClosedFormError> {
    check_positive(n, k)?;
    check_class(k, s)?;
    Ok(theta(k, s) * ratio(BigUint::from(s).pow(n as u32), factorial(s) * value_normalizer(k, n)))
}

/// Random orbit masses M_a = Σ_j b_j 1[U_j = a] for i.i.d. uniform colors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitMassLaw {
    pub blocks: Vec<usize>,
    pub k: usize,
}

impl OrbitMassLaw {
    pub fn new(blocks: Vec<usize>, k: usize) -> Self {
        OrbitMassLaw { blocks, k }
    }

    pub fn n(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Exact law of (M_1, ..., M_k), built one orbit at a time.
    pub fn distribution(&self) -> BTreeMap<Vec<usize>, BigRational> {
        let p = ratio(1u32, self.k as u32);
        let mut law: BTreeMap<Vec<usize>, BigRational> = BTreeMap::new();
        law.insert(vec![0; self.k], BigRational::one());
        for &b in &self.blocks {
            let mut next: BTreeMap<Vec<usize>, BigRational> = BTreeMap::new();
            for (m, w) in &law {
                let w = w * &p;
                for a in 0..self.k {
                    let mut m2 = m.clone();
                    m2[a] += b;
                    *next.entry(m2).or_insert_with(BigRational::zero) += &w;
                }
            }
            law = next;
        }
        law
    }

    /// E[Π_a 1/M_a!].
    pub fn expected_inverse_factorials(&self) -> BigRational {
        self.distribution()
            .into_iter()
            .map(|(m, p)| p * inv(m.iter().map(|&v| factorial(v)).product()))
            .sum()
    }
}

/// Colorings φ: [s] → [k] as mass vectors, visited one at a time.
fn for_each_coloring(k: usize, blocks: &[usize], mut f: impl FnMut(&[usize])) -> Result<(), ClosedFormError> {
    if blocks.len() > MAX_COLORING_ORBITS {
        return Err(ClosedFormError::TooManyOrbits { s: blocks.len(), cap: MAX_COLORING_ORBITS });
    }
    let mut phi = vec![0usize; blocks.len()];
    loop {
        let mut mass = vec![0usize; k];
        for (b, &a) in blocks.iter().zip(&phi) {
            mass[a] += b;
        }
        f(&mass);
        let mut i = phi.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            phi[i] += 1;
            if phi[i] < k {
                break;
            }
            phi[i] = 0;
        }
    }
}

/// Multivariate polynomial in k variables keyed by exponent vectors.
type PolyK = HashMap<Vec<usize>, BigUint>;

fn poly_mul(a: &PolyK, b: &PolyK) -> PolyK {
    let mut out = PolyK::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<usize> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert_with(BigUint::zero) += ca * cb;
        }
    }
    out
}

fn power_sum_factor(k: usize, b: usize) -> PolyK {
    (0..k)
        .map(|a| {
            let mut e = vec![0; k];
            e[a] = b;
            (e, BigUint::one())
        })
        .collect()
}

/// P_b(z) = Π_j (z_1^{b_j} + ... + z_k^{b_j}).
fn orbit_polynomial(k: usize, blocks: &[usize]) -> PolyK {
    let mut acc: PolyK = [(vec![0; k], BigUint::one())].into_iter().collect();
    for &b in blocks {
        acc = poly_mul(&acc, &power_sum_factor(k, b));
    }
    acc
}

/// Per-block-multiset sums S(b) with Q(g, h) = k^{-c(g)} S(b), one per form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordSums {
    pub colorings: Option<BigRational>,
    pub multinomial: Option<BigRational>,
    pub expectation: BigRational,
    pub constant_term: BigRational,
    pub alt_constant_term: BigRational,
    pub binary_subset: Option<BigRational>,
    pub binary_w: Option<BigRational>,
}

impl CoordSums {
    /// Every available form, in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, &BigRational)> {
        let mut out = Vec::new();
        if let Some(v) = &self.colorings {
            out.push(("colorings", v));
        }
        if let Some(v) = &self.multinomial {
            out.push(("multinomial", v));
        }
        out.push(("expectation", &self.expectation));
        out.push(("constant-term", &self.constant_term));
        out.push(("alt-constant-term", &self.alt_constant_term));
        if let Some(v) = &self.binary_subset {
            out.push(("binary-subset", v));
        }
        if let Some(v) = &self.binary_w {
            out.push(("binary-w", v));
        }
        out
    }

    /// The common value, or None when some forms disagree.
    pub fn agreed(&self) -> Option<BigRational> {
        let vals = self.values();
        let first = vals[0].1;
        vals.iter().all(|(_, v)| *v == first).then(|| first.clone())
    }
}

/// Σ_φ Π_a 1/M_a(φ)!.
pub fn colorings_sum(k: usize, blocks: &[usize]) -> Result<BigRational, ClosedFormError> {
    let mut sum = BigRational::zero();
    for_each_coloring(k, blocks, |mass| {
        sum += inv(mass.iter().map(|&m| factorial(m)).product());
    })?;
    Ok(sum)
}

/// (1/n!) Σ_φ multinomial(n; M(φ)).
pub fn multinomial_sum(k: usize, blocks: &[usize]) -> Result<BigRational, ClosedFormError> {
    let n: usize = blocks.iter().sum();
    let nf = factorial(n);
    let mut total = BigUint::zero();
    for_each_coloring(k, blocks, |mass| {
        total += &nf / mass.iter().map(|&m| factorial(m)).product::<BigUint>();
    })?;
    Ok(ratio(total, nf))
}

/// Coordinate-model forms for one (n, k), with sums memoized by block
/// multiset and (z_1 + ... + z_k)^n expanded once.
pub struct CoordForms {
    n: usize,
    k: usize,
    power_sum: PolyK,
    cache: HashMap<Vec<usize>, CoordSums>,
}

impl CoordForms {
    pub fn new(n: usize, k: usize) -> Result<Self, ClosedFormError> {
        check_positive(n, k)?;
        let mut power_sum: PolyK = [(vec![0; k], BigUint::one())].into_iter().collect();
        let linear = power_sum_factor(k, 1);
        for _ in 0..n {
            power_sum = poly_mul(&power_sum, &linear);
        }
        Ok(CoordForms { n, k, power_sum, cache: HashMap::new() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn compute(&self, blocks: &[usize]) -> CoordSums {
        let (n, k) = (self.n, self.k);
        let colorings = colorings_sum(k, blocks).ok();
        let multinomial = multinomial_sum(k, blocks).ok();
        let s = blocks.len();
        let expectation = integer(BigUint::from(k).pow(s as u32))
            * OrbitMassLaw::new(blocks.to_vec(), k).expected_inverse_factorials();
        let pb = orbit_polynomial(k, blocks);
        // [z^0] exp(Σ 1/z_a) P_b(z)
        let constant_term: BigRational = pb
            .iter()
            .map(|(e, c)| ratio(c.clone(), e.iter().map(|&m| factorial(m)).product::<BigUint>()))
            .sum();
        // [z^0] (Σ z_a)^n / n! · P_b^-(z): pair exponents of the two expansions
        let nf = factorial(n);
        let alt_constant_term: BigRational = pb
            .iter()
            .filter_map(|(e, c)| self.power_sum.get(e).map(|p| ratio(c * p, nf.clone())))
            .sum();
        let (binary_subset, binary_w) = if k == 2 {
            (binary_subset_sum(n, blocks).ok(), Some(binary_w_sum(n, blocks)))
        } else {
            (None, None)
        };
        CoordSums { colorings, multinomial, expectation, constant_term, alt_constant_term, binary_subset, binary_w }
    }

    /// All forms for the given joint-orbit sizes (any order), unscaled.
    pub fn sums(&mut self, blocks: &[usize]) -> &CoordSums {
        let mut key = blocks.to_vec();
        key.sort_unstable();
        if !self.cache.contains_key(&key) {
            let v = self.compute(&key);
            self.cache.insert(key.clone(), v);
        }
        &self.cache[&key]
    }

    /// k^{-c} as an exact rational.
    pub fn scale(&self, c: usize) -> BigRational {
        ratio(1u32, BigUint::from(self.k).pow(c as u32))
    }

    /// Every form of Q(g, h), scaled.
    pub fn forms(&mut self, g: &Permutation, h: &Permutation) -> Result<Vec<(&'static str, BigRational)>, ClosedFormError> {
        check_degree(self.n, &[g, h])?;
        let blocks = joint_orbits(g, h)?.sizes();
        let scale = self.scale(g.cycle_count());
        Ok(self.sums(&blocks).values().into_iter().map(|(name, v)| (name, v * &scale)).collect())
    }

    /// Q(g, h) by the colorings sum (expectation form past the cap).
    pub fn q(&mut self, g: &Permutation, h: &Permutation) -> Result<BigRational, ClosedFormError> {
        check_degree(self.n, &[g, h])?;
        let blocks = joint_orbits(g, h)?.sizes();
        let scale = self.scale(g.cycle_count());
        let sums = self.sums(&blocks);
        Ok(sums.colorings.as_ref().unwrap_or(&sums.expectation) * scale)
    }
}

fn coord_setup(n: usize, k: usize, g: &Permutation, h: &Permutation) -> Result<(Vec<usize>, BigRational), ClosedFormError> {
    check_positive(n, k)?;
    check_degree(n, &[g, h])?;
    let blocks = joint_orbits(g, h)?.sizes();
    Ok((blocks, ratio(1u32, BigUint::from(k).pow(g.cycle_count() as u32))))
}

/// Coordinate-model Q(g, h) = k^{-c(g)} Σ_φ Π_a 1/M_a(φ)!.
pub fn q_coord_colorings(n: usize, k: usize, g: &Permutation, h: &Permutation) -> Result<BigRational, ClosedFormError> {
    let (blocks, scale) = coord_setup(n, k, g, h)?;
    Ok(colorings_sum(k, &blocks)? * scale)
}

/// Coordinate-model Q(g, h) = k^{-c(g)}/n! Σ_φ multinomial(n; M(φ)).
pub fn q_coord_multinomial(
    n: usize,
    k: usize,
    g: &Permutation,
    h: &Permutation,
) -> Result<BigRational, ClosedFormError> {
    let (blocks, scale) = coord_setup(n, k, g, h)?;
    Ok(multinomial_sum(k, &blocks)? * scale)
}

/// Coordinate-model Q(g, h) = k^{s-c(g)} E[Π_a 1/M_a!].
pub fn q_coord_expectation(
    n: usize,
    k: usize,
    g: &Permutation,
    h: &Permutation,
) -> Result<BigRational, ClosedFormError> {
    let (blocks, scale) = coord_setup(n, k, g, h)?;
    let s = blocks.len();
    let e = OrbitMassLaw::new(blocks, k).expected_inverse_factorials();
    Ok(e * integer(BigUint::from(k).pow(s as u32)) * scale)
}

/// Coordinate-model Q(g, h) as a constant term, k^{-c(g)} [z^0] exp(Σ z_a) P_b^-(z).
pub fn q_coord_constant_term(
    n: usize,
    k: usize,
    g: &Permutation,
    h: &Permutation,
) -> Result<BigRational, ClosedFormError> {
    let (blocks, scale) = coord_setup(n, k, g, h)?;
    let sum: BigRational = orbit_polynomial(k, &blocks)
        .into_iter()
        .map(|(e, c)| ratio(c, e.iter().map(|&m| factorial(m)).product::<BigUint>()))
        .sum();
    Ok(sum * scale)
}

fn binary_subset_sum(n: usize, blocks: &[usize]) -> Result<BigRational, ClosedFormError> {
    if blocks.len() > MAX_COLORING_ORBITS {
        return Err(ClosedFormError::TooManyOrbits { s: blocks.len(), cap: MAX_COLORING_ORBITS });
    }
    let mut sum = BigRational::zero();
    for mask in 0u32..(1 << blocks.len()) {
        let s: usize = blocks.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, b)| b).sum();
        sum += inv(factorial(s) * factorial(n - s));
    }
    Ok(sum)
}

/// (1/n!) [w^n] (1+w)^n Π_j (1 + w^{b_j}).
fn binary_w_sum(n: usize, blocks: &[usize]) -> BigRational {
    let mut poly: Vec<BigUint> = (0..=n).map(|i| binomial(n, i)).collect();
    for &b in blocks {
        let mut next = poly.clone();
        for i in 0..=n {
            if i + b <= n {
                next[i + b] += &poly[i];
            }
        }
        poly = next;
    }
    ratio(poly[n].clone(), factorial(n))
}

/// Binary Q(g, h) by the subset sum and by the w-polynomial; both are
/// returned so callers can compare them.
pub fn q_coord_binary(n: usize, g: &Permutation, h: &Permutation) -> Result<(BigRational, BigRational), ClosedFormError> {
    let (blocks, scale) = coord_setup(n, 2, g, h)?;
    Ok((binary_subset_sum(n, &blocks)? * &scale, binary_w_sum(n, &blocks) * scale))
}

fn check_t(n: usize, t: usize) -> Result<(), ClosedFormError> {
    if t < 2 || t > n {
        return Err(ClosedFormError::CycleLength { t, n });
    }
    Ok(())
}

/// Q(e, h) for h a single t-cycle: k^{1-n} Σ_j C(m,j) (m-j)!/(t+j)! κ_{k-1}(m-j).
pub fn q_coord_id_to_tcycle(n: usize, k: usize, t: usize) -> Result<BigRational, ClosedFormError> {
    check_positive(n, k)?;
    check_t(n, t)?;
    let m = n - t;
    let mut sum = BigRational::zero();
    for j in 0..=m {
        sum += ratio(binomial(m, j) * factorial(m - j), factorial(t + j)) * kappa(k - 1, m - j);
    }
    Ok(sum * ratio(1u32, BigUint::from(k).pow((n - 1) as u32)))
}

/// The same entry reindexed by r = m - j: k^{1-n} Σ_r C(m,r) r!/(n-r)! κ_{k-1}(r).
pub fn q_coord_id_to_tcycle_reindexed(n: usize, k: usize, t: usize) -> Result<BigRational, ClosedFormError> {
    check_positive(n, k)?;
    check_t(n, t)?;
    let m = n - t;
    let mut sum = BigRational::zero();
    for r in 0..=m {
        sum += ratio(binomial(m, r) * factorial(r), factorial(n - r)) * kappa(k - 1, r);
    }
    Ok(sum * ratio(1u32, BigUint::from(k).pow((n - 1) as u32)))
}

/// Binary Q(e, t-cycle) = C(2n-t, n)/(n! 2^{n-1}).
pub fn q_coord_id_to_tcycle_binary(n: usize, t: usize) -> Result<BigRational, ClosedFormError> {
    check_t(n, t)?;
    Ok(ratio(binomial(2 * n - t, n), factorial(n) * BigUint::from(2u32).pow((n - 1) as u32)))
}

/// Q(g, e) = Q(g, g) = k^{t-1} Q(e, g) for g a single t-cycle.
pub fn q_coord_tcycle_to_e(n: usize, k: usize, t: usize) -> Result<BigRational, ClosedFormError> {
    Ok(q_coord_id_to_tcycle(n, k, t)? * integer(BigUint::from(k).pow((t - 1) as u32)))
}

/// Binary Q(g, e) = 2^{-m} C(2n-t, n)/n! with m = n - t.
pub fn q_coord_tcycle_to_e_binary(n: usize, t: usize) -> Result<BigRational, ClosedFormError> {
    check_t(n, t)?;
    Ok(ratio(binomial(2 * n - t, n), factorial(n) * BigUint::from(2u32).pow((n - t) as u32)))
}

/// πQ(g) = k^{c(g)} / k^{(n)} (rising factorial).
pub fn pi_coord(n: usize, k: usize, g: &Permutation) -> Result<BigRational, ClosedFormError> {
    check_positive(n, k)?;
    check_degree(n, &[g])?;
    Ok(ratio(BigUint::from(k).pow(g.cycle_count() as u32), rising_factorial(k, n)))
}

/// Orbit count C(n+k-1, k-1) of the coordinate model.
pub fn coord_normalizer(n: usize, k: usize) -> BigUint {
    binomial(n + k - 1, k - 1)
}

/// The pointwise floor k^{1-c(g)}/n! of the row Q(g, ·).
pub fn uniform_floor_coord(n: usize, k: usize, g: &Permutation) -> Result<BigRational, ClosedFormError> {
    check_positive(n, k)?;
    check_degree(n, &[g])?;
    Ok(ratio(BigUint::from(k), BigUint::from(k).pow(g.cycle_count() as u32) * factorial(n)))
}

/// Check Q(g, h) ≥ floor for every h ∈ S_n, with equality exactly when the
/// joint orbits of (g, h) form a single block. For k = 1 every entry sits on
/// the floor, so only the inequality is checked.
pub fn verify_uniform_floor(forms: &mut CoordForms, g: &Permutation) -> Result<BigRational, ClosedFormError> {
    let n = forms.n();
    let floor = uniform_floor_coord(n, forms.k(), g)?;
    for h in enumerate_sym(n)? {
        let q = forms.q(g, &h)?;
        if q < floor {
            return Err(ClosedFormError::FloorViolated {
                h: h.to_string(),
                value: crate::matrix::format_rational(&q),
                floor: crate::matrix::format_rational(&floor),
            });
        }
        let transitive = joint_orbits(g, &h)?.len() == 1;
        if forms.k() >= 2 && (q == floor) != transitive {
            return Err(ClosedFormError::FloorEquality { h: h.to_string() });
        }
    }
    Ok(floor)
}

/// Q(g, h) from the definition: Σ_{x ∈ X_g ∩ X_h} 1/(|X_g| |G_x|).
pub fn dual_entry(spec: &ActionSpec, g: &Permutation, h: &Permutation) -> Result<BigRational, ClosedFormError> {
    let xg = spec.fixed_set_size(g)?;
    let mut sum = BigRational::zero();
    for x in spec.enumerate_fixed_words(g)? {
        if spec.is_fixed(h, &x) {
            sum += inv(spec.stabilizer_size(&x)?);
        }
    }
    Ok(sum * inv(xg))
}

/// The full dual kernel assembled from closed forms, in dual-state order.
pub fn closed_form_q(spec: &ActionSpec) -> Result<RationalMatrix, ClosedFormError> {
    let duals = spec.dual_states()?;
    let d = duals.len();
    let mut out = RationalMatrix::zeros(d, d);
    match spec.model {
        Model::Value => {
            let mut memo: HashMap<(usize, usize), BigRational> = HashMap::new();
            for (i, g) in duals.iter().enumerate() {
                for (l, h) in duals.iter().enumerate() {
                    let ov = ValueOverlap::new(spec.k, spec.n, g, h)?;
                    let v = memo.entry((ov.a, ov.j)).or_insert_with(|| ov.stirling()).clone();
                    out.set(i, l, v);
                }
            }
        }
        Model::Coordinate => {
            let mut forms = CoordForms::new(spec.n, spec.k)?;
            for (i, g) in duals.iter().enumerate() {
                for (l, h) in duals.iter().enumerate() {
                    out.set(i, l, forms.q(g, h)?);
                }
            }
        }
    }
    Ok(out)
}

/// πQ from closed forms, in dual-state order.
pub fn closed_form_pi(spec: &ActionSpec) -> Result<Vec<BigRational>, ClosedFormError> {
    spec.dual_states()?
        .iter()
        .map(|g| match spec.model {
            Model::Value => pi_value(spec.k, spec.n, g),
            Model::Coordinate => pi_coord(spec.n, spec.k, g),
        })
        .collect()
}
