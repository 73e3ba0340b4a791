//! Exact characteristic polynomials, the shared nonzero spectrum of Q and K,
//! eigenvector transport through the legs, spectral gaps, and the binary
//! coordinate-model eigenvalue list.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::combinat::binomial;
use crate::kernels::{check_detailed_balance, ChainBundle, KernelError};
use crate::matrix::{format_rational, rational_to_f64, Distribution, MatrixError, RationalMatrix};
use crate::modp::{self, Crt, Field};

/// Largest dimension handled by dense modular elimination.
pub const EXACT_DENSE_CAP: usize = 512;
/// Largest dimension for which low-rank compression is attempted.
pub const COMPRESSED_DIM_CAP: usize = 8192;
/// Largest denominator tried when turning float eigenvalues into candidates.
pub const MAX_CANDIDATE_DENOMINATOR: i64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension {dim} (rank {rank}) exceeds the exact caps")]
    Cap { dim: usize, rank: usize },
    #[error("matrix is not reversible with respect to the given distribution")]
    NotReversible,
    #[error("rank certification did not settle after {0} attempts")]
    RankUnsettled(usize),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// A monic polynomial with rational coefficients, lowest degree first. As a
/// characteristic polynomial its degree is the dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharPoly {
    coeffs: Vec<BigRational>,
}

impl CharPoly {
    /// Normalizes to a monic polynomial; trailing zeros are dropped.
    pub fn from_coeffs(mut coeffs: Vec<BigRational>) -> Self {
        while coeffs.len() > 1 && coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        let lead = coeffs.last().cloned().unwrap_or_else(BigRational::one);
        if lead.is_zero() {
            return CharPoly { coeffs: vec![BigRational::one()] };
        }
        CharPoly { coeffs: coeffs.into_iter().map(|c| c / &lead).collect() }
    }

    /// (x - r_1)...(x - r_m).
    pub fn from_roots(roots: &[BigRational]) -> Self {
        let mut c = vec![BigRational::one()];
        for r in roots {
            let mut next = vec![BigRational::zero(); c.len() + 1];
            for (i, a) in c.iter().enumerate() {
                next[i + 1] += a;
                next[i] -= a * r;
            }
            c = next;
        }
        CharPoly { coeffs: c }
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        self.coeffs.iter().rev().fold(BigRational::zero(), |acc, c| acc * x + c)
    }

    /// x^m · self.
    pub fn shift(&self, m: usize) -> Self {
        let mut c = vec![BigRational::zero(); m];
        c.extend(self.coeffs.iter().cloned());
        CharPoly { coeffs: c }
    }

    pub fn mul(&self, other: &CharPoly) -> Self {
        let mut c = vec![BigRational::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        CharPoly { coeffs: c }
    }

    /// Multiplicity of the root 0.
    pub fn zero_multiplicity(&self) -> usize {
        self.coeffs.iter().take_while(|c| c.is_zero()).count()
    }

    /// Primitive integer polynomial with the same roots and positive leading
    /// coefficient.
    pub fn primitive(&self) -> Vec<BigInt> {
        let l = self.coeffs.iter().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
        let ints: Vec<BigInt> = self.coeffs.iter().map(|c| c.numer() * (&l / c.denom())).collect();
        let g = ints.iter().fold(BigInt::zero(), |acc, v| acc.gcd(v));
        if g.is_zero() {
            return ints;
        }
        ints.into_iter().map(|v| v / &g).collect()
    }

    fn from_integer(ints: &[BigInt]) -> Self {
        Self::from_coeffs(ints.iter().map(|v| BigRational::from_integer(v.clone())).collect())
    }
}

impl fmt::Display for CharPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let neg = c.is_negative();
            let a = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { "-" } else { "+" })?;
            }
            first = false;
            let show_coeff = !a.is_one() || i == 0;
            if show_coeff {
                write!(f, "{}", if a.is_integer() { a.numer().to_string() } else { format_rational(&a) })?;
            }
            match i {
                0 => {}
                1 => write!(f, "{}x", if show_coeff { "*" } else { "" })?,
                _ => write!(f, "{}x^{}", if show_coeff { "*" } else { "" }, i)?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// How an exact characteristic polynomial was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharPolyComputation {
    pub poly: CharPoly,
    /// Certified rank when the low-rank route was used.
    pub rank: Option<usize>,
    pub primes_used: usize,
    pub compressed: bool,
}

/// The matrix scaled to integers, N = D · P.
struct IntMatrix {
    n: usize,
    scale: BigInt,
    small: Option<Vec<i64>>,
    big: Vec<BigInt>,
}

impl IntMatrix {
    fn new(p: &RationalMatrix) -> Self {
        let (scale, big) = p.to_scaled_integers();
        let small: Option<Vec<i64>> = big.iter().map(|v| v.to_i64()).collect();
        IntMatrix { n: p.rows(), scale, small, big }
    }

    fn residues(&self, f: &Field) -> Vec<u64> {
        match &self.small {
            Some(s) => s.iter().map(|&v| f.from_i64(v)).collect(),
            None => self.big.iter().map(|v| f.from_bigint(v)).collect(),
        }
    }

    fn get(&self, i: usize, j: usize) -> &BigInt {
        &self.big[i * self.n + j]
    }

    fn row_log2_norms(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| modp::log2_norm_upper(self.big[i * self.n..(i + 1) * self.n].iter().map(modp::abs_f64)))
            .collect()
    }
}

fn log2_sum(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (1.0 + (lo - hi).exp2()).log2() + 1e-9
}

fn plain(f: &Field, v: &[u64]) -> Vec<u64> {
    v.iter().map(|&x| f.from_mont(x)).collect()
}

/// Exact characteristic polynomial det(xI - P).
pub fn char_poly(p: &RationalMatrix) -> Result<CharPoly, SpectrumError> {
    Ok(char_poly_detailed(p)?.poly)
}

/// Exact characteristic polynomial with the route taken. Dense matrices use
/// Hessenberg reduction modulo 62-bit primes; matrices of low rank r are
/// compressed to the r×r pencil det(yC - W) on a certified column basis.
/// Both routes stop once the primes exceed a proven coefficient bound.
pub fn char_poly_detailed(p: &RationalMatrix) -> Result<CharPolyComputation, SpectrumError> {
    if !p.is_square() {
        return Err(SpectrumError::NotSquare { rows: p.rows(), cols: p.cols() });
    }
    let d = p.rows();
    if d == 0 {
        return Ok(CharPolyComputation { poly: CharPoly::from_coeffs(vec![BigRational::one()]), rank: Some(0), primes_used: 0, compressed: false });
    }
    if d > COMPRESSED_DIM_CAP {
        return Err(SpectrumError::Cap { dim: d, rank: d });
    }
    let m = IntMatrix::new(p);
    let f0 = Field::new(modp::prime(0));
    let mut a = m.residues(&f0);
    let (prow, pcol) = modp::rank_profile_mod(&f0, &mut a, d, d);
    let r = prow.len();
    if r * 4 <= d * 3 && r <= EXACT_DENSE_CAP {
        compressed(&m, prow, pcol)
    } else if d <= EXACT_DENSE_CAP {
        dense(&m)
    } else {
        Err(SpectrumError::Cap { dim: d, rank: r })
    }
}

fn dense(m: &IntMatrix) -> Result<CharPolyComputation, SpectrumError> {
    let d = m.n;
    // each coefficient of det(yI - N) is a sum of principal minors, bounded by
    // e_j of the row norms, hence by Π(1 + |N_i|)
    let bound: f64 = m.row_log2_norms().iter().map(|&l| log2_sum(0.0, l)).sum::<f64>() + 2.0;
    let mut crt = Crt::new(d + 1);
    let mut used = 0;
    for i in 0.. {
        let f = Field::new(modp::prime(i));
        let mut a = m.residues(&f);
        let cp = modp::charpoly_mod(&f, &mut a, d);
        crt.add(f.p, &plain(&f, &cp));
        used += 1;
        if crt.modulus_bits() as f64 > bound + 1.0 {
            break;
        }
    }
    let ints = crt.symmetric();
    // coefficient of x^j in det(xI - N/D) is a_j / D^{d-j}
    let coeffs = ints
        .into_iter()
        .enumerate()
        .map(|(j, a)| BigRational::new(a, m.scale.pow((d - j) as u32)))
        .collect();
    Ok(CharPolyComputation { poly: CharPoly::from_coeffs(coeffs), rank: None, primes_used: used, compressed: false })
}

fn compressed(m: &IntMatrix, mut prow: Vec<usize>, mut pcol: Vec<usize>) -> Result<CharPolyComputation, SpectrumError> {
    let d = m.n;
    let norms = m.row_log2_norms();
    let mut sorted = norms.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut used = 1;
    let mut next_prime = 1;
    // Certify rank N = r: every Schur-complement entry times det C is an
    // (r+1)-minor of N, bounded by the product of its r+1 largest row norms.
    let mut attempts = 0;
    'certify: loop {
        attempts += 1;
        if attempts > 8 {
            return Err(SpectrumError::RankUnsettled(attempts - 1));
        }
        let r = prow.len();
        if r == d {
            break;
        }
        let bound: f64 = sorted.iter().take(r + 1).sum::<f64>() + 2.0;
        let mut bits = 0.0;
        while bits <= bound + 1.0 {
            let f = Field::new(modp::prime(next_prime));
            next_prime += 1;
            used += 1;
            let mut a = m.residues(&f);
            match modp::schur_vanishes_mod(&f, &mut a, d, d, &prow, &pcol) {
                None => continue,
                Some(true) => bits += (f.p as f64).log2() - 1e-9,
                Some(false) => {
                    // the first prime under-reported the rank; redo the profile here
                    let mut a = m.residues(&f);
                    let (r2, c2) = modp::rank_profile_mod(&f, &mut a, d, d);
                    prow = r2;
                    pcol = c2;
                    continue 'certify;
                }
            }
        }
        break;
    }
    let r = prow.len();
    if r == 0 {
        let mut coeffs = vec![BigRational::zero(); d + 1];
        coeffs[d] = BigRational::one();
        return Ok(CharPolyComputation { poly: CharPoly { coeffs }, rank: Some(0), primes_used: used, compressed: true });
    }
    // C = N[R, J], W = N[R, :] · N[:, J]; then det(yI - N) = y^{d-r} det(yC - W) / det C
    let c: Vec<BigInt> = prow.iter().flat_map(|&i| pcol.iter().map(move |&j| (i, j))).map(|(i, j)| m.get(i, j).clone()).collect();
    let w: Vec<BigInt> = match &m.small {
        Some(s) if s.iter().all(|v| v.unsigned_abs() < 1 << 40) && d < 1 << 20 => {
            let mut out = Vec::with_capacity(r * r);
            for &i in &prow {
                let row = &s[i * d..(i + 1) * d];
                for &j in &pcol {
                    let mut acc: i128 = 0;
                    for (l, &v) in row.iter().enumerate() {
                        if v != 0 {
                            acc += v as i128 * s[l * d + j] as i128;
                        }
                    }
                    out.push(BigInt::from(acc));
                }
            }
            out
        }
        _ => {
            let mut out = Vec::with_capacity(r * r);
            for &i in &prow {
                for &j in &pcol {
                    let mut acc = BigInt::zero();
                    for l in 0..d {
                        let v = m.get(i, l);
                        if !v.is_zero() {
                            acc += v * m.get(l, j);
                        }
                    }
                    out.push(acc);
                }
            }
            out
        }
    };
    let row_norm = |v: &[BigInt]| modp::log2_norm_upper(v.iter().map(modp::abs_f64));
    let bound: f64 = (0..r)
        .map(|i| log2_sum(row_norm(&c[i * r..(i + 1) * r]), row_norm(&w[i * r..(i + 1) * r])))
        .sum::<f64>()
        + 2.0;
    let mut crt = Crt::new(r + 2);
    loop {
        let f = Field::new(modp::prime(next_prime));
        next_prime += 1;
        used += 1;
        let cm: Vec<u64> = c.iter().map(|v| f.from_bigint(v)).collect();
        let wm: Vec<u64> = w.iter().map(|v| f.from_bigint(v)).collect();
        let Some((mut x, det)) = modp::solve_mod(&f, &cm, &wm, r, r) else { continue };
        let cp = modp::charpoly_mod(&f, &mut x, r);
        let mut vals: Vec<u64> = cp.iter().map(|&v| f.from_mont(f.mul(v, det))).collect();
        vals.push(f.from_mont(det));
        crt.add(f.p, &vals);
        if crt.modulus_bits() as f64 > bound + 1.0 {
            break;
        }
    }
    let ints = crt.symmetric();
    let det_c = ints[r + 1].clone();
    let mut coeffs = vec![BigRational::zero(); d + 1];
    for (i, fi) in ints.into_iter().take(r + 1).enumerate() {
        coeffs[d - r + i] = BigRational::new(fi, &det_c * m.scale.pow((r - i) as u32));
    }
    Ok(CharPolyComputation { poly: CharPoly::from_coeffs(coeffs), rank: Some(r), primes_used: used, compressed: true })
}

/// Outcome of comparing the nonzero spectra of two square matrices.
#[derive(Debug, Clone)]
pub struct SpectrumComparison {
    pub equal: bool,
    pub dims: (usize, usize),
    pub ranks: (Option<usize>, Option<usize>),
    pub first: CharPoly,
    pub second: CharPoly,
}

/// Compare charpolys exactly: χ_K = x^{dim K - dim Q} χ_Q (or symmetrically).
pub fn compare_nonzero_spectra(q: &RationalMatrix, k: &RationalMatrix) -> Result<SpectrumComparison, SpectrumError> {
    let a = char_poly_detailed(q)?;
    let b = char_poly_detailed(k)?;
    let (dq, dk) = (a.poly.degree(), b.poly.degree());
    let equal = if dk >= dq { b.poly == a.poly.shift(dk - dq) } else { a.poly == b.poly.shift(dq - dk) };
    Ok(SpectrumComparison { equal, dims: (dq, dk), ranks: (a.rank, b.rank), first: a.poly, second: b.poly })
}

pub fn nonzero_spectrum_equal(q: &RationalMatrix, k: &RationalMatrix) -> Result<bool, SpectrumError> {
    Ok(compare_nonzero_spectra(q, k)?.equal)
}

/// Continued-fraction convergents of x with denominators up to `max_den`.
pub fn convergents(x: f64, max_den: i64) -> Vec<BigRational> {
    let mut out = Vec::new();
    if !x.is_finite() {
        return out;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut y = x;
    for _ in 0..40 {
        let a = y.floor();
        if a.abs() > 1e15 {
            break;
        }
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        out.push(BigRational::new(BigInt::from(h2), BigInt::from(k2)));
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = y - a;
        if frac.abs() < 1e-15 {
            break;
        }
        y = 1.0 / frac;
    }
    out
}

/// Divide a primitive integer polynomial by (q x - p) when exact.
fn divide_root(a: &[BigInt], root: &BigRational) -> Option<Vec<BigInt>> {
    let n = a.len() - 1;
    if n == 0 {
        return None;
    }
    let (p, q) = (root.numer(), root.denom());
    let mut b = vec![BigInt::zero(); n];
    let (quo, rem) = a[n].div_rem(q);
    if !rem.is_zero() {
        return None;
    }
    b[n - 1] = quo;
    for i in (1..n).rev() {
        let num = &a[i] + p * &b[i];
        let (quo, rem) = num.div_rem(q);
        if !rem.is_zero() {
            return None;
        }
        b[i - 1] = quo;
    }
    (a[0] == -(p * &b[0])).then_some(b)
}

/// Rational roots of a polynomial found among the candidates (plus 0 and 1),
/// with multiplicities, and the remaining monic factor.
#[derive(Debug, Clone)]
pub struct RootExtraction {
    pub roots: Vec<(BigRational, usize)>,
    pub remaining: CharPoly,
}

pub fn extract_rational_roots(poly: &CharPoly, hints: &[f64]) -> RootExtraction {
    let mut ints = poly.primitive();
    let mut found: BTreeMap<BigRational, usize> = BTreeMap::new();
    let z = ints.iter().take_while(|c| c.is_zero()).count().min(ints.len() - 1);
    if z > 0 {
        found.insert(BigRational::zero(), z);
        ints.drain(..z);
    }
    let mut candidates: Vec<BigRational> = vec![BigRational::one()];
    for &h in hints {
        for c in convergents(h, MAX_CANDIDATE_DENOMINATOR) {
            if (rational_to_f64(&c) - h).abs() <= 1e-6 * h.abs().max(1.0) {
                candidates.push(c);
            }
        }
    }
    candidates.sort();
    candidates.dedup();
    for c in candidates {
        if c.is_zero() {
            continue;
        }
        while let Some(b) = divide_root(&ints, &c) {
            *found.entry(c.clone()).or_insert(0) += 1;
            ints = b;
        }
    }
    let mut roots: Vec<(BigRational, usize)> = found.into_iter().collect();
    roots.sort_by(|a, b| b.0.cmp(&a.0));
    RootExtraction { roots, remaining: CharPoly::from_integer(&ints) }
}

/// Real eigenvalues of a reversible kernel, descending, from the symmetric
/// matrix D^{1/2} P D^{-1/2} with D = diag(π).
pub fn reversible_eigen(p: &RationalMatrix, pi: &Distribution) -> Result<(Vec<f64>, DMatrix<f64>), SpectrumError> {
    if !p.is_square() || p.rows() != pi.len() {
        return Err(MatrixError::DimensionMismatch("kernel and distribution".into()).into());
    }
    let n = p.rows();
    let root: Vec<f64> = pi.to_f64().into_iter().map(f64::sqrt).collect();
    let pf = p.to_f64();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if root[j] > 0.0 {
                s[(i, j)] = pf[(i, j)] * root[i] / root[j];
            }
        }
    }
    let sym = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    // right eigenvectors of P: v = D^{-1/2} u
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, col)] = if root[r] > 0.0 { eig.eigenvectors[(r, i)] / root[r] } else { 0.0 };
        }
    }
    Ok((values, vecs))
}

pub fn reversible_eigenvalues(p: &RationalMatrix, pi: &Distribution) -> Result<Vec<f64>, SpectrumError> {
    Ok(reversible_eigen(p, pi)?.0)
}

/// (λ_1, λ_*) from a descending spectrum; the top eigenvalue 1 is removed once.
pub fn second_eigenvalues(sorted_desc: &[f64]) -> Option<(f64, f64)> {
    if sorted_desc.len() < 2 {
        return None;
    }
    let l1 = sorted_desc[1];
    let lmin = *sorted_desc.last().unwrap();
    Some((l1, l1.abs().max(lmin.abs())))
}

/// Spectral summary of a reversible kernel.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub dimension: usize,
    pub charpoly: CharPoly,
    pub exact_roots: Vec<(BigRational, usize)>,
    pub remaining: CharPoly,
    pub float_roots: Vec<f64>,
    pub lambda1: f64,
    pub lambda_star: f64,
    pub gap: f64,
    pub abs_gap: f64,
    pub relaxation_time: Option<f64>,
    /// Exact values when every root is rational.
    pub exact_gap: Option<BigRational>,
    pub exact_abs_gap: Option<BigRational>,
}

/// 12 significant digits in plain decimal notation.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let x: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let mag = x.abs().log10().floor() as i32;
    let decimals = (11 - mag).max(0) as usize;
    format!("{:.*}", decimals, x)
}

impl SpectrumReport {
    /// The exact roots expanded by multiplicity, descending.
    pub fn exact_multiset(&self) -> Vec<BigRational> {
        self.exact_roots.iter().flat_map(|(r, m)| std::iter::repeat_n(r.clone(), *m)).collect()
    }

    pub fn fully_rational(&self) -> bool {
        self.remaining.degree() == 0
    }

    pub fn to_json(&self) -> Value {
        json!({
            "dimension": self.dimension,
            "exact_roots": self.exact_roots.iter().map(|(r, m)| json!({"value": format_rational(r), "multiplicity": m})).collect::<Vec<_>>(),
            "remaining_factor_degree": self.remaining.degree(),
            "float_roots": self.float_roots.iter().map(|&x| sig12(x)).collect::<Vec<_>>(),
            "lambda1": sig12(self.lambda1),
            "lambda_star": sig12(self.lambda_star),
            "gap": sig12(self.gap),
            "abs_gap": sig12(self.abs_gap),
            "relaxation_time": self.relaxation_time.map(sig12),
            "exact_gap": self.exact_gap.as_ref().map(format_rational),
            "exact_abs_gap": self.exact_abs_gap.as_ref().map(format_rational),
        })
    }
}

/// Exact charpoly, rational roots, and gaps of a kernel reversible for π.
/// A single-state chain has γ = γ* = 1 by convention.
pub fn gap_report(p: &RationalMatrix, pi: &Distribution) -> Result<SpectrumReport, SpectrumError> {
    if !check_detailed_balance(p, pi)? {
        return Err(SpectrumError::NotReversible);
    }
    let charpoly = char_poly(p)?;
    let float_roots = reversible_eigenvalues(p, pi)?;
    let ext = extract_rational_roots(&charpoly, &float_roots);
    let n = p.rows();
    let (lambda1, lambda_star) = second_eigenvalues(&float_roots).unwrap_or((0.0, 0.0));
    let (gap, abs_gap) = if n == 1 { (1.0, 1.0) } else { (1.0 - lambda1, 1.0 - lambda_star) };
    let (mut exact_gap, mut exact_abs_gap) = (None, None);
    if ext.remaining.degree() == 0 {
        let mut all: Vec<BigRational> =
            ext.roots.iter().flat_map(|(r, m)| std::iter::repeat_n(r.clone(), *m)).collect();
        all.sort_by(|a, b| b.cmp(a));
        if n == 1 {
            exact_gap = Some(BigRational::one());
            exact_abs_gap = Some(BigRational::one());
        } else if all.first().is_some_and(One::is_one) {
            let rest = &all[1..];
            let l1 = rest[0].clone();
            let ls = rest.iter().map(|r| r.abs()).max().unwrap();
            exact_gap = Some(BigRational::one() - l1);
            exact_abs_gap = Some(BigRational::one() - ls);
        }
    }
    let relaxation_time = (abs_gap > 1e-12).then(|| 1.0 / abs_gap);
    Ok(SpectrumReport {
        dimension: n,
        charpoly,
        exact_roots: ext.roots,
        remaining: ext.remaining,
        float_roots,
        lambda1,
        lambda_star,
        gap,
        abs_gap,
        relaxation_time,
        exact_gap,
        exact_abs_gap,
    })
}

/// Basis of the right nullspace of an exact matrix.
pub fn nullspace(m: &RationalMatrix) -> Vec<Vec<BigRational>> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a: Vec<Vec<BigRational>> = (0..rows).map(|i| m.row(i).to_vec()).collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else { continue };
        a.swap(r, p);
        let inv = BigRational::one() / &a[r][c];
        for v in a[r].iter_mut() {
            *v *= &inv;
        }
        let pivot = a[r].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let u = row[c].clone();
            for (x, y) in row.iter_mut().zip(&pivot) {
                if !y.is_zero() {
                    *x -= &u * y;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&fc| {
            let mut v = vec![BigRational::zero(); cols];
            v[fc] = BigRational::one();
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[i][fc].clone();
            }
            v
        })
        .collect()
}

fn shifted(m: &RationalMatrix, lambda: &BigRational) -> RationalMatrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let v = out.get(i, i) - lambda;
        out.set(i, i, v);
    }
    out
}

/// Exact eigenspace transport for one nonzero rational eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenspaceCheck {
    pub lambda: BigRational,
    pub dim_k: usize,
    pub dim_q: usize,
    /// A v is a nonzero λ-eigenvector of Q and B A v = λ v for every basis v.
    pub transported: bool,
}

#[derive(Debug, Clone)]
pub struct IntertwineReport {
    pub qa_equals_ak: bool,
    pub kb_equals_bq: bool,
    pub eigenspaces: Vec<EigenspaceCheck>,
    pub numeric_max_residual: f64,
    pub numeric_ok: bool,
}

impl IntertwineReport {
    pub fn holds(&self) -> bool {
        self.qa_equals_ak
            && self.kb_equals_bq
            && self.numeric_ok
            && self.eigenspaces.iter().all(|e| e.transported && e.dim_k == e.dim_q)
    }
}

/// Largest state space for which eigenspaces are computed exactly.
pub const EXACT_EIGENSPACE_CAP: usize = 256;

/// QA = AK and KB = BQ exactly; every nonzero eigenvector v of K maps to the
/// eigenvector Av of Q with the same eigenvalue, and B(Av) = λv.
pub fn intertwine_check(bundle: &ChainBundle, tolerance: f64) -> Result<IntertwineReport, SpectrumError> {
    let (a, b, q, k) = (bundle.a.matrix(), bundle.b.matrix(), bundle.q.matrix(), bundle.k.matrix());
    let qa_equals_ak = q.mul(a)? == a.mul(k)?;
    let kb_equals_bq = k.mul(b)? == b.mul(q)?;
    let mut eigenspaces = Vec::new();
    let nx = bundle.table.state_len();
    if nx <= EXACT_EIGENSPACE_CAP {
        let report = gap_report(k, &bundle.pi_k)?;
        for (lambda, _) in report.exact_roots.iter().filter(|(l, _)| !l.is_zero()) {
            let basis = nullspace(&shifted(k, lambda));
            let dim_q = nullspace(&shifted(q, lambda)).len();
            let mut transported = true;
            for v in &basis {
                let w = a.right_mul(v)?;
                let lw: Vec<BigRational> = w.iter().map(|x| x * lambda).collect();
                let lv: Vec<BigRational> = v.iter().map(|x| x * lambda).collect();
                if w.iter().all(Zero::is_zero) || q.right_mul(&w)? != lw || b.right_mul(&w)? != lv {
                    transported = false;
                }
            }
            eigenspaces.push(EigenspaceCheck { lambda: lambda.clone(), dim_k: basis.len(), dim_q, transported });
        }
    }
    // float transport for every eigenpair, rational or not
    let (values, vecs) = reversible_eigen(k, &bundle.pi_k)?;
    let (af, bf, qf) = (a.to_f64(), b.to_f64(), q.to_f64());
    let mut worst: f64 = 0.0;
    let mut numeric_ok = true;
    for (i, &lambda) in values.iter().enumerate() {
        if lambda.abs() <= tolerance {
            continue;
        }
        let v = vecs.column(i).into_owned();
        let scale = v.amax().max(1e-300);
        let v = v / scale;
        let w = &af * &v;
        if w.amax() <= tolerance {
            numeric_ok = false;
        }
        let r1 = (&qf * &w - &w * lambda).amax();
        let r2 = (&bf * &w - &v * lambda).amax();
        worst = worst.max(r1).max(r2);
    }
    if worst > tolerance {
        numeric_ok = false;
    }
    Ok(IntertwineReport { qa_equals_ak, kb_equals_bq, eigenspaces, numeric_max_residual: worst, numeric_ok })
}

/// (C(2m, m)/4^m)^2 for 1 ≤ m ≤ ⌊n/2⌋.
pub fn dz_eigenvalues(n: usize) -> Vec<BigRational> {
    (1..=n / 2)
        .map(|m| {
            let c = BigRational::new(BigInt::from(binomial(2 * m, m)), BigInt::from(4u32).pow(m as u32));
            &c * &c
        })
        .collect()
}

/// Distinct values after merging neighbours closer than `merge`.
pub fn distinct_values(values: &[f64], merge: f64) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for x in v {
        match groups.last_mut() {
            Some(g) if (g.last().unwrap() - x).abs() < merge => g.push(x),
            _ => groups.push(vec![x]),
        }
    }
    groups.into_iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect()
}

#[derive(Debug, Clone)]
pub struct DzCheck {
    pub n: usize,
    pub expected: Vec<f64>,
    pub observed: Vec<f64>,
    pub max_error: f64,
    pub matched: bool,
}

/// Compare the distinct eigenvalues of K other than 0 and 1 with the list.
pub fn dz_check(k: &RationalMatrix, pi_k: &Distribution, n: usize, tolerance: f64) -> Result<DzCheck, SpectrumError> {
    let values = reversible_eigenvalues(k, pi_k)?;
    let nontrivial: Vec<f64> =
        values.into_iter().filter(|x| x.abs() > tolerance && (x - 1.0).abs() > tolerance).collect();
    let observed = distinct_values(&nontrivial, 1e-7);
    let mut expected: Vec<f64> = dz_eigenvalues(n).iter().map(rational_to_f64).collect();
    expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let matched_len = observed.len() == expected.len();
    let max_error = if matched_len {
        observed.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(DzCheck { n, expected, observed, max_error, matched: matched_len && max_error <= tolerance })
}

/// γ*(Q) and γ*(K) agree (exactly when both spectra are rational).
pub fn gaps_agree(q: &SpectrumReport, k: &SpectrumReport, tolerance: f64) -> bool {
    match (&q.exact_abs_gap, &k.exact_abs_gap) {
        (Some(a), Some(b)) => a == b,
        _ => (q.abs_gap - k.abs_gap).abs() <= tolerance,
    }
}
