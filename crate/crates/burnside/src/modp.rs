//! Word-size prime fields in Montgomery form and the dense routines the exact
//! spectral code runs over them.

use std::sync::RwLock;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

static PRIMES: RwLock<Vec<u64>> = RwLock::new(Vec::new());

fn mulmod_slow(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod_slow(mut a: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1u64;
    a %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod_slow(r, a, m);
        }
        a = mulmod_slow(a, a, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'outer: for a in BASES {
        let mut x = powmod_slow(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod_slow(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// The i-th prime below 2^62, counting down.
pub fn prime(i: usize) -> u64 {
    if let Some(&p) = PRIMES.read().unwrap().get(i) {
        return p;
    }
    let mut list = PRIMES.write().unwrap();
    let mut c = list.last().copied().unwrap_or(1u64 << 62);
    while list.len() <= i {
        c -= 1;
        while !is_prime_u64(c) {
            c -= 1;
        }
        list.push(c);
    }
    list[i]
}

/// Arithmetic modulo an odd prime p < 2^62 in Montgomery form.
#[derive(Debug, Clone, Copy)]
pub struct Field {
    pub p: u64,
    pinv: u64,
    r2: u64,
}

impl Field {
    pub fn new(p: u64) -> Self {
        assert!(p % 2 == 1 && p < (1 << 62));
        // Newton iteration for p^{-1} mod 2^64
        let mut inv = 1u64;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(p.wrapping_mul(inv)));
        }
        let r = ((1u128 << 64) % p as u128) as u64;
        let r2 = mulmod_slow(r, r, p);
        Field { p, pinv: inv.wrapping_neg(), r2 }
    }

    #[inline]
    fn redc(&self, t: u128) -> u64 {
        let m = (t as u64).wrapping_mul(self.pinv);
        let u = ((t + m as u128 * self.p as u128) >> 64) as u64;
        if u >= self.p {
            u - self.p
        } else {
            u
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.redc(a as u128 * b as u128)
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    /// Plain residue (< p) into Montgomery form.
    #[inline]
    pub fn to_mont(&self, a: u64) -> u64 {
        self.mul(a, self.r2)
    }

    #[inline]
    pub fn from_mont(&self, a: u64) -> u64 {
        self.redc(a as u128)
    }

    pub fn one(&self) -> u64 {
        self.to_mont(1)
    }

    pub fn pow(&self, a: u64, mut e: u64) -> u64 {
        let mut base = a;
        let mut r = self.one();
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        r
    }

    pub fn inv(&self, a: u64) -> u64 {
        self.pow(a, self.p - 2)
    }

    /// Montgomery form of an arbitrary integer.
    pub fn from_bigint(&self, v: &BigInt) -> u64 {
        let r = v.mod_floor(&BigInt::from(self.p)).to_u64().unwrap();
        self.to_mont(r)
    }

    pub fn from_i64(&self, v: i64) -> u64 {
        let r = (v as i128).rem_euclid(self.p as i128) as u64;
        self.to_mont(r)
    }
}

/// Characteristic polynomial det(xI - a) of an n×n matrix in Montgomery
/// form, lowest degree first, via reduction to upper Hessenberg form.
pub fn charpoly_mod(f: &Field, a: &mut [u64], n: usize) -> Vec<u64> {
    for k in 0..n.saturating_sub(2) {
        let Some(piv) = (k + 1..n).find(|&i| a[i * n + k] != 0) else { continue };
        if piv != k + 1 {
            for j in 0..n {
                a.swap(piv * n + j, (k + 1) * n + j);
            }
            for i in 0..n {
                a.swap(i * n + piv, i * n + k + 1);
            }
        }
        let inv = f.inv(a[(k + 1) * n + k]);
        let mut us = vec![0u64; n];
        let (head, tail) = a.split_at_mut((k + 2) * n);
        let pivot_row = &head[(k + 1) * n..(k + 2) * n];
        for (off, row) in tail.chunks_mut(n).enumerate() {
            let u = f.mul(row[k], inv);
            us[k + 2 + off] = u;
            if u == 0 {
                continue;
            }
            for j in k..n {
                row[j] = f.sub(row[j], f.mul(u, pivot_row[j]));
            }
        }
        // column k+1 += Σ_i u_i · column i, one dot product per row
        if us[k + 2..].iter().any(|&u| u != 0) {
            for r in 0..n {
                let row = &mut a[r * n..(r + 1) * n];
                let mut acc = row[k + 1];
                for i in k + 2..n {
                    if us[i] != 0 {
                        acc = f.add(acc, f.mul(us[i], row[i]));
                    }
                }
                row[k + 1] = acc;
            }
        }
    }
    // p_{m+1} = (x - h_mm) p_m - Σ_{i<m} h_im (Π_{j=i+1}^{m} h_{j,j-1}) p_i
    let one = f.one();
    let mut polys: Vec<Vec<u64>> = vec![vec![one]];
    for m in 0..n {
        let mut next = vec![0u64; m + 2];
        let pm = &polys[m];
        for (d, &c) in pm.iter().enumerate() {
            next[d + 1] = f.add(next[d + 1], c);
            next[d] = f.sub(next[d], f.mul(a[m * n + m], c));
        }
        let mut prod = one;
        for i in (0..m).rev() {
            prod = f.mul(prod, a[(i + 1) * n + i]);
            if prod == 0 {
                break;
            }
            let coef = f.mul(a[i * n + m], prod);
            if coef == 0 {
                continue;
            }
            for (d, &c) in polys[i].iter().enumerate() {
                next[d] = f.sub(next[d], f.mul(coef, c));
            }
        }
        polys.push(next);
    }
    polys.pop().unwrap()
}

/// Row-echelon rank profile: the rank r, the pivot rows and the pivot columns
/// (greedy left to right). The r×r submatrix on them is nonsingular mod p.
pub fn rank_profile_mod(f: &Field, a: &mut [u64], rows: usize, cols: usize) -> (Vec<usize>, Vec<usize>) {
    let mut used = vec![false; rows];
    let mut prow = Vec::new();
    let mut pcol = Vec::new();
    for c in 0..cols {
        let Some(r) = (0..rows).find(|&r| !used[r] && a[r * cols + c] != 0) else { continue };
        used[r] = true;
        prow.push(r);
        pcol.push(c);
        let inv = f.inv(a[r * cols + c]);
        let pivot: Vec<u64> = a[r * cols..(r + 1) * cols].to_vec();
        for i in 0..rows {
            if used[i] {
                continue;
            }
            let row = &mut a[i * cols..(i + 1) * cols];
            let u = f.mul(row[c], inv);
            if u == 0 {
                continue;
            }
            for j in c..cols {
                row[j] = f.sub(row[j], f.mul(u, pivot[j]));
            }
        }
    }
    (prow, pcol)
}

/// Eliminate with the given pivot sequence and report whether every entry
/// outside the pivot rows vanishes afterwards. None if a pivot is zero mod p.
pub fn schur_vanishes_mod(
    f: &Field,
    a: &mut [u64],
    rows: usize,
    cols: usize,
    prow: &[usize],
    pcol: &[usize],
) -> Option<bool> {
    let mut used = vec![false; rows];
    for (&r, &c) in prow.iter().zip(pcol) {
        let pv = a[r * cols + c];
        if pv == 0 {
            return None;
        }
        used[r] = true;
        let inv = f.inv(pv);
        let pivot: Vec<u64> = a[r * cols..(r + 1) * cols].to_vec();
        for i in 0..rows {
            if used[i] {
                continue;
            }
            let row = &mut a[i * cols..(i + 1) * cols];
            let u = f.mul(row[c], inv);
            if u == 0 {
                continue;
            }
            for j in 0..cols {
                row[j] = f.sub(row[j], f.mul(u, pivot[j]));
            }
        }
    }
    Some((0..rows).filter(|&i| !used[i]).all(|i| a[i * cols..(i + 1) * cols].iter().all(|&v| v == 0)))
}

/// Solve C X = W for r×r C and r×s W (both Montgomery, row-major).
/// Returns (X, det C), or None when C is singular mod p.
pub fn solve_mod(f: &Field, c: &[u64], w: &[u64], r: usize, s: usize) -> Option<(Vec<u64>, u64)> {
    let width = r + s;
    let mut m = vec![0u64; r * width];
    for i in 0..r {
        m[i * width..i * width + r].copy_from_slice(&c[i * r..(i + 1) * r]);
        m[i * width + r..(i + 1) * width].copy_from_slice(&w[i * s..(i + 1) * s]);
    }
    let mut det = f.one();
    for k in 0..r {
        let piv = (k..r).find(|&i| m[i * width + k] != 0)?;
        if piv != k {
            for j in 0..width {
                m.swap(piv * width + j, k * width + j);
            }
            det = f.neg(det);
        }
        let pv = m[k * width + k];
        det = f.mul(det, pv);
        let inv = f.inv(pv);
        for j in k..width {
            m[k * width + j] = f.mul(m[k * width + j], inv);
        }
        let pivot: Vec<u64> = m[k * width..(k + 1) * width].to_vec();
        for i in 0..r {
            if i == k {
                continue;
            }
            let u = m[i * width + k];
            if u == 0 {
                continue;
            }
            for j in k..width {
                m[i * width + j] = f.sub(m[i * width + j], f.mul(u, pivot[j]));
            }
        }
    }
    let mut x = vec![0u64; r * s];
    for i in 0..r {
        x[i * s..(i + 1) * s].copy_from_slice(&m[i * width + r..(i + 1) * width]);
    }
    Some((x, det))
}

/// Incremental Chinese remaindering of integer vectors with symmetric lift.
#[derive(Debug, Clone)]
pub struct Crt {
    modulus: BigUint,
    values: Vec<BigUint>,
}

impl Crt {
    pub fn new(len: usize) -> Self {
        Crt { modulus: BigUint::one(), values: vec![BigUint::zero(); len] }
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus.bits()
    }

    /// Fold in plain residues modulo p.
    pub fn add(&mut self, p: u64, residues: &[u64]) {
        let pb = BigUint::from(p);
        let m_mod_p = (&self.modulus % &pb).to_u64().unwrap();
        let inv = powmod_slow(m_mod_p, p - 2, p);
        for (v, &r) in self.values.iter_mut().zip(residues) {
            let vm = (&*v % &pb).to_u64().unwrap();
            let diff = (r + p - vm) % p;
            let t = mulmod_slow(diff, inv, p);
            *v += &self.modulus * BigUint::from(t);
        }
        self.modulus *= pb;
    }

    /// Values lifted to (-M/2, M/2].
    pub fn symmetric(&self) -> Vec<BigInt> {
        let half = &self.modulus >> 1;
        self.values
            .iter()
            .map(|v| if v > &half { BigInt::from(v.clone()) - BigInt::from(self.modulus.clone()) } else { BigInt::from(v.clone()) })
            .collect()
    }
}

/// log2 of the Euclidean norm of an integer vector, rounded up with slack.
pub fn log2_norm_upper(v: impl Iterator<Item = f64>) -> f64 {
    let s: f64 = v.map(|x| x * x).sum();
    if s == 0.0 {
        0.0
    } else {
        0.5 * s.log2() * (1.0 + 1e-12) + 1e-9
    }
}

/// |v| as f64 (saturating for huge values, only used in bounds).
pub fn abs_f64(v: &BigInt) -> f64 {
    v.abs().to_f64().unwrap_or(f64::MAX)
}
