//! Exact combinatorial primitives: Stirling numbers of the second kind, Bell
//! numbers, derangements, weak compositions and a few derived quantities.

use std::collections::BTreeMap;
use std::sync::{OnceLock, RwLock};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};

static STIRLING: OnceLock<RwLock<Vec<Vec<BigUint>>>> = OnceLock::new();
static FACTORIAL: OnceLock<RwLock<Vec<BigUint>>> = OnceLock::new();

fn stirling_rows(n: usize) -> Vec<BigUint> {
    let lock = STIRLING.get_or_init(|| RwLock::new(vec![vec![BigUint::one()]]));
    {
        let rows = lock.read().expect("stirling memo poisoned");
        if n < rows.len() {
            return rows[n].clone();
        }
    }
    let mut rows = lock.write().expect("stirling memo poisoned");
    while rows.len() <= n {
        let m = rows.len();
        let prev = &rows[m - 1];
        let mut row = vec![BigUint::zero(); m + 1];
        // S(m, r) = r S(m-1, r) + S(m-1, r-1)
        for r in 1..=m {
            let mut v = BigUint::zero();
            if r < prev.len() {
                v += &prev[r] * BigUint::from(r);
            }
            v += &prev[r - 1];
            row[r] = v;
        }
        rows.push(row);
    }
    rows[n].clone()
}

/// Stirling number of the second kind S(n, r).
pub fn stirling2(n: usize, r: usize) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    stirling_rows(n)[r].clone()
}

/// The row S(n, 0..=n).
pub fn stirling2_row(n: usize) -> Vec<BigUint> {
    stirling_rows(n)
}

/// Bell number B_n.
pub fn bell(n: usize) -> BigUint {
    stirling_rows(n).iter().sum()
}

/// n!
pub fn factorial(n: usize) -> BigUint {
    let lock = FACTORIAL.get_or_init(|| RwLock::new(vec![BigUint::one()]));
    {
        let table = lock.read().expect("factorial memo poisoned");
        if n < table.len() {
            return table[n].clone();
        }
    }
    let mut table = lock.write().expect("factorial memo poisoned");
    while table.len() <= n {
        let m = table.len();
        let next = &table[m - 1] * BigUint::from(m);
        table.push(next);
    }
    table[n].clone()
}

/// Binomial coefficient, zero when r > n.
pub fn binomial(n: usize, r: usize) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

/// Number of derangements !m, by !m = (m-1)(!(m-1) + !(m-2)).
pub fn subfactorial(m: usize) -> BigUint {
    let (mut a, mut b) = (BigUint::one(), BigUint::zero()); // !0, !1
    if m == 0 {
        return a;
    }
    for i in 2..=m {
        let next = BigUint::from(i - 1) * (&a + &b);
        a = b;
        b = next;
    }
    b
}

/// k (k+1) ... (k+n-1).
pub fn rising_factorial(k: usize, n: usize) -> BigUint {
    (0..n).fold(BigUint::one(), |acc, i| acc * BigUint::from(k + i))
}

/// 1/t! for t >= 0 and 0 for t < 0.
pub fn inv_factorial_or_zero(t: i64) -> BigRational {
    if t < 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::one(), factorial(t as usize).into())
    }
}

/// Exact rational from two naturals.
pub fn ratio(num: impl Into<BigUint>, den: impl Into<BigUint>) -> BigRational {
    BigRational::new(BigInt::from(num.into()), BigInt::from(den.into()))
}

/// Exact rational from a natural.
pub fn integer(v: impl Into<BigUint>) -> BigRational {
    BigRational::from_integer(BigInt::from(v.into()))
}

/// Weak compositions of `total` into `parts` nonnegative summands, in
/// lexicographic order.
#[derive(Debug, Clone)]
pub struct CompositionIter {
    current: Option<Vec<usize>>,
}

impl CompositionIter {
    pub fn new(total: usize, parts: usize) -> Self {
        let current = if parts == 0 {
            (total == 0).then(Vec::new)
        } else {
            let mut c = vec![0; parts];
            c[parts - 1] = total;
            Some(c)
        };
        CompositionIter { current }
    }
}

impl Iterator for CompositionIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let parts = out.len();
        if parts <= 1 {
            return Some(out);
        }
        let last = parts - 1;
        let mut c = out.clone();
        if c[last] > 0 {
            c[last - 1] += 1;
            c[last] -= 1;
            self.current = Some(c);
        } else if let Some(q) = (0..last).rev().find(|&i| c[i] > 0) {
            if q > 0 {
                let carried = c[q] - 1;
                c[q - 1] += 1;
                c[q] = 0;
                c[last] = carried;
                self.current = Some(c);
            }
        }
        Some(out)
    }
}

/// kappa_p(s) = sum over weak compositions u of s into p parts of prod 1/(u_i!)^2.
pub fn kappa(p: usize, s: usize) -> BigRational {
    // coefficient of z^s in (sum_u z^u/(u!)^2)^p
    let term: Vec<BigRational> = (0..=s)
        .map(|u| {
            let f = BigInt::from(factorial(u));
            BigRational::new(BigInt::one(), &f * &f)
        })
        .collect();
    let mut acc = vec![BigRational::zero(); s + 1];
    acc[0] = BigRational::one();
    for _ in 0..p {
        let mut next = vec![BigRational::zero(); s + 1];
        for (i, a) in acc.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (u, t) in term.iter().enumerate().take(s + 1 - i) {
                next[i + u] += a * t;
            }
        }
        acc = next;
    }
    acc.swap_remove(s)
}

/// Law of the number of distinct symbols in a uniform word of [j]^n:
/// P(R = r) = C(j, r) S(n, r) r! / j^n.
pub fn occupancy_pmf(j: usize, n: usize) -> BTreeMap<usize, BigRational> {
    let denom = BigUint::from(j).pow(n as u32);
    let row = stirling_rows(n);
    (1..=j.min(n))
        .filter(|&r| !row[r].is_zero())
        .map(|r| {
            let num = binomial(j, r) * &row[r] * factorial(r);
            (r, ratio(num, denom.clone()))
        })
        .collect()
}
