//! Permutations of {1..m}, cycle structure, conjugacy keys, enumeration of S_m
//! and joint orbits of a pair of permutations.
//!
//! Points are 1-based in every public signature and in the text format
//! `"(1 2)(3 4)"` (identity `"e"`). Internally images are stored 0-based.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::combinat::factorial;

/// Largest degree `enumerate_sym` accepts without an explicit cap.
pub const DEFAULT_ENUMERATION_CAP: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PermError {
    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },
    #[error("images do not form a bijection of 1..{0}")]
    NotBijection(usize),
    #[error("enumeration of S_{m} exceeds the cap of degree {cap}")]
    CapExceeded { m: usize, cap: usize },
    #[error("cannot parse permutation {text:?}: {reason}")]
    Parse { text: String, reason: String },
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    pub fn identity(m: usize) -> Self {
        Permutation { images: (0..m).collect() }
    }

    /// From one-line notation with 1-based images.
    pub fn from_images(images: &[usize]) -> Result<Self, PermError> {
        let m = images.len();
        let mut seen = vec![false; m];
        let mut out = Vec::with_capacity(m);
        for &v in images {
            if v == 0 || v > m || seen[v - 1] {
                return Err(PermError::NotBijection(m));
            }
            seen[v - 1] = true;
            out.push(v - 1);
        }
        Ok(Permutation { images: out })
    }

    pub(crate) fn from_images0(images: Vec<usize>) -> Self {
        debug_assert!({
            let mut s = images.clone();
            s.sort_unstable();
            s.iter().enumerate().all(|(i, &v)| i == v)
        });
        Permutation { images }
    }

    /// Product of the given cycles (1-based points) in S_m.
    pub fn from_cycles(m: usize, cycles: &[&[usize]]) -> Result<Self, PermError> {
        let mut images: Vec<usize> = (0..m).collect();
        let mut used = vec![false; m];
        for cycle in cycles {
            for (i, &p) in cycle.iter().enumerate() {
                if p == 0 || p > m || used[p - 1] {
                    return Err(PermError::NotBijection(m));
                }
                used[p - 1] = true;
                images[p - 1] = cycle[(i + 1) % cycle.len()] - 1;
            }
        }
        Ok(Permutation { images })
    }

    /// Uniform random element of S_m.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let mut images: Vec<usize> = (0..m).collect();
        images.shuffle(rng);
        Permutation { images }
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    /// Image of the 1-based point `p`.
    pub fn image(&self, p: usize) -> usize {
        self.images[p - 1] + 1
    }

    pub(crate) fn image0(&self, i: usize) -> usize {
        self.images[i]
    }

    /// One-line notation, 1-based.
    pub fn one_line(&self) -> Vec<usize> {
        self.images.iter().map(|v| v + 1).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// `self ∘ h`, i.e. i ↦ self(h(i)).
    pub fn compose(&self, h: &Permutation) -> Result<Permutation, PermError> {
        check_degree(self, h)?;
        Ok(Permutation { images: h.images.iter().map(|&v| self.images[v]).collect() })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.images.len()];
        for (i, &v) in self.images.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { images: inv }
    }

    /// a g a^{-1}.
    pub fn conjugate_by(&self, a: &Permutation) -> Result<Permutation, PermError> {
        check_degree(self, a)?;
        let mut out = vec![0; self.images.len()];
        for (i, &v) in self.images.iter().enumerate() {
            out[a.images[i]] = a.images[v];
        }
        Ok(Permutation { images: out })
    }

    pub fn fixed_points(&self) -> BTreeSet<usize> {
        self.images
            .iter()
            .enumerate()
            .filter(|(i, v)| i == *v)
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// f(g) = c_1(g).
    pub fn fixed_point_count(&self) -> usize {
        self.images.iter().enumerate().filter(|(i, v)| i == *v).count()
    }

    /// All cycles including fixed points, each starting at its least point,
    /// ordered by that point.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let m = self.images.len();
        let mut seen = vec![false; m];
        let mut out = Vec::new();
        for start in 0..m {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                cycle.push(i + 1);
                i = self.images[i];
            }
            out.push(cycle);
        }
        out
    }

    /// Cycles of length at least two.
    pub fn nontrivial_cycles(&self) -> Vec<Vec<usize>> {
        self.cycles().into_iter().filter(|c| c.len() > 1).collect()
    }

    /// c(g), fixed points included.
    pub fn cycle_count(&self) -> usize {
        let m = self.images.len();
        let mut seen = vec![false; m];
        let mut count = 0;
        for start in 0..m {
            if !seen[start] {
                count += 1;
                let mut i = start;
                while !seen[i] {
                    seen[i] = true;
                    i = self.images[i];
                }
            }
        }
        count
    }

    pub fn cycle_type(&self) -> CycleType {
        let mut counts = vec![0; self.degree()];
        for c in self.cycles() {
            counts[c.len() - 1] += 1;
        }
        CycleType { counts }
    }

    /// Sort key of the graded order: number of moved points, then the
    /// nontrivial cycles compared lexicographically.
    pub fn graded_key(&self) -> (usize, Vec<Vec<usize>>) {
        let cycles = self.nontrivial_cycles();
        (cycles.iter().map(Vec::len).sum(), cycles)
    }

    /// Parse cycle notation over {1..m}: `"e"`, `"(1 2)(3 4)"`, `"(1,2)"`, or
    /// `"(12)"` when m ≤ 9.
    pub fn parse(text: &str, m: usize) -> Result<Permutation, PermError> {
        let err = |reason: &str| PermError::Parse { text: text.to_string(), reason: reason.to_string() };
        let t = text.trim();
        if t == "e" || t == "()" {
            return Ok(Permutation::identity(m));
        }
        let mut cycles: Vec<Vec<usize>> = Vec::new();
        let mut rest = t;
        while !rest.is_empty() {
            rest = rest.trim_start();
            if rest.is_empty() {
                break;
            }
            if !rest.starts_with('(') {
                return Err(err("expected '('"));
            }
            let close = rest.find(')').ok_or_else(|| err("unbalanced parenthesis"))?;
            let body = &rest[1..close];
            rest = &rest[close + 1..];
            let tokens: Vec<&str> = if body.contains(|c: char| c.is_whitespace() || c == ',') {
                body.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect()
            } else if m <= 9 {
                body.char_indices().map(|(i, c)| &body[i..i + c.len_utf8()]).collect()
            } else {
                vec![body]
            };
            let mut cycle = Vec::new();
            for tok in tokens {
                let p: usize = tok.parse().map_err(|_| err("non-numeric point"))?;
                if p == 0 || p > m {
                    return Err(err("point out of range"));
                }
                cycle.push(p);
            }
            if !cycle.is_empty() {
                cycles.push(cycle);
            }
        }
        let refs: Vec<&[usize]> = cycles.iter().map(|c| c.as_slice()).collect();
        Permutation::from_cycles(m, &refs).map_err(|_| err("repeated point"))
    }
}

fn check_degree(a: &Permutation, b: &Permutation) -> Result<(), PermError> {
    if a.degree() != b.degree() {
        return Err(PermError::DegreeMismatch { left: a.degree(), right: b.degree() });
    }
    Ok(())
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cycles = self.nontrivial_cycles();
        if cycles.is_empty() {
            return write!(f, "e");
        }
        for c in cycles {
            let body: Vec<String> = c.iter().map(|p| p.to_string()).collect();
            write!(f, "({})", body.join(" "))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Compare two permutations in the graded order used for the dual state list.
pub fn graded_cmp(a: &Permutation, b: &Permutation) -> Ordering {
    a.graded_key().cmp(&b.graded_key())
}

/// Cycle type as counts c_1..c_m.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CycleType {
    counts: Vec<usize>,
}

impl CycleType {
    pub fn from_partition(m: usize, parts: &[usize]) -> CycleType {
        let mut counts = vec![0; m];
        for &p in parts {
            counts[p - 1] += 1;
        }
        CycleType { counts }
    }

    pub fn degree(&self) -> usize {
        self.counts.iter().enumerate().map(|(j, c)| (j + 1) * c).sum()
    }

    /// c_j for j ≥ 1.
    pub fn count(&self, j: usize) -> usize {
        self.counts.get(j - 1).copied().unwrap_or(0)
    }

    pub fn cycle_count(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Cycle lengths in nonincreasing order.
    pub fn partition(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (j, &c) in self.counts.iter().enumerate().rev() {
            out.extend(std::iter::repeat_n(j + 1, c));
        }
        out
    }

    /// m! / prod_j j^{c_j} c_j!.
    pub fn class_size(&self) -> BigUint {
        let mut denom = BigUint::from(1u32);
        for (j, &c) in self.counts.iter().enumerate() {
            denom *= BigUint::from(j + 1).pow(c as u32) * factorial(c);
        }
        factorial(self.degree()) / denom
    }

    /// A representative with cycles on consecutive points.
    pub fn representative(&self) -> Permutation {
        let m = self.degree();
        let mut images = vec![0; m];
        let mut next = 0;
        for len in self.partition() {
            for i in 0..len {
                images[next + i] = next + (i + 1) % len;
            }
            next += len;
        }
        Permutation { images }
    }
}

impl fmt::Display for CycleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.partition().iter().map(|p| p.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Canonical key of the conjugacy class of g in S_m.
pub fn conjugacy_class_id(g: &Permutation) -> CycleType {
    g.cycle_type()
}

/// Integer partitions of m in reverse lexicographic order.
pub fn integer_partitions(m: usize) -> Vec<Vec<usize>> {
    fn rec(rem: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rem == 0 {
            out.push(cur.clone());
            return;
        }
        for p in (1..=rem.min(max)).rev() {
            cur.push(p);
            rec(rem - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, m, &mut Vec::new(), &mut out);
    out
}

/// All cycle types of S_m.
pub fn cycle_types(m: usize) -> Vec<CycleType> {
    integer_partitions(m).iter().map(|p| CycleType::from_partition(m, p)).collect()
}

/// Generators of S_m: the transposition (1 2) and the m-cycle.
pub fn sym_generators(m: usize) -> Vec<Permutation> {
    if m < 2 {
        return vec![Permutation::identity(m)];
    }
    let cycle: Vec<usize> = (1..=m).collect();
    let mut gens = vec![Permutation::from_cycles(m, &[&[1, 2]]).expect("valid transposition")];
    if m > 2 {
        gens.push(Permutation::from_cycles(m, &[&cycle]).expect("valid cycle"));
    }
    gens
}

/// Orbits of ⟨g, h⟩ on {1..n}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointOrbits {
    blocks: Vec<Vec<usize>>,
}

impl JointOrbits {
    /// Blocks with 1-based points, each sorted, ordered by least point.
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Components as sorted index lists ordered by least element.
    pub(crate) fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push(Vec::new());
            }
            out[slot[r]].push(i);
        }
        out
    }
}

pub fn joint_orbits(g: &Permutation, h: &Permutation) -> Result<JointOrbits, PermError> {
    check_degree(g, h)?;
    let n = g.degree();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        uf.union(i, g.images[i]);
        uf.union(i, h.images[i]);
    }
    let blocks = uf.components().into_iter().map(|b| b.into_iter().map(|i| i + 1).collect()).collect();
    Ok(JointOrbits { blocks })
}

/// Lexicographic enumeration of S_m by one-line form.
pub struct SymIter {
    next: Option<Vec<usize>>,
}

impl Iterator for SymIter {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        let cur = self.next.take()?;
        let mut a = cur.clone();
        // standard next-permutation step
        let m = a.len();
        if m > 1 {
            if let Some(i) = (0..m - 1).rev().find(|&i| a[i] < a[i + 1]) {
                let j = (i + 1..m).rev().find(|&j| a[j] > a[i]).expect("successor exists");
                a.swap(i, j);
                a[i + 1..].reverse();
                self.next = Some(a);
            }
        }
        Some(Permutation { images: cur })
    }
}

/// All of S_m in lexicographic one-line order; m must not exceed the default cap.
pub fn enumerate_sym(m: usize) -> Result<SymIter, PermError> {
    enumerate_sym_capped(m, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_sym_capped(m: usize, cap: usize) -> Result<SymIter, PermError> {
    if m > cap {
        return Err(PermError::CapExceeded { m, cap });
    }
    Ok(SymIter { next: Some((0..m).collect()) })
}
