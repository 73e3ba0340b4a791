//! Exact distribution evolution, total variation profiles, mixing times,
//! the bound-curve suite, and strong lumping.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actions::{components, Model};
use crate::kernels::{check_detailed_balance, ChainBundle, KernelError};
use crate::matrix::{format_rational, Distribution, MatrixError, RationalMatrix, StochasticMatrix};

pub const DEFAULT_T_MAX: usize = 60;
/// Longest scan when a mixing time lies beyond the computed horizon.
pub const MIXING_SCAN_CAP: usize = 100_000;
/// Largest dual state space for which Q² is formed in the suite.
pub const TWO_STEP_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("not strongly lumpable: {0}")]
    NotLumpable(LumpFailure),
    #[error("epsilon must lie strictly between 0 and 1")]
    Epsilon,
    #[error("distance stays above epsilon for {0} steps")]
    NoMixing(usize),
    #[error("minorization fails at ({row}, {col})")]
    Minorization { row: String, col: String },
    #[error("kernel is not invariant under the supplied symmetry")]
    Symmetry,
    #[error("orbit partition unavailable for this bundle")]
    NoOrbits,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

/// μ P^t by repeated vector-matrix products.
pub fn evolve(p: &RationalMatrix, mu: &Distribution, t: usize) -> Result<Distribution, DynamicsError> {
    if !p.is_square() || p.rows() != mu.len() {
        return Err(DynamicsError::Dimension(format!("{}x{} kernel, {} masses", p.rows(), p.cols(), mu.len())));
    }
    let mut v = mu.masses().to_vec();
    for _ in 0..t {
        v = p.left_mul(&v)?;
    }
    Ok(Distribution::new(v)?)
}

/// Half the L1 distance.
pub fn tv(mu: &Distribution, nu: &Distribution) -> Result<BigRational, DynamicsError> {
    if mu.len() != nu.len() {
        return Err(DynamicsError::Dimension(format!("{} vs {} masses", mu.len(), nu.len())));
    }
    let s: BigRational = mu.masses().iter().zip(nu.masses()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / BigRational::from_integer(2.into()))
}

/// A finite group acting on the state indices, as a list of permutations
/// with a generating subset. The kernel and π must be invariant under it.
#[derive(Debug, Clone, Copy)]
pub struct StateSymmetry<'a> {
    pub elements: &'a [Vec<usize>],
    pub generators: &'a [usize],
}

struct Scaled {
    n: usize,
    d: BigInt,
    entries: Vec<BigInt>,
    e: BigInt,
    w: Vec<BigInt>,
}

impl Scaled {
    fn new(p: &RationalMatrix, pi: &Distribution) -> Self {
        let (d, entries) = p.to_scaled_integers();
        let e = pi.masses().iter().fold(BigInt::one(), |acc, m| acc.lcm(m.denom()));
        let w = pi.masses().iter().map(|m| m.numer() * (&e / m.denom())).collect();
        Scaled { n: p.rows(), d, entries, e, w }
    }

    fn invariant(&self, perm: &[usize]) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            self.w[perm[i]] == self.w[i]
                && (0..n).all(|j| self.entries[perm[i] * n + perm[j]] == self.entries[i * n + j])
        })
    }
}

/// Evolution from one start, reduced to the orbits of the start's stabilizer
/// in the symmetry group; the law stays constant on those orbits.
#[derive(Debug, Clone)]
struct Engine {
    sizes: Vec<BigInt>,
    reduced: Vec<BigInt>,
    pi_num: Vec<BigInt>,
    v: Vec<BigInt>,
    dpow: BigInt,
}

impl Engine {
    fn new(s: &Scaled, orbits: Vec<Vec<usize>>, start: usize) -> Self {
        let m = orbits.len();
        let reps: Vec<usize> = orbits.iter().map(|o| o[0]).collect();
        let mut reduced = vec![BigInt::zero(); m * m];
        for (o, members) in orbits.iter().enumerate() {
            for (o2, &y) in reps.iter().enumerate() {
                let mut acc = BigInt::zero();
                for &z in members {
                    acc += &s.entries[z * s.n + y];
                }
                reduced[o * m + o2] = acc;
            }
        }
        let mut v = vec![BigInt::zero(); m];
        let so = orbits.iter().position(|o| o.contains(&start)).expect("start lies in some orbit");
        v[so] = BigInt::one();
        Engine {
            sizes: orbits.iter().map(|o| BigInt::from(o.len())).collect(),
            reduced,
            pi_num: reps.iter().map(|&r| s.w[r].clone()).collect(),
            v,
            dpow: BigInt::one(),
        }
    }

    fn tv(&self, e: &BigInt) -> BigRational {
        let mut num = BigInt::zero();
        for ((v, w), size) in self.v.iter().zip(&self.pi_num).zip(&self.sizes) {
            num += size * (v * e - w * &self.dpow).abs();
        }
        BigRational::new(num, BigInt::from(2) * e * &self.dpow)
    }

    fn step(&mut self, d: &BigInt) {
        let m = self.v.len();
        let mut next = vec![BigInt::zero(); m];
        for (o, v) in self.v.iter().enumerate() {
            if v.is_zero() {
                continue;
            }
            let row = &self.reduced[o * m..(o + 1) * m];
            for (acc, r) in next.iter_mut().zip(row) {
                if !r.is_zero() {
                    *acc += v * r;
                }
            }
        }
        self.v = next;
        self.dpow *= d;
    }
}

/// Exact d_P(x, t) for every start x and the worst case d_P(t). Starts in the
/// same symmetry orbit share a curve, so only one representative is evolved.
#[derive(Debug, Clone)]
pub struct DProfile {
    starts: Vec<usize>,
    rep_of: Vec<usize>,
    curves: Vec<Vec<BigRational>>,
    worst: Vec<BigRational>,
    engines: Vec<Engine>,
    d: BigInt,
    e: BigInt,
}

/// Exact TV profile for t = 0..=t_max from every start.
pub fn d_profile(p: &RationalMatrix, pi: &Distribution, t_max: usize) -> Result<DProfile, DynamicsError> {
    DProfile::compute(p, pi, None, t_max)
}

impl DProfile {
    pub fn compute(
        p: &RationalMatrix,
        pi: &Distribution,
        symmetry: Option<StateSymmetry<'_>>,
        t_max: usize,
    ) -> Result<Self, DynamicsError> {
        if !p.is_square() || p.rows() != pi.len() {
            return Err(DynamicsError::Dimension(format!("{}x{} kernel, {} masses", p.rows(), p.cols(), pi.len())));
        }
        let n = p.rows();
        let s = Scaled::new(p, pi);
        let singletons = || (0..n).map(|i| vec![i]).collect::<Vec<_>>();
        if let Some(sym) = symmetry {
            if sym.elements.iter().any(|a| a.len() != n) {
                return Err(DynamicsError::Dimension("symmetry permutation length".into()));
            }
            if !sym.generators.iter().all(|&g| s.invariant(&sym.elements[g])) {
                return Err(DynamicsError::Symmetry);
            }
        }
        let start_orbits = match symmetry {
            Some(sym) => components(n, sym.elements),
            None => singletons(),
        };
        let stabilizer_orbits = |x: usize| match symmetry {
            Some(sym) => {
                let stab: Vec<Vec<usize>> = sym.elements.iter().filter(|a| a[x] == x).cloned().collect();
                let mut orbits = components(n, &stab);
                for o in orbits.iter_mut() {
                    o.sort_unstable();
                }
                orbits
            }
            None => singletons(),
        };
        let mut starts = Vec::with_capacity(start_orbits.len());
        let mut rep_of = vec![0; n];
        for (i, orbit) in start_orbits.iter().enumerate() {
            let rep = *orbit.iter().min().expect("orbits are nonempty");
            starts.push(rep);
            for &x in orbit {
                rep_of[x] = i;
            }
        }
        let engines: Vec<Engine> = starts.iter().map(|&x| Engine::new(&s, stabilizer_orbits(x), x)).collect();
        let mut profile = DProfile {
            curves: engines.iter().map(|e| vec![e.tv(&s.e)]).collect(),
            worst: Vec::new(),
            starts,
            rep_of,
            engines,
            d: s.d,
            e: s.e,
        };
        profile.refresh_worst();
        profile.extend_to(t_max);
        Ok(profile)
    }

    fn refresh_worst(&mut self) {
        let len = self.curves.first().map_or(0, Vec::len);
        for t in self.worst.len()..len {
            let m = self.curves.iter().map(|c| &c[t]).max().cloned().unwrap_or_else(BigRational::zero);
            self.worst.push(m);
        }
    }

    /// Compute further until the horizon reaches `t_max`.
    pub fn extend_to(&mut self, t_max: usize) {
        while self.horizon() < t_max {
            for (engine, curve) in self.engines.iter_mut().zip(self.curves.iter_mut()) {
                engine.step(&self.d);
                curve.push(engine.tv(&self.e));
            }
            self.refresh_worst();
        }
    }

    pub fn horizon(&self) -> usize {
        self.worst.len() - 1
    }

    pub fn worst(&self) -> &[BigRational] {
        &self.worst
    }

    /// Representatives of the start classes.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn curve(&self, x: usize) -> &[BigRational] {
        &self.curves[self.rep_of[x]]
    }

    pub fn at(&self, x: usize, t: usize) -> &BigRational {
        &self.curves[self.rep_of[x]][t]
    }

    /// d_P(t+1) ≤ d_P(t) over the computed horizon.
    pub fn monotone(&self) -> bool {
        self.worst.windows(2).all(|w| w[1] <= w[0])
    }

    /// Least t within the horizon with d_P(t) ≤ ε.
    pub fn mixing_time(&self, eps: &BigRational) -> Option<usize> {
        self.worst.iter().position(|d| d <= eps)
    }

    /// Least t with d_P(t) ≤ ε, evolving past the horizon when needed.
    pub fn mixing_time_extending(&mut self, eps: &BigRational) -> Result<usize, DynamicsError> {
        check_eps(eps)?;
        loop {
            if let Some(t) = self.mixing_time(eps) {
                return Ok(t);
            }
            if self.horizon() >= MIXING_SCAN_CAP {
                return Err(DynamicsError::NoMixing(MIXING_SCAN_CAP));
            }
            self.extend_to(self.horizon() + 1);
        }
    }

    /// Least t with d_P(x, t) ≤ ε for one start.
    pub fn start_mixing_time(&mut self, x: usize, eps: &BigRational) -> Result<usize, DynamicsError> {
        check_eps(eps)?;
        loop {
            if let Some(t) = self.curve(x).iter().position(|d| d <= eps) {
                return Ok(t);
            }
            if self.horizon() >= MIXING_SCAN_CAP {
                return Err(DynamicsError::NoMixing(MIXING_SCAN_CAP));
            }
            self.extend_to(self.horizon() + 1);
        }
    }
}

fn check_eps(eps: &BigRational) -> Result<(), DynamicsError> {
    if eps.is_positive() && eps < &BigRational::one() {
        Ok(())
    } else {
        Err(DynamicsError::Epsilon)
    }
}

/// Least t with d_P(t) ≤ ε (exact comparison).
pub fn mixing_time(p: &RationalMatrix, pi: &Distribution, eps: &BigRational) -> Result<usize, DynamicsError> {
    check_eps(eps)?;
    d_profile(p, pi, 0)?.mixing_time_extending(eps)
}

/// Profile of K using the group action on X as symmetry.
pub fn primal_profile(bundle: &ChainBundle, t_max: usize) -> Result<DProfile, DynamicsError> {
    let sym = bundle.table.symmetry.as_ref().map(|s| StateSymmetry { elements: &s.state_perms, generators: &s.generators });
    DProfile::compute(&bundle.k, &bundle.pi_k, sym, t_max)
}

/// Profile of Q using conjugation on G* as symmetry.
pub fn dual_profile(bundle: &ChainBundle, t_max: usize) -> Result<DProfile, DynamicsError> {
    let sym = bundle.table.symmetry.as_ref().map(|s| StateSymmetry { elements: &s.dual_perms, generators: &s.generators });
    DProfile::compute(&bundle.q, &bundle.pi_q, sym, t_max)
}

/// Labeled blocks covering a state set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePartition {
    labels: Vec<String>,
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl StatePartition {
    pub fn new(labels: Vec<String>, blocks: Vec<Vec<usize>>, state_len: usize) -> Result<Self, DynamicsError> {
        if labels.len() != blocks.len() {
            return Err(DynamicsError::Partition("one label per block is required".into()));
        }
        let mut block_of = vec![usize::MAX; state_len];
        for (b, members) in blocks.iter().enumerate() {
            if members.is_empty() {
                return Err(DynamicsError::Partition(format!("block {} is empty", labels[b])));
            }
            for &x in members {
                if x >= state_len || block_of[x] != usize::MAX {
                    return Err(DynamicsError::Partition(format!("state {x} is out of range or repeated")));
                }
                block_of[x] = b;
            }
        }
        if block_of.contains(&usize::MAX) {
            return Err(DynamicsError::Partition("blocks do not cover the states".into()));
        }
        Ok(StatePartition { labels, blocks, block_of })
    }

    /// Blocks of equal keys, in order of first appearance.
    pub fn from_keys<K: Eq + Hash + fmt::Display>(keys: &[K]) -> Self {
        let mut index: HashMap<&K, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let block_of = keys
            .iter()
            .enumerate()
            .map(|(x, key)| {
                let b = *index.entry(key).or_insert_with(|| {
                    labels.push(key.to_string());
                    blocks.push(Vec::new());
                    blocks.len() - 1
                });
                blocks[b].push(x);
                b
            })
            .collect();
        StatePartition { labels, blocks, block_of }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, x: usize) -> usize {
        self.block_of[x]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn state_len(&self) -> usize {
        self.block_of.len()
    }

    /// Pushforward of a distribution.
    pub fn push(&self, mu: &Distribution) -> Result<Distribution, DynamicsError> {
        let masses = self.blocks.iter().map(|b| b.iter().map(|&x| mu.get(x).clone()).sum()).collect();
        Ok(Distribution::new(masses)?)
    }
}

/// Partition of G* by |X_g|.
pub fn fixed_set_size_partition(bundle: &ChainBundle) -> StatePartition {
    let keys: Vec<String> = bundle.table.fixed.iter().map(|f| format!("|X_g|={}", f.len())).collect();
    StatePartition::from_keys(&keys)
}

/// Partition of G* by the number of cycles.
pub fn cycle_count_partition(bundle: &ChainBundle) -> StatePartition {
    let keys: Vec<String> = bundle.table.dual_elements.iter().map(|g| format!("c={}", g.cycle_count())).collect();
    StatePartition::from_keys(&keys)
}

/// Partition of G* into conjugacy classes.
pub fn conjugacy_partition(bundle: &ChainBundle) -> StatePartition {
    StatePartition::from_keys(&bundle.table.dual_class_labels)
}

/// Partition of X into G-orbits.
pub fn orbit_partition(bundle: &ChainBundle) -> Result<StatePartition, DynamicsError> {
    let nx = bundle.table.state_len();
    if let Some(orbits) = bundle.table.state_orbits() {
        let mut orbits: Vec<Vec<usize>> = orbits.into_iter().map(|mut o| { o.sort_unstable(); o }).collect();
        orbits.sort();
        let labels = orbits.iter().map(|o| format!("O[{}]", bundle.table.state_labels[o[0]])).collect();
        return StatePartition::new(labels, orbits, nx);
    }
    let spec = bundle.spec.as_ref().ok_or(DynamicsError::NoOrbits)?;
    let keys = (0..nx)
        .map(|x| spec.orbit_key(&spec.word_at(x)).map(|k| format!("{k:?}")))
        .collect::<Result<Vec<_>, _>>()
        .map_err(KernelError::from)?;
    let base = StatePartition::from_keys(&keys);
    let labels = base.blocks.iter().map(|o| format!("O[{}]", bundle.table.state_labels[o[0]])).collect();
    StatePartition::new(labels, base.blocks, nx)
}

/// Two states of one source block whose mass into a target block differs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumpViolation {
    pub source_block: String,
    pub target_block: String,
    pub low: (usize, BigRational),
    pub high: (usize, BigRational),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumpFailure {
    pub violations: Vec<LumpViolation>,
    /// State labels of the witnesses in `violations`.
    pub witness_labels: Vec<(String, String)>,
}

impl fmt::Display for LumpFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.violations.first(), self.witness_labels.first()) {
            (Some(v), Some((a, b))) => write!(
                f,
                "block {} into {}: {} gives {} but {} gives {} ({} violations)",
                v.source_block,
                v.target_block,
                a,
                format_rational(&v.low.1),
                b,
                format_rational(&v.high.1),
                self.violations.len()
            ),
            _ => write!(f, "no violations recorded"),
        }
    }
}

/// Every (source, target) pair on which block sums are not constant; the
/// witnesses are the states with the smallest and largest sum.
pub fn lump_violations(p: &RationalMatrix, partition: &StatePartition) -> Result<Vec<LumpViolation>, DynamicsError> {
    if !p.is_square() || p.rows() != partition.state_len() {
        return Err(DynamicsError::Dimension("kernel and partition".into()));
    }
    let nb = partition.len();
    let sums: Vec<Vec<BigRational>> = (0..p.rows())
        .map(|x| {
            let mut s = vec![BigRational::zero(); nb];
            for (y, v) in p.row(x).iter().enumerate() {
                if !v.is_zero() {
                    s[partition.block_of(y)] += v;
                }
            }
            s
        })
        .collect();
    let mut out = Vec::new();
    for (sb, members) in partition.blocks().iter().enumerate() {
        for tb in 0..nb {
            let mut low = members[0];
            let mut high = members[0];
            for &x in members {
                if sums[x][tb] < sums[low][tb] {
                    low = x;
                }
                if sums[x][tb] > sums[high][tb] {
                    high = x;
                }
            }
            if sums[low][tb] != sums[high][tb] {
                out.push(LumpViolation {
                    source_block: partition.labels()[sb].clone(),
                    target_block: partition.labels()[tb].clone(),
                    low: (low, sums[low][tb].clone()),
                    high: (high, sums[high][tb].clone()),
                });
            }
        }
    }
    Ok(out)
}

/// A strongly lumped chain with the pushforward law.
#[derive(Debug, Clone)]
pub struct LumpedChain {
    pub partition: StatePartition,
    pub kernel: StochasticMatrix,
    pub pi: Distribution,
    pub reversible: bool,
    pub irreducible: bool,
}

impl LumpedChain {
    pub fn profile(&self, t_max: usize) -> Result<DProfile, DynamicsError> {
        d_profile(&self.kernel, &self.pi, t_max)
    }
}

/// Every state reaches every other through positive entries.
pub fn is_irreducible(p: &RationalMatrix) -> bool {
    let n = p.rows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, s) in seen.iter_mut().enumerate() {
                let v = if forward { p.get(i, j) } else { p.get(j, i) };
                if !*s && !v.is_zero() {
                    *s = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n == 0 || (reach(true) && reach(false))
}

/// Strong lumping with exact block-sum checks.
pub fn lump(p: &RationalMatrix, pi: &Distribution, partition: &StatePartition) -> Result<LumpedChain, DynamicsError> {
    if pi.len() != partition.state_len() {
        return Err(DynamicsError::Dimension("distribution and partition".into()));
    }
    let violations = lump_violations(p, partition)?;
    if !violations.is_empty() {
        let witness_labels = Vec::new();
        return Err(DynamicsError::NotLumpable(LumpFailure { violations, witness_labels }));
    }
    let nb = partition.len();
    let mut m = RationalMatrix::zeros(nb, nb);
    for (b, members) in partition.blocks().iter().enumerate() {
        for (y, v) in p.row(members[0]).iter().enumerate() {
            if !v.is_zero() {
                let c = partition.block_of(y);
                let cur = m.get(b, c) + v;
                m.set(b, c, cur);
            }
        }
    }
    let pi_bar = partition.push(pi)?;
    let reversible = check_detailed_balance(&m, &pi_bar)?;
    let irreducible = is_irreducible(&m);
    Ok(LumpedChain { partition: partition.clone(), kernel: StochasticMatrix::new(m)?, pi: pi_bar, reversible, irreducible })
}

/// `lump` with witness labels filled in from the given state labels.
pub fn lump_labeled(
    p: &RationalMatrix,
    pi: &Distribution,
    partition: &StatePartition,
    labels: &[String],
) -> Result<LumpedChain, DynamicsError> {
    lump(p, pi, partition).map_err(|e| match e {
        DynamicsError::NotLumpable(mut f) => {
            f.witness_labels = f.violations.iter().map(|v| (labels[v.low.0].clone(), labels[v.high.0].clone())).collect();
            DynamicsError::NotLumpable(f)
        }
        other => other,
    })
}

/// Q lumped by conjugacy classes, checked against the class-aggregation
/// formula and the class law |C||X_g|/(|G| z).
#[derive(Debug, Clone)]
pub struct ConjugacyLump {
    pub chain: LumpedChain,
    pub formula_matches: bool,
    pub pi_formula_matches: bool,
}

pub fn conjugacy_lump_q(bundle: &ChainBundle) -> Result<ConjugacyLump, DynamicsError> {
    let partition = conjugacy_partition(bundle);
    let chain = lump_labeled(&bundle.q, &bundle.pi_q, &partition, &bundle.table.dual_labels)?;
    let table = &bundle.table;
    let nb = partition.len();
    let mut formula_matches = true;
    for (c, members) in partition.blocks().iter().enumerate() {
        let g = members[0];
        let xg = &table.fixed[g];
        let mut row = vec![BigRational::zero(); nb];
        for &u in xg {
            let gu = &table.stabilizers[u];
            let mut counts = vec![0i64; nb];
            for &h in gu {
                counts[partition.block_of(h)] += 1;
            }
            for (r, &cnt) in row.iter_mut().zip(&counts) {
                *r += rat(cnt, gu.len() as i64);
            }
        }
        for (c2, r) in row.into_iter().enumerate() {
            if r / BigRational::from_integer(xg.len().into()) != *chain.kernel.get(c, c2) {
                formula_matches = false;
            }
        }
    }
    let z = bundle.orbit_count() as i64;
    let pi_formula_matches = partition.blocks().iter().enumerate().all(|(c, members)| {
        let expected = rat((members.len() * table.fixed[members[0]].len()) as i64, table.group_order as i64 * z);
        chain.pi.get(c) == &expected
    });
    Ok(ConjugacyLump { chain, formula_matches, pi_formula_matches })
}

/// K lumped by G-orbits, checked against the orbit-aggregation formula.
#[derive(Debug, Clone)]
pub struct OrbitLump {
    pub chain: LumpedChain,
    pub formula_matches: bool,
    pub symmetric: bool,
    pub uniform_pi: bool,
}

pub fn orbit_lump_k(bundle: &ChainBundle) -> Result<OrbitLump, DynamicsError> {
    let partition = orbit_partition(bundle)?;
    let chain = lump_labeled(&bundle.k, &bundle.pi_k, &partition, &bundle.table.state_labels)?;
    let table = &bundle.table;
    let nb = partition.len();
    let mut formula_matches = true;
    for (o, members) in partition.blocks().iter().enumerate() {
        let x = members[0];
        let gx = &table.stabilizers[x];
        let mut row = vec![BigRational::zero(); nb];
        for &h in gx {
            let xh = &table.fixed[h];
            let mut counts = vec![0i64; nb];
            for &y in xh {
                counts[partition.block_of(y)] += 1;
            }
            for (r, &cnt) in row.iter_mut().zip(&counts) {
                *r += rat(cnt, xh.len() as i64);
            }
        }
        for (o2, r) in row.into_iter().enumerate() {
            if r / BigRational::from_integer(gx.len().into()) != *chain.kernel.get(o, o2) {
                formula_matches = false;
            }
        }
    }
    let k = chain.kernel.matrix();
    let symmetric = (0..nb).all(|i| (0..nb).all(|j| k.get(i, j) == k.get(j, i)));
    let uniform = rat(1, nb as i64);
    let uniform_pi = chain.pi.masses().iter().all(|m| m == &uniform);
    Ok(OrbitLump { chain, formula_matches, symmetric, uniform_pi })
}

/// One time step of a fine-versus-lumped TV comparison.
#[derive(Debug, Clone)]
pub struct TvPreservationRow {
    pub t: usize,
    pub fine: BigRational,
    pub lumped: BigRational,
    pub equal: bool,
    /// μ_t − π keeps a constant sign on every block.
    pub sign_condition: bool,
}

pub fn tv_preservation_check(
    p: &RationalMatrix,
    pi: &Distribution,
    partition: &StatePartition,
    start: usize,
    t_max: usize,
) -> Result<Vec<TvPreservationRow>, DynamicsError> {
    let lumped = lump(p, pi, partition)?;
    let mut fine = Distribution::point_mass(p.rows(), start);
    let mut coarse = Distribution::point_mass(partition.len(), partition.block_of(start));
    let mut rows = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            fine = evolve(p, &fine, 1)?;
            coarse = evolve(&lumped.kernel, &coarse, 1)?;
        }
        let a = tv(&fine, pi)?;
        let b = tv(&coarse, &lumped.pi)?;
        let sign_condition = partition.blocks().iter().all(|block| {
            let diffs: Vec<BigRational> = block.iter().map(|&x| fine.get(x) - pi.get(x)).collect();
            diffs.iter().all(|d| !d.is_negative()) || diffs.iter().all(|d| !d.is_positive())
        });
        rows.push(TvPreservationRow { t, equal: a == b, fine: a, lumped: b, sign_condition });
    }
    Ok(rows)
}

/// Which TV curve a bound refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    PrimalWorst,
    DualWorst,
    PrimalStart(usize),
    DualStart(usize),
    /// K lumped by orbits.
    PrimalLumped,
    /// Q lumped by conjugacy classes.
    DualLumped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
pub enum CurveForm {
    /// coefficient · ratio^{⌊(t − shift)/period⌋}
    Geometric { coefficient: BigRational, ratio: BigRational, shift: usize, period: usize },
    /// Another observed curve, `lag` steps earlier.
    Lagged { source: Target, lag: usize },
    /// max over x ∈ X_g of d_K(x, t − 1).
    PointwiseTransfer { g: usize },
}

/// A named inequality between a TV curve and a bound, valid for t ≥ t_min.
#[derive(Debug, Clone)]
pub struct BoundCurve {
    pub name: String,
    pub target: Target,
    pub direction: Direction,
    pub form: CurveForm,
    pub t_min: usize,
}

impl BoundCurve {
    fn geometric(name: &str, target: Target, direction: Direction, coefficient: BigRational, ratio: BigRational, shift: usize, period: usize) -> Self {
        BoundCurve {
            name: name.to_string(),
            target,
            direction,
            form: CurveForm::Geometric { coefficient, ratio, shift, period },
            t_min: shift,
        }
    }

    pub fn value(&self, t: usize, profiles: &BundleProfiles, bundle: &ChainBundle) -> Option<BigRational> {
        if t < self.t_min {
            return None;
        }
        match &self.form {
            CurveForm::Geometric { coefficient, ratio, shift, period } => {
                let e = (t - shift) / period;
                Some(coefficient * pow(ratio, e))
            }
            CurveForm::Lagged { source, lag } => profiles.observed(source, t.checked_sub(*lag)?),
            CurveForm::PointwiseTransfer { g } => {
                bundle.table.fixed[*g].iter().map(|&x| profiles.k.at(x, t - 1).clone()).max()
            }
        }
    }
}

fn pow(r: &BigRational, e: usize) -> BigRational {
    BigRational::new(r.numer().pow(e as u32), r.denom().pow(e as u32))
}

/// Exact profiles of K, Q and their lumped chains for one bundle.
#[derive(Debug, Clone)]
pub struct BundleProfiles {
    pub t_max: usize,
    pub k: DProfile,
    pub q: DProfile,
    pub k_lumped: Option<DProfile>,
    pub q_lumped: Option<DProfile>,
    pub orbit_lump: Option<OrbitLump>,
    pub conjugacy_lump: Option<ConjugacyLump>,
}

impl BundleProfiles {
    pub fn compute(bundle: &ChainBundle, t_max: usize) -> Result<Self, DynamicsError> {
        let k = primal_profile(bundle, t_max)?;
        let q = dual_profile(bundle, t_max)?;
        let orbit_lump = orbit_lump_k(bundle).ok();
        let conjugacy_lump = conjugacy_lump_q(bundle).ok();
        let k_lumped = orbit_lump.as_ref().map(|l| l.chain.profile(t_max)).transpose()?;
        let q_lumped = conjugacy_lump.as_ref().map(|l| l.chain.profile(t_max)).transpose()?;
        Ok(BundleProfiles { t_max, k, q, k_lumped, q_lumped, orbit_lump, conjugacy_lump })
    }

    pub fn observed(&self, target: &Target, t: usize) -> Option<BigRational> {
        match target {
            Target::PrimalWorst => self.k.worst().get(t).cloned(),
            Target::DualWorst => self.q.worst().get(t).cloned(),
            Target::PrimalStart(x) => self.k.curve(*x).get(t).cloned(),
            Target::DualStart(g) => self.q.curve(*g).get(t).cloned(),
            Target::PrimalLumped => self.k_lumped.as_ref()?.worst().get(t).cloned(),
            Target::DualLumped => self.q_lumped.as_ref()?.worst().get(t).cloned(),
        }
    }

    fn fine_and_lumped(&self, target: &Target, t: usize) -> (Option<BigRational>, Option<BigRational>) {
        let primal = matches!(target, Target::PrimalWorst | Target::PrimalStart(_) | Target::PrimalLumped);
        let fine = match target {
            Target::PrimalLumped => self.observed(&Target::PrimalWorst, t),
            Target::DualLumped => self.observed(&Target::DualWorst, t),
            other => self.observed(other, t),
        };
        let lumped = self.observed(if primal { &Target::PrimalLumped } else { &Target::DualLumped }, t);
        (fine, lumped)
    }
}

#[derive(Debug, Clone)]
pub struct BoundRow {
    pub t: usize,
    pub observed: BigRational,
    pub bound: BigRational,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub curve: BoundCurve,
    pub rows: Vec<BoundRow>,
    pub verified: bool,
}

#[derive(Debug, Clone)]
pub struct SkippedBound {
    pub name: String,
    pub reason: String,
}

/// An integer mixing-time inequality at one ε.
#[derive(Debug, Clone)]
pub struct MixingBound {
    pub name: String,
    pub observed: usize,
    pub bound: i64,
    pub direction: Direction,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct MixingReport {
    pub eps: BigRational,
    pub t_k: usize,
    pub t_q: usize,
    /// |t_mix(Q) − t_mix(K)| ≤ 1.
    pub equivalent: bool,
    pub bounds: Vec<MixingBound>,
}

#[derive(Debug, Clone)]
pub struct BoundSuite {
    pub t_max: usize,
    pub profiles: BundleProfiles,
    pub checks: Vec<BoundCheck>,
    pub skipped: Vec<SkippedBound>,
    pub mixing: Vec<MixingReport>,
    pub monotone: bool,
}

/// ε values used when none are given.
pub fn default_epsilons() -> Vec<BigRational> {
    vec![rat(1, 4), rat(1, 10), rat(1, 100)]
}

/// ⌈log_4(1/ε)⌉, exactly.
fn ceil_log4_inv(eps: &BigRational) -> i64 {
    let target = BigRational::one() / eps;
    let mut m = 0;
    let mut p = BigRational::one();
    while p < target {
        p *= BigRational::from_integer(4.into());
        m += 1;
    }
    m
}

fn ceil_f(x: f64) -> i64 {
    x.ceil() as i64
}

fn check_curve(curve: BoundCurve, profiles: &BundleProfiles, bundle: &ChainBundle) -> BoundCheck {
    let mut rows = Vec::new();
    for t in 0..=profiles.t_max {
        let (Some(bound), Some(observed)) = (curve.value(t, profiles, bundle), profiles.observed(&curve.target, t)) else {
            continue;
        };
        let ok = match curve.direction {
            Direction::Upper => observed <= bound,
            Direction::Lower => observed >= bound,
        };
        rows.push(BoundRow { t, observed, bound, ok });
    }
    let verified = rows.iter().all(|r| r.ok);
    BoundCheck { curve, rows, verified }
}

/// Index of the first n-cycle in G*.
fn n_cycle(bundle: &ChainBundle) -> Option<usize> {
    bundle.table.dual_elements.iter().position(|g| g.degree() >= 2 && g.cycle_count() == 1)
}

/// Every applicable inequality of the suite, evaluated against exact profiles
/// for t = 0..=t_max, plus mixing-time checks at each ε.
pub fn bound_suite(bundle: &ChainBundle, t_max: usize, epsilons: &[BigRational]) -> Result<BoundSuite, DynamicsError> {
    let mut profiles = BundleProfiles::compute(bundle, t_max)?;
    let table = &bundle.table;
    let big_m = table.stabilizers.iter().map(Vec::len).max().unwrap_or(1) as i64;
    let order = table.group_order as i64;
    let nx = table.state_len() as i64;
    let one = BigRational::one;
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    let mut skip = |name: &str, reason: &str| skipped.push(SkippedBound { name: name.into(), reason: reason.into() });

    let floor = one() - rat(1, big_m);
    curves.push(BoundCurve::geometric("rosenthal_K", Target::PrimalWorst, Direction::Upper, one(), floor.clone(), 0, 1));
    curves.push(BoundCurve::geometric("rosenthal_Q", Target::DualWorst, Direction::Upper, one(), floor.clone(), 0, 1));
    curves.push(BoundCurve::geometric("floor_transfer_Q", Target::DualWorst, Direction::Upper, one(), floor.clone(), 1, 1));
    curves.push(BoundCurve::geometric("chen_model_free_K", Target::PrimalWorst, Direction::Upper, one(), one() - rat(1, order), 0, 1));
    if table.dual_len() <= TWO_STEP_CAP {
        let nu = Distribution::uniform(table.state_len());
        curves.push(minorization_transfer(bundle, &rat(1, big_m), &nu)?);
    } else {
        skip("two_step_transfer_Q", "dual state space too large for Q²");
    }
    for (name, target, source) in [
        ("one_step_Q_after_K", Target::DualWorst, Target::PrimalWorst),
        ("one_step_K_after_Q", Target::PrimalWorst, Target::DualWorst),
    ] {
        curves.push(BoundCurve { name: name.into(), target, direction: Direction::Upper, form: CurveForm::Lagged { source, lag: 1 }, t_min: 1 });
    }
    for &g in profiles.q.starts() {
        curves.push(BoundCurve {
            name: format!("pointwise_transfer[{}]", table.dual_labels[g]),
            target: Target::DualStart(g),
            direction: Direction::Upper,
            form: CurveForm::PointwiseTransfer { g },
            t_min: 1,
        });
    }
    if profiles.k_lumped.is_some() {
        curves.push(BoundCurve::geometric("chen_orbit_coupling", Target::PrimalLumped, Direction::Upper, one(), one() - rat(1, nx), 0, 1));
        curves.push(BoundCurve { name: "lumping_contraction_K".into(), target: Target::PrimalLumped, direction: Direction::Upper, form: CurveForm::Lagged { source: Target::PrimalWorst, lag: 0 }, t_min: 0 });
    } else {
        skip("chen_orbit_coupling", "orbit partition unavailable");
    }
    if profiles.q_lumped.is_some() {
        curves.push(BoundCurve { name: "lumping_contraction_Q".into(), target: Target::DualLumped, direction: Direction::Upper, form: CurveForm::Lagged { source: Target::DualWorst, lag: 0 }, t_min: 0 });
    }

    let spec = bundle.spec;
    match spec {
        Some(s) if s.model == Model::Value => {
            let (n, k) = (s.n as i64, s.k as i64);
            if k >= n {
                let r = one() - rat(1, 2 * k);
                curves.push(BoundCurve::geometric("paguyo_K", Target::PrimalWorst, Direction::Upper, rat(n, 1), r.clone(), 0, 1));
                curves.push(BoundCurve::geometric("paguyo_Q", Target::DualWorst, Direction::Upper, rat(n, 1), r, 1, 1));
            } else {
                skip("paguyo_K", "requires k >= n");
                skip("paguyo_Q", "requires k >= n");
            }
            skip("aldous_K", "coordinate model only");
            skip("dz", "binary coordinate model only");
        }
        Some(s) => {
            let (n, k) = (s.n as i64, s.k as i64);
            let r = one() - rat(1, k);
            curves.push(BoundCurve::geometric("aldous_K", Target::PrimalWorst, Direction::Upper, rat(n, 1), r.clone(), 0, 1));
            if n >= 2 && k >= 2 {
                curves.push(BoundCurve::geometric("aldous_Q", Target::DualWorst, Direction::Upper, rat(n, 1), r, 1, 1));
            } else {
                skip("aldous_Q", "requires n, k >= 2");
            }
            skip("paguyo_K", "value model only");
            skip("fixed_k_start_K", "constant c_k is not explicit; see the n-independence probe");
            if k == 2 && n >= 2 {
                let q4 = rat(1, 4);
                for x0 in [0, table.state_len() - 1] {
                    let label = &table.state_labels[x0];
                    curves.push(BoundCurve::geometric(&format!("dz_upper_K[{label}]"), Target::PrimalStart(x0), Direction::Upper, rat(4, 1), q4.clone(), 0, 1));
                    curves.push(BoundCurve::geometric(&format!("dz_lower_K[{label}]"), Target::PrimalStart(x0), Direction::Lower, rat(1, 4), q4.clone(), 0, 1));
                }
                curves.push(BoundCurve::geometric("dz_lower_Q", Target::DualWorst, Direction::Lower, rat(1, 16), q4.clone(), 0, 1));
                if let Some(g) = n_cycle(bundle) {
                    curves.push(BoundCurve::geometric(&format!("dz_transitive_Q[{}]", table.dual_labels[g]), Target::DualStart(g), Direction::Upper, rat(16, 1), q4, 1, 1));
                }
            } else {
                skip("dz", "requires k = 2 and n >= 2");
            }
        }
        None => {
            skip("paguyo_K", "requires a model");
            skip("aldous_K", "requires a model");
            skip("dz", "requires a model");
        }
    }

    let checks: Vec<BoundCheck> = curves.into_iter().map(|c| check_curve(c, &profiles, bundle)).collect();

    let mut mixing = Vec::new();
    for eps in epsilons {
        let t_k = profiles.k.mixing_time_extending(eps)?;
        let t_q = profiles.q.mixing_time_extending(eps)?;
        let ln_inv = (1.0 / crate::matrix::rational_to_f64(eps)).ln();
        let mut bounds = Vec::new();
        let mut upper = |name: &str, observed: usize, bound: i64| {
            bounds.push(MixingBound { name: name.into(), observed, bound, direction: Direction::Upper, ok: observed as i64 <= bound });
        };
        let rosenthal = ceil_f(big_m as f64 * ln_inv);
        upper("rosenthal_K", t_k, rosenthal);
        upper("rosenthal_Q", t_q, rosenthal);
        upper("transfer_Q_after_K", t_q, t_k as i64 + 1);
        upper("transfer_K_after_Q", t_k, t_q as i64 + 1);
        let mut extra: Vec<MixingBound> = Vec::new();
        match spec {
            Some(s) if s.model == Model::Value => {
                let (n, k) = (s.n as f64, s.k as f64);
                if s.k >= s.n {
                    let b = ceil_f(2.0 * k * (n / crate::matrix::rational_to_f64(eps)).ln());
                    upper("paguyo_K", t_k, b);
                    upper("paguyo_Q", t_q, b + 1);
                }
            }
            Some(s) => {
                let (n, k) = (s.n as f64, s.k as f64);
                let b = ceil_f(k * (n / crate::matrix::rational_to_f64(eps)).ln());
                upper("aldous_K", t_k, b);
                if s.n >= 2 && s.k >= 2 {
                    upper("aldous_Q", t_q, b + 1);
                }
                if s.k == 2 && s.n >= 2 {
                    let l = ceil_log4_inv(eps);
                    let tk0 = profiles.k.start_mixing_time(0, eps)?;
                    upper("dz_upper_K[all-equal]", tk0, l + 1);
                    extra.push(MixingBound { name: "dz_lower_K[all-equal]".into(), observed: tk0, bound: l - 1, direction: Direction::Lower, ok: tk0 as i64 >= l - 1 });
                    extra.push(MixingBound { name: "dz_lower_Q".into(), observed: t_q, bound: l - 2, direction: Direction::Lower, ok: t_q as i64 >= l - 2 });
                    if let Some(g) = n_cycle(bundle) {
                        let tg = profiles.q.start_mixing_time(g, eps)?;
                        upper("dz_transitive_Q", tg, l + 2);
                    }
                }
            }
            None => {}
        }
        bounds.extend(extra);
        mixing.push(MixingReport { eps: eps.clone(), t_k, t_q, equivalent: t_k.abs_diff(t_q) <= 1, bounds });
    }
    let monotone = profiles.k.monotone() && profiles.q.monotone();
    Ok(BoundSuite { t_max, profiles, checks, skipped, mixing, monotone })
}

impl BoundSuite {
    pub fn all_verified(&self) -> bool {
        self.monotone
            && self.checks.iter().all(|c| c.verified)
            && self.mixing.iter().all(|m| m.equivalent && m.bounds.iter().all(|b| b.ok))
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.curve.name == name)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.verified)
            .map(|c| {
                let r = c.rows.iter().find(|r| !r.ok).expect("a failing row");
                format!("{} at t={}: {} vs {}", c.curve.name, r.t, format_rational(&r.observed), format_rational(&r.bound))
            })
            .collect();
        for m in &self.mixing {
            if !m.equivalent {
                out.push(format!("mixing equivalence at eps={}: K={} Q={}", format_rational(&m.eps), m.t_k, m.t_q));
            }
            for b in m.bounds.iter().filter(|b| !b.ok) {
                out.push(format!("{} at eps={}: {} vs {}", b.name, format_rational(&m.eps), b.observed, b.bound));
            }
        }
        if !self.monotone {
            out.push("d(t) is not monotone".into());
        }
        out
    }

    /// Columns t, d_fine, d_lumped, bound_name, bound_value, ok.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "d_fine", "d_lumped", "bound_name", "bound_value", "ok"]).expect("in-memory write");
        let f = |v: Option<BigRational>| v.map(|v| format_rational(&v)).unwrap_or_default();
        for t in 0..=self.t_max {
            for chain in [Target::PrimalWorst, Target::DualWorst] {
                let (fine, lumped) = self.profiles.fine_and_lumped(&chain, t);
                let name = if chain == Target::PrimalWorst { "d_K" } else { "d_Q" };
                w.write_record([t.to_string(), f(fine), f(lumped), name.into(), String::new(), String::new()]).expect("in-memory write");
            }
            for c in &self.checks {
                if let Some(r) = c.rows.iter().find(|r| r.t == t) {
                    let (fine, lumped) = self.profiles.fine_and_lumped(&c.curve.target, t);
                    w.write_record([t.to_string(), f(fine), f(lumped), c.curve.name.clone(), format_rational(&r.bound), r.ok.to_string()])
                        .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn to_json(&self) -> Value {
        let curve = |v: &[BigRational]| v.iter().take(self.t_max + 1).map(format_rational).collect::<Vec<_>>();
        json!({
            "t_max": self.t_max,
            "d_K": curve(self.profiles.k.worst()),
            "d_Q": curve(self.profiles.q.worst()),
            "d_K_orbit_lumped": self.profiles.k_lumped.as_ref().map(|p| curve(p.worst())),
            "d_Q_class_lumped": self.profiles.q_lumped.as_ref().map(|p| curve(p.worst())),
            "monotone": self.monotone,
            "bounds": self.checks.iter().map(|c| json!({
                "name": c.curve.name,
                "direction": if c.curve.direction == Direction::Upper { "upper" } else { "lower" },
                "verified": c.verified,
                "values": c.rows.iter().map(|r| json!({"t": r.t, "observed": format_rational(&r.observed), "bound": format_rational(&r.bound), "ok": r.ok})).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "skipped": self.skipped.iter().map(|s| json!({"name": s.name, "reason": s.reason})).collect::<Vec<_>>(),
            "mixing": self.mixing.iter().map(|m| json!({
                "eps": format_rational(&m.eps),
                "t_mix_K": m.t_k,
                "t_mix_Q": m.t_q,
                "within_one_step": m.equivalent,
                "bounds": m.bounds.iter().map(|b| json!({"name": b.name, "observed": b.observed, "bound": b.bound, "direction": if b.direction == Direction::Upper { "upper" } else { "lower" }, "ok": b.ok})).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "all_verified": self.all_verified(),
        })
    }
}

/// Verifies K ≥ δν row-wise and Q² ≥ δ(νB), returning the curve
/// (1 − δ)^{⌊t/2⌋} for d_Q.
pub fn minorization_transfer(bundle: &ChainBundle, delta: &BigRational, nu: &Distribution) -> Result<BoundCurve, DynamicsError> {
    let k = bundle.k.matrix();
    if nu.len() != k.rows() {
        return Err(DynamicsError::Dimension("minorizing measure".into()));
    }
    for x in 0..k.rows() {
        for y in 0..k.cols() {
            if k.get(x, y) < &(delta * nu.get(y)) {
                return Err(DynamicsError::Minorization {
                    row: bundle.table.state_labels[x].clone(),
                    col: bundle.table.state_labels[y].clone(),
                });
            }
        }
    }
    let nu_b = bundle.b.left_mul(nu.masses())?;
    let q2 = bundle.q.mul(bundle.q.matrix())?;
    for g in 0..q2.rows() {
        for h in 0..q2.cols() {
            if q2.get(g, h) < &(delta * &nu_b[h]) {
                return Err(DynamicsError::Minorization {
                    row: bundle.table.dual_labels[g].clone(),
                    col: bundle.table.dual_labels[h].clone(),
                });
            }
        }
    }
    Ok(BoundCurve::geometric("two_step_transfer_Q", Target::DualWorst, Direction::Upper, BigRational::one(), BigRational::one() - delta, 0, 2))
}

/// t_mix(K; all-equal start, ε) in the coordinate model.
pub fn all_equal_mixing_time(k: usize, n: usize, eps: &BigRational) -> Result<usize, DynamicsError> {
    let spec = crate::actions::ActionSpec::coordinate(k, n).map_err(KernelError::from)?;
    let bundle = crate::kernels::build_bundle(&spec)?;
    let mut profile = primal_profile(&bundle, 0)?;
    profile.start_mixing_time(0, eps)
}

/// Worst-case TV as a float, for display.
pub fn tv_to_f64(v: &BigRational) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{random_tabled_action, ActionSpec};
    use crate::kernels::build_bundle;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn value32() -> ChainBundle {
        build_bundle(&ActionSpec::value(3, 2).unwrap()).unwrap()
    }

    fn coord23() -> ChainBundle {
        build_bundle(&ActionSpec::coordinate(2, 3).unwrap()).unwrap()
    }

    /// TV of δ_x P^t against π by plain rational powers.
    fn brute_profile(p: &RationalMatrix, pi: &Distribution, t_max: usize) -> Vec<Vec<BigRational>> {
        (0..p.rows())
            .map(|x| {
                let mut mu = Distribution::point_mass(p.rows(), x);
                (0..=t_max)
                    .map(|t| {
                        if t > 0 {
                            mu = evolve(p, &mu, 1).unwrap();
                        }
                        tv(&mu, pi).unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn evolve_basics() {
        let b = value32();
        let e = Distribution::point_mass(4, 0);
        assert_eq!(evolve(&b.q, &e, 0).unwrap(), e);
        assert_eq!(evolve(&b.q, &e, 1).unwrap().masses(), b.q.row(0));
        assert_eq!(evolve(&b.q, &b.pi_q, 7).unwrap(), b.pi_q);
        assert!(evolve(&b.q, &Distribution::point_mass(3, 0), 1).is_err());
    }

    #[test]
    fn tv_basics() {
        let a = Distribution::point_mass(3, 0);
        let b = Distribution::point_mass(3, 2);
        assert_eq!(tv(&a, &a).unwrap(), BigRational::zero());
        assert_eq!(tv(&a, &b).unwrap(), BigRational::one());
        let bundle = value32();
        let row = Distribution::new(bundle.q.row(0).to_vec()).unwrap();
        // (|15/18 − 3/4| + 3·|1/18 − 1/12|)/2
        assert_eq!(tv(&row, &bundle.pi_q).unwrap(), rat(1, 12));
    }

    #[test]
    fn symmetric_profile_matches_brute_force() {
        for spec in [ActionSpec::value(3, 2), ActionSpec::coordinate(2, 3), ActionSpec::value(4, 3), ActionSpec::coordinate(3, 3)] {
            let b = build_bundle(&spec.unwrap()).unwrap();
            let pk = primal_profile(&b, 6).unwrap();
            let pq = dual_profile(&b, 6).unwrap();
            let bk = brute_profile(&b.k, &b.pi_k, 6);
            let bq = brute_profile(&b.q, &b.pi_q, 6);
            for x in 0..b.table.state_len() {
                assert_eq!(pk.curve(x), &bk[x][..]);
            }
            for g in 0..b.table.dual_len() {
                assert_eq!(pq.curve(g), &bq[g][..]);
            }
            assert!(pk.monotone() && pq.monotone());
        }
    }

    #[test]
    fn mixing_time_scan() {
        let b = value32();
        let eps = rat(1, 4);
        let t = mixing_time(&b.q, &b.pi_q, &eps).unwrap();
        let brute = brute_profile(&b.q, &b.pi_q, 20);
        let scan = (0..=20).find(|&t| brute.iter().map(|c| &c[t]).max().unwrap() <= &eps).unwrap();
        assert_eq!(t, scan);
        let tk = mixing_time(&b.k, &b.pi_k, &eps).unwrap();
        assert!(t.abs_diff(tk) <= 1);
        // (K1): ⌈(k−1)! log 4⌉
        assert!(tk as f64 <= (2.0 * 4f64.ln()).ceil());
        let single = build_bundle(&ActionSpec::value(2, 5).unwrap()).unwrap();
        assert_eq!(mixing_time(&single.q, &single.pi_q, &eps).unwrap(), 0);
        assert!(mixing_time(&b.q, &b.pi_q, &rat(1, 1)).is_err());
    }

    #[test]
    fn fixed_point_lumping_golden() {
        let b = value32();
        let part = fixed_set_size_partition(&b);
        let l = lump(&b.q, &b.pi_q, &part).unwrap();
        assert_eq!(l.kernel.row(0), &[rat(5, 6), rat(1, 6)]);
        assert_eq!(l.kernel.row(1), &[rat(1, 2), rat(1, 2)]);
        assert!(l.reversible && l.irreducible);
        let c = conjugacy_lump_q(&b).unwrap();
        assert_eq!(c.chain.kernel.matrix(), l.kernel.matrix());
        assert!(c.formula_matches && c.pi_formula_matches);
    }

    #[test]
    fn cycle_count_counterexample() {
        let b = build_bundle(&ActionSpec::coordinate(2, 4).unwrap()).unwrap();
        let part = cycle_count_partition(&b);
        let err = lump_labeled(&b.q, &b.pi_q, &part, &b.table.dual_labels).unwrap_err();
        let DynamicsError::NotLumpable(f) = err else { panic!("expected a lumping failure") };
        let i = f.violations.iter().position(|v| v.source_block == "c=2" && v.target_block == "c=2").unwrap();
        let v = &f.violations[i];
        assert_eq!((v.low.1.clone(), v.high.1.clone()), (rat(17, 48), rat(19, 48)));
        assert_eq!(f.witness_labels[i], ("(1 2)(3 4)".to_string(), "(1 2 3)".to_string()));
    }

    #[test]
    fn conjugacy_lump_coordinate() {
        let b = coord23();
        let c = conjugacy_lump_q(&b).unwrap();
        assert_eq!(c.chain.partition.len(), 3);
        assert!(c.formula_matches && c.pi_formula_matches && c.chain.reversible);
        // e row: 10/24, 12/24, 2/24
        assert_eq!(c.chain.kernel.row(0), &[rat(5, 12), rat(1, 2), rat(1, 12)]);
    }

    #[test]
    fn orbit_lumping() {
        for b in [value32(), coord23()] {
            let o = orbit_lump_k(&b).unwrap();
            assert!(o.formula_matches && o.symmetric && o.uniform_pi && o.chain.irreducible);
            assert_eq!(o.chain.partition.len(), b.orbit_count());
        }
    }

    #[test]
    fn tv_preservation() {
        // value model: e has a class-invariant row
        let b = value32();
        let part = conjugacy_partition(&b);
        let rows = tv_preservation_check(&b.q, &b.pi_q, &part, 0, 8).unwrap();
        assert!(rows.iter().skip(1).all(|r| r.equal));
        // coordinate model from the 3-cycle: flat row
        let b = coord23();
        let part = conjugacy_partition(&b);
        let g = n_cycle(&b).unwrap();
        let rows = tv_preservation_check(&b.q, &b.pi_q, &part, g, 8).unwrap();
        assert!(rows.iter().skip(1).all(|r| r.equal && r.sign_condition));
        for start in 0..b.table.dual_len() {
            for r in tv_preservation_check(&b.q, &b.pi_q, &part, start, 5).unwrap() {
                assert!(r.fine >= r.lumped);
            }
        }
    }

    #[test]
    fn minorization_examples() {
        let b = value32();
        let c = minorization_transfer(&b, &rat(1, 2), &Distribution::uniform(9)).unwrap();
        let p = BundleProfiles::compute(&b, 20).unwrap();
        let chk = check_curve(c, &p, &b);
        assert!(chk.verified);
        let b = coord23();
        assert!(minorization_transfer(&b, &rat(1, 6), &Distribution::uniform(8)).is_ok());
        assert!(minorization_transfer(&b, &rat(1, 1), &Distribution::uniform(8)).is_err());
    }

    #[test]
    fn suites_on_golden_instances() {
        for b in [value32(), coord23(), build_bundle(&ActionSpec::value(4, 3).unwrap()).unwrap()] {
            let s = bound_suite(&b, 60, &default_epsilons()).unwrap();
            assert!(s.all_verified(), "{:?}", s.failures());
        }
        let s = bound_suite(&coord23(), 30, &default_epsilons()).unwrap();
        assert!(s.check("dz_lower_Q").unwrap().verified);
        assert!(s.check("dz_transitive_Q[(1 2 3)]").unwrap().verified);
        let v = bound_suite(&build_bundle(&ActionSpec::value(4, 3).unwrap()).unwrap(), 60, &[]).unwrap();
        assert!(v.check("paguyo_K").unwrap().verified);
        let csv = v.to_csv();
        assert!(csv.starts_with("t,d_fine,d_lumped,bound_name,bound_value,ok"));
        assert!(csv.contains(",paguyo_K,"));
    }

    #[test]
    fn zero_horizon() {
        let s = bound_suite(&coord23(), 0, &[]).unwrap();
        assert!(s.checks.iter().all(|c| c.rows.iter().all(|r| r.t == 0)));
        assert!(s.to_csv().lines().skip(1).all(|l| l.starts_with("0,")));
    }

    #[test]
    fn n_independence() {
        let eps = rat(1, 4);
        let t: Vec<usize> = (3..=5).map(|n| all_equal_mixing_time(2, n, &eps).unwrap()).collect();
        assert!(t.windows(2).all(|w| w[0] == w[1]), "{t:?}");
    }

    #[test]
    fn partition_validation() {
        assert!(StatePartition::new(vec!["a".into()], vec![vec![0, 1]], 3).is_err());
        assert!(StatePartition::new(vec!["a".into(), "b".into()], vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(StatePartition::new(vec!["a".into(), "b".into()], vec![vec![0, 1], vec![]], 2).is_err());
        let p = StatePartition::from_keys(&[3, 1, 3, 2]);
        assert_eq!(p.blocks(), &[vec![0, 2], vec![1], vec![3]]);
        assert_eq!(p.labels(), &["3", "1", "2"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_action_transfers(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tabled_action(&mut rng, 32);
            let b = ChainBundle::from_table(t.table(), None).unwrap();
            let s = bound_suite(&b, 20, &default_epsilons()).unwrap();
            prop_assert!(s.all_verified(), "{:?}", s.failures());
            let o = orbit_lump_k(&b).unwrap();
            prop_assert!(o.symmetric && o.formula_matches);
        }
    }
}
