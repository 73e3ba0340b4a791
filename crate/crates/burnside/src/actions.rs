//! The value-permutation and coordinate-permutation actions on words, plus an
//! explicit tabled action for model-free tests.
//!
//! Words store 0-based symbol indices. The text form uses the alphabet
//! {1..k} for the value model and {0..k-1} for the coordinate model.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinat::{binomial, factorial, stirling2};
use crate::permgroup::{
    cycle_types, enumerate_sym_capped, graded_cmp, PermError, Permutation, UnionFind,
};

pub const DEFAULT_MAX_STATES: usize = 65_536;
pub const DEFAULT_MAX_DUAL_STATES: usize = 40_320;
/// Overrides [`DEFAULT_MAX_STATES`].
pub const MAX_STATES_ENV: &str = "BURNSIDE_MAX_STATES";
/// Largest |G|·(|X| + |G*|) for which the symmetry tables are materialized.
pub const SYMMETRY_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("invalid parameters n={n}, k={k}: both must be at least 1")]
    InvalidParameters { n: usize, k: usize },
    #[error(transparent)]
    Perm(#[from] PermError),
    #[error("permutation has degree {found}, the action needs degree {expected}")]
    WrongDegree { expected: usize, found: usize },
    #[error("word has length {found}, expected {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("letter {letter} outside the alphabet of size {k}")]
    LetterOutOfRange { letter: usize, k: usize },
    #[error("cannot parse word {0:?}")]
    WordParse(String),
    #[error("{0} fixes no word (derangement in the value model)")]
    EmptyFixedSet(String),
    #[error("state space of size {size} exceeds the cap {cap} (set {MAX_STATES_ENV} to raise it)")]
    StateCap { size: String, cap: usize },
    #[error("dual state space of size {size} exceeds the cap {cap}")]
    DualCap { size: usize, cap: usize },
    #[error("Burnside average {burnside} disagrees with the closed form {closed}")]
    BurnsideMismatch { burnside: String, closed: String },
    #[error("invalid action table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Value,
    #[serde(rename = "coord")]
    Coordinate,
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "value" => Ok(Model::Value),
            "coord" | "coordinate" => Ok(Model::Coordinate),
            other => Err(format!("unknown model {other:?} (expected value or coord)")),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Value => "value",
            Model::Coordinate => "coord",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    letters: Vec<usize>,
}

impl Word {
    /// From 0-based symbol indices.
    pub fn new(letters: Vec<usize>) -> Self {
        Word { letters }
    }

    pub fn constant(n: usize, letter: usize) -> Self {
        Word { letters: vec![letter; n] }
    }

    pub fn letters(&self) -> &[usize] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// r_x, the number of distinct letters.
    pub fn support_size(&self) -> usize {
        let mut s = self.letters.clone();
        s.sort_unstable();
        s.dedup();
        s.len()
    }

    /// m_a(x) for a in 0..k.
    pub fn histogram(&self, k: usize) -> Vec<usize> {
        let mut h = vec![0; k];
        for &a in &self.letters {
            h[a] += 1;
        }
        h
    }
}

/// Canonical orbit invariant of a word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OrbitKey {
    /// Positions (1-based) grouped by equal letters, ordered by first position.
    Partition(Vec<Vec<usize>>),
    /// Letter multiplicities m_0..m_{k-1}.
    Histogram(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSpec {
    pub model: Model,
    pub n: usize,
    pub k: usize,
}

impl fmt::Display for ActionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} k={} n={}", self.model, self.k, self.n)
    }
}

impl ActionSpec {
    pub fn new(model: Model, n: usize, k: usize) -> Result<Self, ActionError> {
        if n == 0 || k == 0 {
            return Err(ActionError::InvalidParameters { n, k });
        }
        Ok(ActionSpec { model, n, k })
    }

    pub fn value(k: usize, n: usize) -> Result<Self, ActionError> {
        Self::new(Model::Value, n, k)
    }

    pub fn coordinate(k: usize, n: usize) -> Result<Self, ActionError> {
        Self::new(Model::Coordinate, n, k)
    }

    /// k for the value model, n for the coordinate model.
    pub fn group_degree(&self) -> usize {
        match self.model {
            Model::Value => self.k,
            Model::Coordinate => self.n,
        }
    }

    pub fn group_order(&self) -> BigUint {
        factorial(self.group_degree())
    }

    pub fn state_count(&self) -> BigUint {
        BigUint::from(self.k).pow(self.n as u32)
    }

    fn letter_offset(&self) -> usize {
        match self.model {
            Model::Value => 1,
            Model::Coordinate => 0,
        }
    }

    fn check_perm(&self, g: &Permutation) -> Result<(), ActionError> {
        if g.degree() != self.group_degree() {
            return Err(ActionError::WrongDegree { expected: self.group_degree(), found: g.degree() });
        }
        Ok(())
    }

    pub fn check_word(&self, x: &Word) -> Result<(), ActionError> {
        if x.len() != self.n {
            return Err(ActionError::WrongLength { expected: self.n, found: x.len() });
        }
        if let Some(&bad) = x.letters.iter().find(|&&a| a >= self.k) {
            return Err(ActionError::LetterOutOfRange { letter: bad + self.letter_offset(), k: self.k });
        }
        Ok(())
    }

    /// g·x.
    pub fn act(&self, g: &Permutation, x: &Word) -> Result<Word, ActionError> {
        self.check_perm(g)?;
        self.check_word(x)?;
        Ok(self.act_unchecked(g, x))
    }

    pub(crate) fn act_unchecked(&self, g: &Permutation, x: &Word) -> Word {
        match self.model {
            Model::Value => Word { letters: x.letters.iter().map(|&a| g.image0(a)).collect() },
            Model::Coordinate => {
                // (g·x)_{g(i)} = x_i
                let mut out = vec![0; self.n];
                for (i, &a) in x.letters.iter().enumerate() {
                    out[g.image0(i)] = a;
                }
                Word { letters: out }
            }
        }
    }

    pub fn is_fixed(&self, g: &Permutation, x: &Word) -> bool {
        match self.model {
            Model::Value => x.letters.iter().all(|&a| g.image0(a) == a),
            Model::Coordinate => (0..self.n).all(|i| x.letters[g.image0(i)] == x.letters[i]),
        }
    }

    /// |X_g|: f(g)^n (value) or k^{c(g)} (coordinate).
    pub fn fixed_set_size(&self, g: &Permutation) -> Result<BigUint, ActionError> {
        self.check_perm(g)?;
        Ok(match self.model {
            Model::Value => BigUint::from(g.fixed_point_count()).pow(self.n as u32),
            Model::Coordinate => BigUint::from(self.k).pow(g.cycle_count() as u32),
        })
    }

    /// Words fixed by g, in the mixed-radix order of their free coordinates.
    pub fn enumerate_fixed_words(&self, g: &Permutation) -> Result<FixedWords, ActionError> {
        self.check_perm(g)?;
        match self.model {
            Model::Value => {
                let letters: Vec<usize> =
                    (0..self.k).filter(|&a| g.image0(a) == a).collect();
                if letters.is_empty() {
                    return Err(ActionError::EmptyFixedSet(g.to_string()));
                }
                let slots = (0..self.n).map(|i| vec![i]).collect();
                Ok(FixedWords::new(self.n, slots, letters))
            }
            Model::Coordinate => {
                let slots = g.cycles().into_iter().map(|c| c.into_iter().map(|p| p - 1).collect()).collect();
                Ok(FixedWords::new(self.n, slots, (0..self.k).collect()))
            }
        }
    }

    /// Uniform element of X_g.
    pub fn sample_fixed_word<R: Rng + ?Sized>(&self, g: &Permutation, rng: &mut R) -> Result<Word, ActionError> {
        self.check_perm(g)?;
        match self.model {
            Model::Value => {
                let letters: Vec<usize> = (0..self.k).filter(|&a| g.image0(a) == a).collect();
                if letters.is_empty() {
                    return Err(ActionError::EmptyFixedSet(g.to_string()));
                }
                Ok(Word { letters: (0..self.n).map(|_| letters[rng.random_range(0..letters.len())]).collect() })
            }
            Model::Coordinate => {
                let mut out = vec![0; self.n];
                for cycle in g.cycles() {
                    let a = rng.random_range(0..self.k);
                    for p in cycle {
                        out[p - 1] = a;
                    }
                }
                Ok(Word { letters: out })
            }
        }
    }

    /// |G_x|: (k - r_x)! (value) or prod_a m_a(x)! (coordinate).
    pub fn stabilizer_size(&self, x: &Word) -> Result<BigUint, ActionError> {
        self.check_word(x)?;
        Ok(match self.model {
            Model::Value => factorial(self.k - x.support_size()),
            Model::Coordinate => x.histogram(self.k).iter().map(|&m| factorial(m)).product(),
        })
    }

    /// The classes of points that G_x permutes freely: the unused symbols
    /// (value) or the index sets I_a(x) (coordinate), all 0-based.
    fn stabilizer_classes(&self, x: &Word) -> Vec<Vec<usize>> {
        match self.model {
            Model::Value => {
                let mut used = vec![false; self.k];
                for &a in &x.letters {
                    used[a] = true;
                }
                vec![(0..self.k).filter(|&a| !used[a]).collect()]
            }
            Model::Coordinate => {
                let mut classes = vec![Vec::new(); self.k];
                for (i, &a) in x.letters.iter().enumerate() {
                    classes[a].push(i);
                }
                classes
            }
        }
    }

    /// Uniform element of G_x, built by shuffling each class independently.
    pub fn sample_stabilizer_uniform<R: Rng + ?Sized>(&self, x: &Word, rng: &mut R) -> Result<Permutation, ActionError> {
        self.check_word(x)?;
        let mut images: Vec<usize> = (0..self.group_degree()).collect();
        for class in self.stabilizer_classes(x) {
            let mut shuffled = class.clone();
            shuffled.shuffle(rng);
            for (&from, &to) in class.iter().zip(&shuffled) {
                images[from] = to;
            }
        }
        Ok(Permutation::from_images0(images))
    }

    /// Every element of G_x.
    pub fn stabilizer_elements(&self, x: &Word) -> Result<Vec<Permutation>, ActionError> {
        self.check_word(x)?;
        let m = self.group_degree();
        let mut out = vec![(0..m).collect::<Vec<usize>>()];
        for class in self.stabilizer_classes(x) {
            if class.len() < 2 {
                continue;
            }
            let local: Vec<Permutation> = enumerate_sym_capped(class.len(), usize::MAX)?.collect();
            let mut next = Vec::with_capacity(out.len() * local.len());
            for base in &out {
                for s in &local {
                    let mut img = base.clone();
                    for (i, &from) in class.iter().enumerate() {
                        img[from] = class[s.image0(i)];
                    }
                    next.push(img);
                }
            }
            out = next;
        }
        Ok(out.into_iter().map(Permutation::from_images0).collect())
    }

    pub fn orbit_key(&self, x: &Word) -> Result<OrbitKey, ActionError> {
        self.check_word(x)?;
        Ok(match self.model {
            Model::Value => {
                let mut slot: HashMap<usize, usize> = HashMap::new();
                let mut blocks: Vec<Vec<usize>> = Vec::new();
                for (i, &a) in x.letters.iter().enumerate() {
                    let b = *slot.entry(a).or_insert_with(|| {
                        blocks.push(Vec::new());
                        blocks.len() - 1
                    });
                    blocks[b].push(i + 1);
                }
                OrbitKey::Partition(blocks)
            }
            Model::Coordinate => OrbitKey::Histogram(x.histogram(self.k)),
        })
    }

    /// z by the closed form: sum_{r ≤ k} S(n, r) (value) or C(n+k-1, k-1) (coordinate).
    pub fn closed_form_orbit_count(&self) -> BigUint {
        match self.model {
            Model::Value => (0..=self.k.min(self.n)).map(|r| stirling2(self.n, r)).sum(),
            Model::Coordinate => binomial(self.n + self.k - 1, self.k - 1),
        }
    }

    /// z as the Burnside average (1/|G|) sum_g |X_g|, summed class by class.
    pub fn burnside_orbit_count(&self) -> BigUint {
        let m = self.group_degree();
        let total: BigUint = cycle_types(m)
            .iter()
            .map(|ct| {
                let rep = ct.representative();
                ct.class_size() * self.fixed_set_size(&rep).expect("representative has the group degree")
            })
            .sum();
        total / factorial(m)
    }

    /// Number of orbits; both routes must agree.
    pub fn count_orbits(&self) -> Result<BigUint, ActionError> {
        let closed = self.closed_form_orbit_count();
        let burnside = self.burnside_orbit_count();
        if closed != burnside {
            return Err(ActionError::BurnsideMismatch { burnside: burnside.to_string(), closed: closed.to_string() });
        }
        Ok(closed)
    }

    pub fn format_word(&self, x: &Word) -> String {
        let off = self.letter_offset();
        if self.k + off <= 10 {
            x.letters.iter().map(|&a| char::from(b'0' + (a + off) as u8)).collect()
        } else {
            x.letters.iter().map(|&a| (a + off).to_string()).collect::<Vec<_>>().join(",")
        }
    }

    pub fn parse_word(&self, text: &str) -> Result<Word, ActionError> {
        let off = self.letter_offset();
        let t = text.trim();
        let raw: Vec<usize> = if t.contains(',') {
            t.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| ActionError::WordParse(text.to_string())))
                .collect::<Result<_, _>>()?
        } else {
            t.chars()
                .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(|| ActionError::WordParse(text.to_string())))
                .collect::<Result<_, _>>()?
        };
        let mut letters = Vec::with_capacity(raw.len());
        for v in raw {
            if v < off || v - off >= self.k {
                return Err(ActionError::LetterOutOfRange { letter: v, k: self.k });
            }
            letters.push(v - off);
        }
        let w = Word { letters };
        self.check_word(&w)?;
        Ok(w)
    }

    /// Mixed-radix index, first letter most significant.
    pub fn word_index(&self, x: &Word) -> usize {
        x.letters.iter().fold(0, |acc, &a| acc * self.k + a)
    }

    pub fn word_at(&self, mut index: usize) -> Word {
        let mut letters = vec![0; self.n];
        for i in (0..self.n).rev() {
            letters[i] = index % self.k;
            index /= self.k;
        }
        Word { letters }
    }

    /// G* = {g : X_g nonempty} in graded order (identity first, then by
    /// number of moved points, then lexicographically by cycles).
    pub fn dual_states(&self) -> Result<Vec<Permutation>, ActionError> {
        let m = self.group_degree();
        let all = enumerate_sym_capped(m, crate::permgroup::DEFAULT_ENUMERATION_CAP)?;
        let mut dual: Vec<Permutation> = match self.model {
            Model::Value => all.filter(|g| g.fixed_point_count() > 0).collect(),
            Model::Coordinate => all.collect(),
        };
        if dual.len() > DEFAULT_MAX_DUAL_STATES {
            return Err(ActionError::DualCap { size: dual.len(), cap: DEFAULT_MAX_DUAL_STATES });
        }
        dual.sort_by(graded_cmp);
        Ok(dual)
    }

    /// The incidence data of the action, ready for kernel assembly.
    pub fn table(&self) -> Result<ActionTable, ActionError> {
        let cap = max_states();
        let size = self.state_count();
        if size > BigUint::from(cap) {
            return Err(ActionError::StateCap { size: size.to_string(), cap });
        }
        let nx = size.to_usize().expect("bounded by the cap");
        let dual = self.dual_states()?;
        let dual_index: HashMap<Permutation, usize> =
            dual.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
        let mut fixed = Vec::with_capacity(dual.len());
        let mut stabilizers = vec![Vec::new(); nx];
        for (gi, g) in dual.iter().enumerate() {
            let mut xs: Vec<usize> = self.enumerate_fixed_words(g)?.map(|w| self.word_index(&w)).collect();
            xs.sort_unstable();
            for &x in &xs {
                stabilizers[x].push(gi);
            }
            fixed.push(xs);
        }
        let group_order = factorial(self.group_degree()).to_usize().expect("degree is capped");
        let symmetry = if group_order.saturating_mul(nx + dual.len()) <= SYMMETRY_BUDGET {
            let group: Vec<Permutation> = enumerate_sym_capped(self.group_degree(), usize::MAX)?.collect();
            let state_perms = group
                .iter()
                .map(|a| (0..nx).map(|x| self.word_index(&self.act_unchecked(a, &self.word_at(x)))).collect())
                .collect();
            let dual_perms = group
                .iter()
                .map(|a| dual.iter().map(|g| dual_index[&g.conjugate_by(a).expect("same degree")]).collect())
                .collect();
            let gens = crate::permgroup::sym_generators(self.group_degree());
            let generators = group.iter().enumerate().filter(|(_, a)| gens.contains(a)).map(|(i, _)| i).collect();
            Some(Symmetry { state_perms, dual_perms, generators })
        } else {
            None
        };
        let class_labels = dual.iter().map(|g| g.cycle_type().to_string()).collect();
        Ok(ActionTable {
            group_order,
            dual_labels: dual.iter().map(|g| g.to_string()).collect(),
            state_labels: (0..nx).map(|x| self.format_word(&self.word_at(x))).collect(),
            identity: 0,
            fixed,
            stabilizers,
            dual_class_labels: class_labels,
            symmetry,
            dual_elements: dual,
        })
    }
}

/// Effective state cap, honoring [`MAX_STATES_ENV`].
pub fn max_states() -> usize {
    std::env::var(MAX_STATES_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_MAX_STATES)
}

/// Iterator over the words fixed by a permutation: each slot (a set of
/// positions forced equal) takes a value from `alphabet`.
pub struct FixedWords {
    n: usize,
    slots: Vec<Vec<usize>>,
    alphabet: Vec<usize>,
    counter: Option<Vec<usize>>,
}

impl FixedWords {
    fn new(n: usize, slots: Vec<Vec<usize>>, alphabet: Vec<usize>) -> Self {
        let counter = (!alphabet.is_empty()).then(|| vec![0; slots.len()]);
        FixedWords { n, slots, alphabet, counter }
    }
}

impl Iterator for FixedWords {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        let counter = self.counter.as_mut()?;
        let mut letters = vec![0; self.n];
        for (slot, &c) in self.slots.iter().zip(counter.iter()) {
            for &i in slot {
                letters[i] = self.alphabet[c];
            }
        }
        let mut i = counter.len();
        loop {
            if i == 0 {
                self.counter = None;
                break;
            }
            i -= 1;
            counter[i] += 1;
            if counter[i] < self.alphabet.len() {
                break;
            }
            counter[i] = 0;
        }
        Some(Word { letters })
    }
}

/// All group elements as permutations of state indices and of dual indices
/// (the latter by conjugation).
#[derive(Debug, Clone)]
pub struct Symmetry {
    pub state_perms: Vec<Vec<usize>>,
    pub dual_perms: Vec<Vec<usize>>,
    /// Indices of a generating set within the lists above.
    pub generators: Vec<usize>,
}

/// Incidence structure of a finite action: the dual states G*, the states X,
/// and the relation x ∈ X_g ⇔ g ∈ G_x.
#[derive(Debug, Clone)]
pub struct ActionTable {
    pub group_order: usize,
    pub dual_elements: Vec<Permutation>,
    pub dual_labels: Vec<String>,
    pub dual_class_labels: Vec<String>,
    pub state_labels: Vec<String>,
    /// Index of the identity in the dual list.
    pub identity: usize,
    /// X_g as sorted state indices, per dual state.
    pub fixed: Vec<Vec<usize>>,
    /// G_x as sorted dual indices, per state.
    pub stabilizers: Vec<Vec<usize>>,
    pub symmetry: Option<Symmetry>,
}

impl ActionTable {
    pub fn dual_len(&self) -> usize {
        self.fixed.len()
    }

    pub fn state_len(&self) -> usize {
        self.stabilizers.len()
    }

    /// Orbits of G on X, from the symmetry tables when present.
    pub fn state_orbits(&self) -> Option<Vec<Vec<usize>>> {
        self.symmetry.as_ref().map(|s| components(self.state_len(), &s.state_perms))
    }

    /// Conjugacy classes of G restricted to G*.
    pub fn dual_classes(&self) -> Option<Vec<Vec<usize>>> {
        self.symmetry.as_ref().map(|s| components(self.dual_len(), &s.dual_perms))
    }

    /// Checks x ∈ X_g ⇔ g ∈ G_x.
    pub fn membership_duality_holds(&self) -> bool {
        let mut count = 0usize;
        for (g, xs) in self.fixed.iter().enumerate() {
            for &x in xs {
                if self.stabilizers[x].binary_search(&g).is_err() {
                    return false;
                }
                count += 1;
            }
        }
        count == self.stabilizers.iter().map(Vec::len).sum::<usize>()
    }
}

pub(crate) fn components(n: usize, perms: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(n);
    for p in perms {
        for (i, &j) in p.iter().enumerate() {
            uf.union(i, j);
        }
    }
    uf.components()
}

/// A finite group (given as permutations of some degree d) acting on
/// {0..set_size} through an explicit table.
#[derive(Debug, Clone)]
pub struct TabledAction {
    elements: Vec<Permutation>,
    table: Vec<Vec<usize>>,
}

impl TabledAction {
    /// `table[i][x]` is the image of state x under `elements[i]`.
    pub fn new(elements: Vec<Permutation>, table: Vec<Vec<usize>>) -> Result<Self, ActionError> {
        let bad = |s: &str| Err(ActionError::InvalidTable(s.to_string()));
        if elements.is_empty() || elements.len() != table.len() {
            return bad("one table row per group element is required");
        }
        let nx = table[0].len();
        let index: HashMap<&Permutation, usize> = elements.iter().enumerate().map(|(i, g)| (g, i)).collect();
        if index.len() != elements.len() {
            return bad("repeated group element");
        }
        for (i, g) in elements.iter().enumerate() {
            let row = &table[i];
            let mut seen = vec![false; nx];
            if row.len() != nx || row.iter().any(|&y| y >= nx || std::mem::replace(&mut seen[y], true)) {
                return bad("each row must be a permutation of the states");
            }
            if g.is_identity() && row.iter().enumerate().any(|(x, &y)| x != y) {
                return bad("identity must act trivially");
            }
            for (j, h) in elements.iter().enumerate() {
                let gh = g.compose(h)?;
                let Some(&p) = index.get(&gh) else {
                    return bad("elements are not closed under composition");
                };
                if (0..nx).any(|x| table[p][x] != row[table[j][x]]) {
                    return bad("table is not compatible with composition");
                }
            }
        }
        Ok(TabledAction { elements, table })
    }

    pub fn group_order(&self) -> usize {
        self.elements.len()
    }

    pub fn state_len(&self) -> usize {
        self.table[0].len()
    }

    pub fn table(&self) -> ActionTable {
        let nx = self.state_len();
        let mut order: Vec<usize> = (0..self.elements.len())
            .filter(|&i| (0..nx).any(|x| self.table[i][x] == x))
            .collect();
        order.sort_by(|&a, &b| graded_cmp(&self.elements[a], &self.elements[b]));
        let dual: Vec<Permutation> = order.iter().map(|&i| self.elements[i].clone()).collect();
        let dual_index: HashMap<&Permutation, usize> = dual.iter().enumerate().map(|(i, g)| (g, i)).collect();
        let mut stabilizers = vec![Vec::new(); nx];
        let fixed: Vec<Vec<usize>> = order
            .iter()
            .enumerate()
            .map(|(gi, &i)| {
                let xs: Vec<usize> = (0..nx).filter(|&x| self.table[i][x] == x).collect();
                for &x in &xs {
                    stabilizers[x].push(gi);
                }
                xs
            })
            .collect();
        let dual_perms: Vec<Vec<usize>> = self
            .elements
            .iter()
            .map(|a| dual.iter().map(|g| dual_index[&g.conjugate_by(a).expect("same degree")]).collect())
            .collect();
        let classes = components(dual.len(), &dual_perms);
        let mut class_labels = vec![String::new(); dual.len()];
        for (c, members) in classes.iter().enumerate() {
            for &g in members {
                class_labels[g] = format!("class{c}");
            }
        }
        ActionTable {
            group_order: self.elements.len(),
            dual_labels: dual.iter().map(|g| g.to_string()).collect(),
            dual_class_labels: class_labels,
            state_labels: (0..nx).map(|x| format!("s{x}")).collect(),
            identity: 0,
            fixed,
            stabilizers,
            symmetry: Some(Symmetry {
                state_perms: self.table.clone(),
                dual_perms,
                generators: (0..self.elements.len()).collect(),
            }),
            dual_elements: dual,
        }
    }
}

/// Closure of a generating set in S_d.
pub fn generated_group(degree: usize, generators: &[Permutation]) -> Result<Vec<Permutation>, ActionError> {
    let id = Permutation::identity(degree);
    let mut seen: HashMap<Permutation, ()> = HashMap::new();
    seen.insert(id.clone(), ());
    let mut out = vec![id.clone()];
    let mut frontier = vec![id];
    while let Some(g) = frontier.pop() {
        for s in generators {
            let h = s.compose(&g)?;
            if seen.insert(h.clone(), ()).is_none() {
                out.push(h.clone());
                frontier.push(h);
            }
        }
    }
    Ok(out)
}

/// A random action of a random subgroup of S_3 or S_4 on at most
/// `max_states` points, assembled from natural, regular, conjugation, coset
/// and word actions restricted to random unions of orbits.
pub fn random_tabled_action<R: Rng + ?Sized>(rng: &mut R, max_states: usize) -> TabledAction {
    let degree = rng.random_range(3..=4);
    let ngens = rng.random_range(1..=2);
    let gens: Vec<Permutation> = (0..ngens).map(|_| Permutation::random(degree, rng)).collect();
    let group = generated_group(degree, &gens).expect("generators share a degree");
    let index: HashMap<&Permutation, usize> = group.iter().enumerate().map(|(i, g)| (g, i)).collect();
    let compose = |a: &Permutation, b: &Permutation| a.compose(b).expect("same degree");

    // Each candidate G-set is a list of rows, one per group element.
    let mut candidates: Vec<Vec<Vec<usize>>> = Vec::new();
    candidates.push(group.iter().map(|g| (0..degree).map(|i| g.image0(i)).collect()).collect());
    candidates.push(group.iter().map(|g| group.iter().map(|h| index[&compose(g, h)]).collect()).collect());
    candidates.push(
        group
            .iter()
            .map(|g| group.iter().map(|h| index[&h.conjugate_by(g).expect("same degree")]).collect())
            .collect(),
    );
    let binary = ActionSpec::coordinate(2, degree).expect("valid");
    candidates.push(
        group
            .iter()
            .map(|g| (0..1usize << degree).map(|x| binary.word_index(&binary.act_unchecked(g, &binary.word_at(x)))).collect())
            .collect(),
    );
    let pairs = ActionSpec::value(degree, 2).expect("valid");
    candidates.push(
        group
            .iter()
            .map(|g| (0..degree * degree).map(|x| pairs.word_index(&pairs.act_unchecked(g, &pairs.word_at(x)))).collect())
            .collect(),
    );
    // left cosets of a cyclic subgroup <c>
    let c = group[rng.random_range(0..group.len())].clone();
    let sub = generated_group(degree, &[c]).expect("same degree");
    let mut coset_of = vec![usize::MAX; group.len()];
    let mut ncosets = 0;
    for (i, g) in group.iter().enumerate() {
        if coset_of[i] == usize::MAX {
            for s in &sub {
                coset_of[index[&compose(g, s)]] = ncosets;
            }
            ncosets += 1;
        }
    }
    let reps: Vec<usize> = (0..ncosets).map(|c| coset_of.iter().position(|&v| v == c).expect("nonempty coset")).collect();
    candidates.push(
        group
            .iter()
            .map(|g| reps.iter().map(|&r| coset_of[index[&compose(g, &group[r])]]).collect())
            .collect(),
    );

    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); group.len()];
    let mut used = 0;
    let pieces = rng.random_range(1..=3);
    for _ in 0..pieces {
        let cand = &candidates[rng.random_range(0..candidates.len())];
        let orbits = components(cand[0].len(), cand);
        let mut chosen: Vec<&Vec<usize>> = orbits.iter().filter(|_| rng.random_bool(0.6)).collect();
        if chosen.is_empty() {
            chosen.push(&orbits[rng.random_range(0..orbits.len())]);
        }
        let points: Vec<usize> = chosen.into_iter().flatten().copied().collect();
        if used + points.len() > max_states {
            continue;
        }
        let local: HashMap<usize, usize> = points.iter().enumerate().map(|(i, &p)| (p, used + i)).collect();
        for (gi, row) in rows.iter_mut().enumerate() {
            row.extend(points.iter().map(|p| local[&cand[gi][*p]]));
        }
        used += points.len();
    }
    if used == 0 {
        for (gi, row) in rows.iter_mut().enumerate() {
            row.extend((0..degree).map(|i| group[gi].image0(i)));
        }
    }
    TabledAction::new(group, rows).expect("constructed from genuine actions")
}
