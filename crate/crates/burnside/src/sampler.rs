//! Matrix-free simulation of both chains with seeded, reproducible streams.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::actions::{ActionError, ActionSpec, Word};
use crate::combinat::factorial;
use crate::permgroup::{graded_cmp, Permutation};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error("thinning must be at least 1")]
    Thinning,
    #[error("start state does not match the chain")]
    WrongStart,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chain {
    /// K on words.
    Primal,
    /// Q on group elements.
    Dual,
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chain::Primal => "primal",
            Chain::Dual => "dual",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum State {
    Word(Word),
    Perm(Permutation),
}

impl State {
    pub fn text(&self, spec: &ActionSpec) -> String {
        match self {
            State::Word(w) => spec.format_word(w),
            State::Perm(g) => g.to_string(),
        }
    }

    /// Exact stationary mass: |G_x|/(|G| z) or |X_g|/(|G| z).
    pub fn stationary_mass(&self, spec: &ActionSpec) -> Result<BigRational, ActionError> {
        let weight = match self {
            State::Word(w) => spec.stabilizer_size(w)?,
            State::Perm(g) => spec.fixed_set_size(g)?,
        };
        let total = factorial(spec.group_degree()) * spec.closed_form_orbit_count();
        Ok(BigRational::new(weight.into(), total.into()))
    }
}

/// One K-step: a uniform element of G_x, then a uniform word it fixes.
pub fn step_primal<R: Rng + ?Sized>(spec: &ActionSpec, x: &Word, rng: &mut R) -> Result<Word, ActionError> {
    let g = spec.sample_stabilizer_uniform(x, rng)?;
    spec.sample_fixed_word(&g, rng)
}

/// One Q-step: a uniform word fixed by g, then a uniform element of its
/// stabilizer. Derangements have no fixed word in the value model.
pub fn step_dual<R: Rng + ?Sized>(spec: &ActionSpec, g: &Permutation, rng: &mut R) -> Result<Permutation, ActionError> {
    let x = spec.sample_fixed_word(g, rng)?;
    spec.sample_stabilizer_uniform(&x, rng)
}

pub fn step<R: Rng + ?Sized>(spec: &ActionSpec, s: &State, rng: &mut R) -> Result<State, ActionError> {
    Ok(match s {
        State::Word(x) => State::Word(step_primal(spec, x, rng)?),
        State::Perm(g) => State::Perm(step_dual(spec, g, rng)?),
    })
}

/// The generator for a (seed, stream) pair.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Default start: the identity (dual) or the all-equal word (primal).
pub fn default_start(spec: &ActionSpec, chain: Chain) -> State {
    match chain {
        Chain::Primal => State::Word(Word::constant(spec.n, 0)),
        Chain::Dual => State::Perm(Permutation::identity(spec.group_degree())),
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub spec: ActionSpec,
    pub chain: Chain,
    pub start: State,
    pub seed: u64,
    pub stream: u64,
    pub steps: usize,
    /// Every `thinning`-th state is kept in the trajectory.
    pub thinning: usize,
}

impl ChainRun {
    pub fn new(spec: ActionSpec, chain: Chain, start: State, seed: u64, steps: usize) -> Self {
        ChainRun { spec, chain, start, seed, stream: 0, steps, thinning: 1 }
    }
}

/// Visit counts per state.
#[derive(Debug, Clone, Default)]
pub struct EmpiricalLaw {
    counts: HashMap<State, u64>,
    total: u64,
}

impl EmpiricalLaw {
    pub fn record(&mut self, s: &State) {
        *self.counts.entry(s.clone()).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, s: &State) -> u64 {
        self.counts.get(s).copied().unwrap_or(0)
    }

    pub fn frequency(&self, s: &State) -> f64 {
        self.count(s) as f64 / self.total as f64
    }

    pub fn support_len(&self) -> usize {
        self.counts.len()
    }

    pub fn states(&self) -> impl Iterator<Item = (&State, &u64)> {
        self.counts.iter()
    }

    /// (text, count) sorted: words lexicographically, permutations in graded order.
    pub fn sorted(&self, spec: &ActionSpec) -> Vec<(String, u64)> {
        let mut items: Vec<(&State, &u64)> = self.counts.iter().collect();
        items.sort_by(|a, b| match (a.0, b.0) {
            (State::Word(x), State::Word(y)) => x.cmp(y),
            (State::Perm(g), State::Perm(h)) => graded_cmp(g, h),
            (State::Word(_), State::Perm(_)) => std::cmp::Ordering::Less,
            (State::Perm(_), State::Word(_)) => std::cmp::Ordering::Greater,
        });
        items.into_iter().map(|(s, &c)| (s.text(spec), c)).collect()
    }

    /// TV distance to a law given on the visited states by `mass`; the mass
    /// of unvisited states is 1 − Σ_visited.
    pub fn tv_to<F: FnMut(&State) -> f64>(&self, mut mass: F) -> f64 {
        // Sorted sums so the result does not depend on hash order.
        let mut terms: Vec<(f64, f64)> =
            self.counts.iter().map(|(s, &c)| { let m = mass(s); (m, (c as f64 / self.total as f64 - m).abs()) }).collect();
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let covered: f64 = terms.iter().map(|t| t.0).sum();
        let diff: f64 = terms.iter().map(|t| t.1).sum();
        0.5 * (diff + (1.0 - covered).max(0.0))
    }

    /// TV distance to the exact stationary law.
    pub fn tv_to_stationary(&self, spec: &ActionSpec) -> Result<f64, ActionError> {
        let mut err = None;
        let v = self.tv_to(|s| match s.stationary_mass(spec) {
            Ok(m) => m.to_f64().unwrap_or(0.0),
            Err(e) => {
                err = Some(e);
                0.0
            }
        });
        err.map_or(Ok(v), Err)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub law: EmpiricalLaw,
    /// Thinned states, starting with the start state.
    pub trajectory: Vec<State>,
    pub final_state: State,
    pub tv_to_stationary: Option<f64>,
}

/// Runs the chain for `steps` updates. The occupation law counts the states
/// at times 0..=steps, so a zero-length run is the start's point mass.
pub fn run_chain(run: &ChainRun) -> Result<RunOutcome, SamplerError> {
    if run.thinning == 0 {
        return Err(SamplerError::Thinning);
    }
    match (&run.start, run.chain) {
        (State::Word(w), Chain::Primal) => run.spec.check_word(w)?,
        (State::Perm(g), Chain::Dual) => {
            if g.degree() != run.spec.group_degree() {
                return Err(ActionError::WrongDegree { expected: run.spec.group_degree(), found: g.degree() }.into());
            }
            if run.spec.fixed_set_size(g)? == BigUint::ZERO {
                return Err(ActionError::EmptyFixedSet(g.to_string()).into());
            }
        }
        _ => return Err(SamplerError::WrongStart),
    }
    let mut rng = chain_rng(run.seed, run.stream);
    let mut law = EmpiricalLaw::default();
    let mut state = run.start.clone();
    let mut trajectory = vec![state.clone()];
    law.record(&state);
    for t in 1..=run.steps {
        state = step(&run.spec, &state, &mut rng)?;
        law.record(&state);
        if t % run.thinning == 0 {
            trajectory.push(state.clone());
        }
    }
    let tv_to_stationary = Some(law.tv_to_stationary(&run.spec)?);
    Ok(RunOutcome { law, trajectory, final_state: state, tv_to_stationary })
}

/// Law of one step from `start`, from `samples` independent steps.
pub fn empirical_row(spec: &ActionSpec, start: &State, samples: usize, seed: u64) -> Result<EmpiricalLaw, ActionError> {
    let mut rng = chain_rng(seed, 1);
    let mut law = EmpiricalLaw::default();
    for _ in 0..samples {
        law.record(&step(spec, start, &mut rng)?);
    }
    Ok(law)
}

/// Writes one state per line, gzip-compressed when `gzip` is set.
pub fn write_trajectory(path: &Path, spec: &ActionSpec, states: &[State], gzip: bool) -> Result<(), SamplerError> {
    let file = BufWriter::new(File::create(path)?);
    let mut out: Box<dyn Write> = if gzip { Box::new(GzEncoder::new(file, Compression::default())) } else { Box::new(file) };
    for s in states {
        writeln!(out, "{}", s.text(spec))?;
    }
    out.flush()?;
    Ok(())
}

pub fn summary_json(run: &ChainRun, outcome: &RunOutcome) -> Value {
    let counts: Vec<Value> = outcome
        .law
        .sorted(&run.spec)
        .into_iter()
        .map(|(s, c)| json!({"state": s, "count": c}))
        .collect();
    json!({
        "model": run.spec.model.to_string(),
        "n": run.spec.n,
        "k": run.spec.k,
        "chain": run.chain.to_string(),
        "start": run.start.text(&run.spec),
        "seed": run.seed,
        "stream": run.stream,
        "steps": run.steps,
        "thinning": run.thinning,
        "final_state": outcome.final_state.text(&run.spec),
        "total_visits": outcome.law.total(),
        "distinct_states": outcome.law.support_len(),
        "tv_to_stationary": outcome.tv_to_stationary,
        "counts": counts,
    })
}

/// Monte Carlo z from uniform group elements, with the exact Burnside
/// count when the group degree is at most 10.
#[derive(Debug, Clone)]
pub struct OrbitEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub exact: Option<BigUint>,
}

pub fn estimate_orbit_count<R: Rng + ?Sized>(spec: &ActionSpec, samples: usize, rng: &mut R) -> Result<OrbitEstimate, ActionError> {
    let m = spec.group_degree();
    let samples = samples.max(1);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let g = Permutation::random(m, rng);
        let v = spec.fixed_set_size(&g)?.to_f64().unwrap_or(f64::INFINITY);
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let exact = (m <= 10).then(|| spec.burnside_orbit_count());
    Ok(OrbitEstimate { mean, std_error: (var / n).sqrt(), samples, exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_bundle;
    use crate::matrix::rational_to_f64;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn perm(m: usize, s: &str) -> Permutation {
        Permutation::parse(s, m).unwrap()
    }

    /// Empirical TV from a row of an exact kernel, over labeled states.
    fn tv_to_row(law: &EmpiricalLaw, spec: &ActionSpec, labels: &[String], row: &[BigRational]) -> f64 {
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        law.tv_to(|s| rational_to_f64(&row[index[s.text(spec).as_str()]]))
    }

    fn chi_square_uniform(counts: &[u64]) -> bool {
        let total: u64 = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let crit = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
        stat <= crit
    }

    #[test]
    fn seeded_runs_repeat() {
        let spec = ActionSpec::coordinate(2, 6).unwrap();
        let run = ChainRun::new(spec, Chain::Dual, default_start(&spec, Chain::Dual), 42, 2000);
        let a = run_chain(&run).unwrap();
        let b = run_chain(&run).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(summary_json(&run, &a), summary_json(&run, &b));
        let mut other = run.clone();
        other.stream = 7;
        assert_ne!(run_chain(&other).unwrap().trajectory, a.trajectory);
    }

    #[test]
    fn zero_length_run() {
        let spec = ActionSpec::value(3, 2).unwrap();
        let start = State::Word(spec.parse_word("12").unwrap());
        let out = run_chain(&ChainRun::new(spec, Chain::Primal, start.clone(), 1, 0)).unwrap();
        assert_eq!(out.law.total(), 1);
        assert_eq!(out.law.count(&start), 1);
        assert_eq!(out.final_state, start);
    }

    #[test]
    fn bad_starts() {
        let spec = ActionSpec::value(3, 2).unwrap();
        let der = State::Perm(perm(3, "(1 2 3)"));
        assert!(run_chain(&ChainRun::new(spec, Chain::Dual, der, 1, 5)).is_err());
        let mut rng = chain_rng(1, 0);
        assert!(step_dual(&spec, &perm(3, "(1 2 3)"), &mut rng).is_err());
        let w = State::Word(spec.parse_word("12").unwrap());
        assert!(matches!(run_chain(&ChainRun::new(spec, Chain::Dual, w, 1, 5)), Err(SamplerError::WrongStart)));
    }

    #[test]
    fn all_symbols_used_forces_identity() {
        let spec = ActionSpec::value(3, 3).unwrap();
        let x = spec.parse_word("123").unwrap();
        let mut rng = chain_rng(3, 0);
        for _ in 0..50 {
            assert!(spec.sample_stabilizer_uniform(&x, &mut rng).unwrap().is_identity());
        }
        let law = empirical_row(&spec, &State::Word(x), 27_000, 5).unwrap();
        let counts: Vec<u64> = law.states().map(|(_, &c)| c).collect();
        assert_eq!(counts.len(), 27);
        assert!(chi_square_uniform(&counts));
    }

    #[test]
    fn one_step_rows() {
        let spec = ActionSpec::value(3, 2).unwrap();
        let b = build_bundle(&spec).unwrap();
        let x = spec.parse_word("11").unwrap();
        let xi = b.state_index("11").unwrap();
        let law = empirical_row(&spec, &State::Word(x), 200_000, 11).unwrap();
        assert!(tv_to_row(&law, &spec, &b.table.state_labels, b.k.matrix().row(xi)) <= 0.01);
        let g = b.dual_index("(1 2)").unwrap();
        let law = empirical_row(&spec, &State::Perm(perm(3, "(1 2)")), 200_000, 12).unwrap();
        assert!(tv_to_row(&law, &spec, &b.table.dual_labels, b.q.matrix().row(g)) <= 0.01);

        let spec = ActionSpec::coordinate(2, 3).unwrap();
        let b = build_bundle(&spec).unwrap();
        let law = empirical_row(&spec, &State::Word(spec.parse_word("000").unwrap()), 200_000, 13).unwrap();
        assert!(tv_to_row(&law, &spec, &b.table.state_labels, b.k.matrix().row(0)) <= 0.01);
        let law = empirical_row(&spec, &State::Perm(Permutation::identity(3)), 200_000, 14).unwrap();
        assert!(tv_to_row(&law, &spec, &b.table.dual_labels, b.q.matrix().row(0)) <= 0.01);
    }

    #[test]
    fn n_cycle_row_is_flat() {
        let spec = ActionSpec::coordinate(3, 4).unwrap();
        let law = empirical_row(&spec, &State::Perm(perm(4, "(1 2 3 4)")), 48_000, 9).unwrap();
        assert_eq!(law.support_len(), 24);
        assert!(law.tv_to(|_| 1.0 / 24.0) <= 0.01);
    }

    #[test]
    fn fixed_word_sampler_uniform() {
        let spec = ActionSpec::coordinate(2, 6).unwrap();
        let g = perm(6, "(1 2)(3 4)");
        let mut rng = chain_rng(17, 0);
        let mut counts: HashMap<Word, u64> = HashMap::new();
        for _ in 0..32_000 {
            *counts.entry(spec.sample_fixed_word(&g, &mut rng).unwrap()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 16);
        assert!(counts.keys().all(|w| spec.is_fixed(&g, w)));
        assert!(chi_square_uniform(&counts.values().copied().collect::<Vec<_>>()));
    }

    #[test]
    fn stabilizer_sampler_uniform() {
        let spec = ActionSpec::coordinate(2, 6).unwrap();
        let x = spec.parse_word("000111").unwrap();
        let mut rng = chain_rng(19, 0);
        let mut counts: HashMap<Permutation, u64> = HashMap::new();
        for _ in 0..36_000 {
            *counts.entry(spec.sample_stabilizer_uniform(&x, &mut rng).unwrap()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 36);
        assert!(counts.keys().all(|g| spec.is_fixed(g, &x)));
        assert!(chi_square_uniform(&counts.values().copied().collect::<Vec<_>>()));
    }

    #[test]
    fn dual_stays_in_support() {
        let spec = ActionSpec::value(4, 2).unwrap();
        let run = ChainRun::new(spec, Chain::Dual, default_start(&spec, Chain::Dual), 23, 5000);
        let out = run_chain(&run).unwrap();
        for (s, _) in out.law.states() {
            let State::Perm(g) = s else { panic!() };
            assert!(g.fixed_point_count() > 0);
        }
    }

    #[test]
    fn stationary_masses_match_bundle() {
        for spec in [ActionSpec::value(3, 2).unwrap(), ActionSpec::coordinate(2, 3).unwrap()] {
            let b = build_bundle(&spec).unwrap();
            for (i, g) in b.table.dual_elements.iter().enumerate() {
                assert_eq!(&State::Perm(g.clone()).stationary_mass(&spec).unwrap(), b.pi_q.get(i));
            }
            for x in 0..b.table.state_len() {
                assert_eq!(&State::Word(spec.word_at(x)).stationary_mass(&spec).unwrap(), b.pi_k.get(x));
            }
        }
    }

    #[test]
    fn orbit_estimates() {
        let mut rng = chain_rng(29, 0);
        for spec in [ActionSpec::coordinate(3, 4).unwrap(), ActionSpec::value(5, 4).unwrap()] {
            let est = estimate_orbit_count(&spec, 100_000, &mut rng).unwrap();
            assert!((est.mean - 15.0).abs() <= 3.0 * est.std_error, "{est:?}");
            assert_eq!(est.exact, Some(BigUint::from(15u32)));
        }
    }

    #[test]
    fn trajectory_dump_roundtrip() {
        use std::io::Read;
        let spec = ActionSpec::coordinate(2, 3).unwrap();
        let run = ChainRun { thinning: 2, ..ChainRun::new(spec, Chain::Primal, default_start(&spec, Chain::Primal), 3, 10) };
        let out = run_chain(&run).unwrap();
        assert_eq!(out.trajectory.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.gz");
        write_trajectory(&path, &spec, &out.trajectory, true).unwrap();
        let mut text = String::new();
        flate2::read::GzDecoder::new(File::open(&path).unwrap()).read_to_string(&mut text).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next(), Some("000"));
    }
}
