//! Subcommand implementations for the `burnside` binary. Every command
//! returns its report as a value so the binary and the tests share one path.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use burnside::actions::{ActionSpec, Model};
use burnside::closedforms::{
    closed_form_pi, closed_form_q, fixed_point_classes, pibar_value, q_coord_binary, q_coord_id_to_tcycle,
    q_coord_id_to_tcycle_binary, q_coord_tcycle_to_e, q_coord_tcycle_to_e_binary, qbar_value, CoordForms, ValueOverlap,
};
use burnside::dynamics::{
    bound_suite, conjugacy_lump_q, cycle_count_partition, lump_labeled, orbit_lump_k, DynamicsError, LumpFailure, StatePartition,
};
use burnside::kernels::{build_bundle, check_detailed_balance, dual_kernel_direct, is_stationary, primal_kernel_direct, ChainBundle};
use burnside::matrix::{format_rational, parse_rational, LabeledDistribution, LabeledMatrix, RationalMatrix};
use burnside::permgroup::Permutation;
use burnside::sampler::{self, Chain, ChainRun, State};
use burnside::spectra::{compare_nonzero_spectra, gap_report, intertwine_check, sig12};
use burnside::{BigInt, BigRational};
use num_traits::{One, Zero};
use serde_json::{json, Value};

/// Exit status for a failed verification.
pub const EXIT_FAIL: i32 = 1;
/// Exit status for bad arguments, caps and I/O problems.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

fn err<E: fmt::Display>(e: E) -> CliError {
    CliError(e.to_string())
}

pub fn parse_spec(model: &str, k: usize, n: usize) -> Result<ActionSpec, CliError> {
    let model: Model = model.parse().map_err(CliError)?;
    ActionSpec::new(model, n, k).map_err(err)
}

/// Accepts `p/q`, an integer, or a decimal such as `0.25` (read exactly).
pub fn parse_epsilon(text: &str) -> Result<BigRational, CliError> {
    let t = text.trim();
    let eps = match t.split_once('.') {
        Some((whole, frac)) if !t.contains('/') => {
            let digits: BigInt = format!("{whole}{frac}").parse().map_err(|_| CliError(format!("bad epsilon {text:?}")))?;
            BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32))
        }
        _ => parse_rational(t).map_err(err)?,
    };
    if eps <= BigRational::zero() || eps >= BigRational::one() {
        return Err(CliError(format!("epsilon {text} must lie strictly between 0 and 1")));
    }
    Ok(eps)
}

pub fn parse_epsilons(list: &str) -> Result<Vec<BigRational>, CliError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(parse_epsilon).collect()
}

fn bundle_for(spec: &ActionSpec) -> Result<ChainBundle, CliError> {
    build_bundle(spec).map_err(err)
}

fn header(spec: &ActionSpec) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("model".into(), json!(spec.model.to_string()));
    m.insert("k".into(), json!(spec.k));
    m.insert("n".into(), json!(spec.n));
    m
}

fn with_header(spec: &ActionSpec, body: Value) -> Value {
    let mut m = header(spec);
    if let Value::Object(b) = body {
        m.extend(b);
    }
    Value::Object(m)
}

// ---------------------------------------------------------------- build

/// The labeled matrices and laws of one bundle, keyed by file stem.
pub struct BuiltFiles {
    pub matrices: Vec<(&'static str, LabeledMatrix)>,
    pub laws: Vec<(&'static str, LabeledDistribution)>,
}

pub fn build_documents(bundle: &ChainBundle) -> BuiltFiles {
    let (d, x) = (bundle.dual_labels(), bundle.state_labels());
    let block = bundle.block_labels();
    BuiltFiles {
        matrices: vec![
            ("A", LabeledMatrix::new(bundle.a.matrix(), d, x)),
            ("B", LabeledMatrix::new(bundle.b.matrix(), x, d)),
            ("Q", LabeledMatrix::new(bundle.q.matrix(), d, d)),
            ("K", LabeledMatrix::new(bundle.k.matrix(), x, x)),
            ("M", LabeledMatrix::new(&bundle.block_flip(), &block, &block)),
        ],
        laws: vec![
            ("piQ", LabeledDistribution::new(&bundle.pi_q, d)),
            ("piK", LabeledDistribution::new(&bundle.pi_k, x)),
        ],
    }
}

pub fn build_json(spec: &ActionSpec, bundle: &ChainBundle) -> Value {
    let files = build_documents(bundle);
    let mut m = header(spec);
    m.insert("dual_labels".into(), json!(bundle.dual_labels()));
    m.insert("state_labels".into(), json!(bundle.state_labels()));
    for (name, doc) in &files.matrices {
        m.insert((*name).into(), serde_json::to_value(doc).expect("serializable"));
    }
    for (name, doc) in &files.laws {
        m.insert((*name).into(), serde_json::to_value(doc).expect("serializable"));
    }
    Value::Object(m)
}

/// Writes the bundle into `dir`: one CSV per matrix and law, or a single
/// `bundle.json`. Returns the paths written.
pub fn cmd_build(spec: &ActionSpec, dir: &Path, json_format: bool) -> Result<Vec<PathBuf>, CliError> {
    let bundle = bundle_for(spec)?;
    fs::create_dir_all(dir).map_err(|e| CliError(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: String, text: String| -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| CliError(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    };
    if json_format {
        let text = serde_json::to_string_pretty(&build_json(spec, &bundle)).expect("serializable");
        return Ok(vec![write("bundle.json".into(), text + "\n")?]);
    }
    let files = build_documents(&bundle);
    let mut out = Vec::new();
    for (name, doc) in &files.matrices {
        out.push(write(format!("{name}.csv"), doc.to_csv().map_err(err)?)?);
    }
    for (name, doc) in &files.laws {
        out.push(write(format!("{name}.csv"), doc.to_csv().map_err(err)?)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub spec: ActionSpec,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Value {
        with_header(
            &self.spec,
            json!({
                "passed": self.passed(),
                "checks": self.checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect::<Vec<_>>(),
            }),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["check", "passed", "detail"]).expect("in-memory write");
        for c in &self.checks {
            w.write_record([c.name.as_str(), if c.passed { "true" } else { "false" }, c.detail.as_str()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("verify {}\n", self.spec);
        for c in &self.checks {
            s += &format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s += if self.passed() { "result: PASS\n" } else { "result: FAIL\n" };
        s
    }
}

/// Partitions whose lumping is expected to fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LumpExpectation {
    CycleCount,
}

impl std::str::FromStr for LumpExpectation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cycle-count" => Ok(LumpExpectation::CycleCount),
            other => Err(format!("unknown partition {other:?} (expected cycle-count)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub t_max: usize,
    pub epsilons: Vec<BigRational>,
    pub expect_lump_failure: Option<LumpExpectation>,
    pub fixture: Option<PathBuf>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            t_max: burnside::dynamics::DEFAULT_T_MAX,
            epsilons: burnside::dynamics::default_epsilons(),
            expect_lump_failure: None,
            fixture: None,
        }
    }
}

type CheckResult = Result<(bool, String), String>;

fn run_check(checks: &mut Vec<Check>, name: &str, f: impl FnOnce() -> CheckResult) {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    checks.push(Check { name: name.into(), passed, detail });
}

fn yes_no(items: &[(&str, bool)]) -> (bool, String) {
    let failed: Vec<&str> = items.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        (true, items.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "))
    } else {
        (false, format!("failed: {}", failed.join(", ")))
    }
}

fn s<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Compare fixture files in `dir` with the freshly built bundle. Files that
/// are absent are skipped; at least one must be present.
fn fixture_checks(dir: &Path, bundle: &ChainBundle, checks: &mut Vec<Check>) {
    let files = build_documents(bundle);
    let mut found = 0;
    for (name, built) in &files.matrices {
        let path = dir.join(format!("{name}.csv"));
        let Ok(text) = fs::read_to_string(&path) else { continue };
        found += 1;
        run_check(checks, &format!("fixture[{name}]"), || {
            let doc = LabeledMatrix::from_csv(&text).map_err(s)?;
            if doc.rows != built.rows || doc.cols != built.cols {
                return Ok((false, "labels differ from the built matrix".into()));
            }
            let (m, b) = (doc.to_matrix().map_err(s)?, built.to_matrix().map_err(s)?);
            if let Some((i, j)) = first_difference(&m, &b) {
                return Ok((
                    false,
                    format!("entry ({}, {}) is {} but the build gives {}", doc.rows[i], doc.cols[j], format_rational(m.get(i, j)), format_rational(b.get(i, j))),
                ));
            }
            Ok((true, format!("{}x{} entries equal", m.rows(), m.cols())))
        });
    }
    for (name, built) in &files.laws {
        let path = dir.join(format!("{name}.csv"));
        let Ok(text) = fs::read_to_string(&path) else { continue };
        found += 1;
        run_check(checks, &format!("fixture[{name}]"), || {
            let doc = LabeledDistribution::from_csv(&text).map_err(s)?;
            if doc.labels != built.labels {
                return Ok((false, "labels differ from the built law".into()));
            }
            let parsed: Vec<BigRational> = doc.masses.iter().map(|m| parse_rational(m)).collect::<Result<_, _>>().map_err(s)?;
            let expected: Vec<BigRational> = built.masses.iter().map(|m| parse_rational(m)).collect::<Result<_, _>>().map_err(s)?;
            match parsed.iter().zip(&expected).position(|(a, b)| a != b) {
                Some(i) => Ok((false, format!("mass of {} is {} but the build gives {}", doc.labels[i], format_rational(&parsed[i]), format_rational(&expected[i])))),
                None => Ok((true, format!("{} masses equal", parsed.len()))),
            }
        });
    }
    if found == 0 {
        checks.push(Check { name: "fixture".into(), passed: false, detail: format!("no fixture files found in {}", dir.display()) });
    }
}

fn first_difference(a: &RationalMatrix, b: &RationalMatrix) -> Option<(usize, usize)> {
    (0..a.rows()).flat_map(|i| (0..a.cols()).map(move |j| (i, j))).find(|&(i, j)| a.get(i, j) != b.get(i, j))
}

fn closed_form_checks(spec: &ActionSpec, bundle: &ChainBundle, checks: &mut Vec<Check>) {
    let q = bundle.q.matrix();
    run_check(checks, "closed_form_matrix", || {
        let cf = closed_form_q(spec).map_err(s)?;
        let pi = closed_form_pi(spec).map_err(s)?;
        if let Some((i, j)) = first_difference(&cf, q) {
            return Ok((false, format!("Q({}, {}) closed form {} vs {}", bundle.dual_labels()[i], bundle.dual_labels()[j], format_rational(cf.get(i, j)), format_rational(q.get(i, j)))));
        }
        let pi_ok = pi.as_slice() == bundle.pi_q.masses();
        Ok((pi_ok, format!("{} entries of Q and piQ{}", q.rows() * q.cols(), if pi_ok { "" } else { " (piQ differs)" })))
    });
    run_check(checks, "closed_form_variants", || {
        let duals = &bundle.table.dual_elements;
        let mut pairs = 0usize;
        match spec.model {
            Model::Value => {
                let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
                for g in duals {
                    for h in duals {
                        let ov = ValueOverlap::new(spec.k, spec.n, g, h).map_err(s)?;
                        pairs += 1;
                        if seen.insert((ov.a, ov.j), ()).is_some() {
                            continue;
                        }
                        let st = ov.stirling();
                        if ov.expectation() != st || ov.coefficient() != st {
                            return Ok((false, format!("forms disagree at a={}, j={}", ov.a, ov.j)));
                        }
                    }
                }
            }
            Model::Coordinate => {
                let mut forms = CoordForms::new(spec.n, spec.k).map_err(s)?;
                for g in duals {
                    for h in duals {
                        let values = forms.forms(g, h).map_err(s)?;
                        pairs += 1;
                        if let Some((name, _)) = values.iter().find(|(_, v)| *v != values[0].1) {
                            return Ok((false, format!("form {name} disagrees at ({g}, {h})")));
                        }
                        if spec.k == 2 {
                            let (a, b) = q_coord_binary(spec.n, g, h).map_err(s)?;
                            if a != values[0].1 || b != values[0].1 {
                                return Ok((false, format!("binary forms disagree at ({g}, {h})")));
                            }
                        }
                    }
                }
            }
        }
        Ok((true, format!("all forms agree on {pairs} pairs")))
    });
    if spec.model == Model::Coordinate && spec.n >= 2 {
        run_check(checks, "closed_form_t_cycles", || {
            let e = bundle.table.identity;
            for t in 2..=spec.n {
                let cycle: Vec<usize> = (1..=t).collect();
                let g = Permutation::from_cycles(spec.n, &[&cycle]).map_err(s)?;
                let gi = bundle.dual_index(&g.to_string()).map_err(s)?;
                let to = q_coord_id_to_tcycle(spec.n, spec.k, t).map_err(s)?;
                let from = q_coord_tcycle_to_e(spec.n, spec.k, t).map_err(s)?;
                let mut ok = &to == q.get(e, gi) && &from == q.get(gi, e);
                if spec.k == 2 {
                    ok &= q_coord_id_to_tcycle_binary(spec.n, t).map_err(s)? == to;
                    ok &= q_coord_tcycle_to_e_binary(spec.n, t).map_err(s)? == from;
                }
                if !ok {
                    return Ok((false, format!("t-cycle entries disagree at t={t}")));
                }
            }
            Ok((true, format!("t = 2..{}", spec.n)))
        });
    }
}

fn lump_checks(spec: &ActionSpec, bundle: &ChainBundle, opts: &VerifyOptions, checks: &mut Vec<Check>) {
    run_check(checks, "lump_conjugacy_Q", || {
        let l = conjugacy_lump_q(bundle).map_err(s)?;
        Ok(yes_no(&[("kernel formula", l.formula_matches), ("class law", l.pi_formula_matches), ("reversible", l.chain.reversible)]))
    });
    run_check(checks, "lump_orbits_K", || {
        let l = orbit_lump_k(bundle).map_err(s)?;
        Ok(yes_no(&[("kernel formula", l.formula_matches), ("symmetric", l.symmetric), ("uniform law", l.uniform_pi)]))
    });
    if spec.model == Model::Value {
        run_check(checks, "lump_fixed_points_Q", || {
            let keys: Vec<String> = bundle.table.dual_elements.iter().map(|g| format!("f={}", g.fixed_point_count())).collect();
            let part = StatePartition::from_keys(&keys);
            let chain = lump_labeled(bundle.q.matrix(), &bundle.pi_q, &part, bundle.dual_labels()).map_err(s)?;
            let classes = fixed_point_classes(spec.k);
            if part.len() != classes.len() {
                return Ok((false, format!("{} blocks but {} fixed-point classes", part.len(), classes.len())));
            }
            let count = |b: usize| bundle.table.dual_elements[part.blocks()[b][0]].fixed_point_count();
            for b in 0..part.len() {
                let r = count(b);
                if chain.pi.get(b) != &pibar_value(spec.k, spec.n, r).map_err(s)? {
                    return Ok((false, format!("lumped law differs at f={r}")));
                }
                for c in 0..part.len() {
                    if chain.kernel.matrix().get(b, c) != &qbar_value(spec.k, spec.n, r, count(c)).map_err(s)? {
                        return Ok((false, format!("lumped kernel differs at ({r}, {})", count(c))));
                    }
                }
            }
            Ok((true, format!("{} classes match the closed form", part.len())))
        });
    }
    if let Some(LumpExpectation::CycleCount) = opts.expect_lump_failure {
        run_check(checks, "lump_cycle_count_fails", || {
            let part = cycle_count_partition(bundle);
            match lump_labeled(bundle.q.matrix(), &bundle.pi_q, &part, bundle.dual_labels()) {
                Ok(_) => Ok((false, "the cycle-count partition is lumpable".into())),
                Err(DynamicsError::NotLumpable(f)) => Ok((true, describe_violations(&f))),
                Err(e) => Err(e.to_string()),
            }
        });
    }
}

/// Every violation as `source -> target: low-state mass, high-state mass`.
pub fn describe_violations(f: &LumpFailure) -> String {
    f.violations
        .iter()
        .zip(&f.witness_labels)
        .map(|(v, (lo, hi))| {
            format!("{} -> {}: {} {}, {} {}", v.source_block, v.target_block, lo, format_rational(&v.low.1), hi, format_rational(&v.high.1))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Runs every check on one action; failures are collected, not raised.
pub fn cmd_verify(spec: &ActionSpec, opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    let bundle = bundle_for(spec)?;
    let mut checks = Vec::new();
    if let Some(dir) = &opts.fixture {
        fixture_checks(dir, &bundle, &mut checks);
    }
    let (a, b, q, k) = (bundle.a.matrix(), bundle.b.matrix(), bundle.q.matrix(), bundle.k.matrix());
    run_check(&mut checks, "factorization", || {
        Ok(yes_no(&[
            ("Q = AB", &a.mul(b).map_err(s)? == q),
            ("K = BA", &b.mul(a).map_err(s)? == k),
            ("Q by definition", &dual_kernel_direct(&bundle.table) == q),
            ("K by definition", &primal_kernel_direct(&bundle.table) == k),
            ("membership duality", bundle.table.membership_duality_holds()),
        ]))
    });
    run_check(&mut checks, "stationarity", || {
        Ok(yes_no(&[
            ("piQ Q = piQ", is_stationary(q, &bundle.pi_q).map_err(s)?),
            ("piK K = piK", is_stationary(k, &bundle.pi_k).map_err(s)?),
            ("piK B = piQ", b.left_mul(bundle.pi_k.masses()).map_err(s)? == bundle.pi_q.masses()),
            ("piQ A = piK", a.left_mul(bundle.pi_q.masses()).map_err(s)? == bundle.pi_k.masses()),
        ]))
    });
    run_check(&mut checks, "detailed_balance", || {
        Ok(yes_no(&[
            ("Q", check_detailed_balance(q, &bundle.pi_q).map_err(s)?),
            ("K", check_detailed_balance(k, &bundle.pi_k).map_err(s)?),
        ]))
    });
    run_check(&mut checks, "orbit_count", || {
        let burnside_z = spec.burnside_orbit_count();
        let closed = spec.closed_form_orbit_count();
        let table_z = bundle.orbit_count();
        let ok = burnside_z == closed && closed == burnside::BigUint::from(table_z);
        Ok((ok, format!("z = {closed} (Burnside {burnside_z}, table {table_z})")))
    });
    run_check(&mut checks, "spectrum", || {
        let c = compare_nonzero_spectra(q, k).map_err(s)?;
        let rank = |r: Option<usize>| r.map_or("full".to_string(), |r| r.to_string());
        Ok((
            c.equal,
            format!("nonzero spectra {}; dims {}/{}, ranks {}/{}", if c.equal { "equal" } else { "differ" }, c.dims.0, c.dims.1, rank(c.ranks.0), rank(c.ranks.1)),
        ))
    });
    run_check(&mut checks, "intertwining", || {
        let r = intertwine_check(&bundle, 1e-8).map_err(s)?;
        let (ok, mut detail) = yes_no(&[
            ("QA = AK", r.qa_equals_ak),
            ("KB = BQ", r.kb_equals_bq),
            ("eigenspaces", r.eigenspaces.iter().all(|e| e.transported && e.dim_k == e.dim_q)),
            ("numeric transport", r.numeric_ok),
        ]);
        detail += &format!("; {} exact eigenspaces", r.eigenspaces.len());
        Ok((ok, detail))
    });
    closed_form_checks(spec, &bundle, &mut checks);
    lump_checks(spec, &bundle, opts, &mut checks);
    run_check(&mut checks, "bounds", || {
        let suite = bound_suite(&bundle, opts.t_max, &opts.epsilons).map_err(s)?;
        let failures = suite.failures();
        if failures.is_empty() {
            Ok((true, format!("{} curves and {} mixing-time rows hold for t <= {}", suite.checks.len(), suite.mixing.len(), opts.t_max)))
        } else {
            Ok((false, failures[0].clone()))
        }
    });
    Ok(VerifyReport { spec: *spec, checks })
}

// ---------------------------------------------------------------- mix

pub fn cmd_mix(spec: &ActionSpec, t_max: usize, epsilons: &[BigRational], csv_format: bool) -> Result<String, CliError> {
    let bundle = bundle_for(spec)?;
    let suite = bound_suite(&bundle, t_max, epsilons).map_err(err)?;
    if csv_format {
        return Ok(suite.to_csv());
    }
    Ok(pretty(&with_header(spec, suite.to_json())))
}

// ---------------------------------------------------------------- spectrum

pub fn spectrum_json(spec: &ActionSpec) -> Result<Value, CliError> {
    let bundle = bundle_for(spec)?;
    let cmp = compare_nonzero_spectra(bundle.q.matrix(), bundle.k.matrix()).map_err(err)?;
    let rq = gap_report(bundle.q.matrix(), &bundle.pi_q).map_err(err)?;
    let rk = gap_report(bundle.k.matrix(), &bundle.pi_k).map_err(err)?;
    let side = |r: &burnside::spectra::SpectrumReport, poly: &burnside::spectra::CharPoly| {
        let mut v = r.to_json();
        v["charpoly"] = json!(poly.to_string());
        v
    };
    Ok(with_header(
        spec,
        json!({
            "nonzero_spectra_equal": cmp.equal,
            "ranks": [cmp.ranks.0, cmp.ranks.1],
            "gaps_agree": burnside::spectra::gaps_agree(&rq, &rk, 1e-9),
            "Q": side(&rq, &cmp.first),
            "K": side(&rk, &cmp.second),
        }),
    ))
}

/// Columns chain, value, multiplicity: exact roots first, then float
/// eigenvalues of any irrational remainder.
pub fn spectrum_csv(spec: &ActionSpec) -> Result<String, CliError> {
    let bundle = bundle_for(spec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["chain", "value", "multiplicity", "exact"]).map_err(err)?;
    for (name, p, pi) in [("Q", bundle.q.matrix(), &bundle.pi_q), ("K", bundle.k.matrix(), &bundle.pi_k)] {
        let r = gap_report(p, pi).map_err(err)?;
        for (root, m) in &r.exact_roots {
            w.write_record([name.to_string(), format_rational(root), m.to_string(), "true".into()]).map_err(err)?;
        }
        if !r.fully_rational() {
            let exact: Vec<f64> = r.exact_multiset().iter().map(burnside::matrix::rational_to_f64).collect();
            let mut used = vec![false; exact.len()];
            for &x in &r.float_roots {
                if let Some(i) = (0..exact.len()).find(|&i| !used[i] && (exact[i] - x).abs() < 1e-7) {
                    used[i] = true;
                    continue;
                }
                w.write_record([name.to_string(), sig12(x), "1".into(), "false".into()]).map_err(err)?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(err)?).map_err(err)
}

// ---------------------------------------------------------------- closedform

pub fn closedform_json(spec: &ActionSpec) -> Result<Value, CliError> {
    let q = closed_form_q(spec).map_err(err)?;
    let pi = closed_form_pi(spec).map_err(err)?;
    let labels: Vec<String> = spec.dual_states().map_err(err)?.iter().map(|g| g.to_string()).collect();
    let matches = match build_bundle(spec) {
        Ok(b) => Some(b.q.matrix() == &q && b.pi_q.masses() == pi.as_slice()),
        Err(_) => None,
    };
    let mut body = json!({
        "orbit_count": {"closed_form": spec.closed_form_orbit_count().to_string(), "burnside": spec.burnside_orbit_count().to_string()},
        "dual_labels": labels,
        "Q": LabeledMatrix::new(&q, &labels, &labels),
        "piQ": pi.iter().map(format_rational).collect::<Vec<_>>(),
        "matches_definition": matches,
    });
    match spec.model {
        Model::Value => {
            let classes = fixed_point_classes(spec.k);
            let mut rows = Vec::new();
            for &r in &classes {
                rows.push(classes.iter().map(|&c| qbar_value(spec.k, spec.n, r, c).map(|v| format_rational(&v))).collect::<Result<Vec<_>, _>>().map_err(err)?);
            }
            let pibar = classes.iter().map(|&c| pibar_value(spec.k, spec.n, c).map(|v| format_rational(&v))).collect::<Result<Vec<_>, _>>().map_err(err)?;
            body["fixed_point_classes"] = json!(classes);
            body["Qbar"] = json!(rows);
            body["pibar"] = json!(pibar);
        }
        Model::Coordinate => {
            let mut rows = Vec::new();
            for t in 2..=spec.n {
                let mut row = json!({
                    "t": t,
                    "Q(e,t-cycle)": format_rational(&q_coord_id_to_tcycle(spec.n, spec.k, t).map_err(err)?),
                    "Q(t-cycle,e)": format_rational(&q_coord_tcycle_to_e(spec.n, spec.k, t).map_err(err)?),
                });
                if spec.k == 2 {
                    row["binary(e,t-cycle)"] = json!(format_rational(&q_coord_id_to_tcycle_binary(spec.n, t).map_err(err)?));
                }
                rows.push(row);
            }
            body["t_cycles"] = json!(rows);
        }
    }
    Ok(with_header(spec, body))
}

// ---------------------------------------------------------------- sample

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub chain: Chain,
    pub start: Option<String>,
    pub steps: usize,
    pub seed: u64,
    pub stream: u64,
    pub thinning: usize,
    pub trajectory: Option<PathBuf>,
    pub orbit_samples: Option<usize>,
}

pub fn parse_start(spec: &ActionSpec, chain: Chain, text: &str) -> Result<State, CliError> {
    Ok(match chain {
        Chain::Primal => State::Word(spec.parse_word(text).map_err(err)?),
        Chain::Dual => State::Perm(Permutation::parse(text, spec.group_degree()).map_err(err)?),
    })
}

pub fn cmd_sample(spec: &ActionSpec, opts: &SampleOptions) -> Result<Value, CliError> {
    let start = match &opts.start {
        Some(t) => parse_start(spec, opts.chain, t)?,
        None => sampler::default_start(spec, opts.chain),
    };
    let run = ChainRun { stream: opts.stream, thinning: opts.thinning, ..ChainRun::new(*spec, opts.chain, start, opts.seed, opts.steps) };
    let outcome = sampler::run_chain(&run).map_err(err)?;
    if let Some(path) = &opts.trajectory {
        let gzip = path.extension().is_some_and(|e| e == "gz");
        sampler::write_trajectory(path, spec, &outcome.trajectory, gzip).map_err(err)?;
    }
    let mut summary = sampler::summary_json(&run, &outcome);
    if let Some(samples) = opts.orbit_samples {
        let mut rng = sampler::chain_rng(opts.seed, opts.stream.wrapping_add(1));
        let est = sampler::estimate_orbit_count(spec, samples, &mut rng).map_err(err)?;
        summary["orbit_estimate"] = json!({
            "samples": est.samples,
            "mean": sig12(est.mean),
            "std_error": sig12(est.std_error),
            "exact": est.exact.map(|z| z.to_string()),
        });
    }
    Ok(summary)
}

pub fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}
