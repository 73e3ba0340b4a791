//! The legs A (G* → X) and B (X → G*), the kernels Q = AB and K = BA, the
//! block-flip matrix M and both stationary laws.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

pub use crate::matrix::{Distribution, RationalMatrix, StochasticMatrix};
use crate::actions::{ActionError, ActionSpec, ActionTable};
use crate::matrix::{format_rational, MatrixError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("entry Q({row},{col}) is zero")]
    ZeroEntry { row: String, col: String },
    #[error("floor violated at ({row},{col}): {value} < {floor}")]
    FloorViolated { row: String, col: String, value: String, floor: String },
    #[error("unknown state label {0:?}")]
    UnknownLabel(String),
}

/// A(g, x) = 1[x ∈ X_g]/|X_g| and B(x, h) = 1[h ∈ G_x]/|G_x|.
pub fn build_legs(table: &ActionTable) -> Result<(StochasticMatrix, StochasticMatrix), KernelError> {
    let (nd, nx) = (table.dual_len(), table.state_len());
    let mut a = RationalMatrix::zeros(nd, nx);
    for (g, xs) in table.fixed.iter().enumerate() {
        let w = BigRational::new(BigInt::one(), BigInt::from(xs.len()));
        for &x in xs {
            a.set(g, x, w.clone());
        }
    }
    let mut b = RationalMatrix::zeros(nx, nd);
    for (x, hs) in table.stabilizers.iter().enumerate() {
        let w = BigRational::new(BigInt::one(), BigInt::from(hs.len()));
        for &h in hs {
            b.set(x, h, w.clone());
        }
    }
    Ok((StochasticMatrix::new(a)?, StochasticMatrix::new(b)?))
}

/// Exact rows from integer numerators over per-row denominators.
fn assemble(numerators: Vec<Vec<u128>>, denominators: Vec<BigUint>) -> RationalMatrix {
    let rows = numerators
        .into_iter()
        .zip(denominators)
        .map(|(row, d)| {
            let d = BigInt::from(d);
            row.into_iter()
                .map(|v| if v == 0 { BigRational::zero() } else { BigRational::new(BigInt::from(v), d.clone()) })
                .collect()
        })
        .collect();
    RationalMatrix::from_rows(rows).expect("rectangular by construction")
}

fn lcm_of(values: impl Iterator<Item = usize>) -> BigUint {
    values.fold(BigUint::one(), |acc, v| acc.lcm(&BigUint::from(v)))
}

/// Q(g, h) = Σ_{x ∈ X_g ∩ X_h} 1/(|X_g| |G_x|), straight from the definition.
pub fn dual_kernel_direct(table: &ActionTable) -> RationalMatrix {
    let nd = table.dual_len();
    let l = lcm_of(table.stabilizers.iter().map(Vec::len));
    match l.to_u128() {
        Some(l128) => {
            let mut nums = Vec::with_capacity(nd);
            let mut dens = Vec::with_capacity(nd);
            for xs in &table.fixed {
                let mut row = vec![0u128; nd];
                for &x in xs {
                    let w = l128 / table.stabilizers[x].len() as u128;
                    for &h in &table.stabilizers[x] {
                        row[h] += w;
                    }
                }
                nums.push(row);
                dens.push(&l * BigUint::from(xs.len()));
            }
            assemble(nums, dens)
        }
        None => {
            let mut q = RationalMatrix::zeros(nd, nd);
            for (g, xs) in table.fixed.iter().enumerate() {
                for &x in xs {
                    let w = BigRational::new(BigInt::one(), BigInt::from(xs.len() * table.stabilizers[x].len()));
                    for &h in &table.stabilizers[x] {
                        let v = q.get(g, h) + &w;
                        q.set(g, h, v);
                    }
                }
            }
            q
        }
    }
}

/// K(x, y) = Σ_{g ∈ G_x ∩ G_y} 1/(|G_x| |X_g|), straight from the definition.
pub fn primal_kernel_direct(table: &ActionTable) -> RationalMatrix {
    let nx = table.state_len();
    let l = lcm_of(table.fixed.iter().map(Vec::len));
    match l.to_u128() {
        Some(l128) => {
            let mut nums = Vec::with_capacity(nx);
            let mut dens = Vec::with_capacity(nx);
            for hs in &table.stabilizers {
                let mut row = vec![0u128; nx];
                for &g in hs {
                    let w = l128 / table.fixed[g].len() as u128;
                    for &y in &table.fixed[g] {
                        row[y] += w;
                    }
                }
                nums.push(row);
                dens.push(&l * BigUint::from(hs.len()));
            }
            assemble(nums, dens)
        }
        None => {
            let mut k = RationalMatrix::zeros(nx, nx);
            for (x, hs) in table.stabilizers.iter().enumerate() {
                for &g in hs {
                    let w = BigRational::new(BigInt::one(), BigInt::from(hs.len() * table.fixed[g].len()));
                    for &y in &table.fixed[g] {
                        let v = k.get(x, y) + &w;
                        k.set(x, y, v);
                    }
                }
            }
            k
        }
    }
}

/// πQ(g) = |X_g| / (|G| z).
pub fn dual_stationary(table: &ActionTable) -> Distribution {
    let total: usize = table.fixed.iter().map(Vec::len).sum();
    // total = |G| z by Burnside
    debug_assert_eq!(total % table.group_order, 0);
    let d = BigInt::from(total);
    Distribution::new(table.fixed.iter().map(|xs| BigRational::new(BigInt::from(xs.len()), d.clone())).collect())
        .expect("masses sum to one by construction")
}

/// πK(x) = |G_x| / Σ_u |G_u|.
pub fn primal_stationary(table: &ActionTable) -> Distribution {
    let total: usize = table.stabilizers.iter().map(Vec::len).sum();
    let d = BigInt::from(total);
    Distribution::new(table.stabilizers.iter().map(|hs| BigRational::new(BigInt::from(hs.len()), d.clone())).collect())
        .expect("masses sum to one by construction")
}

/// Everything assembled for one action.
#[derive(Debug, Clone)]
pub struct ChainBundle {
    pub spec: Option<ActionSpec>,
    pub table: ActionTable,
    pub a: StochasticMatrix,
    pub b: StochasticMatrix,
    pub q: StochasticMatrix,
    pub k: StochasticMatrix,
    pub pi_q: Distribution,
    pub pi_k: Distribution,
}

/// Assemble the bundle of a concrete model.
pub fn build_bundle(spec: &ActionSpec) -> Result<ChainBundle, KernelError> {
    let table = spec.table()?;
    ChainBundle::from_table(table, Some(*spec))
}

impl ChainBundle {
    pub fn from_table(table: ActionTable, spec: Option<ActionSpec>) -> Result<Self, KernelError> {
        let (a, b) = build_legs(&table)?;
        let q = StochasticMatrix::new(a.mul(&b)?)?;
        let k = StochasticMatrix::new(b.mul(&a)?)?;
        let pi_q = dual_stationary(&table);
        let pi_k = primal_stationary(&table);
        Ok(ChainBundle { spec, table, a, b, q, k, pi_q, pi_k })
    }

    pub fn dual_labels(&self) -> &[String] {
        &self.table.dual_labels
    }

    pub fn state_labels(&self) -> &[String] {
        &self.table.state_labels
    }

    pub fn dual_index(&self, label: &str) -> Result<usize, KernelError> {
        self.table.dual_labels.iter().position(|l| l == label).ok_or_else(|| KernelError::UnknownLabel(label.into()))
    }

    pub fn state_index(&self, label: &str) -> Result<usize, KernelError> {
        self.table.state_labels.iter().position(|l| l == label).ok_or_else(|| KernelError::UnknownLabel(label.into()))
    }

    /// M = [[0, A], [B, 0]] on G* ⊔ X; built on demand because it is large.
    pub fn block_flip(&self) -> RationalMatrix {
        let (nd, nx) = (self.table.dual_len(), self.table.state_len());
        RationalMatrix::block(&RationalMatrix::zeros(nd, nd), &self.a, &self.b, &RationalMatrix::zeros(nx, nx))
            .expect("leg shapes are compatible")
    }

    /// Labels of M's index set: G* first, then X.
    pub fn block_labels(&self) -> Vec<String> {
        self.table.dual_labels.iter().chain(&self.table.state_labels).cloned().collect()
    }

    /// |X_g| for the dual state with index g.
    pub fn fixed_size(&self, g: usize) -> usize {
        self.table.fixed[g].len()
    }

    /// |G_x| for the state with index x.
    pub fn stabilizer_size(&self, x: usize) -> usize {
        self.table.stabilizers[x].len()
    }

    /// Number of orbits z = Σ_g |X_g| / |G|.
    pub fn orbit_count(&self) -> usize {
        self.table.fixed.iter().map(Vec::len).sum::<usize>() / self.table.group_order
    }
}

/// π(i) P(i, j) = π(j) P(j, i) for all i, j.
pub fn check_detailed_balance(p: &RationalMatrix, pi: &Distribution) -> Result<bool, KernelError> {
    if !p.is_square() || p.rows() != pi.len() {
        return Err(MatrixError::DimensionMismatch("kernel and distribution".into()).into());
    }
    for i in 0..p.rows() {
        for j in i + 1..p.rows() {
            if pi.get(i) * p.get(i, j) != pi.get(j) * p.get(j, i) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// π P = π.
pub fn is_stationary(p: &RationalMatrix, pi: &Distribution) -> Result<bool, KernelError> {
    Ok(p.left_mul(pi.masses())? == pi.masses())
}

/// Q(g, h)/Q(h, g) for dual indices g, h.
pub fn reversibility_ratio(bundle: &ChainBundle, g: usize, h: usize) -> Result<BigRational, KernelError> {
    let back = bundle.q.get(h, g);
    if back.is_zero() {
        return Err(KernelError::ZeroEntry {
            row: bundle.table.dual_labels[h].clone(),
            col: bundle.table.dual_labels[g].clone(),
        });
    }
    Ok(bundle.q.get(g, h) / back)
}

/// Q(g, g) = Q(g, e) for every g.
pub fn diagonal_equals_e_column(bundle: &ChainBundle) -> bool {
    let e = bundle.table.identity;
    (0..bundle.table.dual_len()).all(|g| bundle.q.get(g, g) == bundle.q.get(g, e))
}

/// δ = 1/max_u |G_u|, after checking Q(g, e) ≥ δ and K(x, y) ≥ δ/|X|.
pub fn doeblin_floor(bundle: &ChainBundle) -> Result<BigRational, KernelError> {
    let m = bundle.table.stabilizers.iter().map(Vec::len).max().unwrap_or(1);
    let delta = BigRational::new(BigInt::one(), BigInt::from(m));
    let e = bundle.table.identity;
    for g in 0..bundle.table.dual_len() {
        if bundle.q.get(g, e) < &delta {
            return Err(KernelError::FloorViolated {
                row: bundle.table.dual_labels[g].clone(),
                col: bundle.table.dual_labels[e].clone(),
                value: format_rational(bundle.q.get(g, e)),
                floor: format_rational(&delta),
            });
        }
    }
    let nx = bundle.table.state_len();
    let floor_k = &delta / BigRational::from_integer(BigInt::from(nx));
    for x in 0..nx {
        for y in 0..nx {
            if bundle.k.get(x, y) < &floor_k {
                return Err(KernelError::FloorViolated {
                    row: bundle.table.state_labels[x].clone(),
                    col: bundle.table.state_labels[y].clone(),
                    value: format_rational(bundle.k.get(x, y)),
                    floor: format_rational(&floor_k),
                });
            }
        }
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{random_tabled_action, Model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn small_bundles() -> Vec<ChainBundle> {
        let mut out = Vec::new();
        for model in [Model::Value, Model::Coordinate] {
            for k in 1..=3 {
                for n in 1..=3 {
                    out.push(build_bundle(&ActionSpec::new(model, n, k).unwrap()).unwrap());
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            out.push(ChainBundle::from_table(random_tabled_action(&mut rng, 24).table(), None).unwrap());
        }
        out
    }

    #[test]
    fn value_worked_example() {
        let b = build_bundle(&ActionSpec::value(3, 2).unwrap()).unwrap();
        let expect_q =
            RationalMatrix::from_integer_rows(q(1, 18), &[&[15, 1, 1, 1], &[9, 9, 0, 0], &[9, 0, 9, 0], &[9, 0, 0, 9]])
                .unwrap();
        assert_eq!(b.q.matrix(), &expect_q);
        let a = b.a.matrix();
        assert!(a.row(0).iter().all(|v| *v == q(1, 9)));
        assert_eq!(a.get(1, 8), &q(1, 1));
        assert_eq!(a.get(2, 4), &q(1, 1));
        assert_eq!(a.get(3, 0), &q(1, 1));
        assert_eq!(b.pi_q.masses(), &[q(3, 4), q(1, 12), q(1, 12), q(1, 12)]);
        assert!(diagonal_equals_e_column(&b));
        assert_eq!(reversibility_ratio(&b, 1, 0).unwrap(), q(9, 1));
        assert_eq!(reversibility_ratio(&b, 2, 2).unwrap(), q(1, 1));
        assert_eq!(doeblin_floor(&b).unwrap(), q(1, 2));
        assert!(matches!(reversibility_ratio(&b, 1, 2), Err(KernelError::ZeroEntry { .. })));
    }

    #[test]
    fn coordinate_worked_example() {
        let b = build_bundle(&ActionSpec::coordinate(2, 3).unwrap()).unwrap();
        assert_eq!(b.pi_q.masses(), &[q(1, 3), q(1, 6), q(1, 6), q(1, 6), q(1, 12), q(1, 12)]);
        assert!(is_stationary(&b.q, &b.pi_q).unwrap());
        assert_eq!(reversibility_ratio(&b, 4, 0).unwrap(), q(4, 1));
        assert_eq!(doeblin_floor(&b).unwrap(), q(1, 6));
        let expect_k_row0 = [5, 1, 1, 1, 1, 1, 1, 5].map(|v| q(v, 16));
        assert_eq!(b.k.row(0), &expect_k_row0);
    }

    #[test]
    fn single_state_dual() {
        let b = build_bundle(&ActionSpec::value(2, 5).unwrap()).unwrap();
        assert_eq!(b.q.rows(), 1);
        assert_eq!(b.pi_q.masses(), &[q(1, 1)]);
    }

    #[test]
    fn factorization_and_block_flip() {
        for b in small_bundles() {
            assert_eq!(b.q.matrix(), &dual_kernel_direct(&b.table));
            assert_eq!(b.k.matrix(), &primal_kernel_direct(&b.table));
            let m = b.block_flip();
            let m2 = m.mul(&m).unwrap();
            let (nd, nx) = (b.table.dual_len(), b.table.state_len());
            assert_eq!(m2.slice(0..nd, 0..nd), *b.q.matrix());
            assert_eq!(m2.slice(nd..nd + nx, nd..nd + nx), *b.k.matrix());
            assert!(m2.slice(0..nd, nd..nd + nx).entries().iter().all(Zero::is_zero));
            assert!(m2.slice(nd..nd + nx, 0..nd).entries().iter().all(Zero::is_zero));
        }
    }

    #[test]
    fn stationary_laws_and_transfer() {
        for b in small_bundles() {
            assert!(is_stationary(&b.q, &b.pi_q).unwrap());
            assert!(is_stationary(&b.k, &b.pi_k).unwrap());
            assert!(check_detailed_balance(&b.q, &b.pi_q).unwrap());
            assert!(check_detailed_balance(&b.k, &b.pi_k).unwrap());
            assert_eq!(b.b.left_mul(b.pi_k.masses()).unwrap(), b.pi_q.masses());
            assert_eq!(b.a.left_mul(b.pi_q.masses()).unwrap(), b.pi_k.masses());
        }
    }

    #[test]
    fn resolvent_identity() {
        for b in small_bundles().into_iter().take(8) {
            let mut kpow = RationalMatrix::identity(b.table.state_len());
            let mut qpow = b.q.matrix().clone();
            for _t in 1..=5 {
                let via_k = b.a.mul(&kpow).unwrap().mul(&b.b).unwrap();
                assert_eq!(via_k, qpow);
                kpow = kpow.mul(&b.k).unwrap();
                qpow = qpow.mul(&b.q).unwrap();
            }
        }
    }

    #[test]
    fn positivity_pattern() {
        for b in small_bundles() {
            let e = b.table.identity;
            for g in 0..b.table.dual_len() {
                assert!(b.q.get(g, g) > &BigRational::zero());
                assert!(b.q.get(g, e) > &BigRational::zero());
                assert!(b.q.get(e, g) > &BigRational::zero());
            }
            assert!(diagonal_equals_e_column(&b));
            doeblin_floor(&b).unwrap();
            if b.spec.is_some() {
                assert!(b.k.entries().iter().all(|v| v > &BigRational::zero()));
            }
        }
    }

    #[test]
    fn reversibility_ratio_is_fixed_set_ratio() {
        for b in small_bundles() {
            for g in 0..b.table.dual_len() {
                for h in 0..b.table.dual_len() {
                    if let Ok(r) = reversibility_ratio(&b, g, h) {
                        assert_eq!(r, q(b.fixed_size(h) as i64, b.fixed_size(g) as i64));
                    }
                }
            }
        }
    }

    #[test]
    fn detailed_balance_detects_perturbation() {
        let b = build_bundle(&ActionSpec::coordinate(2, 3).unwrap()).unwrap();
        let mut p = b.q.matrix().clone();
        let (x, y) = (p.get(0, 1).clone(), p.get(0, 2).clone());
        p.set(0, 1, y);
        p.set(0, 2, x.clone());
        p.set(1, 0, p.get(1, 0) + q(1, 24));
        p.set(1, 1, p.get(1, 1) - q(1, 24));
        assert!(!check_detailed_balance(&p, &b.pi_q).unwrap());
    }

    #[test]
    fn floor_for_trivial_stabilizers() {
        // regular action: every stabilizer is trivial
        let g = crate::actions::generated_group(3, &[crate::permgroup::Permutation::parse("(1 2 3)", 3).unwrap()]).unwrap();
        let idx: std::collections::HashMap<_, _> = g.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let table: Vec<Vec<usize>> = g.iter().map(|a| g.iter().map(|h| idx[&a.compose(h).unwrap()]).collect()).collect();
        let act = crate::actions::TabledAction::new(g, table).unwrap();
        let b = ChainBundle::from_table(act.table(), None).unwrap();
        assert_eq!(doeblin_floor(&b).unwrap(), q(1, 1));
    }
}
