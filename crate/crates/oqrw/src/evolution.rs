//! Block density matrices and the completely positive walk map
//! `ρ'_i = Σ_j B^i_j ρ_j B^{i*}_j`.
//!
//! The map is never materialized on the product space; every operation works
//! block-wise, at cost `|transitions| · h_dim³` per step. The dense
//! invariant-state solver is the one place where the vectorized
//! `(h_dim²·N) × (h_dim²·N)` matrix of the map is formed explicitly.

use std::collections::BTreeMap;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::observable::BlockObservable;
use crate::scalar::{real, to_f64, Scalar};
use crate::walk::{SiteIndex, TransitionFamily};

/// Default tolerance on `|Σ_i Tr ρ_i − 1|`.
pub const DEFAULT_TRACE_TOL: f64 = 1e-9;
/// Hermiticity tolerance per block.
pub const BLOCK_HERMITIAN_TOL: f64 = 1e-12;
/// Smallest admissible block eigenvalue.
pub const BLOCK_PSD_FLOOR: f64 = -1e-9;

/// Density matrix of the form `Σ_i ρ_i ⊗ |i⟩⟨i|`, stored as its positive
/// site blocks. Absent sites are zero blocks.
#[derive(Debug, Clone)]
pub struct BlockState<T: Scalar> {
    h_dim: usize,
    blocks: BTreeMap<usize, CMatrix<T>>,
    trace_tol: T,
}

impl<T: Scalar> BlockState<T> {
    pub fn new(h_dim: usize, blocks: Vec<(SiteIndex, CMatrix<T>)>) -> Result<Self> {
        Self::with_trace_tol(h_dim, blocks, real::<T>(DEFAULT_TRACE_TOL))
    }

    pub fn with_trace_tol(
        h_dim: usize,
        blocks: Vec<(SiteIndex, CMatrix<T>)>,
        trace_tol: T,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (site, m) in blocks {
            linalg::check_operator(&m, h_dim, &format!("state block at site {site}"))?;
            let herm = linalg::hermitian_residual(&m);
            if herm > real::<T>(BLOCK_HERMITIAN_TOL) {
                return Err(Error::InvalidInput {
                    kind: "state",
                    reason: format!(
                        "block at site {site} not Hermitian (residual {:.3e})",
                        to_f64(herm)
                    ),
                });
            }
            let min_eig = linalg::min_eigenvalue(&m);
            if min_eig < real::<T>(BLOCK_PSD_FLOOR) {
                return Err(Error::InvalidInput {
                    kind: "state",
                    reason: format!(
                        "block at site {site} not positive semidefinite (min eigenvalue {:.3e})",
                        to_f64(min_eig)
                    ),
                });
            }
            if map.insert(site.0, m).is_some() {
                return Err(Error::InvalidInput {
                    kind: "state",
                    reason: format!("duplicate block at site {site}"),
                });
            }
        }
        let state = Self {
            h_dim,
            blocks: map,
            trace_tol,
        };
        let total = state.total_trace();
        if (total - T::one()).abs() > trace_tol {
            return Err(Error::InvalidInput {
                kind: "state",
                reason: format!(
                    "total trace {:.12e} is not 1 within {:.1e}",
                    to_f64(total),
                    to_f64(trace_tol)
                ),
            });
        }
        Ok(state)
    }

    /// Blocks that are known-good by construction (used by [`step`], whose
    /// output inherits the invariants from a strict-mode family).
    pub(crate) fn from_raw(
        h_dim: usize,
        blocks: BTreeMap<usize, CMatrix<T>>,
        trace_tol: T,
    ) -> Self {
        Self {
            h_dim,
            blocks,
            trace_tol,
        }
    }

    /// `ρ₀ ⊗ |site⟩⟨site|`.
    pub fn point(h_dim: usize, site: SiteIndex, block: CMatrix<T>) -> Result<Self> {
        Self::new(h_dim, vec![(site, block)])
    }

    /// Uniform state with `I/(h_dim·n_sites)` on every site.
    pub fn maximally_mixed(h_dim: usize, n_sites: usize) -> Self {
        let w = T::one() / real::<T>((h_dim * n_sites) as f64);
        let blocks = (0..n_sites)
            .map(|s| (s, linalg::identity::<T>(h_dim) * Complex::new(w, T::zero())))
            .collect();
        Self {
            h_dim,
            blocks,
            trace_tol: real::<T>(DEFAULT_TRACE_TOL),
        }
    }

    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    pub fn trace_tol(&self) -> T {
        self.trace_tol
    }

    pub fn block(&self, site: SiteIndex) -> Option<&CMatrix<T>> {
        self.blocks.get(&site.0)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (SiteIndex, &CMatrix<T>)> {
        self.blocks.iter().map(|(s, m)| (SiteIndex(*s), m))
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `Tr ρ_site`, zero for absent blocks.
    pub fn trace_at(&self, site: SiteIndex) -> T {
        self.block(site)
            .map(linalg::trace_re)
            .unwrap_or_else(T::zero)
    }

    pub fn total_trace(&self) -> T {
        self.blocks
            .values()
            .map(linalg::trace_re)
            .fold(T::zero(), |acc, t| acc + t)
    }

    /// Global Frobenius distance, absent blocks as zero.
    pub fn distance(&self, other: &Self) -> T {
        let sites: std::collections::BTreeSet<usize> = self
            .blocks
            .keys()
            .chain(other.blocks.keys())
            .copied()
            .collect();
        let zero = linalg::zeros::<T>(self.h_dim);
        let mut acc = T::zero();
        for s in sites {
            let a = self.blocks.get(&s).unwrap_or(&zero);
            let b = other.blocks.get(&s).unwrap_or(&zero);
            let d = linalg::fro_dist(a, b);
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Largest per-block distance to another state.
    pub fn max_block_distance(&self, other: &Self) -> T {
        let sites: std::collections::BTreeSet<usize> = self
            .blocks
            .keys()
            .chain(other.blocks.keys())
            .copied()
            .collect();
        let zero = linalg::zeros::<T>(self.h_dim);
        let mut worst = T::zero();
        for s in sites {
            let a = self.blocks.get(&s).unwrap_or(&zero);
            let b = other.blocks.get(&s).unwrap_or(&zero);
            let d = linalg::fro_dist(a, b);
            if d > worst {
                worst = d;
            }
        }
        worst
    }
}

fn ensure_dims<T: Scalar>(family: &TransitionFamily<T>, h_dim: usize, context: &str) -> Result<()> {
    if family.h_dim() != h_dim {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: family.h_dim(),
            found: h_dim,
        });
    }
    Ok(())
}

/// One application of the walk map: `ρ'_i = Σ_j B^i_j ρ_j B^{i*}_j`.
pub fn step<T: Scalar>(
    family: &TransitionFamily<T>,
    state: &BlockState<T>,
) -> Result<BlockState<T>> {
    ensure_dims(family, state.h_dim(), "step")?;
    let mut out: BTreeMap<usize, CMatrix<T>> = BTreeMap::new();
    for (site, rho) in state.blocks() {
        for (target, b) in family.transitions_from(site) {
            let contrib = b * rho * b.adjoint();
            match out.get_mut(target) {
                Some(acc) => *acc += contrib,
                None => {
                    out.insert(*target, contrib);
                }
            }
        }
    }
    out.retain(|_, m| linalg::fro_norm(m) > T::zero());
    Ok(BlockState::from_raw(state.h_dim(), out, state.trace_tol()))
}

/// `n`-fold composition of [`step`]; `n = 0` is the identity.
pub fn evolve<T: Scalar>(
    family: &TransitionFamily<T>,
    state: &BlockState<T>,
    n: usize,
) -> Result<BlockState<T>> {
    let mut current = state.clone();
    for _ in 0..n {
        current = step(family, &current)?;
    }
    Ok(current)
}

/// Site occupation probabilities `p_i = Tr ρ_i` over the stored blocks.
pub fn position_distribution<T: Scalar>(state: &BlockState<T>) -> Vec<(SiteIndex, T)> {
    state
        .blocks()
        .map(|(site, m)| (site, linalg::trace_re(m)))
        .collect()
}

/// Heisenberg-picture adjoint of the walk map on block-diagonal observables:
/// the block at a source `j` is `Σ_i B^{i*}_j y_ii B^i_j`.
pub fn adjoint_apply<T: Scalar>(
    family: &TransitionFamily<T>,
    observable: &BlockObservable<T>,
) -> Result<BlockObservable<T>> {
    ensure_dims(family, observable.h_dim(), "adjoint_apply")?;
    let mut blocks = Vec::new();
    for j in family.source_sites() {
        let mut acc = linalg::zeros::<T>(family.h_dim());
        for (i, b) in family.transitions_from(j) {
            if let Some(y) = observable.block(SiteIndex(*i)) {
                acc += b.adjoint() * y * b;
            }
        }
        blocks.push((j, acc));
    }
    BlockObservable::new(family.h_dim(), blocks)
}

/// How [`find_invariant_state`] looks for a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantMethod {
    /// Repeated application of [`step`] from the maximally mixed seed.
    PowerIteration,
    /// Vectorize the map, extract the eigenvalue-1 subspace by SVD and
    /// project the maximally mixed state onto it.
    DenseEigen,
}

#[derive(Debug, Clone)]
pub struct InvariantOpts<T> {
    pub method: InvariantMethod,
    pub max_iters: usize,
    pub tol: T,
}

impl<T: Scalar> Default for InvariantOpts<T> {
    fn default() -> Self {
        Self {
            method: InvariantMethod::DenseEigen,
            max_iters: 100_000,
            tol: real::<T>(1e-10),
        }
    }
}

/// A fixed point of the walk map together with its certificate.
#[derive(Debug, Clone)]
pub struct InvariantSolution<T: Scalar> {
    pub state: BlockState<T>,
    /// `‖M(ρ) − ρ‖_F` of the returned state.
    pub residual: T,
    /// Iterations used (power method only).
    pub iterations: Option<usize>,
    /// Dimension of the eigenvalue-1 subspace (dense method only);
    /// a value above 1 flags non-uniqueness, which is reported, not resolved.
    pub multiplicity: Option<usize>,
}

/// Finds a state `ρ` with `‖M(ρ) − ρ‖_F ≤ opts.tol`.
pub fn find_invariant_state<T: Scalar>(
    family: &TransitionFamily<T>,
    opts: &InvariantOpts<T>,
) -> Result<InvariantSolution<T>> {
    match opts.method {
        InvariantMethod::PowerIteration => power_iteration(family, opts),
        InvariantMethod::DenseEigen => dense_eigen(family, opts),
    }
}

fn power_iteration<T: Scalar>(
    family: &TransitionFamily<T>,
    opts: &InvariantOpts<T>,
) -> Result<InvariantSolution<T>> {
    let mut current = BlockState::maximally_mixed(family.h_dim(), family.n_sites());
    let mut residual = T::zero();
    for k in 0..=opts.max_iters {
        let next = step(family, &current)?;
        residual = current.distance(&next);
        if residual <= opts.tol {
            return Ok(InvariantSolution {
                state: current,
                residual,
                iterations: Some(k),
                multiplicity: None,
            });
        }
        current = next;
    }
    Err(Error::NoInvariantState(format!(
        "power iteration did not converge in {} iterations (last residual {:.3e})",
        opts.max_iters,
        to_f64(residual)
    )))
}

/// Column-major vectorization of all blocks, site-ordered.
fn vectorize_state<T: Scalar>(state: &BlockState<T>, n_sites: usize) -> CVector<T> {
    let h = state.h_dim();
    let mut v = CVector::<T>::zeros(n_sites * h * h);
    for (site, m) in state.blocks() {
        for (k, z) in m.as_slice().iter().enumerate() {
            v[site.0 * h * h + k] = *z;
        }
    }
    v
}

fn unvectorize<T: Scalar>(v: &CVector<T>, h: usize, n_sites: usize) -> BTreeMap<usize, CMatrix<T>> {
    let mut blocks = BTreeMap::new();
    for s in 0..n_sites {
        let m = CMatrix::<T>::from_column_slice(h, h, &v.as_slice()[s * h * h..(s + 1) * h * h]);
        if linalg::fro_norm(&m) > T::zero() {
            blocks.insert(s, m);
        }
    }
    blocks
}

/// The `(h²·N) × (h²·N)` matrix of the walk map acting on vectorized blocks:
/// each transition contributes `conj(B) ⊗ B` at the (target, source) block.
pub fn vectorized_map<T: Scalar>(family: &TransitionFamily<T>) -> CMatrix<T> {
    let h = family.h_dim();
    let n = family.n_sites();
    let d = h * h;
    let mut m = CMatrix::<T>::zeros(n * d, n * d);
    for (target, source, b) in family.all_transitions() {
        let kron = b.conjugate().kronecker(b);
        let mut view = m.view_mut((target.0 * d, source.0 * d), (d, d));
        view += kron;
    }
    m
}

fn dense_eigen<T: Scalar>(
    family: &TransitionFamily<T>,
    opts: &InvariantOpts<T>,
) -> Result<InvariantSolution<T>> {
    let h = family.h_dim();
    let n = family.n_sites();
    let map = vectorized_map(family);
    let shifted = &map - linalg::identity::<T>(n * h * h);
    let rank_tol = real::<T>(1e-8) * (T::one() + shifted.norm());
    let (right, left) = linalg::nullspaces(&shifted, rank_tol)?;
    if right.is_empty() {
        return Err(Error::NoInvariantState(
            "no eigenvalue within tolerance of 1".into(),
        ));
    }
    let multiplicity = right.len();

    // Spectral projection of the maximally mixed state onto the fixed
    // subspace: P x = V (U^H V)^{-1} U^H x. The eigenvalue 1 of a
    // trace-preserving positive map is semisimple, so U^H V is invertible
    // and P x is a limit of averages of states, hence itself a state.
    let k = multiplicity;
    let dim = n * h * h;
    let mut v_mat = CMatrix::<T>::zeros(dim, k);
    let mut u_mat = CMatrix::<T>::zeros(dim, k);
    for (col, (rv, lv)) in right.iter().zip(left.iter()).enumerate() {
        v_mat.set_column(col, rv);
        u_mat.set_column(col, lv);
    }
    let gram = u_mat.adjoint() * &v_mat;
    let seed = vectorize_state(&BlockState::maximally_mixed(h, n), n);
    let rhs = u_mat.adjoint() * seed;
    let coeffs = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoInvariantState("fixed-subspace projection is singular".into()))?;
    let fixed_vec = &v_mat * coeffs;

    // Repair rounding: hermitize each block, clip negative eigenvalues,
    // renormalize the total trace.
    let raw = unvectorize(&fixed_vec, h, n);
    let mut repaired: BTreeMap<usize, CMatrix<T>> = raw
        .iter()
        .map(|(s, m)| (*s, linalg::project_to_density(m)))
        .collect();
    let total: T = repaired
        .values()
        .map(linalg::trace_re)
        .fold(T::zero(), |acc, t| acc + t);
    if total <= T::zero() {
        return Err(Error::NoInvariantState(
            "projected fixed point has vanishing trace".into(),
        ));
    }
    for m in repaired.values_mut() {
        *m /= Complex::new(total, T::zero());
    }
    repaired.retain(|_, m| linalg::fro_norm(m) > T::zero());
    let state = BlockState::from_raw(h, repaired, real::<T>(DEFAULT_TRACE_TOL));
    let residual = state.distance(&step(family, &state)?);
    if residual > opts.tol {
        return Err(Error::NoInvariantState(format!(
            "candidate fixed point has residual {:.3e} above tolerance",
            to_f64(residual)
        )));
    }
    Ok(InvariantSolution {
        state,
        residual,
        iterations: None,
        multiplicity: Some(multiplicity),
    })
}

/// Residuals `r_n = max_i ‖(Mⁿρ)_i − ρ_i‖_F` for `n = 1..=n_max`, computed
/// by repeated stepping (identical to the induction over transition paths).
pub fn check_invariance_chain<T: Scalar>(
    family: &TransitionFamily<T>,
    state: &BlockState<T>,
    n_max: usize,
) -> Result<Vec<T>> {
    let mut residuals = Vec::with_capacity(n_max);
    let mut current = state.clone();
    for _ in 1..=n_max {
        current = step(family, &current)?;
        residuals.push(state.max_block_distance(&current));
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::random::{self, SplitMix64};
    use crate::walk::{build_ring_walk, build_two_site_walk, ValidationMode};

    fn two_site_reference() -> TransitionFamily<f64> {
        build_two_site_walk(
            c(0.6, 0.0),
            c(0.8, 0.0),
            c(0.8, 0.0),
            c(0.6, 0.0),
            0.5,
            ValidationMode::Strict,
        )
        .unwrap()
    }

    fn rho_tilde() -> BlockState<f64> {
        let rho0 = CMatrix::<f64>::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        );
        BlockState::point(2, SiteIndex(1), rho0).unwrap()
    }

    fn half_identity_at_site_one() -> BlockState<f64> {
        let m = linalg::identity::<f64>(2) * c(0.5, 0.0);
        BlockState::point(2, SiteIndex(0), m).unwrap()
    }

    #[test]
    fn step_two_site_from_mixed_block() {
        // Direct 2x2 arithmetic: B^1_1 (I/2) B^1_1* = diag(0.18, 0.32),
        // B^2_1 (I/2) B^2_1* = diag(0.32, 0.18).
        let family = two_site_reference();
        let state = half_identity_at_site_one();
        let next = step(&family, &state).unwrap();
        let b1 = next.block(SiteIndex(0)).unwrap();
        let b2 = next.block(SiteIndex(1)).unwrap();
        assert!((b1[(0, 0)].re - 0.5 * 0.36).abs() < 1e-15);
        assert!((b1[(1, 1)].re - 0.5 * 0.64).abs() < 1e-15);
        assert!((b2[(0, 0)].re - 0.5 * 0.64).abs() < 1e-15);
        assert!((b2[(1, 1)].re - 0.5 * 0.36).abs() < 1e-15);
        assert!((next.total_trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rho_tilde_is_invariant() {
        let family = two_site_reference();
        let state = rho_tilde();
        let next = step(&family, &state).unwrap();
        assert!(state.distance(&next) < 1e-12);
    }

    #[test]
    fn shift_walk_moves_point_state() {
        let family = build_ring_walk(3, linalg::zeros::<f64>(2), linalg::identity(2)).unwrap();
        let sigma = CMatrix::<f64>::from_row_slice(
            2,
            2,
            &[c(0.25, 0.0), c(0.1, 0.05), c(0.1, -0.05), c(0.75, 0.0)],
        );
        let state = BlockState::point(2, SiteIndex(0), sigma.clone()).unwrap();
        let next = step(&family, &state).unwrap();
        assert_eq!(next.n_blocks(), 1);
        assert!(linalg::fro_dist(next.block(SiteIndex(1)).unwrap(), &sigma) < 1e-15);
    }

    #[test]
    fn evolve_matches_brute_force_double_sum() {
        // Oracle: M²(ρ)_i = Σ_j Σ_k B^i_j B^j_k ρ_k B^{j*}_k B^{i*}_j by a
        // literal triple loop over transitions.
        let family = two_site_reference();
        let state = half_identity_at_site_one();
        let via_evolve = evolve(&family, &state, 2).unwrap();

        let mut oracle: BTreeMap<usize, CMatrix<f64>> = BTreeMap::new();
        for (k, rho) in state.blocks() {
            for (j, bjk) in family.transitions_from(k) {
                for (i, bij) in family.transitions_from(SiteIndex(*j)) {
                    let m = bij * bjk * rho * bjk.adjoint() * bij.adjoint();
                    *oracle.entry(*i).or_insert_with(|| linalg::zeros(2)) += m;
                }
            }
        }
        for (site, m) in via_evolve.blocks() {
            assert!(linalg::fro_dist(m, &oracle[&site.0]) < 1e-14);
        }

        let via_steps = step(&family, &step(&family, &state).unwrap()).unwrap();
        assert!(via_evolve.distance(&via_steps) < 1e-15);
        assert!(evolve(&family, &state, 0).unwrap().distance(&state) < 1e-15);
    }

    #[test]
    fn evolve_is_additive_in_steps() {
        let mut rng = SplitMix64::new(11);
        let family = random::random_kraus_family::<f64>(&mut rng, 2, 3);
        let state = random::random_block_state::<f64>(&mut rng, 2, 3);
        let lhs = evolve(&family, &state, 5).unwrap();
        let mid = evolve(&family, &state, 2).unwrap();
        let rhs = evolve(&family, &mid, 3).unwrap();
        assert!(lhs.distance(&rhs) < 1e-12);
    }

    #[test]
    fn distribution_examples() {
        let state = rho_tilde();
        let dist = position_distribution(&state);
        assert_eq!(dist.len(), 1);
        assert_eq!(dist[0].0, SiteIndex(1));
        assert!((dist[0].1 - 1.0).abs() < 1e-15);

        let family = two_site_reference();
        let next = step(&family, &half_identity_at_site_one()).unwrap();
        let dist = position_distribution(&next);
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (_, p) in &dist {
            assert!((p - 0.5).abs() < 1e-12);
        }

        let uniform = BlockState::<f64>::maximally_mixed(2, 11);
        for (_, p) in position_distribution(&uniform) {
            assert!((p - 1.0 / 11.0).abs() < 1e-15);
        }
    }

    #[test]
    fn adjoint_unital_and_matches_block_formula() {
        let family = two_site_reference();
        let id = BlockObservable::<f64>::identity(2, 2);
        let out = adjoint_apply(&family, &id).unwrap();
        assert!(out.distance(&id) < 1e-12);

        // y = I ⊗ |1⟩⟨1| (site index 0): block at source j is B^{1*}_j B^1_j.
        let y = BlockObservable::hermitian(2, vec![(SiteIndex(0), linalg::identity(2))]).unwrap();
        let out = adjoint_apply(&family, &y).unwrap();
        let at1 = out.block(SiteIndex(0)).unwrap();
        let at2 = out.block(SiteIndex(1)).unwrap();
        // B^1_1 = diag(0.6, 0.8) → B^{1*}_1 B^1_1 = diag(0.36, 0.64);
        // B^1_2 = [[0, √.5],[0,0]] → B^{1*}_2 B^1_2 = diag(0, 0.5).
        assert!((at1[(0, 0)].re - 0.36).abs() < 1e-15);
        assert!((at1[(1, 1)].re - 0.64).abs() < 1e-15);
        assert!(at2[(0, 0)].norm() < 1e-15);
        assert!((at2[(1, 1)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duality_between_step_and_adjoint() {
        let mut rng = SplitMix64::new(23);
        for _ in 0..25 {
            let h = 1 + rng.below(3);
            let n = 2 + rng.below(3);
            let family = random::random_kraus_family::<f64>(&mut rng, h, n);
            let state = random::random_block_state::<f64>(&mut rng, h, n);
            let y = random::random_observable::<f64>(&mut rng, h, n);
            let lhs: f64 = step(&family, &state)
                .unwrap()
                .blocks()
                .map(|(s, m)| y.block(s).map(|yb| (m * yb).trace().re).unwrap_or(0.0))
                .sum();
            let my = adjoint_apply(&family, &y).unwrap();
            let rhs: f64 = state
                .blocks()
                .map(|(s, m)| my.block(s).map(|yb| (m * yb).trace().re).unwrap_or(0.0))
                .sum();
            assert!(
                (lhs - rhs).abs() < 1e-9,
                "duality residual {}",
                (lhs - rhs).abs()
            );
        }
    }

    #[test]
    fn trace_and_positivity_preserved_on_random_instances() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..50 {
            let h = 1 + rng.below(3);
            let n = 2 + rng.below(4);
            let family = random::random_kraus_family::<f64>(&mut rng, h, n);
            let state = random::random_block_state::<f64>(&mut rng, h, n);
            let next = step(&family, &state).unwrap();
            assert!((next.total_trace() - 1.0).abs() < 1e-9);
            for (_, m) in next.blocks() {
                assert!(linalg::min_eigenvalue(m) >= -1e-9);
            }
        }
    }

    #[test]
    fn step_is_linear() {
        let mut rng = SplitMix64::new(37);
        let family = random::random_kraus_family::<f64>(&mut rng, 2, 3);
        let s1 = random::random_block_state::<f64>(&mut rng, 2, 3);
        let s2 = random::random_block_state::<f64>(&mut rng, 2, 3);
        let alpha = 0.3;
        let mix_blocks: Vec<_> = (0..3)
            .map(|s| {
                let zero = linalg::zeros::<f64>(2);
                let a = s1.block(SiteIndex(s)).unwrap_or(&zero) * c(alpha, 0.0);
                let b = s2.block(SiteIndex(s)).unwrap_or(&zero) * c(1.0 - alpha, 0.0);
                (SiteIndex(s), a + b)
            })
            .collect();
        let mix = BlockState::new(2, mix_blocks).unwrap();
        let lhs = step(&family, &mix).unwrap();
        let r1 = step(&family, &s1).unwrap();
        let r2 = step(&family, &s2).unwrap();
        for (site, m) in lhs.blocks() {
            let zero = linalg::zeros::<f64>(2);
            let expected = r1.block(site).unwrap_or(&zero) * c(alpha, 0.0)
                + r2.block(site).unwrap_or(&zero) * c(1.0 - alpha, 0.0);
            assert!(linalg::fro_dist(m, &expected) < 1e-12);
        }
    }

    #[test]
    fn dense_eigen_finds_two_site_fixed_point() {
        let family = two_site_reference();
        let solution = find_invariant_state(&family, &InvariantOpts::default()).unwrap();
        assert!(solution.residual < 1e-10);
        assert!(solution.multiplicity.is_some());
    }

    #[test]
    fn uniform_ring_state_is_fixed_for_diagonal_pair() {
        // B B* + C C* = I for this diagonal pair, so I-blocks are fixed.
        let b = CMatrix::<f64>::from_row_slice(
            2,
            2,
            &[
                c(0.3_f64.sqrt(), 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.7_f64.sqrt(), 0.0),
            ],
        );
        let cc = CMatrix::<f64>::from_row_slice(
            2,
            2,
            &[
                c(0.7_f64.sqrt(), 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.3_f64.sqrt(), 0.0),
            ],
        );
        let family = build_ring_walk(5, b, cc).unwrap();
        let uniform = BlockState::<f64>::maximally_mixed(2, 5);
        assert!(uniform.distance(&step(&family, &uniform).unwrap()) < 1e-15);

        let opts = InvariantOpts {
            method: InvariantMethod::PowerIteration,
            ..InvariantOpts::default()
        };
        let solution = find_invariant_state(&family, &opts).unwrap();
        assert!(solution.residual < 1e-10);
        assert!(solution.state.distance(&uniform) < 1e-10);
    }

    #[test]
    fn identity_walk_reports_full_multiplicity() {
        let sites: Vec<String> = (0..2).map(|k| k.to_string()).collect();
        let transitions = (0..2)
            .map(|j| (SiteIndex(j), SiteIndex(j), linalg::identity::<f64>(2)))
            .collect();
        let family =
            TransitionFamily::new(2, sites, transitions, ValidationMode::Strict, 1e-9).unwrap();
        let solution = find_invariant_state(&family, &InvariantOpts::default()).unwrap();
        assert_eq!(solution.multiplicity, Some(2 * 2 * 2));
        assert!(solution.residual < 1e-12);
    }

    #[test]
    fn invariance_chain_examples() {
        let family = two_site_reference();
        for r in check_invariance_chain(&family, &rho_tilde(), 8).unwrap() {
            assert!(r < 1e-10);
        }
        let rs = check_invariance_chain(&family, &half_identity_at_site_one(), 3).unwrap();
        assert!(rs[0] > 0.1);

        let sites: Vec<String> = (0..2).map(|k| k.to_string()).collect();
        let transitions = (0..2)
            .map(|j| (SiteIndex(j), SiteIndex(j), linalg::identity::<f64>(2)))
            .collect();
        let id_family =
            TransitionFamily::new(2, sites, transitions, ValidationMode::Strict, 1e-9).unwrap();
        let state = BlockState::<f64>::maximally_mixed(2, 2);
        for r in check_invariance_chain(&id_family, &state, 4).unwrap() {
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn state_invariant_checks_reject_bad_blocks() {
        // Non-Hermitian block.
        let m = CMatrix::<f64>::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.3, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        );
        assert!(BlockState::point(2, SiteIndex(0), m).is_err());
        // Negative eigenvalue.
        let m = CMatrix::<f64>::from_row_slice(
            2,
            2,
            &[c(1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)],
        );
        assert!(BlockState::point(2, SiteIndex(0), m).is_err());
        // Wrong total trace.
        let m = linalg::identity::<f64>(2);
        assert!(BlockState::point(2, SiteIndex(0), m).is_err());
    }
}
