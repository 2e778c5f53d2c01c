//! Quantum Markov chains attached to a walk: support restriction, the Kraus
//! pair `K_ij = M^{i*}_j ⊗ A_ij`, the forward and dual transition
//! expectations, and the QMC functionals evaluated both by generic nested
//! recursion and by closed product formulas.
//!
//! Conventions used throughout (all block-wise, nothing on the product
//! space):
//!
//! * sources `j` of any sum run over the support `I_ρ^c` of the state,
//!   targets `i` over the whole lattice;
//! * `φ_j(x) = Tr(ρ_j x_jj) / Tr(ρ_j)` reads one diagonal block;
//! * `D_j(x) = Σ_i B^{i*}_j x_ii B^i_j` is the block compression of
//!   `Σ_i M^{i*}_j x M^i_j`;
//! * the forward expectation is `𝓔(x ⊗ y)_j = D_j(x) φ_j(y)`, the dual one
//!   `𝓔̃(x ⊗ y)_j = φ_j(x) D_j(y)`, each supported on the source sites;
//! * the innermost identity of a nested evaluation carries `I` on every
//!   lattice site, which is what makes both expectations unital.
//!
//! The product evaluators are the closed forms: the forward chain freezes at
//! the initial site and multiplies independent `ψ_v` factors (with each word
//! letter appearing exactly once), the dual chain is a transfer recursion
//! over weighted block matrices, linear in the word length.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::evolution::BlockState;
use crate::linalg::{self, CMatrix};
use crate::observable::BlockObservable;
use crate::scalar::{real, Scalar};
use crate::walk::{SiteIndex, TransitionFamily};

/// Blocks with Frobenius norm at or below this are treated as zero when
/// computing the support of a state.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-12;

/// Partition of the lattice into the zero sites `I_ρ` and the support
/// `I_ρ^c` of a state, together with the family restricted to sources in
/// the support.
#[derive(Debug, Clone)]
pub struct SupportRestriction<T: Scalar> {
    zero_sites: BTreeSet<usize>,
    support_sites: BTreeSet<usize>,
    restricted: TransitionFamily<T>,
}

impl<T: Scalar> SupportRestriction<T> {
    pub fn zero_sites(&self) -> &BTreeSet<usize> {
        &self.zero_sites
    }

    pub fn support_sites(&self) -> &BTreeSet<usize> {
        &self.support_sites
    }

    /// The family with sources restricted to the support (targets are kept
    /// unrestricted; the per-source Kraus condition is inherited).
    pub fn restricted(&self) -> &TransitionFamily<T> {
        &self.restricted
    }

    pub fn in_support(&self, site: SiteIndex) -> bool {
        self.support_sites.contains(&site.0)
    }
}

/// Splits the lattice by `‖ρ_i‖_F ≤ support_tol` and restricts the family's
/// sources to the support.
pub fn restrict_support<T: Scalar>(
    family: &TransitionFamily<T>,
    state: &BlockState<T>,
    support_tol: T,
) -> SupportRestriction<T> {
    let mut zero_sites = BTreeSet::new();
    let mut support_sites = BTreeSet::new();
    for s in 0..family.n_sites() {
        let norm = state
            .block(SiteIndex(s))
            .map(linalg::fro_norm)
            .unwrap_or_else(T::zero);
        if norm <= support_tol {
            zero_sites.insert(s);
        } else {
            support_sites.insert(s);
        }
    }
    let keep: Vec<usize> = support_sites.iter().copied().collect();
    let restricted = family.restricted_to_sources(&keep);
    SupportRestriction {
        zero_sites,
        support_sites,
        restricted,
    }
}

/// One factored Kraus operator `K_ij = M^{i*}_j ⊗ A_ij` with
/// `A_ij = ρ_j^{1/2} ⊗ |i⟩⟨j| / √Tr(ρ_j)`: the `B`-part is `B^i_j`, the
/// `A`-part the matrix factor `ρ_j^{1/2}/√Tr(ρ_j)`.
#[derive(Debug, Clone)]
pub struct KrausPair<T: Scalar> {
    pub target: SiteIndex,
    pub source: SiteIndex,
    pub b_part: CMatrix<T>,
    pub a_part: CMatrix<T>,
}

/// The Kraus operators of a Markov pair, in factored form.
#[derive(Debug, Clone)]
pub struct KrausFamily<T: Scalar> {
    h_dim: usize,
    pairs: Vec<KrausPair<T>>,
}

impl<T: Scalar> KrausFamily<T> {
    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    pub fn pairs(&self) -> &[KrausPair<T>] {
        &self.pairs
    }

    /// Source sites appearing in the family.
    pub fn sources(&self) -> BTreeSet<usize> {
        self.pairs.iter().map(|p| p.source.0).collect()
    }
}

/// Builds the factored Kraus family for a support-restricted walk.
///
/// `family` must already be restricted to sources in the support of
/// `state`; a kept source with vanishing trace is an error.
pub fn build_kraus_k<T: Scalar>(
    family: &TransitionFamily<T>,
    state: &BlockState<T>,
) -> Result<KrausFamily<T>> {
    let mut pairs = Vec::new();
    for j in family.source_sites() {
        let rho_j = state.block(j).ok_or(Error::OutsideSupport(j.0))?;
        let tr = linalg::trace_re(rho_j);
        if tr <= T::zero() {
            return Err(Error::OutsideSupport(j.0));
        }
        let a_part = linalg::sqrt_psd(rho_j) / Complex::new(tr.sqrt(), T::zero());
        for (i, b) in family.transitions_from(j) {
            pairs.push(KrausPair {
                target: SiteIndex(*i),
                source: j,
                b_part: b.clone(),
                a_part: a_part.clone(),
            });
        }
    }
    Ok(KrausFamily {
        h_dim: family.h_dim(),
        pairs,
    })
}

/// Residual of the normalization `Σ_ij Tr^(2)(K_ij K_ij^*) = I`, computed
/// block-wise: the `(j,j)` block of the sum is
/// `Σ_i Tr(A_ij A_ij^*) · B^{i*}_j B^i_j`.
pub fn check_kk1<T: Scalar>(kraus: &KrausFamily<T>) -> T {
    let id = linalg::identity::<T>(kraus.h_dim);
    let mut per_source: BTreeMap<usize, CMatrix<T>> = BTreeMap::new();
    for pair in &kraus.pairs {
        let weight = {
            let n = linalg::fro_norm(&pair.a_part);
            n * n
        };
        let term = (pair.b_part.adjoint() * &pair.b_part) * Complex::new(weight, T::zero());
        match per_source.get_mut(&pair.source.0) {
            Some(acc) => *acc += term,
            None => {
                per_source.insert(pair.source.0, term);
            }
        }
    }
    let mut acc = T::zero();
    for block in per_source.values() {
        let d = linalg::fro_dist(block, &id);
        acc += d * d;
    }
    acc.sqrt()
}

/// Residual of the extension condition `Σ_ij Tr^(1)(K_ij^* (ρ⊗1) K_ij) = ρ`:
/// the `(j,j)` block of the sum is
/// `Σ_i Tr(B^i_j ρ_j B^{i*}_j) · A_ij^* A_ij`, and `A_ij^* A_ij = ρ_j/Tr(ρ_j)`.
/// By the Kraus condition this holds for any valid state, invariant or not.
pub fn check_kk2<T: Scalar>(kraus: &KrausFamily<T>, state: &BlockState<T>) -> T {
    let mut per_source: BTreeMap<usize, CMatrix<T>> = BTreeMap::new();
    for pair in &kraus.pairs {
        let rho_j = match state.block(pair.source) {
            Some(m) => m,
            None => continue,
        };
        let t = linalg::trace_re(&(&pair.b_part * rho_j * pair.b_part.adjoint()));
        let term = (pair.a_part.adjoint() * &pair.a_part) * Complex::new(t, T::zero());
        match per_source.get_mut(&pair.source.0) {
            Some(acc) => *acc += term,
            None => {
                per_source.insert(pair.source.0, term);
            }
        }
    }
    let mut acc = T::zero();
    for (j, block) in &per_source {
        let rho_j = state.block(SiteIndex(*j)).expect("source has a block");
        let d = linalg::fro_dist(block, rho_j);
        acc += d * d;
    }
    acc.sqrt()
}

/// Which of the two transition expectations a Markov pair uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationKind {
    /// `𝓔(x ⊗ y)_j = D_j(x) φ_j(y)`; its QMC has the product form
    /// `Σ_v Tr(ρ_v) Π_k ψ_v(x_k)`.
    Forward,
    /// `𝓔̃(x ⊗ y)_j = φ_j(x) D_j(y)`; its one-slot marginal is the adjoint
    /// walk map, and its QMC is a path sum over the support.
    Dual,
}

impl std::fmt::Display for ExpectationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExpectationKind::Forward => write!(f, "forward"),
            ExpectationKind::Dual => write!(f, "dual"),
        }
    }
}

/// A state together with the transition expectation it seeds; the weight
/// functional `φ₀` of the chain is always `Tr(ρ ·)` for the same state.
#[derive(Debug, Clone)]
pub struct MarkovPair<T: Scalar> {
    state: BlockState<T>,
    kind: ExpectationKind,
    support: SupportRestriction<T>,
}

impl<T: Scalar> MarkovPair<T> {
    pub fn new(
        family: &TransitionFamily<T>,
        state: BlockState<T>,
        kind: ExpectationKind,
    ) -> Result<Self> {
        Self::with_support_tol(family, state, kind, real::<T>(DEFAULT_SUPPORT_TOL))
    }

    pub fn with_support_tol(
        family: &TransitionFamily<T>,
        state: BlockState<T>,
        kind: ExpectationKind,
        support_tol: T,
    ) -> Result<Self> {
        if family.h_dim() != state.h_dim() {
            return Err(Error::DimensionMismatch {
                context: "markov pair".into(),
                expected: family.h_dim(),
                found: state.h_dim(),
            });
        }
        let support = restrict_support(family, &state, support_tol);
        for s in support.support_sites() {
            if state.trace_at(SiteIndex(*s)) <= T::zero() {
                return Err(Error::InvalidInput {
                    kind: "markov pair",
                    reason: format!("support site {s} has non-positive trace"),
                });
            }
        }
        if support.support_sites().is_empty() {
            return Err(Error::InvalidInput {
                kind: "markov pair",
                reason: "state has empty support".into(),
            });
        }
        Ok(Self {
            state,
            kind,
            support,
        })
    }

    pub fn state(&self) -> &BlockState<T> {
        &self.state
    }

    pub fn kind(&self) -> ExpectationKind {
        self.kind
    }

    pub fn support(&self) -> &SupportRestriction<T> {
        &self.support
    }

    /// The support-restricted family driving all expectations.
    pub fn family(&self) -> &TransitionFamily<T> {
        self.support.restricted()
    }

    pub fn h_dim(&self) -> usize {
        self.state.h_dim()
    }

    pub fn n_sites(&self) -> usize {
        self.family().n_sites()
    }

    /// The identity observable of the pair's lattice.
    pub fn identity(&self) -> BlockObservable<T> {
        BlockObservable::identity(self.h_dim(), self.n_sites())
    }

    /// `φ₀(x) = Tr(ρ x)` over the stored blocks.
    pub fn weight(&self, x: &BlockObservable<T>) -> Complex<T> {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (site, rho) in self.state.blocks() {
            if let Some(b) = x.block(site) {
                acc += (rho * b).trace();
            }
        }
        acc
    }

    /// `φ_j(x) = Tr(ρ_j x_jj)/Tr(ρ_j)` as a complex scalar.
    pub(crate) fn phi_complex(&self, j: SiteIndex, x: &BlockObservable<T>) -> Result<Complex<T>> {
        if !self.support.in_support(j) {
            return Err(Error::OutsideSupport(j.0));
        }
        let rho_j = self.state.block(j).expect("support site has a block");
        let tr = linalg::trace_re(rho_j);
        Ok(match x.block(j) {
            Some(b) => (rho_j * b).trace() / Complex::new(tr, T::zero()),
            None => Complex::new(T::zero(), T::zero()),
        })
    }

    /// `D_j(x) = Σ_i B^{i*}_j x_ii B^i_j`, targets over the whole lattice.
    pub(crate) fn compress(&self, j: SiteIndex, x: &BlockObservable<T>) -> CMatrix<T> {
        let mut acc = linalg::zeros::<T>(self.h_dim());
        for (i, b) in self.family().transitions_from(j) {
            if let Some(block) = x.block(SiteIndex(*i)) {
                acc += b.adjoint() * block * b;
            }
        }
        acc
    }

    /// `ψ_v(x) = (1/Tr ρ_v) Σ_i Tr(B^i_v ρ_v B^{i*}_v x_ii)` as a complex
    /// scalar; equals `φ_v(D_v(x))` by cyclicity of the trace.
    pub(crate) fn psi_complex(&self, v: SiteIndex, x: &BlockObservable<T>) -> Result<Complex<T>> {
        if !self.support.in_support(v) {
            return Err(Error::OutsideSupport(v.0));
        }
        let rho_v = self.state.block(v).expect("support site has a block");
        let tr = linalg::trace_re(rho_v);
        let mut acc = Complex::new(T::zero(), T::zero());
        for (i, b) in self.family().transitions_from(v) {
            if let Some(block) = x.block(SiteIndex(*i)) {
                acc += (b * rho_v * b.adjoint() * block).trace();
            }
        }
        Ok(acc / Complex::new(tr, T::zero()))
    }
}

/// `ψ_v(x)`: the one-step site functional of the forward chain. Real for
/// Hermitian `x`; the real part is returned.
pub fn psi<T: Scalar>(pair: &MarkovPair<T>, v: SiteIndex, x: &BlockObservable<T>) -> Result<T> {
    Ok(pair.psi_complex(v, x)?.re)
}

/// `φ_k(x) = Tr(ρ_k x_kk)/Tr(ρ_k)`; real part for Hermitian `x`.
pub fn phi_site<T: Scalar>(
    pair: &MarkovPair<T>,
    k: SiteIndex,
    x: &BlockObservable<T>,
) -> Result<T> {
    Ok(pair.phi_complex(k, x)?.re)
}

/// Applies the pair's transition expectation to `x ⊗ y`, block-wise.
pub fn transition_expectation<T: Scalar>(
    pair: &MarkovPair<T>,
    x: &BlockObservable<T>,
    y: &BlockObservable<T>,
) -> Result<BlockObservable<T>> {
    if x.h_dim() != pair.h_dim() || y.h_dim() != pair.h_dim() {
        return Err(Error::DimensionMismatch {
            context: "transition expectation".into(),
            expected: pair.h_dim(),
            found: if x.h_dim() != pair.h_dim() {
                x.h_dim()
            } else {
                y.h_dim()
            },
        });
    }
    let mut blocks = Vec::new();
    for j in pair.support().support_sites() {
        let j = SiteIndex(*j);
        let block = match pair.kind() {
            ExpectationKind::Forward => {
                let weight = pair.phi_complex(j, y)?;
                pair.compress(j, x) * weight
            }
            ExpectationKind::Dual => {
                let weight = pair.phi_complex(j, x)?;
                pair.compress(j, y) * weight
            }
        };
        blocks.push((j, block));
    }
    BlockObservable::new(pair.h_dim(), blocks)
}

/// Evaluates `φ(x₀ ⊗ … ⊗ xₙ) = φ₀(𝓔(x₀ ⊗ 𝓔(x₁ ⊗ … 𝓔(xₙ ⊗ 1)…)))` by the
/// defining right-fold, for either expectation kind.
pub fn qmc_evaluate_nested<T: Scalar>(
    pair: &MarkovPair<T>,
    xs: &[BlockObservable<T>],
) -> Result<T> {
    if xs.is_empty() {
        return Err(Error::InvalidInput {
            kind: "word",
            reason: "empty word".into(),
        });
    }
    let mut acc = pair.identity();
    for x in xs.iter().rev() {
        acc = transition_expectation(pair, x, &acc)?;
    }
    Ok(pair.weight(&acc).re)
}

/// Closed product form of the forward QMC:
/// `Σ_v Tr(ρ_v) Π_k ψ_v(x_k)`, each word letter appearing exactly once.
pub fn qmc_evaluate_product_forward<T: Scalar>(
    pair: &MarkovPair<T>,
    xs: &[BlockObservable<T>],
) -> Result<T> {
    if pair.kind() != ExpectationKind::Forward {
        return Err(Error::WrongKind {
            required: "forward",
        });
    }
    if xs.is_empty() {
        return Err(Error::InvalidInput {
            kind: "word",
            reason: "empty word".into(),
        });
    }
    let mut total = Complex::new(T::zero(), T::zero());
    for v in pair.support().support_sites() {
        let v = SiteIndex(*v);
        let mut prod = Complex::new(pair.state().trace_at(v), T::zero());
        for x in xs {
            prod *= pair.psi_complex(v, x)?;
        }
        total += prod;
    }
    Ok(total.re)
}

/// Closed form of the dual QMC as a transfer recursion: carry one weighted
/// block per support site, `σ'_i = Σ_j B^i_j σ_j B^{i*}_j` followed by the
/// scalar weight `φ_i(x_k)`, and finish with the total trace. Cost is linear
/// in the word length; no path enumeration.
pub fn qmc_evaluate_product_dual<T: Scalar>(
    pair: &MarkovPair<T>,
    xs: &[BlockObservable<T>],
) -> Result<T> {
    if pair.kind() != ExpectationKind::Dual {
        return Err(Error::WrongKind { required: "dual" });
    }
    if xs.is_empty() {
        return Err(Error::InvalidInput {
            kind: "word",
            reason: "empty word".into(),
        });
    }
    let support = pair.support().support_sites();
    let mut sigma: BTreeMap<usize, CMatrix<T>> = BTreeMap::new();
    for j in support {
        let j_site = SiteIndex(*j);
        let weight = pair.phi_complex(j_site, &xs[0])?;
        let rho_j = pair
            .state()
            .block(j_site)
            .expect("support site has a block");
        sigma.insert(*j, rho_j * weight);
    }
    for x in &xs[1..] {
        let mut next: BTreeMap<usize, CMatrix<T>> = BTreeMap::new();
        for (j, sig) in &sigma {
            for (i, b) in pair.family().transitions_from(SiteIndex(*j)) {
                if !support.contains(i) {
                    continue;
                }
                let term = b * sig * b.adjoint();
                match next.get_mut(i) {
                    Some(acc) => *acc += term,
                    None => {
                        next.insert(*i, term);
                    }
                }
            }
        }
        for (i, m) in &mut next {
            let weight = pair.phi_complex(SiteIndex(*i), x)?;
            *m *= weight;
        }
        sigma = next;
    }
    let mut total = Complex::new(T::zero(), T::zero());
    for m in sigma.values() {
        total += m.trace();
    }
    Ok(total.re)
}

/// Evaluates a word with the evaluator matching the pair's kind (product
/// forms; the nested route is always available separately).
pub fn qmc_evaluate<T: Scalar>(pair: &MarkovPair<T>, xs: &[BlockObservable<T>]) -> Result<T> {
    match pair.kind() {
        ExpectationKind::Forward => qmc_evaluate_product_forward(pair, xs),
        ExpectationKind::Dual => qmc_evaluate_product_dual(pair, xs),
    }
}

/// Compatibility residual `max_x |φ₀(𝓔(1 ⊗ x)) − φ₀(x)|` over the spanning
/// set of matrix units on every diagonal block.
///
/// For dual pairs this equals the largest entry of `M(ρ) − ρ`, so it
/// vanishes exactly when the state is invariant; for forward pairs it is
/// zero identically by unitality of the `y` slot.
pub fn check_compatibility<T: Scalar>(pair: &MarkovPair<T>) -> Result<T> {
    let h = pair.h_dim();
    let id = pair.identity();
    let mut worst = T::zero();
    for s in 0..pair.n_sites() {
        for a in 0..h {
            for b in 0..h {
                let unit = BlockObservable::new(
                    h,
                    vec![(SiteIndex(s), linalg::matrix_unit::<T>(h, a, b))],
                )?;
                let lhs = pair.weight(&transition_expectation(pair, &id, &unit)?);
                let rhs = pair.weight(&unit);
                let diff = linalg::cmod(lhs - rhs);
                if diff > worst {
                    worst = diff;
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::adjoint_apply;
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

    fn rho0() -> CMatrix<f64> {
        CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
    }

    fn rho_tilde() -> BlockState<f64> {
        BlockState::point(2, SiteIndex(1), rho0()).unwrap()
    }

    fn diag_ring(n: usize, pr: f64) -> TransitionFamily<f64> {
        let b = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(pr.sqrt(), 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c((1.0 - pr).sqrt(), 0.0),
            ],
        );
        let cc = CMatrix::from_row_slice(
            2,
            2,
            &[
                c((1.0 - pr).sqrt(), 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(pr.sqrt(), 0.0),
            ],
        );
        build_ring_walk(n, b, cc).unwrap()
    }

    /// Exponential path-sum oracle for the dual QMC: enumerates all words of
    /// support sites, multiplying the literal trace weights and φ factors.
    fn dual_path_oracle(pair: &MarkovPair<f64>, xs: &[BlockObservable<f64>]) -> f64 {
        let support: Vec<usize> = pair.support().support_sites().iter().copied().collect();
        let n = xs.len();
        let mut total = 0.0;
        let mut path = vec![0usize; n];
        loop {
            // Weight of this path.
            let i0 = SiteIndex(support[path[0]]);
            let mut carried = pair.state().block(i0).unwrap().clone();
            let mut alive = true;
            for step in 1..n {
                let from = SiteIndex(support[path[step - 1]]);
                let to = support[path[step]];
                let mut hop = None;
                for (i, b) in pair.family().transitions_from(from) {
                    if *i == to {
                        hop = Some(b);
                        break;
                    }
                }
                match hop {
                    Some(b) => carried = b * carried * b.adjoint(),
                    None => {
                        alive = false;
                        break;
                    }
                }
            }
            if alive {
                let mut value = carried.trace().re;
                for (k, x) in xs.iter().enumerate() {
                    value *= pair.phi_complex(SiteIndex(support[path[k]]), x).unwrap().re;
                }
                total += value;
            }
            // Advance the odometer.
            let mut pos = 0;
            loop {
                if pos == n {
                    return total;
                }
                path[pos] += 1;
                if path[pos] < support.len() {
                    break;
                }
                path[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn support_restriction_examples() {
        let family = two_site_reference();
        let full = random::random_block_state::<f64>(&mut SplitMix64::new(3), 2, 2);
        let r = restrict_support(&family, &full, 1e-12);
        assert!(r.zero_sites().is_empty());
        assert_eq!(r.support_sites().len(), 2);

        let r = restrict_support(&family, &rho_tilde(), 1e-12);
        assert_eq!(r.zero_sites().iter().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(
            r.support_sites().iter().copied().collect::<Vec<_>>(),
            vec![1]
        );
        // Restricted family keeps only source 2 (index 1), targets anywhere.
        assert_eq!(r.restricted().n_transitions(), 2);

        // A block of norm 1e-15 falls below the default threshold.
        let tiny = rho0() * c(1e-15, 0.0);
        let mut blocks = vec![(SiteIndex(1), rho0())];
        blocks.push((SiteIndex(0), tiny));
        let state = BlockState::new(2, blocks).unwrap();
        let r = restrict_support(&family, &state, 1e-12);
        assert!(r.zero_sites().contains(&0));
    }

    #[test]
    fn kraus_family_for_rho_tilde() {
        let family = two_site_reference();
        let state = rho_tilde();
        let support = restrict_support(&family, &state, 1e-12);
        let kraus = build_kraus_k(support.restricted(), &state).unwrap();
        assert_eq!(kraus.pairs().len(), 2);
        for pair in kraus.pairs() {
            assert_eq!(pair.source, SiteIndex(1));
            // ρ̃_2^{1/2} = diag(1,0) with Tr ρ̃_2 = 1.
            assert!(linalg::fro_dist(&pair.a_part, &rho0()) < 1e-12);
        }
        assert!(check_kk1(&kraus) < 1e-12);
        assert!(check_kk2(&kraus, &state) < 1e-12);
    }

    #[test]
    fn kraus_build_requires_support_restriction() {
        let family = two_site_reference();
        // Unrestricted family keeps source 1 whose block is missing.
        assert!(build_kraus_k(&family, &rho_tilde()).is_err());
    }

    #[test]
    fn single_site_identity_walk_kraus_checks_are_exact() {
        let sites = vec!["0".to_string()];
        let transitions = vec![(SiteIndex(0), SiteIndex(0), linalg::identity::<f64>(2))];
        let family =
            TransitionFamily::new(2, sites, transitions, ValidationMode::Strict, 1e-9).unwrap();
        let state = BlockState::maximally_mixed(2, 1);
        let support = restrict_support(&family, &state, 1e-12);
        let kraus = build_kraus_k(support.restricted(), &state).unwrap();
        // A-part of the single pair is (I/√2)/√1.
        let expected = linalg::identity::<f64>(2) * c(1.0 / 2.0_f64.sqrt(), 0.0);
        assert!(linalg::fro_dist(&kraus.pairs()[0].a_part, &expected) < 1e-12);
        assert!(check_kk1(&kraus) < 1e-15);
        assert!(check_kk2(&kraus, &state) < 1e-15);
    }

    #[test]
    fn kraus_conditions_on_random_instances() {
        let mut rng = SplitMix64::new(51);
        for _ in 0..25 {
            let h = 1 + rng.below(3);
            let n = 2 + rng.below(3);
            let family = random::random_kraus_family::<f64>(&mut rng, h, n);
            let state = random::random_block_state::<f64>(&mut rng, h, n);
            let support = restrict_support(&family, &state, 1e-12);
            let kraus = build_kraus_k(support.restricted(), &state).unwrap();
            assert!(check_kk1(&kraus) < 1e-9);
            assert!(check_kk2(&kraus, &state) < 1e-9);
        }
    }

    #[test]
    fn psi_examples() {
        let family = two_site_reference();
        let pair = MarkovPair::new(&family, rho_tilde(), ExpectationKind::Forward).unwrap();
        let id = pair.identity();
        assert!((psi(&pair, SiteIndex(1), &id).unwrap() - 1.0).abs() < 1e-12);

        // x = I ⊗ |1⟩⟨1|: the only route from site 2 into site 1 is B^1_2,
        // and B^1_2 ρ₀ B^{1*}_2 = 0.
        let x = BlockObservable::hermitian(2, vec![(SiteIndex(0), linalg::identity(2))]).unwrap();
        assert!(psi(&pair, SiteIndex(1), &x).unwrap().abs() < 1e-15);
        assert!(matches!(
            psi(&pair, SiteIndex(0), &id),
            Err(Error::OutsideSupport(0))
        ));

        // Ring: ψ_{k+1}(e) = Tr(B ρ_{k+1} B* q)/Tr(ρ_{k+1}) = 0.3/2.
        let ring = diag_ring(11, 0.3);
        let uniform = BlockState::maximally_mixed(2, 11);
        let rpair = MarkovPair::new(&ring, uniform, ExpectationKind::Forward).unwrap();
        let k = 5;
        let e = BlockObservable::hermitian(
            2,
            vec![(SiteIndex(k), linalg::matrix_unit::<f64>(2, 0, 0))],
        )
        .unwrap();
        let got = psi(&rpair, SiteIndex(k + 1), &e).unwrap();
        assert!((got - 0.15).abs() < 1e-12, "got {got}");
        let got = psi(&rpair, SiteIndex(k - 1), &e).unwrap();
        assert!((got - 0.35).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn phi_site_examples() {
        let family = two_site_reference();
        let state = random::random_block_state::<f64>(&mut SplitMix64::new(9), 2, 2);
        let pair = MarkovPair::new(&family, state, ExpectationKind::Dual).unwrap();
        let id = pair.identity();
        for s in 0..2 {
            assert!((phi_site(&pair, SiteIndex(s), &id).unwrap() - 1.0).abs() < 1e-12);
            let point =
                BlockObservable::hermitian(2, vec![(SiteIndex(s), linalg::identity(2))]).unwrap();
            assert!((phi_site(&pair, SiteIndex(s), &point).unwrap() - 1.0).abs() < 1e-12);
        }

        // Part 2: φ_k(e⊥) = Tr(ρ₀ p) δ_{k1} for e⊥ = p ⊗ |1⟩⟨1|.
        let part2 = build_two_site_walk(
            c(1.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(1.0, 0.0),
            0.5,
            ValidationMode::Strict,
        )
        .unwrap();
        let half = rho0() * c(0.5, 0.0);
        let state =
            BlockState::new(2, vec![(SiteIndex(0), half.clone()), (SiteIndex(1), half)]).unwrap();
        let pair = MarkovPair::new(&part2, state, ExpectationKind::Dual).unwrap();
        let p =
            CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)]);
        let eperp = BlockObservable::hermitian(2, vec![(SiteIndex(0), p)]).unwrap();
        let t: f64 = 0.5; // Tr(ρ₀ p)
        assert!((phi_site(&pair, SiteIndex(0), &eperp).unwrap() - t).abs() < 1e-12);
        assert!(phi_site(&pair, SiteIndex(1), &eperp).unwrap().abs() < 1e-15);
    }

    #[test]
    fn transition_expectation_unital_both_kinds() {
        let mut rng = SplitMix64::new(61);
        for kind in [ExpectationKind::Forward, ExpectationKind::Dual] {
            let family = random::random_kraus_family::<f64>(&mut rng, 2, 3);
            let state = random::random_block_state::<f64>(&mut rng, 2, 3);
            let pair = MarkovPair::new(&family, state, kind).unwrap();
            let id = pair.identity();
            let out = transition_expectation(&pair, &id, &id).unwrap();
            assert!(out.distance(&id) < 1e-12);
        }
    }

    #[test]
    fn dual_expectation_marginal_is_adjoint_map() {
        let mut rng = SplitMix64::new(67);
        let family = random::random_kraus_family::<f64>(&mut rng, 2, 3);
        let state = random::random_block_state::<f64>(&mut rng, 2, 3);
        let pair = MarkovPair::new(&family, state, ExpectationKind::Dual).unwrap();
        let y = random::random_observable::<f64>(&mut rng, 2, 3);
        let via_pair = transition_expectation(&pair, &pair.identity(), &y).unwrap();
        let via_adjoint = adjoint_apply(pair.family(), &y).unwrap();
        assert!(via_pair.distance(&via_adjoint) < 1e-12);
    }

    #[test]
    fn forward_expectation_on_rho_tilde_matches_block_formula() {
        let family = two_site_reference();
        let pair = MarkovPair::new(&family, rho_tilde(), ExpectationKind::Forward).unwrap();
        let mut rng = SplitMix64::new(71);
        let x = random::random_observable::<f64>(&mut rng, 2, 2);
        let y = random::random_observable::<f64>(&mut rng, 2, 2);
        let out = transition_expectation(&pair, &x, &y).unwrap();
        assert_eq!(out.n_blocks(), 1);
        let phi2_y = pair.phi_complex(SiteIndex(1), &y).unwrap();
        let expected = pair.compress(SiteIndex(1), &x) * phi2_y;
        assert!(linalg::fro_dist(out.block(SiteIndex(1)).unwrap(), &expected) < 1e-13);
    }

    #[test]
    fn nested_trivial_and_frozen_site_examples() {
        let family = two_site_reference();
        let pair = MarkovPair::new(&family, rho_tilde(), ExpectationKind::Forward).unwrap();
        let id = pair.identity();
        assert!(
            (qmc_evaluate_nested(&pair, std::slice::from_ref(&id)).unwrap() - 1.0).abs() < 1e-12
        );

        // Identity words evaluate to 1 under every evaluator.
        let ones = vec![id; 4];
        assert!((qmc_evaluate_product_forward(&pair, &ones).unwrap() - 1.0).abs() < 1e-12);
        let dual = MarkovPair::new(&family, rho_tilde(), ExpectationKind::Dual).unwrap();
        assert!((qmc_evaluate_product_dual(&dual, &ones).unwrap() - 1.0).abs() < 1e-12);
        assert!((qmc_evaluate_nested(&dual, &ones).unwrap() - 1.0).abs() < 1e-12);

        // e = I ⊗ |2⟩⟨2|: the walk never leaves site 2 from ρ̃.
        let e = BlockObservable::hermitian(2, vec![(SiteIndex(1), linalg::identity(2))]).unwrap();
        let v = qmc_evaluate_nested(&pair, &[e.clone(), e]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nested_matches_hand_value_on_ring() {
        // Σ_v Tr(ρ_v) ψ_v(e) ψ_v(e⊥) = (0.15·0.85 + 0.35·0.65)/11.
        let ring = diag_ring(11, 0.3);
        let uniform = BlockState::maximally_mixed(2, 11);
        let pair = MarkovPair::new(&ring, uniform, ExpectationKind::Forward).unwrap();
        let k = 4;
        let e_proj = crate::observable::BlockProjection::new(
            2,
            vec![(SiteIndex(k), linalg::matrix_unit::<f64>(2, 0, 0))],
        )
        .unwrap();
        let e = e_proj.to_observable();
        let eperp = e_proj.complement(11).to_observable();
        let expected = (0.15 * 0.85 + 0.35 * 0.65) / 11.0;
        let nested = qmc_evaluate_nested(&pair, &[e.clone(), eperp.clone()]).unwrap();
        let product = qmc_evaluate_product_forward(&pair, &[e, eperp]).unwrap();
        assert!((nested - expected).abs() < 1e-12, "nested {nested}");
        assert!((nested - product).abs() < 1e-12);
    }

    #[test]
    fn forward_product_matches_nested_on_random_instances() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..40 {
            let h = 1 + rng.below(2);
            let n = 2 + rng.below(3);
            let family = random::random_kraus_family::<f64>(&mut rng, h, n);
            let state = random::random_block_state::<f64>(&mut rng, h, n);
            let pair = MarkovPair::new(&family, state, ExpectationKind::Forward).unwrap();
            let len = 1 + rng.below(5);
            let xs: Vec<_> = (0..len)
                .map(|_| random::random_observable::<f64>(&mut rng, h, n))
                .collect();
            let nested = qmc_evaluate_nested(&pair, &xs).unwrap();
            let product = qmc_evaluate_product_forward(&pair, &xs).unwrap();
            assert!(
                (nested - product).abs() < 1e-9,
                "nested {nested} vs product {product}"
            );
            // One letter: Σ_v Tr(ρ_v) ψ_v(x) = φ₀(𝓔(x ⊗ 1)).
            let single = qmc_evaluate_product_forward(&pair, &xs[..1]).unwrap();
            let via_te =
                pair.weight(&transition_expectation(&pair, &xs[0], &pair.identity()).unwrap());
            assert!((single - via_te.re).abs() < 1e-10);
        }
    }

    #[test]
    fn dual_product_matches_nested_and_path_oracle() {
        let mut rng = SplitMix64::new(83);
        for _ in 0..25 {
            let h = 1 + rng.below(2);
            let n = 2 + rng.below(2);
            let family = random::random_kraus_family::<f64>(&mut rng, h, n);
            let state = random::random_block_state::<f64>(&mut rng, h, n);
            let pair = MarkovPair::new(&family, state, ExpectationKind::Dual).unwrap();
            let len = 1 + rng.below(4);
            let xs: Vec<_> = (0..len)
                .map(|_| random::random_observable::<f64>(&mut rng, h, n))
                .collect();
            let nested = qmc_evaluate_nested(&pair, &xs).unwrap();
            let product = qmc_evaluate_product_dual(&pair, &xs).unwrap();
            let oracle = dual_path_oracle(&pair, &xs);
            assert!((nested - product).abs() < 1e-9);
            assert!(
                (product - oracle).abs() < 1e-9,
                "product {product} oracle {oracle}"
            );
        }
    }

    #[test]
    fn dual_product_form_for_point_supported_states() {
        // ρ = ρ₀ ⊗ |ℓ⟩⟨ℓ| with an isometric self-transition: the dual QMC
        // factorizes as Π_k Tr(ρ₀ (x_k)_ℓℓ).
        let mut rng = SplitMix64::new(89);
        let u = random::random_unitary::<f64>(&mut rng, 2);
        let sites = vec!["0".to_string(), "1".to_string()];
        let transitions = vec![
            (SiteIndex(0), SiteIndex(0), u),
            (SiteIndex(1), SiteIndex(1), linalg::identity(2)),
        ];
        let family =
            TransitionFamily::new(2, sites, transitions, ValidationMode::Strict, 1e-9).unwrap();
        let mut rho0_rand = random::random_psd::<f64>(&mut rng, 2);
        rho0_rand /= c(rho0_rand.trace().re, 0.0);
        let state = BlockState::point(2, SiteIndex(0), rho0_rand.clone()).unwrap();
        let pair = MarkovPair::new(&family, state, ExpectationKind::Dual).unwrap();
        for len in 1..6 {
            let xs: Vec<_> = (0..len)
                .map(|_| random::random_observable::<f64>(&mut rng, 2, 2))
                .collect();
            let mut expected = 1.0;
            for x in &xs {
                expected *= (&rho0_rand * x.block(SiteIndex(0)).unwrap()).trace().re;
            }
            let got = qmc_evaluate_product_dual(&pair, &xs).unwrap();
            assert!(
                (got - expected).abs() < 1e-12,
                "len {len}: {got} vs {expected}"
            );
            let nested = qmc_evaluate_nested(&pair, &xs).unwrap();
            assert!((nested - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_part2_closed_form() {
        // a = 1, b = 0, c = 0, d = 1; ρ = ½ρ₀⊗|1⟩⟨1| + ½ρ₀⊗|2⟩⟨2|;
        // e⊥ = 1 − p⊗|1⟩⟨1|. A word of n copies of e⊥ evaluates to
        // ½((1 − Tr ρ₀p)ⁿ + 1).
        let family = build_two_site_walk(
            c(1.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(1.0, 0.0),
            0.5,
            ValidationMode::Strict,
        )
        .unwrap();
        let half = rho0() * c(0.5, 0.0);
        let state =
            BlockState::new(2, vec![(SiteIndex(0), half.clone()), (SiteIndex(1), half)]).unwrap();
        let pair = MarkovPair::new(&family, state, ExpectationKind::Dual).unwrap();
        let p =
            CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)]);
        let e = crate::observable::BlockProjection::new(2, vec![(SiteIndex(0), p)]).unwrap();
        let eperp = e.complement(2).to_observable();
        let t: f64 = 0.5;
        for n in 1..=40i32 {
            let word: Vec<_> = (0..n).map(|_| eperp.clone()).collect();
            let got = qmc_evaluate_product_dual(&pair, &word).unwrap();
            let expected = 0.5 * ((1.0 - t).powi(n) + 1.0);
            assert!((got - expected).abs() < 1e-12, "n {n}: {got} vs {expected}");
        }
    }

    #[test]
    fn compatibility_residual_detects_invariance() {
        let family = two_site_reference();
        let pair = MarkovPair::new(&family, rho_tilde(), ExpectationKind::Dual).unwrap();
        assert!(check_compatibility(&pair).unwrap() < 1e-10);

        let moved =
            BlockState::point(2, SiteIndex(0), linalg::identity::<f64>(2) * c(0.5, 0.0)).unwrap();
        let pair = MarkovPair::new(&family, moved.clone(), ExpectationKind::Dual).unwrap();
        assert!(check_compatibility(&pair).unwrap() > 0.1);

        let pair = MarkovPair::new(&family, moved, ExpectationKind::Forward).unwrap();
        assert!(check_compatibility(&pair).unwrap() < 1e-14);
    }

    #[test]
    fn projection_words_stay_in_unit_interval_and_decrease() {
        let mut rng = SplitMix64::new(97);
        for kind in [ExpectationKind::Forward, ExpectationKind::Dual] {
            for _ in 0..10 {
                let h = 1 + rng.below(2);
                let n = 2 + rng.below(3);
                let family = random::random_kraus_family::<f64>(&mut rng, h, n);
                let state = random::random_block_state::<f64>(&mut rng, h, n);
                let pair = MarkovPair::new(&family, state, kind).unwrap();
                let e = random::random_projection::<f64>(&mut rng, h, n);
                let eperp = e.complement(n).to_observable();
                let mut prev = 1.0 + 1e-9;
                for len in 1..6 {
                    let word: Vec<_> = (0..len).map(|_| eperp.clone()).collect();
                    let v = qmc_evaluate_nested(&pair, &word).unwrap();
                    assert!(v > -1e-9 && v < 1.0 + 1e-9, "value {v}");
                    assert!(v <= prev + 1e-9, "not monotone: {v} after {prev}");
                    prev = v;
                }
            }
        }
    }
}
