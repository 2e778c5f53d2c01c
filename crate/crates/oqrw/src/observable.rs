//! Block-diagonal observables and projections.
//!
//! Every functional implemented in this crate reads an observable `x` only
//! through its diagonal blocks `x_ii = ⟨i|x|i⟩`; off-diagonal blocks are
//! provably inert in all of them, so they are not stored. Absent sites mean
//! a zero block — except for the identity, which carries `I` on every site
//! of the lattice it is built for.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::scalar::{real, to_f64, Scalar};
use crate::walk::SiteIndex;

/// Hermiticity tolerance a flagged-Hermitian block must satisfy.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Idempotency/Hermiticity tolerance for projection blocks.
pub const PROJECTION_TOL: f64 = 1e-9;

/// Block-diagonal element of `B(H ⊗ K)`, stored site by site.
#[derive(Debug, Clone)]
pub struct BlockObservable<T: Scalar> {
    h_dim: usize,
    blocks: BTreeMap<usize, CMatrix<T>>,
    hermitian: bool,
}

impl<T: Scalar> BlockObservable<T> {
    /// General (possibly non-Hermitian) observable.
    pub fn new(h_dim: usize, blocks: Vec<(SiteIndex, CMatrix<T>)>) -> Result<Self> {
        Self::build(h_dim, blocks, false)
    }

    /// Observable whose blocks are checked Hermitian to [`HERMITIAN_TOL`].
    pub fn hermitian(h_dim: usize, blocks: Vec<(SiteIndex, CMatrix<T>)>) -> Result<Self> {
        Self::build(h_dim, blocks, true)
    }

    fn build(h_dim: usize, blocks: Vec<(SiteIndex, CMatrix<T>)>, hermitian: bool) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (site, m) in blocks {
            linalg::check_operator(&m, h_dim, &format!("block at site {site}"))?;
            if hermitian {
                let res = linalg::hermitian_residual(&m);
                if res > real::<T>(HERMITIAN_TOL) {
                    return Err(Error::InvalidInput {
                        kind: "observable",
                        reason: format!(
                            "block at site {site} is not Hermitian (residual {:.3e})",
                            to_f64(res)
                        ),
                    });
                }
            }
            if map.insert(site.0, m).is_some() {
                return Err(Error::InvalidInput {
                    kind: "observable",
                    reason: format!("duplicate block at site {site}"),
                });
            }
        }
        Ok(Self {
            h_dim,
            blocks: map,
            hermitian,
        })
    }

    /// The identity of `B(H ⊗ K)`: `I` on every one of the `n_sites` sites.
    pub fn identity(h_dim: usize, n_sites: usize) -> Self {
        let blocks = (0..n_sites)
            .map(|s| (s, linalg::identity::<T>(h_dim)))
            .collect();
        Self {
            h_dim,
            blocks,
            hermitian: true,
        }
    }

    /// The zero observable.
    pub fn zero(h_dim: usize) -> Self {
        Self {
            h_dim,
            blocks: BTreeMap::new(),
            hermitian: true,
        }
    }

    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Block at `site`, `None` for an absent (zero) block.
    pub fn block(&self, site: SiteIndex) -> Option<&CMatrix<T>> {
        self.blocks.get(&site.0)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (SiteIndex, &CMatrix<T>)> {
        self.blocks.iter().map(|(s, m)| (SiteIndex(*s), m))
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Largest per-block Frobenius norm (the block-wise operator size used
    /// by the recurrence diagnostics).
    pub fn max_block_norm(&self) -> T {
        self.blocks
            .values()
            .map(linalg::fro_norm)
            .fold(T::zero(), |acc, n| if n > acc { n } else { acc })
    }

    /// Entry-wise difference size against another observable, taking absent
    /// blocks as zero.
    pub fn distance(&self, other: &Self) -> T {
        let mut acc = T::zero();
        let sites: std::collections::BTreeSet<usize> = self
            .blocks
            .keys()
            .chain(other.blocks.keys())
            .copied()
            .collect();
        let zero = linalg::zeros::<T>(self.h_dim);
        for s in sites {
            let a = self.blocks.get(&s).unwrap_or(&zero);
            let b = other.blocks.get(&s).unwrap_or(&zero);
            let d = linalg::fro_dist(a, b);
            acc += d * d;
        }
        acc.sqrt()
    }

    /// `self − other`, blocks subtracted site-wise.
    pub fn minus(&self, other: &Self) -> Self {
        let mut blocks = self.blocks.clone();
        for (s, m) in &other.blocks {
            match blocks.get_mut(s) {
                Some(b) => *b -= m,
                None => {
                    blocks.insert(*s, -m);
                }
            }
        }
        Self {
            h_dim: self.h_dim,
            blocks,
            hermitian: self.hermitian && other.hermitian,
        }
    }
}

/// Block-diagonal projection `e = Σ_i q_i ⊗ |i⟩⟨i|`: every block idempotent
/// and Hermitian.
#[derive(Debug, Clone)]
pub struct BlockProjection<T: Scalar> {
    inner: BlockObservable<T>,
}

impl<T: Scalar> BlockProjection<T> {
    pub fn new(h_dim: usize, blocks: Vec<(SiteIndex, CMatrix<T>)>) -> Result<Self> {
        let tol = real::<T>(PROJECTION_TOL);
        for (site, q) in &blocks {
            let herm = linalg::hermitian_residual(q);
            let idem = linalg::fro_dist(&(q * q), q);
            if herm > tol || idem > tol {
                return Err(Error::InvalidInput {
                    kind: "projection",
                    reason: format!(
                        "block at site {site}: Hermiticity residual {:.3e}, idempotency residual {:.3e}",
                        to_f64(herm),
                        to_f64(idem)
                    ),
                });
            }
        }
        // Projection blocks are Hermitian only to PROJECTION_TOL, so store
        // their Hermitian parts to meet the stricter observable flag.
        let blocks = blocks
            .into_iter()
            .map(|(s, q)| (s, linalg::hermitize(&q)))
            .collect();
        Ok(Self {
            inner: BlockObservable::hermitian(h_dim, blocks)?,
        })
    }

    /// Projection with `I` on every site.
    pub fn identity(h_dim: usize, n_sites: usize) -> Self {
        Self {
            inner: BlockObservable::identity(h_dim, n_sites),
        }
    }

    /// Projection with no blocks at all.
    pub fn zero(h_dim: usize) -> Self {
        Self {
            inner: BlockObservable::zero(h_dim),
        }
    }

    pub fn h_dim(&self) -> usize {
        self.inner.h_dim()
    }

    pub fn block(&self, site: SiteIndex) -> Option<&CMatrix<T>> {
        self.inner.block(site)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (SiteIndex, &CMatrix<T>)> {
        self.inner.blocks()
    }

    /// View as a plain observable.
    pub fn observable(&self) -> &BlockObservable<T> {
        &self.inner
    }

    pub fn to_observable(&self) -> BlockObservable<T> {
        self.inner.clone()
    }

    /// Block-wise complement `q_i ⊥ = I − q_i` over a lattice of `n_sites`
    /// sites; absent blocks complement to the identity.
    pub fn complement(&self, n_sites: usize) -> BlockProjection<T> {
        let id = linalg::identity::<T>(self.h_dim());
        let blocks = (0..n_sites)
            .map(|s| {
                let q = match self.inner.block(SiteIndex(s)) {
                    Some(q) => &id - q,
                    None => id.clone(),
                };
                (SiteIndex(s), q)
            })
            .collect();
        BlockProjection::new(self.h_dim(), blocks).expect("complement of a projection is one")
    }
}
