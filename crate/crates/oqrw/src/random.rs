//! Seeded sampling of walks, states and observables.
//!
//! The property suites need thousands of reproducible instances; a small
//! deterministic generator avoids a dependency and makes failures replayable
//! from the seed alone. Kraus families come from unitary-block slicing: the
//! first `h` columns of a random `(k·h)×(k·h)` unitary form an isometry whose
//! `h×h` row blocks automatically satisfy `Σ_i B_i* B_i = I`.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::evolution::BlockState;
use crate::linalg::{self, CMatrix};
use crate::observable::{BlockObservable, BlockProjection};
use crate::scalar::{real, Scalar};
use crate::walk::{SiteIndex, TransitionFamily, ValidationMode};

/// SplitMix64 generator; deterministic for a given seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        (self.uniform() * bound as f64) as usize % bound
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (1.0 - self.uniform()).max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Matrix with independent standard complex Gaussian entries.
pub fn random_gaussian<T: Scalar>(rng: &mut SplitMix64, rows: usize, cols: usize) -> CMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex::new(real::<T>(rng.normal()), real::<T>(rng.normal()))
    })
}

/// Random unitary from the QR factorization of a complex Gaussian matrix.
pub fn random_unitary<T: Scalar>(rng: &mut SplitMix64, dim: usize) -> CMatrix<T> {
    let g = random_gaussian::<T>(rng, dim, dim);
    g.qr().q()
}

/// Random strict-mode family: every source gets `k ≤ n_sites` distinct
/// targets with blocks sliced from one random unitary per source.
pub fn random_kraus_family<T: Scalar>(
    rng: &mut SplitMix64,
    h_dim: usize,
    n_sites: usize,
) -> TransitionFamily<T> {
    let sites: Vec<String> = (0..n_sites).map(|s| s.to_string()).collect();
    let mut transitions = Vec::new();
    for j in 0..n_sites {
        let k = 1 + rng.below(n_sites);
        // k distinct targets, starting from a random offset.
        let offset = rng.below(n_sites);
        let targets: Vec<usize> = (0..k).map(|t| (offset + t) % n_sites).collect();
        let u = random_unitary::<T>(rng, k * h_dim);
        let isometry = u.columns(0, h_dim).into_owned();
        for (slot, i) in targets.into_iter().enumerate() {
            let block = isometry.rows(slot * h_dim, h_dim).into_owned();
            transitions.push((SiteIndex(i), SiteIndex(j), block));
        }
    }
    TransitionFamily::new(
        h_dim,
        sites,
        transitions,
        ValidationMode::Strict,
        real::<T>(1e-9),
    )
    .expect("unitary-block slicing satisfies the Kraus condition")
}

/// Random PSD block `G G†`, unnormalized.
pub fn random_psd<T: Scalar>(rng: &mut SplitMix64, dim: usize) -> CMatrix<T> {
    let g = random_gaussian::<T>(rng, dim, dim);
    &g * g.adjoint()
}

/// Random full-support block state: one PSD block per site, total trace 1.
pub fn random_block_state<T: Scalar>(
    rng: &mut SplitMix64,
    h_dim: usize,
    n_sites: usize,
) -> BlockState<T> {
    let mut blocks: Vec<(SiteIndex, CMatrix<T>)> = (0..n_sites)
        .map(|s| (SiteIndex(s), random_psd::<T>(rng, h_dim)))
        .collect();
    let total: T = blocks
        .iter()
        .map(|(_, m)| linalg::trace_re(m))
        .fold(T::zero(), |acc, t| acc + t);
    for (_, m) in &mut blocks {
        *m /= Complex::new(total, T::zero());
    }
    BlockState::new(h_dim, blocks).expect("normalized PSD blocks form a state")
}

/// Random Hermitian observable with a block on every site.
pub fn random_observable<T: Scalar>(
    rng: &mut SplitMix64,
    h_dim: usize,
    n_sites: usize,
) -> BlockObservable<T> {
    let blocks: Vec<(SiteIndex, CMatrix<T>)> = (0..n_sites)
        .map(|s| {
            let g = random_gaussian::<T>(rng, h_dim, h_dim);
            (SiteIndex(s), linalg::hermitize(&g))
        })
        .collect();
    BlockObservable::hermitian(h_dim, blocks).expect("hermitized blocks are Hermitian")
}

/// Random block projection: on each site, a projector onto a random subset
/// of the columns of a random unitary (possibly rank 0 or full rank).
pub fn random_projection<T: Scalar>(
    rng: &mut SplitMix64,
    h_dim: usize,
    n_sites: usize,
) -> BlockProjection<T> {
    let blocks: Vec<(SiteIndex, CMatrix<T>)> = (0..n_sites)
        .map(|s| {
            let u = random_unitary::<T>(rng, h_dim);
            let rank = rng.below(h_dim + 1);
            let mut p = linalg::zeros::<T>(h_dim);
            for k in 0..rank {
                let col = u.column(k).into_owned();
                let row = col.adjoint();
                p += col * row;
            }
            (SiteIndex(s), p)
        })
        .collect();
    BlockProjection::new(h_dim, blocks).expect("projector blocks are idempotent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::validate_kraus;

    #[test]
    fn sliced_families_pass_validation() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..20 {
            let h = 1 + rng.below(3);
            let n = 2 + rng.below(4);
            let family = random_kraus_family::<f64>(&mut rng, h, n);
            let report = validate_kraus(&family, 1e-12);
            assert!(report.pass, "residual {}", report.max_residual);
        }
    }

    #[test]
    fn random_states_are_normalized() {
        let mut rng = SplitMix64::new(43);
        for _ in 0..20 {
            let state = random_block_state::<f64>(&mut rng, 2, 4);
            assert!((state.total_trace() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_projections_are_idempotent() {
        let mut rng = SplitMix64::new(44);
        for _ in 0..20 {
            let p = random_projection::<f64>(&mut rng, 3, 2);
            for (_, q) in p.blocks() {
                assert!(linalg::fro_dist(&(q * q), q) < 1e-10);
                assert!(linalg::hermitian_residual(q) < 1e-10);
            }
        }
    }

    #[test]
    fn splitmix_is_deterministic() {
        let mut a = SplitMix64::new(1);
        let mut b = SplitMix64::new(1);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
