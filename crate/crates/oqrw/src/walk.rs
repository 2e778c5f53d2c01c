//! Transition operator families `{B^i_j}` defining an open quantum random
//! walk on a finite site set.
//!
//! Each source site `j` carries a sparse list of `(target i, B^i_j)`
//! transitions; absent pairs are zero operators. A family is well formed
//! when every source satisfies the Kraus condition
//! `Σ_i B^{i*}_j B^i_j = I`, which is what makes the induced map trace
//! preserving. The dilations `B^i_j ⊗ |i⟩⟨j|` are never materialized; every
//! downstream formula works block-wise.

use std::collections::BTreeMap;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::scalar::{real, Scalar};

/// Default tolerance for the per-source Kraus residual.
pub const DEFAULT_KRAUS_TOL: f64 = 1e-9;

/// Index into a family's ordered site list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteIndex(pub usize);

impl std::fmt::Display for SiteIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether construction enforces the Kraus condition or merely records the
/// residual.
///
/// Relaxed mode exists to reproduce computations stated for parameter
/// choices that violate the normalization (the two-site walk with `c = 0`
/// and `|a| < 1`); every property of the dynamics assumes strict mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    #[default]
    Strict,
    Relaxed,
}

/// Per-source residual from a Kraus validation pass.
#[derive(Debug, Clone)]
pub struct SiteResidual<T> {
    pub site: SiteIndex,
    pub label: String,
    pub residual: T,
}

/// Result of [`validate_kraus`]: one residual per source site.
#[derive(Debug, Clone)]
pub struct ValidationReport<T> {
    pub per_site: Vec<SiteResidual<T>>,
    pub max_residual: T,
    pub tol: T,
    pub pass: bool,
}

/// The operator family `{B^i_j}` of an OQRW on a finite lattice.
#[derive(Debug, Clone)]
pub struct TransitionFamily<T: Scalar> {
    h_dim: usize,
    sites: Vec<String>,
    transitions: BTreeMap<usize, Vec<(usize, CMatrix<T>)>>,
    validation_mode: ValidationMode,
    max_kraus_residual: T,
}

impl<T: Scalar> TransitionFamily<T> {
    /// Builds a family from explicit transitions, validating dimensions and,
    /// in strict mode, the per-source Kraus condition at tolerance `tol`.
    pub fn new(
        h_dim: usize,
        sites: Vec<String>,
        transitions: Vec<(SiteIndex, SiteIndex, CMatrix<T>)>,
        validation_mode: ValidationMode,
        tol: T,
    ) -> Result<Self> {
        if h_dim == 0 {
            return Err(Error::InvalidInput {
                kind: "family",
                reason: "h_dim must be positive".into(),
            });
        }
        if sites.is_empty() {
            return Err(Error::InvalidInput {
                kind: "family",
                reason: "site list is empty".into(),
            });
        }
        let n = sites.len();
        let mut map: BTreeMap<usize, Vec<(usize, CMatrix<T>)>> = BTreeMap::new();
        for (target, source, b) in transitions {
            if target.0 >= n {
                return Err(Error::UnknownSite(target.to_string()));
            }
            if source.0 >= n {
                return Err(Error::UnknownSite(source.to_string()));
            }
            linalg::check_operator(&b, h_dim, &format!("B^{}_{}", target.0, source.0))?;
            map.entry(source.0).or_default().push((target.0, b));
        }
        let mut family = Self {
            h_dim,
            sites,
            transitions: map,
            validation_mode,
            max_kraus_residual: T::zero(),
        };
        let report = validate_kraus(&family, tol);
        family.max_kraus_residual = report.max_residual;
        if validation_mode == ValidationMode::Strict && !report.pass {
            let worst = report
                .per_site
                .iter()
                .max_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap())
                .expect("report is non-empty");
            return Err(Error::KrausViolation {
                site: worst.label.clone(),
                residual: worst.residual.to_subset().unwrap_or(f64::NAN),
                tol: tol.to_subset().unwrap_or(f64::NAN),
            });
        }
        Ok(family)
    }

    /// Keeps only the sources in `keep`; validation is skipped because the
    /// kept sources inherit the Kraus condition from the parent family.
    pub(crate) fn restricted_to_sources(&self, keep: &[usize]) -> Self {
        let transitions = self
            .transitions
            .iter()
            .filter(|(src, _)| keep.contains(src))
            .map(|(src, list)| (*src, list.clone()))
            .collect();
        Self {
            h_dim: self.h_dim,
            sites: self.sites.clone(),
            transitions,
            validation_mode: self.validation_mode,
            max_kraus_residual: self.max_kraus_residual,
        }
    }

    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn validation_mode(&self) -> ValidationMode {
        self.validation_mode
    }

    /// Largest per-source Kraus residual observed at construction.
    pub fn max_kraus_residual(&self) -> T {
        self.max_kraus_residual
    }

    pub fn site_index(&self, label: &str) -> Option<SiteIndex> {
        self.sites.iter().position(|s| s == label).map(SiteIndex)
    }

    pub fn label(&self, site: SiteIndex) -> &str {
        &self.sites[site.0]
    }

    /// Outgoing transitions `(target, B^{target}_{source})` of a source site.
    pub fn transitions_from(&self, source: SiteIndex) -> &[(usize, CMatrix<T>)] {
        self.transitions
            .get(&source.0)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Source sites that carry at least one transition.
    pub fn source_sites(&self) -> impl Iterator<Item = SiteIndex> + '_ {
        self.transitions.keys().copied().map(SiteIndex)
    }

    /// Iterates all `(target, source, B^{target}_{source})` triples.
    pub fn all_transitions(&self) -> impl Iterator<Item = (SiteIndex, SiteIndex, &CMatrix<T>)> {
        self.transitions.iter().flat_map(|(src, list)| {
            list.iter()
                .map(move |(tgt, b)| (SiteIndex(*tgt), SiteIndex(*src), b))
        })
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.values().map(Vec::len).sum()
    }

    /// `Σ_i B^{i*}_j B^i_j` for a source `j` (zero matrix if no transitions).
    pub fn kraus_sum(&self, source: SiteIndex) -> CMatrix<T> {
        let mut sum = linalg::zeros::<T>(self.h_dim);
        for (_, b) in self.transitions_from(source) {
            sum += b.adjoint() * b;
        }
        sum
    }
}

/// Checks `‖Σ_i B^{i*}_j B^i_j − I‖_F ≤ tol` for every site of the lattice.
///
/// Sites without outgoing transitions count with the residual of the zero
/// sum, `‖I‖_F = √h_dim`.
pub fn validate_kraus<T: Scalar>(family: &TransitionFamily<T>, tol: T) -> ValidationReport<T> {
    let id = linalg::identity::<T>(family.h_dim());
    let mut per_site = Vec::with_capacity(family.n_sites());
    let mut max_residual = T::zero();
    for s in 0..family.n_sites() {
        let site = SiteIndex(s);
        let residual = linalg::fro_dist(&family.kraus_sum(site), &id);
        if residual > max_residual {
            max_residual = residual;
        }
        per_site.push(SiteResidual {
            site,
            label: family.label(site).to_string(),
            residual,
        });
    }
    ValidationReport {
        per_site,
        max_residual,
        tol,
        pass: max_residual <= tol,
    }
}

/// Nearest-neighbor walk on the cyclic lattice `Z_n`: from every site `j`,
/// the left jump `j → j−1` carries `B` and the right jump `j → j+1` carries
/// `C`, indices mod `n_sites`.
///
/// The cyclic truncation keeps the Kraus condition `B*B + C*C = I` intact
/// with unchanged operators; local quantities at a site are free of boundary
/// effects for horizons shorter than `n_sites − 2`.
pub fn build_ring_walk<T: Scalar>(
    n_sites: usize,
    b: CMatrix<T>,
    c: CMatrix<T>,
) -> Result<TransitionFamily<T>> {
    if n_sites < 3 {
        return Err(Error::InvalidInput {
            kind: "ring walk",
            reason: format!("need at least 3 sites, got {n_sites}"),
        });
    }
    let h_dim = b.nrows();
    linalg::check_operator(&b, h_dim, "B")?;
    linalg::check_operator(&c, h_dim, "C")?;
    let tol = real::<T>(DEFAULT_KRAUS_TOL);
    let sum = b.adjoint() * &b + c.adjoint() * &c;
    let residual = linalg::fro_dist(&sum, &linalg::identity(h_dim));
    if residual > tol {
        return Err(Error::KrausViolation {
            site: "every site".into(),
            residual: residual.to_subset().unwrap_or(f64::NAN),
            tol: DEFAULT_KRAUS_TOL,
        });
    }
    let sites = (0..n_sites).map(|k| k.to_string()).collect();
    let mut transitions = Vec::with_capacity(2 * n_sites);
    for j in 0..n_sites {
        let left = (j + n_sites - 1) % n_sites;
        let right = (j + 1) % n_sites;
        transitions.push((SiteIndex(left), SiteIndex(j), b.clone()));
        transitions.push((SiteIndex(right), SiteIndex(j), c.clone()));
    }
    TransitionFamily::new(h_dim, sites, transitions, ValidationMode::Strict, tol)
}

/// The standard two-site walk on sites `{1, 2}` with `H = C²`:
///
/// ```text
/// B^1_1 = diag(a, b)   B^1_2 = [[0, √p], [0, 0]]
/// B^2_1 = diag(c, d)   B^2_2 = diag(1, √q)        q = 1 − p
/// ```
///
/// Site 2 satisfies the Kraus condition for any `p ∈ (0,1)`; site 1 requires
/// `|a|² + |c|² = |b|² + |d|² = 1`, which is validated per `mode`.
pub fn build_two_site_walk<T: Scalar>(
    a: Complex<T>,
    b: Complex<T>,
    c: Complex<T>,
    d: Complex<T>,
    p: T,
    mode: ValidationMode,
) -> Result<TransitionFamily<T>> {
    if p <= T::zero() || p >= T::one() {
        return Err(Error::InvalidInput {
            kind: "two-site walk",
            reason: "p must lie in (0, 1)".into(),
        });
    }
    let q = T::one() - p;
    let zero = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());
    let b11 = CMatrix::<T>::from_row_slice(2, 2, &[a, zero, zero, b]);
    let b12 =
        CMatrix::<T>::from_row_slice(2, 2, &[zero, Complex::new(p.sqrt(), T::zero()), zero, zero]);
    let b22 =
        CMatrix::<T>::from_row_slice(2, 2, &[one, zero, zero, Complex::new(q.sqrt(), T::zero())]);
    let b21 = CMatrix::<T>::from_row_slice(2, 2, &[c, zero, zero, d]);
    let sites = vec!["1".to_string(), "2".to_string()];
    let transitions = vec![
        (SiteIndex(0), SiteIndex(0), b11),
        (SiteIndex(0), SiteIndex(1), b12),
        (SiteIndex(1), SiteIndex(1), b22),
        (SiteIndex(1), SiteIndex(0), b21),
    ];
    TransitionFamily::new(2, sites, transitions, mode, real::<T>(DEFAULT_KRAUS_TOL))
}
