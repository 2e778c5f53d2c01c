//! JSON file formats for walks, states and observables, and the CSV/JSON
//! emission helpers used by the command-line front end.
//!
//! Matrices are stored as flat row-major lists of `[re, im]` pairs of 64-bit
//! floats. Serialization uses shortest-round-trip float formatting, so a
//! saved file reloads to bit-identical entries.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::BlockState;
use crate::linalg::CMatrix;
use crate::observable::{BlockObservable, BlockProjection};
use crate::recurrence::RecurrenceVerdict;
use crate::scalar::{real, to_f64, Scalar};
use crate::walk::{SiteIndex, TransitionFamily, ValidationMode, DEFAULT_KRAUS_TOL};

/// One transition record: `matrix` is `B^{to}_{from}`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub from: String,
    pub to: String,
    pub matrix: Vec<[f64; 2]>,
}

/// On-disk walk description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkFile {
    pub h_dim: usize,
    pub sites: Vec<String>,
    pub transitions: Vec<TransitionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<String>,
}

/// One site block of a state, observable or projection file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRecord {
    pub site: String,
    pub matrix: Vec<[f64; 2]>,
}

/// On-disk block map (states, observables and projections share the shape).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockFile {
    pub h_dim: usize,
    pub blocks: Vec<BlockRecord>,
}

pub fn matrix_to_entries<T: Scalar>(m: &CMatrix<T>) -> Vec<[f64; 2]> {
    let dim = m.nrows();
    let mut out = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        for c in 0..dim {
            let z = m[(r, c)];
            out.push([to_f64(z.re), to_f64(z.im)]);
        }
    }
    out
}

pub fn entries_to_matrix<T: Scalar>(dim: usize, entries: &[[f64; 2]]) -> Result<CMatrix<T>> {
    if entries.len() != dim * dim {
        return Err(Error::InvalidInput {
            kind: "matrix",
            reason: format!("expected {} entries, found {}", dim * dim, entries.len()),
        });
    }
    Ok(DMatrix::from_fn(dim, dim, |r, c| {
        let [re, im] = entries[r * dim + c];
        Complex::new(real::<T>(re), real::<T>(im))
    }))
}

fn mode_to_str(mode: ValidationMode) -> &'static str {
    match mode {
        ValidationMode::Strict => "strict",
        ValidationMode::Relaxed => "relaxed",
    }
}

fn parse_mode(s: Option<&str>) -> Result<ValidationMode> {
    match s {
        None | Some("strict") => Ok(ValidationMode::Strict),
        Some("relaxed") => Ok(ValidationMode::Relaxed),
        Some(other) => Err(Error::InvalidInput {
            kind: "walk file",
            reason: format!("unknown validation mode {other:?}"),
        }),
    }
}

pub fn walk_to_file<T: Scalar>(family: &TransitionFamily<T>) -> WalkFile {
    let transitions = family
        .all_transitions()
        .map(|(target, source, b)| TransitionRecord {
            from: family.label(source).to_string(),
            to: family.label(target).to_string(),
            matrix: matrix_to_entries(b),
        })
        .collect();
    WalkFile {
        h_dim: family.h_dim(),
        sites: family.sites().to_vec(),
        transitions,
        validation: Some(mode_to_str(family.validation_mode()).to_string()),
    }
}

/// Builds a family from a parsed file, honoring its validation mode.
pub fn file_to_walk<T: Scalar>(file: &WalkFile) -> Result<TransitionFamily<T>> {
    let mode = parse_mode(file.validation.as_deref())?;
    file_to_walk_with_mode(file, mode)
}

/// Builds a family with an explicit mode (e.g. relaxed, to inspect a file
/// that would fail strict construction).
pub fn file_to_walk_with_mode<T: Scalar>(
    file: &WalkFile,
    mode: ValidationMode,
) -> Result<TransitionFamily<T>> {
    let site_index = |label: &str| -> Result<SiteIndex> {
        file.sites
            .iter()
            .position(|s| s == label)
            .map(SiteIndex)
            .ok_or_else(|| Error::UnknownSite(label.to_string()))
    };
    let mut transitions = Vec::with_capacity(file.transitions.len());
    for record in &file.transitions {
        let source = site_index(&record.from)?;
        let target = site_index(&record.to)?;
        let matrix = entries_to_matrix::<T>(file.h_dim, &record.matrix)?;
        transitions.push((target, source, matrix));
    }
    TransitionFamily::new(
        file.h_dim,
        file.sites.clone(),
        transitions,
        mode,
        real::<T>(DEFAULT_KRAUS_TOL),
    )
}

pub fn state_to_file<T: Scalar>(state: &BlockState<T>, family: &TransitionFamily<T>) -> BlockFile {
    BlockFile {
        h_dim: state.h_dim(),
        blocks: state
            .blocks()
            .map(|(site, m)| BlockRecord {
                site: family.label(site).to_string(),
                matrix: matrix_to_entries(m),
            })
            .collect(),
    }
}

fn resolve_blocks<T: Scalar>(
    file: &BlockFile,
    family: &TransitionFamily<T>,
) -> Result<Vec<(SiteIndex, CMatrix<T>)>> {
    if file.h_dim != family.h_dim() {
        return Err(Error::DimensionMismatch {
            context: "block file".into(),
            expected: family.h_dim(),
            found: file.h_dim,
        });
    }
    file.blocks
        .iter()
        .map(|record| {
            let site = family
                .site_index(&record.site)
                .ok_or_else(|| Error::UnknownSite(record.site.clone()))?;
            let matrix = entries_to_matrix::<T>(file.h_dim, &record.matrix)?;
            Ok((site, matrix))
        })
        .collect()
}

pub fn file_to_state<T: Scalar>(
    file: &BlockFile,
    family: &TransitionFamily<T>,
) -> Result<BlockState<T>> {
    BlockState::new(file.h_dim, resolve_blocks(file, family)?)
}

pub fn observable_to_file<T: Scalar>(
    obs: &BlockObservable<T>,
    family: &TransitionFamily<T>,
) -> BlockFile {
    BlockFile {
        h_dim: obs.h_dim(),
        blocks: obs
            .blocks()
            .map(|(site, m)| BlockRecord {
                site: family.label(site).to_string(),
                matrix: matrix_to_entries(m),
            })
            .collect(),
    }
}

/// Loads an observable, requiring Hermitian blocks (the functionals in this
/// crate are only meaningful on Hermitian arguments).
pub fn file_to_observable<T: Scalar>(
    file: &BlockFile,
    family: &TransitionFamily<T>,
) -> Result<BlockObservable<T>> {
    BlockObservable::hermitian(file.h_dim, resolve_blocks(file, family)?)
}

pub fn file_to_projection<T: Scalar>(
    file: &BlockFile,
    family: &TransitionFamily<T>,
) -> Result<BlockProjection<T>> {
    BlockProjection::new(file.h_dim, resolve_blocks(file, family)?)
}

pub fn save_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_walk_file(path: &Path) -> Result<WalkFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_block_file(path: &Path) -> Result<BlockFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Formats a float with 17 significant digits.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `site,probability` rows.
pub fn distribution_csv<T: Scalar>(
    dist: &[(SiteIndex, T)],
    family: &TransitionFamily<T>,
) -> String {
    let mut out = String::from("site,probability\n");
    for (site, p) in dist {
        out.push_str(&format!(
            "{},{}\n",
            family.label(*site),
            fmt_g17(to_f64(*p))
        ));
    }
    out
}

/// `n,value` rows for a horizon series.
pub fn series_csv<T: Scalar>(series: &[T]) -> String {
    let mut out = String::from("n,value\n");
    for (n, v) in series.iter().enumerate() {
        out.push_str(&format!("{n},{}\n", fmt_g17(to_f64(*v))));
    }
    out
}

/// The JSON record `{word_length, value, kind}` for a functional result.
pub fn functional_record(word_length: usize, value: f64, kind: &str) -> serde_json::Value {
    serde_json::json!({
        "word_length": word_length,
        "value": value,
        "kind": kind,
    })
}

/// The JSON verdict record `{criterion, limit, ratio, verdict, n_max}`.
pub fn verdict_record<T: Scalar>(verdict: &RecurrenceVerdict<T>) -> serde_json::Value {
    serde_json::json!({
        "criterion": verdict.criterion.to_string(),
        "limit": to_f64(verdict.limit),
        "ratio": verdict.ratio.map(to_f64),
        "verdict": verdict.verdict.to_string(),
        "n_max": verdict.n_max,
    })
}
