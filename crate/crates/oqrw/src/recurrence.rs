//! Stopping-time expectations and the recurrence / accessibility
//! diagnostics built on them.
//!
//! The stopping-time words are built from a block projection `e`:
//!
//! * `τ^n_∞` is the `(n+1)`-fold word `e⊥ ⊗ … ⊗ e⊥` ("not yet entered by
//!   horizon n");
//! * the joint word `J₀(e) ⊗ τ tail` is `[e, e⊥, …, e⊥]` with `n` trailing
//!   complements ("started in e, never returned").
//!
//! The limit objects behind the definitions are never represented as
//! operators; every criterion is evaluated as a monotone horizon series with
//! a verdict from geometric-ratio certification. Inconclusive is a
//! first-class outcome, never coerced.

use crate::error::{Error, Result};
use crate::linalg;
use crate::observable::{BlockObservable, BlockProjection};
use crate::qmc::{qmc_evaluate, transition_expectation, ExpectationKind, MarkovPair};
use crate::scalar::{real, to_f64, Scalar};
use crate::walk::SiteIndex;

/// Default decision tolerance for limit-vs-zero verdicts.
pub const DEFAULT_DECISION_TOL: f64 = 1e-8;
/// Default threshold above which a functional value witnesses accessibility.
pub const DEFAULT_ACCESS_TOL: f64 = 1e-12;
/// Default horizon for the diagnostics.
pub const DEFAULT_N_MAX: usize = 200;
/// Number of trailing horizons used for ratio certification.
pub const RATIO_WINDOW: usize = 10;

/// A projection together with a horizon; the input of one stopping-time
/// evaluation.
#[derive(Debug, Clone)]
pub struct StoppingTimeSpec<T: Scalar> {
    pub projection: BlockProjection<T>,
    pub horizon: usize,
}

impl<T: Scalar> StoppingTimeSpec<T> {
    pub fn new(projection: BlockProjection<T>, horizon: usize) -> Self {
        Self {
            projection,
            horizon,
        }
    }

    /// `φ(τ^horizon_∞)` under the given pair.
    pub fn tau(&self, pair: &MarkovPair<T>) -> Result<T> {
        tau_expectation(pair, &self.projection, self.horizon)
    }

    /// `φ(J₀(e) ⊗ τ tail)` under the given pair.
    pub fn joint(&self, pair: &MarkovPair<T>) -> Result<T> {
        joint_tau_expectation(pair, &self.projection, self.horizon)
    }
}

fn tau_word<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    letters: usize,
) -> Vec<BlockObservable<T>> {
    let eperp = e.complement(pair.n_sites()).to_observable();
    vec![eperp; letters]
}

/// `φ(τ^n_∞)`: the functional of the `(n+1)`-fold complement word,
/// evaluated with the pair's own kind. Non-increasing in `n`.
pub fn tau_expectation<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    n: usize,
) -> Result<T> {
    qmc_evaluate(pair, &tau_word(pair, e, n + 1))
}

/// `φ(J₀(e) ⊗ τ^n tail)`: the word `[e, e⊥ × n]`. Non-increasing in `n`;
/// its vanishing limit is the recurrence criterion.
pub fn joint_tau_expectation<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    n: usize,
) -> Result<T> {
    let mut word = Vec::with_capacity(n + 1);
    word.push(e.to_observable());
    let eperp = e.complement(pair.n_sites()).to_observable();
    word.extend(std::iter::repeat_n(eperp, n));
    qmc_evaluate(pair, &word)
}

/// The conditional expectation `E_{0]}(τ^n_∞)`: the `(n+1)`-fold nested
/// chain `𝓔(e⊥ ⊗ 𝓔(e⊥ ⊗ … 𝓔(e⊥ ⊗ 1)…))` as a block observable.
/// Requires a forward pair.
pub fn e0_tau<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    n: usize,
) -> Result<BlockObservable<T>> {
    if pair.kind() != ExpectationKind::Forward {
        return Err(Error::WrongKind {
            required: "forward",
        });
    }
    let eperp = e.complement(pair.n_sites()).to_observable();
    let mut acc = pair.identity();
    for _ in 0..=n {
        acc = transition_expectation(pair, &eperp, &acc)?;
    }
    Ok(acc)
}

/// Closed form of `𝓔(e ⊗ E_{0]}(τ^n_∞))`: block `v` carries
/// `D_v(e) · ψ_v(e⊥)^{n+1}`, which is `Σ_u M^{u*}_v e M^u_v` compressed
/// block-wise. Requires a forward pair.
pub fn e_tau_closed_forward<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    n: usize,
) -> Result<BlockObservable<T>> {
    if pair.kind() != ExpectationKind::Forward {
        return Err(Error::WrongKind {
            required: "forward",
        });
    }
    let eperp = e.complement(pair.n_sites()).to_observable();
    let e_obs = e.to_observable();
    let mut blocks = Vec::new();
    for v in pair.support().support_sites() {
        let v = SiteIndex(*v);
        let decay = crate::qmc::psi(pair, v, &eperp)?;
        let weight = num_complex::Complex::new(decay.powi(n as i32 + 1), T::zero());
        blocks.push((v, pair.compress(v, &e_obs) * weight));
    }
    BlockObservable::new(pair.h_dim(), blocks)
}

/// The four diagnosed criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrenceCriterion {
    PhiRecurrent,
    PhiCompletelyAccessible,
    ERecurrent,
    ECompletelyAccessible,
}

impl std::fmt::Display for RecurrenceCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RecurrenceCriterion::PhiRecurrent => "phi-recurrent",
            RecurrenceCriterion::PhiCompletelyAccessible => "phi-completely-accessible",
            RecurrenceCriterion::ERecurrent => "E-recurrent",
            RecurrenceCriterion::ECompletelyAccessible => "E-completely-accessible",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        };
        write!(f, "{s}")
    }
}

/// Per-site horizon series for the operator-valued criteria.
#[derive(Debug, Clone)]
pub struct SiteSeries<T> {
    pub site: SiteIndex,
    pub series: Vec<T>,
    pub ratio: Option<T>,
}

/// Outcome of [`diagnose`]: the horizon series of the decisive quantity,
/// its extrapolated limit, the certified geometric ratio when one exists,
/// and the verdict.
#[derive(Debug, Clone)]
pub struct RecurrenceVerdict<T: Scalar> {
    pub criterion: RecurrenceCriterion,
    /// Value at each horizon `0..=n_max`.
    pub series: Vec<T>,
    pub limit: T,
    pub ratio: Option<T>,
    pub verdict: Verdict,
    pub n_max: usize,
    pub decision_tol: T,
    /// Per-block series for the E-criteria (empty for the φ-criteria).
    pub per_site: Vec<SiteSeries<T>>,
}

#[derive(Debug, Clone)]
pub struct DiagnoseOpts<T> {
    pub n_max: usize,
    pub decision_tol: T,
    pub access_tol: T,
}

impl<T: Scalar> Default for DiagnoseOpts<T> {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_N_MAX,
            decision_tol: real::<T>(DEFAULT_DECISION_TOL),
            access_tol: real::<T>(DEFAULT_ACCESS_TOL),
        }
    }
}

struct Certification<T> {
    verdict: Verdict,
    limit: T,
    ratio: Option<T>,
}

/// Estimates the geometric ratio from trailing value quotients of a series
/// decaying to zero.
fn value_ratio<T: Scalar>(series: &[T]) -> Option<T> {
    let floor = real::<T>(1e-280);
    let start = series.len().saturating_sub(RATIO_WINDOW + 1);
    let mut last = None;
    for w in series[start..].windows(2) {
        if w[0] > floor && w[1] > floor {
            last = Some(w[1] / w[0]);
        }
    }
    last
}

/// Certifies the limit of a monotone non-increasing, non-negative series.
///
/// A series ending at or below `tol` holds (monotonicity pins the limit);
/// otherwise the last [`RATIO_WINDOW`] differences must either vanish (a
/// plateau above zero: fails) or form a consistent geometric decay whose
/// extrapolated limit decides. Anything else is inconclusive.
fn certify<T: Scalar>(series: &[T], tol: T) -> Certification<T> {
    let last = *series.last().expect("series is non-empty");
    if last <= tol {
        return Certification {
            verdict: Verdict::Holds,
            limit: if last > T::zero() { last } else { T::zero() },
            ratio: value_ratio(series),
        };
    }
    if series.len() < RATIO_WINDOW + 2 {
        return Certification {
            verdict: Verdict::Inconclusive,
            limit: last,
            ratio: None,
        };
    }
    let start = series.len() - (RATIO_WINDOW + 1);
    let diffs: Vec<T> = series[start..].windows(2).map(|w| w[0] - w[1]).collect();
    let plateau = tol * real::<T>(1e-2);
    if diffs.iter().all(|d| d.abs() <= plateau) {
        return Certification {
            verdict: Verdict::Fails,
            limit: last,
            ratio: value_ratio(series),
        };
    }
    if diffs.iter().all(|d| *d > T::zero()) {
        let ratios: Vec<T> = diffs.windows(2).map(|w| w[1] / w[0]).collect();
        let max_q = ratios
            .iter()
            .copied()
            .fold(T::zero(), |a, b| if b > a { b } else { a });
        let min_q = ratios
            .iter()
            .copied()
            .fold(T::one(), |a, b| if b < a { b } else { a });
        let consistent = max_q < real::<T>(0.9999)
            && min_q > T::zero()
            && (max_q - min_q) <= max_q * real::<T>(1e-3) + real::<T>(1e-12);
        if consistent {
            let q = *ratios.last().expect("window has ratios");
            let d_last = *diffs.last().expect("window has diffs");
            let limit = last - d_last * q / (T::one() - q);
            let verdict = if limit <= tol {
                Verdict::Holds
            } else {
                Verdict::Fails
            };
            return Certification {
                verdict,
                limit: if limit > T::zero() { limit } else { T::zero() },
                ratio: Some(q),
            };
        }
    }
    Certification {
        verdict: Verdict::Inconclusive,
        limit: last,
        ratio: None,
    }
}

/// Runs one recurrence / accessibility criterion over horizons `0..=n_max`.
///
/// The two φ-criteria accept either expectation kind; the two E-criteria
/// require a forward pair. φ-recurrence additionally requires
/// `φ(J₀(e)) ≠ 0`, per definition (iv) of the criterion.
pub fn diagnose<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    criterion: RecurrenceCriterion,
    opts: &DiagnoseOpts<T>,
) -> Result<RecurrenceVerdict<T>> {
    let mut per_site: Vec<SiteSeries<T>> = Vec::new();
    let series: Vec<T> = match criterion {
        RecurrenceCriterion::PhiCompletelyAccessible => (0..=opts.n_max)
            .map(|n| tau_expectation(pair, e, n))
            .collect::<Result<_>>()?,
        RecurrenceCriterion::PhiRecurrent => {
            let mass = qmc_evaluate(pair, &[e.to_observable()])?;
            if mass.abs() <= opts.access_tol {
                return Err(Error::Precondition(format!(
                    "phi-recurrence requires phi(J0(e)) != 0, got {:.3e}",
                    to_f64(mass)
                )));
            }
            (0..=opts.n_max)
                .map(|n| joint_tau_expectation(pair, e, n))
                .collect::<Result<_>>()?
        }
        RecurrenceCriterion::ECompletelyAccessible | RecurrenceCriterion::ERecurrent => {
            if pair.kind() != ExpectationKind::Forward {
                return Err(Error::WrongKind {
                    required: "forward",
                });
            }
            let e_obs = e.to_observable();
            let eperp = e.complement(pair.n_sites()).to_observable();
            let support: Vec<SiteIndex> = pair
                .support()
                .support_sites()
                .iter()
                .map(|s| SiteIndex(*s))
                .collect();
            let mut site_series: Vec<(SiteIndex, Vec<T>)> =
                support.iter().map(|s| (*s, Vec::new())).collect();
            let mut series = Vec::with_capacity(opts.n_max + 1);

            let inflow = transition_expectation(pair, &e_obs, &pair.identity())?;
            let total_inflow: T = support
                .iter()
                .map(|v| {
                    inflow
                        .block(*v)
                        .map(linalg::trace_re)
                        .unwrap_or_else(T::zero)
                })
                .fold(T::zero(), |a, b| a + b);
            if criterion == RecurrenceCriterion::ERecurrent && total_inflow <= opts.access_tol {
                return Err(Error::Precondition(
                    "E-recurrence requires Tr(E(e ⊗ 1)) > 0".into(),
                ));
            }

            // One incremental chain drives both E-criteria.
            let mut acc = pair.identity();
            for _ in 0..=opts.n_max {
                acc = transition_expectation(pair, &eperp, &acc)?;
                match criterion {
                    RecurrenceCriterion::ECompletelyAccessible => {
                        let mut worst = T::zero();
                        for (site, sv) in site_series.iter_mut() {
                            let norm = acc
                                .block(*site)
                                .map(linalg::fro_norm)
                                .unwrap_or_else(T::zero);
                            sv.push(norm);
                            if norm > worst {
                                worst = norm;
                            }
                        }
                        series.push(worst);
                    }
                    RecurrenceCriterion::ERecurrent => {
                        let returned = transition_expectation(pair, &e_obs, &acc)?;
                        let mut total = T::zero();
                        for (site, sv) in site_series.iter_mut() {
                            let tr = returned
                                .block(*site)
                                .map(linalg::trace_re)
                                .unwrap_or_else(T::zero)
                                / total_inflow;
                            sv.push(tr);
                            total += tr;
                        }
                        series.push(total);
                    }
                    _ => unreachable!(),
                }
            }
            per_site = site_series
                .into_iter()
                .map(|(site, series)| {
                    let ratio = value_ratio(&series);
                    SiteSeries {
                        site,
                        series,
                        ratio,
                    }
                })
                .collect();
            series
        }
    };

    let cert = certify(&series, opts.decision_tol);
    Ok(RecurrenceVerdict {
        criterion,
        series,
        limit: cert.limit,
        ratio: cert.ratio,
        verdict: cert.verdict,
        n_max: opts.n_max,
        decision_tol: opts.decision_tol,
        per_site,
    })
}

/// Which functional witnesses accessibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessVariant {
    /// Scalar functional `φ(J₀(e) ⊗ 1 ⊗ … ⊗ 1 ⊗ J_n(f))`.
    Phi,
    /// Operator chain `E_{0]}` on the same word, witnessed by block norm.
    E,
}

/// Searches for the smallest `n ∈ 1..=n_max` with a non-vanishing witness on
/// the word `[e, 1×(n−1), f]`.
pub fn is_accessible<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    f: &BlockProjection<T>,
    n_max: usize,
    variant: AccessVariant,
    access_tol: T,
) -> Result<(bool, Option<usize>)> {
    let e_obs = e.to_observable();
    let f_obs = f.to_observable();
    let id = pair.identity();
    // Inner chain 𝓔(1 ⊗ … 𝓔(f ⊗ 1)…), extended by one identity per n.
    let mut inner = transition_expectation(pair, &f_obs, &id)?;
    for n in 1..=n_max {
        let full = transition_expectation(pair, &e_obs, &inner)?;
        let witness = match variant {
            AccessVariant::Phi => pair.weight(&full).re.abs(),
            AccessVariant::E => full.max_block_norm(),
        };
        if witness > access_tol {
            return Ok((true, Some(n)));
        }
        if n < n_max {
            inner = transition_expectation(pair, &id, &inner)?;
        }
    }
    Ok((false, None))
}

/// Accessibility in both directions.
pub fn communicates<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    f: &BlockProjection<T>,
    n_max: usize,
    variant: AccessVariant,
    access_tol: T,
) -> Result<bool> {
    let (ef, _) = is_accessible(pair, e, f, n_max, variant, access_tol)?;
    if !ef {
        return Ok(false);
    }
    let (fe, _) = is_accessible(pair, f, e, n_max, variant, access_tol)?;
    Ok(fe)
}

/// Finite-horizon consistency report for the equivalence between
/// "`φ(J_m(e)) = 0` for all `m`" and "all identity-shifted `τ^n_∞` words
/// evaluate to 1".
#[derive(Debug, Clone)]
pub struct ShiftConsistencyReport<T> {
    /// `φ(J_m(e))` for `m = 0..=n_max`.
    pub j_values: Vec<T>,
    /// `φ(1^⊗k ⊗ τ^{n_max}_∞)` for `k = 0..=n_max`.
    pub shifted_tau: Vec<T>,
    pub all_j_zero: bool,
    pub all_shifted_one: bool,
    pub consistent: bool,
}

/// Evaluates both sides of the equivalence at every horizon up to `n_max`
/// and flags a violation beyond `1e-9` (scaled by the word length on the
/// shifted side, which accumulates one tolerance per letter).
pub fn check_shift_consistency<T: Scalar>(
    pair: &MarkovPair<T>,
    e: &BlockProjection<T>,
    n_max: usize,
) -> Result<ShiftConsistencyReport<T>> {
    let tol = real::<T>(1e-9);
    let id = pair.identity();
    let e_obs = e.to_observable();

    let mut j_values = Vec::with_capacity(n_max + 1);
    let mut acc = transition_expectation(pair, &e_obs, &id)?;
    j_values.push(pair.weight(&acc).re);
    for _ in 1..=n_max {
        acc = transition_expectation(pair, &id, &acc)?;
        j_values.push(pair.weight(&acc).re);
    }

    let eperp = e.complement(pair.n_sites()).to_observable();
    let mut tau_chain = pair.identity();
    for _ in 0..=n_max {
        tau_chain = transition_expectation(pair, &eperp, &tau_chain)?;
    }
    let mut shifted_tau = Vec::with_capacity(n_max + 1);
    shifted_tau.push(pair.weight(&tau_chain).re);
    for _ in 1..=n_max {
        tau_chain = transition_expectation(pair, &id, &tau_chain)?;
        shifted_tau.push(pair.weight(&tau_chain).re);
    }

    let all_j_zero = j_values.iter().all(|v| v.abs() <= tol);
    let word_len = real::<T>((n_max + 1) as f64);
    let all_shifted_one = shifted_tau
        .iter()
        .all(|v| (T::one() - *v).abs() <= tol * word_len);
    Ok(ShiftConsistencyReport {
        j_values,
        shifted_tau,
        all_j_zero,
        all_shifted_one,
        consistent: all_j_zero == all_shifted_one,
    })
}
