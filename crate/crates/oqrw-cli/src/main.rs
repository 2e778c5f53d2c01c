//! Command-line front end: ingest walk/state/projection files, run
//! evolution, QMC evaluation and recurrence diagnostics, emit CSV/JSON,
//! and generate the built-in example configurations.
//!
//! Exit codes: 0 pass/holds, 1 fail (including dimension mismatches and
//! not-found results), 2 parse or configuration errors, 3 inconclusive
//! verdicts, 4 failed preconditions (e.g. `φ(J₀(e)) = 0` under the
//! φ-recurrence criterion).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Parser, Subcommand, ValueEnum};

use oqrw::evolution::{
    evolve, find_invariant_state, position_distribution, step, BlockState, InvariantMethod,
    InvariantOpts,
};
use oqrw::io;
use oqrw::linalg::{c, CMatrix};
use oqrw::observable::{BlockObservable, BlockProjection};
use oqrw::qmc::{qmc_evaluate_nested, ExpectationKind, MarkovPair};
use oqrw::recurrence::{
    diagnose, is_accessible, AccessVariant, DiagnoseOpts, RecurrenceCriterion, Verdict,
};
use oqrw::walk::{
    build_ring_walk, build_two_site_walk, validate_kraus, SiteIndex, TransitionFamily,
    ValidationMode, DEFAULT_KRAUS_TOL,
};
use oqrw::Error;

#[derive(Parser)]
#[command(
    name = "oqrw",
    version,
    about = "Open quantum random walks, their quantum Markov chains, and recurrence diagnostics"
)]
struct Cli {
    /// Overrides the subcommand's primary tolerance (Kraus residual for
    /// validate, fixed-point residual for invariant, decision tolerance for
    /// recurrence, witness threshold for accessible).
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Worker threads; accepted for compatibility, evaluation is sequential
    /// and deterministic regardless of the value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Forward,
    Dual,
}

impl From<KindArg> for ExpectationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Forward => ExpectationKind::Forward,
            KindArg::Dual => ExpectationKind::Dual,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    PhiRecurrent,
    PhiCompletelyAccessible,
    ERecurrent,
    ECompletelyAccessible,
}

impl From<CriterionArg> for RecurrenceCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::PhiRecurrent => RecurrenceCriterion::PhiRecurrent,
            CriterionArg::PhiCompletelyAccessible => RecurrenceCriterion::PhiCompletelyAccessible,
            CriterionArg::ERecurrent => RecurrenceCriterion::ERecurrent,
            CriterionArg::ECompletelyAccessible => RecurrenceCriterion::ECompletelyAccessible,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the per-source Kraus condition of a walk file.
    Validate { walk: PathBuf },
    /// Evolve a state and emit one row of site probabilities per step.
    Evolve {
        walk: PathBuf,
        state: PathBuf,
        /// Number of steps.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Position distribution after n steps.
    Dist {
        walk: PathBuf,
        state: PathBuf,
        #[arg(long, default_value_t = 0)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find an invariant state of the walk map.
    Invariant {
        walk: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Dense)]
        method: MethodArg,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        /// Write the state to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a QMC functional on a word of observable files.
    QmcEval {
        walk: PathBuf,
        state: PathBuf,
        /// Observable files, outermost first.
        #[arg(required = true)]
        word: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = KindArg::Forward)]
        kind: KindArg,
        /// Evaluation route.
        #[arg(long, value_enum, default_value_t = RouteArg::Product)]
        method: RouteArg,
    },
    /// Run one recurrence / accessibility criterion.
    Recurrence {
        walk: PathBuf,
        state: PathBuf,
        projection: PathBuf,
        #[arg(long, value_enum)]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value_t = KindArg::Forward)]
        kind: KindArg,
        #[arg(long, default_value_t = oqrw::recurrence::DEFAULT_N_MAX)]
        n_max: usize,
        /// Diagnose the complement of the stored projection.
        #[arg(long)]
        complement: bool,
        /// Write the horizon series as CSV.
        #[arg(long)]
        series_out: Option<PathBuf>,
    },
    /// Search for the smallest accessibility witness between projections.
    Accessible {
        walk: PathBuf,
        state: PathBuf,
        /// Projection e (the starting event).
        #[arg(long)]
        from: PathBuf,
        /// Projection f (the target event).
        #[arg(long)]
        to: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Dual)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = VariantArg::Phi)]
        variant: VariantArg,
        #[arg(long, default_value_t = oqrw::recurrence::DEFAULT_N_MAX)]
        n_max: usize,
        /// Also test the reverse direction (communication).
        #[arg(long)]
        both: bool,
    },
    /// Write walk/state/projection files for a built-in example.
    Example {
        #[command(subcommand)]
        which: ExampleCmd,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Power,
    Dense,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RouteArg {
    Nested,
    Product,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Phi,
    E,
}

#[derive(Subcommand)]
enum ExampleCmd {
    /// Nearest-neighbor ring walk with B = diag(√pr, √(1−pr)) and the
    /// complementary C.
    Ring {
        #[arg(long, default_value_t = 11)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        pr: f64,
        /// Site carrying the projection (defaults to n/2).
        #[arg(long)]
        site: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Two-site walk with diagonal site-1 operators.
    TwoSite {
        #[arg(long, default_value_t = 0.6)]
        a: f64,
        #[arg(long, default_value_t = 0.8)]
        b: f64,
        #[arg(long, default_value_t = 0.8)]
        c: f64,
        #[arg(long, default_value_t = 0.6)]
        d: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Two-site walk with c = 0 and the equal-mixture initial state; only
    /// a = 1 satisfies the Kraus condition, other values are written in
    /// relaxed mode with a warning.
    TwoSitePart2 {
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn log_enabled(level: &str) -> bool {
    static LEVEL: OnceLock<u8> = OnceLock::new();
    let configured = *LEVEL.get_or_init(|| match std::env::var("OQRW_LOG").as_deref() {
        Ok("debug") => 3,
        Ok("info") => 2,
        Ok("warn") => 1,
        Ok("error") => 1,
        Ok("off") => 0,
        _ => 1,
    });
    let requested = match level {
        "debug" => 3,
        "info" => 2,
        _ => 1,
    };
    requested <= configured
}

fn log_info(msg: &str) {
    if log_enabled("info") {
        eprintln!("oqrw: {msg}");
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Json(_) | Error::InvalidInput { .. } | Error::UnknownSite(_) => 2,
        Error::WrongKind { .. } => 2,
        Error::Precondition(_) => 4,
        Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::KrausViolation { .. }
        | Error::OutsideSupport(_)
        | Error::NoInvariantState(_) => 1,
    }
}

fn load_walk(path: &Path) -> Result<TransitionFamily<f64>, Error> {
    let file = io::load_walk_file(path)?;
    let family = io::file_to_walk::<f64>(&file)?;
    log_info(&format!(
        "loaded walk '{}': {} sites, h_dim {}, {} transitions",
        path.display(),
        family.n_sites(),
        family.h_dim(),
        family.n_transitions()
    ));
    Ok(family)
}

fn load_state(path: &Path, family: &TransitionFamily<f64>) -> Result<BlockState<f64>, Error> {
    let file = io::load_block_file(path)?;
    io::file_to_state(&file, family)
}

fn load_projection(
    path: &Path,
    family: &TransitionFamily<f64>,
) -> Result<BlockProjection<f64>, Error> {
    let file = io::load_block_file(path)?;
    io::file_to_projection(&file, family)
}

/// Writes to stdout, exiting quietly when the consumer closed the pipe.
fn emit(text: &str) -> Result<(), Error> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Error::Io(e)),
    }
}

fn emit_json(value: &serde_json::Value) -> Result<(), Error> {
    emit(&format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => emit(text),
    }
}

fn cmd_validate(walk: &Path, tol: f64, format: Format) -> Result<u8, Error> {
    let file = io::load_walk_file(walk)?;
    // Relaxed construction so the report covers invalid families too.
    let family = io::file_to_walk_with_mode::<f64>(&file, ValidationMode::Relaxed)?;
    let report = validate_kraus(&family, tol);
    match format {
        Format::Csv => {
            let mut text = String::from("site,residual,pass\n");
            for site in &report.per_site {
                text.push_str(&format!(
                    "{},{},{}\n",
                    site.label,
                    io::fmt_g17(site.residual),
                    site.residual <= tol
                ));
            }
            emit(&text)?;
        }
        Format::Json => {
            let value = serde_json::json!({
                "pass": report.pass,
                "tol": tol,
                "max_residual": report.max_residual,
                "per_site": report.per_site.iter().map(|s| serde_json::json!({
                    "site": s.label,
                    "residual": s.residual,
                })).collect::<Vec<_>>(),
            });
            emit_json(&value)?;
        }
    }
    Ok(if report.pass { 0 } else { 1 })
}

fn cmd_evolve(
    walk: &Path,
    state_path: &Path,
    n: usize,
    out: &Option<PathBuf>,
) -> Result<u8, Error> {
    let family = load_walk(walk)?;
    let mut state = load_state(state_path, &family)?;
    let mut text = String::from("step");
    for label in family.sites() {
        text.push(',');
        text.push_str(label);
    }
    text.push('\n');
    for step_index in 0..=n {
        if step_index > 0 {
            state = step(&family, &state)?;
        }
        text.push_str(&step_index.to_string());
        for s in 0..family.n_sites() {
            text.push(',');
            text.push_str(&io::fmt_g17(state.trace_at(SiteIndex(s))));
        }
        text.push('\n');
    }
    write_or_print(out, &text)?;
    Ok(0)
}

fn cmd_dist(
    walk: &Path,
    state_path: &Path,
    n: usize,
    out: &Option<PathBuf>,
    format: Format,
) -> Result<u8, Error> {
    let family = load_walk(walk)?;
    let state = evolve(&family, &load_state(state_path, &family)?, n)?;
    let dist = position_distribution(&state);
    let text = match format {
        Format::Csv => io::distribution_csv(&dist, &family),
        Format::Json => {
            let value: serde_json::Map<String, serde_json::Value> = dist
                .iter()
                .map(|(site, p)| (family.label(*site).to_string(), serde_json::json!(p)))
                .collect();
            format!("{}\n", serde_json::to_string_pretty(&value)?)
        }
    };
    write_or_print(out, &text)?;
    Ok(0)
}

fn cmd_invariant(
    walk: &Path,
    method: MethodArg,
    max_iters: usize,
    tol: f64,
    out: &Option<PathBuf>,
) -> Result<u8, Error> {
    let family = load_walk(walk)?;
    let opts = InvariantOpts {
        method: match method {
            MethodArg::Power => InvariantMethod::PowerIteration,
            MethodArg::Dense => InvariantMethod::DenseEigen,
        },
        max_iters,
        tol,
    };
    let solution = find_invariant_state(&family, &opts)?;
    if let Some(path) = out {
        io::save_json(path, &io::state_to_file(&solution.state, &family))?;
    }
    let report = serde_json::json!({
        "residual": solution.residual,
        "iterations": solution.iterations,
        "multiplicity": solution.multiplicity,
    });
    emit_json(&report)?;
    if solution.multiplicity.is_some_and(|m| m > 1) {
        log_info("eigenvalue-1 subspace has dimension > 1: fixed point is not unique");
    }
    Ok(0)
}

fn cmd_qmc_eval(
    walk: &Path,
    state_path: &Path,
    word_paths: &[PathBuf],
    kind: KindArg,
    route: RouteArg,
) -> Result<u8, Error> {
    let family = load_walk(walk)?;
    let state = load_state(state_path, &family)?;
    let pair = MarkovPair::new(&family, state, kind.into())?;
    let word: Vec<BlockObservable<f64>> = word_paths
        .iter()
        .map(|p| io::file_to_observable(&io::load_block_file(p)?, &family))
        .collect::<Result<_, _>>()?;
    let value = match route {
        RouteArg::Nested => qmc_evaluate_nested(&pair, &word)?,
        RouteArg::Product => oqrw::qmc::qmc_evaluate(&pair, &word)?,
    };
    let kind_name = match kind {
        KindArg::Forward => "forward",
        KindArg::Dual => "dual",
    };
    emit_json(&io::functional_record(word.len(), value, kind_name))?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_recurrence(
    walk: &Path,
    state_path: &Path,
    projection: &Path,
    criterion: CriterionArg,
    kind: KindArg,
    n_max: usize,
    complement: bool,
    decision_tol: f64,
    series_out: &Option<PathBuf>,
) -> Result<u8, Error> {
    let family = load_walk(walk)?;
    let state = load_state(state_path, &family)?;
    let pair = MarkovPair::new(&family, state, kind.into())?;
    let mut e = load_projection(projection, &family)?;
    if complement {
        e = e.complement(family.n_sites());
    }
    let opts = DiagnoseOpts {
        n_max,
        decision_tol,
        ..DiagnoseOpts::default()
    };
    let verdict = diagnose(&pair, &e, criterion.into(), &opts)?;
    if let Some(path) = series_out {
        std::fs::write(path, io::series_csv(&verdict.series))?;
    }
    emit_json(&io::verdict_record(&verdict))?;
    Ok(match verdict.verdict {
        Verdict::Holds => 0,
        Verdict::Fails => 1,
        Verdict::Inconclusive => 3,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_accessible(
    walk: &Path,
    state_path: &Path,
    from: &Path,
    to: &Path,
    kind: KindArg,
    variant: VariantArg,
    n_max: usize,
    both: bool,
    access_tol: f64,
) -> Result<u8, Error> {
    let family = load_walk(walk)?;
    let state = load_state(state_path, &family)?;
    let pair = MarkovPair::new(&family, state, kind.into())?;
    let e = load_projection(from, &family)?;
    let f = load_projection(to, &family)?;
    let variant = match variant {
        VariantArg::Phi => AccessVariant::Phi,
        VariantArg::E => AccessVariant::E,
    };
    let (forward_ok, witness) = is_accessible(&pair, &e, &f, n_max, variant, access_tol)?;
    let mut result = serde_json::json!({
        "accessible": forward_ok,
        "witness_n": witness,
        "n_max": n_max,
    });
    let mut ok = forward_ok;
    if both {
        let (reverse_ok, reverse_witness) =
            is_accessible(&pair, &f, &e, n_max, variant, access_tol)?;
        result["reverse_accessible"] = serde_json::json!(reverse_ok);
        result["reverse_witness_n"] = serde_json::json!(reverse_witness);
        result["communicate"] = serde_json::json!(forward_ok && reverse_ok);
        ok = forward_ok && reverse_ok;
    }
    emit_json(&result)?;
    Ok(if ok { 0 } else { 1 })
}

fn write_example_files(
    out_dir: &Path,
    family: &TransitionFamily<f64>,
    state: &BlockState<f64>,
    projection_blocks: Vec<(SiteIndex, CMatrix<f64>)>,
) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    io::save_json(&out_dir.join("walk.json"), &io::walk_to_file(family))?;
    io::save_json(
        &out_dir.join("state.json"),
        &io::state_to_file(state, family),
    )?;
    let projection = BlockProjection::new(family.h_dim(), projection_blocks)?;
    io::save_json(
        &out_dir.join("projection.json"),
        &io::observable_to_file(projection.observable(), family),
    )?;
    log_info(&format!(
        "wrote walk.json, state.json, projection.json to {}",
        out_dir.display()
    ));
    Ok(())
}

fn half_projector() -> CMatrix<f64> {
    CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)])
}

fn cmd_example(which: &ExampleCmd) -> Result<u8, Error> {
    match which {
        ExampleCmd::Ring {
            n,
            pr,
            site,
            out_dir,
        } => {
            if *n < 3 || !(*pr > 0.0 && *pr < 1.0) {
                return Err(Error::InvalidInput {
                    kind: "example",
                    reason: "ring requires n >= 3 and pr in (0,1)".into(),
                });
            }
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
            let family = build_ring_walk(*n, b, cc)?;
            let state = BlockState::maximally_mixed(2, *n);
            let k = site.unwrap_or(*n / 2);
            if k >= *n {
                return Err(Error::UnknownSite(k.to_string()));
            }
            let q = oqrw::linalg::matrix_unit::<f64>(2, 0, 0);
            write_example_files(out_dir, &family, &state, vec![(SiteIndex(k), q)])?;
            Ok(0)
        }
        ExampleCmd::TwoSite {
            a,
            b,
            c: cpar,
            d,
            p,
            out_dir,
        } => {
            let family = build_two_site_walk(
                c(*a, 0.0),
                c(*b, 0.0),
                c(*cpar, 0.0),
                c(*d, 0.0),
                *p,
                ValidationMode::Strict,
            )?;
            let rho0 = CMatrix::from_row_slice(
                2,
                2,
                &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            );
            let state = BlockState::point(2, SiteIndex(1), rho0)?;
            write_example_files(
                out_dir,
                &family,
                &state,
                vec![(SiteIndex(1), half_projector())],
            )?;
            Ok(0)
        }
        ExampleCmd::TwoSitePart2 { a, p, out_dir } => {
            if !(*a > 0.0 && *a <= 1.0) {
                return Err(Error::InvalidInput {
                    kind: "example",
                    reason: "part-2 requires a in (0, 1]".into(),
                });
            }
            let b = (1.0 - a * a).max(0.0).sqrt();
            let mode = if (*a - 1.0).abs() < 1e-15 {
                ValidationMode::Strict
            } else {
                eprintln!(
                    "oqrw: warning: a = {a} violates the site-1 Kraus condition; writing a relaxed-mode walk"
                );
                ValidationMode::Relaxed
            };
            let family =
                build_two_site_walk(c(*a, 0.0), c(b, 0.0), c(0.0, 0.0), c(1.0, 0.0), *p, mode)?;
            let rho0 = CMatrix::from_row_slice(
                2,
                2,
                &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            );
            let half = rho0 * c(0.5, 0.0);
            let state =
                BlockState::new(2, vec![(SiteIndex(0), half.clone()), (SiteIndex(1), half)])?;
            write_example_files(
                out_dir,
                &family,
                &state,
                vec![(SiteIndex(0), half_projector())],
            )?;
            Ok(0)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if cli.threads == 0 {
        return Err(Error::InvalidInput {
            kind: "flags",
            reason: "--threads must be at least 1".into(),
        });
    }
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidInput {
                kind: "flags",
                reason: "--tol must be positive and finite".into(),
            });
        }
    }
    match &cli.command {
        Command::Validate { walk } => {
            cmd_validate(walk, cli.tol.unwrap_or(DEFAULT_KRAUS_TOL), cli.format)
        }
        Command::Evolve {
            walk,
            state,
            n,
            out,
        } => cmd_evolve(walk, state, *n, out),
        Command::Dist {
            walk,
            state,
            n,
            out,
        } => cmd_dist(walk, state, *n, out, cli.format),
        Command::Invariant {
            walk,
            method,
            max_iters,
            out,
        } => cmd_invariant(walk, *method, *max_iters, cli.tol.unwrap_or(1e-10), out),
        Command::QmcEval {
            walk,
            state,
            word,
            kind,
            method,
        } => cmd_qmc_eval(walk, state, word, *kind, *method),
        Command::Recurrence {
            walk,
            state,
            projection,
            criterion,
            kind,
            n_max,
            complement,
            series_out,
        } => cmd_recurrence(
            walk,
            state,
            projection,
            *criterion,
            *kind,
            *n_max,
            *complement,
            cli.tol.unwrap_or(oqrw::recurrence::DEFAULT_DECISION_TOL),
            series_out,
        ),
        Command::Accessible {
            walk,
            state,
            from,
            to,
            kind,
            variant,
            n_max,
            both,
        } => cmd_accessible(
            walk,
            state,
            from,
            to,
            *kind,
            *variant,
            *n_max,
            *both,
            cli.tol.unwrap_or(oqrw::recurrence::DEFAULT_ACCESS_TOL),
        ),
        Command::Example { which } => cmd_example(which),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("oqrw: error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
