//! dcforge: build and certify difference-of-convex decompositions.
//!
//! Subcommands mirror the library modules: `risk` for scenario-based risk
//! measures, `qp` for the parametric QP value function, `recourse` for
//! affine-parameter recourse values, `piecewise` for min-representations,
//! `folded` for folded concave penalties, and `verify-suite` for the
//! built-in certification battery.
//!
//! Exit codes: 0 when every requested check passes, 1 when a check fails
//! (including a penalty rejected as not dc), 2 on malformed input.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dcforge_core::dc::DcFunction;
use dcforge_core::expr::Domain;
use dcforge_core::folded::{self, FoldedCase, FoldedSpec};
use dcforge_core::piecewise::{self, PiecewiseLc1, QuadraticPiece};
use dcforge_core::polyhedral::Polyhedron;
use dcforge_core::qp::{self, QpInstance, RecourseMap};
use dcforge_core::risk::{self, MeasureSpec, PwlUtility, RandomDcFunctional};
use dcforge_core::verify::{self, CheckReport};
use dcforge_core::{Error, SplitMix64};

#[derive(Parser)]
#[command(name = "dcforge", version, about = "difference-of-convex decomposition toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for all sampled checks.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Relative tolerance for identity checks.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Sample count per check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Run the certification checks for the requested object.
    #[arg(long)]
    verify: bool,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decompose a risk measure of a scenario functional.
    Risk {
        /// Scenario-set file: {"p": [...], "scenarios": [{"pExpr":..., "qExpr":...}], "domain":..., "utility"?: {"a": [...], "alpha": [...]}}
        #[arg(long = "in")]
        input: PathBuf,
        /// Measure spec: cvar:A | var:A | oce | mu | variance | std | dev:KIND@CENTER | Rlambda:L:DEV
        #[arg(long, default_value = "cvar:0.5")]
        measure: String,
        /// Default alpha for the oce/mu utility when the file has none.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Wrap the measure as expectation + lambda * measure.
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Solve and decompose a parametric QP value function.
    Qp {
        /// Instance file: {"Q": [[...]], "D": [[...]]}
        #[arg(long = "in")]
        input: PathBuf,
        /// Query file: {"q": [...], "b": [...]} or {"region": DOMAIN, "grid": [nq, nb]}
        #[arg(long)]
        query: Option<PathBuf>,
        /// Build the dc decomposition over the query region.
        #[arg(long)]
        dc: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Decompose a QP recourse value over a first-stage region.
    Recourse {
        /// File: {"Q":..., "D":..., "scenarios": [{"f":..., "G":..., "C":..., "xi":...}], "x_region": DOMAIN}
        #[arg(long = "in")]
        input: PathBuf,
        /// Scenario index (defaults to all scenarios).
        #[arg(long)]
        scenario: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Min-representation of a piecewise quadratic selection.
    Piecewise {
        /// File: {"pieces": [{"A":..., "a":..., "c":...}], "regions": [POLYHEDRON], "box"?: {"lower":..., "upper":...}}
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decompose a folded concave penalty from the catalog.
    Folded {
        /// Penalty id: scad:a=..,lambda=.. | mcp:gamma=..,lambda=.. | capped_l1:lambda=..,theta=.. | log:gamma=.. | sqrt1p | fig1a | fig1b1 | fig1b2 | sqrtabs
        #[arg(long)]
        penalty: String,
        /// Working half-width T: the decomposition lives on [-T, T].
        #[arg(long, default_value_t = 10.0)]
        tmax: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in certification battery.
    VerifySuite {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("dcforge: {err}");
            ExitCode::from(2)
        }
    }
}

#[derive(Serialize)]
struct Report {
    command: String,
    seed: u64,
    data: serde_json::Value,
    checks: Vec<CheckReport>,
    pass: bool,
}

impl Report {
    fn new(command: &str, seed: u64, data: serde_json::Value, checks: Vec<CheckReport>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { command: command.into(), seed, data, checks, pass }
    }

    fn emit(&self, out: &Option<PathBuf>) -> Result<(), Error> {
        print_table(&self.checks);
        if let Some(path) = out {
            let text = serde_json::to_string_pretty(self)
                .map_err(|e| Error::Argument(format!("report serialization failed: {e}")))?;
            fs::write(path, text)
                .map_err(|e| Error::Argument(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn print_table(checks: &[CheckReport]) {
    if checks.is_empty() {
        return;
    }
    println!(
        "{:<44} {:>7} {:>13} {:>9} {:>6}",
        "check", "trials", "max_violation", "tol", "pass"
    );
    for c in checks {
        println!(
            "{:<44} {:>7} {:>13.3e} {:>9.1e} {:>6}",
            c.check,
            c.trials,
            c.max_violation,
            c.tol,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
}

fn read_file(path: &PathBuf) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))
}

/// Finite floats stay numbers; infinities become tagged strings so the
/// report is lossless and byte-stable.
fn json_scalar(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("+inf")
    } else {
        json!("-inf")
    }
}

fn dc_summary(dc: &DcFunction) -> serde_json::Value {
    json!({
        "g_kind": dc.g().kind_name(),
        "h_kind": dc.h().kind_name(),
        "decomposition": dc,
    })
}

fn identity_and_component_checks(
    name: &str,
    built: &DcFunction,
    reference: impl Fn(&[f64]) -> dcforge_core::Result<f64>,
    common: &Common,
    rng: &mut SplitMix64,
) -> Result<Vec<CheckReport>, Error> {
    let mut checks = vec![verify::check_dc_identity(
        format!("{name}/oracle_identity"),
        built,
        reference,
        common.samples,
        common.tol,
        rng.next_u64(),
    )?];
    checks.extend(verify::check_dc_components(
        name,
        built,
        common.samples,
        verify::DEFAULT_CONVEXITY_TOL,
        rng.next_u64(),
    )?);
    Ok(checks)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.cmd {
        Cmd::Risk { input, measure, alpha, lambda, common } => {
            let text = read_file(&input)?;
            let file: RiskFile = serde_json::from_str(&text)
                .map_err(|e| Error::Argument(format!("bad scenario file: {e}")))?;
            let rf = file.functional;
            let mut spec = MeasureSpec::parse(&measure, alpha, file.utility.as_ref())?;
            if let Some(lam) = lambda {
                spec = MeasureSpec::RiskLambda { lambda: lam, deviation: Box::new(spec) };
            }
            let built = risk::measure_dc(&spec, &rf)?;
            let mut rng = SplitMix64::new(common.seed);
            let checks = if common.verify {
                identity_and_component_checks(
                    &format!("risk/{}", spec.describe()),
                    &built,
                    |x| risk::risk_oracle(&spec, &rf, x),
                    &common,
                    &mut rng,
                )?
            } else {
                Vec::new()
            };
            let data = json!({
                "measure": spec.describe(),
                "scenarios": rf.scenario_count(),
                "dc": dc_summary(&built),
            });
            println!(
                "risk measure {} over {} scenarios: decomposition built",
                spec.describe(),
                rf.scenario_count()
            );
            let report = Report::new("risk", common.seed, data, checks);
            report.emit(&common.out)?;
            Ok(report.pass)
        }
        Cmd::Qp { input, query, dc, common } => {
            let inst = QpInstance::from_json(&read_file(&input)?)?;
            let mut rng = SplitMix64::new(common.seed);
            let mut checks = Vec::new();
            let mut data = json!({
                "vars": inst.num_vars(),
                "constraints": inst.num_constraints(),
                "copositive": format!("{:?}", inst.verdict()),
            });
            if let Some(qpath) = query {
                let qtext = read_file(&qpath)?;
                let qfile: QpQuery = serde_json::from_str(&qtext)
                    .map_err(|e| Error::Argument(format!("bad query file: {e}")))?;
                match qfile {
                    QpQuery::Point { q, b } => {
                        let sol = qp::qp_solve(&inst, &q, &b)?;
                        data["solution"] = serde_json::to_value(&sol)
                            .map_err(|e| Error::Argument(e.to_string()))?;
                        println!("qp value at point: {:.9}", sol.value);
                    }
                    QpQuery::Region { region, grid } => {
                        let pieces = qp::enumerate_pieces(&inst, &region)?;
                        let piece_rows: Vec<serde_json::Value> = pieces
                            .iter()
                            .map(|p| {
                                json!({
                                    "active_set": p.index_set,
                                    "quadratic": {"A": p.value.a2, "a": p.value.a1, "c": p.value.a0},
                                })
                            })
                            .collect();
                        data["pieces"] = json!(piece_rows);
                        println!("{} value-function pieces meet the region", pieces.len());
                        if common.verify {
                            checks.push(grid_check(&inst, &pieces, &region, grid, common.tol)?);
                        }
                        if dc {
                            let vdc = qp::value_dc(&inst, &region)?;
                            data["dc"] = dc_summary(&vdc);
                            if common.verify {
                                let inst_ref = &inst;
                                checks.extend(identity_and_component_checks(
                                    "qp/value_dc",
                                    &vdc,
                                    move |u| {
                                        Ok(qp::qp_solve(
                                            inst_ref,
                                            &u[..inst_ref.num_vars()],
                                            &u[inst_ref.num_vars()..],
                                        )?
                                        .value)
                                    },
                                    &common,
                                    &mut rng,
                                )?);
                            }
                        }
                    }
                }
            }
            let report = Report::new("qp", common.seed, data, checks);
            report.emit(&common.out)?;
            Ok(report.pass)
        }
        Cmd::Recourse { input, scenario, common } => {
            let text = read_file(&input)?;
            let file: RecourseFile = serde_json::from_str(&text)
                .map_err(|e| Error::Argument(format!("bad recourse file: {e}")))?;
            let inst = QpInstance::new(file.q, file.d)?;
            let rm = RecourseMap { scenarios: file.scenarios };
            let region = file.x_region;
            let indices: Vec<usize> = match scenario {
                Some(s) => vec![s],
                None => (0..rm.scenarios.len()).collect(),
            };
            let mut rng = SplitMix64::new(common.seed);
            let mut checks = Vec::new();
            let mut summaries = Vec::new();
            for s in indices {
                let psi = qp::recourse_dc(&inst, &rm, s, &region)?;
                if common.verify {
                    let (t, t0) = rm.parameter_map(s, &inst);
                    let inst_ref = &inst;
                    checks.extend(identity_and_component_checks(
                        &format!("recourse/scenario_{s}"),
                        &psi,
                        move |x| {
                            let u = dcforge_core::linalg::add(&t.matvec(x), &t0);
                            Ok(qp::qp_solve(
                                inst_ref,
                                &u[..inst_ref.num_vars()],
                                &u[inst_ref.num_vars()..],
                            )?
                            .value)
                        },
                        &common,
                        &mut rng,
                    )?);
                }
                summaries.push(json!({"scenario": s, "dc": dc_summary(&psi)}));
            }
            let report =
                Report::new("recourse", common.seed, json!({"recourse": summaries}), checks);
            report.emit(&common.out)?;
            Ok(report.pass)
        }
        Cmd::Piecewise { input, common } => {
            let text = read_file(&input)?;
            let file: PiecewiseFile = serde_json::from_str(&text)
                .map_err(|e| Error::Argument(format!("bad piecewise file: {e}")))?;
            let hull = match file.hull_box {
                Some(bx) => Domain::from_box(bx.lower, bx.upper)?,
                None => {
                    let n = file
                        .pieces
                        .first()
                        .map(|p| p.dimension())
                        .ok_or_else(|| Error::Argument("no pieces".into()))?;
                    Domain::from_box(vec![-10.0; n], vec![10.0; n])?
                }
            };
            let pw = PiecewiseLc1::new(file.pieces, file.regions, hull)?;
            let rep = piecewise::build_min_representation(&pw)?;
            let mut rng = SplitMix64::new(common.seed);
            let mut checks = Vec::new();
            if common.verify {
                let pw_ref = &pw;
                checks.push(verify::check_dc_identity(
                    "piecewise/selection_identity",
                    &rep.theta,
                    move |x| pw_ref.eval(x),
                    common.samples.max(500),
                    common.tol,
                    rng.next_u64(),
                )?);
                checks.push(verify::check_lc1_bound(
                    "piecewise/lc1_bound",
                    &pw,
                    500,
                    rng.next_u64(),
                )?);
                checks.extend(verify::check_dc_components(
                    "piecewise/theta",
                    &rep.theta,
                    common.samples,
                    verify::DEFAULT_CONVEXITY_TOL,
                    rng.next_u64(),
                )?);
            }
            let data = json!({
                "pieces": pw.pieces().len(),
                "moduli": pw.moduli(),
                "dc": dc_summary(&rep.theta),
            });
            let report = Report::new("piecewise", common.seed, data, checks);
            report.emit(&common.out)?;
            Ok(report.pass)
        }
        Cmd::Folded { penalty, tmax, common } => {
            let spec = FoldedSpec::parse(&penalty, tmax)?;
            let mut rng = SplitMix64::new(common.seed);
            match folded::decompose(&spec) {
                Ok(dec) => {
                    let (case, t_minus, t_plus) = match dec.case {
                        FoldedCase::Concave => ("concave", f64::NEG_INFINITY, f64::INFINITY),
                        FoldedCase::MaxOfConcaves { t_minus, t_plus } => {
                            ("max_of_concaves", t_minus, t_plus)
                        }
                    };
                    let mut checks = Vec::new();
                    if common.verify {
                        let spec_ref = &spec;
                        checks.push(verify::check_dc_identity(
                            "folded/reconstruction",
                            &dec.dc,
                            move |x| Ok(spec_ref.eval_theta(x[0])),
                            1000,
                            1e-8,
                            rng.next_u64(),
                        )?);
                        checks.extend(verify::check_dc_components(
                            "folded",
                            &dec.dc,
                            common.samples,
                            verify::DEFAULT_CONVEXITY_TOL,
                            rng.next_u64(),
                        )?);
                    }
                    let data = json!({
                        "penalty": spec.label(),
                        "case": case,
                        "right_derivative": json_scalar(dec.right_derivative),
                        "t_minus": json_scalar(t_minus),
                        "t_plus": json_scalar(t_plus),
                        "dc": dc_summary(&dec.dc),
                    });
                    println!(
                        "penalty {}: case {case}, crossings ({}, {})",
                        spec.label(),
                        json_scalar(t_minus),
                        json_scalar(t_plus)
                    );
                    let report = Report::new("folded", common.seed, data, checks);
                    report.emit(&common.out)?;
                    Ok(report.pass)
                }
                Err(Error::NotDc(msg)) => {
                    // A genuine negative result: report it and exit 1.
                    let data = json!({
                        "penalty": spec.label(),
                        "error": "not_dc",
                        "detail": msg,
                    });
                    println!("penalty {} admits no dc decomposition: {msg}", spec.label());
                    let report = Report {
                        command: "folded".into(),
                        seed: common.seed,
                        data,
                        checks: Vec::new(),
                        pass: false,
                    };
                    report.emit(&common.out)?;
                    Ok(false)
                }
                Err(other) => Err(other),
            }
        }
        Cmd::VerifySuite { common } => {
            let checks = verify::run_full_suite(common.seed)?;
            let pass = checks.iter().all(|c| c.pass);
            let report = Report::new("verify-suite", common.seed, json!({}), checks);
            report.emit(&common.out)?;
            println!(
                "verify-suite: {}/{} checks passed",
                report.checks.iter().filter(|c| c.pass).count(),
                report.checks.len()
            );
            Ok(pass)
        }
    }
}

fn grid_check(
    inst: &QpInstance,
    pieces: &[qp::KktPiece],
    region: &Domain,
    grid: [usize; 2],
    tol: f64,
) -> Result<CheckReport, Error> {
    let (lo, hi) = region.bounding_box()?;
    let m = inst.num_vars();
    let nu = lo.len();
    let [nq, nb] = grid;
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut trials = 0;
    let steps = |axis: usize| if axis < m { nq.max(2) } else { nb.max(2) };
    // Cartesian walk over the grid with per-axis counts.
    let mut idx = vec![0usize; nu];
    loop {
        let u: Vec<f64> = (0..nu)
            .map(|ax| lo[ax] + (hi[ax] - lo[ax]) * idx[ax] as f64 / (steps(ax) - 1) as f64)
            .collect();
        if let Some(pw_val) = qp::min_over_pieces(pieces, &u) {
            let direct = qp::qp_solve(inst, &u[..m], &u[m..])?.value;
            let violation = (pw_val - direct).abs() / (1.0 + direct.abs());
            trials += 1;
            if violation > worst {
                worst = violation;
                witness = Some(u.clone());
            }
        }
        let mut ax = 0;
        loop {
            if ax == nu {
                return Ok(CheckReport {
                    check: "qp/min_of_pieces_vs_solve".into(),
                    trials,
                    max_violation: worst,
                    tol: tol.max(1e-6),
                    pass: worst <= tol.max(1e-6),
                    witness,
                    seed: 0,
                });
            }
            idx[ax] += 1;
            if idx[ax] < steps(ax) {
                break;
            }
            idx[ax] = 0;
            ax += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// input file shapes
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct RiskFile {
    #[serde(flatten)]
    functional: RandomDcFunctional,
    #[serde(default)]
    utility: Option<PwlUtility>,
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum QpQuery {
    Point { q: Vec<f64>, b: Vec<f64> },
    Region { region: Domain, grid: [usize; 2] },
}

#[derive(serde::Deserialize)]
struct RecourseFile {
    #[serde(rename = "Q")]
    q: dcforge_core::Matrix,
    #[serde(rename = "D")]
    d: dcforge_core::Matrix,
    scenarios: Vec<qp::RecourseScenario>,
    x_region: Domain,
}

#[derive(serde::Deserialize)]
struct BoxSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(serde::Deserialize)]
struct PiecewiseFile {
    pieces: Vec<QuadraticPiece>,
    regions: Vec<Polyhedron>,
    #[serde(rename = "box", default)]
    hull_box: Option<BoxSpec>,
}
