//! Command-line front end: problem/result files, the `synth` and `verify`
//! subcommands and plot-data export.
//!
//! Exit codes: `0` certificate found and verified, `2` no verified
//! certificate, `1` usage or internal error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lambda_min, SymMatrix};
use crate::sdp::write_sdpa;
use crate::sos::QuadraticPolynomial;
use crate::synthesis::{
    self, build_program10, build_program9, Certificate, Controller, Ellipsoid, IterationRecord,
    LinearSystem, RelaxationWitness, SynthesisConfig, SynthesisReport, SynthesisStatus,
};
use crate::verify;

pub const SCHEMA_VERSION: u32 = 1;
/// Tolerance of every acceptance check.
pub const VERIFY_TOL: f64 = 1e-6;
/// Relative tolerance for `K = −ζBᵀP` in a loaded result file.
pub const GAIN_TOL: f64 = 1e-12;
pub const PLOT_BOUNDARY_POINTS: usize = 512;
pub const PLOT_GRID: usize = 25;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: u32,
    pub system: SystemFile,
    pub safe_set: SafeSetFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    pub u_max: f64,
}

/// `s(x) = xᵀQx + qᵀx + c`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetFile {
    #[serde(rename = "Q")]
    pub q_mat: Rows,
    pub q: Vec<f64>,
    pub c: f64,
}

/// Overrides of [`SynthesisConfig`]; omitted keys keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier_degree: Option<u32>,
}

impl ConfigFile {
    fn apply(&self, cfg: &mut SynthesisConfig) {
        if let Some(v) = self.zeta0 {
            cfg.zeta0 = v;
        }
        if let Some(v) = self.max_outer_iters {
            cfg.max_outer_iters = v;
        }
        if let Some(v) = self.l_tol {
            cfg.l_tol = v;
        }
        if let Some(v) = self.psd_tol {
            cfg.psd_tol = v;
        }
        if let Some(v) = self.eps_p {
            cfg.eps_p = v;
        }
        if let Some(v) = self.margin {
            cfg.margin = v;
        }
        if let Some(v) = self.multiplier_degree {
            cfg.multiplier_degree = v;
        }
    }

    fn from_config(cfg: &SynthesisConfig) -> Self {
        ConfigFile {
            zeta0: Some(cfg.zeta0),
            max_outer_iters: Some(cfg.max_outer_iters),
            l_tol: Some(cfg.l_tol),
            psd_tol: Some(cfg.psd_tol),
            eps_p: Some(cfg.eps_p),
            margin: Some(cfg.margin),
            multiplier_degree: Some(cfg.multiplier_degree),
        }
    }
}

/// A validated problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub system: LinearSystem,
    pub safe_set: QuadraticPolynomial,
    pub config: SynthesisConfig,
}

fn parse_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.into(),
        message: message.into(),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_error(path, e.into_inner().to_string())
    })
}

fn to_matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(parse_error(field, "matrix must be nonempty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(parse_error(
            format!("{field}[{i}]"),
            format!("row has {} entries, expected {c}", rows[i].len()),
        ));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

fn to_sym(field: &str, rows: &Rows) -> Result<SymMatrix> {
    let m = to_matrix(field, rows)?;
    if m.nrows() != m.ncols() {
        return Err(parse_error(
            field,
            format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    SymMatrix::new(m).map_err(|e| parse_error(field, e.to_string()))
}

impl ProblemFile {
    pub fn into_problem(&self) -> Result<Problem> {
        if self.schema != SCHEMA_VERSION {
            return Err(parse_error(
                "schema",
                format!(
                    "unsupported schema {}, expected {SCHEMA_VERSION}",
                    self.schema
                ),
            ));
        }
        let a = to_matrix("system.A", &self.system.a)?;
        let b = to_matrix("system.B", &self.system.b)?;
        let system = LinearSystem::new(a, b, self.system.u_max)?;
        let q_mat = to_sym("safe_set.Q", &self.safe_set.q_mat)?;
        let safe_set = QuadraticPolynomial::new(
            q_mat,
            DVector::from_vec(self.safe_set.q.clone()),
            self.safe_set.c,
        )?;
        if safe_set.dim() != system.n() {
            return Err(Error::InvalidInput(format!(
                "safe set has dimension {}, system has {} states",
                safe_set.dim(),
                system.n()
            )));
        }
        safe_set.validate_safe_set()?;
        let mut config = SynthesisConfig::default();
        if let Some(c) = &self.config {
            c.apply(&mut config);
        }
        config.validate()?;
        Ok(Problem {
            system,
            safe_set,
            config,
        })
    }

    pub fn from_problem(p: &Problem) -> Self {
        ProblemFile {
            schema: SCHEMA_VERSION,
            system: SystemFile {
                a: to_rows(&p.system.a),
                b: to_rows(&p.system.b),
                u_max: p.system.u_max,
            },
            safe_set: SafeSetFile {
                q_mat: p.safe_set.quad.to_rows(),
                q: p.safe_set.lin.iter().cloned().collect(),
                c: p.safe_set.constant,
            },
            config: Some(ConfigFile::from_config(&p.config)),
        }
    }
}

pub fn parse_problem_str(text: &str) -> Result<Problem> {
    from_json::<ProblemFile>(text)?.into_problem()
}

pub fn parse_problem(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_problem_str(&text)
}

/// Serializes `p` so that [`parse_problem_str`] reproduces it exactly.
pub fn write_problem(p: &Problem) -> String {
    serde_json::to_string_pretty(&ProblemFile::from_problem(p)).expect("problem serializes")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    #[serde(rename = "P")]
    pub p: Rows,
    pub l: f64,
    pub zeta: f64,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "Phat")]
    pub phat: Rows,
}

impl CertificateFile {
    pub fn from_certificate(c: &Certificate) -> Self {
        CertificateFile {
            p: c.ellipsoid.p.to_rows(),
            l: c.ellipsoid.l,
            zeta: c.controller.zeta,
            k: to_rows(&c.controller.k),
            phat: c.witness.phat.to_rows(),
        }
    }

    pub fn to_certificate(&self) -> Result<Certificate> {
        let p = to_sym("certificate.P", &self.p)?;
        let ellipsoid = Ellipsoid::new(p, self.l)?;
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return Err(parse_error(
                "certificate.zeta",
                format!("must be finite and ≥ 0, got {}", self.zeta),
            ));
        }
        let k = to_matrix("certificate.K", &self.k)?;
        let phat = to_sym("certificate.Phat", &self.phat)?;
        Ok(Certificate {
            ellipsoid,
            controller: Controller { zeta: self.zeta, k },
            witness: RelaxationWitness { phat },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSummary {
    pub trajectories: usize,
    pub dt: f64,
    pub horizon: f64,
    pub min_barrier: f64,
    pub max_input_sq: f64,
    pub diverged: usize,
    pub passed: bool,
}

/// Margins of each check; a check passes when its margin is `≥ −tol`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSummary {
    pub tol: f64,
    /// `λ_min(−PA − AᵀP + 2ζPBBᵀP)`
    pub invariance_min_eig: f64,
    /// `min s` over the ellipsoid.
    pub containment_slack: f64,
    /// `u_max − max ‖Kx‖²` over the ellipsoid.
    pub control_slack: f64,
    /// Smaller of the two relaxed-condition eigenvalues for the stored `P̂`.
    pub relaxed_min_eig: f64,
    pub gain_consistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub schema: u32,
    pub status: SynthesisStatus,
    #[serde(default)]
    pub certificate: Option<CertificateFile>,
    #[serde(default)]
    pub verification: Option<VerificationSummary>,
    #[serde(default)]
    pub history: Vec<IterationRecord>,
}

pub fn parse_result_str(text: &str) -> Result<ResultFile> {
    let r: ResultFile = from_json(text)?;
    if r.schema != SCHEMA_VERSION {
        return Err(parse_error(
            "schema",
            format!("unsupported schema {}, expected {SCHEMA_VERSION}", r.schema),
        ));
    }
    Ok(r)
}

pub fn parse_result(path: &Path) -> Result<ResultFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_result_str(&text)
}

pub fn write_result(r: &ResultFile) -> String {
    serde_json::to_string_pretty(r).expect("result serializes")
}

fn gain_matches(c: &Certificate, sys: &LinearSystem) -> bool {
    let expected = synthesis::extract_controller(&c.ellipsoid.p, c.controller.zeta, sys).k;
    if expected.shape() != c.controller.k.shape() {
        return false;
    }
    let scale = expected.amax().max(f64::MIN_POSITIVE);
    (&expected - &c.controller.k).amax() <= GAIN_TOL * scale
}

/// Re-checks `c` against `problem` with eigenvalue oracles only.
pub fn verify_certificate(
    problem: &Problem,
    c: &Certificate,
    tol: f64,
) -> Result<VerificationSummary> {
    let sys = &problem.system;
    let s = &problem.safe_set;
    let ell = &c.ellipsoid;
    if ell.dim() != sys.n() || c.witness.phat.dim() != sys.n() {
        return Err(Error::InvalidInput(
            "certificate dimension does not match the problem".into(),
        ));
    }
    let gain_consistent = gain_matches(c, sys);
    let invariance_min_eig =
        lambda_min(&verify::invariance_matrix(sys, &ell.p, c.controller.zeta))?;
    let containment_slack = verify::boundary_min(ell, s)?.0;
    let control_slack = if c.controller.k.shape() == (sys.m(), sys.n()) {
        sys.u_max - verify::max_input_energy(ell, &c.controller)?.0
    } else {
        f64::NEG_INFINITY
    };
    let relaxed = &sys.drift_form(&ell.p) + &c.witness.phat.scale(2.0 * c.controller.zeta);
    let relaxed_min_eig = lambda_min(&relaxed)?.min(lambda_min(&verify::coupling_matrix(
        sys,
        &ell.p,
        &c.witness.phat,
    ))?);
    let containment_ok = verify::check_containment(ell, s, tol)?;
    let passed = gain_consistent
        && invariance_min_eig >= -tol
        && containment_ok
        && control_slack >= -tol
        && relaxed_min_eig >= -tol;
    Ok(VerificationSummary {
        tol,
        invariance_min_eig,
        containment_slack,
        control_slack,
        relaxed_min_eig,
        gain_consistent,
        simulation: None,
        passed,
    })
}

/// Simulates `count` closed-loop trajectories from uniform starts inside the ellipsoid.
pub fn simulate_certificate(
    sys: &LinearSystem,
    c: &Certificate,
    count: usize,
    horizon: f64,
    seed: u64,
    tol: f64,
) -> Result<SimulationSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = verify::sample_in_ellipsoid(&c.ellipsoid, count, &mut rng)?;
    let runs = verify::simulate_batch(
        sys,
        &c.controller,
        &c.ellipsoid,
        &starts,
        verify::DEFAULT_DT,
        horizon,
    );
    let mut min_barrier = f64::INFINITY;
    let mut max_input_sq = 0.0_f64;
    let mut diverged = 0;
    for r in runs {
        match r {
            Ok(tr) => {
                min_barrier = min_barrier.min(tr.min_barrier());
                max_input_sq = max_input_sq.max(tr.max_input_sq);
            }
            Err(Error::Diverged { .. }) => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(SimulationSummary {
        trajectories: count,
        dt: verify::DEFAULT_DT,
        horizon,
        min_barrier,
        max_input_sq,
        diverged,
        passed: diverged == 0 && min_barrier >= -tol && max_input_sq <= sys.u_max + tol,
    })
}

fn csv(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Points `center + √level·L⁻ᵀ(cos θ, sin θ)` on `{(x − c)ᵀM(x − c) = level}`, `M = LLᵀ`.
fn ellipse_points(
    m: &SymMatrix,
    level: f64,
    center: &DVector<f64>,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let l = crate::numerics::cholesky_psd(m, 0.0)?;
    let map = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::InvalidMatrix("singular Cholesky factor".into()))?
        * level.sqrt();
    Ok((0..count)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / count as f64;
            let x = &map * DVector::from_column_slice(&[th.cos(), th.sin()]) + center;
            vec![x[0], x[1]]
        })
        .collect())
}

/// Writes `ellipse.csv`, `safeset.csv`, `vector_field.csv` and `u_levels.csv`
/// (two-dimensional systems only).
pub fn emit_plot_data(
    report: &SynthesisReport,
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    outdir: &Path,
) -> Result<Vec<PathBuf>> {
    let cert = match (&report.status, &report.certificate) {
        (SynthesisStatus::Feasible, Some(c)) => c,
        _ => {
            return Err(Error::InvalidInput(
                "plot data needs a feasible report".into(),
            ))
        }
    };
    if sys.n() != 2 {
        return Err(Error::UnsupportedDimensionForPlots(sys.n()));
    }
    s.validate_safe_set()?;
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let ell = &cert.ellipsoid;
    let ctrl = &cert.controller;

    let ellipse = outdir.join("ellipse.csv");
    csv(
        &ellipse,
        "x1,x2",
        ellipse_points(&ell.p, ell.l, &DVector::zeros(2), PLOT_BOUNDARY_POINTS)?.into_iter(),
    )?;

    // s(x) = (x − x_c)ᵀQ(x − x_c) + s_max
    let (center, peak) = s.maximizer()?;
    let neg_q = s.quad.scale(-1.0);
    let safeset = outdir.join("safeset.csv");
    csv(
        &safeset,
        "x1,x2",
        ellipse_points(&neg_q, peak, &center, PLOT_BOUNDARY_POINTS)?.into_iter(),
    )?;

    let inv = neg_q
        .as_matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidMatrix("singular safe-set quadratic".into()))?;
    let half: Vec<f64> = (0..2).map(|i| (peak * inv[(i, i)]).sqrt()).collect();
    let axis = |i: usize, k: usize| {
        center[i] - half[i] + 2.0 * half[i] * k as f64 / (PLOT_GRID - 1) as f64
    };
    let grid: Vec<DVector<f64>> = (0..PLOT_GRID)
        .flat_map(|a| (0..PLOT_GRID).map(move |b| (a, b)))
        .map(|(a, b)| DVector::from_column_slice(&[axis(0, a), axis(1, b)]))
        .collect();
    let closed = &sys.a + &sys.b * &ctrl.k;

    let field = outdir.join("vector_field.csv");
    csv(
        &field,
        "x1,x2,dx1,dx2",
        grid.iter().map(|x| {
            let d = &closed * x;
            vec![x[0], x[1], d[0], d[1]]
        }),
    )?;
    let levels = outdir.join("u_levels.csv");
    csv(
        &levels,
        "x1,x2,u_sq",
        grid.iter()
            .map(|x| vec![x[0], x[1], ctrl.control(x).norm_squared()]),
    )?;
    Ok(vec![ellipse, safeset, field, levels])
}

#[derive(Debug, Parser)]
#[command(
    name = "invforge",
    version,
    about = "Safe invariant ellipsoids and state feedback for linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize and verify a certificate for a problem file.
    Synth {
        /// Problem file (JSON)
        problem: PathBuf,
        /// Output directory for report.txt, result.json and optional extras.
        #[arg(long, default_value = "invforge-out")]
        out: PathBuf,
        /// Initial gain scale, overrides the problem file
        #[arg(long)]
        zeta0: Option<f64>,
        /// Outer iteration cap, overrides the problem file
        #[arg(long = "max-iters")]
        max_iters: Option<usize>,
        /// Relative stagnation tolerance on l.
        #[arg(long)]
        tol: Option<f64>,
        /// Write CSV plot data (two-dimensional systems).
        #[arg(long)]
        plots: bool,
        /// Write the solved programs in SDPA sparse format to DIR.
        #[arg(long = "export-sdpa", value_name = "DIR")]
        export_sdpa: Option<PathBuf>,
        /// Simulate N_TRAJ closed-loop trajectories over horizon T.
        #[arg(long, num_args = 2, value_names = ["N_TRAJ", "T"])]
        simulate: Option<Vec<String>>,
    },
    /// Re-check a stored certificate against a problem file.
    Verify {
        /// result.json written by synth
        result: PathBuf,
        /// Problem file the result was produced from
        problem: PathBuf,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_CERTIFICATE: i32 = 2;

/// Parses `args` (including the program name) and runs the command.
pub fn run_pipeline<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth {
            problem,
            out,
            zeta0,
            max_iters,
            tol,
            plots,
            export_sdpa,
            simulate,
        } => synth(&SynthArgs {
            problem,
            out,
            zeta0,
            max_iters,
            tol,
            plots,
            export_sdpa,
            simulate,
        }),
        Command::Verify { result, problem } => verify_command(&result, &problem),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

struct SynthArgs {
    problem: PathBuf,
    out: PathBuf,
    zeta0: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    plots: bool,
    export_sdpa: Option<PathBuf>,
    simulate: Option<Vec<String>>,
}

fn parse_simulate(v: &[String]) -> Result<(usize, f64)> {
    let n = v[0].parse::<usize>().map_err(|_| {
        Error::InvalidInput(format!("--simulate N_TRAJ must be a count, got `{}`", v[0]))
    })?;
    let t = v[1]
        .parse::<f64>()
        .ok()
        .filter(|t| t.is_finite() && *t >= verify::DEFAULT_DT)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "--simulate T must be a horizon ≥ dt, got `{}`",
                v[1]
            ))
        })?;
    Ok((n, t))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn export_programs(dir: &Path, problem: &Problem, report: &SynthesisReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in report.history.iter().filter(|r| r.kind == "alternation") {
        let p = build_program9(
            &problem.system,
            &problem.safe_set,
            rec.zeta,
            &problem.config,
        )?;
        let title = format!(
            "ellipsoid program, iteration {}, zeta = {:.16e}",
            rec.iteration, rec.zeta
        );
        write_file(
            &dir.join(format!("ellipsoid_{}.dat-s", rec.iteration)),
            &write_sdpa(&p, &title),
        )?;
    }
    if let Some(c) = &report.certificate {
        if !problem.system.has_no_input() {
            let p = build_program10(&c.ellipsoid.p, c.ellipsoid.l, &problem.system)?;
            write_file(
                &dir.join("gain_final.dat-s"),
                &write_sdpa(&p, "gain program at the accepted ellipsoid"),
            )?;
        }
    }
    Ok(())
}

fn report_text(
    problem: &Problem,
    report: &SynthesisReport,
    v: Option<&VerificationSummary>,
) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "status: {:?}", report.status);
    let _ = writeln!(
        t,
        "states: {}, inputs: {}, u_max: {}",
        problem.system.n(),
        problem.system.m(),
        problem.system.u_max
    );
    let _ = writeln!(t, "\niterations:");
    let _ = writeln!(
        t,
        "{:>4}  {:<12} {:>14} {:>16} {:>16}  {:<10} {:<10} checks",
        "k", "kind", "zeta", "l", "zeta^2", "ellipsoid", "gain"
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.8e}"));
    let st = |s: Option<crate::sdp::SdpStatus>| s.map_or("-".to_string(), |s| format!("{s:?}"));
    for r in &report.history {
        let c = r.checks;
        let _ = writeln!(
            t,
            "{:>4}  {:<12} {:>14.6e} {:>16} {:>16}  {:<10} {:<10} inv={} cont={} ctrl={} relax={}",
            r.iteration,
            r.kind,
            r.zeta,
            opt(r.l),
            opt(r.zeta_sq),
            st(r.ellipsoid_status),
            st(r.gain_status),
            c.invariance,
            c.containment,
            c.control_bound,
            c.relaxed
        );
    }
    if let Some(c) = &report.certificate {
        let _ = writeln!(
            t,
            "\ncertificate (iteration {}):",
            report.accepted.unwrap_or(0)
        );
        let _ = writeln!(t, "  P = {:?}", c.ellipsoid.p.to_rows());
        let _ = writeln!(t, "  l = {:.16e}", c.ellipsoid.l);
        let _ = writeln!(t, "  zeta = {:.16e}", c.controller.zeta);
        let _ = writeln!(t, "  K = {:?}", to_rows(&c.controller.k));
    }
    if let Some(v) = v {
        let _ = writeln!(
            t,
            "\nverification (tol {:e}): {}",
            v.tol,
            if v.passed { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(t, "  invariance  λ_min = {:.6e}", v.invariance_min_eig);
        let _ = writeln!(t, "  containment slack = {:.6e}", v.containment_slack);
        let _ = writeln!(t, "  control     slack = {:.6e}", v.control_slack);
        let _ = writeln!(t, "  relaxed     λ_min = {:.6e}", v.relaxed_min_eig);
        let _ = writeln!(t, "  gain consistent   = {}", v.gain_consistent);
        if let Some(s) = &v.simulation {
            let _ = writeln!(
                t,
                "  simulation: {} trajectories, T = {}, min b = {:.6e}, max ‖u‖² = {:.6e}, diverged = {}: {}",
                s.trajectories,
                s.horizon,
                s.min_barrier,
                s.max_input_sq,
                s.diverged,
                if s.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    t
}

fn synth(args: &SynthArgs) -> Result<i32> {
    let mut problem = parse_problem(&args.problem)?;
    if let Some(z) = args.zeta0 {
        problem.config.zeta0 = z;
    }
    if let Some(n) = args.max_iters {
        problem.config.max_outer_iters = n;
    }
    if let Some(t) = args.tol {
        problem.config.l_tol = t;
    }
    problem.config.validate()?;
    let simulate = args.simulate.as_deref().map(parse_simulate).transpose()?;

    let report = synthesis::run(&problem.system, &problem.safe_set, &problem.config)?;
    log::info!(
        "synthesis finished: {:?} after {} records",
        report.status,
        report.history.len()
    );

    let verification = match &report.certificate {
        Some(c) => {
            let mut v = verify_certificate(&problem, c, VERIFY_TOL)?;
            if let Some((n, horizon)) = simulate {
                let sim = simulate_certificate(&problem.system, c, n, horizon, 0, VERIFY_TOL)?;
                v.passed &= sim.passed;
                v.simulation = Some(sim);
            }
            Some(v)
        }
        None => None,
    };

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let result = ResultFile {
        schema: SCHEMA_VERSION,
        status: report.status,
        certificate: report
            .certificate
            .as_ref()
            .map(CertificateFile::from_certificate),
        verification: verification.clone(),
        history: report.history.clone(),
    };
    write_file(&args.out.join("result.json"), &write_result(&result))?;
    let text = report_text(&problem, &report, verification.as_ref());
    write_file(&args.out.join("report.txt"), &text)?;
    if let Some(dir) = &args.export_sdpa {
        export_programs(dir, &problem, &report)?;
    }
    if args.plots {
        if report.status == SynthesisStatus::Feasible {
            emit_plot_data(&report, &problem.system, &problem.safe_set, &args.out)?;
        } else {
            log::warn!("no plot data: status is {:?}", report.status);
        }
    }
    print!("{text}");

    let verified = verification.as_ref().is_some_and(|v| v.passed);
    Ok(if report.status == SynthesisStatus::Feasible && verified {
        EXIT_OK
    } else {
        if report.status == SynthesisStatus::Feasible {
            eprintln!("certificate failed verification");
        }
        EXIT_NO_CERTIFICATE
    })
}

fn verify_command(result: &Path, problem: &Path) -> Result<i32> {
    let problem = parse_problem(problem)?;
    let stored = parse_result(result)?;
    let Some(cert) = &stored.certificate else {
        eprintln!(
            "result file holds no certificate (status {:?})",
            stored.status
        );
        return Ok(EXIT_NO_CERTIFICATE);
    };
    let cert = cert.to_certificate()?;
    let v = verify_certificate(&problem, &cert, VERIFY_TOL)?;
    let report = SynthesisReport {
        status: stored.status,
        history: Vec::new(),
        certificate: Some(cert),
        accepted: None,
    };
    print!("{}", report_text(&problem, &report, Some(&v)));
    Ok(if v.passed {
        EXIT_OK
    } else {
        EXIT_NO_CERTIFICATE
    })
}
