//! Ellipsoid and feedback-gain synthesis.
//!
//! The certificate is `b(x) = −xᵀPx + l` with feedback `u = −ζBᵀPx`. Two
//! convex programs are alternated:
//!
//! * the *ellipsoid program* fixes `ζ` and maximizes `l` over `(P, P̂, l, σ)`
//!   subject to containment in the safe set and the relaxed invariance
//!   conditions `−PA − AᵀP + 2ζP̂ ⪰ 0`, `[[P̂, PB], [BᵀP, I]] ⪰ 0`;
//! * the *gain program* fixes `(P, l)` and maximizes `t = ζ²` subject to
//!   `‖u‖² ≤ u_max` on the ellipsoid.
//!
//! The relaxed conditions do not bound `P̂` from above, so for `ζ > 0` the
//! ellipsoid program does not see the dynamics at all. Iterates are therefore
//! checked against the exact condition `−PA − AᵀP + 2ζPBBᵀP ⪰ 0`, and when
//! none passes, [`run`] shrinks the last ellipsoid until a gain satisfying the
//! exact condition also respects the input bound (see [`repair`]).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gen_eig_max, lambda_min, rank, SymMatrix};
use crate::sdp::{solve, AffineBlock, SdpProblem, SdpSolution, SdpStatus, SolveOptions};
use crate::sos::{
    containment_gram_with_margin, gram_of_quadratic, input_bound_gram, validate_multiplier_degree,
    QuadraticPolynomial, SosMultiplier,
};
use crate::verify;

/// `ẋ = Ax + Bu`, `‖u‖² ≤ u_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub u_max: f64,
}

impl LinearSystem {
    /// Validates shapes and `u_max > 0`. Uncontrollable pairs are accepted
    /// with a warning.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, u_max: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "B must have {n} rows and at least one column, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in A or B".into()));
        }
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Error::InvalidInput(format!(
                "u_max must be positive, got {u_max}"
            )));
        }
        let sys = LinearSystem { a, b, u_max };
        let r = sys.controllability_rank();
        if r < n {
            log::warn!("(A, B) is not controllable: controllability matrix has rank {r} < {n}");
        }
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Rank of `[B, AB, …, Aⁿ⁻¹B]`.
    pub fn controllability_rank(&self) -> usize {
        let (n, m) = (self.n(), self.m());
        let mut c = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for k in 0..n {
            c.view_mut((0, k * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        rank(&c, 1e-10)
    }

    pub fn has_no_input(&self) -> bool {
        self.b.iter().all(|v| *v == 0.0)
    }

    /// `PBBᵀP`, the input-energy form of the feedback `u = −BᵀPx`.
    pub fn input_energy(&self, p: &SymMatrix) -> SymMatrix {
        SymMatrix::gram_of(&(p.as_matrix() * &self.b))
    }

    /// `−PA − AᵀP`
    pub fn drift_form(&self, p: &SymMatrix) -> SymMatrix {
        SymMatrix::sym_part_doubled(&(p.as_matrix() * &self.a)).scale(-1.0)
    }
}

/// `{x : xᵀPx ≤ l}`
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    pub p: SymMatrix,
    pub l: f64,
}

impl Ellipsoid {
    pub fn new(p: SymMatrix, l: f64) -> Result<Self> {
        let lmin = lambda_min(&p)?;
        if lmin < 1e-8 {
            return Err(Error::InvalidInput(format!(
                "ellipsoid matrix must be positive definite (λ_min = {lmin:e})"
            )));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ellipsoid level must be positive, got {l}"
            )));
        }
        Ok(Ellipsoid { p, l })
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// `b(x) = l − xᵀPx`
    pub fn barrier(&self, x: &nalgebra::DVector<f64>) -> f64 {
        self.l - self.p.quad_form(x)
    }
}

/// `u = Kx` with `K = −ζBᵀP`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub zeta: f64,
    pub k: DMatrix<f64>,
}

impl Controller {
    pub fn control(&self, x: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.k * x
    }
}

/// `P̂` from the relaxed conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxationWitness {
    pub phat: SymMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub zeta0: f64,
    pub max_outer_iters: usize,
    /// Relative stagnation tolerance on `l`.
    pub l_tol: f64,
    pub psd_tol: f64,
    /// Lower bound `P ⪰ eps_p·I`.
    pub eps_p: f64,
    /// Subtracted from the constant of the containment body.
    pub margin: f64,
    pub multiplier_degree: u32,
    /// Tolerance of the joint verification that decides acceptance.
    pub verify_tol: f64,
    pub solver: SolveOptions,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            zeta0: 0.1,
            max_outer_iters: 50,
            l_tol: 1e-6,
            psd_tol: 1e-8,
            eps_p: 1e-6,
            margin: 0.0,
            multiplier_degree: 0,
            verify_tol: 1e-6,
            solver: SolveOptions::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("zeta0", self.zeta0),
            ("l_tol", self.l_tol),
            ("psd_tol", self.psd_tol),
            ("eps_p", self.eps_p),
            ("verify_tol", self.verify_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "margin must be nonnegative, got {}",
                self.margin
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidInput(
                "max_outer_iters must be at least 1".into(),
            ));
        }
        validate_multiplier_degree(self.multiplier_degree)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthesisStatus {
    Feasible,
    Infeasible,
    Stalled,
    ControlIneffective,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckFlags {
    pub invariance: bool,
    pub containment: bool,
    pub control_bound: bool,
    pub relaxed: bool,
}

impl CheckFlags {
    pub fn all(&self) -> bool {
        self.invariance && self.containment && self.control_bound && self.relaxed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `repair` for iterates produced by [`repair`], `alternation` otherwise.
    pub kind: String,
    /// Gain used in the ellipsoid program.
    pub zeta: f64,
    pub ellipsoid_status: Option<SdpStatus>,
    pub l: Option<f64>,
    pub trace_p: Option<f64>,
    pub gain_status: Option<SdpStatus>,
    /// `t* = ζ²` from the gain program.
    pub zeta_sq: Option<f64>,
    /// Closed-form value of the same optimum.
    pub zeta_sq_closed_form: Option<f64>,
    pub checks: CheckFlags,
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub ellipsoid: Ellipsoid,
    pub controller: Controller,
    pub witness: RelaxationWitness,
}

#[derive(Clone, Debug)]
pub struct SynthesisReport {
    pub status: SynthesisStatus,
    pub history: Vec<IterationRecord>,
    pub certificate: Option<Certificate>,
    /// Index into `history` of the accepted iterate.
    pub accepted: Option<usize>,
}

/// Index of the lower-triangle entry `(i, j)`, `i ≥ j`, in row order.
fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Basis matrix of a symmetric unknown: `e_i e_jᵀ + e_j e_iᵀ` off the diagonal.
fn sym_basis(n: usize, i: usize, j: usize) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |r, c| {
        if (r == i && c == j) || (r == j && c == i) {
            1.0
        } else {
            0.0
        }
    })
}

/// `[[X, Y], [Yᵀ, Z]]`
fn block2(x: &DMatrix<f64>, y: &DMatrix<f64>, z: &DMatrix<f64>) -> SymMatrix {
    let (n, m) = (x.nrows(), z.nrows());
    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(x);
    g.view_mut((0, n), (n, m)).copy_from(y);
    g.view_mut((n, 0), (m, n)).copy_from(&y.transpose());
    g.view_mut((n, n), (m, m)).copy_from(z);
    SymMatrix::from_lower_fn(n + m, |i, j| g[(i, j)])
}

/// Scalar layout of the ellipsoid program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Program9Layout {
    pub n: usize,
}

impl Program9Layout {
    pub fn sym_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }
    pub fn p(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        tri_index(i, j)
    }
    pub fn phat(&self, i: usize, j: usize) -> usize {
        self.sym_len() + self.p(i, j)
    }
    pub fn l(&self) -> usize {
        2 * self.sym_len()
    }
    pub fn sigma(&self) -> usize {
        2 * self.sym_len() + 1
    }
    pub fn num_scalars(&self) -> usize {
        2 * self.sym_len() + 2
    }
    fn read_sym(&self, y: &[f64], offset: usize) -> SymMatrix {
        SymMatrix::from_lower_fn(self.n, |i, j| y[offset + tri_index(i, j)])
    }
    pub fn read_p(&self, y: &[f64]) -> SymMatrix {
        self.read_sym(y, 0)
    }
    pub fn read_phat(&self, y: &[f64]) -> SymMatrix {
        self.read_sym(y, self.sym_len())
    }
}

fn check_dims(sys: &LinearSystem, s: &QuadraticPolynomial) -> Result<()> {
    if s.dim() != sys.n() {
        return Err(Error::InvalidInput(format!(
            "safe set has dimension {}, system has {} states",
            s.dim(),
            sys.n()
        )));
    }
    Ok(())
}

/// Ellipsoid program at fixed `ζ > 0`:
///
/// ```text
/// max l  s.t.  Gram(xᵀPx − l + σ s(x)) ⪰ 0,  −PA − AᵀP + 2ζP̂ ⪰ 0,
///              [[P̂, PB], [BᵀP, I]] ⪰ 0,  σ ≥ 0,  P ⪰ eps_p·I,  tr P = n
/// ```
///
/// Scalars follow [`Program9Layout`]: entries of `P`, entries of `P̂`, `l`, `σ`.
pub fn build_program9(
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    zeta: f64,
    cfg: &SynthesisConfig,
) -> Result<SdpProblem> {
    if !(zeta.is_finite() && zeta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "ζ must be positive, got {zeta}"
        )));
    }
    build_program9_at(sys, s, zeta, cfg)
}

fn build_program9_at(
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    zeta: f64,
    cfg: &SynthesisConfig,
) -> Result<SdpProblem> {
    check_dims(sys, s)?;
    s.validate_safe_set()?;
    let (n, m) = (sys.n(), sys.m());
    let lay = Program9Layout { n };
    let mut prob = SdpProblem::new(lay.num_scalars()).maximize(lay.l(), 1.0);

    let corner = |v: f64| {
        let mut g = SymMatrix::zeros(n + 1).into_inner();
        g[(0, 0)] = v;
        SymMatrix::from_lower_fn(n + 1, |i, j| g[(i, j)])
    };
    let zero_sigma = SosMultiplier::new(0.0)?;

    let mut c1 = AffineBlock::new(
        "containment",
        containment_gram_with_margin(&SymMatrix::zeros(n), 0.0, s, zero_sigma, cfg.margin)?,
    );
    let mut c2 = AffineBlock::new("relaxed invariance", SymMatrix::zeros(n));
    let mut c3 = AffineBlock::new(
        "input coupling",
        block2(
            &DMatrix::zeros(n, n),
            &DMatrix::zeros(n, m),
            &DMatrix::identity(m, m),
        ),
    );
    let mut c5 = AffineBlock::new("P lower bound", SymMatrix::identity(n).scale(-cfg.eps_p));

    for i in 0..n {
        for j in 0..=i {
            let e = sym_basis(n, i, j);
            let ed = e.as_matrix();
            let vp = lay.p(i, j);
            let vh = lay.phat(i, j);
            let mut border = DMatrix::zeros(n + 1, n + 1);
            border.view_mut((1, 1), (n, n)).copy_from(ed);
            c1.add_term(vp, SymMatrix::from_lower_fn(n + 1, |r, c| border[(r, c)]));
            c2.add_term(vp, SymMatrix::sym_part_doubled(&(ed * &sys.a)).scale(-1.0));
            c2.add_term(vh, e.scale(2.0 * zeta));
            c3.add_term(
                vp,
                block2(&DMatrix::zeros(n, n), &(ed * &sys.b), &DMatrix::zeros(m, m)),
            );
            c3.add_term(vh, block2(ed, &DMatrix::zeros(n, m), &DMatrix::zeros(m, m)));
            c5.add_term(vp, e);
        }
    }
    c1.add_term(lay.l(), corner(-1.0));
    c1.add_term(lay.sigma(), gram_of_quadratic(s));
    let c4 = AffineBlock::new("sigma", SymMatrix::zeros(1))
        .with_term(lay.sigma(), SymMatrix::identity(1));

    prob.add_block(c1);
    prob.add_block(c2);
    prob.add_block(c3);
    prob.add_block(c4);
    prob.add_block(c5);
    prob.add_equality((0..n).map(|i| (lay.p(i, i), 1.0)).collect(), n as f64);
    Ok(prob)
}

fn check_ellipsoid_args(p: &SymMatrix, l: f64, sys: &LinearSystem) -> Result<()> {
    if p.dim() != sys.n() {
        return Err(Error::InvalidInput(format!(
            "P is {}x{}, system has {} states",
            p.dim(),
            p.dim(),
            sys.n()
        )));
    }
    Ellipsoid::new(p.clone(), l).map(|_| ())
}

fn input_is_ineffective(p: &SymMatrix, sys: &LinearSystem) -> bool {
    let pb = p.as_matrix() * &sys.b;
    pb.iter().all(|v| *v == 0.0)
}

/// Gain program at fixed `(P, l)`: `max t` over `(t, σ₂)` subject to
/// `Gram(u_max − t·xᵀMx − σ₂(l − xᵀPx)) ⪰ 0`, `t ≥ 0`, `σ₂ ≥ 0`, `M = PBBᵀP`.
pub fn build_program10(p: &SymMatrix, l: f64, sys: &LinearSystem) -> Result<SdpProblem> {
    check_ellipsoid_args(p, l, sys)?;
    if input_is_ineffective(p, sys) {
        return Err(Error::ControlIneffective);
    }
    let n = sys.n();
    let m = sys.input_energy(p);
    let zero = SosMultiplier::new(0.0)?;
    let one = SosMultiplier::new(1.0)?;
    let base = input_bound_gram(p, l, &m, 0.0, zero, sys.u_max)?;
    let with_t = input_bound_gram(p, l, &m, 1.0, zero, sys.u_max)?;
    let with_s = input_bound_gram(p, l, &m, 0.0, one, sys.u_max)?;
    let blk = AffineBlock::new("input bound", base.clone())
        .with_term(0, &with_t - &base)
        .with_term(1, &with_s - &base);
    debug_assert_eq!(blk.dim(), n + 1);
    let mut prob = SdpProblem::new(2).maximize(0, 1.0);
    prob.add_block(blk);
    prob.add_block(AffineBlock::new("t", SymMatrix::zeros(1)).with_term(0, SymMatrix::identity(1)));
    prob.add_block(
        AffineBlock::new("sigma2", SymMatrix::zeros(1)).with_term(1, SymMatrix::identity(1)),
    );
    Ok(prob)
}

/// `u_max / (l·λ_max(P⁻¹M))`, the optimum of [`build_program10`].
pub fn solve_program10_closed_form(p: &SymMatrix, l: f64, sys: &LinearSystem) -> Result<f64> {
    check_ellipsoid_args(p, l, sys)?;
    if input_is_ineffective(p, sys) {
        return Err(Error::ControlIneffective);
    }
    let lam = gen_eig_max(&sys.input_energy(p), p)?;
    if lam == 0.0 {
        return Err(Error::ControlIneffective);
    }
    Ok(sys.u_max / (l * lam))
}

/// `K = −ζBᵀP`
pub fn extract_controller(p: &SymMatrix, zeta: f64, sys: &LinearSystem) -> Controller {
    Controller {
        zeta,
        k: (sys.b.transpose() * p.as_matrix()) * -zeta,
    }
}

/// Smallest `ζ ≥ 0` with `−PA − AᵀP + 2ζPBBᵀP ⪰ 0`, or `None` if no gain
/// works (the drift form is indefinite on the kernel of `BᵀP`).
pub fn required_gain(p: &SymMatrix, sys: &LinearSystem) -> Result<Option<f64>> {
    let drift = sys.drift_form(p);
    let energy = sys.input_energy(p);
    let f = |z: f64| lambda_min(&(&drift + &energy.scale(2.0 * z)));
    if f(0.0)? >= 0.0 {
        return Ok(Some(0.0));
    }
    let mut hi = 1.0;
    while f(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(None);
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Relative slack added to [`required_gain`] so the exact condition holds strictly.
const GAIN_SLACK: f64 = 1e-3;

/// Shrinks `l` so that the gain program's optimum at `(P, l')` yields a `ζ`
/// meeting the exact invariance condition. Returns `l'`, or `None` when no
/// gain makes `P` invariant.
pub fn repair(p: &SymMatrix, l: f64, sys: &LinearSystem) -> Result<Option<f64>> {
    let Some(z) = required_gain(p, sys)? else {
        return Ok(None);
    };
    let target = z * (1.0 + GAIN_SLACK);
    let lam = gen_eig_max(&sys.input_energy(p), p)?;
    if target == 0.0 || lam == 0.0 {
        return Ok(Some(l));
    }
    Ok(Some(l.min(sys.u_max / (target * target * lam))))
}

struct Candidate {
    ellipsoid: Ellipsoid,
    controller: Controller,
    witness: RelaxationWitness,
}

fn joint_checks(
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    c: &Candidate,
    tol: f64,
) -> Result<CheckFlags> {
    let p = &c.ellipsoid.p;
    let z = c.controller.zeta;
    Ok(CheckFlags {
        invariance: verify::check_invariance_condition(sys, p, z, tol)?,
        containment: verify::check_containment(&c.ellipsoid, s, tol)?,
        control_bound: verify::check_control_bound(&c.ellipsoid, &c.controller, sys, tol)?,
        relaxed: verify::check_relaxed_conditions(sys, p, &c.witness.phat, z, tol)?,
    })
}

/// Prefers the program's `P̂`; falls back to `PBBᵀP`, which meets the coupling
/// block exactly and the relaxed invariance block whenever the exact one holds.
fn pick_witness(
    sys: &LinearSystem,
    p: &SymMatrix,
    phat: Option<SymMatrix>,
    zeta: f64,
    tol: f64,
) -> Result<RelaxationWitness> {
    if let Some(ph) = phat {
        if verify::check_relaxed_conditions(sys, p, &ph, zeta, tol)? {
            return Ok(RelaxationWitness { phat: ph });
        }
    }
    Ok(RelaxationWitness {
        phat: sys.input_energy(p),
    })
}

fn solve_logged(prob: &SdpProblem, opts: &SolveOptions, what: &str) -> Result<SdpSolution> {
    let sol = solve(prob, opts)?;
    log::debug!(
        "{what}: {:?} after {} iterations, objective {:.10e}, gap {:.2e}",
        sol.status,
        sol.iterations,
        sol.objective_value,
        sol.duality_gap
    );
    Ok(sol)
}

struct GainResult {
    status: SdpStatus,
    t: Option<f64>,
    closed_form: f64,
}

fn gain_step(
    p: &SymMatrix,
    l: f64,
    sys: &LinearSystem,
    cfg: &SynthesisConfig,
) -> Result<GainResult> {
    let closed_form = solve_program10_closed_form(p, l, sys)?;
    let sol = solve_logged(&build_program10(p, l, sys)?, &cfg.solver, "gain program")?;
    let t = (sol.status == SdpStatus::Optimal).then(|| sol.y[0].max(0.0));
    if let Some(t) = t {
        let rel = (t - closed_form).abs() / closed_form.abs().max(f64::MIN_POSITIVE);
        if rel > 1e-6 {
            log::warn!("gain program optimum {t:e} differs from closed form {closed_form:e} (rel {rel:.2e})");
        }
    }
    Ok(GainResult {
        status: sol.status,
        t,
        closed_form,
    })
}

/// Alternates the ellipsoid and gain programs starting from `ζ = zeta0`, then
/// keeps the latest iterate passing the joint verification at
/// `cfg.verify_tol`. If none passes, the last ellipsoid is shrunk by
/// [`repair`] and re-checked. Systems without input are tried once at `ζ = 0`.
pub fn run(
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    cfg: &SynthesisConfig,
) -> Result<SynthesisReport> {
    cfg.validate()?;
    check_dims(sys, s)?;
    s.validate_safe_set()?;
    if sys.has_no_input() {
        return run_without_input(sys, s, cfg);
    }
    let lay = Program9Layout { n: sys.n() };
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut candidates: Vec<(usize, Candidate)> = Vec::new();
    let mut last_ellipsoid: Option<(SymMatrix, f64)> = None;
    let mut zeta = cfg.zeta0;
    let mut prev_l: Option<f64> = None;

    for it in 0..cfg.max_outer_iters {
        let mut rec = IterationRecord {
            iteration: it,
            kind: "alternation".into(),
            zeta,
            ellipsoid_status: None,
            l: None,
            trace_p: None,
            gain_status: None,
            zeta_sq: None,
            zeta_sq_closed_form: None,
            checks: CheckFlags::default(),
        };
        let sol = solve_logged(
            &build_program9(sys, s, zeta, cfg)?,
            &cfg.solver,
            "ellipsoid program",
        )?;
        rec.ellipsoid_status = Some(sol.status);
        if sol.status != SdpStatus::Optimal {
            history.push(rec);
            if it == 0 {
                log::info!("ellipsoid program at ζ0 = {zeta} is {:?}", sol.status);
                return Ok(SynthesisReport {
                    status: SynthesisStatus::Infeasible,
                    history,
                    certificate: None,
                    accepted: None,
                });
            }
            break;
        }
        let p = lay.read_p(&sol.y);
        let l = sol.y[lay.l()];
        rec.l = Some(l);
        rec.trace_p = Some(p.trace());
        if Ellipsoid::new(p.clone(), l).is_err() {
            history.push(rec);
            break;
        }
        last_ellipsoid = Some((p.clone(), l));
        let gain = gain_step(&p, l, sys, cfg)?;
        rec.gain_status = Some(gain.status);
        rec.zeta_sq = gain.t;
        rec.zeta_sq_closed_form = Some(gain.closed_form);
        let Some(t) = gain.t else {
            history.push(rec);
            break;
        };
        let next_zeta = t.sqrt();
        let cand = Candidate {
            ellipsoid: Ellipsoid { p: p.clone(), l },
            controller: extract_controller(&p, next_zeta, sys),
            witness: pick_witness(
                sys,
                &p,
                Some(lay.read_phat(&sol.y)),
                next_zeta,
                cfg.verify_tol,
            )?,
        };
        rec.checks = joint_checks(sys, s, &cand, cfg.verify_tol)?;
        log::info!(
            "iteration {it}: ζ = {zeta:.6e}, l = {l:.10e}, next ζ = {next_zeta:.6e}, checks {:?}",
            rec.checks
        );
        if rec.checks.all() {
            candidates.push((history.len(), cand));
        }
        history.push(rec);
        if let Some(pl) = prev_l {
            if (l - pl).abs() <= cfg.l_tol * l.abs().max(1.0) {
                break;
            }
        }
        prev_l = Some(l);
        if next_zeta == 0.0 {
            break;
        }
        zeta = next_zeta;
    }

    if candidates.is_empty() {
        if let Some((p, l)) = last_ellipsoid {
            if let Some((idx, cand)) = repair_step(sys, s, cfg, &p, l, &mut history)? {
                candidates.push((idx, cand));
            }
        }
    }
    Ok(finish(history, candidates.pop(), SynthesisStatus::Stalled))
}

fn repair_step(
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    cfg: &SynthesisConfig,
    p: &SymMatrix,
    l: f64,
    history: &mut Vec<IterationRecord>,
) -> Result<Option<(usize, Candidate)>> {
    let Some(l_rep) = repair(p, l, sys)? else {
        log::info!("no gain makes the last ellipsoid invariant");
        return Ok(None);
    };
    let gain = gain_step(p, l_rep, sys, cfg)?;
    let mut rec = IterationRecord {
        iteration: history.len(),
        kind: "repair".into(),
        zeta: history.last().map_or(cfg.zeta0, |r| r.zeta),
        ellipsoid_status: None,
        l: Some(l_rep),
        trace_p: Some(p.trace()),
        gain_status: Some(gain.status),
        zeta_sq: gain.t,
        zeta_sq_closed_form: Some(gain.closed_form),
        checks: CheckFlags::default(),
    };
    let mut out = None;
    if let Some(t) = gain.t {
        let zeta = t.sqrt();
        let cand = Candidate {
            ellipsoid: Ellipsoid {
                p: p.clone(),
                l: l_rep,
            },
            controller: extract_controller(p, zeta, sys),
            witness: pick_witness(sys, p, None, zeta, cfg.verify_tol)?,
        };
        rec.checks = joint_checks(sys, s, &cand, cfg.verify_tol)?;
        log::info!(
            "repair: l = {l_rep:.10e}, ζ = {zeta:.6e}, checks {:?}",
            rec.checks
        );
        if rec.checks.all() {
            out = Some((history.len(), cand));
        }
    }
    history.push(rec);
    Ok(out)
}

fn finish(
    history: Vec<IterationRecord>,
    accepted: Option<(usize, Candidate)>,
    otherwise: SynthesisStatus,
) -> SynthesisReport {
    match accepted {
        Some((idx, c)) => SynthesisReport {
            status: SynthesisStatus::Feasible,
            history,
            certificate: Some(Certificate {
                ellipsoid: c.ellipsoid,
                controller: c.controller,
                witness: c.witness,
            }),
            accepted: Some(idx),
        },
        None => SynthesisReport {
            status: otherwise,
            history,
            certificate: None,
            accepted: None,
        },
    }
}

fn run_without_input(
    sys: &LinearSystem,
    s: &QuadraticPolynomial,
    cfg: &SynthesisConfig,
) -> Result<SynthesisReport> {
    let lay = Program9Layout { n: sys.n() };
    let sol = solve_logged(
        &build_program9_at(sys, s, 0.0, cfg)?,
        &cfg.solver,
        "ellipsoid program (ζ = 0)",
    )?;
    let mut rec = IterationRecord {
        iteration: 0,
        kind: "open-loop".into(),
        zeta: 0.0,
        ellipsoid_status: Some(sol.status),
        l: None,
        trace_p: None,
        gain_status: None,
        zeta_sq: None,
        zeta_sq_closed_form: None,
        checks: CheckFlags::default(),
    };
    let mut accepted = None;
    if sol.status == SdpStatus::Optimal {
        let p = lay.read_p(&sol.y);
        let l = sol.y[lay.l()];
        rec.l = Some(l);
        rec.trace_p = Some(p.trace());
        if let Ok(ellipsoid) = Ellipsoid::new(p.clone(), l) {
            let cand = Candidate {
                controller: extract_controller(&p, 0.0, sys),
                witness: RelaxationWitness {
                    phat: sys.input_energy(&p),
                },
                ellipsoid,
            };
            rec.checks = joint_checks(sys, s, &cand, cfg.verify_tol)?;
            if rec.checks.all() {
                accepted = Some((0, cand));
            }
        }
    }
    Ok(finish(
        vec![rec],
        accepted,
        SynthesisStatus::ControlIneffective,
    ))
}
