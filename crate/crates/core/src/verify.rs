//! Independent checks of a certificate `(P, l, ζ)` and closed-loop simulation.
//!
//! Only the eigenvalue kernels of [`crate::numerics`] are used here; nothing
//! in this module calls the SDP solver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_psd, gen_eig_max, gen_eig_max_vector, lambda_max, lambda_min, SymMatrix,
};
use crate::sos::QuadraticPolynomial;
use crate::synthesis::{Controller, Ellipsoid, LinearSystem};

/// `−PA − AᵀP + 2ζPBBᵀP`
pub fn invariance_matrix(sys: &LinearSystem, p: &SymMatrix, zeta: f64) -> SymMatrix {
    &sys.drift_form(p) + &sys.input_energy(p).scale(2.0 * zeta)
}

/// `λ_min(−PA − AᵀP + 2ζPBBᵀP) ≥ −tol`
pub fn check_invariance_condition(
    sys: &LinearSystem,
    p: &SymMatrix,
    zeta: f64,
    tol: f64,
) -> Result<bool> {
    Ok(lambda_min(&invariance_matrix(sys, p, zeta))? >= -tol)
}

/// `[[P̂, PB], [BᵀP, I]]`
pub fn coupling_matrix(sys: &LinearSystem, p: &SymMatrix, phat: &SymMatrix) -> SymMatrix {
    let (n, m) = (sys.n(), sys.m());
    let pb = p.as_matrix() * &sys.b;
    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(phat.as_matrix());
    g.view_mut((0, n), (n, m)).copy_from(&pb);
    g.view_mut((n, 0), (m, n)).copy_from(&pb.transpose());
    g.view_mut((n, n), (m, m)).fill_with_identity();
    SymMatrix::from_lower_fn(n + m, |i, j| g[(i, j)])
}

/// Both relaxed conditions: `−PA − AᵀP + 2ζP̂ ⪰ 0` and `[[P̂, PB], [BᵀP, I]] ⪰ 0`,
/// each up to `tol` on the smallest eigenvalue.
pub fn check_relaxed_conditions(
    sys: &LinearSystem,
    p: &SymMatrix,
    phat: &SymMatrix,
    zeta: f64,
    tol: f64,
) -> Result<bool> {
    if phat.dim() != sys.n() {
        return Err(Error::InvalidInput(format!(
            "P̂ is {}x{}, system has {} states",
            phat.dim(),
            phat.dim(),
            sys.n()
        )));
    }
    let relaxed = &sys.drift_form(p) + &phat.scale(2.0 * zeta);
    Ok(lambda_min(&relaxed)? >= -tol && lambda_min(&coupling_matrix(sys, p, phat))? >= -tol)
}

const THEOREM_TOL: f64 = 1e-8;

/// Requires the relaxed conditions at `1e-8` and reports whether the exact
/// invariance condition follows at the same tolerance.
pub fn theorem1_check(
    sys: &LinearSystem,
    p: &SymMatrix,
    phat: &SymMatrix,
    zeta: f64,
) -> Result<bool> {
    if !check_relaxed_conditions(sys, p, phat, zeta, THEOREM_TOL)? {
        return Err(Error::PreconditionFailed(
            "(P, P̂, ζ) does not satisfy the relaxed conditions".into(),
        ));
    }
    check_invariance_condition(sys, p, zeta, THEOREM_TOL)
}

/// Boundary parametrization `x = √l·L⁻ᵀv` of `{xᵀPx = l}` for `P = LLᵀ`, `‖v‖ = 1`.
struct BoundaryMap {
    map: DMatrix<f64>,
}

impl BoundaryMap {
    fn new(ell: &Ellipsoid) -> Result<Self> {
        let l = cholesky_psd(&ell.p, 0.0)?;
        let linv_t = l
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::InvalidMatrix("singular Cholesky factor".into()))?;
        Ok(BoundaryMap {
            map: linv_t * ell.l.sqrt(),
        })
    }

    fn point(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.map * v
    }
}

/// `min s(x)` over `{xᵀPx = l}`, with a minimizer. Exact for centered `s`;
/// otherwise found numerically.
pub fn boundary_min(ell: &Ellipsoid, s: &QuadraticPolynomial) -> Result<(f64, DVector<f64>)> {
    let bm = BoundaryMap::new(ell)?;
    let n = ell.dim();
    // s(√l L⁻ᵀv) = vᵀHv + gᵀv + c
    let h = SymMatrix::from_lower_fn(n, |i, j| {
        (bm.map.transpose() * s.quad.as_matrix() * &bm.map)[(i, j)]
    });
    let g = bm.map.transpose() * &s.lin;
    let f = |v: &DVector<f64>| h.quad_form(v) + g.dot(v) + s.constant;

    let best = if n == 1 {
        let a = DVector::from_element(1, 1.0);
        let b = DVector::from_element(1, -1.0);
        if f(&a) <= f(&b) {
            a
        } else {
            b
        }
    } else if n == 2 {
        circle_min(&f)
    } else {
        sphere_min(&h, &g, &f)
    };
    Ok((f(&best), bm.point(&best)))
}

fn circle_min(f: &impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    const SAMPLES: usize = 4096;
    let at = |th: f64| DVector::from_column_slice(&[th.cos(), th.sin()]);
    let step = std::f64::consts::TAU / SAMPLES as f64;
    let k = (0..SAMPLES)
        .min_by(|&a, &b| f(&at(a as f64 * step)).total_cmp(&f(&at(b as f64 * step))))
        .unwrap_or(0);
    // golden-section refinement on the bracketing arc
    let (mut lo, mut hi) = ((k as f64 - 1.0) * step, (k as f64 + 1.0) * step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(&at(x1)), f(&at(x2)));
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(&at(x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(&at(x2));
        }
    }
    at(0.5 * (lo + hi))
}

fn sphere_min(h: &SymMatrix, g: &DVector<f64>, f: &impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    use rand::SeedableRng;
    let n = h.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(n);
            e[i] = sign;
            starts.push(e);
        }
    }
    if g.norm() > 0.0 {
        starts.push(-g / g.norm());
    }
    for _ in 0..64 {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 0.0 {
            starts.push(&v / v.norm());
        }
    }
    let lip = 2.0 * h.as_matrix().norm() + g.norm() + 1e-300;
    let step = 1.0 / lip;
    let mut best = starts[0].clone();
    let mut best_val = f(&best);
    for mut v in starts {
        for _ in 0..5000 {
            let grad = h.as_matrix() * &v * 2.0 + g;
            let next = &v - &grad * step;
            let norm = next.norm();
            if norm == 0.0 {
                break;
            }
            let next = next / norm;
            let moved = (&next - &v).norm();
            v = next;
            if moved < 1e-14 {
                break;
            }
        }
        let val = f(&v);
        if val < best_val {
            best_val = val;
            best = v;
        }
    }
    best
}

/// `{xᵀPx ≤ l} ⊆ {s ≥ 0}` up to `tol`. Centered safe sets use the exact test
/// `l·λ_max(P⁻¹(−Q)) ≤ c + tol`; others minimize `s` over the ellipsoid
/// boundary (sufficient because `s` is concave).
pub fn check_containment(ell: &Ellipsoid, s: &QuadraticPolynomial, tol: f64) -> Result<bool> {
    if s.dim() != ell.dim() {
        return Err(Error::InvalidInput(format!(
            "safe set has dimension {}, ellipsoid has {}",
            s.dim(),
            ell.dim()
        )));
    }
    let qmax = lambda_max(&s.quad)?;
    if qmax >= 0.0 {
        return Err(Error::InvalidInput(format!(
            "safe set must be compact: quadratic part needs Q ≺ 0 (λ_max = {qmax})"
        )));
    }
    if s.is_centered() {
        let neg_q = s.quad.scale(-1.0);
        return Ok(ell.l * gen_eig_max(&neg_q, &ell.p)? <= s.constant + tol);
    }
    Ok(boundary_min(ell, s)?.0 >= -tol)
}

/// `max ‖Kx‖²` over the ellipsoid and a boundary point attaining it.
pub fn max_input_energy(ell: &Ellipsoid, ctrl: &Controller) -> Result<(f64, DVector<f64>)> {
    let ktk = SymMatrix::gram_of(&ctrl.k.transpose());
    let (lam, v) = gen_eig_max_vector(&ktk, &ell.p)?;
    Ok((ell.l * lam, v * ell.l.sqrt()))
}

/// `max ‖Kx‖² ≤ u_max + tol` over the ellipsoid; with `K = −ζBᵀP` the maximum
/// is `ζ²·l·λ_max(P⁻¹PBBᵀP)`.
pub fn check_control_bound(
    ell: &Ellipsoid,
    ctrl: &Controller,
    sys: &LinearSystem,
    tol: f64,
) -> Result<bool> {
    if ctrl.k.nrows() != sys.m() || ctrl.k.ncols() != ell.dim() {
        return Err(Error::InvalidInput(format!(
            "gain is {}x{}, expected {}x{}",
            ctrl.k.nrows(),
            ctrl.k.ncols(),
            sys.m(),
            ell.dim()
        )));
    }
    Ok(max_input_energy(ell, ctrl)?.0 <= sys.u_max + tol)
}

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `b(x(t_k))` for each sample.
    pub barrier: Vec<f64>,
    pub max_input_sq: f64,
    pub started_outside: bool,
}

impl Trajectory {
    pub fn min_barrier(&self) -> f64 {
        self.barrier.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Integrates `ẋ = (A + BK)x` with classical RK4 at fixed step `dt` up to `horizon`.
pub fn simulate_closed_loop(
    sys: &LinearSystem,
    ctrl: &Controller,
    ell: &Ellipsoid,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(horizon.is_finite() && horizon >= dt) {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} is shorter than dt {dt}"
        )));
    }
    if x0.len() != sys.n() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "initial state has the wrong length or non-finite entries".into(),
        ));
    }
    let closed = &sys.a + &sys.b * &ctrl.k;
    let rhs = |x: &DVector<f64>| &closed * x;
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut barrier = Vec::with_capacity(steps + 1);
    let mut max_input_sq = 0.0_f64;
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            let last = states
                .last()
                .map_or_else(|| x0.clone(), |s: &DVector<f64>| s.clone());
            return Err(Error::Diverged {
                time: t,
                last_state: last.iter().cloned().collect(),
            });
        }
        max_input_sq = max_input_sq.max(ctrl.control(&x).norm_squared());
        barrier.push(ell.barrier(&x));
        times.push(t);
        states.push(x.clone());
        if k == steps {
            break;
        }
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &k1 * (0.5 * dt)));
        let k3 = rhs(&(&x + &k2 * (0.5 * dt)));
        let k4 = rhs(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(Trajectory {
        started_outside: barrier[0] < 0.0,
        times,
        states,
        barrier,
        max_input_sq,
    })
}

/// Simulates every start in parallel; results keep the order of `starts`.
pub fn simulate_batch(
    sys: &LinearSystem,
    ctrl: &Controller,
    ell: &Ellipsoid,
    starts: &[DVector<f64>],
    dt: f64,
    horizon: f64,
) -> Vec<Result<Trajectory>> {
    starts
        .par_iter()
        .map(|x0| simulate_closed_loop(sys, ctrl, ell, x0, dt, horizon))
        .collect()
}

/// Draws `count` points uniformly from `{xᵀPx ≤ l}`.
pub fn sample_in_ellipsoid<R: Rng + ?Sized>(
    ell: &Ellipsoid,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let bm = BoundaryMap::new(ell)?;
    let n = ell.dim();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm == 0.0 {
            continue;
        }
        let r: f64 = rng.random::<f64>().powf(1.0 / n as f64);
        out.push(bm.point(&(g * (r / norm))));
    }
    Ok(out)
}
