//! Homogeneous self-dual embedding with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector step.
//!
//! Internally the problem is `min cᵀx s.t. Ax + s = b, s ∈ {0}^p × S₊ × …`
//! with `x = y`, `c = −objective`; PSD blocks are stored as `svec` (lower
//! triangle, column-major, off-diagonals scaled by √2 so that
//! `svec(U)ᵀsvec(V) = tr(UV)`).

use std::f64::consts::SQRT_2;

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};

use super::{measure, SdpProblem, SdpSolution, SdpStatus, SolveOptions};
use crate::error::Result;
use crate::numerics::{cholesky_psd, sym_eig, SymMatrix};

const STEP_FRACTION: f64 = 0.99;
const KKT_REG: f64 = 1e-11;
const REFINE_STEPS: usize = 3;

fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                SQRT_2 * m[(i, j)]
            };
            k += 1;
        }
    }
}

fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

struct Standard {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    zero: usize,
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Standard {
    fn from_problem(p: &SdpProblem) -> Self {
        let nx = p.num_scalars;
        let zero = p.equalities.len();
        let dims = p.block_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut m = zero;
        for &d in &dims {
            offsets.push(m);
            m += svec_len(d);
        }
        let mut a = DMatrix::zeros(m, nx);
        let mut b = DVector::zeros(m);
        for (i, eq) in p.equalities.iter().enumerate() {
            for (j, v) in &eq.coeffs {
                a[(i, *j)] += v;
            }
            b[i] = eq.rhs;
        }
        let mut buf = vec![0.0; m];
        for (k, blk) in p.blocks.iter().enumerate() {
            let (off, len) = (offsets[k], svec_len(dims[k]));
            svec_into(blk.constant.as_matrix(), &mut buf[..len]);
            b.rows_mut(off, len).copy_from_slice(&buf[..len]);
            for (j, coef) in &blk.terms {
                svec_into(coef.as_matrix(), &mut buf[..len]);
                for r in 0..len {
                    a[(off + r, *j)] -= buf[r];
                }
            }
        }
        let c = -DVector::from_column_slice(&p.objective);
        Standard {
            a,
            b,
            c,
            zero,
            dims,
            offsets,
        }
    }

    fn m(&self) -> usize {
        self.a.nrows()
    }

    fn nx(&self) -> usize {
        self.a.ncols()
    }

    fn degree(&self) -> usize {
        self.dims.iter().sum()
    }

    fn block<'v>(&self, v: &'v DVector<f64>, k: usize) -> &'v [f64] {
        let off = self.offsets[k];
        &v.as_slice()[off..off + svec_len(self.dims[k])]
    }

    fn block_mat(&self, v: &DVector<f64>, k: usize) -> DMatrix<f64> {
        smat(self.block(v, k), self.dims[k])
    }
}

/// NT scaling of one PSD block: `Rᵀ Z R = R⁻¹ S R⁻ᵀ = diag(λ)`.
struct Scaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
    /// svec form of `ΔZ ↦ R Rᵀ ΔZ R Rᵀ`.
    h: DMatrix<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let d = s.nrows();
    let ls = cholesky_psd(&SymMatrix::new(s.clone()).ok()?, 0.0).ok()?;
    let lz = cholesky_psd(&SymMatrix::new(z.clone()).ok()?, 0.0).ok()?;
    let t = lz.transpose() * &ls;
    let svd = t.svd(false, true);
    let v_t = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return None;
    }
    let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|x| 1.0 / x.sqrt()));
    let sqrt = DMatrix::from_diagonal(&lambda.map(f64::sqrt));
    let r = &ls * v_t.transpose() * inv_sqrt;
    let ls_inv = ls.clone().try_inverse()?;
    let rinv = sqrt * v_t * ls_inv;
    let g = &r * r.transpose();
    let len = svec_len(d);
    let mut h = DMatrix::zeros(len, len);
    let mut e = vec![0.0; len];
    let mut col = vec![0.0; len];
    for k in 0..len {
        e[k] = 1.0;
        let em = smat(&e, d);
        svec_into(&(&g * em * &g), &mut col);
        h.set_column(k, &DVector::from_column_slice(&col));
        e[k] = 0.0;
    }
    Some(Scaling { r, rinv, lambda, h })
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Largest `α ≤ 1/0` keeping `diag(λ) + α·D` PSD, for `D` given in the scaled frame.
fn max_step_scaled(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let inv = lambda.map(|x| 1.0 / x.sqrt());
    let n = lambda.len();
    let m = DMatrix::from_fn(n, n, |i, j| inv[i] * d[(i, j)] * inv[j]);
    let Ok(sm) = SymMatrix::new(sym(m)) else {
        return 0.0;
    };
    match sym_eig(&sm) {
        Ok(e) if e.min() < 0.0 => -1.0 / e.min(),
        Ok(_) => f64::INFINITY,
        Err(_) => 0.0,
    }
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    exact: DMatrix<f64>,
}

impl Kkt {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.lu.solve(rhs)?;
        for _ in 0..REFINE_STEPS {
            let r = rhs - &self.exact * &sol;
            let corr = self.lu.solve(&r)?;
            sol += corr;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

/// Shifts every PSD block of `v` so its smallest eigenvalue is at least one.
fn shift_into_cone(std: &Standard, v: &mut DVector<f64>) {
    for k in 0..std.dims.len() {
        let d = std.dims[k];
        let m = std.block_mat(v, k);
        let lmin = SymMatrix::new(sym(m.clone()))
            .ok()
            .and_then(|s| sym_eig(&s).ok())
            .map(|e| e.min())
            .unwrap_or(f64::NEG_INFINITY);
        let shifted = if lmin.is_finite() && lmin >= 1.0 {
            m
        } else if lmin.is_finite() {
            m + DMatrix::identity(d, d) * (1.0 - lmin)
        } else {
            DMatrix::identity(d, d)
        };
        let off = std.offsets[k];
        svec_into(&shifted, &mut v.as_mut_slice()[off..off + svec_len(d)]);
    }
}

fn initial_point(std: &Standard) -> Iterate {
    let (nx, m) = (std.nx(), std.m());
    let n = nx + m;
    let mut k0 = DMatrix::zeros(n, n);
    k0.view_mut((0, nx), (nx, m)).copy_from(&std.a.transpose());
    k0.view_mut((nx, 0), (m, nx)).copy_from(&std.a);
    for i in 0..nx {
        k0[(i, i)] += 1e-8;
    }
    for i in 0..m {
        k0[(nx + i, nx + i)] = if i < std.zero { -1e-8 } else { -1.0 };
    }
    let lu = k0.lu();

    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(nx, m).copy_from(&std.b);
    let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
    let x = sol.rows(0, nx).into_owned();
    let mut s = &std.b - &std.a * &x;
    s.rows_mut(0, std.zero).fill(0.0);

    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, nx).copy_from(&(-&std.c));
    let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
    let mut z = sol.rows(nx, m).into_owned();

    shift_into_cone(std, &mut s);
    shift_into_cone(std, &mut z);
    if x.iter()
        .chain(s.iter())
        .chain(z.iter())
        .any(|v| !v.is_finite())
    {
        let mut s = DVector::zeros(m);
        shift_into_cone(std, &mut s);
        let z = s.clone();
        return Iterate {
            x: DVector::zeros(nx),
            s,
            z,
            tau: 1.0,
            kappa: 1.0,
        };
    }
    Iterate {
        x,
        s,
        z,
        tau: 1.0,
        kappa: 1.0,
    }
}

struct Solver<'p> {
    p: &'p SdpProblem,
    std: Standard,
    opts: SolveOptions,
}

enum Verdict {
    Continue,
    Done(SdpStatus),
}

impl<'p> Solver<'p> {
    fn complementarity(&self, it: &Iterate) -> f64 {
        let z = self.std.zero;
        it.s.rows(z, self.std.m() - z)
            .dot(&it.z.rows(z, self.std.m() - z))
            + it.tau * it.kappa
    }

    fn extract(&self, it: &Iterate) -> (Vec<f64>, Vec<SymMatrix>, Vec<f64>) {
        let y: Vec<f64> = it.x.iter().map(|v| v / it.tau).collect();
        let duals = (0..self.std.dims.len())
            .map(|k| {
                SymMatrix::from_lower_fn(self.std.dims[k], {
                    let m = self.std.block_mat(&it.z, k) / it.tau;
                    move |i, j| m[(i, j)]
                })
            })
            .collect();
        let w =
            it.z.rows(0, self.std.zero)
                .iter()
                .map(|v| v / it.tau)
                .collect();
        (y, duals, w)
    }

    fn assess(&self, it: &Iterate) -> Result<(Verdict, Option<SdpSolution>)> {
        let std = &self.std;
        let (y, duals, w) = self.extract(it);
        let meas = measure(self.p, &y, &duals, &w)?;
        trace!(
            "pinf {:.3e} dinf {:.3e} gap {:.3e} pobj {:.6e} tau {:.3e} kappa {:.3e}",
            meas.primal_inf,
            meas.dual_inf,
            meas.gap,
            meas.primal_obj,
            it.tau,
            it.kappa
        );
        if meas.primal_inf <= self.opts.feas_tol
            && meas.dual_inf <= self.opts.feas_tol
            && meas.gap <= self.opts.gap_tol
        {
            return Ok((Verdict::Done(SdpStatus::Optimal), None));
        }

        if meas.primal_inf <= self.opts.feas_tol && meas.primal_obj > self.opts.objective_ceiling {
            return Ok((Verdict::Done(SdpStatus::Unbounded), None));
        }

        // Infeasibility certificates live in the unnormalized iterate.
        if it.tau < it.kappa {
            let btz = std.b.dot(&it.z);
            let atz = (std.a.transpose() * &it.z).amax();
            if btz < 0.0 && atz <= -self.opts.infeas_tol * btz {
                return Ok((Verdict::Done(SdpStatus::Infeasible), None));
            }
            let ctx = std.c.dot(&it.x);
            let ax_s = (&std.a * &it.x + &it.s).amax();
            if ctx < 0.0 && ax_s <= -self.opts.infeas_tol * ctx {
                return Ok((Verdict::Done(SdpStatus::Unbounded), None));
            }
        }
        Ok((Verdict::Continue, None))
    }

    fn build_kkt(&self, it: &Iterate, scalings: &[Scaling]) -> Option<Kkt> {
        let std = &self.std;
        let (nx, m) = (std.nx(), std.m());
        let n = nx + m + 1;
        let mut k = DMatrix::zeros(n, n);
        k.view_mut((0, nx), (nx, m)).copy_from(&std.a.transpose());
        k.view_mut((nx, 0), (m, nx)).copy_from(&std.a);
        for (kb, sc) in scalings.iter().enumerate() {
            let off = nx + std.offsets[kb];
            let len = sc.h.nrows();
            k.view_mut((off, off), (len, len)).copy_from(&(-&sc.h));
        }
        for i in 0..nx {
            k[(i, n - 1)] = std.c[i];
            k[(n - 1, i)] = std.c[i];
        }
        for i in 0..m {
            k[(nx + i, n - 1)] = -std.b[i];
            k[(n - 1, nx + i)] = std.b[i];
        }
        k[(n - 1, n - 1)] = -it.kappa / it.tau;

        let mut reg = k.clone();
        for i in 0..nx {
            reg[(i, i)] += KKT_REG;
        }
        for i in 0..m {
            reg[(nx + i, nx + i)] -= KKT_REG;
        }
        Some(Kkt {
            lu: reg.lu(),
            exact: k,
        })
    }

    /// Solves the Newton system for residual weight `eta` and the per-block
    /// complementarity right-hand sides `comp` (in the scaled frame).
    fn direction(
        &self,
        it: &Iterate,
        scalings: &[Scaling],
        kkt: &Kkt,
        eta: f64,
        comp: &[DMatrix<f64>],
        rhs_kappa: f64,
    ) -> Option<Direction> {
        let std = &self.std;
        let (nx, m) = (std.nx(), std.m());
        let r_x = std.a.transpose() * &it.z + &std.c * it.tau;
        let r_z = &std.a * &it.x + &it.s - &std.b * it.tau;
        let r_tau = std.c.dot(&it.x) + std.b.dot(&it.z) + it.kappa;

        // Δs = ds_term − H Δz, with ds_term = R · (λ ⊙⁻¹ comp) · Rᵀ.
        let mut ds_term = DVector::zeros(m);
        for (kb, sc) in scalings.iter().enumerate() {
            let d = std.dims[kb];
            let rhs = &comp[kb];
            let dm = DMatrix::from_fn(d, d, |i, j| {
                2.0 * rhs[(i, j)] / (sc.lambda[i] + sc.lambda[j])
            });
            let full = &sc.r * dm * sc.r.transpose();
            let off = std.offsets[kb];
            svec_into(
                &sym(full),
                &mut ds_term.as_mut_slice()[off..off + svec_len(d)],
            );
        }

        let mut rhs = DVector::zeros(nx + m + 1);
        rhs.rows_mut(0, nx).copy_from(&(-&r_x * eta));
        rhs.rows_mut(nx, m).copy_from(&(-&r_z * eta - &ds_term));
        rhs[nx + m] = -eta * r_tau - rhs_kappa / it.tau;

        let sol = kkt.solve(&rhs)?;
        let dx = sol.rows(0, nx).into_owned();
        let dz = sol.rows(nx, m).into_owned();
        let dtau = sol[nx + m];
        let mut ds = ds_term;
        for (kb, sc) in scalings.iter().enumerate() {
            let off = std.offsets[kb];
            let len = sc.h.nrows();
            let hdz = &sc.h * dz.rows(off, len);
            let mut view = ds.rows_mut(off, len);
            view -= hdz;
        }
        let dkappa = (rhs_kappa - it.kappa * dtau) / it.tau;
        Some(Direction {
            dx,
            ds,
            dz,
            dtau,
            dkappa,
        })
    }

    fn scaled_pair(
        &self,
        sc: &Scaling,
        dir: &Direction,
        kb: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let ds = self.std.block_mat(&dir.ds, kb);
        let dz = self.std.block_mat(&dir.dz, kb);
        let ds_t = &sc.rinv * ds * sc.rinv.transpose();
        let dz_t = sc.r.transpose() * dz * &sc.r;
        (sym(ds_t), sym(dz_t))
    }

    fn max_step(&self, it: &Iterate, scalings: &[Scaling], dir: &Direction) -> f64 {
        let mut alpha = f64::INFINITY;
        for (kb, sc) in scalings.iter().enumerate() {
            let (ds_t, dz_t) = self.scaled_pair(sc, dir, kb);
            alpha = alpha.min(max_step_scaled(&sc.lambda, &ds_t));
            alpha = alpha.min(max_step_scaled(&sc.lambda, &dz_t));
        }
        if dir.dtau < 0.0 {
            alpha = alpha.min(-it.tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            alpha = alpha.min(-it.kappa / dir.dkappa);
        }
        alpha
    }

    fn finish(&self, it: &Iterate, status: SdpStatus, iterations: usize) -> Result<SdpSolution> {
        let (mut y, duals, w) = self.extract(it);
        let meas = measure(self.p, &y, &duals, &w)?;
        let mut block_duals = duals;
        let mut equality_duals = w;
        match status {
            SdpStatus::Unbounded => {
                let dir = if meas.primal_obj > self.opts.objective_ceiling {
                    y.clone()
                } else {
                    it.x.iter().copied().collect()
                };
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                y = dir
                    .iter()
                    .map(|v| v / norm.max(f64::MIN_POSITIVE))
                    .collect();
            }
            SdpStatus::Infeasible => {
                // Scale the Farkas certificate so that Σ⟨C_k, X_k⟩ + fᵀw = −1.
                let btz = self.std.b.dot(&it.z);
                let (_, d, w) = {
                    let fake = Iterate {
                        x: it.x.clone(),
                        s: it.s.clone(),
                        z: it.z.clone(),
                        tau: -btz,
                        kappa: it.kappa,
                    };
                    self.extract(&fake)
                };
                block_duals = d;
                equality_duals = w;
            }
            _ => {}
        }
        let block_values = self.p.block_values(&y);
        Ok(SdpSolution {
            status,
            objective_value: self.p.objective_value(&y),
            dual_objective: meas.dual_obj,
            duality_gap: meas.gap,
            primal_infeasibility: meas.primal_inf,
            dual_infeasibility: meas.dual_inf,
            y,
            block_values,
            block_duals,
            equality_duals,
            iterations,
        })
    }

    fn run(&self) -> Result<SdpSolution> {
        let std = &self.std;
        let nu = std.degree() as f64;
        let mut it = initial_point(std);
        let mut stalls = 0;

        for iter in 0..=self.opts.max_iters {
            if let (Verdict::Done(status), _) = self.assess(&it)? {
                debug!("sdp: {status:?} after {iter} iterations");
                return self.finish(&it, status, iter);
            }
            if iter == self.opts.max_iters {
                break;
            }

            let mut scalings = Vec::with_capacity(std.dims.len());
            for k in 0..std.dims.len() {
                let s = std.block_mat(&it.s, k);
                let z = std.block_mat(&it.z, k);
                match nt_scaling(&s, &z) {
                    Some(sc) => scalings.push(sc),
                    None => return self.finish(&it, SdpStatus::NumericalFailure, iter),
                }
            }
            let Some(kkt) = self.build_kkt(&it, &scalings) else {
                return self.finish(&it, SdpStatus::NumericalFailure, iter);
            };
            let mu = self.complementarity(&it) / (nu + 1.0);

            // predictor
            let comp_aff: Vec<DMatrix<f64>> = scalings
                .iter()
                .map(|sc| -DMatrix::from_diagonal(&sc.lambda.map(|l| l * l)))
                .collect();
            let rk_aff = -it.tau * it.kappa;
            let Some(aff) = self.direction(&it, &scalings, &kkt, 1.0, &comp_aff, rk_aff) else {
                return self.finish(&it, SdpStatus::NumericalFailure, iter);
            };
            let alpha_aff = self.max_step(&it, &scalings, &aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // corrector
            let comp: Vec<DMatrix<f64>> = scalings
                .iter()
                .enumerate()
                .map(|(kb, sc)| {
                    let d = sc.lambda.len();
                    let (ds_t, dz_t) = self.scaled_pair(sc, &aff, kb);
                    let cross = sym(&ds_t * &dz_t);
                    -DMatrix::from_diagonal(&sc.lambda.map(|l| l * l)) - cross
                        + DMatrix::identity(d, d) * (sigma * mu)
                })
                .collect();
            let rk = -it.tau * it.kappa - aff.dtau * aff.dkappa + sigma * mu;
            let Some(dir) = self.direction(&it, &scalings, &kkt, 1.0 - sigma, &comp, rk) else {
                return self.finish(&it, SdpStatus::NumericalFailure, iter);
            };
            let alpha = (STEP_FRACTION * self.max_step(&it, &scalings, &dir)).min(1.0);
            trace!("iter {iter}: mu {mu:.3e} sigma {sigma:.3e} alpha {alpha:.3e}");
            if alpha.is_nan() || alpha <= 1e-12 {
                stalls += 1;
                if stalls > 3 {
                    return self.finish(&it, SdpStatus::NumericalFailure, iter);
                }
                continue;
            }
            stalls = 0;
            it.x += &dir.dx * alpha;
            it.s += &dir.ds * alpha;
            it.z += &dir.dz * alpha;
            it.tau += alpha * dir.dtau;
            it.kappa += alpha * dir.dkappa;

            // keep the zero cone exact
            it.s.rows_mut(0, std.zero).fill(0.0);
            if !(it.tau.is_finite() && it.kappa.is_finite()) || it.tau <= 0.0 {
                return self.finish(&it, SdpStatus::NumericalFailure, iter);
            }
        }
        self.finish(&it, SdpStatus::IterationLimit, self.opts.max_iters)
    }
}

fn unconstrained(p: &SdpProblem) -> SdpSolution {
    let norm = p.objective.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (status, y) = if norm == 0.0 {
        (SdpStatus::Optimal, vec![0.0; p.num_scalars])
    } else {
        (
            SdpStatus::Unbounded,
            p.objective.iter().map(|v| v / norm).collect(),
        )
    };
    SdpSolution {
        status,
        objective_value: p.objective_value(&y),
        dual_objective: 0.0,
        duality_gap: 0.0,
        primal_infeasibility: 0.0,
        dual_infeasibility: if norm == 0.0 { 0.0 } else { norm },
        y,
        block_values: Vec::new(),
        block_duals: Vec::new(),
        equality_duals: Vec::new(),
        iterations: 0,
    }
}

/// Solves `p` to the tolerances in `opts`.
///
/// Returns `Err` only for malformed problems; numerical trouble is reported
/// through [`SdpStatus`].
pub fn solve(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    p.validate()?;
    if p.blocks.is_empty() && p.equalities.is_empty() {
        return Ok(unconstrained(p));
    }
    let solver = Solver {
        p,
        std: Standard::from_problem(p),
        opts: opts.clone(),
    };
    solver.run()
}
