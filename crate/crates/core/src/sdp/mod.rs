//! Block-structured semidefinite programs and a dense primal-dual
//! interior-point solver.
//!
//! A problem is stated over free scalar variables `y`:
//!
//! ```text
//! maximize   bᵀy
//! subject to S_k(y) = C_k + Σ_j y_j A_kj ⪰ 0     for every block k
//!            E y = f
//! ```
//!
//! The conic dual carries one matrix `X_k ⪰ 0` per block and one multiplier
//! per equality; see [`residuals`] for the exact definitions used to judge a
//! solution.

mod sdpa;
mod solver;

pub use sdpa::{parse_sdpa, write_sdpa, SdpaProblem};
pub use solver::solve;

use crate::error::{Error, Result};
use crate::numerics::{lambda_min, SymMatrix};

/// One PSD constraint `C + Σ_j y_j A_j ⪰ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineBlock {
    pub label: String,
    pub constant: SymMatrix,
    /// `(variable index, coefficient matrix)`; a variable appears at most once.
    pub terms: Vec<(usize, SymMatrix)>,
}

impl AffineBlock {
    pub fn new(label: impl Into<String>, constant: SymMatrix) -> Self {
        AffineBlock {
            label: label.into(),
            constant,
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    /// Adds `coef · y_var`, merging with an existing term for the same variable.
    pub fn add_term(&mut self, var: usize, coef: SymMatrix) {
        if let Some((_, existing)) = self.terms.iter_mut().find(|(v, _)| *v == var) {
            *existing = &*existing + &coef;
        } else {
            self.terms.push((var, coef));
        }
    }

    pub fn with_term(mut self, var: usize, coef: SymMatrix) -> Self {
        self.add_term(var, coef);
        self
    }

    pub fn coefficient(&self, var: usize) -> Option<&SymMatrix> {
        self.terms.iter().find(|(v, _)| *v == var).map(|(_, m)| m)
    }

    pub fn evaluate(&self, y: &[f64]) -> SymMatrix {
        self.terms
            .iter()
            .fold(self.constant.clone(), |acc, (j, a)| &acc + &(a * y[*j]))
    }
}

/// `Σ coeffs · y = rhs`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEquality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearEquality {
    pub fn evaluate(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().map(|(j, a)| a * y[*j]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    pub num_scalars: usize,
    /// Coefficients of the maximized linear objective, one per scalar.
    pub objective: Vec<f64>,
    pub blocks: Vec<AffineBlock>,
    pub equalities: Vec<LinearEquality>,
}

impl SdpProblem {
    pub fn new(num_scalars: usize) -> Self {
        SdpProblem {
            num_scalars,
            objective: vec![0.0; num_scalars],
            blocks: Vec::new(),
            equalities: Vec::new(),
        }
    }

    pub fn maximize(mut self, var: usize, coef: f64) -> Self {
        self.objective[var] += coef;
        self
    }

    pub fn add_block(&mut self, block: AffineBlock) -> usize {
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearEquality { coeffs, rhs });
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(AffineBlock::dim).collect()
    }

    pub fn block_values(&self, y: &[f64]) -> Vec<SymMatrix> {
        self.blocks.iter().map(|b| b.evaluate(y)).collect()
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(b, v)| b * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if self.objective.len() != self.num_scalars {
            return bad(format!(
                "objective has {} coefficients for {} scalars",
                self.objective.len(),
                self.num_scalars
            ));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return bad("non-finite objective coefficient".into());
        }
        for (k, block) in self.blocks.iter().enumerate() {
            let d = block.dim();
            if !block.constant.is_finite() {
                return bad(format!("block {k} ({}): non-finite constant", block.label));
            }
            let mut seen = vec![false; self.num_scalars];
            for (j, a) in &block.terms {
                if *j >= self.num_scalars {
                    return bad(format!(
                        "block {k} ({}) references scalar {j} of {}",
                        block.label, self.num_scalars
                    ));
                }
                if std::mem::replace(&mut seen[*j], true) {
                    return bad(format!("block {k} ({}) repeats scalar {j}", block.label));
                }
                if a.dim() != d {
                    return bad(format!(
                        "block {k} ({}): coefficient of scalar {j} is {}x{}, block is {d}x{d}",
                        block.label,
                        a.dim(),
                        a.dim()
                    ));
                }
                if !a.is_finite() {
                    return bad(format!(
                        "block {k} ({}): non-finite coefficient",
                        block.label
                    ));
                }
            }
        }
        for (i, eq) in self.equalities.iter().enumerate() {
            if !eq.rhs.is_finite() {
                return bad(format!("equality {i}: non-finite right-hand side"));
            }
            for (j, a) in &eq.coeffs {
                if *j >= self.num_scalars || !a.is_finite() {
                    return bad(format!("equality {i}: bad term for scalar {j}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
    /// An objective above this value at a feasible point is reported as unbounded.
    pub objective_ceiling: f64,
    /// Relative threshold for accepting an infeasibility certificate.
    pub infeas_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iters: 200,
            objective_ceiling: 1e9,
            infeas_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Optimal scalars; for `Unbounded` a unit recession direction.
    pub y: Vec<f64>,
    pub block_values: Vec<SymMatrix>,
    /// Dual matrices `X_k`; for `Infeasible` they form the certificate.
    pub block_duals: Vec<SymMatrix>,
    pub equality_duals: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub primal_inf: f64,
    pub dual_inf: f64,
    pub gap: f64,
}

/// Recomputes feasibility and gap measures of `(y, X, w)` against `p`.
///
/// * `primal_inf = max(max_k (−λ_min(S_k(y)))⁺, max_i |E_i y − f_i|)`
/// * `dual_inf = max(‖b + (⟨A_kj, X_k⟩)_j − Eᵀw‖_∞, max_k (−λ_min(X_k))⁺)`
/// * `gap = |d − bᵀy| / max(1, |bᵀy|)` with `d = fᵀw + Σ_k ⟨C_k, X_k⟩`
pub fn residuals(p: &SdpProblem, s: &SdpSolution) -> Result<Residuals> {
    p.validate()?;
    let mismatch = |what: &str| Err(Error::InvalidProblem(format!("solution {what} mismatch")));
    if s.y.len() != p.num_scalars {
        return mismatch("scalar count");
    }
    if s.block_duals.len() != p.blocks.len() {
        return mismatch("block count");
    }
    if s.equality_duals.len() != p.equalities.len() {
        return mismatch("equality count");
    }
    for (x, blk) in s.block_duals.iter().zip(&p.blocks) {
        if x.dim() != blk.dim() {
            return mismatch("dual block dimension");
        }
    }
    let m = measure(p, &s.y, &s.block_duals, &s.equality_duals)?;
    Ok(Residuals {
        primal_inf: m.primal_inf,
        dual_inf: m.dual_inf,
        gap: m.gap,
    })
}

pub(crate) struct Measures {
    pub primal_inf: f64,
    pub dual_inf: f64,
    pub gap: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
}

pub(crate) fn measure(
    p: &SdpProblem,
    y: &[f64],
    duals: &[SymMatrix],
    eq_duals: &[f64],
) -> Result<Measures> {
    let mut primal_inf = 0.0_f64;
    for blk in &p.blocks {
        primal_inf = primal_inf.max(-lambda_min(&blk.evaluate(y))?);
    }
    for eq in &p.equalities {
        primal_inf = primal_inf.max((eq.evaluate(y) - eq.rhs).abs());
    }

    let mut grad = p.objective.clone();
    for (blk, x) in p.blocks.iter().zip(duals) {
        for (j, a) in &blk.terms {
            grad[*j] += a.dot(x);
        }
    }
    for (eq, w) in p.equalities.iter().zip(eq_duals) {
        for (j, a) in &eq.coeffs {
            grad[*j] -= a * w;
        }
    }
    let mut dual_inf = grad.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for x in duals {
        dual_inf = dual_inf.max(-lambda_min(x)?);
    }

    let primal_obj = p.objective_value(y);
    let dual_obj = p
        .equalities
        .iter()
        .zip(eq_duals)
        .map(|(eq, w)| eq.rhs * w)
        .sum::<f64>()
        + p.blocks
            .iter()
            .zip(duals)
            .map(|(blk, x)| blk.constant.dot(x))
            .sum::<f64>();
    let gap = (dual_obj - primal_obj).abs() / primal_obj.abs().max(1.0);
    Ok(Measures {
        primal_inf: primal_inf.max(0.0),
        dual_inf: dual_inf.max(0.0),
        gap,
        primal_obj,
        dual_obj,
    })
}
