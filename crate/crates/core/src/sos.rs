//! Gram-matrix encodings of quadratic sum-of-squares conditions.
//!
//! With the monomial basis `z = (1, x₁, …, x_n)` every quadratic has exactly
//! one Gram matrix, so "is SOS" and "Gram is PSD" coincide for the degree-2
//! bodies built here. Multipliers are constants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{lambda_max, SymMatrix};

/// `p(x) = xᵀQx + qᵀx + c`
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPolynomial {
    pub quad: SymMatrix,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl QuadraticPolynomial {
    pub fn new(quad: SymMatrix, lin: DVector<f64>, constant: f64) -> Result<Self> {
        if lin.len() != quad.dim() {
            return Err(Error::InvalidInput(format!(
                "linear part has length {}, quadratic part is {}x{}",
                lin.len(),
                quad.dim(),
                quad.dim()
            )));
        }
        if !quad.is_finite() || lin.iter().any(|v| !v.is_finite()) || !constant.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite polynomial coefficient".into(),
            ));
        }
        Ok(QuadraticPolynomial {
            quad,
            lin,
            constant,
        })
    }

    /// `r² − xᵀx`, whose superlevel set is the ball of radius `r`.
    pub fn ball(n: usize, radius: f64) -> Self {
        QuadraticPolynomial {
            quad: SymMatrix::identity(n).scale(-1.0),
            lin: DVector::zeros(n),
            constant: radius * radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.quad.dim()
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.quad.quad_form(x) + self.lin.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.quad.as_matrix() * x * 2.0 + &self.lin
    }

    pub fn is_centered(&self) -> bool {
        self.lin.iter().all(|v| *v == 0.0)
    }

    /// Checks that `{x : p(x) ≥ 0}` is a compact set with nonempty interior,
    /// i.e. `Q ≺ 0` and the maximum of `p` is positive.
    pub fn validate_safe_set(&self) -> Result<()> {
        let lmax = lambda_max(&self.quad)?;
        if lmax >= 0.0 {
            return Err(Error::InvalidInput(format!(
                "safe set must be compact: quadratic part needs Q ≺ 0 (λ_max = {lmax})"
            )));
        }
        let (_, peak) = self.maximizer()?;
        if peak <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "safe set has empty interior (max s = {peak})"
            )));
        }
        Ok(())
    }

    /// Stationary point `−Q⁻¹q/2` and the value there (the maximum when `Q ≺ 0`).
    pub fn maximizer(&self) -> Result<(DVector<f64>, f64)> {
        let q = self.quad.as_matrix().clone();
        let center = q
            .lu()
            .solve(&(-&self.lin * 0.5))
            .ok_or_else(|| Error::InvalidInput("singular quadratic part".into()))?;
        let value = self.evaluate(&center);
        Ok((center, value))
    }
}

/// Constant (degree-0) SOS multiplier.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SosMultiplier(f64);

impl SosMultiplier {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(SosMultiplier(value))
        } else {
            Err(Error::InvalidInput(format!(
                "SOS multiplier must be a finite value ≥ 0, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Only constant multipliers keep every constraint body quadratic.
pub fn validate_multiplier_degree(degree: u32) -> Result<()> {
    if degree == 0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "only degree-0 SOS multipliers are supported, got degree {degree}"
        )))
    }
}

fn bordered(corner: f64, edge: &DVector<f64>, body: &SymMatrix) -> SymMatrix {
    let n = body.dim();
    let mut g = DMatrix::zeros(n + 1, n + 1);
    g[(0, 0)] = corner;
    for i in 0..n {
        g[(0, i + 1)] = edge[i];
        g[(i + 1, 0)] = edge[i];
    }
    g.view_mut((1, 1), (n, n)).copy_from(body.as_matrix());
    SymMatrix::from_lower_fn(n + 1, |i, j| g[(i, j)])
}

fn check_dims(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} has dimension {got}, expected {want}"
        )))
    }
}

/// `[[c, qᵀ/2], [q/2, Q]]`
pub fn gram_of_quadratic(p: &QuadraticPolynomial) -> SymMatrix {
    bordered(p.constant, &(&p.lin * 0.5), &p.quad)
}

/// Gram matrix of `xᵀPx − l + σ·s(x)`. PSD certifies `{xᵀPx ≤ l} ⊆ {s ≥ 0}`.
pub fn containment_gram(
    p: &SymMatrix,
    l: f64,
    s: &QuadraticPolynomial,
    sigma: SosMultiplier,
) -> Result<SymMatrix> {
    containment_gram_with_margin(p, l, s, sigma, 0.0)
}

/// As [`containment_gram`] with `margin` subtracted from the constant entry.
pub fn containment_gram_with_margin(
    p: &SymMatrix,
    l: f64,
    s: &QuadraticPolynomial,
    sigma: SosMultiplier,
    margin: f64,
) -> Result<SymMatrix> {
    check_dims("safe-set polynomial", s.dim(), p.dim())?;
    let sg = sigma.value();
    Ok(bordered(
        sg * s.constant - l - margin,
        &(&s.lin * (0.5 * sg)),
        &(p + &(&s.quad * sg)),
    ))
}

/// Gram matrix of `u_max − t·xᵀMx − σ₂(l − xᵀPx)`. PSD certifies
/// `t·xᵀMx ≤ u_max` on `{xᵀPx ≤ l}`.
pub fn input_bound_gram(
    p: &SymMatrix,
    l: f64,
    m: &SymMatrix,
    t: f64,
    sigma2: SosMultiplier,
    u_max: f64,
) -> Result<SymMatrix> {
    check_dims("input-energy matrix", m.dim(), p.dim())?;
    let sg = sigma2.value();
    Ok(bordered(
        u_max - sg * l,
        &DVector::zeros(p.dim()),
        &(&(p * sg) - &(m * t)),
    ))
}
