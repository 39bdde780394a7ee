//! Physical constants, constitutive laws and variable transformations.
//!
//! The fluid is isentropic with pressure `P = A rho^gamma` and shear
//! viscosity `mu(rho) = alpha * rho`. The second viscosity `beta` is fixed
//! to zero. All quantities here are pointwise; field-level operations live
//! in [`crate::grid`] and [`crate::solver`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this density every quantity that divides by `rho` refuses to
/// evaluate.
pub const RHO_GUARD: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{quantity} evaluated at negative density {rho}")]
    NegativeDensity { quantity: &'static str, rho: f64 },
    #[error("{quantity} requires a positive argument, got {value}")]
    NonPositive { quantity: &'static str, value: f64 },
    #[error("density {rho:e} at node {node} (r = {r}) is below the positivity guard")]
    PositivityGuard { node: usize, r: f64, rho: f64 },
    #[error("field lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Physical constants of the radial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Entropy constant in `P = A rho^gamma`. Zero switches pressure off,
    /// which is only meaningful in the conservative formulation.
    pub a_entropy: f64,
    pub gamma: f64,
    /// Viscosity constant, `mu = alpha * rho`.
    pub alpha: f64,
    pub beta: f64,
    /// Spatial dimension, 2 or 3.
    pub dim: u32,
}

impl ModelParams {
    pub fn new(a_entropy: f64, gamma: f64, alpha: f64, dim: u32) -> Result<Self, ModelError> {
        let params = Self {
            a_entropy,
            gamma,
            alpha,
            beta: 0.0,
            dim,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, value, reason| Err(ModelError::InvalidParameter { name, value, reason });
        if !(self.a_entropy >= 0.0) || !self.a_entropy.is_finite() {
            return bad("A", self.a_entropy, "must be finite and non-negative");
        }
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return bad("gamma", self.gamma, "must exceed 1");
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha", self.alpha, "must be positive");
        }
        if self.beta != 0.0 {
            return bad("beta", self.beta, "only beta = 0 is supported");
        }
        if self.dim != 2 && self.dim != 3 {
            return bad("d", f64::from(self.dim), "dimension must be 2 or 3");
        }
        Ok(())
    }

    /// Geometric exponent `m = d - 1` of the radial measure `r^m dr`.
    pub fn m(&self) -> f64 {
        f64::from(self.dim - 1)
    }

    /// `gamma > 3/2`, the regime in which the sup-bound on the effective
    /// velocity closes for all time.
    pub fn global_regime(&self) -> bool {
        self.gamma > 1.5
    }

    pub fn validate_global(&self) -> Result<(), ModelError> {
        self.validate()?;
        if !self.global_regime() {
            return Err(ModelError::InvalidParameter {
                name: "gamma",
                value: self.gamma,
                reason: "global regime requires gamma > 3/2",
            });
        }
        Ok(())
    }

    /// Damping rate coefficient `A gamma / (2 alpha)` of the effective
    /// velocity equation.
    pub fn damping_coefficient(&self) -> f64 {
        self.a_entropy * self.gamma / (2.0 * self.alpha)
    }

    pub fn pressure(&self, rho: f64) -> Result<f64, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::NegativeDensity {
                quantity: "pressure",
                rho,
            });
        }
        Ok(self.a_entropy * rho.powf(self.gamma))
    }

    /// `phi = A gamma / (gamma - 1) rho^(gamma - 1)`.
    pub fn phi_of_rho(&self, rho: f64) -> Result<f64, ModelError> {
        if !(rho > 0.0) {
            return Err(ModelError::NonPositive {
                quantity: "phi_of_rho",
                value: rho,
            });
        }
        Ok(self.phi_scale() * rho.powf(self.gamma - 1.0))
    }

    pub fn rho_of_phi(&self, phi: f64) -> Result<f64, ModelError> {
        if !(phi > 0.0) {
            return Err(ModelError::NonPositive {
                quantity: "rho_of_phi",
                value: phi,
            });
        }
        let scale = self.phi_scale();
        if !(scale > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "A",
                value: self.a_entropy,
                reason: "phi cannot be inverted without pressure",
            });
        }
        // 1/(gamma-1) is rarely representable; carry its rounding error as
        // a first-order correction so large |ln rho| does not amplify it.
        let x = phi / scale;
        let g1 = self.gamma - 1.0;
        let p_hi = 1.0 / g1;
        let p_lo = (-p_hi).mul_add(g1, 1.0) / g1;
        Ok(x.powf(p_hi) * (p_lo * x.ln()).exp())
    }

    fn phi_scale(&self) -> f64 {
        self.a_entropy * self.gamma / (self.gamma - 1.0)
    }

    pub fn sound_speed(&self, rho: f64) -> Result<f64, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::NegativeDensity {
                quantity: "sound_speed",
                rho,
            });
        }
        Ok((self.a_entropy * self.gamma * rho.powf(self.gamma - 1.0)).sqrt())
    }

    /// Internal energy density `A/(gamma-1) rho^gamma`.
    pub fn internal_energy(&self, rho: f64) -> f64 {
        self.a_entropy / (self.gamma - 1.0) * rho.powf(self.gamma)
    }

    /// `v = u + 2 alpha rho_r / rho` given a precomputed `rho_r`.
    ///
    /// `rho_r` is expected to come from the grid derivative of `rho`; the
    /// function does no differencing of its own.
    pub fn effective_velocity(&self, r: &[f64], rho: &[f64], rho_r: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        if rho.len() != u.len() || rho.len() != rho_r.len() || r.len() != rho.len() {
            return Err(ModelError::LengthMismatch(rho.len(), u.len()));
        }
        rho.iter()
            .zip(rho_r)
            .zip(u)
            .enumerate()
            .map(|(i, ((&rho, &drho), &u))| {
                if !(rho >= RHO_GUARD) {
                    return Err(ModelError::PositivityGuard { node: i, r: r[i], rho });
                }
                Ok(u + 2.0 * self.alpha * drho / rho)
            })
            .collect()
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            a_entropy: 1.0,
            gamma: 2.0,
            alpha: 1.0,
            beta: 0.0,
            dim: 3,
        }
    }
}

/// How the viscous term of the momentum equation is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViscousAssembly {
    /// `2 alpha (rho (u_r + m u / r))_r - 2 alpha m rho_r u / r`.
    #[default]
    Lame,
    /// `(h (w_r + w / r))_r - h_r w / r`, the radial form of `div(h grad W)`
    /// in the plane: unit coefficient, one geometric dimension.
    ShallowGrad,
}

impl ViscousAssembly {
    /// Returns `(coefficient, geometric exponent)` of the assembled operator.
    pub fn coefficients(self, params: &ModelParams) -> (f64, f64) {
        match self {
            ViscousAssembly::Lame => (2.0 * params.alpha, params.m()),
            ViscousAssembly::ShallowGrad => (1.0, 1.0),
        }
    }
}

/// Viscous shallow-water models, each of which is the radial system with
/// fixed constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShallowVariant {
    /// `div(h D(W))`
    #[serde(rename = "div-hd")]
    DivHD,
    /// `div(2h D(W))`
    #[serde(rename = "div2-hd")]
    Div2HD,
    /// `div(h grad W)`
    DivHGrad,
}

impl ShallowVariant {
    pub const ALL: [ShallowVariant; 3] = [Self::DivHD, Self::Div2HD, Self::DivHGrad];

    pub fn params(self) -> ModelParams {
        let alpha = match self {
            ShallowVariant::DivHD | ShallowVariant::DivHGrad => 0.5,
            ShallowVariant::Div2HD => 1.0,
        };
        // P = h^2
        ModelParams {
            a_entropy: 1.0,
            gamma: 2.0,
            alpha,
            beta: 0.0,
            dim: 2,
        }
    }

    pub fn assembly(self) -> ViscousAssembly {
        match self {
            ShallowVariant::DivHGrad => ViscousAssembly::ShallowGrad,
            _ => ViscousAssembly::Lame,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ShallowVariant::DivHD => "div-hd",
            ShallowVariant::Div2HD => "div2-hd",
            ShallowVariant::DivHGrad => "div-h-grad",
        }
    }
}

pub fn variant_params(variant: ShallowVariant) -> ModelParams {
    variant.params()
}
