//! Uniform radial grid on `[a, R]` with second-order difference operators
//! and trapezoidal weighted quadrature.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs a > 0 and R > a, got a = {a}, R = {r_max}")]
    BadBounds { a: f64, r_max: f64 },
    #[error("grid needs at least {min} nodes, got {n}")]
    TooFewNodes { n: usize, min: usize },
    #[error("field `{label}` has {got} values, grid has {expected} nodes")]
    LengthMismatch { label: String, got: usize, expected: usize },
    #[error("field `{label}` has non-finite value {value} at node {node}")]
    NonFinite { label: String, node: usize, value: f64 },
    #[error("norm exponent p = {0} must lie in [1, inf]")]
    BadExponent(f64),
    #[error("radius {0} lies outside the grid")]
    OutOfRange(f64),
}

pub const MIN_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    a: f64,
    r_max: f64,
    dr: f64,
    nodes: Vec<f64>,
}

impl RadialGrid {
    pub fn new(a: f64, r_max: f64, n: usize) -> Result<Self, GridError> {
        if !(a > 0.0) || !(r_max > a) || !r_max.is_finite() {
            return Err(GridError::BadBounds { a, r_max });
        }
        if n < MIN_NODES {
            return Err(GridError::TooFewNodes { n, min: MIN_NODES });
        }
        let dr = (r_max - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| a + i as f64 * dr).collect();
        nodes[n - 1] = r_max;
        Ok(Self { a, r_max, dr, nodes })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Midpoint between node `i` and node `i + 1`.
    pub fn half(&self, i: usize) -> f64 {
        0.5 * (self.nodes[i] + self.nodes[i + 1])
    }

    /// Trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.nodes.len() {
            0.5 * self.dr
        } else {
            self.dr
        }
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&r| f(r)).collect()
    }

    /// `r^k` at every node.
    pub fn powers(&self, k: f64) -> Vec<f64> {
        self.nodes.iter().map(|r| r.powf(k)).collect()
    }

    /// First derivative: centered in the interior, one-sided second order at
    /// both ends.
    pub fn ddr(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        debug_assert_eq!(n, self.len());
        let h = self.dr;
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
        }
        // written in differences so constants give exactly zero
        out[0] = (4.0 * (f[1] - f[0]) - (f[2] - f[0])) / (2.0 * h);
        out[n - 1] = (4.0 * (f[n - 1] - f[n - 2]) - (f[n - 1] - f[n - 3])) / (2.0 * h);
        out
    }

    /// Second derivative: three-point stencil in the interior, four-point
    /// inward stencil at the ends.
    pub fn d2dr2(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        debug_assert_eq!(n, self.len());
        let h2 = self.dr * self.dr;
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
        }
        out[0] = (-5.0 * (f[1] - f[0]) + 4.0 * (f[2] - f[0]) - (f[3] - f[0])) / h2;
        out[n - 1] = (-5.0 * (f[n - 2] - f[n - 1]) + 4.0 * (f[n - 3] - f[n - 1]) - (f[n - 4] - f[n - 1])) / h2;
        out
    }

    /// Trapezoidal quadrature of `r^k f` over `[a, R]`.
    pub fn weighted_integral(&self, f: &[f64], k: f64) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        self.nodes
            .iter()
            .zip(f)
            .enumerate()
            .map(|(i, (r, v))| self.weight(i) * r.powf(k) * v)
            .sum()
    }

    /// `(int r^k |f|^p dr)^(1/p)`; `p = inf` is the plain sup-norm.
    pub fn weighted_norm(&self, f: &[f64], k: f64, p: f64) -> Result<f64, GridError> {
        if p.is_infinite() && p > 0.0 {
            return Ok(sup_norm(f));
        }
        if !(p >= 1.0) {
            return Err(GridError::BadExponent(p));
        }
        let powered: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
        Ok(self.weighted_integral(&powered, k).powf(1.0 / p))
    }

    /// Linear interpolation of nodal values at radius `r`.
    pub fn interpolate(&self, f: &[f64], r: f64) -> Result<f64, GridError> {
        let (i, w) = self.locate(r)?;
        Ok(if w == 0.0 {
            f[i]
        } else {
            (1.0 - w) * f[i] + w * f[i + 1]
        })
    }

    /// Cell index `i` and fractional offset `w` with `r = r_i + w dr`.
    pub fn locate(&self, r: f64) -> Result<(usize, f64), GridError> {
        let slack = 1e-12 * self.dr;
        if !(r >= self.a - slack && r <= self.r_max + slack) {
            return Err(GridError::OutOfRange(r));
        }
        let n = self.len();
        let x = ((r - self.a) / self.dr).max(0.0);
        let i = (x.floor() as usize).min(n - 2);
        let w = (x - i as f64).clamp(0.0, 1.0);
        Ok((i, w))
    }
}

pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Nodal values of one physical quantity. Values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    label: String,
    values: Vec<f64>,
}

impl Field {
    pub fn new(label: impl Into<String>, values: Vec<f64>, grid: &RadialGrid) -> Result<Self, GridError> {
        let label = label.into();
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                label,
                got: values.len(),
                expected: grid.len(),
            });
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { label, node, value });
        }
        Ok(Self { label, values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}
