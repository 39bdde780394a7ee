//! Cartesian lift of radial solutions: `rho(x) = rho(|x|)`,
//! `U(x) = u(|x|) x / |x|`, with first and second derivatives assembled
//! from the radial profiles.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{GridError, RadialGrid};
use crate::solver::FluidState;

const ORTHOGONALITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("point {index} has |x| = {radius}, outside [{a}, {r_max}]")]
    OutOfShell {
        index: usize,
        radius: f64,
        a: f64,
        r_max: f64,
    },
    #[error("point {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("matrix is not orthogonal: |H^T H - I| = {0:e}")]
    NotOrthogonal(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianSample {
    pub points: Vec<DVector<f64>>,
    pub rho: Vec<f64>,
    pub velocity: Vec<DVector<f64>>,
}

/// Derivatives at one point. `velocity_gradient[(i, j)]` is `dU^j/dx_i`;
/// `velocity_hessian[k][(i, j)]` is `d^2 U^k / dx_i dx_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianGradient {
    pub rho_gradient: DVector<f64>,
    pub velocity_gradient: DMatrix<f64>,
    pub velocity_hessian: Vec<DMatrix<f64>>,
}

impl CartesianGradient {
    pub fn divergence(&self) -> f64 {
        self.velocity_gradient.trace()
    }
}

fn check_points(grid: &RadialGrid, points: &[DVector<f64>]) -> Result<Vec<f64>, ReconstructError> {
    let dim = points.first().map_or(0, |p| p.len());
    points
        .iter()
        .enumerate()
        .map(|(index, x)| {
            if x.len() != dim {
                return Err(ReconstructError::Dimension {
                    index,
                    got: x.len(),
                    expected: dim,
                });
            }
            let radius = x.norm();
            if !(radius >= grid.a() && radius <= grid.r_max()) {
                return Err(ReconstructError::OutOfShell {
                    index,
                    radius,
                    a: grid.a(),
                    r_max: grid.r_max(),
                });
            }
            Ok(radius)
        })
        .collect()
}

pub fn to_cartesian(
    grid: &RadialGrid,
    state: &FluidState,
    points: &[DVector<f64>],
) -> Result<CartesianSample, ReconstructError> {
    let radii = check_points(grid, points)?;
    let mut rho = Vec::with_capacity(points.len());
    let mut velocity = Vec::with_capacity(points.len());
    for (x, &r) in points.iter().zip(&radii) {
        rho.push(grid.interpolate(&state.rho, r)?);
        let u = grid.interpolate(&state.u, r)?;
        velocity.push(x * (u / r));
    }
    Ok(CartesianSample {
        points: points.to_vec(),
        rho,
        velocity,
    })
}

pub fn cartesian_gradient(
    grid: &RadialGrid,
    state: &FluidState,
    points: &[DVector<f64>],
) -> Result<Vec<CartesianGradient>, ReconstructError> {
    let radii = check_points(grid, points)?;
    let rho_r = grid.ddr(&state.rho);
    let u_r = grid.ddr(&state.u);
    let u_rr = grid.d2dr2(&state.u);
    let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };

    points
        .iter()
        .zip(&radii)
        .map(|(x, &r)| {
            let d = x.len();
            let rr = grid.interpolate(&rho_r, r)?;
            let u = grid.interpolate(&state.u, r)?;
            let ur = grid.interpolate(&u_r, r)?;
            let urr = grid.interpolate(&u_rr, r)?;
            let r2 = r * r;
            let r3 = r2 * r;

            let rho_gradient = x * (rr / r);
            let velocity_gradient = DMatrix::from_fn(d, d, |i, j| {
                ur * x[i] * x[j] / r2 + u * (delta(i, j) * r2 - x[i] * x[j]) / r3
            });
            let velocity_hessian = (0..d)
                .map(|k| {
                    DMatrix::from_fn(d, d, |i, j| {
                        let xxx = x[i] * x[j] * x[k];
                        let sym = delta(i, j) * x[k] + delta(i, k) * x[j] + delta(j, k) * x[i];
                        urr * xxx / r3
                            + ur * (sym / r2 - 3.0 * xxx / (r2 * r2))
                            + u * (3.0 * xxx / (r3 * r2) - sym / r3)
                    })
                })
                .collect();
            Ok(CartesianGradient {
                rho_gradient,
                velocity_gradient,
                velocity_hessian,
            })
        })
        .collect()
}

/// `max |H^T U(Hx) - U(x)|` and `|rho(Hx) - rho(x)|` over `points`.
pub fn rotation_equivariance_error(
    grid: &RadialGrid,
    state: &FluidState,
    rotation: &DMatrix<f64>,
    points: &[DVector<f64>],
) -> Result<f64, ReconstructError> {
    let d = rotation.nrows();
    let defect = (rotation.transpose() * rotation - DMatrix::<f64>::identity(d, rotation.ncols())).norm();
    if !rotation.is_square() || defect > ORTHOGONALITY_TOL {
        return Err(ReconstructError::NotOrthogonal(defect));
    }
    let rotated: Vec<_> = points.iter().map(|x| rotation * x).collect();
    let base = to_cartesian(grid, state, points)?;
    let moved = to_cartesian(grid, state, &rotated)?;
    let mut worst: f64 = 0.0;
    for k in 0..points.len() {
        let back = rotation.transpose() * &moved.velocity[k];
        worst = worst.max((back - &base.velocity[k]).amax());
        worst = worst.max((moved.rho[k] - base.rho[k]).abs());
    }
    Ok(worst)
}

/// CSV with columns `x1..xd, rho, U1..Ud`.
pub fn write_cartesian_csv<W: Write>(sample: &CartesianSample, sink: &mut W) -> io::Result<()> {
    let d = sample.points.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("rho".into());
    header.extend((1..=d).map(|i| format!("U{i}")));
    writeln!(sink, "{}", header.join(","))?;
    for ((x, rho), u) in sample.points.iter().zip(&sample.rho).zip(&sample.velocity) {
        let row: Vec<String> = x
            .iter()
            .chain(std::iter::once(rho))
            .chain(u.iter())
            .map(|v| format!("{v:.16e}"))
            .collect();
        writeln!(sink, "{}", row.join(","))?;
    }
    Ok(())
}
