//! Box geometry and boundary conditions.
//!
//! The domain is the centered cube Λ = [-L/2, L/2]^d. Single-particle motion
//! is Brownian with generator ½Δ, killed, reflected, or wrapped at the walls
//! according to the boundary condition; `Free` means whole-space motion with
//! positions merely read off inside the box.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition on the walls of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bc {
    Dirichlet,
    Neumann,
    Periodic,
    Free,
}

impl Bc {
    pub const ALL: [Bc; 4] = [Bc::Dirichlet, Bc::Neumann, Bc::Periodic, Bc::Free];

    pub fn as_str(self) -> &'static str {
        match self {
            Bc::Dirichlet => "dirichlet",
            Bc::Neumann => "neumann",
            Bc::Periodic => "periodic",
            Bc::Free => "free",
        }
    }

    /// Smallest eigenvalue of -½Δ on the unit box in dimension d.
    pub fn ground_energy_unit_box(self, d: u32) -> f64 {
        match self {
            Bc::Dirichlet => d as f64 * std::f64::consts::PI.powi(2) / 2.0,
            Bc::Neumann | Bc::Periodic => 0.0,
            Bc::Free => 0.0,
        }
    }
}

impl fmt::Display for Bc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" | "dir" => Ok(Bc::Dirichlet),
            "neumann" | "neu" => Ok(Bc::Neumann),
            "periodic" | "per" => Ok(Bc::Periodic),
            "free" => Ok(Bc::Free),
            other => Err(Error::UnsupportedBoundary(other.to_string())),
        }
    }
}

/// A d-dimensional box of side L with a boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bc: Bc,
    pub d: u32,
    pub l: f64,
}

impl Geometry {
    pub fn new(bc: Bc, d: u32, l: f64) -> Result<Self> {
        if d == 0 || d > 8 {
            return Err(Error::InvalidArgument(format!(
                "dimension must be in 1..=8, got {d}"
            )));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box side must be positive and finite, got {l}"
            )));
        }
        Ok(Geometry { bc, d, l })
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    /// Checks that every coordinate of x lies in [-L/2, L/2].
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d as usize {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, geometry is {}-dimensional",
                x.len(),
                self.d
            )));
        }
        let half = self.l / 2.0;
        for (i, &xi) in x.iter().enumerate() {
            if !(xi >= -half && xi <= half) {
                return Err(Error::OutsideBox {
                    coord: i,
                    value: xi,
                    half_side: half,
                });
            }
        }
        Ok(())
    }

    /// Smallest single-particle eigenvalue βλ₁ after rescaling to side L,
    /// at inverse temperature β (per unit diffusion time: λ₁(L) = λ₁(1)/L²).
    pub fn ground_energy(&self, beta: f64) -> f64 {
        self.bc.ground_energy_unit_box(self.d) * beta / (self.l * self.l)
    }
}
