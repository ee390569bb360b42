//! Validated configuration types: physical constants, spatial grid, time
//! axis, and excitation description.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Cross-section area A = pi R^2.
///
/// Kept as a free function so the learnable-parameter path can mirror the
/// exact multiplication order and stay bit-identical with the ground truth.
#[inline]
pub fn section_area(radius: f64) -> f64 {
    PI * (radius * radius)
}

/// Area moment of inertia I = pi R^4 / 4, same ordering contract as
/// [`section_area`].
#[inline]
pub fn section_inertia(radius: f64) -> f64 {
    (PI / 4.0) * pow4(radius)
}

/// x^4 as ((x*x)*x)*x; the tape's integer-power primitive uses the same
/// left-to-right product chain.
#[inline]
pub fn pow4(x: f64) -> f64 {
    ((x * x) * x) * x
}

/// Physical constants of the string, θ = (ρ, R, T, E, η0, η1), plus the
/// derived quantities A, I and μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Volumetric density ρ [kg·m⁻³].
    pub rho: f64,
    /// String radius R [m].
    pub radius: f64,
    /// Tension T [N].
    pub tension: f64,
    /// Young's modulus E [Pa].
    pub youngs: f64,
    /// Frequency-independent damping η0 [s⁻¹].
    pub eta0: f64,
    /// Frequency-dependent damping η1 [m²·s⁻¹].
    pub eta1: f64,
}

impl PhysicalParams {
    /// Validates positivity and the string regime EA − T > 0.
    pub fn new(
        rho: f64,
        radius: f64,
        tension: f64,
        youngs: f64,
        eta0: f64,
        eta1: f64,
    ) -> Result<Self> {
        let p = PhysicalParams {
            rho,
            radius,
            tension,
            youngs,
            eta0,
            eta1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rho", self.rho),
            ("radius", self.radius),
            ("tension", self.tension),
            ("youngs", self.youngs),
            ("eta0", self.eta0),
            ("eta1", self.eta1),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "physical parameter {name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        if self.nonlinear_coeff_unscaled() <= 0.0 {
            return Err(Error::config(format!(
                "EA - T must be positive for the geometrically nonlinear string, got {}",
                self.nonlinear_coeff_unscaled()
            )));
        }
        Ok(())
    }

    /// Cross-section area A = πR² [m²].
    pub fn area(&self) -> f64 {
        section_area(self.radius)
    }

    /// Moment of inertia I = πR⁴/4 [m⁴].
    pub fn inertia(&self) -> f64 {
        section_inertia(self.radius)
    }

    /// Linear mass density μ = ρA [kg·m⁻¹].
    pub fn mu(&self) -> f64 {
        self.rho * self.area()
    }

    /// EA − T [N]; must be positive.
    pub fn nonlinear_coeff_unscaled(&self) -> f64 {
        self.youngs * self.area() - self.tension
    }

    /// Quartic energy coefficient (EA − T)/8.
    pub fn nonlinear_coeff(&self) -> f64 {
        self.nonlinear_coeff_unscaled() * 0.125
    }
}

/// Uniform spatial grid with N intervals over [0, l0]; the N−1 interior
/// nodes carry the degrees of freedom (simply-supported ends are implicit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Interval count N.
    pub n: usize,
    /// String length l0 [m].
    pub l0: f64,
}

impl GridSpec {
    pub fn new(n: usize, l0: f64) -> Result<Self> {
        let g = GridSpec { n, l0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::config(format!("grid needs N >= 4, got {}", self.n)));
        }
        if !(self.l0 > 0.0) || !self.l0.is_finite() {
            return Err(Error::config(format!(
                "string length must be positive, got {}",
                self.l0
            )));
        }
        Ok(())
    }

    /// Grid spacing h = l0 / N [m].
    pub fn h(&self) -> f64 {
        self.l0 / self.n as f64
    }

    /// Interior degrees of freedom, N − 1.
    pub fn interior(&self) -> usize {
        self.n - 1
    }
}

/// Sample rate and simulation duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Sample rate f_s [Hz].
    pub fs: f64,
    /// Simulated duration T_s [s].
    pub ts: f64,
}

impl TimeSpec {
    pub fn new(fs: f64, ts: f64) -> Result<Self> {
        let t = TimeSpec { fs, ts };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(Error::config(format!("fs must be positive, got {}", self.fs)));
        }
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::config(format!("ts must be positive, got {}", self.ts)));
        }
        Ok(())
    }

    /// Time step dt = 1/f_s [s].
    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    /// Number of integrator steps, round(ts·fs).
    pub fn step_count(&self) -> usize {
        (self.ts * self.fs).round() as usize
    }
}

/// Raised-cosine pluck applied at one interior node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    /// Peak force f_amp [N].
    pub f_amp: f64,
    /// Pluck duration T_e [s].
    pub t_e: f64,
    /// Excitation node index s_e, 1 ≤ s_e ≤ N−1.
    pub node_e: usize,
}

impl ExcitationSpec {
    pub fn new(f_amp: f64, t_e: f64, node_e: usize, grid: &GridSpec) -> Result<Self> {
        let e = ExcitationSpec { f_amp, t_e, node_e };
        e.validate(grid)?;
        Ok(e)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.f_amp > 0.0) || !self.f_amp.is_finite() {
            return Err(Error::config(format!(
                "excitation amplitude must be positive, got {}",
                self.f_amp
            )));
        }
        if !(self.t_e > 0.0) || !self.t_e.is_finite() {
            return Err(Error::config(format!(
                "excitation duration must be positive, got {}",
                self.t_e
            )));
        }
        if self.node_e < 1 || self.node_e > grid.n - 1 {
            return Err(Error::config(format!(
                "excitation node {} outside interior 1..={}",
                self.node_e,
                grid.n - 1
            )));
        }
        Ok(())
    }
}
