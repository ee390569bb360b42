//! Discrete Hamiltonian, forces, dissipation and excitation of the
//! ground-truth nonlinear string (semi-discrete port-Hamiltonian form).

use crate::error::{Error, Result};
use crate::stencil;
use crate::types::{ExcitationSpec, GridSpec, PhysicalParams};

/// Discrete coefficient bundle consumed by the integrator. The ground truth
/// derives it from [`PhysicalParams`]; the learnable model rebuilds the same
/// quantities from its exposed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StringCoeffs {
    /// Interior degrees of freedom N − 1.
    pub m: usize,
    /// Grid spacing h [m].
    pub h: f64,
    /// Linear mass density μ [kg·m⁻¹].
    pub mu: f64,
    /// Tension T [N].
    pub tension: f64,
    /// Bending stiffness E·I [N·m²].
    pub ei: f64,
    /// Quartic energy coefficient (EA − T)/8 [N].
    pub nl_coeff: f64,
    /// Damping η0 [s⁻¹].
    pub eta0: f64,
    /// Damping η1 [m²·s⁻¹].
    pub eta1: f64,
}

/// Ground-truth string: validated parameters, grid, and the precomputed
/// stencil coefficients for K, R0 and M⁻¹.
#[derive(Debug, Clone)]
pub struct GroundTruthComponents {
    pub params: PhysicalParams,
    pub grid: GridSpec,
    coeffs: StringCoeffs,
}

impl GroundTruthComponents {
    pub fn new(params: PhysicalParams, grid: GridSpec) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        let coeffs = StringCoeffs {
            m: grid.interior(),
            h: grid.h(),
            mu: params.mu(),
            tension: params.tension,
            ei: params.youngs * params.inertia(),
            nl_coeff: params.nonlinear_coeff(),
            eta0: params.eta0,
            eta1: params.eta1,
        };
        Ok(GroundTruthComponents { params, grid, coeffs })
    }

    /// Raw coefficients, bypassing the physical-parameter validation. Lets
    /// tests and diagnostics build degenerate strings (ideal string with
    /// ei = 0, lossless, linear).
    pub fn from_raw_coeffs(grid: GridSpec, coeffs: StringCoeffs) -> Result<Self> {
        grid.validate()?;
        if coeffs.m != grid.interior() {
            return Err(Error::config("coefficient size does not match grid"));
        }
        // Placeholder params kept consistent where possible; only `coeffs`
        // participates in computations.
        let params = PhysicalParams {
            rho: 1.0,
            radius: 1.0,
            tension: coeffs.tension.max(f64::MIN_POSITIVE),
            youngs: 1.0,
            eta0: coeffs.eta0.max(f64::MIN_POSITIVE),
            eta1: coeffs.eta1.max(f64::MIN_POSITIVE),
        };
        Ok(GroundTruthComponents { params, grid, coeffs })
    }

    pub fn coeffs(&self) -> &StringCoeffs {
        &self.coeffs
    }

    fn check_len(&self, v: &[f64], op: &'static str) -> Result<()> {
        if v.len() != self.coeffs.m {
            return Err(Error::Shape {
                op,
                expected: self.coeffs.m,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Total discrete Hamiltonian H(q, p) ≥ 0 [J].
    pub fn hamiltonian(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        self.check_len(q, "hamiltonian.q")?;
        self.check_len(p, "hamiltonian.p")?;
        Ok(hamiltonian_raw(&self.coeffs, q, p))
    }

    /// Non-quadratic stretching energy H_nl(q) ≥ 0 [J].
    pub fn h_nl(&self, q: &[f64]) -> Result<f64> {
        self.check_len(q, "h_nl.q")?;
        Ok(h_nl_raw(self.coeffs.nl_coeff, self.coeffs.h, q))
    }

    /// Analytic gradient ∇_q H_nl.
    pub fn grad_h_nl(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_len(q, "grad_h_nl.q")?;
        let mut out = vec![0.0; q.len()];
        grad_h_nl_raw(self.coeffs.nl_coeff, self.coeffs.h, q, &mut out);
        Ok(out)
    }

    /// K q with K = h(−T·I + EI·D²)D²; equals ∇_q of the quadratic potential.
    pub fn stiffness_apply(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_len(q, "stiffness_apply.q")?;
        let mut out = vec![0.0; q.len()];
        let mut buf = StiffnessBuf::new(q.len());
        stiffness_apply_raw(&self.coeffs, q, &mut buf, &mut out);
        Ok(out)
    }

    /// Net damping term 2(η0·I − η1·D²) p that enters dp/dt with a minus sign.
    pub fn dissipation_apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p, "dissipation_apply.p")?;
        let d2p = stencil::d2(p, self.coeffs.h);
        Ok(p.iter()
            .zip(&d2p)
            .map(|(&pi, &di)| 2.0 * (self.coeffs.eta0 * pi - self.coeffs.eta1 * di))
            .collect())
    }

    /// ∂H/∂p = (h/μ) p.
    pub fn grad_p(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p, "grad_p.p")?;
        let c = self.coeffs.h / self.coeffs.mu;
        Ok(p.iter().map(|&x| c * x).collect())
    }
}

/// Raised-cosine pluck force at time t.
pub fn excitation_force(t: f64, e: &ExcitationSpec) -> f64 {
    if t < 0.0 || t > e.t_e {
        0.0
    } else {
        0.5 * e.f_amp * (1.0 - (std::f64::consts::PI * t / e.t_e).cos())
    }
}

/// Discrete Dirac input vector G_p = e_{s_e} / h over the interior nodes.
pub fn input_vector(e: &ExcitationSpec, grid: &GridSpec) -> Result<Vec<f64>> {
    e.validate(grid)?;
    let mut g = vec![0.0; grid.interior()];
    g[e.node_e - 1] = 1.0 / grid.h();
    Ok(g)
}

// ---------------------------------------------------------------------------
// Raw kernels shared with the tape's forward pass. Multiplication orders are
// part of the contract: the tape primitives reproduce them exactly.
// ---------------------------------------------------------------------------

/// x³ as (x·x)·x.
#[inline]
pub fn pow3(x: f64) -> f64 {
    (x * x) * x
}

pub fn hamiltonian_raw(c: &StringCoeffs, q: &[f64], p: &[f64]) -> f64 {
    let h = c.h;
    let kin = (h * stencil::dot(p, p)) / (2.0 * c.mu);
    let dq = stencil::d_minus(q, h);
    let pot_t = (c.tension / 2.0) * (h * stencil::dot(&dq, &dq));
    let d2q = stencil::d2(q, h);
    let pot_b = (c.ei / 2.0) * (h * stencil::dot(&d2q, &d2q));
    kin + pot_t + pot_b + h_nl_raw(c.nl_coeff, h, q)
}

/// Quartic energy over the first N−1 difference quotients:
/// H_nl = coeff · (h · Σ_{s=1}^{N-1} d_s⁴).
pub fn h_nl_raw(coeff: f64, h: f64, q: &[f64]) -> f64 {
    let m = q.len();
    let mut d = vec![0.0; m];
    stencil::d_minus_trunc_into(q, h, &mut d);
    let mut s = 0.0;
    for i in 0..m {
        s += crate::types::pow4(d[i]);
    }
    coeff * (h * s)
}

/// ∇_q of [`h_nl_raw`].
pub fn grad_h_nl_raw(coeff: f64, h: f64, q: &[f64], out: &mut [f64]) {
    let m = q.len();
    let mut d = vec![0.0; m];
    stencil::d_minus_trunc_into(q, h, &mut d);
    for i in 0..m {
        d[i] = pow3(d[i]);
    }
    let mut u = vec![0.0; m];
    stencil::d_minus_trunc_t_into(&d, h, &mut u);
    let fac = (4.0 * h) * coeff;
    for i in 0..m {
        out[i] = fac * u[i];
    }
}

/// Scratch for [`stiffness_apply_raw`].
#[derive(Debug, Clone)]
pub struct StiffnessBuf {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl StiffnessBuf {
    pub fn new(m: usize) -> Self {
        StiffnessBuf {
            a: vec![0.0; m],
            b: vec![0.0; m],
        }
    }
}

pub fn stiffness_apply_raw(c: &StringCoeffs, q: &[f64], buf: &mut StiffnessBuf, out: &mut [f64]) {
    stencil::d2_into(q, c.h, &mut buf.a);
    stencil::d2_into(&buf.a, c.h, &mut buf.b);
    for i in 0..q.len() {
        out[i] = c.h * (c.ei * buf.b[i] - c.tension * buf.a[i]);
    }
}
