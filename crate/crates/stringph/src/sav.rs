//! Explicit staggered scalar-auxiliary-variable time stepper with
//! trapezoidal damping and multiplicative drift rejection, plus the exact
//! per-step energy audit and a power-iteration stability estimate.
//!
//! Displacements live at half-integer times, momenta and the auxiliary ψ at
//! integer times. One step maps (q^{t-1/2}, p^t, ψ^t) to (q^{t+1/2}, p^{t+1},
//! ψ^{t+1}), with A = I + dt·Dmp, Dmp = η0 I − η1 D²:
//!
//!   1. q⁺ = q⁻ + (dt/μ) p
//!   2. g = ∇H_nl(q⁺) / √(2 H_nl(q⁺) + c0)
//!   3. p_lin = A⁻¹ [(I − dt·Dmp) p + dt(−(1/h) K q⁺ + G_p f)],  z = A⁻¹ g
//!   4. ψ_raw from the trapezoidal pairing ψ^{t+1} = ψ^t + g·(q^{t+3/2} −
//!      q^{t-1/2})/2 with the force −(1/h) ψ̄ g, ψ̄ = (ψ^t + ψ_raw)/2; the
//!      scalar implicitness has the closed form
//!      ψ_raw = (r − (β/2) ψ^t) / (1 + β/2),
//!      r = ψ^t + g·(q⁺ − q⁻)/2 + (dt/2μ) g·p_lin,
//!      β = (dt²/(2μh)) g·z
//!   5. p⁺ = p_lin − (dt/h) ψ̄ z
//!   6. drift rejection: ψ^{t+1} = (1 − λ) ψ_raw + λ √(2 H_nl(q⁺) + c0)
//!
//! The pairing makes the discrete energy kinetic + ½ q⁻ᵀK q⁺ + ½ψ² − c0/2
//! obey ΔE = −dissipated + injected exactly (λ = 0), so passivity holds by
//! construction under the linear CFL bound. Every stage is explicit and
//! non-iterative; both linear solves reuse one constant diagonally-dominant
//! tridiagonal factorization.

use crate::error::{Error, Result};
use crate::physics::{self, StringCoeffs};
use crate::stencil;
use crate::tridiag::TridiagFactor;

/// Non-quadratic energy and its gradient; the ground truth uses the analytic
/// quartic, the learned model plugs in its network.
pub trait NonlinearEnergy {
    fn value(&self, q: &[f64]) -> f64;
    fn grad_into(&self, q: &[f64], out: &mut [f64]);
}

/// The closed-form stretching energy coeff · (h Σ d_s⁴).
#[derive(Debug, Clone, Copy)]
pub struct AnalyticQuartic {
    pub coeff: f64,
    pub h: f64,
}

impl NonlinearEnergy for AnalyticQuartic {
    fn value(&self, q: &[f64]) -> f64 {
        physics::h_nl_raw(self.coeff, self.h, q)
    }

    fn grad_into(&self, q: &[f64], out: &mut [f64]) {
        physics::grad_h_nl_raw(self.coeff, self.h, q, out);
    }
}

impl<T: NonlinearEnergy + ?Sized> NonlinearEnergy for &T {
    fn value(&self, q: &[f64]) -> f64 {
        (**self).value(q)
    }
    fn grad_into(&self, q: &[f64], out: &mut [f64]) {
        (**self).grad_into(q, out)
    }
}

/// SAV regularization constant, drift-rejection gain and time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SavConfig {
    /// Regularization c0 [J]; keeps √(2H_nl + c0) away from zero.
    pub c0: f64,
    /// Drift-rejection gain λ ∈ [0, 1].
    pub lambda_dr: f64,
    /// Time step dt [s].
    pub dt: f64,
}

impl SavConfig {
    pub const DEFAULT_C0: f64 = 1e-12;
    pub const DEFAULT_LAMBDA: f64 = 1e-3;

    pub fn new(c0: f64, lambda_dr: f64, dt: f64) -> Result<Self> {
        if !(c0 > 0.0) {
            return Err(Error::config(format!("sav c0 must be positive, got {c0}")));
        }
        if !(0.0..=1.0).contains(&lambda_dr) {
            return Err(Error::config(format!(
                "drift-rejection gain must lie in [0,1], got {lambda_dr}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        Ok(SavConfig { c0, lambda_dr, dt })
    }

    pub fn with_dt(dt: f64) -> Result<Self> {
        Self::new(Self::DEFAULT_C0, Self::DEFAULT_LAMBDA, dt)
    }
}

/// Staggered state: displacement at t−1/2, momentum and auxiliary ψ at t.
/// With drift rejection active ψ tracks √(2 H_nl + c0) ≥ √c0.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredState {
    pub q_half: Vec<f64>,
    pub p_int: Vec<f64>,
    pub psi: f64,
    pub step_index: u64,
}

impl StaggeredState {
    /// Rest state; ψ starts at its defining value √c0.
    pub fn zero(m: usize, cfg: &SavConfig) -> Self {
        StaggeredState {
            q_half: vec![0.0; m],
            p_int: vec![0.0; m],
            psi: cfg.c0.sqrt(),
            step_index: 0,
        }
    }

    /// ψ initialized from its defining value at the given state.
    pub fn from_fields<E: NonlinearEnergy>(
        q_half: Vec<f64>,
        p_int: Vec<f64>,
        energy: &E,
        cfg: &SavConfig,
    ) -> Self {
        let psi = (2.0 * energy.value(&q_half) + cfg.c0).sqrt();
        StaggeredState {
            q_half,
            p_int,
            psi,
            step_index: 0,
        }
    }
}

/// Damping-solve coefficients shared by the plain stepper and the tape path:
/// (I ± dt·Dmp) = a·I + b·S in the neighbor-sum basis.
#[inline]
pub fn damping_coefficients(eta0: f64, eta1: f64, dt: f64, h: f64) -> (f64, f64, f64, f64) {
    let k2 = 2.0 * dt / (h * h);
    let k3 = dt / (h * h);
    let a_plus = (1.0 + dt * eta0) + eta1 * k2;
    let b_plus = eta1 * (-k3);
    let a_minus = (1.0 - dt * eta0) - eta1 * k2;
    let b_minus = eta1 * k3;
    (a_plus, b_plus, a_minus, b_minus)
}

/// Reusable stepper: owns the factorized damping matrix and scratch buffers.
#[derive(Debug, Clone)]
pub struct SavStepper {
    coeffs: StringCoeffs,
    cfg: SavConfig,
    solver: TridiagFactor,
    a_minus: f64,
    b_minus: f64,
    q_new: Vec<f64>,
    p_new: Vec<f64>,
    p_lin: Vec<f64>,
    z: Vec<f64>,
    force: Vec<f64>,
    g: Vec<f64>,
    kq: Vec<f64>,
    rhs: Vec<f64>,
    sbuf: Vec<f64>,
    stiff: physics::StiffnessBuf,
}

impl SavStepper {
    pub fn new(coeffs: StringCoeffs, cfg: SavConfig) -> Result<Self> {
        let (ap, bp, am, bm) = damping_coefficients(coeffs.eta0, coeffs.eta1, cfg.dt, coeffs.h);
        let solver = TridiagFactor::new(ap, bp, coeffs.m)?;
        let m = coeffs.m;
        Ok(SavStepper {
            coeffs,
            cfg,
            solver,
            a_minus: am,
            b_minus: bm,
            q_new: vec![0.0; m],
            p_new: vec![0.0; m],
            p_lin: vec![0.0; m],
            z: vec![0.0; m],
            force: vec![0.0; m],
            g: vec![0.0; m],
            kq: vec![0.0; m],
            rhs: vec![0.0; m],
            sbuf: vec![0.0; m],
            stiff: physics::StiffnessBuf::new(m),
        })
    }

    pub fn coeffs(&self) -> &StringCoeffs {
        &self.coeffs
    }

    pub fn config(&self) -> &SavConfig {
        &self.cfg
    }

    /// Advances one step in place. `g_p` is the input distribution vector
    /// (zeros when unforced) and `f_half` the force sample at t+1/2.
    /// Returns the force-average ψ̄ actually applied (for energy audits).
    pub fn step<E: NonlinearEnergy>(
        &mut self,
        state: &mut StaggeredState,
        f_half: f64,
        g_p: &[f64],
        energy: &E,
    ) -> Result<f64> {
        let m = self.coeffs.m;
        if state.q_half.len() != m || state.p_int.len() != m || g_p.len() != m {
            return Err(Error::Shape {
                op: "sav_step",
                expected: m,
                got: state.q_half.len().min(state.p_int.len()).min(g_p.len()),
            });
        }
        let dt = self.cfg.dt;
        let h = self.coeffs.h;
        let q0 = &state.q_half;
        let p0 = &state.p_int;

        // 1. drift
        let ratio = dt / self.coeffs.mu;
        for i in 0..m {
            self.q_new[i] = q0[i] + ratio * p0[i];
        }

        // 2. normalized gradient at the new displacement
        let h1 = energy.value(&self.q_new);
        let psi_def = (2.0 * h1 + self.cfg.c0).sqrt();
        energy.grad_into(&self.q_new, &mut self.g);
        for gi in self.g.iter_mut() {
            *gi /= psi_def;
        }

        // 3. linear momentum update and SAV direction solve
        physics::stiffness_apply_raw(&self.coeffs, &self.q_new, &mut self.stiff, &mut self.kq);
        let hin = -(1.0 / h);
        for i in 0..m {
            self.force[i] = hin * self.kq[i] + g_p[i] * f_half;
        }
        if m == 1 {
            self.sbuf[0] = 0.0;
        } else {
            self.sbuf[0] = p0[1];
            for i in 1..m - 1 {
                self.sbuf[i] = p0[i - 1] + p0[i + 1];
            }
            self.sbuf[m - 1] = p0[m - 2];
        }
        for i in 0..m {
            self.rhs[i] = (self.a_minus * p0[i] + self.b_minus * self.sbuf[i]) + dt * self.force[i];
        }
        self.solver.solve(&self.rhs, &mut self.p_lin);
        self.solver.solve(&self.g, &mut self.z);

        // 4. closed-form auxiliary update
        let mut g_dq = 0.0;
        for i in 0..m {
            g_dq += self.g[i] * (self.q_new[i] - q0[i]);
        }
        let mut g_plin = 0.0;
        for i in 0..m {
            g_plin += self.g[i] * self.p_lin[i];
        }
        let mut g_z = 0.0;
        for i in 0..m {
            g_z += self.g[i] * self.z[i];
        }
        let half_dt_mu = dt / (2.0 * self.coeffs.mu);
        let beta = ((dt * dt) / ((2.0 * self.coeffs.mu) * h)) * g_z;
        let r = (state.psi + 0.5 * g_dq) + half_dt_mu * g_plin;
        let half_beta = 0.5 * beta;
        let psi_raw = (r - half_beta * state.psi) / (1.0 + half_beta);
        let psi_bar = 0.5 * (state.psi + psi_raw);

        // 5. momentum with the averaged auxiliary force
        let dt_h = dt / h;
        for i in 0..m {
            self.p_new[i] = self.p_lin[i] - dt_h * (psi_bar * self.z[i]);
        }

        // 6. drift rejection toward the defining value
        let lam = self.cfg.lambda_dr;
        let psi_new = (1.0 - lam) * psi_raw + lam * psi_def;

        // instability detection before committing
        if !psi_new.is_finite() {
            return Err(Error::Instability {
                step: state.step_index,
                what: "auxiliary variable",
            });
        }
        for i in 0..m {
            if !self.q_new[i].is_finite() {
                return Err(Error::Instability {
                    step: state.step_index,
                    what: "displacement",
                });
            }
            if !self.p_new[i].is_finite() {
                return Err(Error::Instability {
                    step: state.step_index,
                    what: "momentum",
                });
            }
        }

        state.q_half.copy_from_slice(&self.q_new);
        state.p_int.copy_from_slice(&self.p_new);
        state.psi = psi_new;
        state.step_index += 1;
        Ok(psi_bar)
    }
}

/// Full recorded rollout: row t holds (q^{t-1/2}, p^t); forces hold f^{t+1/2}.
/// ψ and the applied force averages ψ̄ are retained in memory for exact
/// audits but are not part of the on-disk trajectory format.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub m: usize,
    /// Number of steps taken; q/p have steps+1 rows.
    pub steps: usize,
    /// Row-major (steps+1) × m.
    pub q: Vec<f64>,
    /// Row-major (steps+1) × m.
    pub p: Vec<f64>,
    /// Length steps.
    pub f: Vec<f64>,
    /// ψ^t per row, length steps+1.
    pub psi: Vec<f64>,
    /// ψ̄ applied in the momentum update of each step, length steps.
    pub psi_force: Vec<f64>,
}

impl Rollout {
    pub fn q_row(&self, t: usize) -> &[f64] {
        &self.q[t * self.m..(t + 1) * self.m]
    }

    pub fn p_row(&self, t: usize) -> &[f64] {
        &self.p[t * self.m..(t + 1) * self.m]
    }

    /// Time series of one interior node (0-based) from the q or p field.
    pub fn node_series(&self, node: usize, momentum: bool) -> Vec<f64> {
        let src = if momentum { &self.p } else { &self.q };
        (0..=self.steps).map(|t| src[t * self.m + node]).collect()
    }
}

/// Runs `forces.len()` steps from `initial`, recording every state.
pub fn rollout<E: NonlinearEnergy>(
    initial: StaggeredState,
    forces: &[f64],
    g_p: &[f64],
    coeffs: &StringCoeffs,
    cfg: &SavConfig,
    energy: &E,
) -> Result<Rollout> {
    let m = coeffs.m;
    let steps = forces.len();
    let mut stepper = SavStepper::new(*coeffs, *cfg)?;
    let mut state = initial;
    let mut rec = Rollout {
        m,
        steps,
        q: Vec::with_capacity((steps + 1) * m),
        p: Vec::with_capacity((steps + 1) * m),
        f: forces.to_vec(),
        psi: Vec::with_capacity(steps + 1),
        psi_force: Vec::with_capacity(steps),
    };
    rec.q.extend_from_slice(&state.q_half);
    rec.p.extend_from_slice(&state.p_int);
    rec.psi.push(state.psi);
    for &fh in forces {
        let psi_bar = stepper.step(&mut state, fh, g_p, energy)?;
        rec.q.extend_from_slice(&state.q_half);
        rec.p.extend_from_slice(&state.p_int);
        rec.psi.push(state.psi);
        rec.psi_force.push(psi_bar);
    }
    Ok(rec)
}

/// One row of the per-step energy balance.
#[derive(Debug, Clone, Copy)]
pub struct BalanceRow {
    /// Stored energy E^t before the step (leapfrog cross forms).
    pub stored: f64,
    /// Dissipated energy over the step, nonnegative.
    pub dissipated: f64,
    /// Energy injected by the input over the step.
    pub injected: f64,
    /// SAV bookkeeping term (ψ-energy change minus ψ-force work); identically
    /// zero for a purely quadratic Hamiltonian.
    pub sav_adjust: f64,
    /// ΔE + dissipated − injected − sav_adjust; round-off scale by
    /// construction of the scheme.
    pub residual: f64,
}

/// Audit summary over a rollout.
#[derive(Debug, Clone)]
pub struct EnergyAudit {
    pub rows: Vec<BalanceRow>,
    /// Stored energy after the last audited step.
    pub final_stored: f64,
    pub peak_stored: f64,
    pub max_abs_residual: f64,
    /// Largest single-step energy increase (0 when non-increasing throughout).
    pub max_increase: f64,
}

impl EnergyAudit {
    pub fn max_residual_relative(&self) -> f64 {
        if self.peak_stored > 0.0 {
            self.max_abs_residual / self.peak_stored
        } else {
            self.max_abs_residual
        }
    }
}

/// Verifies the exact discrete energy balance of a recorded rollout.
pub fn energy_audit<E: NonlinearEnergy>(
    rollout: &Rollout,
    g_p: &[f64],
    coeffs: &StringCoeffs,
    cfg: &SavConfig,
    energy: &E,
) -> Result<EnergyAudit> {
    let m = coeffs.m;
    if rollout.m != m || g_p.len() != m {
        return Err(Error::Shape {
            op: "energy_audit",
            expected: m,
            got: rollout.m,
        });
    }
    if rollout.steps < 2 {
        return Err(Error::config("energy audit needs at least two steps"));
    }
    let h = coeffs.h;
    let dt = cfg.dt;
    let mut stiff = physics::StiffnessBuf::new(m);
    let mut kq = vec![0.0; m];
    let mut gk = vec![0.0; m];

    let kinetic = |p: &[f64]| (h * stencil::dot(p, p)) / (2.0 * coeffs.mu);
    let stored_at = |k: usize,
                     stiff: &mut physics::StiffnessBuf,
                     kq: &mut Vec<f64>|
     -> f64 {
        let qa = rollout.q_row(k);
        let qb = rollout.q_row(k + 1);
        physics::stiffness_apply_raw(coeffs, qb, stiff, kq);
        let v = 0.5 * stencil::dot(qa, kq);
        let psi_sq = 0.5 * (rollout.psi[k] * rollout.psi[k]) - cfg.c0 / 2.0;
        kinetic(rollout.p_row(k)) + v + psi_sq
    };

    let mut rows = Vec::with_capacity(rollout.steps - 1);
    let mut peak: f64 = 0.0;
    let mut max_res: f64 = 0.0;
    let mut max_inc: f64 = 0.0;

    let mut e_prev = stored_at(0, &mut stiff, &mut kq);
    for k in 0..rollout.steps - 1 {
        let e_next = stored_at(k + 1, &mut stiff, &mut kq);
        let p0 = rollout.p_row(k);
        let p1 = rollout.p_row(k + 1);
        let q0 = rollout.q_row(k);
        let q1 = rollout.q_row(k + 1);
        let q2 = rollout.q_row(k + 2);

        // dissipated = (h dt / 2mu) sᵀ Dmp s, s = p0 + p1
        let s: Vec<f64> = p0.iter().zip(p1).map(|(a, b)| a + b).collect();
        let d2s = stencil::d2(&s, h);
        let mut quad = 0.0;
        for i in 0..m {
            quad += s[i] * (coeffs.eta0 * s[i] - coeffs.eta1 * d2s[i]);
        }
        let dissipated = (h * dt / (2.0 * coeffs.mu)) * quad;

        // injected = (h/2) f gpᵀ (Δq^k + Δq^{k+1})
        let mut gdq = 0.0;
        for i in 0..m {
            gdq += g_p[i] * ((q1[i] - q0[i]) + (q2[i] - q1[i]));
        }
        let injected = 0.5 * h * rollout.f[k] * gdq;

        // SAV bookkeeping: Δ(½ψ²) + ψ-force work; identically zero without
        // drift rejection. The normalized gradient is recomputed at the
        // step's q^{t+1/2} with the stepper's own arithmetic.
        let hval = energy.value(q1);
        let psi_def = (2.0 * hval + cfg.c0).sqrt();
        energy.grad_into(q1, &mut gk);
        for gi in gk.iter_mut() {
            *gi /= psi_def;
        }
        let d_psi_energy =
            0.5 * (rollout.psi[k + 1] * rollout.psi[k + 1] - rollout.psi[k] * rollout.psi[k]);
        let mut work = 0.0;
        for i in 0..m {
            work += gk[i] * ((q1[i] - q0[i]) + (q2[i] - q1[i]));
        }
        let psi_work = -0.5 * rollout.psi_force[k] * work;
        let sav_adjust = d_psi_energy + psi_work;

        let residual = (e_next - e_prev) + dissipated - injected - sav_adjust;
        peak = peak.max(e_prev.abs()).max(e_next.abs());
        max_res = max_res.max(residual.abs());
        max_inc = max_inc.max(e_next - e_prev);
        rows.push(BalanceRow {
            stored: e_prev,
            dissipated,
            injected,
            sav_adjust,
            residual,
        });
        e_prev = e_next;
    }

    Ok(EnergyAudit {
        rows,
        final_stored: e_prev,
        peak_stored: peak,
        max_abs_residual: max_res,
        max_increase: max_inc,
    })
}

/// Result of the CFL-style stability analysis.
#[derive(Debug, Clone, Copy)]
pub struct StabilityReport {
    /// Power-iteration estimate of λ_max of (1/(hμ)) K.
    pub lambda_max: f64,
    /// Largest admissible time step including the safety factor.
    pub dt_max: f64,
    pub safety: f64,
}

impl StabilityReport {
    pub fn admits(&self, dt: f64) -> bool {
        dt <= self.dt_max
    }
}

/// Estimates λ_max of (1/(hμ))K by power iteration and derives the scalar
/// leapfrog bound dt² λ_max < 4 with a safety factor.
pub fn stability_check(coeffs: &StringCoeffs, safety: f64) -> Result<StabilityReport> {
    if !(0.0 < safety && safety <= 1.0) {
        return Err(Error::config(format!(
            "stability safety factor must lie in (0,1], got {safety}"
        )));
    }
    let m = coeffs.m;
    let scale = 1.0 / (coeffs.h * coeffs.mu);
    let mut x: Vec<f64> = (0..m)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } + 1e-3 * (i as f64 / m as f64))
        .collect();
    let mut y = vec![0.0; m];
    let mut stiff = physics::StiffnessBuf::new(m);
    let mut lambda = 0.0f64;
    for _ in 0..20_000 {
        physics::stiffness_apply_raw(coeffs, &x, &mut stiff, &mut y);
        for v in y.iter_mut() {
            *v *= scale;
        }
        let xty = stencil::dot(&x, &y);
        let xtx = stencil::dot(&x, &x);
        let next = xty / xtx;
        let ynorm = stencil::dot(&y, &y).sqrt();
        if ynorm == 0.0 {
            return Err(Error::config("stiffness operator is zero"));
        }
        for i in 0..m {
            x[i] = y[i] / ynorm;
        }
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    if !(lambda > 0.0) {
        return Err(Error::config("stability estimate failed: nonpositive lambda"));
    }
    Ok(StabilityReport {
        lambda_max: lambda,
        dt_max: safety * 2.0 / lambda.sqrt(),
        safety,
    })
}
