//! The two trainable systems: StringPHNN (learned physical coefficients and
//! learned nonlinear energy stepped by the SAV integrator) and the black-box
//! baseline MLP.
//!
//! The StringPHNN tape step reproduces the plain integrator's arithmetic
//! operation for operation, so a model at ground-truth parameters with the
//! analytic energy is the reference simulator, bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::baseline::{BaselineIds, BaselineNet};
use crate::nn::energy::{EnergyNetIds, EnergyNetwork};
use crate::nn::tape::{Tape, TensorId};
use crate::nn::{Shape, Tensor};
use crate::physics::StringCoeffs;
use crate::sav::{AnalyticQuartic, NonlinearEnergy, SavConfig};
use crate::stencil;
use crate::types::{section_area, section_inertia, GridSpec};

pub const PHI_NAMES: [&str; 6] = ["rho", "radius", "tension", "youngs", "eta0", "eta1"];

/// Log-space physical parameters φ = ln θ; exposure by exponentiation keeps
/// every θ strictly positive along any optimizer trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnablePhysical {
    /// Vector(6): ln(ρ, R, T, E, η0, η1).
    pub phi: Tensor,
}

impl LearnablePhysical {
    pub fn from_values(values: &[f64; 6]) -> Result<Self> {
        for (name, &v) in PHI_NAMES.iter().zip(values) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "learnable parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(LearnablePhysical {
            phi: Tensor::vector(values.iter().map(|v| v.ln()).collect()),
        })
    }

    /// Exposed θ = exp(φ) in [`PHI_NAMES`] order.
    pub fn exposed(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = self.phi.data[i].exp();
        }
        out
    }
}

/// The non-quadratic Hamiltonian the model steps with: the closed-form
/// quartic driven by the exposed θ (oracle configuration) or the learned
/// network.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyModel {
    Analytic,
    Network(EnergyNetwork),
}

/// Runtime energy handle for plain rollouts.
pub enum ModelEnergy<'a> {
    Analytic(AnalyticQuartic),
    Network(&'a EnergyNetwork),
}

impl NonlinearEnergy for ModelEnergy<'_> {
    fn value(&self, q: &[f64]) -> f64 {
        match self {
            ModelEnergy::Analytic(a) => a.value(q),
            ModelEnergy::Network(n) => n.value(q),
        }
    }

    fn grad_into(&self, q: &[f64], out: &mut [f64]) {
        match self {
            ModelEnergy::Analytic(a) => a.grad_into(q, out),
            ModelEnergy::Network(n) => n.grad_into(q, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StringPHNN {
    pub physical: LearnablePhysical,
    pub energy: EnergyModel,
    pub grid: GridSpec,
    pub sav: SavConfig,
}

impl StringPHNN {
    pub fn new(
        physical: LearnablePhysical,
        energy: EnergyModel,
        grid: GridSpec,
        sav: SavConfig,
    ) -> Self {
        StringPHNN {
            physical,
            energy,
            grid,
            sav,
        }
    }

    /// Discrete coefficients from the exposed θ; the arithmetic matches
    /// [`crate::physics::GroundTruthComponents::new`] exactly.
    pub fn coeffs(&self) -> StringCoeffs {
        let [rho, radius, tension, youngs, eta0, eta1] = self.physical.exposed();
        let area = section_area(radius);
        StringCoeffs {
            m: self.grid.interior(),
            h: self.grid.h(),
            mu: rho * area,
            tension,
            ei: youngs * section_inertia(radius),
            nl_coeff: (youngs * area - tension) * 0.125,
            eta0,
            eta1,
        }
    }

    /// Plain energy handle for inference rollouts.
    pub fn model_energy(&self) -> ModelEnergy<'_> {
        match &self.energy {
            EnergyModel::Analytic => {
                let c = self.coeffs();
                ModelEnergy::Analytic(AnalyticQuartic {
                    coeff: c.nl_coeff,
                    h: c.h,
                })
            }
            EnergyModel::Network(net) => ModelEnergy::Network(net),
        }
    }

    /// Names of the trainable tensors in the canonical order shared by the
    /// optimizer, checkpoints and gradient collection.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = vec!["phi".to_string()];
        if let EnergyModel::Network(net) = &self.energy {
            names.push("energy.kernel".to_string());
            for l in 0..net.weights.len() {
                names.push(format!("energy.w{l}"));
                names.push(format!("energy.b{l}"));
            }
        }
        names
    }

    pub fn trainable_tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = vec![&self.physical.phi];
        if let EnergyModel::Network(net) = &self.energy {
            out.push(&net.kernel);
            for l in 0..net.weights.len() {
                out.push(&net.weights[l]);
                out.push(&net.biases[l]);
            }
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.physical.phi];
        if let EnergyModel::Network(net) = &mut self.energy {
            out.push(&mut net.kernel);
            for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
                out.push(w);
                out.push(b);
            }
        }
        out
    }
}

/// Scalar-node bundle for the exposed θ and the damping-solve coefficients,
/// built once per tape.
pub struct PhnnIds {
    pub phi: TensorId,
    pub energy: Option<EnergyNetIds>,
    tension: TensorId,
    ei: TensorId,
    nl_coeff: TensorId,
    a_plus: TensorId,
    b_plus: TensorId,
    a_minus: TensorId,
    b_minus: TensorId,
    ratio: TensorId,
    half_dt_mu: TensorId,
    beta_pre: TensorId,
}

/// Output handles of one recorded step.
pub struct PhnnStepOut {
    pub q_next: TensorId,
    pub p_next: TensorId,
    pub psi_next: TensorId,
}

/// How the step obtains ψ^t.
pub enum PsiSource {
    /// Recompute the defining value √(2 H(q^{t-1/2}) + c0) on the tape
    /// (teacher forcing; gradients flow through it).
    Defining,
    /// Use a propagated value (recursive evaluation, step-equality tests).
    Value(f64),
}

impl StringPHNN {
    /// Registers φ, the energy network, and the derived scalar graph.
    pub fn tape_register(&self, tape: &mut Tape) -> PhnnIds {
        let dt = self.sav.dt;
        let h = self.grid.h();
        let phi = tape.leaf(self.physical.phi.clone());
        let energy = match &self.energy {
            EnergyModel::Network(net) => Some(net.register(tape)),
            EnergyModel::Analytic => None,
        };

        let scalar_at = |tape: &mut Tape, i: usize| {
            let s = tape.slice(phi, i, 1);
            let s = tape.reshape(s, Shape::Scalar);
            tape.exp(s)
        };
        let rho = scalar_at(tape, 0);
        let radius = scalar_at(tape, 1);
        let tension = scalar_at(tape, 2);
        let youngs = scalar_at(tape, 3);
        let eta0 = scalar_at(tape, 4);
        let eta1 = scalar_at(tape, 5);

        let r2 = tape.powi(radius, 2);
        let area = tape.scale(r2, std::f64::consts::PI);
        let mu = tape.smul(rho, area);
        let r4 = tape.powi(radius, 4);
        let inertia = tape.scale(r4, std::f64::consts::PI / 4.0);
        let ei = tape.smul(youngs, inertia);
        let ea = tape.smul(youngs, area);
        let eamt = tape.sub(ea, tension);
        let nl_coeff = tape.scale(eamt, 0.125);

        // damping coefficients, mirroring sav::damping_coefficients
        let k2 = 2.0 * dt / (h * h);
        let k3 = dt / (h * h);
        let t1 = tape.scale(eta0, dt);
        let t1 = tape.add_const(t1, 1.0);
        let t2 = tape.scale(eta1, k2);
        let a_plus = tape.add(t1, t2);
        let b_plus = tape.scale(eta1, -k3);
        let u1 = tape.scale(eta0, -dt);
        let u1 = tape.add_const(u1, 1.0);
        let u2 = tape.scale(eta1, k2);
        let a_minus = tape.sub(u1, u2);
        let b_minus = tape.scale(eta1, k3);

        let dt_leaf = tape.leaf_scalar(dt);
        let ratio = tape.sdiv(dt_leaf, mu);
        let two_mu = tape.scale(mu, 2.0);
        let half_dt_mu = tape.sdiv(dt_leaf, two_mu);
        let dt2_leaf = tape.leaf_scalar(dt * dt);
        let den = tape.scale(two_mu, h);
        let beta_pre = tape.sdiv(dt2_leaf, den);

        PhnnIds {
            phi,
            energy,
            tension,
            ei,
            nl_coeff,
            a_plus,
            b_plus,
            a_minus,
            b_minus,
            ratio,
            half_dt_mu,
            beta_pre,
        }
    }

    fn tape_energy(
        &self,
        tape: &mut Tape,
        ids: &PhnnIds,
        q: TensorId,
        with_grad: bool,
    ) -> (TensorId, Option<TensorId>) {
        match &self.energy {
            EnergyModel::Network(net) => {
                let e = ids.energy.as_ref().expect("network ids registered");
                if with_grad {
                    let (h, g) = net.tape_value_grad(tape, e, q);
                    (h, Some(g))
                } else {
                    (net.tape_value(tape, e, q), None)
                }
            }
            EnergyModel::Analytic => {
                let h = self.grid.h();
                let d = tape.d_minus_trunc(q, h);
                let p4 = tape.powi(d, 4);
                let s = tape.sum(p4);
                let hs = tape.scale(s, h);
                let val = tape.smul(ids.nl_coeff, hs);
                if !with_grad {
                    return (val, None);
                }
                let w = tape.powi(d, 3);
                let u = tape.d_minus_trunc_t(w, h);
                let fac = tape.scale(ids.nl_coeff, 4.0 * h);
                let grad = tape.smul(fac, u);
                (val, Some(grad))
            }
        }
    }

    /// Records one full SAV step on the tape. `f_half` is the force sample
    /// and `node_e` the 1-based excitation node; gradients flow to φ and all
    /// network parameters.
    pub fn tape_step(
        &self,
        tape: &mut Tape,
        ids: &PhnnIds,
        q0: &[f64],
        p0: &[f64],
        psi0: PsiSource,
        f_half: f64,
        node_e: usize,
    ) -> PhnnStepOut {
        let m = self.grid.interior();
        debug_assert_eq!(q0.len(), m);
        debug_assert_eq!(p0.len(), m);
        let h = self.grid.h();
        let dt = self.sav.dt;
        let c0 = self.sav.c0;

        let q0_id = tape.leaf_vector(q0);
        let p0_id = tape.leaf_vector(p0);

        let psi_in = match psi0 {
            PsiSource::Value(v) => tape.leaf_scalar(v),
            PsiSource::Defining => {
                let (h0, _) = self.tape_energy(tape, ids, q0_id, false);
                let s = tape.scale(h0, 2.0);
                let s = tape.add_const(s, c0);
                tape.sqrt(s)
            }
        };

        // 1. drift
        let rp = tape.smul(ids.ratio, p0_id);
        let q1 = tape.add(q0_id, rp);

        // 2. normalized gradient at q^{t+1/2}
        let (h1, grad) = self.tape_energy(tape, ids, q1, true);
        let grad = grad.expect("gradient requested");
        let s = tape.scale(h1, 2.0);
        let s = tape.add_const(s, c0);
        let psi_def = tape.sqrt(s);
        let g = tape.sdiv(grad, psi_def);

        // 3. linear momentum update and SAV direction solve
        let a = tape.d2(q1, h);
        let b = tape.d2(a, h);
        let t1 = tape.smul(ids.ei, b);
        let t2 = tape.smul(ids.tension, a);
        let sub = tape.sub(t1, t2);
        let kq = tape.scale(sub, h);
        let hin = -(1.0 / h);
        let fk = tape.scale(kq, hin);
        let mut gpf = vec![0.0; m];
        gpf[node_e - 1] = (1.0 / h) * f_half;
        let gpf_id = tape.leaf_vector(&gpf);
        let force = tape.add(fk, gpf_id);

        let sp = tape.neighbor_sum(p0_id);
        let w1 = tape.smul(ids.a_minus, p0_id);
        let w2 = tape.smul(ids.b_minus, sp);
        let w12 = tape.add(w1, w2);
        let fdt = tape.scale(force, dt);
        let rhs = tape.add(w12, fdt);
        let p_lin = tape.tridiag_solve(ids.a_plus, ids.b_plus, rhs);
        let z = tape.tridiag_solve(ids.a_plus, ids.b_plus, g);

        // 4. closed-form auxiliary update
        let dq = tape.sub(q1, q0_id);
        let g_dq = tape.dot(g, dq);
        let g_plin = tape.dot(g, p_lin);
        let g_z = tape.dot(g, z);
        let beta = tape.smul(ids.beta_pre, g_z);
        let half_gdq = tape.scale(g_dq, 0.5);
        let r1 = tape.add(psi_in, half_gdq);
        let r2 = tape.smul(ids.half_dt_mu, g_plin);
        let r = tape.add(r1, r2);
        let half_beta = tape.scale(beta, 0.5);
        let hb_psi = tape.smul(half_beta, psi_in);
        let num = tape.sub(r, hb_psi);
        let den = tape.add_const(half_beta, 1.0);
        let psi_raw = tape.sdiv(num, den);
        let pr = tape.add(psi_in, psi_raw);
        let psi_bar = tape.scale(pr, 0.5);

        // 5. momentum with the averaged auxiliary force
        let pz = tape.smul(psi_bar, z);
        let pz = tape.scale(pz, dt / h);
        let p1 = tape.sub(p_lin, pz);

        // 6. drift rejection
        let lam = self.sav.lambda_dr;
        let d1 = tape.scale(psi_raw, 1.0 - lam);
        let d2v = tape.scale(psi_def, lam);
        let psi1 = tape.add(d1, d2v);

        PhnnStepOut {
            q_next: q1,
            p_next: p1,
            psi_next: psi1,
        }
    }
}

// ---------------------------------------------------------------------------
// Baseline step
// ---------------------------------------------------------------------------

/// Assembles the baseline input vector (q, p, f, s_e/N).
pub fn baseline_input(q: &[f64], p: &[f64], f_half: f64, node_e: usize, n: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * q.len() + 2);
    x.extend_from_slice(q);
    x.extend_from_slice(p);
    x.push(f_half);
    x.push(node_e as f64 / n as f64);
    x
}

/// Plain baseline step: one MLP forward producing the next staggered pair.
pub fn baseline_step(
    net: &BaselineNet,
    q: &[f64],
    p: &[f64],
    f_half: f64,
    node_e: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let m = q.len();
    let input = baseline_input(q, p, f_half, node_e, n);
    let mut out = vec![0.0; net.out_dim];
    net.forward(&input, &mut out);
    (out[..m].to_vec(), out[m..].to_vec())
}

/// Tape baseline step returning (q_next, p_next) handles.
pub fn baseline_tape_step(
    net: &BaselineNet,
    tape: &mut Tape,
    ids: &BaselineIds,
    q: &[f64],
    p: &[f64],
    f_half: f64,
    node_e: usize,
    n: usize,
) -> (TensorId, TensorId) {
    let m = q.len();
    let input = baseline_input(q, p, f_half, node_e, n);
    let tin = tape.leaf_vector(&input);
    let out = net.tape_forward(tape, ids, tin);
    let qn = tape.slice(out, 0, m);
    let pn = tape.slice(out, m, m);
    (qn, pn)
}

// ---------------------------------------------------------------------------
// Parameter reporting
// ---------------------------------------------------------------------------

/// One named physical quantity with optional ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub value: f64,
    pub truth: Option<f64>,
    pub rel_abs_error: Option<f64>,
}

/// Exposed parameters plus derived composites, with relative absolute errors
/// when a ground truth is supplied.
pub fn parameter_report(
    model: &StringPHNN,
    truth: Option<&crate::types::PhysicalParams>,
) -> Vec<ReportEntry> {
    let [rho, radius, tension, youngs, eta0, eta1] = model.physical.exposed();
    let mu = rho * section_area(radius);
    let inertia = section_inertia(radius);
    let nl = match &model.energy {
        EnergyModel::Analytic => model.coeffs().nl_coeff,
        EnergyModel::Network(net) => {
            extract_quartic_coeff(net, model.grid.interior(), model.grid.h(), 1e-2)
        }
    };

    let values = [
        ("rho", rho),
        ("radius", radius),
        ("mu", mu),
        ("youngs", youngs),
        ("tension", tension),
        ("inertia", inertia),
        ("nl_coeff", nl),
        ("eta0", eta0),
        ("eta1", eta1),
    ];
    let truths: Option<Vec<f64>> = truth.map(|t| {
        vec![
            t.rho,
            t.radius,
            t.mu(),
            t.youngs,
            t.tension,
            t.inertia(),
            t.nonlinear_coeff(),
            t.eta0,
            t.eta1,
        ]
    });

    values
        .iter()
        .enumerate()
        .map(|(i, &(name, value))| {
            let tv = truths.as_ref().map(|t| t[i]);
            ReportEntry {
                name: name.to_string(),
                value,
                truth: tv,
                rel_abs_error: tv.map(|t| (value - t).abs() / t.abs()),
            }
        })
        .collect()
}

/// Least-squares extraction of the quartic coefficient of a learned energy
/// along the first three mode shapes: fits y = d_k α² + c B_k α⁴ per mode
/// (even part only, constant removed) and returns the shared c.
pub fn extract_quartic_coeff<E: NonlinearEnergy>(energy: &E, m: usize, h: f64, amp: f64) -> f64 {
    const MODES: usize = 3;
    const AMPS: usize = 8;
    let n = m + 1;
    let unknowns = MODES + 1;

    let mut ata = vec![vec![0.0; unknowns]; unknowns];
    let mut atb = vec![0.0; unknowns];
    let e0 = energy.value(&vec![0.0; m]);

    for k in 1..=MODES {
        let v: Vec<f64> = (1..=m)
            .map(|s| (std::f64::consts::PI * k as f64 * s as f64 / n as f64).sin())
            .collect();
        let mut d = vec![0.0; m];
        stencil::d_minus_trunc_into(&v, h, &mut d);
        let bk: f64 = h * d.iter().map(|&x| crate::types::pow4(x)).sum::<f64>();

        for j in 1..=AMPS {
            let alpha = amp * j as f64 / AMPS as f64;
            let qp: Vec<f64> = v.iter().map(|&x| alpha * x).collect();
            let qm: Vec<f64> = v.iter().map(|&x| -alpha * x).collect();
            let y = 0.5 * (energy.value(&qp) + energy.value(&qm)) - e0;

            let mut row = vec![0.0; unknowns];
            row[k - 1] = alpha * alpha;
            row[MODES] = alpha.powi(4) * bk;
            for a in 0..unknowns {
                for b in 0..unknowns {
                    ata[a][b] += row[a] * row[b];
                }
                atb[a] += row[a] * y;
            }
        }
    }

    solve_dense(&mut ata, &mut atb);
    atb[MODES]
}

/// In-place Gaussian elimination with partial pivoting for the tiny
/// normal-equation systems above; solution lands in `b`.
pub(crate) fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / d;
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col][c] * b[c];
        }
        b[col] = acc / a[col][col];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::GroundTruthComponents;
    use crate::sav::{rollout, SavStepper, StaggeredState};
    use crate::types::PhysicalParams;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn desk_params() -> PhysicalParams {
        PhysicalParams::new(8000.0, 4.0018e-4, 60.0, 2e11, 0.9, 4e-4).unwrap()
    }

    fn model_at(params: &PhysicalParams, grid: GridSpec, energy: EnergyModel) -> StringPHNN {
        let phys = LearnablePhysical::from_values(&[
            params.rho,
            params.radius,
            params.tension,
            params.youngs,
            params.eta0,
            params.eta1,
        ])
        .unwrap();
        let sav = SavConfig::with_dt(1.0 / 16000.0).unwrap();
        StringPHNN::new(phys, energy, grid, sav)
    }

    fn randv(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
    }

    #[test]
    fn exposed_parameters_are_positive_and_roundtrip() {
        let p = desk_params();
        let lp = LearnablePhysical::from_values(&[
            p.rho, p.radius, p.tension, p.youngs, p.eta0, p.eta1,
        ])
        .unwrap();
        let exposed = lp.exposed();
        for (i, &v) in exposed.iter().enumerate() {
            assert!(v > 0.0);
            let orig = [p.rho, p.radius, p.tension, p.youngs, p.eta0, p.eta1][i];
            assert!((v - orig).abs() <= 1e-12 * orig);
        }
    }

    #[test]
    fn tape_step_matches_plain_stepper_bitwise_analytic() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let model = model_at(&desk_params(), grid, EnergyModel::Analytic);
        let coeffs = model.coeffs();
        let energy = model.model_energy();
        let mut stepper = SavStepper::new(coeffs, model.sav).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for _ in 0..5 {
            let q0 = randv(&mut rng, 7, 1e-2);
            let p0 = randv(&mut rng, 7, 1e-2);
            let psi0 = (2.0 * energy.value(&q0) + model.sav.c0).sqrt();
            let mut state = StaggeredState {
                q_half: q0.clone(),
                p_int: p0.clone(),
                psi: psi0,
                step_index: 0,
            };
            let e = crate::types::ExcitationSpec::new(1.0, 0.01, 3, &grid).unwrap();
            let gp = crate::physics::input_vector(&e, &grid).unwrap();
            stepper.step(&mut state, 0.37, &gp, &energy).unwrap();

            let mut tape = Tape::new();
            let ids = model.tape_register(&mut tape);
            let out = model.tape_step(&mut tape, &ids, &q0, &p0, PsiSource::Value(psi0), 0.37, 3);
            assert_eq!(tape.value(out.q_next).data, state.q_half, "q mismatch");
            assert_eq!(tape.value(out.p_next).data, state.p_int, "p mismatch");
            assert_eq!(tape.scalar_value(out.psi_next), state.psi, "psi mismatch");
        }
    }

    #[test]
    fn tape_step_matches_plain_stepper_bitwise_network() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let net = EnergyNetwork::with_widths(grid.h(), 5, &[10, 10]);
        let model = model_at(&desk_params(), grid, EnergyModel::Network(net));
        let coeffs = model.coeffs();
        let energy = model.model_energy();
        let mut stepper = SavStepper::new(coeffs, model.sav).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(201);
        let q0 = randv(&mut rng, 7, 1e-2);
        let p0 = randv(&mut rng, 7, 1e-2);
        let psi0 = (2.0 * energy.value(&q0) + model.sav.c0).sqrt();
        let mut state = StaggeredState {
            q_half: q0.clone(),
            p_int: p0.clone(),
            psi: psi0,
            step_index: 0,
        };
        let gp = vec![0.0; 7];
        stepper.step(&mut state, 0.0, &gp, &energy).unwrap();

        let mut tape = Tape::new();
        let ids = model.tape_register(&mut tape);
        // unforced: f = 0 makes the input vector vanish at any node
        let out = model.tape_step(&mut tape, &ids, &q0, &p0, PsiSource::Value(psi0), 0.0, 3);
        assert_eq!(tape.value(out.q_next).data, state.q_half);
        assert_eq!(tape.value(out.p_next).data, state.p_int);
        assert_eq!(tape.scalar_value(out.psi_next), state.psi);
    }

    #[test]
    fn oracle_model_reproduces_reference_rollout_bitwise() {
        // model at exposed ground truth + analytic energy == reference
        // simulator built from the same exposed values
        let grid = GridSpec::new(16, 1.1).unwrap();
        let model = model_at(&desk_params(), grid, EnergyModel::Analytic);
        let [rho, radius, tension, youngs, eta0, eta1] = model.physical.exposed();
        let ref_params = PhysicalParams::new(rho, radius, tension, youngs, eta0, eta1).unwrap();
        let gt = GroundTruthComponents::new(ref_params, grid).unwrap();
        assert_eq!(*gt.coeffs(), model.coeffs());

        let e = crate::types::ExcitationSpec::new(1.0, 0.01, 5, &grid).unwrap();
        let gp = crate::physics::input_vector(&e, &grid).unwrap();
        let forces: Vec<f64> = (0..400)
            .map(|t| crate::physics::excitation_force((t as f64 + 0.5) * model.sav.dt, &e))
            .collect();
        let energy_ref = AnalyticQuartic {
            coeff: gt.coeffs().nl_coeff,
            h: gt.coeffs().h,
        };
        let a = rollout(
            StaggeredState::zero(grid.interior(), &model.sav),
            &forces,
            &gp,
            gt.coeffs(),
            &model.sav,
            &energy_ref,
        )
        .unwrap();
        let b = rollout(
            StaggeredState::zero(grid.interior(), &model.sav),
            &forces,
            &gp,
            &model.coeffs(),
            &model.sav,
            &model.model_energy(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_state_zero_input_stays_zero() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let model = model_at(&desk_params(), grid, EnergyModel::Analytic);
        let mut tape = Tape::new();
        let ids = model.tape_register(&mut tape);
        let z = vec![0.0; 7];
        let out = model.tape_step(&mut tape, &ids, &z, &z, PsiSource::Defining, 0.0, 3);
        assert!(tape.value(out.q_next).data.iter().all(|&x| x == 0.0));
        assert!(tape.value(out.p_next).data.iter().all(|&x| x == 0.0));
        let sqrt_c0 = model.sav.c0.sqrt();
        assert!((tape.scalar_value(out.psi_next) - sqrt_c0).abs() < 1e-18);
    }

    #[test]
    fn zero_energy_head_reduces_to_linear_string() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let mut net = EnergyNetwork::with_widths(grid.h(), 5, &[10, 10]);
        let last = net.weights.len() - 1;
        net.weights[last].data.fill(0.0);
        net.biases[last].data.fill(0.0);
        let model = model_at(&desk_params(), grid, EnergyModel::Network(net));

        // linear reference: same coefficients, zero quartic
        let mut lin = model.coeffs();
        lin.nl_coeff = 0.0;
        let lin_energy = AnalyticQuartic { coeff: 0.0, h: lin.h };
        let mut stepper = SavStepper::new(lin, model.sav).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let q0 = randv(&mut rng, 7, 1e-3);
        let p0 = randv(&mut rng, 7, 1e-3);
        let mut state = StaggeredState {
            q_half: q0.clone(),
            p_int: p0.clone(),
            psi: model.sav.c0.sqrt(),
            step_index: 0,
        };
        let gp = vec![0.0; 7];
        stepper.step(&mut state, 0.0, &gp, &lin_energy).unwrap();

        let mut tape = Tape::new();
        let ids = model.tape_register(&mut tape);
        let out = model.tape_step(
            &mut tape,
            &ids,
            &q0,
            &p0,
            PsiSource::Value(model.sav.c0.sqrt()),
            0.0,
            3,
        );
        assert_eq!(tape.value(out.q_next).data, state.q_half);
        assert_eq!(tape.value(out.p_next).data, state.p_int);
    }

    #[test]
    fn independent_reimplementation_agrees_at_n8() {
        // Naive re-implementation of the documented scheme: dense matrices,
        // Gaussian elimination instead of Thomas.
        let grid = GridSpec::new(8, 1.1).unwrap();
        let params = desk_params();
        let model = model_at(&params, grid, EnergyModel::Analytic);
        let c = model.coeffs();
        let (m, h, dt) = (c.m, c.h, model.sav.dt);
        let (c0, lam) = (model.sav.c0, model.sav.lambda_dr);

        let mut rng = ChaCha8Rng::seed_from_u64(203);
        let q0 = randv(&mut rng, m, 5e-3);
        let p0 = randv(&mut rng, m, 5e-3);
        let f_half = 0.83;
        let node = 4usize;

        // reference: library stepper
        let energy = model.model_energy();
        let psi0 = (2.0 * energy.value(&q0) + c0).sqrt();
        let mut state = StaggeredState {
            q_half: q0.clone(),
            p_int: p0.clone(),
            psi: psi0,
            step_index: 0,
        };
        let e = crate::types::ExcitationSpec::new(1.0, 0.01, node, &grid).unwrap();
        let gp = crate::physics::input_vector(&e, &grid).unwrap();
        let mut stepper = SavStepper::new(c, model.sav).unwrap();
        stepper.step(&mut state, f_half, &gp, &energy).unwrap();

        // independent path
        let hnl = |q: &[f64]| -> f64 {
            let mut s = 0.0;
            let mut prev = 0.0;
            for i in 0..m {
                let d = (q[i] - prev) / h;
                s += d * d * d * d;
                prev = q[i];
            }
            c.nl_coeff * h * s
        };
        let grad_hnl = |q: &[f64]| -> Vec<f64> {
            let mut w = vec![0.0; m];
            let mut prev = 0.0;
            for i in 0..m {
                let d = (q[i] - prev) / h;
                w[i] = d * d * d;
                prev = q[i];
            }
            let mut out = vec![0.0; m];
            for j in 0..m {
                let next = if j + 1 < m { w[j + 1] } else { 0.0 };
                out[j] = 4.0 * c.nl_coeff * (w[j] - next);
            }
            out
        };
        // dense K columns
        let kmat: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut ej = vec![0.0; m];
                ej[j] = 1.0;
                let mut buf = crate::physics::StiffnessBuf::new(m);
                let mut col = vec![0.0; m];
                crate::physics::stiffness_apply_raw(&c, &ej, &mut buf, &mut col);
                col
            })
            .collect();
        let kq = |q: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|i| (0..m).map(|j| kmat[j][i] * q[j]).sum())
                .collect()
        };
        let dense_solve_tridiag = |aa: f64, bb: f64, rhs: &[f64]| -> Vec<f64> {
            let mut mat = vec![vec![0.0; m]; m];
            for i in 0..m {
                mat[i][i] = aa;
                if i > 0 {
                    mat[i][i - 1] = bb;
                }
                if i + 1 < m {
                    mat[i][i + 1] = bb;
                }
            }
            let mut b = rhs.to_vec();
            solve_dense(&mut mat, &mut b);
            b
        };

        let q1: Vec<f64> = (0..m).map(|i| q0[i] + dt / c.mu * p0[i]).collect();
        let psi_def = (2.0 * hnl(&q1) + c0).sqrt();
        let g: Vec<f64> = grad_hnl(&q1).iter().map(|x| x / psi_def).collect();
        let kq1 = kq(&q1);
        let mut force = vec![0.0; m];
        for i in 0..m {
            force[i] = -kq1[i] / h;
        }
        force[node - 1] += f_half / h;
        let (ap, bp, am, bm) = crate::sav::damping_coefficients(c.eta0, c.eta1, dt, h);
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            let sp = (if i > 0 { p0[i - 1] } else { 0.0 })
                + (if i + 1 < m { p0[i + 1] } else { 0.0 });
            rhs[i] = am * p0[i] + bm * sp + dt * force[i];
        }
        let p_lin = dense_solve_tridiag(ap, bp, &rhs);
        let z = dense_solve_tridiag(ap, bp, &g);
        let g_dq: f64 = (0..m).map(|i| g[i] * (q1[i] - q0[i])).sum();
        let g_plin: f64 = (0..m).map(|i| g[i] * p_lin[i]).sum();
        let g_z: f64 = (0..m).map(|i| g[i] * z[i]).sum();
        let beta = dt * dt / (2.0 * c.mu * h) * g_z;
        let r = psi0 + 0.5 * g_dq + dt / (2.0 * c.mu) * g_plin;
        let psi_raw = (r - 0.5 * beta * psi0) / (1.0 + 0.5 * beta);
        let psi_bar = 0.5 * (psi0 + psi_raw);
        let p1: Vec<f64> = (0..m).map(|i| p_lin[i] - dt / h * psi_bar * z[i]).collect();
        let psi1 = (1.0 - lam) * psi_raw + lam * psi_def;

        for i in 0..m {
            assert!(
                (state.q_half[i] - q1[i]).abs() <= 1e-12 * q1[i].abs().max(1e-12),
                "q[{i}]"
            );
            assert!(
                (state.p_int[i] - p1[i]).abs() <= 1e-10 * p1[i].abs().max(1e-10),
                "p[{i}]: {} vs {}",
                state.p_int[i],
                p1[i]
            );
        }
        assert!((state.psi - psi1).abs() <= 1e-10 * psi1.abs().max(1e-12));
    }

    #[test]
    fn full_step_gradients_match_finite_differences_all_parameters() {
        // The single most important test: d(loss)/dθ for every learnable
        // parameter of the StringPHNN matches central finite differences of
        // the one-step loss at N = 8.
        let grid = GridSpec::new(8, 1.1).unwrap();
        let net = EnergyNetwork::with_widths(grid.h(), 11, &[6, 6]);
        let mut model = model_at(&desk_params(), grid, EnergyModel::Network(net));
        let m = grid.interior();

        let mut rng = ChaCha8Rng::seed_from_u64(204);
        let q0 = randv(&mut rng, m, 5e-3);
        let p0 = randv(&mut rng, m, 5e-3);
        let tq = randv(&mut rng, m, 5e-3);
        let tp = randv(&mut rng, m, 5e-3);
        let (f_half, node) = (0.9, 4usize);

        let record = |model: &StringPHNN, tape: &mut Tape| -> (PhnnIds, TensorId) {
            let ids = model.tape_register(tape);
            let out = model.tape_step(tape, &ids, &q0, &p0, PsiSource::Defining, f_half, node);
            let tq_id = tape.leaf_vector(&tq);
            let tp_id = tape.leaf_vector(&tp);
            let dq = tape.sub(out.q_next, tq_id);
            let dp = tape.sub(out.p_next, tp_id);
            let aq = tape.abs(dq);
            let ap = tape.abs(dp);
            let sq = tape.sum(aq);
            let sp = tape.sum(ap);
            let s = tape.add(sq, sp);
            let loss = tape.scale(s, 1.0 / (2.0 * m as f64 * model.sav.dt));
            (ids, loss)
        };
        let loss_for = |model: &StringPHNN| -> f64 {
            let mut tape = Tape::new();
            let (_, loss) = record(model, &mut tape);
            tape.value(loss).as_scalar()
        };

        let mut tape = Tape::new();
        let (ids, loss) = record(&model, &mut tape);
        tape.backward(loss).unwrap();

        let mut grads: Vec<Vec<f64>> = Vec::new();
        grads.push(tape.grad(ids.phi).unwrap().to_vec());
        let eids = ids.energy.as_ref().unwrap();
        grads.push(tape.grad(eids.kernel).unwrap().to_vec());
        for l in 0..eids.weights.len() {
            grads.push(tape.grad(eids.weights[l]).unwrap().to_vec());
            grads.push(tape.grad(eids.biases[l]).unwrap().to_vec());
        }

        let names = model.trainable_names();
        // step large enough that central-difference roundoff (~ulp(loss)/2h)
        // stays well under the 1e-5 tolerance; truncation is O(h²)
        let eps = 1e-5;
        for (ti, name) in names.iter().enumerate() {
            let count = model.trainable_tensors()[ti].data.len();
            let probes: Vec<usize> = if count <= 8 {
                (0..count).collect()
            } else {
                vec![0, count / 3, count / 2, count - 1]
            };
            for &idx in &probes {
                let orig = model.trainable_tensors()[ti].data[idx];
                let step = eps * orig.abs().max(1.0);
                model.trainable_tensors_mut()[ti].data[idx] = orig + step;
                let fp = loss_for(&model);
                model.trainable_tensors_mut()[ti].data[idx] = orig - step;
                let fm = loss_for(&model);
                model.trainable_tensors_mut()[ti].data[idx] = orig;
                let fd = (fp - fm) / (2.0 * step);
                let got = grads[ti][idx];
                let denom = fd.abs().max(got.abs()).max(1e-3);
                assert!(
                    (got - fd).abs() / denom < 1e-5,
                    "{name}[{idx}]: tape {got:.9e} vs fd {fd:.9e}"
                );
            }
        }
    }

    #[test]
    fn parameter_report_at_truth_is_exact() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let p = desk_params();
        let model = model_at(&p, grid, EnergyModel::Analytic);
        let report = parameter_report(&model, Some(&p));
        for e in &report {
            assert!(
                e.rel_abs_error.unwrap() < 1e-12,
                "{}: {:?}",
                e.name,
                e.rel_abs_error
            );
        }
    }

    #[test]
    fn parameter_report_shows_mu_degeneracy() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let p = desk_params();
        // rho doubled, R divided by sqrt(2): mu unchanged
        let twisted = LearnablePhysical::from_values(&[
            2.0 * p.rho,
            p.radius / 2.0_f64.sqrt(),
            p.tension,
            p.youngs,
            p.eta0,
            p.eta1,
        ])
        .unwrap();
        let sav = SavConfig::with_dt(1.0 / 16000.0).unwrap();
        let model = StringPHNN::new(twisted, EnergyModel::Analytic, grid, sav);
        let report = parameter_report(&model, Some(&p));
        let by_name = |n: &str| {
            report
                .iter()
                .find(|e| e.name == n)
                .unwrap()
                .rel_abs_error
                .unwrap()
        };
        assert!(by_name("mu") < 1e-10);
        assert!((by_name("rho") - 1.0).abs() < 1e-10);
        assert!((by_name("radius") - (1.0 - 1.0 / 2.0_f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn parameter_report_without_truth_gives_raw_values() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let model = model_at(&desk_params(), grid, EnergyModel::Analytic);
        let report = parameter_report(&model, None);
        assert!(report
            .iter()
            .all(|e| e.truth.is_none() && e.rel_abs_error.is_none()));
        assert!(report.iter().all(|e| e.value.is_finite()));
    }

    #[test]
    fn quartic_extraction_recovers_analytic_coefficient() {
        let grid = GridSpec::new(16, 1.1).unwrap();
        let c = 1.2e4;
        let energy = AnalyticQuartic {
            coeff: c,
            h: grid.h(),
        };
        let got = extract_quartic_coeff(&energy, grid.interior(), grid.h(), 1e-2);
        assert!((got - c).abs() < 1e-6 * c, "{got} vs {c}");
    }

    #[test]
    fn baseline_step_shapes_and_zero_weights() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let mut net = BaselineNet::with_widths(grid.interior(), 9, &[12, 12]);
        for w in net.weights.iter_mut() {
            w.data.fill(0.0);
        }
        for b in net.biases.iter_mut() {
            b.data.fill(0.0);
        }
        let q = vec![0.5; 7];
        let p = vec![-0.5; 7];
        let (qn, pn) = baseline_step(&net, &q, &p, 2.0, 4, 8);
        assert_eq!(qn.len(), 7);
        assert_eq!(pn.len(), 7);
        assert!(qn.iter().chain(&pn).all(|&x| x == 0.0));
    }

    #[test]
    fn baseline_tape_matches_plain() {
        let grid = GridSpec::new(8, 1.1).unwrap();
        let net = BaselineNet::with_widths(grid.interior(), 9, &[12, 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(205);
        let q = randv(&mut rng, 7, 1e-2);
        let p = randv(&mut rng, 7, 1e-2);
        let (qn, pn) = baseline_step(&net, &q, &p, 1.3, 5, 8);

        let mut tape = Tape::new();
        let ids = net.register(&mut tape);
        let (qid, pid) = baseline_tape_step(&net, &mut tape, &ids, &q, &p, 1.3, 5, 8);
        assert_eq!(tape.value(qid).data, qn);
        assert_eq!(tape.value(pid).data, pn);
    }
}
