//! Teacher-forced training for both models: batching over one-step pairs,
//! the MAE/dt loss, validation and best-checkpoint tracking, NaN recovery,
//! and the multi-seed protocol.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Trajectory;
use crate::error::{Error, Result};
use crate::model::{
    baseline_tape_step, EnergyModel, LearnablePhysical, PsiSource, StringPHNN,
};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::baseline::BaselineNet;
use crate::nn::energy::EnergyNetwork;
use crate::nn::tape::{Tape, TensorId};
use crate::sav::{stability_check, SavConfig};
use crate::types::PhysicalParams;

/// Mean absolute elementwise error divided by the time step.
pub fn train_loss(pred: &[f64], target: &[f64], dt: f64) -> f64 {
    assert_eq!(pred.len(), target.len());
    let mut acc = 0.0;
    for i in 0..pred.len() {
        acc += (pred[i] - target[i]).abs();
    }
    acc / (pred.len() as f64 * dt)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub val_interval: usize,
    /// Held-out pairs used for each validation estimate.
    pub val_pairs: usize,
    /// Global-norm gradient clip; absent disables clipping.
    pub grad_clip: Option<f64>,
    /// Per-seed φ initialization: truth · exp(U(−spread, spread)).
    pub init_spread: f64,
    /// Hidden widths of the energy network (StringPHNN).
    pub phnn_hidden: Vec<usize>,
    /// Hidden widths of the baseline MLP.
    pub baseline_hidden: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 || self.val_interval == 0 {
            return Err(Error::config("batch size, steps, val interval must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed required"));
        }
        Ok(())
    }
}

/// Loaded dataset splits.
pub struct DataBundle {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub truth: PhysicalParams,
    pub grid: crate::types::GridSpec,
    pub sav: SavConfig,
}

impl DataBundle {
    pub fn from_dir(dir: &std::path::Path) -> Result<Self> {
        let manifest = crate::datagen::load_manifest(dir)?;
        let train = crate::datagen::load_split(dir, &manifest, "train")?;
        let val = crate::datagen::load_split(dir, &manifest, "val")?;
        let test = crate::datagen::load_split(dir, &manifest, "test")?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::config("dataset must contain train and val splits"));
        }
        let sav = SavConfig::new(
            manifest.sav_c0,
            manifest.sav_lambda_dr,
            manifest.time.dt(),
        )?;
        Ok(DataBundle {
            train,
            val,
            test,
            truth: manifest.params,
            grid: manifest.grid,
            sav,
        })
    }

    pub fn dt(&self) -> f64 {
        self.sav.dt
    }
}

/// Deterministic epoch-reshuffled iterator over (trajectory, step) pairs.
struct PairSampler {
    order: Vec<u32>,
    cursor: usize,
    steps_per_traj: usize,
    rng: ChaCha8Rng,
}

impl PairSampler {
    fn new(n_traj: usize, steps_per_traj: usize, seed: u64) -> Self {
        let total = n_traj * steps_per_traj;
        let mut s = PairSampler {
            order: (0..total as u32).collect(),
            cursor: 0,
            steps_per_traj,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        // Fisher-Yates
        for i in (1..self.order.len()).rev() {
            let j = (self.rng.gen::<f64>() * (i + 1) as f64) as usize;
            self.order.swap(i, j.min(i));
        }
        self.cursor = 0;
    }

    fn next_pair(&mut self) -> (usize, usize) {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let flat = self.order[self.cursor] as usize;
        self.cursor += 1;
        (flat / self.steps_per_traj, flat % self.steps_per_traj)
    }
}

/// Fixed validation set: deterministic (trajectory, step) picks.
fn validation_indices(n_traj: usize, steps: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x76616c5f70616972);
    (0..count)
        .map(|_| {
            let ti = ((rng.gen::<f64>() * n_traj as f64) as usize).min(n_traj - 1);
            let st = ((rng.gen::<f64>() * steps as f64) as usize).min(steps - 1);
            (ti, st)
        })
        .collect()
}

/// Accumulates |pred − target| sums for a batch on the tape and scales by
/// 1/(elements · dt).
struct LossAccum {
    total: Option<TensorId>,
    elements: usize,
}

impl LossAccum {
    fn new() -> Self {
        LossAccum {
            total: None,
            elements: 0,
        }
    }

    fn add_pair(
        &mut self,
        tape: &mut Tape,
        pred_q: TensorId,
        pred_p: TensorId,
        tq: &[f64],
        tp: &[f64],
    ) {
        let tq_id = tape.leaf_vector(tq);
        let tp_id = tape.leaf_vector(tp);
        let dq = tape.sub(pred_q, tq_id);
        let dp = tape.sub(pred_p, tp_id);
        let aq = tape.abs(dq);
        let ap = tape.abs(dp);
        let sq = tape.sum(aq);
        let sp = tape.sum(ap);
        let s = tape.add(sq, sp);
        self.total = Some(match self.total {
            None => s,
            Some(t) => tape.add(t, s),
        });
        self.elements += tq.len() + tp.len();
    }

    fn finish(self, tape: &mut Tape, dt: f64) -> TensorId {
        let total = self.total.expect("empty batch");
        tape.scale(total, 1.0 / (self.elements as f64 * dt))
    }
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Everything a finished training job returns.
pub struct TrainedPhnn {
    pub model: StringPHNN,
    pub best_model: StringPHNN,
    pub best_val: f64,
    pub best_step: usize,
    pub curve: Vec<CurvePoint>,
    pub adam: AdamState,
    pub lr_halvings: u32,
}

pub struct TrainedBaseline {
    pub net: BaselineNet,
    pub best_net: BaselineNet,
    pub best_val: f64,
    pub best_step: usize,
    pub curve: Vec<CurvePoint>,
    pub adam: AdamState,
    pub lr_halvings: u32,
}

fn clip_gradients(grads: &mut [Vec<f64>], threshold: f64) {
    let norm: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Shared NaN-recovery bookkeeping: skip, halve after 3 consecutive, abort
/// after 10.
struct NanGuard {
    consecutive: u32,
    halvings: u32,
}

impl NanGuard {
    fn new() -> Self {
        NanGuard {
            consecutive: 0,
            halvings: 0,
        }
    }

    fn bad_batch(&mut self, lr: &mut f64, step: usize) -> Result<()> {
        self.consecutive += 1;
        if self.consecutive >= 10 {
            return Err(Error::config(format!(
                "training unrecoverable: 10 consecutive non-finite batches at step {step}"
            )));
        }
        if self.consecutive % 3 == 0 {
            *lr *= 0.5;
            self.halvings += 1;
        }
        Ok(())
    }

    fn good_batch(&mut self) {
        self.consecutive = 0;
    }
}

/// Fresh per-seed StringPHNN: φ from truth·exp(U(−spread, spread)), energy
/// network seeded from the same stream.
pub fn init_phnn(
    truth: &PhysicalParams,
    grid: &crate::types::GridSpec,
    sav: &SavConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<StringPHNN> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [
        truth.rho,
        truth.radius,
        truth.tension,
        truth.youngs,
        truth.eta0,
        truth.eta1,
    ];
    let mut init = [0.0; 6];
    for i in 0..6 {
        let u = rng.gen::<f64>() * 2.0 - 1.0;
        init[i] = base[i] * (cfg.init_spread * u).exp();
    }
    let physical = LearnablePhysical::from_values(&init)?;
    let net = EnergyNetwork::with_widths(grid.h(), seed.wrapping_add(1), &cfg.phnn_hidden);
    Ok(StringPHNN::new(
        physical,
        EnergyModel::Network(net),
        *grid,
        *sav,
    ))
}

/// Trains one StringPHNN with teacher forcing; each update differentiates
/// through one full SAV step.
pub fn train_phnn(
    mut model: StringPHNN,
    data: &DataBundle,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedPhnn> {
    cfg.validate()?;
    let report = stability_check(&model.coeffs(), 0.9)?;
    if !report.admits(model.sav.dt) {
        return Err(Error::config(format!(
            "initial parameters violate the stability bound: dt {} > {:.3e}",
            model.sav.dt, report.dt_max
        )));
    }

    let steps_per_traj = data.train[0].steps();
    let mut sampler = PairSampler::new(data.train.len(), steps_per_traj, seed);
    let val_steps = data.val[0].steps();
    let val_idx = validation_indices(data.val.len(), val_steps, cfg.val_pairs, seed);
    let dt = data.dt();

    let sizes: Vec<usize> = model
        .trainable_tensors()
        .iter()
        .map(|t| t.data.len())
        .collect();
    let mut adam = AdamState::new(&sizes);
    let mut lr = cfg.lr;
    let mut guard = NanGuard::new();
    let mut tape = Tape::new();

    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut best_step = 0usize;
    let mut curve = Vec::new();

    for step in 0..cfg.steps {
        tape.reset();
        let ids = model.tape_register(&mut tape);
        let mut acc = LossAccum::new();
        for _ in 0..cfg.batch_size {
            let (ti, st) = sampler.next_pair();
            let pair = data.train[ti].pair_at(st);
            let out = model.tape_step(
                &mut tape,
                &ids,
                pair.q0,
                pair.p0,
                PsiSource::Defining,
                pair.f_half,
                pair.node_e,
            );
            acc.add_pair(&mut tape, out.q_next, out.p_next, pair.q1, pair.p1);
        }
        let loss_id = acc.finish(&mut tape, dt);
        let loss = tape.value(loss_id).as_scalar();
        if !loss.is_finite() {
            guard.bad_batch(&mut lr, step)?;
            continue;
        }
        guard.good_batch();

        tape.backward(loss_id)?;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(sizes.len());
        grads.push(tape.grad(ids.phi).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; 6]));
        if let Some(eids) = &ids.energy {
            grads.push(tape.grad(eids.kernel).unwrap().to_vec());
            for l in 0..eids.weights.len() {
                grads.push(tape.grad(eids.weights[l]).unwrap().to_vec());
                grads.push(tape.grad(eids.biases[l]).unwrap().to_vec());
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            guard.bad_batch(&mut lr, step)?;
            continue;
        }
        if let Some(thr) = cfg.grad_clip {
            clip_gradients(&mut grads, thr);
        }

        let adam_cfg = AdamConfig::new(lr);
        let mut tensors = model.trainable_tensors_mut();
        let mut slices: Vec<&mut [f64]> = tensors.iter_mut().map(|t| &mut t.data[..]).collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(|g| &g[..]).collect();
        adam.step(&adam_cfg, &mut slices, &grad_refs);

        let validate_now = (step + 1) % cfg.val_interval == 0 || step + 1 == cfg.steps;
        let val = if validate_now {
            let v = phnn_validation_loss(&model, data, &val_idx, &mut tape);
            if v.is_finite() && v < best_val {
                best_val = v;
                best_model = model.clone();
                best_step = step + 1;
            }
            Some(v)
        } else {
            None
        };
        curve.push(CurvePoint {
            step: step + 1,
            train_loss: loss,
            val_loss: val,
        });
    }

    Ok(TrainedPhnn {
        model,
        best_model,
        best_val,
        best_step,
        curve,
        adam,
        lr_halvings: guard.halvings,
    })
}

fn phnn_validation_loss(
    model: &StringPHNN,
    data: &DataBundle,
    idx: &[(usize, usize)],
    tape: &mut Tape,
) -> f64 {
    tape.reset();
    let ids = model.tape_register(tape);
    let mut acc = LossAccum::new();
    for &(ti, st) in idx {
        let pair = data.val[ti].pair_at(st);
        let out = model.tape_step(
            tape,
            &ids,
            pair.q0,
            pair.p0,
            PsiSource::Defining,
            pair.f_half,
            pair.node_e,
        );
        acc.add_pair(tape, out.q_next, out.p_next, pair.q1, pair.p1);
    }
    let loss_id = acc.finish(tape, data.dt());
    let v = tape.value(loss_id).as_scalar();
    tape.reset();
    v
}

/// Per-feature mean/std of the baseline inputs over all training pairs.
pub fn baseline_input_stats(data: &DataBundle) -> (Vec<f64>, Vec<f64>) {
    let m = data.grid.interior();
    let in_dim = 2 * m + 2;
    let mut mean = vec![0.0; in_dim];
    let mut sq = vec![0.0; in_dim];
    let mut count = 0usize;
    for traj in &data.train {
        for t in 0..traj.steps() {
            let pair = traj.pair_at(t);
            let x = crate::model::baseline_input(
                pair.q0,
                pair.p0,
                pair.f_half,
                pair.node_e,
                data.grid.n,
            );
            for i in 0..in_dim {
                mean[i] += x[i];
                sq[i] += x[i] * x[i];
            }
            count += 1;
        }
    }
    let n = count as f64;
    for i in 0..in_dim {
        mean[i] /= n;
        sq[i] = (sq[i] / n - mean[i] * mean[i]).max(0.0).sqrt();
    }
    (mean, sq)
}

pub fn init_baseline(data: &DataBundle, cfg: &TrainConfig, seed: u64) -> BaselineNet {
    let mut net = BaselineNet::with_widths(
        data.grid.interior(),
        seed.wrapping_add(2),
        &cfg.baseline_hidden,
    );
    let (mean, std) = baseline_input_stats(data);
    net.set_input_stats(mean, std);
    net
}

pub fn train_baseline(
    mut net: BaselineNet,
    data: &DataBundle,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedBaseline> {
    cfg.validate()?;
    let steps_per_traj = data.train[0].steps();
    let mut sampler = PairSampler::new(data.train.len(), steps_per_traj, seed);
    let val_steps = data.val[0].steps();
    let val_idx = validation_indices(data.val.len(), val_steps, cfg.val_pairs, seed);
    let dt = data.dt();
    let n = data.grid.n;

    let mut sizes = Vec::new();
    for l in 0..net.weights.len() {
        sizes.push(net.weights[l].data.len());
        sizes.push(net.biases[l].data.len());
    }
    let mut adam = AdamState::new(&sizes);
    let mut lr = cfg.lr;
    let mut guard = NanGuard::new();
    let mut tape = Tape::new();

    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();
    let mut best_step = 0usize;
    let mut curve = Vec::new();

    for step in 0..cfg.steps {
        tape.reset();
        let ids = net.register(&mut tape);
        let mut acc = LossAccum::new();
        for _ in 0..cfg.batch_size {
            let (ti, st) = sampler.next_pair();
            let pair = data.train[ti].pair_at(st);
            let (qn, pn) = baseline_tape_step(
                &net, &mut tape, &ids, pair.q0, pair.p0, pair.f_half, pair.node_e, n,
            );
            acc.add_pair(&mut tape, qn, pn, pair.q1, pair.p1);
        }
        let loss_id = acc.finish(&mut tape, dt);
        let loss = tape.value(loss_id).as_scalar();
        if !loss.is_finite() {
            guard.bad_batch(&mut lr, step)?;
            continue;
        }
        guard.good_batch();

        tape.backward(loss_id)?;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(sizes.len());
        for l in 0..ids.weights.len() {
            grads.push(tape.grad(ids.weights[l]).unwrap().to_vec());
            grads.push(tape.grad(ids.biases[l]).unwrap().to_vec());
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            guard.bad_batch(&mut lr, step)?;
            continue;
        }
        if let Some(thr) = cfg.grad_clip {
            clip_gradients(&mut grads, thr);
        }

        let adam_cfg = AdamConfig::new(lr);
        let mut slices: Vec<&mut [f64]> = Vec::with_capacity(sizes.len());
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            slices.push(&mut w.data[..]);
            slices.push(&mut b.data[..]);
        }
        let grad_refs: Vec<&[f64]> = grads.iter().map(|g| &g[..]).collect();
        adam.step(&adam_cfg, &mut slices, &grad_refs);

        let validate_now = (step + 1) % cfg.val_interval == 0 || step + 1 == cfg.steps;
        let val = if validate_now {
            tape.reset();
            let ids = net.register(&mut tape);
            let mut acc = LossAccum::new();
            for &(ti, st) in &val_idx {
                let pair = data.val[ti].pair_at(st);
                let (qn, pn) = baseline_tape_step(
                    &net, &mut tape, &ids, pair.q0, pair.p0, pair.f_half, pair.node_e, n,
                );
                acc.add_pair(&mut tape, qn, pn, pair.q1, pair.p1);
            }
            let vid = acc.finish(&mut tape, dt);
            let v = tape.value(vid).as_scalar();
            tape.reset();
            if v.is_finite() && v < best_val {
                best_val = v;
                best_net = net.clone();
                best_step = step + 1;
            }
            Some(v)
        } else {
            None
        };
        curve.push(CurvePoint {
            step: step + 1,
            train_loss: loss,
            val_loss: val,
        });
    }

    Ok(TrainedBaseline {
        net,
        best_net,
        best_val,
        best_step,
        curve,
        adam,
        lr_halvings: guard.halvings,
    })
}

/// Per-seed result of the multi-seed protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_val: f64,
    pub best_step: usize,
    pub test_rel_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl SeedSummary {
    pub fn from_values(mut v: Vec<f64>) -> Self {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        SeedSummary {
            min: v[0],
            median: v[v.len() / 2],
            max: *v.last().unwrap(),
        }
    }
}

/// Trains one model per seed in parallel and aggregates test relative MSE.
/// Returns the per-seed outcomes in seed order plus the trained artifacts.
pub fn multi_seed_phnn(
    data: &DataBundle,
    cfg: &TrainConfig,
) -> Result<(Vec<(SeedResult, TrainedPhnn)>, SeedSummary)> {
    let results: Vec<(SeedResult, TrainedPhnn)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(SeedResult, TrainedPhnn)> {
            let model = init_phnn(&data.truth, &data.grid, &data.sav, cfg, seed)?;
            let trained = train_phnn(model, data, cfg, seed)?;
            let test = crate::eval::phnn_test_rel_mse(&trained.best_model, &data.test)?;
            Ok((
                SeedResult {
                    seed,
                    best_val: trained.best_val,
                    best_step: trained.best_step,
                    test_rel_mse: test,
                },
                trained,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary =
        SeedSummary::from_values(results.iter().map(|(r, _)| r.test_rel_mse).collect());
    Ok((results, summary))
}

pub fn multi_seed_baseline(
    data: &DataBundle,
    cfg: &TrainConfig,
) -> Result<(Vec<(SeedResult, TrainedBaseline)>, SeedSummary)> {
    let results: Vec<(SeedResult, TrainedBaseline)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(SeedResult, TrainedBaseline)> {
            let net = init_baseline(data, cfg, seed);
            let trained = train_baseline(net, data, cfg, seed)?;
            let test = crate::eval::baseline_test_rel_mse(&trained.best_net, &data.test)?;
            Ok((
                SeedResult {
                    seed,
                    best_val: trained.best_val,
                    best_step: trained.best_step,
                    test_rel_mse: test,
                },
                trained,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary =
        SeedSummary::from_values(results.iter().map(|(r, _)| r.test_rel_mse).collect());
    Ok((results, summary))
}
