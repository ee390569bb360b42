//! Command-line pipeline: simulate the reference string, generate datasets,
//! train the identification models, evaluate them, and inspect artifacts.
//!
//! Exit codes: 2 configuration error, 3 numerical instability, 4 I/O
//! failure, 1 anything else.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::time::Instant;

use stringph::ckpt;
use stringph::config::{load_config, RunManifest};
use stringph::datagen;
use stringph::error::Error;
use stringph::eval;
use stringph::export;
use stringph::physics::{excitation_force, input_vector};
use stringph::sav::{self, StaggeredState};
use stringph::train::{self, DataBundle};

#[derive(Parser)]
#[command(name = "stringph", version, about = "Nonlinear string simulation and gray-box identification")]
struct Cli {
    /// Worker thread cap for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output root; defaults to $STRINGPH_OUT or the current directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Master seed override for gen-data.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Export format for figure-like artifacts.
    #[arg(long, global = true, value_enum, default_value_t = Format::Png)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Png,
    Json,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Phnn,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Ground-truth rollout with a per-step energy audit.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate train/val/test trajectory datasets.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model (multi-seed) on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Test trajectory used for the figure exports.
        #[arg(long, default_value_t = 0)]
        traj_index: usize,
    },
    /// Print metadata and quick statistics of a trajectory or checkpoint.
    Inspect {
        file: PathBuf,
        /// Export this 1-based node's time series (trajectories only).
        #[arg(long)]
        node: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    let out_root = cli
        .output
        .clone()
        .or_else(|| std::env::var_os("STRINGPH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let result = match &cli.command {
        Command::Simulate { config } => cmd_simulate(config, &out_root, cli.format),
        Command::GenData { config } => cmd_gen_data(config, &out_root, cli.seed),
        Command::Train {
            config,
            model,
            data,
        } => cmd_train(config, *model, data, &out_root),
        Command::Eval {
            checkpoint,
            data,
            config,
            traj_index,
        } => cmd_eval(checkpoint, data, config, *traj_index, &out_root, cli.format),
        Command::Inspect { file, node } => cmd_inspect(file, *node, &out_root, cli.format),
    };

    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) | Error::Shape { .. } | Error::Format(_) => 2,
            Error::Instability { .. } => 3,
            Error::Io(_) => 4,
        };
        std::process::exit(code);
    }
}

fn ensure_dir(path: &Path) -> stringph::Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_simulate(config_path: &Path, out_root: &Path, format: Format) -> stringph::Result<()> {
    let started = Instant::now();
    let cfg = load_config(config_path)?;
    let out = out_root.join("simulate");
    ensure_dir(&out)?;

    let components = cfg.components()?;
    let sav_cfg = cfg.sav_config()?;
    let report = sav::stability_check(components.coeffs(), 0.9)?;
    if !report.admits(sav_cfg.dt) {
        return Err(Error::config(format!(
            "dt {:.3e} exceeds the stable maximum {:.3e}",
            sav_cfg.dt, report.dt_max
        )));
    }
    let excitation = cfg.sim_excitation()?;
    let gp = input_vector(&excitation, &cfg.grid)?;
    let steps = cfg.time.step_count();
    let forces: Vec<f64> = (0..steps)
        .map(|t| excitation_force((t as f64 + 0.5) * sav_cfg.dt, &excitation))
        .collect();
    let energy = sav::AnalyticQuartic {
        coeff: components.coeffs().nl_coeff,
        h: components.coeffs().h,
    };
    let rec = sav::rollout(
        StaggeredState::zero(cfg.grid.interior(), &sav_cfg),
        &forces,
        &gp,
        components.coeffs(),
        &sav_cfg,
        &energy,
    )?;
    let audit = sav::energy_audit(&rec, &gp, components.coeffs(), &sav_cfg, &energy)?;
    println!(
        "simulated {} steps: peak energy {:.6e} J, max |residual| {:.3e} (relative {:.3e}), max energy increase {:.3e}",
        rec.steps,
        audit.peak_stored,
        audit.max_abs_residual,
        audit.max_residual_relative(),
        audit.max_increase,
    );

    // audit CSV
    let mut csv = String::from("step,stored,dissipated,injected,sav_adjust,residual\n");
    for (k, r) in audit.rows.iter().enumerate() {
        csv.push_str(&format!(
            "{k},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.stored, r.dissipated, r.injected, r.sav_adjust, r.residual
        ));
    }
    std::fs::write(out.join("energy_audit.csv"), csv)?;

    // observation-node series
    let x_o = datagen::observation_node(&cfg.grid);
    let series = rec.node_series(x_o - 1, true);
    export::write_node_csv(&out.join("observation_node.csv"), sav_cfg.dt, &series)?;
    if format == Format::Png {
        let spec = eval::spectrogram(&series, cfg.time.fs, &cfg.eval.stft)?;
        export::save_spectrogram_png(&out.join("observation_spectrogram.png"), &spec)?;
    }

    let mut manifest = RunManifest::new("simulate", &cfg)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.outputs = vec![
        "energy_audit.csv".into(),
        "observation_node.csv".into(),
    ];
    manifest.extra = serde_json::json!({
        "max_residual_relative": audit.max_residual_relative(),
        "peak_stored": audit.peak_stored,
        "dt_max": report.dt_max,
        "lambda_max": report.lambda_max,
        "observation_node": x_o,
    });
    manifest.write(&out.join("run_manifest.json"))?;
    Ok(())
}

fn cmd_gen_data(config_path: &Path, out_root: &Path, seed: Option<u64>) -> stringph::Result<()> {
    let started = Instant::now();
    let mut cfg = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.dataset.master_seed = s;
    }
    let out = out_root.join("dataset");
    let components = cfg.components()?;
    let sav_cfg = cfg.sav_config()?;
    let manifest = datagen::generate_dataset(&cfg.dataset, &components, &cfg.time, &sav_cfg, &out)?;
    println!(
        "generated {} trajectories into {}",
        manifest.entries.len(),
        out.display()
    );

    let mut run = RunManifest::new("gen-data", &cfg)?;
    run.seed = Some(cfg.dataset.master_seed);
    run.duration_secs = started.elapsed().as_secs_f64();
    run.outputs = manifest.entries.iter().map(|e| e.file.clone()).collect();
    run.outputs.push("manifest.json".into());
    run.write(&out.join("run_manifest.json"))?;
    Ok(())
}

fn cmd_train(
    config_path: &Path,
    kind: ModelKind,
    data_dir: &Path,
    out_root: &Path,
) -> stringph::Result<()> {
    let started = Instant::now();
    let cfg = load_config(config_path)?;
    let data = DataBundle::from_dir(data_dir)?;
    let out = out_root.join(match kind {
        ModelKind::Phnn => "train_phnn",
        ModelKind::Baseline => "train_baseline",
    });
    ensure_dir(&out)?;
    let config_hash = cfg.hash()?;

    let mut results_json = Vec::new();
    match kind {
        ModelKind::Phnn => {
            let (results, summary) = train::multi_seed_phnn(&data, &cfg.train)?;
            for (res, trained) in &results {
                let tag = format!("seed{:02}", res.seed);
                let meta = serde_json::json!({
                    "seed": res.seed,
                    "config_hash": config_hash,
                    "best_val": res.best_val,
                    "best_step": res.best_step,
                    "test_rel_mse": res.test_rel_mse,
                    "init_spread": cfg.train.init_spread,
                });
                let ckpt_file = out.join(format!("phnn_{tag}.ckpt"));
                ckpt::save_checkpoint(
                    &ckpt_file,
                    &ckpt::phnn_checkpoint(&trained.best_model, Some(&trained.adam), meta),
                )?;
                // JSON sidecar with the exposed parameters
                let report = stringph::model::parameter_report(&trained.best_model, Some(&data.truth));
                let sidecar = serde_json::json!({
                    "seed": res.seed,
                    "config_hash": config_hash,
                    "exposed": report,
                });
                std::fs::write(
                    out.join(format!("phnn_{tag}.json")),
                    serde_json::to_vec_pretty(&sidecar).unwrap(),
                )?;
                export::write_curve_csv(&out.join(format!("curve_{tag}.csv")), &trained.curve)?;
                println!(
                    "seed {}: best val {:.6e} at step {}, test relative MSE {:.6e}",
                    res.seed, res.best_val, res.best_step, res.test_rel_mse
                );
                results_json.push(serde_json::to_value(res).unwrap());
            }
            println!(
                "test relative MSE over seeds: min {:.6e} / median {:.6e} / max {:.6e}",
                summary.min, summary.median, summary.max
            );
            let mut run = RunManifest::new("train-phnn", &cfg)?;
            run.duration_secs = started.elapsed().as_secs_f64();
            run.extra = serde_json::json!({
                "results": results_json,
                "summary": summary,
                "dataset": data_dir.display().to_string(),
            });
            run.write(&out.join("run_manifest.json"))?;
        }
        ModelKind::Baseline => {
            let (results, summary) = train::multi_seed_baseline(&data, &cfg.train)?;
            for (res, trained) in &results {
                let tag = format!("seed{:02}", res.seed);
                let meta = serde_json::json!({
                    "seed": res.seed,
                    "config_hash": config_hash,
                    "best_val": res.best_val,
                    "best_step": res.best_step,
                    "test_rel_mse": res.test_rel_mse,
                });
                let ckpt_file = out.join(format!("baseline_{tag}.ckpt"));
                ckpt::save_checkpoint(
                    &ckpt_file,
                    &ckpt::baseline_checkpoint(
                        &trained.best_net,
                        &data.grid,
                        Some(&trained.adam),
                        meta,
                    ),
                )?;
                export::write_curve_csv(&out.join(format!("curve_{tag}.csv")), &trained.curve)?;
                println!(
                    "seed {}: best val {:.6e} at step {}, test relative MSE {:.6e}",
                    res.seed, res.best_val, res.best_step, res.test_rel_mse
                );
                results_json.push(serde_json::to_value(res).unwrap());
            }
            println!(
                "test relative MSE over seeds: min {:.6e} / median {:.6e} / max {:.6e}",
                summary.min, summary.median, summary.max
            );
            let mut run = RunManifest::new("train-baseline", &cfg)?;
            run.duration_secs = started.elapsed().as_secs_f64();
            run.extra = serde_json::json!({
                "results": results_json,
                "summary": summary,
                "dataset": data_dir.display().to_string(),
            });
            run.write(&out.join("run_manifest.json"))?;
        }
    }
    Ok(())
}

fn cmd_eval(
    ckpt_path: &Path,
    data_dir: &Path,
    config_path: &Path,
    traj_index: usize,
    out_root: &Path,
    format: Format,
) -> stringph::Result<()> {
    let started = Instant::now();
    let cfg = load_config(config_path)?;
    let out = out_root.join("eval");
    ensure_dir(&out)?;
    let checkpoint = ckpt::load_checkpoint(ckpt_path)?;
    let dataset_manifest = datagen::load_manifest(data_dir)?;
    let test = datagen::load_split(data_dir, &dataset_manifest, "test")?;
    if test.is_empty() {
        return Err(Error::config("no test trajectories in dataset"));
    }
    if traj_index >= test.len() {
        return Err(Error::config(format!(
            "trajectory index {traj_index} out of range (have {})",
            test.len()
        )));
    }
    let x_o = dataset_manifest.observation_node;

    let mut metrics = serde_json::Map::new();
    let reference = &test[traj_index];
    let predicted;
    match &checkpoint.arch {
        ckpt::ModelArch::Phnn { .. } => {
            let model = ckpt::build_phnn(&checkpoint)?;
            let mut per_traj = Vec::new();
            for traj in &test {
                let pred = eval::recursive_rollout_phnn(&model, traj)?;
                per_traj.push(eval::relative_mse(traj, &pred));
            }
            let mean = per_traj.iter().sum::<f64>() / per_traj.len() as f64;
            metrics.insert("relative_mse_per_trajectory".into(), serde_json::json!(per_traj));
            metrics.insert("relative_mse_mean".into(), serde_json::json!(mean));
            let report = eval::parameter_errors(&model, &dataset_manifest.params);
            metrics.insert(
                "parameter_errors".into(),
                serde_json::to_value(&report).unwrap(),
            );
            println!("relative MSE (mean over {} test trajectories): {mean:.6e}", test.len());
            for e in &report {
                println!(
                    "  {:>9}: value {:.6e}, relative error {:.3e}",
                    e.name,
                    e.value,
                    e.rel_abs_error.unwrap_or(f64::NAN)
                );
            }
            if format == Format::Png {
                let labels: Vec<&str> = report.iter().map(|e| e.name.as_str()).collect();
                let errors: Vec<f64> =
                    report.iter().map(|e| e.rel_abs_error.unwrap_or(0.0)).collect();
                export::save_bar_chart_png(&out.join("parameter_errors.png"), &labels, &errors)?;
            }
            predicted = eval::recursive_rollout_phnn(&model, reference)?;
        }
        ckpt::ModelArch::Baseline { .. } => {
            let (net, _) = ckpt::build_baseline(&checkpoint)?;
            let mut per_traj = Vec::new();
            for traj in &test {
                let pred = eval::recursive_rollout_baseline(&net, traj)?;
                per_traj.push(eval::relative_mse(traj, &pred));
            }
            let mean = per_traj.iter().sum::<f64>() / per_traj.len() as f64;
            metrics.insert("relative_mse_per_trajectory".into(), serde_json::json!(per_traj));
            metrics.insert("relative_mse_mean".into(), serde_json::json!(mean));
            println!("relative MSE (mean over {} test trajectories): {mean:.6e}", test.len());
            predicted = eval::recursive_rollout_baseline(&net, reference)?;
        }
    }

    // displacement error map
    let map = eval::displacement_error_map(reference, &predicted);
    metrics.insert("error_map_max".into(), serde_json::json!(map.max));
    metrics.insert("error_map_mean".into(), serde_json::json!(map.mean));
    export::write_matrix_csv(&out.join("error_map.csv"), map.rows, map.m, &map.data)?;
    if format == Format::Png {
        export::save_error_map_png(&out.join("error_map.png"), &map)?;
    }

    // spectrogram triptych at the observation node (momentum)
    let ref_series = reference.node_series(x_o, true);
    let pred_series = predicted.node_series(x_o, true);
    let spec_ref = eval::spectrogram(&ref_series, cfg.time.fs, &cfg.eval.stft)?;
    let spec_pred = eval::spectrogram(&pred_series, cfg.time.fs, &cfg.eval.stft)?;
    let spec_err = eval::spectrogram_error(&spec_ref, &spec_pred)?;
    if format == Format::Png {
        export::save_spectrogram_png(&out.join("spectrogram_reference.png"), &spec_ref)?;
        export::save_spectrogram_png(&out.join("spectrogram_predicted.png"), &spec_pred)?;
        let frames = spec_err.len();
        let bins = spec_ref.bins;
        let mut flat = vec![0.0; frames * bins];
        for (f, row) in spec_err.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                flat[(bins - 1 - b) * frames + f] = v;
            }
        }
        export::save_heatmap_png(&out.join("spectrogram_error.png"), bins, frames, &flat)?;
    }

    let mut run = RunManifest::new("eval", &cfg)?;
    run.duration_secs = started.elapsed().as_secs_f64();
    run.outputs = vec!["metrics.json".into(), "error_map.csv".into()];
    run.extra = serde_json::json!({
        "checkpoint": ckpt_path.display().to_string(),
        "dataset": data_dir.display().to_string(),
        "trajectory_index": traj_index,
    });
    run.write(&out.join("run_manifest.json"))?;
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_vec_pretty(&serde_json::Value::Object(metrics)).unwrap(),
    )?;
    Ok(())
}

fn cmd_inspect(
    file: &Path,
    node: Option<usize>,
    out_root: &Path,
    format: Format,
) -> stringph::Result<()> {
    let bytes = std::fs::read(file)?;
    if bytes.len() >= 8 && &bytes[..8] == datagen::TRAJ_MAGIC {
        let traj = datagen::trajectory_from_bytes(&bytes)?;
        println!("trajectory file {}", file.display());
        println!("  split {} index {} seed {}", traj.meta.split, traj.meta.index, traj.meta.seed);
        println!(
            "  grid N = {} (interior {}), l0 = {} m, fs = {} Hz, steps = {}",
            traj.meta.grid.n,
            traj.meta.interior,
            traj.meta.grid.l0,
            traj.meta.time.fs,
            traj.steps()
        );
        println!(
            "  excitation: f_amp {:.3} N, t_e {:.4} s, node {}",
            traj.meta.excitation.f_amp, traj.meta.excitation.t_e, traj.meta.excitation.node_e
        );
        let max_q = traj.q.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let max_p = traj.p.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        println!("  max |q| = {max_q:.6e} m, max |p| = {max_p:.6e}");
        if let Some(n) = node {
            if n < 1 || n > traj.meta.interior {
                return Err(Error::config(format!(
                    "node {n} outside interior 1..={}",
                    traj.meta.interior
                )));
            }
            let series = traj.node_series(n, false);
            let path = out_root.join(format!("node_{n:03}.csv"));
            export::write_node_csv(&path, traj.meta.time.dt(), &series)?;
            println!("  wrote {}", path.display());
            if format == Format::Json {
                println!("{}", serde_json::to_string(&traj.meta).unwrap());
            }
        }
    } else if bytes.len() >= 8 && &bytes[..8] == ckpt::CKPT_MAGIC {
        let c = ckpt::checkpoint_from_bytes(&bytes)?;
        println!("checkpoint file {}", file.display());
        println!("  arch: {:?}", c.arch);
        println!("  meta: {}", c.meta);
        let mut total = 0usize;
        for (name, t, trainable) in &c.entries {
            println!(
                "  {:>16}  {:?}  {} values{}",
                name,
                t.shape,
                t.data.len(),
                if *trainable { "" } else { "  (frozen)" }
            );
            total += t.data.len();
        }
        println!("  total parameters: {total}");
        if let Some(adam) = &c.adam {
            println!("  optimizer state at step {}", adam.t);
        }
    } else {
        return Err(Error::format(
            "unknown file type (expected trajectory or checkpoint magic)",
        ));
    }
    Ok(())
}
