//! Subcommands. Every command reads its inputs, writes only under the
//! configured output directory and reports a one-line summary on stdout.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lagdyn_core::dynamics::{estimate_dynamic_terms, synthesize_tau, DynamicTerms};
use lagdyn_core::energy::energy_trace;
use lagdyn_core::eval::{boundary_recall, f1_at_k, frame_accuracy, segmental_edit};
use lagdyn_core::kinematics::{extract_coordinates, GeneralizedState};
use lagdyn_core::nn::{gradcheck, GradCheckConfig, ParamSet, ParameterBundle, Tape};
use lagdyn_core::objective::record_objective;
use lagdyn_core::oracle::{
    frame_terms, generate_labeled_dataset, generate_sequence, sample_plans, sequence_rng, LabeledSequence, LinkChain, NoiseConfig,
    PlanConfig, Regime, SequencePlan, SimulationConfig, TorqueLaw, CLASS_SINUSOID, STANDARD_GRAVITY,
};
use lagdyn_core::signals::{gate_hierarchy, propose_boundaries, salient_signals, FeatureMap, GateSignals};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{ConfigArgs, RunConfig};
use crate::error::{under, write_file, AppError, AppResult};
use crate::formats::{read_dataset, read_labels, read_poses, read_topology, write_dataset};
use crate::train::{evaluate, run_training, EpochLog, Summary, TrainingSequence};

#[derive(Debug, Parser)]
#[command(
    name = "lagdyn",
    version,
    about = "Lagrangian dynamics estimation, energy auditing and boundary proposals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration and every file it names.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generalized coordinates, velocities and accelerations of a pose file.
    Coords {
        /// JSON Lines pose file.
        #[arg(long)]
        poses: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Simulate a labeled dataset on the analytic chain.
    GenerateOracle {
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit the dynamic-term estimators to recorded torques.
    TrainDynamics {
        /// Write the checkpoint in the binary layout instead of JSON.
        #[arg(long)]
        binary: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Per-frame kinetic energy, power, work and energy residual.
    EnergyAudit {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Salient dynamic signals and the refined gates of every stage.
    Signals {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Boundary proposals from a salient signal.
    SegmentBoundaries {
        #[command(flatten)]
        source: SourceArgs,
        /// Frame tolerance for the recall against recorded boundaries.
        #[arg(long, default_value_t = 5)]
        tolerance: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Accuracy, edit score and F1 overlap of two label tables.
    Eval {
        /// Predicted `frame,label` table.
        #[arg(long)]
        predicted: PathBuf,
        /// Ground-truth `frame,label` table.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Reverse-mode gradient of the training objective against central differences.
    Gradcheck {
        /// Number of sampled parameters.
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Frames of the simulated probe sequence.
        #[arg(long, default_value_t = 24)]
        frames: usize,
        /// Central-difference step; large enough that the loss difference
        /// resolves well above rounding of a loss of order one.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    pub sequences: usize,
    #[arg(long, default_value_t = 500)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub links: usize,
    /// Torque regimes per sequence.
    #[arg(long, default_value_t = 3)]
    pub regimes: usize,
    /// Shortest regime in frames.
    #[arg(long, default_value_t = 60)]
    pub min_segment: usize,
    /// Seconds per frame.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Mass of every link (kg).
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,
    /// Length of every link (m).
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    /// Viscous friction of every joint.
    #[arg(long, default_value_t = 0.1)]
    pub friction: f64,
    /// Per-frame torque noise.
    #[arg(long, default_value_t = 0.1)]
    pub drive_std: f64,
    /// Jitter added to recorded angles.
    #[arg(long, default_value_t = 0.0)]
    pub observation_std: f64,
    /// Output file name under the output directory.
    #[arg(long, default_value = "oracle.jsonl")]
    pub name: String,
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Index of the sequence across the configured datasets.
    #[arg(long, default_value_t = 0)]
    pub sequence: usize,
    /// Use torques synthesized by this checkpoint instead of the oracle terms.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Validate { config } => validate(&config.resolve()?),
        Command::Coords { poses, config } => coords(&poses, &config.resolve()?),
        Command::GenerateOracle { oracle, config } => generate_oracle(&oracle, &config.resolve()?),
        Command::TrainDynamics { binary, config } => train_dynamics(binary, &config.resolve()?),
        Command::EnergyAudit { source, config } => energy_audit(&source, &config.resolve()?),
        Command::Signals { source, config } => signals(&source, &config.resolve()?),
        Command::SegmentBoundaries { source, tolerance, config } => segment_boundaries(&source, tolerance, &config.resolve()?),
        Command::Eval { predicted, truth } => eval(&predicted, &truth),
        Command::Gradcheck {
            samples,
            frames,
            step,
            tolerance,
            config,
        } => grad_check(samples, frames, step, tolerance, &config.resolve()?),
    }
}

fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> AppResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| AppError::Data(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AppError::Data(e.to_string()))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn load_data(config: &RunConfig) -> AppResult<Vec<(LinkChain, LabeledSequence)>> {
    if config.data.is_empty() {
        return Err(AppError::Config("no data paths configured".into()));
    }
    let mut all = Vec::new();
    for path in &config.data {
        all.extend(read_dataset(path)?);
    }
    Ok(all)
}

pub fn validate(config: &RunConfig) -> AppResult<()> {
    config.validate(true)?;
    if let Some(path) = &config.topology {
        let t = read_topology(path)?;
        println!("topology: {} joints, {} generalized coordinates", t.joint_count(), t.dof());
    }
    if !config.data.is_empty() {
        let data = load_data(config)?;
        let frames: usize = data.iter().map(|(_, s)| s.frames()).sum();
        println!("data: {} sequences, {frames} frames", data.len());
    }
    println!("configuration ok");
    Ok(())
}

pub fn coords(poses: &Path, config: &RunConfig) -> AppResult<()> {
    config.validate(true)?;
    let topology_path = config
        .topology
        .as_ref()
        .ok_or_else(|| AppError::Config("coords needs a topology".into()))?;
    let topology = read_topology(topology_path)?;
    let pose = read_poses(poses, topology.dim())?;
    let q = extract_coordinates(&pose, &topology)?;
    let d = topology.dof();
    let state = GeneralizedState::from_coordinates(q, pose.frames(), d, config.padding())?;
    let mut header = vec!["t".to_string()];
    header.extend(numbered("q", d).chain(numbered("qd", d)).chain(numbered("qdd", d)));
    let rows = (0..state.frames).map(|t| {
        let mut row = vec![t.to_string()];
        for v in [state.q_at(t), state.qd_at(t), state.qdd_at(t)] {
            row.extend(v.iter().map(f64::to_string));
        }
        row
    });
    let path = under(&config.output_dir, "coords.csv");
    write_file(&path, csv_text(&header, rows)?)?;
    println!("wrote {} frames x {d} coordinates to {}", state.frames, path.display());
    Ok(())
}

pub fn generate_oracle(args: &OracleArgs, config: &RunConfig) -> AppResult<()> {
    config.validate(false)?;
    let n = args.links;
    let chain = LinkChain::new(vec![args.mass; n], vec![args.length; n], STANDARD_GRAVITY, vec![args.friction; n])?;
    let plan = PlanConfig {
        frames: args.frames,
        regimes: args.regimes,
        min_segment: args.min_segment,
        ..PlanConfig::default()
    };
    let plans = sample_plans(n, &plan, args.sequences, config.seed)?;
    let noise = NoiseConfig {
        drive_std: args.drive_std,
        observation_std: args.observation_std,
    };
    let data = generate_labeled_dataset(
        &chain,
        &plans,
        &noise,
        &SimulationConfig::new(args.dt, 0),
        config.seed.wrapping_add(1),
    )?;
    let path = under(&config.output_dir, &args.name);
    write_dataset(&path, &chain, &data)?;
    println!("wrote {} sequences to {}", data.len(), path.display());
    Ok(())
}

fn training_sequences(data: &[(LinkChain, LabeledSequence)], config: &RunConfig) -> AppResult<Vec<TrainingSequence>> {
    let dof = data.first().map_or(0, |(_, s)| s.dof);
    if data.iter().any(|(_, s)| s.dof != dof) {
        return Err(AppError::Data("sequences differ in degrees of freedom".into()));
    }
    Ok(data
        .iter()
        .map(|(_, s)| TrainingSequence::from_labeled(s, config.padding()))
        .collect::<Result<_, _>>()?)
}

/// Number of trailing sequences held out from training.
pub fn holdout_count(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).round() as usize).min(total.saturating_sub(1))
}

#[derive(Debug, Serialize)]
struct SummaryRecord {
    l_torque: f64,
    l_ec: f64,
    mean_abs_residual: f64,
    sequences: usize,
}

impl From<Summary> for SummaryRecord {
    fn from(s: Summary) -> Self {
        Self {
            l_torque: s.l_torque,
            l_ec: s.l_ec,
            mean_abs_residual: s.mean_abs_residual,
            sequences: s.sequences,
        }
    }
}

pub fn metrics_csv(log: &[EpochLog]) -> AppResult<String> {
    let header = ["epoch", "l_torque", "l_ec", "mean_abs_residual", "lambda_ec"].map(String::from);
    csv_text(
        &header,
        log.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.l_torque.to_string(),
                r.l_ec.to_string(),
                r.mean_abs_residual.to_string(),
                r.lambda_ec.to_string(),
            ]
        }),
    )
}

pub fn train_dynamics(binary: bool, config: &RunConfig) -> AppResult<()> {
    config.validate(true)?;
    let data = load_data(config)?;
    let sequences = training_sequences(&data, config)?;
    let held = holdout_count(sequences.len(), config.holdout_fraction);
    let (train, holdout) = sequences.split_at(sequences.len() - held);
    let tc = config.train();
    let outcome = run_training(train, &tc, |r| {
        eprintln!(
            "epoch {:>4}  l_torque {:.6}  l_ec {:.6}  mean|r_E| {:.6}  lambda {:.4}",
            r.epoch, r.l_torque, r.l_ec, r.mean_abs_residual, r.lambda_ec
        )
    })?;
    let out = &config.output_dir;
    write_file(&under(out, "metrics.csv"), metrics_csv(&outcome.log)?)?;
    let ckpt_path = under(out, if binary { "checkpoint.bin" } else { "checkpoint.json" });
    checkpoint::save(&ckpt_path, &outcome.bundle)?;
    let train_summary = evaluate(&outcome.bundle, train, &tc.objective)?;
    let mut summary = serde_json::Map::new();
    summary.insert(
        "train".into(),
        serde_json::to_value(SummaryRecord::from(train_summary)).expect("summary"),
    );
    if !holdout.is_empty() {
        let h = evaluate(&outcome.bundle, holdout, &tc.objective)?;
        summary.insert("holdout".into(), serde_json::to_value(SummaryRecord::from(h)).expect("summary"));
    }
    write_file(
        &under(out, "summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary"),
    )?;
    println!(
        "trained {} epochs on {} sequences ({} held out); final l_torque {:.6}; checkpoint {}",
        outcome.log.len(),
        train.len(),
        holdout.len(),
        train_summary.l_torque,
        ckpt_path.display()
    );
    Ok(())
}

/// State and dynamic terms of one sequence: from the analytic chain with the
/// recorded torque, or from a trained bundle with its synthesized torque.
pub fn sequence_terms(
    chain: &LinkChain,
    seq: &LabeledSequence,
    bundle: Option<&ParameterBundle>,
    config: &RunConfig,
) -> AppResult<(GeneralizedState, DynamicTerms)> {
    let state = seq.state(config.padding())?;
    let terms = match bundle {
        Some(b) => {
            if b.dof() != seq.dof {
                return Err(AppError::Data("checkpoint and sequence differ in degrees of freedom".into()));
            }
            let mut terms = estimate_dynamic_terms(b, &state, config.epsilon)?;
            synthesize_tau(&mut terms, &state)?;
            terms
        }
        None => frame_terms(chain, &state, &seq.tau, seq.dt)?,
    };
    Ok((state, terms))
}

fn pick_sequence(source: &SourceArgs, config: &RunConfig) -> AppResult<(LinkChain, LabeledSequence, Option<ParameterBundle>)> {
    config.validate(true)?;
    let mut data = load_data(config)?;
    if source.sequence >= data.len() {
        return Err(AppError::Config(format!(
            "sequence {} out of range ({} available)",
            source.sequence,
            data.len()
        )));
    }
    let (chain, seq) = data.swap_remove(source.sequence);
    let bundle = source.checkpoint.as_deref().map(checkpoint::load).transpose()?;
    Ok((chain, seq, bundle))
}

pub fn energy_audit(source: &SourceArgs, config: &RunConfig) -> AppResult<()> {
    let (chain, seq, bundle) = pick_sequence(source, config)?;
    let (state, terms) = sequence_terms(&chain, &seq, bundle.as_ref(), config)?;
    let trace = energy_trace(&terms, &state, &config.energy())?;
    let header = ["t", "E_K", "ΔE_K", "P", "W", "r_E", "mask"].map(String::from);
    let rows = (0..trace.kinetic.len()).map(|t| {
        vec![
            t.to_string(),
            trace.kinetic[t].to_string(),
            trace.delta_kinetic[t].to_string(),
            trace.power[t].to_string(),
            trace.work[t].to_string(),
            trace.residual[t].to_string(),
            u8::from(trace.mask[t]).to_string(),
        ]
    });
    let path = under(&config.output_dir, "energy_audit.csv");
    write_file(&path, csv_text(&header, rows)?)?;
    println!(
        "mean |r_E| {:.6} over {} unmasked frames; loss {:.6}; wrote {}",
        trace.mean_abs_residual(),
        trace.unmasked(),
        trace.loss(config.huber_knee),
        path.display()
    );
    Ok(())
}

/// Gates use the checkpoint's stages, or a freshly seeded bundle when the
/// torques come from the oracle.
fn gate_bundle(bundle: Option<ParameterBundle>, dof: usize, config: &RunConfig) -> AppResult<ParameterBundle> {
    match bundle {
        Some(b) => Ok(b),
        None => Ok(ParameterBundle::new(dof, config.bundle(), config.seed)?),
    }
}

fn sequence_signals(
    chain: &LinkChain,
    seq: &LabeledSequence,
    bundle: Option<&ParameterBundle>,
    config: &RunConfig,
) -> AppResult<GateSignals> {
    let (state, terms) = sequence_terms(chain, seq, bundle, config)?;
    Ok(salient_signals(&terms.tau, &state.qd, state.frames, state.dof)?)
}

pub fn signals(source: &SourceArgs, config: &RunConfig) -> AppResult<()> {
    let (chain, seq, bundle) = pick_sequence(source, config)?;
    let g = sequence_signals(&chain, &seq, bundle.as_ref(), config)?;
    let gates_from = gate_bundle(bundle, seq.dof, config)?;
    let frames = g.frames();
    let channels = gates_from.config().channels;
    let h = FeatureMap::temporal(channels, frames, vec![0.0; channels * frames])?;
    let (_, gates) = gate_hierarchy(&h, &g, &gates_from.gates)?;
    let mut header: Vec<String> = ["t", "g_P", "g_τ", "g_τ̇"].map(String::from).to_vec();
    for s in 0..gates.len() {
        header.extend(["P", "τ", "τ̇"].map(|k| format!("gate{s}_{k}")));
    }
    let [p, tau, dtau] = g.channels();
    let rows = (0..frames).map(|t| {
        let mut row = vec![t.to_string(), p[t].to_string(), tau[t].to_string(), dtau[t].to_string()];
        for m in &gates {
            row.extend((0..3).map(|k| m.get(k, t).to_string()));
        }
        row
    });
    let path = under(&config.output_dir, "signals.csv");
    write_file(&path, csv_text(&header, rows)?)?;
    println!("wrote {frames} frames and {} gate stages to {}", gates.len(), path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct BoundaryRecord {
    frame: usize,
    prominence: f64,
}

pub fn segment_boundaries(source: &SourceArgs, tolerance: usize, config: &RunConfig) -> AppResult<()> {
    let (chain, seq, bundle) = pick_sequence(source, config)?;
    let g = sequence_signals(&chain, &seq, bundle.as_ref(), config)?;
    let found = propose_boundaries(&g.select(config.boundary_signal), &config.detector());
    let records: Vec<BoundaryRecord> = found
        .iter()
        .map(|b| BoundaryRecord {
            frame: b.frame,
            prominence: b.prominence,
        })
        .collect();
    let path = under(&config.output_dir, "boundaries.json");
    write_file(&path, serde_json::to_string_pretty(&records).expect("boundaries"))?;
    let frames: Vec<usize> = found.iter().map(|b| b.frame).collect();
    let recall = boundary_recall(&frames, &seq.boundaries, tolerance).map_or_else(|| "n/a".to_string(), |r| format!("{:.1}%", 100.0 * r));
    println!(
        "{} boundaries proposed; recall within ±{tolerance} frames of {} recorded: {recall}; wrote {}",
        found.len(),
        seq.boundaries.len(),
        path.display()
    );
    Ok(())
}

/// `Acc Edit F1@10 F1@25 F1@50`, one header row and one value row.
pub fn metric_table(pred: &[usize], truth: &[usize]) -> AppResult<String> {
    let values = [
        frame_accuracy(pred, truth)?,
        segmental_edit(pred, truth)?,
        f1_at_k(pred, truth, 0.10)?,
        f1_at_k(pred, truth, 0.25)?,
        f1_at_k(pred, truth, 0.50)?,
    ];
    let header = ["Acc", "Edit", "F1@10", "F1@25", "F1@50"];
    let head: Vec<String> = header.iter().map(|h| format!("{h:>8}")).collect();
    let row: Vec<String> = values.iter().map(|v| format!("{v:>8.2}")).collect();
    Ok(format!("{}\n{}\n", head.join(""), row.join("")))
}

pub fn eval(predicted: &Path, truth: &Path) -> AppResult<()> {
    let pred = read_labels(predicted)?;
    let gt = read_labels(truth)?;
    if pred.len() != gt.len() {
        return Err(AppError::Data(format!(
            "label tables differ in length ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    print!("{}", metric_table(&pred, &gt)?);
    Ok(())
}

/// A short sinusoidally driven two-link sequence, so torque, power and
/// kinetic energy are all far from zero. Frames are 0.1 s apart so the
/// per-frame energy change and work clear the residual mask on every frame.
pub fn probe_sequence(frames: usize, seed: u64) -> AppResult<LabeledSequence> {
    let chain = LinkChain::new(vec![1.0, 1.0], vec![1.0, 1.0], STANDARD_GRAVITY, vec![0.1, 0.1])?;
    let plan = SequencePlan {
        initial_q: vec![0.4, -0.3],
        initial_qd: vec![0.8, -0.6],
        regimes: vec![Regime {
            frames,
            law: TorqueLaw::Sinusoid {
                offset: vec![2.0, -1.0],
                amplitude: vec![1.5, 1.0],
                frequency: 1.0,
            },
            class: CLASS_SINUSOID,
        }],
    };
    let noise = NoiseConfig {
        drive_std: 0.1,
        observation_std: 0.0,
    };
    Ok(generate_sequence(
        &chain,
        &plan,
        &noise,
        &SimulationConfig {
            substeps: 10,
            ..SimulationConfig::new(0.1, 0)
        },
        &mut sequence_rng(seed, 0),
    )?)
}

pub fn grad_check(samples: usize, frames: usize, step: f64, tolerance: f64, config: &RunConfig) -> AppResult<()> {
    config.validate(false)?;
    let seq = probe_sequence(frames, config.seed)?;
    let probe = TrainingSequence::from_labeled(&seq, config.padding())?;
    let mut bundle = ParameterBundle::new(2, config.bundle(), config.seed)?;
    let objective = config.objective();
    let weight = if config.lambda_ec > 0.0 { config.lambda_ec } else { 1.0 };
    let mut tape = Tape::new();
    let values = record_objective(&mut tape, &bundle, &probe.state, &probe.target, weight, &objective)?.values(&tape, &objective)?;
    drop(tape);
    let check = GradCheckConfig {
        step,
        samples,
        seed: config.seed,
        ..GradCheckConfig::default()
    };
    let full = gradcheck(
        &mut bundle,
        |b, tape| Ok(record_objective(tape, b, &probe.state, &probe.target, weight, &objective)?.total),
        check,
    )?;
    // the energy term alone, so its gradient is not drowned by the torque term
    let energy = gradcheck(
        &mut bundle,
        |b, tape| {
            Ok(record_objective(tape, b, &probe.state, &probe.target, weight, &objective)?
                .energy
                .loss)
        },
        check,
    )?;
    println!(
        "L_torque {:.6}, L_EC {:.3e} (weight {weight}) over {} unmasked frames; {} parameters",
        values.torque_loss,
        values.energy_loss,
        values.unmasked,
        bundle.param_count()
    );
    for (name, report) in [("full objective", &full), ("energy term", &energy)] {
        println!(
            "{name}: checked {}, {} skipped at kinks; max relative error {:.3e} (tolerance {tolerance:.1e})",
            report.checked, report.skipped, report.max_rel_error
        );
    }
    for report in [full, energy] {
        if !(report.max_rel_error < tolerance) {
            return Err(AppError::Numerical(format!(
                "gradient mismatch {:.3e} at {:?}",
                report.max_rel_error, report.worst
            )));
        }
    }
    Ok(())
}
