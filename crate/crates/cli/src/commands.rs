//! The subcommands. Each one reads the experiment config, works through the
//! selected seeds, and leaves plain CSV (or JSONL) files in the experiment
//! directory, so every later stage and every outside tool can pick the
//! results up without this binary.
//!
//! Layout under the experiment root:
//!
//! ```text
//! config.toml                    copy of the description the run used
//! extrapolation.csv finetune.csv speed_accuracy.csv spearman.txt summary.txt
//! seed_0001/
//!     archive/                   parameter checkpoints
//!     metrics.csv evals.csv      training curves
//!     extrapolation.csv          accuracy beyond the trained delays
//!     slowpoints.jsonl pca.csv pca_variance.csv
//!     trajectories.csv branches.csv displacement.csv accuracy_drops.csv
//!     finetune.csv
//! ```
//!
//! Pooled files at the root are rebuilt from whatever per-seed files exist,
//! so re-running a stage for one seed refreshes the totals without touching
//! the other seeds' work.

use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use memlab_core::backtrack::{
    accuracy_drop_stats, backtrack_trajectories, branch_events, displacement_check, AccuracyDropConfig,
    BranchConfig,
};
use memlab_core::nncore::{init_params, RnnParameters};
use memlab_core::rng::{mix, stream_rng, Stream};
use memlab_core::slowpoint::{
    class_seeds, distinct_points, find_slow_point, speed_accuracy_table, DescentOptions, FixedInput,
    SlowPointRecord, TableConfig,
};
use memlab_core::speedreg::{com_targets, fine_tune, slow_point_targets, FineTuneConfig, FineTuneOutcome};
use memlab_core::taskgen::{render_extrapolation_trial, Corpus, TaskKind};
use memlab_core::trainer::{
    evaluate, evaluate_matching, extrapolation_curve, scaled_offset, train, CheckpointArchive, EvalReport,
};
use memlab_core::Scalar;

use crate::config::ExperimentConfig;
use crate::corpus::{build_corpus, Split};
use crate::pca;
use crate::{CliError, CliResult};

// Stream discriminators hashed together with the run seed so no two stages
// consume the same random sequence.
const TAG_INIT: u64 = 1;
const TAG_EVAL: u64 = 2;
const TAG_EXTRAPOLATE: u64 = 3;
const TAG_ANALYSIS: u64 = 4;
const TAG_PCA: u64 = 5;
const TAG_TABLE: u64 = 6;
const TAG_BRANCH: u64 = 7;
const TAG_DROPS: u64 = 8;
const TAG_TARGETS: u64 = 9;
const TAG_FINETUNE: u64 = 10;

/// Trials per class when sampling delay-period states for the PCA picture.
const PCA_TRIALS_PER_CLASS: usize = 20;

/// A loaded config plus the resolved output directory and seed selection.
#[derive(Debug)]
pub struct Workspace {
    pub cfg: ExperimentConfig,
    /// Verbatim text of the config file, copied into the experiment dir.
    pub cfg_text: String,
    pub root: PathBuf,
    /// Seeds this invocation works on (all of them unless `--seed` narrows).
    pub seeds: Vec<u64>,
}

impl Workspace {
    pub fn open(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        let cfg_text = fs::read_to_string(config_path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config_path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&cfg_text)
            .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
        cfg.validate()?;
        let seeds = match seed {
            None => cfg.seeds.clone(),
            Some(s) if cfg.seeds.contains(&s) => vec![s],
            Some(s) => {
                return Err(CliError::Config(format!("--seed {s} is not in the configured seeds {:?}", cfg.seeds)))
            }
        };
        let root = out.unwrap_or_else(|| cfg.out_dir());
        Ok(Workspace { cfg, cfg_text, root, seeds })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed:04}"))
    }

    fn archive_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("archive")
    }

    fn load_archive(&self, seed: u64) -> CliResult<CheckpointArchive<Scalar>> {
        let dir = self.archive_dir(seed);
        if !dir.is_dir() {
            return Err(CliError::MissingInput(format!(
                "no checkpoint archive at {}; run the train subcommand first",
                dir.display()
            )));
        }
        Ok(CheckpointArchive::read_dir(&dir)?)
    }

    /// Configured seeds whose archives exist on disk, ignoring `--seed`.
    /// Pooled analyses always draw on every trained network.
    fn archived_seeds(&self) -> Vec<u64> {
        self.cfg.seeds.iter().copied().filter(|&s| self.archive_dir(s).is_dir()).collect()
    }

    fn train_corpus(&self) -> CliResult<Corpus<Scalar>> {
        build_corpus(&self.cfg.dataset, Split::Train)
    }

    fn eval_corpus(&self) -> CliResult<Corpus<Scalar>> {
        build_corpus(&self.cfg.dataset, Split::Eval)
    }

    fn vocabulary(&self) -> Vec<usize> {
        (0..self.cfg.dataset.classes).collect()
    }

    /// Delay at which class seeds are collected, kept inside the trained
    /// range when the trial length is short.
    fn seed_delay(&self) -> usize {
        self.cfg.analysis.seed_delay.min(self.cfg.task.t_max - 1)
    }
}

fn final_params(archive: &CheckpointArchive<Scalar>) -> CliResult<RnnParameters<Scalar>> {
    archive
        .final_snapshot()
        .map(|s| s.params.clone())
        .ok_or_else(|| CliError::MissingInput("the checkpoint archive holds no snapshots".into()))
}

fn join_csv(fields: &[&dyn Display]) -> String {
    fields.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",")
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Rebuild a pooled CSV at the experiment root by concatenating the rows of
/// every per-seed copy that exists.
fn pool_csv(ws: &Workspace, file_name: &str, header: &str) -> CliResult<()> {
    let mut rows = Vec::new();
    for &seed in &ws.cfg.seeds {
        let path = ws.seed_dir(seed).join(file_name);
        let Ok(text) = fs::read_to_string(&path) else { continue };
        rows.extend(text.lines().skip(1).map(str::to_owned));
    }
    write_csv(&ws.root.join(file_name), header, &rows)
}

/// Rows of a CSV written by this tool, split into fields, header dropped.
fn read_csv(path: &Path) -> Option<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).ok()?;
    Some(text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn output_classes(task: TaskKind, n_classes: usize) -> usize {
    match task {
        TaskKind::Classification => n_classes + 1,
        TaskKind::Matching => 3,
    }
}

// ---------------------------------------------------------------- train --

pub fn cmd_train(ws: &Workspace) -> CliResult<()> {
    fs::create_dir_all(&ws.root)?;
    fs::write(ws.root.join("config.toml"), &ws.cfg_text)?;
    let corpus = ws.train_corpus()?;
    let held_out = ws.eval_corpus()?;
    let schedule = ws.cfg.schedule()?;
    let task = ws.cfg.task_kind();
    let n_out = output_classes(task, corpus.n_classes());
    let nominal_delay = ws.cfg.task.t_max - 1;

    for &seed in &ws.seeds {
        let init = init_params::<Scalar>(
            ws.cfg.unit_type(),
            ws.cfg.network.d,
            corpus.input_width(),
            n_out,
            ws.cfg.lstm_output(),
            mix(&[seed, TAG_INIT]),
        );
        let outcome = train(init, &corpus, &schedule, &ws.cfg.train_config(seed))?;
        let dir = ws.seed_dir(seed);
        outcome.archive.write_dir(&dir.join("archive"))?;

        let loss_rows: Vec<String> =
            outcome.loss_history.iter().enumerate().map(|(i, l)| format!("{},{l}", i as u64 + 1)).collect();
        write_csv(&dir.join("metrics.csv"), "step,loss", &loss_rows)?;
        let eval_rows: Vec<String> =
            outcome.eval_history.iter().map(|p| format!("{},{},{}", p.step, p.stage, p.accuracy)).collect();
        write_csv(&dir.join("evals.csv"), "step,stage,accuracy", &eval_rows)?;

        let mut rng = stream_rng(mix(&[seed, TAG_EVAL]), Stream::Eval);
        let trials = ws.cfg.analysis.eval_trials;
        let noise = ws.cfg.task.noise_scale;
        let report = match task {
            TaskKind::Classification => {
                evaluate(&outcome.final_params, &held_out, nominal_delay, trials, noise, &mut rng)?
            }
            TaskKind::Matching => {
                evaluate_matching(&outcome.final_params, &held_out, nominal_delay, trials, noise, &mut rng)?
            }
        };
        println!(
            "seed {seed}: {} steps, final loss {:.4}, held-out accuracy {:.4} (null {:.4}) at delay {nominal_delay}",
            outcome.archive.final_step(),
            outcome.loss_history.last().copied().unwrap_or(f64::NAN),
            report.response_accuracy(),
            report.null_accuracy(),
        );
        if let Some(div) = &outcome.diverged {
            println!("seed {seed}: warning: loss became non-finite at step {}; archive ends there", div.step);
        }
    }
    Ok(())
}

// ---------------------------------------------------------- extrapolate --

fn extrapolation_rows(reports: &[EvalReport], delays: &[usize], seed: u64, protocol: &str) -> Vec<String> {
    let mut rows = Vec::new();
    for (&delay, report) in delays.iter().zip(reports) {
        rows.push(join_csv(&[&delay, &"all", &report.response_accuracy(), &report.n_trials(), &seed, &protocol]));
        for class in 0..report.per_class_total.len() {
            if let Some(acc) = report.class_accuracy(class) {
                rows.push(join_csv(&[&delay, &class, &acc, &report.per_class_total[class], &seed, &protocol]));
            }
        }
    }
    rows
}

const EXTRAPOLATION_HEADER: &str = "delay,class,accuracy,n,seed,protocol";

pub fn cmd_extrapolate(ws: &Workspace, delays_flag: Option<Vec<usize>>) -> CliResult<()> {
    let delays = delays_flag.unwrap_or_else(|| ws.cfg.extrapolation_delays());
    if delays.is_empty() {
        return Err(CliError::Config("--delays: at least one delay is required".into()));
    }
    let held_out = ws.eval_corpus()?;
    let task = ws.cfg.task_kind();
    let protocol = ws.cfg.curriculum.protocol.clone();

    for &seed in &ws.seeds {
        let params = final_params(&ws.load_archive(seed)?)?;
        let mut rng = stream_rng(mix(&[seed, TAG_EXTRAPOLATE]), Stream::Eval);
        let reports = extrapolation_curve(
            &params,
            &held_out,
            task,
            &delays,
            ws.cfg.analysis.eval_trials,
            ws.cfg.task.noise_scale,
            &mut rng,
        )?;
        let rows = extrapolation_rows(&reports, &delays, seed, &protocol);
        write_csv(&ws.seed_dir(seed).join("extrapolation.csv"), EXTRAPOLATION_HEADER, &rows)?;
        let summary: Vec<String> = delays
            .iter()
            .zip(&reports)
            .map(|(d, r)| format!("{d}: {:.4}", r.response_accuracy()))
            .collect();
        println!("seed {seed}: accuracy by delay {{{}}}", summary.join(", "));
    }
    pool_csv(ws, "extrapolation.csv", EXTRAPOLATION_HEADER)
}

// ----------------------------------------------------------- slowpoints --

/// Slow points of the final network of one run, seeded from the per-class
/// delay states. The stream is keyed by the run seed alone so the backtrack
/// stage reproduces the exact same records.
fn locate_final_points(
    ws: &Workspace,
    seed: u64,
    archive: &CheckpointArchive<Scalar>,
    corpus: &Corpus<Scalar>,
    input: &FixedInput<Scalar>,
) -> CliResult<Vec<SlowPointRecord<Scalar>>> {
    let params = final_params(archive)?;
    let mut rng = stream_rng(mix(&[seed, TAG_ANALYSIS]), Stream::Analysis);
    let seeds = class_seeds(
        &params,
        corpus,
        &ws.vocabulary(),
        ws.seed_delay(),
        ws.cfg.analysis.n_per_class,
        ws.cfg.task.noise_scale,
        &mut rng,
    )?;
    let opts = ws.cfg.descent_options();
    let mut records = Vec::with_capacity(seeds.len());
    for (class, xi0) in &seeds {
        records.push(find_slow_point(&params, input, xi0, *class, &opts, archive.final_step(), seed)?);
    }
    Ok(records)
}

/// Delay-period states plus the located points, flattened onto the leading
/// principal components for plotting.
fn write_pca(
    ws: &Workspace,
    seed: u64,
    params: &RnnParameters<Scalar>,
    corpus: &Corpus<Scalar>,
    records: &[SlowPointRecord<Scalar>],
) -> CliResult<()> {
    let delay = ws.seed_delay();
    let mut rng = stream_rng(mix(&[seed, TAG_PCA]), Stream::Analysis);
    let mut cloud: Vec<Vec<f64>> = Vec::new();
    let mut cloud_keys: Vec<(usize, usize)> = Vec::new();
    for class in ws.vocabulary() {
        for _ in 0..PCA_TRIALS_PER_CLASS {
            let seq = render_extrapolation_trial(corpus, class, delay, ws.cfg.task.noise_scale, &mut rng)?;
            params.run_sequence(&seq.frames[..delay], |t, h, c| {
                cloud.push(params.analysis_state(h, c).as_slice().to_vec());
                cloud_keys.push((class, t));
            })?;
        }
    }
    let k = ws.cfg.analysis.pca_components.min(params.state_dim()).min(cloud.len().saturating_sub(1));
    let pca = pca::fit(&cloud, k)?;

    let pc_names: Vec<String> = (1..=k).map(|i| format!("pc{i}")).collect();
    let header = format!("kind,class,step,{}", pc_names.join(","));
    let mut rows = Vec::with_capacity(cloud.len() + records.len());
    for (state, (class, t)) in cloud.iter().zip(&cloud_keys) {
        let proj = pca.project(state);
        let coords: Vec<String> = proj.iter().map(f64::to_string).collect();
        rows.push(format!("state,{class},{t},{}", coords.join(",")));
    }
    for rec in records {
        let xs: Vec<f64> = rec.xi_star.as_slice().to_vec();
        let proj = pca.project(&xs);
        let coords: Vec<String> = proj.iter().map(f64::to_string).collect();
        rows.push(format!("slowpoint,{},{},{}", rec.class_seed, rec.source_step, coords.join(",")));
    }
    let dir = ws.seed_dir(seed);
    write_csv(&dir.join("pca.csv"), &header, &rows)?;
    let var_rows: Vec<String> =
        pca.explained.iter().enumerate().map(|(i, v)| format!("{},{v}", i + 1)).collect();
    write_csv(&dir.join("pca_variance.csv"), "component,explained", &var_rows)
}

const SPEED_ACCURACY_HEADER: &str = "network,class,speed,accuracy,converged";

pub fn cmd_slowpoints(ws: &Workspace) -> CliResult<()> {
    let corpus = ws.train_corpus()?;
    let held_out = ws.eval_corpus()?;
    let input = FixedInput::from_corpus(&corpus);

    for &seed in &ws.seeds {
        let archive = ws.load_archive(seed)?;
        let params = final_params(&archive)?;
        let records = locate_final_points(ws, seed, &archive, &corpus, &input)?;

        let mut lines = Vec::with_capacity(records.len());
        for rec in &records {
            lines.push(serde_json::to_string(rec).map_err(|e| CliError::Failure(e.to_string()))?);
        }
        fs::create_dir_all(ws.seed_dir(seed))?;
        fs::write(ws.seed_dir(seed).join("slowpoints.jsonl"), lines.join("\n") + "\n")?;

        write_pca(ws, seed, &params, &corpus, &records)?;

        let n_conv = records.iter().filter(|r| r.converged).count();
        let speeds: Vec<String> = records.iter().map(|r| format!("{:.2e}", r.speed)).collect();
        println!(
            "seed {seed}: {} slow points ({} converged, {} distinct), speeds [{}]",
            records.len(),
            n_conv,
            distinct_points(&records, 1e-2),
            speeds.join(", ")
        );
    }

    // The speed/accuracy correlation pools every trained network, whatever
    // --seed selected, so the table tightens as more runs finish.
    let pool = ws.archived_seeds();
    if pool.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no checkpoint archives under {}; run the train subcommand first",
            ws.root.display()
        )));
    }
    let mut networks = Vec::with_capacity(pool.len());
    for &seed in &pool {
        networks.push(final_params(&ws.load_archive(seed)?)?);
    }
    let table_cfg = TableConfig {
        seed_delay: ws.seed_delay(),
        n_per_class: ws.cfg.analysis.n_per_class,
        long_delay: ws.cfg.long_delay(),
        eval_trials: ws.cfg.analysis.eval_trials,
        noise_scale: ws.cfg.task.noise_scale,
        task: ws.cfg.task_kind(),
        descent: ws.cfg.descent_options(),
        n_permutations: ws.cfg.analysis.permutations,
        seed: mix(&[ws.cfg.dataset.seed, TAG_TABLE]),
    };
    let (rows, test) = speed_accuracy_table(&networks, &held_out, &table_cfg)?;
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| join_csv(&[&pool[r.network], &r.class, &r.speed, &r.accuracy, &r.converged]))
        .collect();
    write_csv(&ws.root.join("speed_accuracy.csv"), SPEED_ACCURACY_HEADER, &csv_rows)?;

    let n_converged = rows.iter().filter(|r| r.converged).count();
    let verdict = match &test {
        Some(t) => format!(
            "spearman rho = {:.4}, one-sided p = {:.5} ({n_converged} converged rows, {} permutations)",
            t.rho, t.p_negative, t.n_permutations
        ),
        None => "correlation undefined: fewer than two converged rows or a constant column".into(),
    };
    let mut f = fs::File::create(ws.root.join("spearman.txt"))?;
    writeln!(f, "speed vs accuracy at delay {} over {} networks", table_cfg.long_delay, pool.len())?;
    writeln!(f, "{verdict}")?;
    println!("{verdict}");
    Ok(())
}

// ------------------------------------------------------------ backtrack --

pub fn cmd_backtrack(ws: &Workspace) -> CliResult<()> {
    let corpus = ws.train_corpus()?;
    let held_out = ws.eval_corpus()?;
    let input = FixedInput::from_corpus(&corpus);
    let warm = DescentOptions::warm();

    for &seed in &ws.seeds {
        let archive = ws.load_archive(seed)?;
        let records = locate_final_points(ws, seed, &archive, &corpus, &input)?;
        let dir = ws.seed_dir(seed);

        let trajectories = backtrack_trajectories(&archive, &records, &input, &warm)?;
        let mut traj_rows = Vec::new();
        for traj in &trajectories {
            for p in &traj.samples {
                traj_rows.push(join_csv(&[&traj.class, &p.step, &p.speed, &p.label, &p.converged]));
            }
        }
        write_csv(&dir.join("trajectories.csv"), "class,step,speed,label,converged", &traj_rows)?;

        let branch_cfg = BranchConfig {
            window: ws.cfg.scaled_branch_window(),
            seed_delay: ws.seed_delay(),
            n_per_class: ws.cfg.analysis.n_per_class,
            noise_scale: ws.cfg.task.noise_scale,
            descent: warm.clone(),
            seed: mix(&[seed, TAG_BRANCH]),
        };
        let events = branch_events(&archive, &corpus, &input, &branch_cfg)?;
        let branch_rows: Vec<String> = events
            .iter()
            .map(|e| {
                let parent = e.parent.map(|p| p.to_string()).unwrap_or_default();
                join_csv(&[&e.new_class, &e.intro_step, &parent, &e.ambiguous])
            })
            .collect();
        write_csv(&dir.join("branches.csv"), "new_class,intro_step,parent,ambiguous", &branch_rows)?;

        let intros = archive.class_introductions();
        let disp_rows: Vec<String> = displacement_check(&trajectories, &intros)
            .iter()
            .map(|r| {
                join_csv(&[&r.intro_step, &r.new_class, &r.tracked_class, &r.displacement, &r.min_cross_distance])
            })
            .collect();
        write_csv(
            &dir.join("displacement.csv"),
            "intro_step,new_class,tracked_class,displacement,min_cross_distance",
            &disp_rows,
        )?;

        let drop_cfg = AccuracyDropConfig {
            before_offset: ws.cfg.scaled_before_offset(),
            after_offset: ws.cfg.scaled_after_offset(),
            step_tolerance: ws.cfg.training.checkpoint_cadence.max(scaled_offset(500, ws.cfg.training.steps)),
            eval_trials: ws.cfg.analysis.eval_trials,
            noise_scale: ws.cfg.analysis.drop_noise_scale,
            seed: mix(&[seed, TAG_DROPS]),
        };
        let drops = accuracy_drop_stats(&archive, &events, &held_out, &drop_cfg)?;
        let drop_rows: Vec<String> = drops
            .iter()
            .map(|r| join_csv(&[&r.intro_step, &r.new_class, &r.parent, &r.delta_parent, &r.mean_delta_others]))
            .collect();
        write_csv(
            &dir.join("accuracy_drops.csv"),
            "intro_step,new_class,parent,delta_parent,mean_delta_others",
            &drop_rows,
        )?;

        let ambiguous = events.iter().filter(|e| e.ambiguous).count();
        let parent_hit = drops.iter().filter(|r| r.delta_parent < r.mean_delta_others).count();
        println!(
            "seed {seed}: {} tracked classes, {} introductions ({} ambiguous), parent most affected in {}/{}",
            trajectories.len(),
            events.len(),
            ambiguous,
            parent_hit,
            drops.len()
        );
    }
    Ok(())
}

// ------------------------------------------------------------- finetune --

const FINETUNE_HEADER: &str = "mode,lambda,seed,nominal_delay,nominal_before,nominal_after,null_before,\
                               null_after,long_delay,long_before,long_after,speed_before,speed_after,diverged";

fn finetune_row(outcome: &FineTuneOutcome<Scalar>, seed: u64, cfg: &FineTuneConfig) -> String {
    let r = &outcome.report;
    let mode = match r.kind {
        memlab_core::speedreg::RegTargetKind::SlowPoint => "slow_point",
        memlab_core::speedreg::RegTargetKind::CenterOfMass => "center_of_mass",
    };
    join_csv(&[
        &mode,
        &r.lambda,
        &seed,
        &cfg.nominal_delay,
        &r.before.nominal_accuracy,
        &r.after.nominal_accuracy,
        &r.before.nominal_null_accuracy,
        &r.after.nominal_null_accuracy,
        &cfg.long_delay,
        &r.before.long_accuracy,
        &r.after.long_accuracy,
        &r.before.mean_speed,
        &r.after.mean_speed,
        &r.diverged.is_some(),
    ])
}

pub fn cmd_finetune(ws: &Workspace) -> CliResult<()> {
    let corpus = ws.train_corpus()?;
    let input = FixedInput::from_corpus(&corpus);
    let vocab = ws.vocabulary();
    let reg = &ws.cfg.regularization;
    let t_max = ws.cfg.task.t_max;
    let long_delay = if reg.long_delay > 0 { reg.long_delay } else { 10 * t_max };
    let noise = ws.cfg.task.noise_scale;
    let opts = ws.cfg.descent_options();

    for &seed in &ws.seeds {
        let params = final_params(&ws.load_archive(seed)?)?;
        let mut rng = stream_rng(mix(&[seed, TAG_TARGETS]), Stream::Analysis);
        let n_per_class = ws.cfg.analysis.n_per_class;
        let targets = match reg.mode.as_deref() {
            Some("center_of_mass") => {
                com_targets(&params, &corpus, &vocab, ws.seed_delay(), n_per_class, noise, &mut rng)?
            }
            _ => slow_point_targets(
                &params,
                &corpus,
                &vocab,
                ws.seed_delay(),
                n_per_class,
                noise,
                &input,
                &opts,
                &mut rng,
            )?,
        };
        let ft_cfg = FineTuneConfig {
            seed: mix(&[seed, TAG_FINETUNE]),
            steps: reg.steps,
            batch_size: ws.cfg.training.batch_size,
            adam: ws.cfg.train_config(seed).adam,
            grad_clip: (ws.cfg.training.grad_clip > 0.0).then_some(ws.cfg.training.grad_clip),
            noise_scale: noise,
            lambda: reg.lambda,
            refresh_every: reg.refresh_every,
            t_max,
            nominal_delay: t_max - 1,
            long_delay,
            eval_trials: ws.cfg.analysis.eval_trials,
            n_per_class,
            seed_delay: ws.seed_delay(),
            descent: opts.clone(),
        };
        let tuned = fine_tune(params.clone(), &corpus, &vocab, &targets, &ft_cfg)?;
        let control_cfg = FineTuneConfig { lambda: 0.0, ..ft_cfg.clone() };
        let control = fine_tune(params, &corpus, &vocab, &targets, &control_cfg)?;

        let rows = vec![finetune_row(&tuned, seed, &ft_cfg), finetune_row(&control, seed, &control_cfg)];
        write_csv(&ws.seed_dir(seed).join("finetune.csv"), FINETUNE_HEADER, &rows)?;

        let r = &tuned.report;
        let c = &control.report;
        println!(
            "seed {seed}: lambda {} moved delay-{long_delay} accuracy {:.4} -> {:.4} \
             (control {:.4}), nominal {:.4} -> {:.4}, mean speed {:.3e} -> {:.3e}",
            reg.lambda,
            r.before.long_accuracy,
            r.after.long_accuracy,
            c.after.long_accuracy,
            r.before.nominal_accuracy,
            r.after.nominal_accuracy,
            r.before.mean_speed,
            r.after.mean_speed,
        );
        if r.diverged.is_some() || c.diverged.is_some() {
            println!("seed {seed}: warning: a fine-tuning run diverged; see finetune.csv");
        }
    }
    pool_csv(ws, "finetune.csv", FINETUNE_HEADER)
}

// --------------------------------------------------------------- report --

fn parse_f64(field: &str) -> Option<f64> {
    field.parse().ok().filter(|v: &f64| v.is_finite())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Digest every artifact that exists into one text summary. Stages that
/// have not run yet are simply skipped, so the report is useful at any
/// point in the pipeline.
pub fn cmd_report(ws: &Workspace) -> CliResult<()> {
    let cfg = &ws.cfg;
    let mut out = String::new();
    let mut push = |line: String| {
        out.push_str(&line);
        out.push('\n');
    };

    push(format!("experiment {} ({})", cfg.name, ws.root.display()));
    push(format!(
        "{} unit, d = {}, task = {} with t_max = {}, curriculum = {}, {} steps, seeds {:?}",
        cfg.network.unit,
        cfg.network.d,
        cfg.task.kind,
        cfg.task.t_max,
        cfg.curriculum.protocol,
        cfg.training.steps,
        cfg.seeds,
    ));

    push(String::new());
    push("training".into());
    let mut trained = 0;
    for &seed in &cfg.seeds {
        let dir = ws.seed_dir(seed);
        let Some(evals) = read_csv(&dir.join("evals.csv")) else { continue };
        trained += 1;
        let last_loss = read_csv(&dir.join("metrics.csv"))
            .and_then(|rows| rows.last().and_then(|r| parse_f64(&r[1])))
            .unwrap_or(f64::NAN);
        match evals.last() {
            Some(last) => push(format!(
                "  seed {seed}: stage {} accuracy {} at step {}, final loss {last_loss:.4}",
                last[1], last[2], last[0]
            )),
            None => push(format!("  seed {seed}: no evaluations recorded, final loss {last_loss:.4}")),
        }
    }
    if trained == 0 {
        push("  no training artifacts found".into());
    }

    if let Some(rows) = read_csv(&ws.root.join("extrapolation.csv")) {
        push(String::new());
        push("extrapolation (pooled over seeds, all classes)".into());
        let mut delays: Vec<usize> = Vec::new();
        for row in &rows {
            if row.len() >= 3 && row[1] == "all" {
                if let Ok(d) = row[0].parse() {
                    if !delays.contains(&d) {
                        delays.push(d);
                    }
                }
            }
        }
        delays.sort_unstable();
        for d in delays {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.len() >= 3 && r[1] == "all" && r[0].parse() == Ok(d))
                .filter_map(|r| parse_f64(&r[2]))
                .collect();
            push(format!("  delay {d}: mean accuracy {:.4} over {} runs", mean(&accs), accs.len()));
        }
    }

    if let Ok(text) = fs::read_to_string(ws.root.join("spearman.txt")) {
        push(String::new());
        push("slow points".into());
        for line in text.lines() {
            push(format!("  {line}"));
        }
        if let Some(rows) = read_csv(&ws.root.join("speed_accuracy.csv")) {
            let conv = rows.iter().filter(|r| r.last().map(String::as_str) == Some("true")).count();
            push(format!("  {} speed/accuracy rows, {} from converged descents", rows.len(), conv));
        }
    }

    let mut branch_lines = Vec::new();
    let (mut events, mut ambiguous, mut parent_hits, mut drop_rows) = (0, 0, 0, 0);
    let (mut disp_ok, mut disp_rows) = (0, 0);
    for &seed in &cfg.seeds {
        let dir = ws.seed_dir(seed);
        if let Some(rows) = read_csv(&dir.join("branches.csv")) {
            events += rows.len();
            ambiguous += rows.iter().filter(|r| r.last().map(String::as_str) == Some("true")).count();
            for row in &rows {
                if row.len() >= 4 {
                    let parent = if row[2].is_empty() { "ambiguous".into() } else { format!("parent {}", row[2]) };
                    branch_lines.push(format!("  seed {seed}: class {} at step {} ({parent})", row[0], row[1]));
                }
            }
        }
        if let Some(rows) = read_csv(&dir.join("accuracy_drops.csv")) {
            drop_rows += rows.len();
            parent_hits += rows
                .iter()
                .filter(|r| match (parse_f64(&r[3]), parse_f64(&r[4])) {
                    (Some(p), Some(o)) => p < o,
                    _ => false,
                })
                .count();
        }
        if let Some(rows) = read_csv(&dir.join("displacement.csv")) {
            disp_rows += rows.len();
            disp_ok += rows
                .iter()
                .filter(|r| match (parse_f64(&r[3]), parse_f64(&r[4])) {
                    (Some(d), Some(m)) => d < m,
                    _ => false,
                })
                .count();
        }
    }
    if events > 0 || disp_rows > 0 {
        push(String::new());
        push("backtracking".into());
        push(format!("  {events} class introductions, {ambiguous} ambiguous"));
        for line in branch_lines {
            push(line);
        }
        if drop_rows > 0 {
            push(format!("  parent class most affected in {parent_hits}/{drop_rows} introductions"));
        }
        if disp_rows > 0 {
            push(format!("  displacement below every cross-distance in {disp_ok}/{disp_rows} tracked pairs"));
        }
    }

    if let Some(rows) = read_csv(&ws.root.join("finetune.csv")) {
        push(String::new());
        push("speed regularization".into());
        for lambda_positive in [true, false] {
            let group: Vec<&Vec<String>> = rows
                .iter()
                .filter(|r| r.len() >= 13 && parse_f64(&r[1]).map(|l| l > 0.0) == Some(lambda_positive))
                .collect();
            if group.is_empty() {
                continue;
            }
            let long_delta: Vec<f64> = group
                .iter()
                .filter_map(|r| Some(parse_f64(&r[10])? - parse_f64(&r[9])?))
                .collect();
            let nominal_delta: Vec<f64> = group
                .iter()
                .filter_map(|r| Some(parse_f64(&r[5])? - parse_f64(&r[4])?))
                .collect();
            let speed_ratio: Vec<f64> = group
                .iter()
                .filter_map(|r| {
                    let before = parse_f64(&r[11])?;
                    let after = parse_f64(&r[12])?;
                    (before > 0.0).then(|| after / before)
                })
                .collect();
            let label = if lambda_positive { "penalty on " } else { "control (lambda = 0)" };
            push(format!(
                "  {label}: long-delay accuracy {:+.4}, nominal {:+.4}, speed ratio {:.3e} over {} runs",
                mean(&long_delta),
                mean(&nominal_delta),
                mean(&speed_ratio),
                group.len(),
            ));
        }
    }

    fs::create_dir_all(&ws.root)?;
    fs::write(ws.root.join("summary.txt"), &out)?;
    print!("{out}");
    Ok(())
}
