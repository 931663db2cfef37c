//! Training driver: samples batches for the active curriculum stage, takes
//! Adam steps on the weighted cross-entropy, evaluates for stage
//! advancement, and maintains the checkpoint archive, including dense
//! snapshots around vocabulary introductions.

pub mod adam;
pub mod checkpoint;
pub mod eval;
pub mod loss;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{CheckpointArchive, Snapshot, SnapshotMetrics, StageMeta, StageTransition};
pub use eval::{
    evaluate, evaluate_classes, evaluate_matching, evaluate_matching_by_first, extrapolation_curve,
    EvalReport,
};
pub use loss::loss_and_grads;

use std::collections::VecDeque;

use crate::curriculum::CurriculumSchedule;
use crate::error::{Error, Result};
use crate::nncore::RnnParameters;
use crate::real::Real;
use crate::rng::{stream_rng, Stream};
use crate::taskgen::{sample_batch, Corpus, TaskKind};

/// Step budget the nominal analysis offsets are quoted against; offsets
/// shrink proportionally for shorter runs.
pub const REFERENCE_BUDGET: u64 = 140_000;

/// Smallest scaled offset, so that very short runs still have usable
/// windows.
pub const MIN_SCALED_OFFSET: u64 = 100;

/// Scale a step offset defined against [`REFERENCE_BUDGET`] to an actual
/// run budget, flooring at [`MIN_SCALED_OFFSET`].
pub fn scaled_offset(nominal: u64, budget: u64) -> u64 {
    ((nominal as u128 * budget as u128) / REFERENCE_BUDGET as u128).max(MIN_SCALED_OFFSET as u128) as u64
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub task: TaskKind,
    pub adam: AdamConfig,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub noise_scale: f64,
    pub checkpoint_cadence: u64,
    pub eval_cadence: u64,
    pub eval_trials: usize,
    /// Half-width in steps of the dense-snapshot window around vocabulary
    /// introductions; `None` scales the nominal 2000 to the budget.
    pub dense_window: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 1000,
            batch_size: 64,
            task: TaskKind::Classification,
            adam: AdamConfig::default(),
            grad_clip: Some(10.0),
            noise_scale: 1.0,
            checkpoint_cadence: 250,
            eval_cadence: 50,
            eval_trials: 200,
            dense_window: None,
        }
    }
}

/// One stage-advancement evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub stage: usize,
    pub accuracy: f64,
}

/// Where and in which trial the loss stopped being finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceReport {
    pub step: u64,
    pub trial: usize,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub archive: CheckpointArchive<T>,
    pub final_params: RnnParameters<T>,
    /// Batch loss after every optimizer step.
    pub loss_history: Vec<f64>,
    pub eval_history: Vec<EvalPoint>,
    /// Set when training halted early on a non-finite loss; the archive
    /// holds everything up to the last finite step.
    pub diverged: Option<DivergenceReport>,
}

fn validate<T: Real>(
    init: &RnnParameters<T>,
    corpus: &Corpus<T>,
    schedule: &CurriculumSchedule,
    cfg: &TrainConfig,
) -> Result<()> {
    if init.n_in != corpus.input_width() {
        return Err(Error::Dimension { context: "network input width", expected: corpus.input_width(), actual: init.n_in });
    }
    let want_out = cfg.task.n_out(corpus.n_classes());
    if init.n_out != want_out {
        return Err(Error::Dimension { context: "readout width", expected: want_out, actual: init.n_out });
    }
    for (i, stage) in schedule.stages.iter().enumerate() {
        if let Some(&c) = stage.vocabulary.iter().find(|&&c| c >= corpus.n_classes()) {
            return Err(Error::Schedule(format!("stage {i} trains class {c}, corpus has {}", corpus.n_classes())));
        }
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(Error::InvalidArgument("training needs a positive batch size and step budget".into()));
    }
    if cfg.eval_cadence == 0 || cfg.checkpoint_cadence == 0 {
        return Err(Error::InvalidArgument("cadences must be positive".into()));
    }
    Ok(())
}

/// Train `init` on `corpus` under the given curriculum. Two calls with the
/// same arguments produce bitwise-identical outcomes: trial sampling and
/// evaluation draw from separate seeded streams and gradients accumulate in
/// a fixed order.
pub fn train<T: Real>(
    init: RnnParameters<T>,
    corpus: &Corpus<T>,
    schedule: &CurriculumSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    validate(&init, corpus, schedule, cfg)?;

    let dense_window = cfg.dense_window.unwrap_or_else(|| scaled_offset(2000, cfg.steps));
    let dense_cadence = (cfg.checkpoint_cadence / 5).max(1);
    let stage_meta = schedule
        .stages
        .iter()
        .map(|s| StageMeta { vocabulary: s.vocabulary.clone(), t_max: s.t_max })
        .collect();
    let mut archive = CheckpointArchive::new(cfg.seed, cfg.checkpoint_cadence, dense_cadence, stage_meta);

    let mut params = init;
    let mut opt = AdamState::new(cfg.adam, params.n_params());
    let mut rng_trials = stream_rng(cfg.seed, Stream::Trials);
    let mut rng_eval = stream_rng(cfg.seed, Stream::Eval);

    let mut stage_idx = 0usize;
    let mut steps_in_stage = 0u64;
    let mut acc_history: Vec<f64> = Vec::new();
    let mut last_loss: Option<f64> = None;
    let mut last_acc: Option<f64> = None;
    let mut loss_history = Vec::with_capacity(cfg.steps as usize);
    let mut eval_history = Vec::new();
    let mut diverged = None;

    // Dense snapshots taken on spec, waiting for a transition to make them
    // part of the archive; pruned to the trailing window.
    let mut pending: VecDeque<Snapshot<T>> = VecDeque::new();
    // Steps at or below this bound snapshot densely straight into the
    // archive (the post-transition half of the window).
    let mut dense_until = 0u64;

    let make_snapshot = |step: u64, stage: usize, params: &RnnParameters<T>, loss: Option<f64>, acc: Option<f64>| Snapshot {
        step,
        stage,
        metrics: SnapshotMetrics { loss, stage_accuracy: acc },
        params: params.clone(),
    };
    archive.add_snapshot(make_snapshot(0, 0, &params, None, None));

    let mut completed = 0u64;
    for step in 1..=cfg.steps {
        let stage = schedule.stage(stage_idx);
        let batch = sample_batch(
            corpus,
            cfg.task,
            &stage.vocabulary,
            stage.t_max,
            cfg.batch_size,
            cfg.noise_scale,
            &mut rng_trials,
        )?;
        let (loss, mut grads) = match loss_and_grads(&params, &batch) {
            Ok(v) => v,
            Err(Error::NonFiniteLoss { trial, .. }) => {
                diverged = Some(DivergenceReport { step, trial });
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(clip) = cfg.grad_clip {
            let norm = grads.value_norm().as_f64();
            if norm > clip {
                grads.scale_values(T::of(clip / norm));
            }
        }
        opt.apply(&mut params, &grads);
        completed = step;
        steps_in_stage += 1;
        last_loss = Some(loss.as_f64());
        loss_history.push(loss.as_f64());

        if step % cfg.eval_cadence == 0 {
            let delay = stage.t_max - 1;
            let report = match cfg.task {
                TaskKind::Classification => evaluate_classes(
                    &params,
                    corpus,
                    &stage.vocabulary,
                    delay,
                    cfg.eval_trials,
                    cfg.noise_scale,
                    &mut rng_eval,
                )?,
                TaskKind::Matching => {
                    evaluate_matching(&params, corpus, delay, cfg.eval_trials, cfg.noise_scale, &mut rng_eval)?
                }
            };
            let acc = report.response_accuracy();
            last_acc = Some(acc);
            acc_history.push(acc);
            eval_history.push(EvalPoint { step, stage: stage_idx, accuracy: acc });

            if stage.advance.should_advance(&acc_history, steps_in_stage) && stage_idx + 1 < schedule.n_stages() {
                stage_idx += 1;
                steps_in_stage = 0;
                acc_history.clear();
                let next = schedule.stage(stage_idx);
                archive.add_transition(StageTransition {
                    step,
                    to_stage: stage_idx,
                    introduced_class: schedule.introduced_class(stage_idx),
                    t_max: next.t_max,
                })?;
                // The pre-transition half of the dense window is sitting in
                // the pending buffer; commit it and snapshot densely ahead.
                for snap in pending.drain(..) {
                    archive.add_snapshot(snap);
                }
                dense_until = step + dense_window;
                archive.add_snapshot(make_snapshot(step, stage_idx, &params, last_loss, last_acc));
            }
        }

        if step % dense_cadence == 0 {
            let snap = make_snapshot(step, stage_idx, &params, last_loss, last_acc);
            if step <= dense_until {
                archive.add_snapshot(snap);
            } else {
                pending.push_back(snap);
                while pending.front().is_some_and(|s| s.step + dense_window < step) {
                    pending.pop_front();
                }
            }
        }
        if step % cfg.checkpoint_cadence == 0 {
            archive.add_snapshot(make_snapshot(step, stage_idx, &params, last_loss, last_acc));
        }
    }

    archive.add_snapshot(make_snapshot(completed, stage_idx, &params, last_loss, last_acc));
    Ok(TrainOutcome { archive, final_params: params, loss_history, eval_history, diverged })
}
