//! Continuation of slow points through training history.
//!
//! A slow point found on the final network can be carried to earlier
//! parameter snapshots by warm-started descent: nearby parameters move the
//! point a little, so the previous solution is an excellent starting guess.
//! Walking the checkpoint archive this way yields per-class speed
//! trajectories, branching diagrams for vocabulary introductions, and the
//! displacement evidence that the continuation really follows one point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::AnalysisState;
use crate::real::Real;
use crate::rng::{mix, stream_rng, Stream};
use crate::slowpoint::{class_seeds, descend, find_slow_point, DescentOptions, FixedInput, RnnMap, SlowPointRecord};
use crate::taskgen::Corpus;
use crate::trainer::{evaluate_classes, CheckpointArchive, Snapshot};

/// One tracked sample: the point's location and speed under the parameters
/// of training step `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint<T> {
    pub step: u64,
    pub xi: AnalysisState<T>,
    pub speed: T,
    pub label: usize,
    pub converged: bool,
}

/// A slow point followed across snapshots. `samples` is ordered the way the
/// tracking ran: descending steps for a backward pass, ascending for a
/// forward one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedTrajectory<T> {
    pub class: usize,
    pub samples: Vec<TrackPoint<T>>,
}

impl<T: Real> SpeedTrajectory<T> {
    /// Sample at the greatest step ≤ `step`, regardless of sample order.
    pub fn at_or_before(&self, step: u64) -> Option<&TrackPoint<T>> {
        self.samples.iter().filter(|p| p.step <= step).max_by_key(|p| p.step)
    }

    /// Sample at the smallest step > `step`.
    pub fn after(&self, step: u64) -> Option<&TrackPoint<T>> {
        self.samples.iter().filter(|p| p.step > step).min_by_key(|p| p.step)
    }
}

fn track_over<'a, T: Real>(
    snaps: impl Iterator<Item = &'a Snapshot<T>>,
    class: usize,
    start: &AnalysisState<T>,
    input: &FixedInput<T>,
    opts: &DescentOptions,
) -> Result<SpeedTrajectory<T>> {
    let mut samples = Vec::new();
    let mut seed = start.clone();
    for snap in snaps {
        let map = RnnMap { params: &snap.params, input };
        let out = descend(&map, seed.as_slice(), opts)?;
        let label = snap.params.readout_label(&out.xi.as_slice()[..snap.params.d]);
        samples.push(TrackPoint { step: snap.step, xi: out.xi.clone(), speed: out.speed, label, converged: out.converged });
        // Continue from the best point found even when the descent stalled;
        // the sample above carries the flag.
        seed = out.xi;
    }
    Ok(SpeedTrajectory { class, samples })
}

/// Carry each final record backwards over every archived snapshot at or
/// before its source step, newest first.
pub fn backtrack_trajectories<T: Real>(
    archive: &CheckpointArchive<T>,
    final_records: &[SlowPointRecord<T>],
    input: &FixedInput<T>,
    opts: &DescentOptions,
) -> Result<Vec<SpeedTrajectory<T>>> {
    if archive.is_empty() {
        return Err(Error::Checkpoint("cannot backtrack an empty archive".into()));
    }
    final_records
        .iter()
        .map(|rec| {
            let snaps = archive.snapshots_between(0, rec.source_step);
            track_over(snaps.iter().rev(), rec.class_seed, &rec.xi_star, input, opts)
        })
        .collect()
}

/// Carry a point forwards from the oldest snapshot to the newest, the
/// consistency companion of [`backtrack_trajectories`].
pub fn forward_track<T: Real>(
    archive: &CheckpointArchive<T>,
    class: usize,
    start: &AnalysisState<T>,
    input: &FixedInput<T>,
    opts: &DescentOptions,
) -> Result<SpeedTrajectory<T>> {
    if archive.is_empty() {
        return Err(Error::Checkpoint("cannot track an empty archive".into()));
    }
    track_over(archive.snapshots().iter(), class, start, input, opts)
}

/// Steps at which a trajectory's speed changes by more than `ratio`
/// between adjacent samples (either direction); reports the later step of
/// each jumping pair in sample order.
pub fn speed_jumps<T: Real>(trajectory: &SpeedTrajectory<T>, ratio: f64) -> Vec<u64> {
    let floor = 1e-300;
    trajectory
        .samples
        .windows(2)
        .filter(|w| {
            let a = w[0].speed.as_f64().max(floor);
            let b = w[1].speed.as_f64().max(floor);
            (a / b).max(b / a) > ratio
        })
        .map(|w| w[0].step.max(w[1].step))
        .collect()
}

/// A vocabulary introduction traced back to the slow point it grew from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchEvent<T> {
    pub new_class: usize,
    pub intro_step: u64,
    /// Class whose point the new one emerged from; `None` when ambiguous.
    pub parent: Option<usize>,
    /// Set when the earliest-window readout is the new class itself, the
    /// null class, or a class not yet introduced.
    pub ambiguous: bool,
    /// The tracked segment, newest to oldest, spanning the event window.
    pub trace: SpeedTrajectory<T>,
}

#[derive(Debug, Clone)]
pub struct BranchConfig {
    /// Half-width of the event window in steps: tracking runs from the next
    /// introduction minus this back to this introduction minus this.
    pub window: u64,
    /// Delay used when collecting the seed state for the new class.
    pub seed_delay: usize,
    pub n_per_class: usize,
    pub noise_scale: f64,
    pub descent: DescentOptions,
    pub seed: u64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            window: 2000,
            seed_delay: crate::slowpoint::DEFAULT_SEED_DELAY,
            n_per_class: 100,
            noise_scale: 1.0,
            descent: DescentOptions::warm(),
            seed: 0,
        }
    }
}

/// For every class introduction in the archive, locate the new class's slow
/// point shortly before the next introduction and track it back to just
/// before its own introduction; the readout label at the earliest point
/// names the parent.
pub fn branch_events<T: Real>(
    archive: &CheckpointArchive<T>,
    corpus: &Corpus<T>,
    input: &FixedInput<T>,
    cfg: &BranchConfig,
) -> Result<Vec<BranchEvent<T>>> {
    let intros = archive.class_introductions();
    let mut events = Vec::with_capacity(intros.len());
    for (i, &(new_class, intro_step)) in intros.iter().enumerate() {
        let window_start = intro_step.saturating_sub(cfg.window);
        let window_end = match intros.get(i + 1) {
            Some(&(_, next_step)) => next_step.saturating_sub(cfg.window),
            None => archive.final_step(),
        };
        if window_end < window_start {
            return Err(Error::Schedule(format!(
                "introduction window for class {new_class} is inverted: [{window_start}, {window_end}]"
            )));
        }
        let snaps = archive.snapshots_between(window_start, window_end);
        let Some(end_snap) = snaps.last() else {
            return Err(Error::MissingSnapshot { step: window_end, tolerance: window_end - window_start });
        };

        let mut rng = stream_rng(mix(&[cfg.seed, new_class as u64, intro_step]), Stream::Analysis);
        let seeds = class_seeds(
            &end_snap.params,
            corpus,
            &[new_class],
            cfg.seed_delay,
            cfg.n_per_class,
            cfg.noise_scale,
            &mut rng,
        )?;
        let located = find_slow_point(
            &end_snap.params,
            input,
            &seeds[0].1,
            new_class,
            &cfg.descent,
            end_snap.step,
            archive.run_seed,
        )?;
        let trace = track_over(snaps.iter().rev(), new_class, &located.xi_star, input, &cfg.descent)?;

        let earliest_label = trace.samples.last().map_or(usize::MAX, |p| p.label);
        let prior = archive.classes_before(intro_step).unwrap_or(&[]);
        let ambiguous = earliest_label == new_class
            || earliest_label == end_snap.params.null_label()
            || !prior.contains(&earliest_label);
        events.push(BranchEvent {
            new_class,
            intro_step,
            parent: (!ambiguous).then_some(earliest_label),
            ambiguous,
            trace,
        });
    }
    Ok(events)
}

/// Movement of one tracked point across one introduction event, next to its
/// distances from every other tracked point on the far side.
#[derive(Debug, Clone, Serialize)]
pub struct DisplacementRow {
    pub intro_step: u64,
    pub new_class: usize,
    pub tracked_class: usize,
    /// |ξ_k(τ−) − ξ_k(τ+)| across the event.
    pub displacement: f64,
    /// min over other classes j of |ξ_k(τ−) − ξ_j(τ+)|.
    pub min_cross_distance: f64,
    /// All distances |ξ_k(τ−) − ξ_j(τ+)| keyed by class, own class included.
    pub cross_distances: Vec<(usize, f64)>,
}

/// Compare each tracked point's movement across every introduction against
/// its distances to the other points: genuine continuation moves a point
/// much less than the gap to any neighbor.
pub fn displacement_check<T: Real>(
    trajectories: &[SpeedTrajectory<T>],
    introductions: &[(usize, u64)],
) -> Vec<DisplacementRow> {
    let mut rows = Vec::new();
    for &(new_class, intro_step) in introductions {
        for traj in trajectories.iter().filter(|t| t.class != new_class) {
            let (Some(before), Some(after)) = (traj.at_or_before(intro_step), traj.after(intro_step)) else {
                continue;
            };
            let displacement = before.xi.distance(&after.xi).as_f64();
            let mut cross = Vec::new();
            let mut min_cross = f64::INFINITY;
            for other in trajectories {
                let Some(other_after) = other.after(intro_step) else { continue };
                let dist = before.xi.distance(&other_after.xi).as_f64();
                cross.push((other.class, dist));
                if other.class != traj.class {
                    min_cross = min_cross.min(dist);
                }
            }
            rows.push(DisplacementRow {
                intro_step,
                new_class,
                tracked_class: traj.class,
                displacement,
                min_cross_distance: min_cross,
                cross_distances: cross,
            });
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct AccuracyDropConfig {
    /// Steps before the introduction at which the "before" accuracy reads.
    pub before_offset: u64,
    /// Steps after the introduction at which the "after" accuracy reads.
    pub after_offset: u64,
    /// How far an archived snapshot may sit from the requested step.
    pub step_tolerance: u64,
    /// Trials per evaluation, split over the pre-existing classes.
    pub eval_trials: usize,
    /// Noise multiplier; accuracy differences show best above the training
    /// noise level.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for AccuracyDropConfig {
    fn default() -> Self {
        AccuracyDropConfig {
            before_offset: 1000,
            after_offset: 4000,
            step_tolerance: 500,
            eval_trials: 600,
            noise_scale: 2.0,
            seed: 0,
        }
    }
}

/// Per-class accuracy change across one introduction event.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyDropRow {
    pub intro_step: u64,
    pub new_class: usize,
    pub parent: usize,
    pub delta_parent: f64,
    pub mean_delta_others: f64,
    /// Per pre-existing class: accuracy after minus before.
    pub deltas: Vec<(usize, f64)>,
}

/// Evaluate every pre-existing class shortly before and after each
/// unambiguous introduction and compare the parent's accuracy change with
/// the rest. Both evaluations draw identical trials so the difference
/// isolates the parameter change.
pub fn accuracy_drop_stats<T: Real>(
    archive: &CheckpointArchive<T>,
    events: &[BranchEvent<T>],
    corpus: &Corpus<T>,
    cfg: &AccuracyDropConfig,
) -> Result<Vec<AccuracyDropRow>> {
    let mut rows = Vec::new();
    for event in events {
        let Some(parent) = event.parent else { continue };
        let before_step = event.intro_step.saturating_sub(cfg.before_offset);
        let after_step = event.intro_step + cfg.after_offset;
        let snap_before = archive.snapshot_within(before_step, cfg.step_tolerance)?;
        let snap_after = archive.snapshot_within(after_step, cfg.step_tolerance)?;
        let prior = archive
            .classes_before(event.intro_step)
            .ok_or_else(|| Error::Checkpoint(format!("no transition recorded at step {}", event.intro_step)))?;
        let delay = archive.stages[snap_before.stage].t_max - 1;

        let eval_at = |snap: &Snapshot<T>| -> Result<Vec<f64>> {
            let mut rng = stream_rng(mix(&[cfg.seed, event.intro_step]), Stream::Eval);
            let report =
                evaluate_classes(&snap.params, corpus, prior, delay, cfg.eval_trials, cfg.noise_scale, &mut rng)?;
            Ok(prior.iter().map(|&c| report.class_accuracy(c).unwrap_or(0.0)).collect())
        };
        let acc_before = eval_at(snap_before)?;
        let acc_after = eval_at(snap_after)?;

        let deltas: Vec<(usize, f64)> =
            prior.iter().zip(acc_before.iter().zip(&acc_after)).map(|(&c, (b, a))| (c, a - b)).collect();
        let delta_parent = deltas
            .iter()
            .find(|(c, _)| *c == parent)
            .map(|&(_, d)| d)
            .ok_or_else(|| Error::Checkpoint(format!("parent class {parent} missing from the prior vocabulary")))?;
        let others: Vec<f64> = deltas.iter().filter(|(c, _)| *c != parent).map(|&(_, d)| d).collect();
        if others.is_empty() {
            continue;
        }
        let mean_others = others.iter().sum::<f64>() / others.len() as f64;
        rows.push(AccuracyDropRow {
            intro_step: event.intro_step,
            new_class: event.new_class,
            parent,
            delta_parent,
            mean_delta_others: mean_others,
            deltas,
        });
    }
    Ok(rows)
}
