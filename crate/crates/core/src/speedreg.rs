//! Speed-regularized fine-tuning.
//!
//! Adding the hidden-state speed at one representative point per class to
//! the training loss pushes those points toward true fixed points, which
//! stretches how long the memory survives. The representative points are
//! either located slow points or the per-class center of mass of delay
//! states; both are held fixed (as constants) while gradients flow through
//! the map's parameter dependence.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::nncore::{AnalysisState, Gradients, RnnParameters};
use crate::real::Real;
use crate::rng::{mix, stream_rng, Stream};
use crate::taskgen::{sample_batch, Corpus, TaskKind, TrialBatch};
use crate::trainer::{evaluate_classes, loss_and_grads, AdamConfig, AdamState, DivergenceReport};
use crate::slowpoint::{class_seeds, find_slow_point, DescentOptions, FixedInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegTargetKind {
    /// Located slow points, one descent per class.
    SlowPoint,
    /// Per-class mean of delay-period states; cheaper, no descent.
    CenterOfMass,
}

/// The per-class states whose speed the regularizer penalizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTargets<T> {
    pub kind: RegTargetKind,
    /// `(class, point)` pairs, one per class in the trained vocabulary.
    pub points: Vec<(usize, AnalysisState<T>)>,
}

impl<T: Real> RegTargets<T> {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }
}

/// Center-of-mass targets: the class-average state at the end of the delay
/// period, exactly the collection used to seed slow-point searches.
pub fn com_targets<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    delay: usize,
    n_per_class: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RegTargets<T>> {
    let points = class_seeds(params, corpus, vocabulary, delay, n_per_class, noise_scale, rng)?;
    Ok(RegTargets { kind: RegTargetKind::CenterOfMass, points })
}

/// Slow-point targets: descend from each class average and keep the minima.
pub fn slow_point_targets<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    delay: usize,
    n_per_class: usize,
    noise_scale: f64,
    input: &FixedInput<T>,
    opts: &DescentOptions,
    rng: &mut ChaCha8Rng,
) -> Result<RegTargets<T>> {
    let seeds = class_seeds(params, corpus, vocabulary, delay, n_per_class, noise_scale, rng)?;
    let mut points = Vec::with_capacity(seeds.len());
    for (class, seed) in &seeds {
        let rec = find_slow_point(params, input, seed, *class, opts, 0, 0)?;
        points.push((*class, rec.xi_star));
    }
    Ok(RegTargets { kind: RegTargetKind::SlowPoint, points })
}

/// Σ_i S(ξ̄_i) under the fixed input, the quantity the regularizer adds.
pub fn penalty<T: Real>(params: &RnnParameters<T>, targets: &RegTargets<T>, input: &FixedInput<T>) -> Result<T> {
    let mut total = T::zero();
    for (_, xi) in &targets.points {
        let mut r = params.forward_map(xi.as_slice(), input.frame())?;
        for (ri, &xii) in r.iter_mut().zip(xi.as_slice()) {
            *ri -= xii;
        }
        total += dot(&r, &r).sqrt();
    }
    Ok(total)
}

/// Penalty value and its parameter gradient. The targets are constants, so
/// dS/dθ pulls the unit residual back through the map's parameter
/// dependence only; a target that already sits on a fixed point contributes
/// nothing to either.
pub fn penalty_and_grads<T: Real>(
    params: &RnnParameters<T>,
    targets: &RegTargets<T>,
    input: &FixedInput<T>,
) -> Result<(T, Gradients<T>)> {
    let mut grads = params.zeros_like();
    let total = penalty_grads_into(params, targets, input, T::one(), &mut grads)?;
    Ok((total, grads))
}

fn penalty_grads_into<T: Real>(
    params: &RnnParameters<T>,
    targets: &RegTargets<T>,
    input: &FixedInput<T>,
    scale: T,
    grads: &mut Gradients<T>,
) -> Result<T> {
    let mut total = T::zero();
    for (_, xi) in &targets.points {
        let mut r = params.forward_map(xi.as_slice(), input.frame())?;
        for (ri, &xii) in r.iter_mut().zip(xi.as_slice()) {
            *ri -= xii;
        }
        let s = dot(&r, &r).sqrt();
        total += s;
        if s > T::zero() {
            let inv = scale / s;
            for ri in &mut r {
                *ri *= inv;
            }
            params.forward_map_param_pullback(xi.as_slice(), input.frame(), &r, grads)?;
        }
    }
    Ok(total)
}

/// The classification loss plus `lambda` times the speed penalty, with
/// gradients for both. `lambda = 0` is exactly [`loss_and_grads`], bit for
/// bit, so an unregularized control run shares every rounding decision.
pub fn regularized_loss<T: Real>(
    params: &RnnParameters<T>,
    batch: &TrialBatch<T>,
    targets: &RegTargets<T>,
    lambda: T,
    input: &FixedInput<T>,
) -> Result<(T, Gradients<T>)> {
    if lambda < T::zero() {
        return Err(Error::InvalidArgument("the penalty weight must be nonnegative".into()));
    }
    let (mut loss, mut grads) = loss_and_grads(params, batch)?;
    if lambda > T::zero() {
        let pen = penalty_grads_into(params, targets, input, lambda, &mut grads)?;
        loss += lambda * pen;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct FineTuneConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
    pub noise_scale: f64,
    /// Penalty weight λ; 0 runs the control.
    pub lambda: f64,
    /// Recollect targets every this many steps; 0 keeps them fixed.
    pub refresh_every: u64,
    /// Longest stimulus-to-trigger gap in the fine-tuning trials.
    pub t_max: usize,
    /// Delay probed for the "training-range" accuracy.
    pub nominal_delay: usize,
    /// Delay probed for the extended-memory accuracy.
    pub long_delay: usize,
    pub eval_trials: usize,
    /// Trials per class when (re)collecting targets and speed probes.
    pub n_per_class: usize,
    /// Delay for target collection and speed probes.
    pub seed_delay: usize,
    pub descent: DescentOptions,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            seed: 0,
            steps: 5000,
            batch_size: 64,
            adam: AdamConfig::default(),
            grad_clip: Some(10.0),
            noise_scale: 1.0,
            lambda: 1.0,
            refresh_every: 0,
            t_max: 20,
            nominal_delay: 19,
            long_delay: 200,
            eval_trials: 600,
            n_per_class: 100,
            seed_delay: crate::slowpoint::DEFAULT_SEED_DELAY,
            descent: DescentOptions::default(),
        }
    }
}

/// Accuracy and speed measurements on one side of a fine-tune.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FineTuneProbe {
    pub nominal_accuracy: f64,
    pub nominal_null_accuracy: f64,
    pub long_accuracy: f64,
    /// Mean located slow-point speed over the vocabulary.
    pub mean_speed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FineTuneReport {
    pub kind: RegTargetKind,
    pub lambda: f64,
    pub before: FineTuneProbe,
    pub after: FineTuneProbe,
    /// Σ_i S(ξ̄_i) at every step, before that step's update.
    pub penalty_history: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub diverged: Option<DivergenceReport>,
}

#[derive(Debug)]
pub struct FineTuneOutcome<T> {
    pub params: RnnParameters<T>,
    pub report: FineTuneReport,
}

fn probe<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    input: &FixedInput<T>,
    cfg: &FineTuneConfig,
) -> Result<FineTuneProbe> {
    // The same stream seeds both sides of the fine-tune, so before/after
    // comparisons see identical trials.
    let mut rng = stream_rng(mix(&[cfg.seed, 0xacc]), Stream::Eval);
    let nominal = evaluate_classes(params, corpus, vocabulary, cfg.nominal_delay, cfg.eval_trials, cfg.noise_scale, &mut rng)?;
    let mut rng = stream_rng(mix(&[cfg.seed, 0x10e6]), Stream::Eval);
    let long = evaluate_classes(params, corpus, vocabulary, cfg.long_delay, cfg.eval_trials, cfg.noise_scale, &mut rng)?;
    let mut rng = stream_rng(mix(&[cfg.seed, 0x5eed]), Stream::Analysis);
    let sp = slow_point_targets(
        params,
        corpus,
        vocabulary,
        cfg.seed_delay,
        cfg.n_per_class,
        cfg.noise_scale,
        input,
        &cfg.descent,
        &mut rng,
    )?;
    let mut mean_speed = 0.0;
    for (_, xi) in &sp.points {
        let mut r = params.forward_map(xi.as_slice(), input.frame())?;
        for (ri, &xii) in r.iter_mut().zip(xi.as_slice()) {
            *ri -= xii;
        }
        mean_speed += dot(&r, &r).sqrt().as_f64();
    }
    mean_speed /= sp.points.len().max(1) as f64;
    Ok(FineTuneProbe {
        nominal_accuracy: nominal.response_accuracy(),
        nominal_null_accuracy: nominal.null_accuracy(),
        long_accuracy: long.response_accuracy(),
        mean_speed,
    })
}

/// Continue training `init` on the full task plus the speed penalty.
/// Probes accuracy and slow-point speed before and after; `lambda = 0`
/// follows the exact update sequence of plain training with the same seed.
pub fn fine_tune<T: Real>(
    init: RnnParameters<T>,
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    targets: &RegTargets<T>,
    cfg: &FineTuneConfig,
) -> Result<FineTuneOutcome<T>> {
    if vocabulary.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs a nonempty vocabulary".into()));
    }
    for (class, xi) in &targets.points {
        if xi.dim() != init.state_dim() {
            return Err(Error::Dimension { context: "regularization target", expected: init.state_dim(), actual: xi.dim() });
        }
        if !vocabulary.contains(class) {
            return Err(Error::InvalidArgument(format!("target class {class} is not in the fine-tuned vocabulary")));
        }
    }

    let input = FixedInput::from_corpus(corpus);
    let before = probe(&init, corpus, vocabulary, &input, cfg)?;

    let mut params = init;
    let mut targets_now = targets.clone();
    let mut opt = AdamState::new(cfg.adam, params.n_params());
    let mut rng_trials = stream_rng(cfg.seed, Stream::Trials);
    let lambda = T::of(cfg.lambda);
    let mut penalty_history = Vec::with_capacity(cfg.steps as usize);
    let mut loss_history = Vec::with_capacity(cfg.steps as usize);
    let mut diverged = None;

    for step in 1..=cfg.steps {
        if cfg.refresh_every > 0 && step > 1 && (step - 1) % cfg.refresh_every == 0 {
            targets_now = refresh_targets(&params, corpus, vocabulary, &input, &targets_now, cfg)?;
        }
        let batch = sample_batch(
            corpus,
            TaskKind::Classification,
            vocabulary,
            cfg.t_max,
            cfg.batch_size,
            cfg.noise_scale,
            &mut rng_trials,
        )?;
        penalty_history.push(penalty(&params, &targets_now, &input)?.as_f64());
        let (loss, mut grads) = match regularized_loss(&params, &batch, &targets_now, lambda, &input) {
            Ok(v) => v,
            Err(Error::NonFiniteLoss { trial, .. }) => {
                penalty_history.pop();
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
        loss_history.push(loss.as_f64());
    }

    let after = probe(&params, corpus, vocabulary, &input, cfg)?;
    let report = FineTuneReport {
        kind: targets.kind,
        lambda: cfg.lambda,
        before,
        after,
        penalty_history,
        loss_history,
        diverged,
    };
    Ok(FineTuneOutcome { params, report })
}

/// Recollect targets mid-run: centers of mass are recomputed from fresh
/// trials; slow points are re-descended from the previous points, which are
/// warm starts on the drifted landscape.
fn refresh_targets<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    input: &FixedInput<T>,
    current: &RegTargets<T>,
    cfg: &FineTuneConfig,
) -> Result<RegTargets<T>> {
    match current.kind {
        RegTargetKind::CenterOfMass => {
            let mut rng = stream_rng(mix(&[cfg.seed, 0x7a26e7]), Stream::Analysis);
            com_targets(params, corpus, vocabulary, cfg.seed_delay, cfg.n_per_class, cfg.noise_scale, &mut rng)
        }
        RegTargetKind::SlowPoint => {
            let warm = DescentOptions::warm();
            let mut points = Vec::with_capacity(current.points.len());
            for (class, xi) in &current.points {
                let rec = find_slow_point(params, input, xi, *class, &warm, 0, 0)?;
                points.push((*class, rec.xi_star));
            }
            Ok(RegTargets { kind: RegTargetKind::SlowPoint, points })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::single_stage_schedule;
    use crate::nncore::{init_params, LstmOutput, UnitType};
    use crate::taskgen::synth_corpus;
    use crate::trainer::{train, TrainConfig};

    fn small_setup() -> (Corpus<f64>, RnnParameters<f64>, RegTargets<f64>, FixedInput<f64>) {
        let corpus = synth_corpus::<f64>(2, 6, 6, 0.1, 41).unwrap();
        let params = init_params::<f64>(UnitType::Gru, 6, corpus.input_width(), 3, LstmOutput::PrevCell, 30);
        let input = FixedInput::from_corpus(&corpus);
        let mut rng = stream_rng(11, Stream::Analysis);
        let targets = com_targets(&params, &corpus, &[0, 1], 5, 3, 1.0, &mut rng).unwrap();
        (corpus, params, targets, input)
    }

    #[test]
    fn zero_lambda_is_bitwise_plain_loss() {
        let (corpus, params, targets, input) = small_setup();
        let mut rng = stream_rng(12, Stream::Trials);
        let batch = sample_batch(&corpus, TaskKind::Classification, &[0, 1], 6, 3, 1.0, &mut rng).unwrap();
        let (l0, g0) = loss_and_grads(&params, &batch).unwrap();
        let (l1, g1) = regularized_loss(&params, &batch, &targets, 0.0, &input).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
        assert!(regularized_loss(&params, &batch, &targets, -1.0, &input).is_err());
    }

    #[test]
    fn targets_on_exact_fixed_points_add_nothing() {
        let corpus = synth_corpus::<f64>(2, 6, 6, 0.1, 42).unwrap();
        // All-zero weights: preactivations vanish, so the GRU maps 0 to 0.
        let params = RnnParameters::<f64>::zeros(UnitType::Gru, 5, corpus.input_width(), 3, LstmOutput::PrevCell);
        let input = FixedInput::from_corpus(&corpus);
        let targets = RegTargets {
            kind: RegTargetKind::SlowPoint,
            points: vec![(0, AnalysisState(vec![0.0; 5])), (1, AnalysisState(vec![0.0; 5]))],
        };
        let (pen, grads) = penalty_and_grads(&params, &targets, &input).unwrap();
        assert_eq!(pen, 0.0);
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));

        let mut rng = stream_rng(13, Stream::Trials);
        let batch = sample_batch(&corpus, TaskKind::Classification, &[0, 1], 6, 2, 1.0, &mut rng).unwrap();
        let (plain, pg) = loss_and_grads(&params, &batch).unwrap();
        let (reg, rg) = regularized_loss(&params, &batch, &targets, 1.0, &input).unwrap();
        assert_eq!(plain, reg);
        assert_eq!(pg, rg);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences_on_a_few_coordinates() {
        let (corpus, params, _, input) = small_setup();
        let mut rng = stream_rng(14, Stream::Analysis);
        let targets = com_targets(&params, &corpus, &[0, 1], 5, 2, 1.0, &mut rng).unwrap();
        let (_, grads) = penalty_and_grads(&params, &targets, &input).unwrap();
        let flat_g = grads.to_flat();
        let flat_p = params.to_flat();
        let h = 1e-6;
        for &idx in &[0usize, 7, 23, flat_p.len() / 2, flat_p.len() - 1] {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let mut fp = flat_p.clone();
            fp[idx] += h;
            plus.copy_from_flat(&fp);
            fp[idx] -= 2.0 * h;
            minus.copy_from_flat(&fp);
            let num = (penalty(&plus, &targets, &input).unwrap() - penalty(&minus, &targets, &input).unwrap()) / (2.0 * h);
            let denom = num.abs().max(flat_g[idx].abs());
            if denom > 1e-6 {
                assert!(
                    ((num - flat_g[idx]) / denom).abs() < 1e-5,
                    "coord {idx}: numeric {num} vs analytic {}",
                    flat_g[idx]
                );
            } else {
                assert!((num - flat_g[idx]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_steps_change_nothing_and_probe_identically() {
        let (corpus, params, targets, _) = small_setup();
        let cfg = FineTuneConfig {
            steps: 0,
            batch_size: 2,
            t_max: 6,
            nominal_delay: 5,
            long_delay: 8,
            eval_trials: 8,
            n_per_class: 2,
            seed_delay: 5,
            ..FineTuneConfig::default()
        };
        let out = fine_tune(params.clone(), &corpus, &[0, 1], &targets, &cfg).unwrap();
        assert_eq!(out.params, params);
        assert_eq!(out.report.before.nominal_accuracy, out.report.after.nominal_accuracy);
        assert_eq!(out.report.before.mean_speed, out.report.after.mean_speed);
        assert!(out.report.penalty_history.is_empty());
    }

    #[test]
    fn zero_lambda_fine_tune_follows_plain_training_bitwise() {
        let corpus = synth_corpus::<f64>(2, 6, 6, 0.1, 43).unwrap();
        let init = init_params::<f64>(UnitType::Gru, 5, corpus.input_width(), 3, LstmOutput::PrevCell, 31);
        let schedule = single_stage_schedule(2, 6).unwrap();
        let train_cfg = TrainConfig {
            seed: 99,
            steps: 12,
            batch_size: 3,
            eval_cadence: 4,
            eval_trials: 8,
            checkpoint_cadence: 6,
            ..TrainConfig::default()
        };
        let plain = train(init.clone(), &corpus, &schedule, &train_cfg).unwrap();

        let mut rng = stream_rng(15, Stream::Analysis);
        let targets = com_targets(&init, &corpus, &[0, 1], 5, 2, 1.0, &mut rng).unwrap();
        let ft_cfg = FineTuneConfig {
            seed: 99,
            steps: 12,
            batch_size: 3,
            lambda: 0.0,
            t_max: 6,
            nominal_delay: 5,
            long_delay: 8,
            eval_trials: 8,
            n_per_class: 2,
            seed_delay: 5,
            ..FineTuneConfig::default()
        };
        let tuned = fine_tune(init, &corpus, &[0, 1], &targets, &ft_cfg).unwrap();
        assert_eq!(tuned.params, plain.final_params);
        assert_eq!(tuned.report.loss_history, plain.loss_history);
    }

    #[test]
    fn recorded_penalties_recompute_offline() {
        let (corpus, params, targets, input) = small_setup();
        let cfg = FineTuneConfig {
            seed: 3,
            steps: 4,
            batch_size: 2,
            lambda: 0.5,
            t_max: 6,
            nominal_delay: 5,
            long_delay: 8,
            eval_trials: 8,
            n_per_class: 2,
            seed_delay: 5,
            ..FineTuneConfig::default()
        };
        let out = fine_tune(params.clone(), &corpus, &[0, 1], &targets, &cfg).unwrap();
        assert_eq!(out.report.penalty_history.len(), 4);
        // Step 1's penalty is evaluated on the starting parameters.
        let p0 = penalty(&params, &targets, &input).unwrap();
        assert!((out.report.penalty_history[0] - p0).abs() <= 1e-12 * p0.max(1.0));
        assert!(out.report.diverged.is_none());
    }

    #[test]
    fn refreshing_targets_keeps_the_run_finite() {
        let (corpus, params, targets, _) = small_setup();
        for kind in [RegTargetKind::CenterOfMass, RegTargetKind::SlowPoint] {
            let t = RegTargets { kind, ..targets.clone() };
            let cfg = FineTuneConfig {
                seed: 4,
                steps: 6,
                batch_size: 2,
                lambda: 1.0,
                refresh_every: 2,
                t_max: 6,
                nominal_delay: 5,
                long_delay: 8,
                eval_trials: 8,
                n_per_class: 2,
                seed_delay: 5,
                ..FineTuneConfig::default()
            };
            let out = fine_tune(params.clone(), &corpus, &[0, 1], &t, &cfg).unwrap();
            assert_eq!(out.report.loss_history.len(), 6);
            assert!(out.report.loss_history.iter().all(|l| l.is_finite()));
            assert!(out.report.penalty_history.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let (corpus, params, targets, _) = small_setup();
        let cfg = FineTuneConfig { steps: 1, batch_size: 2, t_max: 6, nominal_delay: 5, long_delay: 8, eval_trials: 8, n_per_class: 2, seed_delay: 5, ..FineTuneConfig::default() };
        let bad_dim = RegTargets {
            kind: RegTargetKind::CenterOfMass,
            points: vec![(0, AnalysisState(vec![0.0; 2]))],
        };
        assert!(fine_tune(params.clone(), &corpus, &[0, 1], &bad_dim, &cfg).is_err());
        let bad_class = RegTargets {
            kind: RegTargetKind::CenterOfMass,
            points: vec![(5, AnalysisState(vec![0.0; params.state_dim()]))],
        };
        assert!(fine_tune(params.clone(), &corpus, &[0, 1], &bad_class, &cfg).is_err());
        assert!(fine_tune(params, &corpus, &[], &targets, &cfg).is_err());
    }
}
