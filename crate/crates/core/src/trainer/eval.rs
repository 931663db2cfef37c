//! Forward-only evaluation on probe trials with a fixed delay: stimulus at
//! step 1, response requested at step `1 + delay`. Tracks per-class accuracy
//! at the response step and null accuracy on every step before it.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nncore::RnnParameters;
use crate::real::Real;
use crate::taskgen::{
    render_extrapolation_trial, render_matching_extrapolation_trial, Corpus, TaskKind, MATCH_LABEL,
    NONMATCH_LABEL,
};

/// Accuracy tallies from one evaluation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub delay: usize,
    pub noise_scale: f64,
    /// Correct answers at the response step, indexed by class. For the
    /// matching task the indices are [`NONMATCH_LABEL`] and [`MATCH_LABEL`].
    pub per_class_correct: Vec<u64>,
    pub per_class_total: Vec<u64>,
    /// Null answers on the steps before the response step.
    pub null_correct: u64,
    pub null_total: u64,
}

impl EvalReport {
    fn new(delay: usize, noise_scale: f64, n_classes: usize) -> Self {
        EvalReport {
            delay,
            noise_scale,
            per_class_correct: vec![0; n_classes],
            per_class_total: vec![0; n_classes],
            null_correct: 0,
            null_total: 0,
        }
    }

    /// Accuracy at the response step, pooled over classes.
    pub fn response_accuracy(&self) -> f64 {
        let correct: u64 = self.per_class_correct.iter().sum();
        let total: u64 = self.per_class_total.iter().sum();
        if total == 0 {
            return f64::NAN;
        }
        correct as f64 / total as f64
    }

    /// Fraction of pre-response steps answered with the null class.
    pub fn null_accuracy(&self) -> f64 {
        if self.null_total == 0 {
            return f64::NAN;
        }
        self.null_correct as f64 / self.null_total as f64
    }

    /// Accuracy of one class, `None` when it was not evaluated.
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let total = *self.per_class_total.get(class)?;
        if total == 0 {
            return None;
        }
        Some(self.per_class_correct[class] as f64 / total as f64)
    }

    pub fn n_trials(&self) -> u64 {
        self.per_class_total.iter().sum()
    }
}

/// Evaluate classification on a restricted class set. Trials cycle through
/// `classes` round-robin so every class gets an equal share.
pub fn evaluate_classes<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    classes: &[usize],
    delay: usize,
    n_trials: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(delay, noise_scale, corpus.n_classes());
    let null = params.null_label();
    for k in 0..n_trials {
        let class = classes[k % classes.len()];
        let seq = render_extrapolation_trial(corpus, class, delay, noise_scale, rng)?;
        let t_a = seq.len();
        report.per_class_total[class] += 1;
        params.run_sequence(&seq.frames, |t, h, _| {
            let label = params.readout_label(h);
            if t == t_a {
                if label == class {
                    report.per_class_correct[class] += 1;
                }
            } else {
                report.null_total += 1;
                if label == null {
                    report.null_correct += 1;
                }
            }
        })?;
    }
    Ok(report)
}

/// Evaluate classification over the full vocabulary.
pub fn evaluate<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    delay: usize,
    n_trials: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    let classes: Vec<usize> = (0..corpus.n_classes()).collect();
    evaluate_classes(params, corpus, &classes, delay, n_trials, noise_scale, rng)
}

/// Evaluate the matching task: trials alternate match/non-match exactly, and
/// the first stimulus cycles through the vocabulary.
pub fn evaluate_matching<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    delay: usize,
    n_trials: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    let n_classes = corpus.n_classes();
    let mut report = EvalReport::new(delay, noise_scale, 2);
    let null = params.null_label();
    for k in 0..n_trials {
        let class_a = k % n_classes;
        let is_match = k % 2 == 0;
        let class_b = if is_match { class_a } else { (class_a + 1 + (k / 2) % (n_classes - 1)) % n_classes };
        let answer = if is_match { MATCH_LABEL } else { NONMATCH_LABEL };
        let seq = render_matching_extrapolation_trial(corpus, class_a, class_b, delay, noise_scale, rng)?;
        let t_a = seq.len();
        report.per_class_total[answer] += 1;
        params.run_sequence(&seq.frames, |t, h, _| {
            let label = params.readout_label(h);
            if t == t_a {
                if label == answer {
                    report.per_class_correct[answer] += 1;
                }
            } else {
                report.null_total += 1;
                if label == null {
                    report.null_correct += 1;
                }
            }
        })?;
    }
    Ok(report)
}

/// Matching evaluation grouped by the class of the first stimulus rather
/// than by the correct answer, so each remembered class gets its own
/// accuracy. Match and non-match trials alternate within every class.
pub fn evaluate_matching_by_first<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    delay: usize,
    n_trials: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    let n_classes = corpus.n_classes();
    let mut report = EvalReport::new(delay, noise_scale, n_classes);
    let null = params.null_label();
    for k in 0..n_trials {
        let class_a = k % n_classes;
        let is_match = (k / n_classes) % 2 == 0;
        let class_b = if is_match { class_a } else { (class_a + 1 + (k / 2) % (n_classes - 1)) % n_classes };
        let answer = if is_match { MATCH_LABEL } else { NONMATCH_LABEL };
        let seq = render_matching_extrapolation_trial(corpus, class_a, class_b, delay, noise_scale, rng)?;
        let t_a = seq.len();
        report.per_class_total[class_a] += 1;
        params.run_sequence(&seq.frames, |t, h, _| {
            let label = params.readout_label(h);
            if t == t_a {
                if label == answer {
                    report.per_class_correct[class_a] += 1;
                }
            } else {
                report.null_total += 1;
                if label == null {
                    report.null_correct += 1;
                }
            }
        })?;
    }
    Ok(report)
}

/// Evaluate at each delay in turn, e.g. to trace accuracy decay far beyond
/// the trained trial length.
pub fn extrapolation_curve<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    task: TaskKind,
    delays: &[usize],
    n_trials: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EvalReport>> {
    delays
        .iter()
        .map(|&delay| match task {
            TaskKind::Classification => evaluate(params, corpus, delay, n_trials, noise_scale, rng),
            TaskKind::Matching => evaluate_matching(params, corpus, delay, n_trials, noise_scale, rng),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{init_params, LstmOutput, UnitType};
    use crate::rng::{stream_rng, Stream};
    use crate::taskgen::synth_corpus;

    #[test]
    fn untrained_network_scores_at_chance_levels() {
        let corpus = synth_corpus::<f64>(4, 6, 10, 0.1, 3).unwrap();
        let params = init_params::<f64>(UnitType::Gru, 8, corpus.input_width(), 5, LstmOutput::PrevCell, 2);
        let mut rng = stream_rng(1, Stream::Eval);
        let r = evaluate(&params, &corpus, 8, 40, 1.0, &mut rng).unwrap();
        assert_eq!(r.n_trials(), 40);
        assert_eq!(r.per_class_total, vec![10; 4]);
        assert_eq!(r.null_total, 40 * 8);
        assert!(r.response_accuracy() <= 1.0);
    }

    #[test]
    fn perfect_null_network_gets_full_null_score_and_zero_response() {
        let corpus = synth_corpus::<f64>(3, 5, 6, 0.1, 4).unwrap();
        // Zero weights with a huge null bias: always answers null.
        let mut params = RnnParameters::<f64>::zeros(UnitType::Gru, 4, corpus.input_width(), 4, LstmOutput::PrevCell);
        params.b_out[3] = 10.0;
        let mut rng = stream_rng(2, Stream::Eval);
        let r = evaluate(&params, &corpus, 6, 30, 1.0, &mut rng).unwrap();
        assert_eq!(r.null_accuracy(), 1.0);
        assert_eq!(r.response_accuracy(), 0.0);
        assert_eq!(r.class_accuracy(0), Some(0.0));
        assert_eq!(r.class_accuracy(9), None);
    }

    #[test]
    fn matching_eval_balances_answers() {
        let corpus = synth_corpus::<f64>(3, 5, 6, 0.1, 5).unwrap();
        let params = init_params::<f64>(UnitType::Gru, 6, corpus.input_width(), 3, LstmOutput::PrevCell, 7);
        let mut rng = stream_rng(3, Stream::Eval);
        let r = evaluate_matching(&params, &corpus, 7, 40, 1.0, &mut rng).unwrap();
        assert_eq!(r.per_class_total[MATCH_LABEL], 20);
        assert_eq!(r.per_class_total[NONMATCH_LABEL], 20);
    }

    #[test]
    fn curve_runs_over_all_delays() {
        let corpus = synth_corpus::<f64>(2, 4, 5, 0.1, 6).unwrap();
        let params = init_params::<f64>(UnitType::Lstm, 4, corpus.input_width(), 3, LstmOutput::PrevCell, 8);
        let mut rng = stream_rng(4, Stream::Eval);
        let reports =
            extrapolation_curve(&params, &corpus, TaskKind::Classification, &[6, 12, 24], 10, 1.0, &mut rng).unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[2].delay, 24);
    }
}
