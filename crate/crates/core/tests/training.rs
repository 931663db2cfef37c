//! End-to-end training sanity on a small instance: the loss comes down, the
//! evaluator sees better-than-chance retrieval, stage transitions land where
//! the advance rule puts them, and the whole run replays bit for bit.

use memlab_core::curriculum::{vocu_schedule, AdvanceRule};
use memlab_core::nncore::{init_params, LstmOutput, UnitType};
use memlab_core::rng::{stream_rng, Stream};
use memlab_core::taskgen::{synth_corpus, TaskKind};
use memlab_core::trainer::{evaluate, train, AdamConfig, TrainConfig};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn a_short_run_learns_and_replays_deterministically() {
    let corpus = synth_corpus::<f64>(3, 12, 8, 0.08, 5).unwrap();
    let schedule = vocu_schedule(&[0, 1, 2], 6, AdvanceRule::FixedSteps(150)).unwrap();
    let cfg = TrainConfig {
        seed: 17,
        steps: 700,
        batch_size: 16,
        task: TaskKind::Classification,
        adam: AdamConfig { learning_rate: 5e-3, ..AdamConfig::default() },
        noise_scale: 1.0,
        checkpoint_cadence: 100,
        eval_cadence: 50,
        eval_trials: 60,
        ..TrainConfig::default()
    };
    let init = init_params(UnitType::Gru, 12, corpus.input_width(), 4, LstmOutput::PrevCell, 3);

    let out = train(init.clone(), &corpus, &schedule, &cfg).unwrap();
    assert!(out.diverged.is_none());
    assert!(out.final_params.all_finite());
    assert_eq!(out.loss_history.len(), 700);

    let head = mean(&out.loss_history[..100]);
    let tail = mean(&out.loss_history[600..]);
    assert!(tail < 0.7 * head, "loss did not come down: {head:.4} -> {tail:.4}");

    // The vocabulary grows at exactly the fixed-step boundaries.
    assert_eq!(out.archive.class_introductions(), vec![(2, 150)]);
    assert_eq!(out.archive.final_step(), 700);
    assert!(out.archive.snapshots().iter().any(|s| s.step == 700));

    // Retrieval at the nominal delay beats the three-class chance level
    // comfortably, and the null label is essentially solved.
    let mut rng = stream_rng(99, Stream::Eval);
    let report = evaluate(&out.final_params, &corpus, 5, 120, 1.0, &mut rng).unwrap();
    assert!(report.response_accuracy() > 0.55, "accuracy {:.3}", report.response_accuracy());
    assert!(report.null_accuracy() > 0.95, "null accuracy {:.3}", report.null_accuracy());

    let replay = train(init, &corpus, &schedule, &cfg).unwrap();
    assert_eq!(replay.loss_history, out.loss_history);
    assert_eq!(replay.final_params, out.final_params);
}

#[test]
fn lstm_training_stays_finite_and_improves() {
    let corpus = synth_corpus::<f64>(2, 10, 6, 0.08, 6).unwrap();
    let schedule = vocu_schedule(&[0, 1], 6, AdvanceRule::Never).unwrap();
    let cfg = TrainConfig {
        seed: 23,
        steps: 400,
        batch_size: 16,
        adam: AdamConfig { learning_rate: 5e-3, ..AdamConfig::default() },
        checkpoint_cadence: 100,
        eval_cadence: 50,
        eval_trials: 60,
        ..TrainConfig::default()
    };
    let init = init_params(UnitType::Lstm, 10, corpus.input_width(), 3, LstmOutput::PrevCell, 7);

    let out = train(init, &corpus, &schedule, &cfg).unwrap();
    assert!(out.diverged.is_none());
    let head = mean(&out.loss_history[..80]);
    let tail = mean(&out.loss_history[320..]);
    assert!(tail < head, "loss did not improve: {head:.4} -> {tail:.4}");
    assert!(out.eval_history.last().unwrap().accuracy > 0.5);
}
