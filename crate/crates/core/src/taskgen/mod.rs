//! Delayed-classification trials. A trial of length `t_max` shows one
//! stimulus image at step `t_s` buried in per-pixel Gaussian noise whose
//! moments match the stimulus corpus, then raises the trigger channel at
//! step `t_a`; the network must answer with the stimulus class exactly then
//! and with the null class everywhere else. A matching variant replaces the
//! trigger with a second stimulus and asks same-or-different.

mod idx;
mod synth;

pub use idx::{load_mnist, Split};
pub use synth::synth_corpus;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nncore::InputFrame;
use crate::real::Real;

/// Which task the network is trained on; decides output width and rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Report the stimulus class when triggered. Output width `n_classes + 1`.
    Classification,
    /// Report whether a second stimulus matches the first. Output width 3:
    /// 0 = non-match, 1 = match, 2 = null.
    Matching,
}

/// Output class index meaning "no match" in the matching task.
pub const NONMATCH_LABEL: usize = 0;
/// Output class index meaning "match" in the matching task.
pub const MATCH_LABEL: usize = 1;
/// Output width of the matching task (non-match, match, null).
pub const MATCHING_N_OUT: usize = 3;

impl TaskKind {
    /// Readout width for this task over a corpus with `n_classes` classes.
    pub fn n_out(self, n_classes: usize) -> usize {
        match self {
            TaskKind::Classification => n_classes + 1,
            TaskKind::Matching => MATCHING_N_OUT,
        }
    }
}

/// Labeled stimulus collection with the per-pixel noise moments derived
/// from it. Pixels are stored in [0, 1].
#[derive(Debug, Clone)]
pub struct Corpus<T> {
    images: Vec<Vec<T>>,
    labels: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    n_pixels: usize,
    noise_mean: Vec<T>,
    noise_std: Vec<T>,
}

impl<T: Real> Corpus<T> {
    /// Build a corpus and compute its noise moments. Every image must have
    /// the same pixel count and every label must be below `n_classes`.
    pub fn new(images: Vec<Vec<T>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset { field: "images".into(), message: "corpus is empty".into() });
        }
        if images.len() != labels.len() {
            return Err(Error::Dataset {
                field: "labels".into(),
                message: format!("{} images but {} labels", images.len(), labels.len()),
            });
        }
        let n_pixels = images[0].len();
        if n_pixels == 0 {
            return Err(Error::Dataset { field: "images".into(), message: "images have zero pixels".into() });
        }
        for (i, img) in images.iter().enumerate() {
            if img.len() != n_pixels {
                return Err(Error::Dataset {
                    field: "images".into(),
                    message: format!("image {i} has {} pixels, expected {n_pixels}", img.len()),
                });
            }
        }
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(Error::Dataset {
                    field: "labels".into(),
                    message: format!("label {label} at index {i} exceeds class count {n_classes}"),
                });
            }
            by_class[label].push(i);
        }

        // Per-pixel mean and standard deviation over the whole corpus; the
        // noise frames are drawn from these moments.
        let n = images.len() as f64;
        let mut mean = vec![0.0f64; n_pixels];
        for img in &images {
            for (m, &p) in mean.iter_mut().zip(img) {
                *m += p.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; n_pixels];
        for img in &images {
            for (v, (&p, &m)) in var.iter_mut().zip(img.iter().zip(&mean)) {
                let dlt = p.as_f64() - m;
                *v += dlt * dlt;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);

        Ok(Corpus {
            images,
            labels,
            by_class,
            n_pixels,
            noise_mean: mean.iter().map(|&m| T::of(m)).collect(),
            noise_std: var.iter().map(|&v| T::of(v.sqrt())).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    /// Input width including the trigger channel.
    pub fn input_width(&self) -> usize {
        self.n_pixels + 1
    }

    pub fn image(&self, idx: usize) -> &[T] {
        &self.images[idx]
    }

    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn class_samples(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn noise_mean(&self) -> &[T] {
        &self.noise_mean
    }

    pub fn noise_std(&self) -> &[T] {
        &self.noise_std
    }

    /// The time-averaged input: mean noise pixels, trigger low. This is the
    /// fixed input frame the slow-point analysis probes the dynamics with.
    pub fn mean_noise_frame(&self) -> InputFrame<T> {
        InputFrame::new(self.noise_mean.clone(), false)
    }

    /// Uniformly random sample index from one class.
    pub fn sample_from_class(&self, class: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
        let pool = self
            .by_class
            .get(class)
            .ok_or(Error::EmptyClass { class })?;
        if pool.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        Ok(pool[rng.gen_range(0..pool.len())])
    }

    /// One noise frame: per-pixel Gaussian around the corpus moments, with
    /// the standard deviation scaled by `noise_scale`. Values are not
    /// clipped, so the moments stay exact.
    pub fn noise_frame(&self, noise_scale: f64, rng: &mut ChaCha8Rng) -> InputFrame<T> {
        let pixels = self
            .noise_mean
            .iter()
            .zip(&self.noise_std)
            .map(|(&m, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * T::of(z * noise_scale)
            })
            .collect();
        InputFrame::new(pixels, false)
    }
}

/// Placement and content of one classification trial. Times are 1-based:
/// the stimulus appears at step `t_s`, the trigger at `t_a`, and
/// `1 <= t_s < t_a <= t_max` with `t_a - t_s >= 5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSpec {
    pub t_s: usize,
    pub t_a: usize,
    pub t_max: usize,
    pub class: usize,
    pub sample_idx: usize,
}

/// Minimum gap between stimulus and trigger.
pub const MIN_DELAY: usize = 5;

/// Number of admissible `(t_s, t_a)` placements for a trial of length
/// `t_max`; zero when no placement fits.
pub fn admissible_pairs(t_max: usize) -> usize {
    if t_max < MIN_DELAY + 1 {
        0
    } else {
        let m = t_max - MIN_DELAY;
        m * (m + 1) / 2
    }
}

/// Draw a uniformly random admissible placement.
fn sample_placement(t_max: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    let total = admissible_pairs(t_max);
    if total == 0 {
        return Err(Error::NoAdmissiblePair { t_max });
    }
    let mut pick = rng.gen_range(0..total);
    for delay in MIN_DELAY..t_max {
        let placements = t_max - delay;
        if pick < placements {
            let t_s = 1 + pick;
            return Ok((t_s, t_s + delay));
        }
        pick -= placements;
    }
    unreachable!("placement counting covers the full range");
}

/// Draw a trial: uniform placement, uniform class from `vocabulary`,
/// uniform sample within the class.
pub fn sample_trial<T: Real>(
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    t_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrialSpec> {
    if vocabulary.is_empty() {
        return Err(Error::InvalidArgument("vocabulary is empty".into()));
    }
    let (t_s, t_a) = sample_placement(t_max, rng)?;
    let class = vocabulary[rng.gen_range(0..vocabulary.len())];
    let sample_idx = corpus.sample_from_class(class, rng)?;
    Ok(TrialSpec { t_s, t_a, t_max, class, sample_idx })
}

/// Placement and content of one matching trial: stimulus A at `t_s`,
/// stimulus B at `t_a`, no trigger anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchingTrialSpec {
    pub t_s: usize,
    pub t_a: usize,
    pub t_max: usize,
    pub class_a: usize,
    pub sample_a: usize,
    pub class_b: usize,
    pub sample_b: usize,
}

impl MatchingTrialSpec {
    pub fn is_match(&self) -> bool {
        self.class_a == self.class_b
    }
}

/// Draw a matching trial; the second stimulus matches the first with
/// probability one half.
pub fn sample_matching_trial<T: Real>(
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    t_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MatchingTrialSpec> {
    if vocabulary.len() < 2 {
        return Err(Error::InvalidArgument("matching task needs at least two classes".into()));
    }
    let (t_s, t_a) = sample_placement(t_max, rng)?;
    let class_a = vocabulary[rng.gen_range(0..vocabulary.len())];
    let class_b = if rng.gen::<f64>() < 0.5 {
        class_a
    } else {
        // Uniform over the other classes.
        let mut c = vocabulary[rng.gen_range(0..vocabulary.len() - 1)];
        if c == class_a {
            c = vocabulary[vocabulary.len() - 1];
        }
        c
    };
    let sample_a = corpus.sample_from_class(class_a, rng)?;
    let sample_b = corpus.sample_from_class(class_b, rng)?;
    Ok(MatchingTrialSpec { t_s, t_a, t_max, class_a, sample_a, class_b, sample_b })
}

/// One rendered trial: input frames plus the per-step target class and
/// cross-entropy weight. The response step carries weight `t_max`, every
/// other step weight 1.
#[derive(Debug, Clone)]
pub struct TrialSequence<T> {
    pub frames: Vec<InputFrame<T>>,
    pub targets: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Real> TrialSequence<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A training batch is just a list of rendered trials.
pub type TrialBatch<T> = Vec<TrialSequence<T>>;

/// Render a classification trial: noise everywhere except the stimulus
/// frame, trigger raised exactly at `t_a`, null target except at `t_a`.
pub fn render_trial<T: Real>(
    corpus: &Corpus<T>,
    spec: &TrialSpec,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> TrialSequence<T> {
    debug_assert!(spec.t_s >= 1 && spec.t_s < spec.t_a && spec.t_a <= spec.t_max);
    let null = corpus.n_classes();
    let mut frames = Vec::with_capacity(spec.t_max);
    let mut targets = Vec::with_capacity(spec.t_max);
    let mut weights = Vec::with_capacity(spec.t_max);
    for t in 1..=spec.t_max {
        let mut frame = if t == spec.t_s {
            InputFrame::new(corpus.image(spec.sample_idx).to_vec(), false)
        } else {
            corpus.noise_frame(noise_scale, rng)
        };
        if t == spec.t_a {
            frame.trigger = T::one();
            targets.push(spec.class);
            weights.push(T::of(spec.t_max as f64));
        } else {
            targets.push(null);
            weights.push(T::one());
        }
        frames.push(frame);
    }
    TrialSequence { frames, targets, weights }
}

/// Render a matching trial: both stimuli are images, the trigger channel
/// stays low for the whole trial, and the match/non-match answer is due on
/// the second stimulus frame.
pub fn render_matching_trial<T: Real>(
    corpus: &Corpus<T>,
    spec: &MatchingTrialSpec,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> TrialSequence<T> {
    debug_assert!(spec.t_s >= 1 && spec.t_s < spec.t_a && spec.t_a <= spec.t_max);
    let null = MATCHING_N_OUT - 1;
    let answer = if spec.is_match() { MATCH_LABEL } else { NONMATCH_LABEL };
    let mut frames = Vec::with_capacity(spec.t_max);
    let mut targets = Vec::with_capacity(spec.t_max);
    let mut weights = Vec::with_capacity(spec.t_max);
    for t in 1..=spec.t_max {
        let frame = if t == spec.t_s {
            InputFrame::new(corpus.image(spec.sample_a).to_vec(), false)
        } else if t == spec.t_a {
            InputFrame::new(corpus.image(spec.sample_b).to_vec(), false)
        } else {
            corpus.noise_frame(noise_scale, rng)
        };
        if t == spec.t_a {
            targets.push(answer);
            weights.push(T::of(spec.t_max as f64));
        } else {
            targets.push(null);
            weights.push(T::one());
        }
        frames.push(frame);
    }
    TrialSequence { frames, targets, weights }
}

/// Render a probe trial with a fixed delay: stimulus at step 1, trigger at
/// step `1 + delay`, trial ending on the trigger frame. Used for evaluation
/// at delays beyond the training range.
pub fn render_extrapolation_trial<T: Real>(
    corpus: &Corpus<T>,
    class: usize,
    delay: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialSequence<T>> {
    if delay == 0 {
        return Err(Error::InvalidArgument("extrapolation delay must be positive".into()));
    }
    let sample_idx = corpus.sample_from_class(class, rng)?;
    let spec = TrialSpec { t_s: 1, t_a: 1 + delay, t_max: 1 + delay, class, sample_idx };
    Ok(render_trial(corpus, &spec, noise_scale, rng))
}

/// Matching analogue of [`render_extrapolation_trial`]; `class_b` is the
/// second stimulus.
pub fn render_matching_extrapolation_trial<T: Real>(
    corpus: &Corpus<T>,
    class_a: usize,
    class_b: usize,
    delay: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialSequence<T>> {
    if delay == 0 {
        return Err(Error::InvalidArgument("extrapolation delay must be positive".into()));
    }
    let sample_a = corpus.sample_from_class(class_a, rng)?;
    let sample_b = corpus.sample_from_class(class_b, rng)?;
    let spec = MatchingTrialSpec { t_s: 1, t_a: 1 + delay, t_max: 1 + delay, class_a, sample_a, class_b, sample_b };
    Ok(render_matching_trial(corpus, &spec, noise_scale, rng))
}

/// Sample and render a full training batch for one curriculum stage.
pub fn sample_batch<T: Real>(
    corpus: &Corpus<T>,
    task: TaskKind,
    vocabulary: &[usize],
    t_max: usize,
    batch_size: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialBatch<T>> {
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let seq = match task {
            TaskKind::Classification => {
                let spec = sample_trial(corpus, vocabulary, t_max, rng)?;
                render_trial(corpus, &spec, noise_scale, rng)
            }
            TaskKind::Matching => {
                let spec = sample_matching_trial(corpus, vocabulary, t_max, rng)?;
                render_matching_trial(corpus, &spec, noise_scale, rng)
            }
        };
        batch.push(seq);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn tiny_corpus() -> Corpus<f64> {
        let images = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.8, 0.2, 0.0],
            vec![0.0, 1.0, 0.5],
            vec![0.0, 0.9, 0.6],
        ];
        let labels = vec![0, 0, 1, 1];
        Corpus::new(images, labels, 2).unwrap()
    }

    #[test]
    fn noise_moments_match_the_corpus() {
        let c = tiny_corpus();
        let want_mean = [0.45, 0.525, 0.275];
        for (got, want) in c.noise_mean().iter().zip(want_mean) {
            assert!((got - want).abs() < 1e-12);
        }
        // Population std of pixel 0: values 1.0, 0.8, 0.0, 0.0.
        let m = 0.45;
        let var = [1.0f64, 0.8, 0.0, 0.0].iter().map(|p| (p - m).powi(2)).sum::<f64>() / 4.0;
        assert!((c.noise_std()[0] - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn corpus_validation_names_the_problem() {
        let err = Corpus::<f64>::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0, 0], 1).unwrap_err();
        assert!(err.to_string().contains("image 1"));
        let err = Corpus::<f64>::new(vec![vec![0.0]], vec![3], 2).unwrap_err();
        assert!(err.to_string().contains("label 3"));
        let err = Corpus::<f64>::new(vec![], vec![], 1).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn admissible_pair_counts() {
        assert_eq!(admissible_pairs(5), 0);
        assert_eq!(admissible_pairs(6), 1);
        assert_eq!(admissible_pairs(20), 120);
    }

    #[test]
    fn shortest_trial_has_one_placement() {
        let c = tiny_corpus();
        let mut rng = stream_rng(5, Stream::Trials);
        for _ in 0..20 {
            let spec = sample_trial(&c, &[0, 1], 6, &mut rng).unwrap();
            assert_eq!((spec.t_s, spec.t_a), (1, 6));
        }
        assert!(matches!(sample_trial(&c, &[0, 1], 5, &mut rng), Err(Error::NoAdmissiblePair { t_max: 5 })));
    }

    #[test]
    fn placements_are_uniform_over_the_admissible_set() {
        let c = tiny_corpus();
        let mut rng = stream_rng(6, Stream::Trials);
        let t_max = 10;
        let total = admissible_pairs(t_max); // 15
        let n = 30_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let s = sample_trial(&c, &[0, 1], t_max, &mut rng).unwrap();
            assert!(s.t_a - s.t_s >= MIN_DELAY && s.t_a <= t_max && s.t_s >= 1);
            *counts.entry((s.t_s, s.t_a)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), total);
        let expect = n as f64 / total as f64;
        for (&pair, &k) in &counts {
            assert!(
                (k as f64 - expect).abs() < 5.0 * expect.sqrt(),
                "placement {pair:?} seen {k} times, expected about {expect}"
            );
        }
    }

    #[test]
    fn rendered_trial_has_stimulus_trigger_and_weights_in_place() {
        let c = tiny_corpus();
        let mut rng = stream_rng(7, Stream::Trials);
        let spec = TrialSpec { t_s: 2, t_a: 8, t_max: 9, class: 1, sample_idx: 2 };
        let seq = render_trial(&c, &spec, 1.0, &mut rng);
        assert_eq!(seq.len(), 9);
        assert_eq!(seq.frames[1].pixels, c.image(2));
        for (t0, f) in seq.frames.iter().enumerate() {
            assert_eq!(f.trigger, if t0 + 1 == 8 { 1.0 } else { 0.0 });
        }
        assert_eq!(seq.targets[7], 1);
        assert!(seq.targets.iter().enumerate().all(|(t0, &y)| t0 == 7 || y == 2));
        assert_eq!(seq.weights[7], 9.0);
        assert!(seq.weights.iter().enumerate().all(|(t0, &w)| t0 == 7 || w == 1.0));
    }

    #[test]
    fn zero_noise_scale_renders_the_mean_frame() {
        let c = tiny_corpus();
        let mut rng = stream_rng(8, Stream::Trials);
        let f = c.noise_frame(0.0, &mut rng);
        for (a, b) in f.pixels.iter().zip(c.noise_mean()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(f.trigger, 0.0);
    }

    #[test]
    fn matching_trials_balance_and_label_correctly() {
        let c = tiny_corpus();
        let mut rng = stream_rng(9, Stream::Trials);
        let mut matches = 0;
        let n = 4000;
        for _ in 0..n {
            let spec = sample_matching_trial(&c, &[0, 1], 10, &mut rng).unwrap();
            if spec.is_match() {
                matches += 1;
                assert_eq!(spec.class_a, spec.class_b);
            } else {
                assert_ne!(spec.class_a, spec.class_b);
            }
            let seq = render_matching_trial(&c, &spec, 1.0, &mut rng);
            assert!(seq.frames.iter().all(|f| f.trigger == 0.0), "matching trials never raise the trigger");
            let want = if spec.is_match() { MATCH_LABEL } else { NONMATCH_LABEL };
            assert_eq!(seq.targets[spec.t_a - 1], want);
            assert_eq!(seq.frames[spec.t_a - 1].pixels, c.image(spec.sample_b));
        }
        let rate = matches as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.03, "match rate {rate}");
    }

    #[test]
    fn extrapolation_trial_places_stimulus_first() {
        let c = tiny_corpus();
        let mut rng = stream_rng(10, Stream::Trials);
        let seq = render_extrapolation_trial(&c, 0, 40, 1.0, &mut rng).unwrap();
        assert_eq!(seq.len(), 41);
        assert_eq!(c.label(2), 1);
        assert_eq!(seq.targets[40], 0);
        assert_eq!(seq.frames[40].trigger, 1.0);
        assert!(render_extrapolation_trial(&c, 0, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn batches_are_reproducible_per_seed() {
        let c = tiny_corpus();
        let a = sample_batch(&c, TaskKind::Classification, &[0, 1], 8, 4, 1.0, &mut stream_rng(3, Stream::Trials)).unwrap();
        let b = sample_batch(&c, TaskKind::Classification, &[0, 1], 8, 4, 1.0, &mut stream_rng(3, Stream::Trials)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.targets, y.targets);
        }
    }
}
