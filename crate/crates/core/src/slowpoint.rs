//! Hidden-state speed and slow-point location.
//!
//! Freezing the input at the background noise average turns one update of
//! the network into a map F on analysis states. The speed S(ξ) = ‖F(ξ) − ξ‖
//! measures how fast the state drifts at ξ; trained networks park class
//! memories near local minima of S. This module finds those minima by
//! descending S² from class-averaged trajectory states.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf};
use crate::nncore::{AnalysisState, InputFrame, RnnParameters};
use crate::real::Real;
use crate::rng::{mix, stream_rng, Stream};
use crate::stats::{spearman_test, SpearmanTest};
use crate::taskgen::{render_extrapolation_trial, Corpus, TaskKind};
use crate::trainer::{evaluate_classes, evaluate_matching_by_first};

/// Delay used when collecting class-average seed states, the midpoint of
/// typical training delays.
pub const DEFAULT_SEED_DELAY: usize = 15;

/// Two located points closer than this are treated as the same point.
pub const IDENTITY_TOL: f64 = 1e-3;

/// Background frame the dynamics are frozen at: noise pixels, trigger off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedInput<T> {
    frame: InputFrame<T>,
}

impl<T: Real> FixedInput<T> {
    /// The mean noise image, the canonical analysis input.
    pub fn from_corpus(corpus: &Corpus<T>) -> Self {
        FixedInput { frame: corpus.mean_noise_frame() }
    }

    /// A caller-chosen background image.
    pub fn new(pixels: Vec<T>) -> Self {
        FixedInput { frame: InputFrame::new(pixels, false) }
    }

    /// A randomly drawn noise image, for robustness sweeps.
    pub fn sampled(corpus: &Corpus<T>, noise_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut frame = corpus.noise_frame(noise_scale, rng);
        frame.trigger = T::zero();
        FixedInput { frame }
    }

    pub fn frame(&self) -> &InputFrame<T> {
        &self.frame
    }
}

/// A differentiable discrete-time map on ℝⁿ. Implemented by the network
/// dynamics and by hand-built test maps with known fixed points.
pub trait StateMap<T: Real> {
    fn dim(&self) -> usize;
    /// F(ξ).
    fn apply(&self, xi: &[T]) -> Result<Vec<T>>;
    /// Jᵀv, the Jacobian of F at ξ applied to a cotangent.
    fn pullback(&self, xi: &[T], cotangent: &[T]) -> Result<Vec<T>>;
}

/// Network dynamics under a fixed background input.
pub struct RnnMap<'a, T> {
    pub params: &'a RnnParameters<T>,
    pub input: &'a FixedInput<T>,
}

impl<T: Real> StateMap<T> for RnnMap<'_, T> {
    fn dim(&self) -> usize {
        self.params.state_dim()
    }

    fn apply(&self, xi: &[T]) -> Result<Vec<T>> {
        self.params.forward_map(xi, &self.input.frame)
    }

    fn pullback(&self, xi: &[T], cotangent: &[T]) -> Result<Vec<T>> {
        self.params.forward_map_pullback(xi, &self.input.frame, cotangent)
    }
}

fn residual<T: Real, M: StateMap<T> + ?Sized>(map: &M, xi: &[T]) -> Result<Vec<T>> {
    let mut r = map.apply(xi)?;
    for (ri, &xii) in r.iter_mut().zip(xi) {
        *ri -= xii;
    }
    Ok(r)
}

/// One-step displacement norm S(ξ) = ‖F(ξ) − ξ‖₂.
pub fn speed<T: Real, M: StateMap<T> + ?Sized>(map: &M, xi: &[T]) -> Result<T> {
    let r = residual(map, xi)?;
    Ok(dot(&r, &r).sqrt())
}

/// Value and gradient of the squared speed: S²(ξ) = ‖F(ξ) − ξ‖² with
/// ∇S² = 2 (Jᵀ − I)(F(ξ) − ξ). Smooth everywhere, including fixed points.
pub fn speed_sq_grad<T: Real, M: StateMap<T> + ?Sized>(map: &M, xi: &[T]) -> Result<(T, Vec<T>)> {
    let r = residual(map, xi)?;
    let val = dot(&r, &r);
    let mut grad = map.pullback(xi, &r)?;
    for (gi, &ri) in grad.iter_mut().zip(&r) {
        *gi = (*gi - ri) * T::of(2.0);
    }
    Ok((val, grad))
}

/// Gradient of S itself, ∇S = ∇S² / (2S). Errors at a fixed point, where
/// the norm is not differentiable; descent therefore runs on S².
pub fn speed_gradient<T: Real, M: StateMap<T> + ?Sized>(map: &M, xi: &[T]) -> Result<Vec<T>> {
    let (val, mut grad) = speed_sq_grad(map, xi)?;
    let s = val.sqrt();
    if !(s > T::zero()) {
        return Err(Error::InvalidArgument(
            "speed gradient is singular at a fixed point; descend the squared speed instead".into(),
        ));
    }
    let inv = T::of(0.5) / s;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct DescentOptions {
    /// Stop when ‖∇S²‖∞ falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant for the backtracking line search.
    pub armijo_c: f64,
    /// Step size each line search starts from, halved until accepted.
    pub init_step: f64,
    /// Record S² after every accepted step.
    pub record_trace: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { tol: 1e-9, max_iters: 20_000, armijo_c: 1e-4, init_step: 1.0, record_trace: false }
    }
}

impl DescentOptions {
    /// Cheaper settings for continuation from a warm start, used when
    /// tracking a point across nearby parameter snapshots.
    pub fn warm() -> Self {
        DescentOptions { tol: 1e-8, max_iters: 5_000, ..DescentOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct DescentOutcome<T> {
    pub xi: AnalysisState<T>,
    pub speed: T,
    pub speed_sq: T,
    /// ‖∇S²‖∞ at the returned point.
    pub grad_inf: T,
    pub iters: usize,
    pub converged: bool,
    /// S² at the start and after each accepted step, when requested.
    pub trace: Vec<T>,
}

/// Minimize S² by gradient descent with a backtracking (Armijo) line
/// search. The sufficient-decrease test means no accepted step ever raises
/// the objective, so a stalled search shows up as line-search exhaustion:
/// the current best point is returned with `converged = false`.
pub fn descend<T: Real, M: StateMap<T> + ?Sized>(map: &M, xi0: &[T], opts: &DescentOptions) -> Result<DescentOutcome<T>> {
    if xi0.len() != map.dim() {
        return Err(Error::Dimension { context: "descent start state", expected: map.dim(), actual: xi0.len() });
    }
    if !xi0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState { context: "descent start state" });
    }

    let mut xi = xi0.to_vec();
    let (mut val, mut grad) = speed_sq_grad(map, &xi)?;
    if !val.is_finite() {
        return Err(Error::NonFiniteState { context: "speed at descent start" });
    }
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(val);
    }

    let c = T::of(opts.armijo_c);
    let mut iters = 0;
    let mut converged = false;
    let mut candidate = vec![T::zero(); xi.len()];
    while iters < opts.max_iters {
        if norm_inf(&grad).as_f64() < opts.tol {
            converged = true;
            break;
        }
        let g2 = dot(&grad, &grad);
        let mut step = T::of(opts.init_step);
        let mut accepted = false;
        while step.as_f64() >= 1e-18 {
            for ((ci, &xii), &gi) in candidate.iter_mut().zip(&xi).zip(&grad) {
                *ci = xii - step * gi;
            }
            if candidate.iter().all(|v| v.is_finite()) {
                let (cval, cgrad) = speed_sq_grad(map, &candidate)?;
                if cval.is_finite() && cval <= val - c * step * g2 {
                    std::mem::swap(&mut xi, &mut candidate);
                    val = cval;
                    grad = cgrad;
                    accepted = true;
                    break;
                }
            }
            step *= T::of(0.5);
        }
        iters += 1;
        if !accepted {
            break;
        }
        if opts.record_trace {
            trace.push(val);
        }
    }
    if !converged && norm_inf(&grad).as_f64() < opts.tol {
        converged = true;
    }
    Ok(DescentOutcome { speed: val.sqrt(), speed_sq: val, grad_inf: norm_inf(&grad), iters, converged, trace, xi: AnalysisState(xi) })
}

/// A located slow point with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowPointRecord<T> {
    /// Class whose trajectory average seeded the descent.
    pub class_seed: usize,
    pub xi_star: AnalysisState<T>,
    pub speed: T,
    /// Readout class at the point; `n_out − 1` is the null class.
    pub label: usize,
    pub descent_iters: usize,
    pub converged: bool,
    /// Training step of the parameters analyzed.
    pub source_step: u64,
    /// Run seed those parameters came from.
    pub source_seed: u64,
}

/// Descend from `xi0` under the fixed input and package the result.
pub fn find_slow_point<T: Real>(
    params: &RnnParameters<T>,
    input: &FixedInput<T>,
    xi0: &AnalysisState<T>,
    class_seed: usize,
    opts: &DescentOptions,
    source_step: u64,
    source_seed: u64,
) -> Result<SlowPointRecord<T>> {
    let map = RnnMap { params, input };
    let out = descend(&map, xi0.as_slice(), opts)?;
    let label = params.readout_label(&out.xi.as_slice()[..params.d]);
    Ok(SlowPointRecord {
        class_seed,
        xi_star: out.xi,
        speed: out.speed,
        label,
        descent_iters: out.iters,
        converged: out.converged,
        source_step,
        source_seed,
    })
}

/// Number of well-separated points among the records: greedy clustering at
/// the [`IDENTITY_TOL`] radius (or a caller-chosen one).
pub fn distinct_points<T: Real>(records: &[SlowPointRecord<T>], threshold: f64) -> usize {
    let mut kept: Vec<&AnalysisState<T>> = Vec::new();
    for rec in records {
        if kept.iter().all(|k| k.distance(&rec.xi_star).as_f64() > threshold) {
            kept.push(&rec.xi_star);
        }
    }
    kept.len()
}

/// Average analysis state per class at the end of the delay period: for
/// each class, render `n_per_class` probe trials at `delay`, take the state
/// on the last step before the trigger frame, and average.
pub fn class_seeds<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    vocabulary: &[usize],
    delay: usize,
    n_per_class: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, AnalysisState<T>)>> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("class seeds need at least one trial per class".into()));
    }
    let scale = T::of(1.0 / n_per_class as f64);
    let mut out = Vec::with_capacity(vocabulary.len());
    for &class in vocabulary {
        let mut acc = vec![T::zero(); params.state_dim()];
        for _ in 0..n_per_class {
            let seq = render_extrapolation_trial(corpus, class, delay, noise_scale, rng)?;
            params.run_sequence(&seq.frames[..delay], |t, h, c| {
                if t == delay {
                    let xi = params.analysis_state(h, c);
                    for (a, &v) in acc.iter_mut().zip(xi.as_slice()) {
                        *a += v;
                    }
                }
            })?;
        }
        for a in &mut acc {
            *a *= scale;
        }
        out.push((class, AnalysisState(acc)));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TableConfig {
    /// Delay for collecting class seeds.
    pub seed_delay: usize,
    /// Trials averaged into each class seed.
    pub n_per_class: usize,
    /// Delay at which per-class accuracy joins the speeds.
    pub long_delay: usize,
    /// Evaluation trials per network (split round-robin over classes).
    pub eval_trials: usize,
    pub noise_scale: f64,
    /// Classification correlates each class's slow point with that class's
    /// accuracy; matching groups accuracy by the remembered first stimulus.
    pub task: TaskKind,
    pub descent: DescentOptions,
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            seed_delay: DEFAULT_SEED_DELAY,
            n_per_class: 100,
            long_delay: 60,
            eval_trials: 400,
            noise_scale: 1.0,
            task: TaskKind::Classification,
            descent: DescentOptions::default(),
            n_permutations: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedAccuracyRow {
    pub network: usize,
    pub class: usize,
    pub speed: f64,
    pub accuracy: f64,
    pub converged: bool,
}

/// Per-(network, class) slow-point speed joined with long-delay accuracy,
/// plus the rank correlation over the converged rows. The correlation is
/// `None` when fewer than two converged rows exist or either column is
/// constant.
pub fn speed_accuracy_table<T: Real>(
    networks: &[RnnParameters<T>],
    corpus: &Corpus<T>,
    cfg: &TableConfig,
) -> Result<(Vec<SpeedAccuracyRow>, Option<SpearmanTest>)> {
    if networks.is_empty() {
        return Err(Error::InvalidArgument("speed/accuracy table needs at least one network".into()));
    }
    let input = FixedInput::from_corpus(corpus);
    let vocab: Vec<usize> = (0..corpus.n_classes()).collect();
    let mut rows = Vec::with_capacity(networks.len() * vocab.len());
    for (idx, params) in networks.iter().enumerate() {
        let mut rng = stream_rng(mix(&[cfg.seed, idx as u64]), Stream::Analysis);
        let seeds = class_seeds(params, corpus, &vocab, cfg.seed_delay, cfg.n_per_class, cfg.noise_scale, &mut rng)?;
        let report = match cfg.task {
            TaskKind::Classification => {
                evaluate_classes(params, corpus, &vocab, cfg.long_delay, cfg.eval_trials, cfg.noise_scale, &mut rng)?
            }
            TaskKind::Matching => {
                evaluate_matching_by_first(params, corpus, cfg.long_delay, cfg.eval_trials, cfg.noise_scale, &mut rng)?
            }
        };
        for (class, seed) in &seeds {
            let rec = find_slow_point(params, &input, seed, *class, &cfg.descent, 0, idx as u64)?;
            rows.push(SpeedAccuracyRow {
                network: idx,
                class: *class,
                speed: rec.speed.as_f64(),
                accuracy: report.class_accuracy(*class).unwrap_or(0.0),
                converged: rec.converged,
            });
        }
    }
    let xs: Vec<f64> = rows.iter().filter(|r| r.converged).map(|r| r.speed).collect();
    let ys: Vec<f64> = rows.iter().filter(|r| r.converged).map(|r| r.accuracy).collect();
    let test = spearman_test(&xs, &ys, cfg.n_permutations, mix(&[cfg.seed, u64::from(Stream::Permutation as u8)]));
    Ok((rows, test))
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessRow {
    pub input: usize,
    pub class_seed: usize,
    pub speed: f64,
    /// Distance from the original point to the one relocated under the
    /// alternative input.
    pub displacement: f64,
    pub converged: bool,
}

/// Re-descend each record under freshly sampled noise backgrounds to check
/// that the located points are not artifacts of the mean-noise input.
pub fn input_robustness<T: Real>(
    params: &RnnParameters<T>,
    corpus: &Corpus<T>,
    records: &[SlowPointRecord<T>],
    n_inputs: usize,
    noise_scale: f64,
    opts: &DescentOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::with_capacity(n_inputs * records.len());
    for k in 0..n_inputs {
        let input = FixedInput::sampled(corpus, noise_scale, rng);
        for rec in records {
            let moved = find_slow_point(params, &input, &rec.xi_star, rec.class_seed, opts, rec.source_step, rec.source_seed)?;
            rows.push(RobustnessRow {
                input: k,
                class_seed: rec.class_seed,
                speed: moved.speed.as_f64(),
                displacement: moved.xi_star.distance(&rec.xi_star).as_f64(),
                converged: moved.converged,
            });
        }
    }
    Ok(rows)
}
