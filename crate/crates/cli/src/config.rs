//! The experiment description file and its validation. Every knob a run
//! needs lives in one TOML document so a directory of artifacts is fully
//! reproducible from the copy stored next to them.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use memlab_core::curriculum::{
    decu_schedule, single_stage_schedule, vocu_schedule, AdvanceRule, CurriculumSchedule, DEFAULT_DELAY_LADDER,
};
use memlab_core::nncore::{LstmOutput, UnitType};
use memlab_core::slowpoint::DescentOptions;
use memlab_core::taskgen::TaskKind;
use memlab_core::trainer::{scaled_offset, AdamConfig, TrainConfig};

use crate::{CliError, CliResult};

fn d_downsample() -> usize {
    2
}
fn d_classes() -> usize {
    10
}
fn d_pixels() -> usize {
    36
}
fn d_samples() -> usize {
    100
}
fn d_jitter() -> f64 {
    0.1
}
fn d_dataset_seed() -> u64 {
    7
}
fn d_noise() -> f64 {
    1.0
}
fn d_threshold() -> f64 {
    0.9
}
fn d_window() -> usize {
    3
}
fn d_lr() -> f64 {
    1e-3
}
fn d_clip() -> f64 {
    10.0
}
fn d_cadence() -> u64 {
    250
}
fn d_eval_cadence() -> u64 {
    50
}
fn d_eval_trials() -> usize {
    200
}
fn d_seed_delay() -> usize {
    15
}
fn d_n_per_class() -> usize {
    100
}
fn d_analysis_trials() -> usize {
    600
}
fn d_tol() -> f64 {
    1e-9
}
fn d_max_iters() -> usize {
    20_000
}
fn d_permutations() -> usize {
    10_000
}
fn d_branch_window() -> u64 {
    2000
}
fn d_before_offset() -> u64 {
    1000
}
fn d_after_offset() -> u64 {
    4000
}
fn d_drop_noise() -> f64 {
    2.0
}
fn d_pca() -> usize {
    3
}
fn d_lambda() -> f64 {
    1.0
}
fn d_reg_steps() -> u64 {
    5000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub task: TaskSection,
    #[serde(default)]
    pub curriculum: CurriculumSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub regularization: RegSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// "synthetic" or "mnist".
    pub kind: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "d_downsample")]
    pub downsample: usize,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_pixels")]
    pub pixels: usize,
    #[serde(default = "d_samples")]
    pub samples_per_class: usize,
    #[serde(default = "d_jitter")]
    pub jitter: f64,
    #[serde(default = "d_dataset_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// "gru" or "lstm".
    pub unit: String,
    pub d: usize,
    /// "prev_cell" (default) or "new_cell".
    #[serde(default)]
    pub lstm_output: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// "classification" or "matching".
    pub kind: String,
    pub t_max: usize,
    #[serde(default = "d_noise")]
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSection {
    /// "vocu", "decu", or "none".
    pub protocol: String,
    /// "accuracy", "fixed", or "never".
    #[serde(default)]
    pub advance: Option<String>,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_window")]
    pub window: usize,
    #[serde(default)]
    pub fixed_steps: u64,
    /// Explicit class order for the vocabulary protocol; empty means 0..n.
    #[serde(default)]
    pub class_order: Vec<usize>,
    /// Delay ladder for the delay protocol; empty uses the default ladder
    /// scaled to end at `task.t_max`.
    #[serde(default)]
    pub delays: Vec<usize>,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        CurriculumSection {
            protocol: "none".into(),
            advance: None,
            threshold: d_threshold(),
            window: d_window(),
            fixed_steps: 0,
            class_order: Vec::new(),
            delays: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default = "d_cadence")]
    pub checkpoint_cadence: u64,
    #[serde(default = "d_eval_cadence")]
    pub eval_cadence: u64,
    #[serde(default = "d_eval_trials")]
    pub eval_trials: usize,
    /// 0 scales the nominal 2000-step window to the budget.
    #[serde(default)]
    pub dense_window: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "d_seed_delay")]
    pub seed_delay: usize,
    #[serde(default = "d_n_per_class")]
    pub n_per_class: usize,
    /// 0 means 10 × t_max.
    #[serde(default)]
    pub long_delay: usize,
    #[serde(default = "d_analysis_trials")]
    pub eval_trials: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default = "d_permutations")]
    pub permutations: usize,
    /// Empty means [t_max − 1, 2 t_max, 5 t_max, 10 t_max].
    #[serde(default)]
    pub extrapolation_delays: Vec<usize>,
    /// Nominal offsets against a 140k-step budget; scaled to the actual one.
    #[serde(default = "d_branch_window")]
    pub branch_window: u64,
    #[serde(default = "d_before_offset")]
    pub before_offset: u64,
    #[serde(default = "d_after_offset")]
    pub after_offset: u64,
    #[serde(default = "d_drop_noise")]
    pub drop_noise_scale: f64,
    #[serde(default = "d_pca")]
    pub pca_components: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            seed_delay: d_seed_delay(),
            n_per_class: d_n_per_class(),
            long_delay: 0,
            eval_trials: d_analysis_trials(),
            tol: d_tol(),
            max_iters: d_max_iters(),
            permutations: d_permutations(),
            extrapolation_delays: Vec::new(),
            branch_window: d_branch_window(),
            before_offset: d_before_offset(),
            after_offset: d_after_offset(),
            drop_noise_scale: d_drop_noise(),
            pca_components: d_pca(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegSection {
    /// "slow_point" or "center_of_mass".
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_reg_steps")]
    pub steps: u64,
    #[serde(default)]
    pub refresh_every: u64,
    /// 0 means 10 × t_max.
    #[serde(default)]
    pub long_delay: usize,
}

impl Default for RegSection {
    fn default() -> Self {
        RegSection { mode: None, lambda: d_lambda(), steps: d_reg_steps(), refresh_every: 0, long_delay: 0 }
    }
}

impl ExperimentConfig {
    /// Parse and validate a config file. Problems name the offending field.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.name.is_empty() {
            return fail("name: must not be empty".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds: at least one seed is required".into());
        }
        match self.dataset.kind.as_str() {
            "synthetic" => {
                if self.dataset.classes == 0 {
                    return fail("dataset.classes: must be positive".into());
                }
                if self.dataset.pixels < self.dataset.classes {
                    return fail(format!(
                        "dataset.pixels: need at least one pixel per class ({} < {})",
                        self.dataset.pixels, self.dataset.classes
                    ));
                }
                if self.dataset.samples_per_class == 0 {
                    return fail("dataset.samples_per_class: must be positive".into());
                }
            }
            "mnist" => {
                if self.dataset.path.is_none() {
                    return fail("dataset.path: required when dataset.kind = \"mnist\"".into());
                }
                if self.dataset.downsample == 0 {
                    return fail("dataset.downsample: must be positive".into());
                }
            }
            other => {
                return fail(format!("dataset.kind: unknown value {other:?} (expected \"synthetic\" or \"mnist\")"))
            }
        }
        match self.network.unit.as_str() {
            "gru" | "lstm" => {}
            other => return fail(format!("network.unit: unknown value {other:?} (expected \"gru\" or \"lstm\")")),
        }
        if self.network.d == 0 {
            return fail("network.d: must be positive".into());
        }
        if let Some(v) = &self.network.lstm_output {
            if v != "prev_cell" && v != "new_cell" {
                return fail(format!(
                    "network.lstm_output: unknown value {v:?} (expected \"prev_cell\" or \"new_cell\")"
                ));
            }
        }
        match self.task.kind.as_str() {
            "classification" | "matching" => {}
            other => {
                return fail(format!(
                    "task.kind: unknown value {other:?} (expected \"classification\" or \"matching\")"
                ))
            }
        }
        if self.task.t_max < 6 {
            return fail(format!("task.t_max: must be at least 6 so a delay of 5 fits, got {}", self.task.t_max));
        }
        if !(self.task.noise_scale >= 0.0) {
            return fail("task.noise_scale: must be nonnegative".into());
        }
        match self.curriculum.protocol.as_str() {
            "vocu" | "decu" | "none" => {}
            other => {
                return fail(format!(
                    "curriculum.protocol: unknown value {other:?} (expected \"vocu\", \"decu\", or \"none\")"
                ))
            }
        }
        if self.task.kind == "matching" && self.curriculum.protocol != "none" {
            return fail("curriculum.protocol: the matching task trains without a curriculum".into());
        }
        if let Some(adv) = &self.curriculum.advance {
            match adv.as_str() {
                "accuracy" | "fixed" | "never" => {}
                other => {
                    return fail(format!(
                        "curriculum.advance: unknown value {other:?} (expected \"accuracy\", \"fixed\", or \"never\")"
                    ))
                }
            }
            if adv == "fixed" && self.curriculum.fixed_steps == 0 {
                return fail("curriculum.fixed_steps: must be positive when advance = \"fixed\"".into());
            }
        }
        if !(0.0..=1.0).contains(&self.curriculum.threshold) {
            return fail(format!("curriculum.threshold: must be in [0, 1], got {}", self.curriculum.threshold));
        }
        if self.curriculum.window == 0 {
            return fail("curriculum.window: must be positive".into());
        }
        let n_classes = self.dataset.classes;
        if !self.curriculum.class_order.is_empty() {
            if let Some(&c) = self.curriculum.class_order.iter().find(|&&c| c >= n_classes) {
                return fail(format!("curriculum.class_order: class {c} is out of range for {n_classes} classes"));
            }
        }
        if !self.curriculum.delays.is_empty() {
            if self.curriculum.delays.windows(2).any(|w| w[1] <= w[0]) {
                return fail("curriculum.delays: must be strictly increasing".into());
            }
            if *self.curriculum.delays.last().unwrap() != self.task.t_max {
                return fail(format!(
                    "curriculum.delays: the ladder must end at task.t_max = {}, got {:?}",
                    self.task.t_max, self.curriculum.delays
                ));
            }
        }
        if self.training.steps == 0 {
            return fail("training.steps: must be positive".into());
        }
        if self.training.batch_size == 0 {
            return fail("training.batch_size: must be positive".into());
        }
        if !(self.training.learning_rate > 0.0) {
            return fail("training.learning_rate: must be positive".into());
        }
        if self.training.checkpoint_cadence == 0 || self.training.eval_cadence == 0 {
            return fail("training.checkpoint_cadence and training.eval_cadence: must be positive".into());
        }
        if self.training.eval_trials == 0 {
            return fail("training.eval_trials: must be positive".into());
        }
        if self.analysis.seed_delay == 0 {
            return fail("analysis.seed_delay: must be positive".into());
        }
        if self.analysis.n_per_class == 0 {
            return fail("analysis.n_per_class: must be positive".into());
        }
        if !(self.analysis.tol > 0.0) {
            return fail("analysis.tol: must be positive".into());
        }
        if self.analysis.pca_components == 0 {
            return fail("analysis.pca_components: must be positive".into());
        }
        if let Some(mode) = &self.regularization.mode {
            if mode != "slow_point" && mode != "center_of_mass" {
                return fail(format!(
                    "regularization.mode: unknown value {mode:?} (expected \"slow_point\" or \"center_of_mass\")"
                ));
            }
        }
        if !(self.regularization.lambda >= 0.0) {
            return fail("regularization.lambda: must be nonnegative".into());
        }
        Ok(())
    }

    pub fn unit_type(&self) -> UnitType {
        match self.network.unit.as_str() {
            "gru" => UnitType::Gru,
            _ => UnitType::Lstm,
        }
    }

    pub fn lstm_output(&self) -> LstmOutput {
        match self.network.lstm_output.as_deref() {
            Some("new_cell") => LstmOutput::NewCell,
            _ => LstmOutput::PrevCell,
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.task.kind.as_str() {
            "matching" => TaskKind::Matching,
            _ => TaskKind::Classification,
        }
    }

    fn advance_rule(&self) -> AdvanceRule {
        match self.curriculum.advance.as_deref() {
            Some("fixed") => AdvanceRule::FixedSteps(self.curriculum.fixed_steps),
            Some("never") => AdvanceRule::Never,
            _ => AdvanceRule::AccuracyThreshold { threshold: self.curriculum.threshold, window: self.curriculum.window },
        }
    }

    pub fn schedule(&self) -> CliResult<CurriculumSchedule> {
        let n = self.dataset.classes;
        let t_max = self.task.t_max;
        let schedule = match self.curriculum.protocol.as_str() {
            "vocu" => {
                let default_order: Vec<usize> = (0..n).collect();
                let order =
                    if self.curriculum.class_order.is_empty() { &default_order } else { &self.curriculum.class_order };
                vocu_schedule(order, t_max, self.advance_rule())
            }
            "decu" => {
                let ladder = if self.curriculum.delays.is_empty() {
                    default_decu_ladder(t_max)
                } else {
                    self.curriculum.delays.clone()
                };
                decu_schedule(n, &ladder, self.advance_rule())
            }
            _ => single_stage_schedule(n, t_max),
        };
        schedule.map_err(|e| CliError::Config(format!("curriculum: {e}")))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            steps: self.training.steps,
            batch_size: self.training.batch_size,
            task: self.task_kind(),
            adam: AdamConfig { learning_rate: self.training.learning_rate, ..AdamConfig::default() },
            grad_clip: (self.training.grad_clip > 0.0).then_some(self.training.grad_clip),
            noise_scale: self.task.noise_scale,
            checkpoint_cadence: self.training.checkpoint_cadence,
            eval_cadence: self.training.eval_cadence,
            eval_trials: self.training.eval_trials,
            dense_window: (self.training.dense_window > 0).then_some(self.training.dense_window),
        }
    }

    pub fn descent_options(&self) -> DescentOptions {
        DescentOptions { tol: self.analysis.tol, max_iters: self.analysis.max_iters, ..DescentOptions::default() }
    }

    /// Delay probed for long-memory accuracy; defaults to 10 × t_max.
    pub fn long_delay(&self) -> usize {
        if self.analysis.long_delay > 0 {
            self.analysis.long_delay
        } else {
            10 * self.task.t_max
        }
    }

    pub fn extrapolation_delays(&self) -> Vec<usize> {
        if !self.analysis.extrapolation_delays.is_empty() {
            return self.analysis.extrapolation_delays.clone();
        }
        let t = self.task.t_max;
        vec![t - 1, 2 * t, 5 * t, 10 * t]
    }

    /// Branch window scaled to this experiment's step budget.
    pub fn scaled_branch_window(&self) -> u64 {
        scaled_offset(self.analysis.branch_window, self.training.steps)
    }

    pub fn scaled_before_offset(&self) -> u64 {
        scaled_offset(self.analysis.before_offset, self.training.steps)
    }

    pub fn scaled_after_offset(&self) -> u64 {
        scaled_offset(self.analysis.after_offset, self.training.steps)
    }

    /// Experiment directory: explicit `out_dir`, or `runs/<name>`.
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }
}

/// Shrink the default delay ladder so it tops out at `t_max`, keeping its
/// relative spacing.
fn default_decu_ladder(t_max: usize) -> Vec<usize> {
    let reference = *DEFAULT_DELAY_LADDER.last().unwrap();
    if t_max == reference {
        return DEFAULT_DELAY_LADDER.to_vec();
    }
    let mut ladder: Vec<usize> = DEFAULT_DELAY_LADDER
        .iter()
        .map(|&v| ((v * t_max + reference / 2) / reference).max(6))
        .collect();
    *ladder.last_mut().unwrap() = t_max;
    ladder.dedup();
    ladder
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
            name = "demo"
            seeds = [1, 2]

            [dataset]
            kind = "synthetic"
            classes = 4
            pixels = 16
            samples_per_class = 10

            [network]
            unit = "gru"
            d = 8

            [task]
            kind = "classification"
            t_max = 10

            [curriculum]
            protocol = "vocu"

            [training]
            steps = 100
            batch_size = 8
        "#
        .to_string()
    }

    #[test]
    fn valid_config_parses_and_converts() {
        let cfg: ExperimentConfig = toml::from_str(&base_toml()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.unit_type(), UnitType::Gru);
        let schedule = cfg.schedule().unwrap();
        assert_eq!(schedule.n_stages(), 3);
        assert_eq!(cfg.long_delay(), 100);
        assert_eq!(cfg.extrapolation_delays(), vec![9, 20, 50, 100]);
        let tc = cfg.train_config(5);
        assert_eq!(tc.seed, 5);
        assert_eq!(tc.grad_clip, Some(10.0));
    }

    #[test]
    fn bad_values_name_their_field() {
        let cases = [
            ("protocol = \"vocu\"", "protocol = \"sideways\"", "curriculum.protocol"),
            ("unit = \"gru\"", "unit = \"elman\"", "network.unit"),
            ("kind = \"classification\"", "kind = \"sorting\"", "task.kind"),
            ("t_max = 10", "t_max = 3", "task.t_max"),
            ("seeds = [1, 2]", "seeds = []", "seeds"),
        ];
        for (from, to, field) in cases {
            let text = base_toml().replace(from, to);
            let err = toml::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Config(e.to_string()))
                .and_then(|c| c.validate())
                .unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(field), "{msg:?} should mention {field}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = base_toml().replace("[training]", "typo_key = 3\n[training]");
        let err = toml::from_str::<ExperimentConfig>(&text).map(|_| ()).unwrap_err();
        assert!(err.to_string().contains("typo_key"));
    }

    #[test]
    fn decu_ladder_scales_with_t_max() {
        assert_eq!(default_decu_ladder(20), vec![6, 9, 12, 16, 20]);
        let short = default_decu_ladder(10);
        assert_eq!(*short.last().unwrap(), 10);
        assert!(short.windows(2).all(|w| w[1] > w[0]), "{short:?}");
        assert!(short.iter().all(|&v| v >= 6));
    }

    #[test]
    fn matching_task_rejects_curricula() {
        let text = base_toml().replace("kind = \"classification\"", "kind = \"matching\"");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("curriculum.protocol"));
    }
}
