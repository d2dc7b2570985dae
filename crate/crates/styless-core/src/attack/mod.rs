//! The iterative sign-method attack family and its style-injected extension.
//!
//! Every attack runs the same loop: accumulate input gradients (vanilla
//! surrogates plus, when enabled, freshly sampled stylized surrogates),
//! L1-normalize into a momentum buffer, move the iterate by `alpha * sign`,
//! and clip to the epsilon ball intersected with the pixel domain.

pub mod augment;

pub use augment::{
    build_branches, draw_augmentations, translation_smooth, Augmentation, DEFAULT_ADMIX,
    DEFAULT_DIVERSITY, DEFAULT_SCALE, DEFAULT_TRANSLATION,
};

use crate::nn::{argmax, batch_input, Dataset, Model};
use crate::rng::{stream_rng, Stream};
use crate::stylize::{
    CleanLossGuard, SampleError, SampleRecord, StylePool, StyleSampler, StyleSourceMode,
    StyleSynthesisParams, StylizedModel,
};
use crate::tensor::{Tape, TensorError, TensorId};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attack naming follows the composition letters: M momentum, T translation,
/// D diversity, S scale, A admix, on top of the iterative baseline I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackName {
    I,
    Mi,
    Mdi,
    Mtdi,
    Mtdsi,
    Mtdai,
}

impl AttackName {
    pub const ALL: [AttackName; 6] = [
        AttackName::I,
        AttackName::Mi,
        AttackName::Mdi,
        AttackName::Mtdi,
        AttackName::Mtdsi,
        AttackName::Mtdai,
    ];

    pub fn parse(name: &str) -> Option<AttackName> {
        match name {
            "i" => Some(AttackName::I),
            "mi" => Some(AttackName::Mi),
            "mdi" => Some(AttackName::Mdi),
            "mtdi" => Some(AttackName::Mtdi),
            "mtdsi" => Some(AttackName::Mtdsi),
            "mtdai" => Some(AttackName::Mtdai),
            _ => None,
        }
    }

    /// Momentum decay and augmentation stack for this composition.
    pub fn plan(self) -> (f64, Vec<Augmentation>) {
        match self {
            AttackName::I => (0.0, vec![]),
            AttackName::Mi => (1.0, vec![]),
            AttackName::Mdi => (1.0, vec![DEFAULT_DIVERSITY]),
            AttackName::Mtdi => (1.0, vec![DEFAULT_TRANSLATION, DEFAULT_DIVERSITY]),
            AttackName::Mtdsi => (
                1.0,
                vec![DEFAULT_TRANSLATION, DEFAULT_DIVERSITY, DEFAULT_SCALE],
            ),
            AttackName::Mtdai => (
                1.0,
                vec![DEFAULT_TRANSLATION, DEFAULT_ADMIX, DEFAULT_DIVERSITY],
            ),
        }
    }
}

impl std::fmt::Display for AttackName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackName::I => "i",
            AttackName::Mi => "mi",
            AttackName::Mdi => "mdi",
            AttackName::Mtdi => "mtdi",
            AttackName::Mtdsi => "mtdsi",
            AttackName::Mtdai => "mtdai",
        };
        f.write_str(s)
    }
}

/// Whether the N styles are redrawn every iteration or fixed per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleResample {
    #[default]
    PerIteration,
    FixedPerImage,
}

pub const DEFAULT_EPSILON: f64 = 16.0 / 255.0;
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_STYLIZED_COUNT: usize = 10;
pub const DEFAULT_MAX_RETRIES: usize = 20;

/// Full attack recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub name: AttackName,
    pub styless: bool,
    /// Lp-infinity budget in pixel units.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub decay: f64,
    /// Stylized models per surrogate per iteration (N).
    pub stylized_count: usize,
    pub synthesis: StyleSynthesisParams,
    pub augmentations: Vec<Augmentation>,
    pub style_mode: StyleSourceMode,
    pub style_resample: StyleResample,
    pub max_retries: usize,
    pub clean_guard: Option<CleanLossGuard>,
    /// Record per-iteration vanilla/stylized losses at the iterate.
    pub record_loss_gap: bool,
    /// Styles per iteration for the loss-gap measurement (diagnostics
    /// stream; independent of the attack's own draws).
    pub gap_styles: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// Paper-default recipe for a named attack, with or without the style
    /// extension (N = 10 when on, 0 when off).
    pub fn new(name: AttackName, styless: bool, seed: u64) -> Self {
        let (decay, augmentations) = name.plan();
        AttackConfig {
            name,
            styless,
            epsilon: DEFAULT_EPSILON,
            steps: DEFAULT_STEPS,
            step_size: DEFAULT_EPSILON / 2.0,
            decay,
            stylized_count: if styless { DEFAULT_STYLIZED_COUNT } else { 0 },
            synthesis: StyleSynthesisParams::identity(0),
            augmentations,
            style_mode: StyleSourceMode::ImageStats,
            style_resample: StyleResample::PerIteration,
            max_retries: DEFAULT_MAX_RETRIES,
            clean_guard: Some(CleanLossGuard::default()),
            record_loss_gap: false,
            gap_styles: 0,
            seed,
        }
    }

    /// Label used in reports, e.g. `mi` or `mi+styless`.
    pub fn label(&self) -> String {
        if self.styless {
            format!("{}+styless", self.name)
        } else {
            self.name.to_string()
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.step_size > 0.0 && self.step_size <= self.epsilon) {
            return Err(AttackError::InvalidConfig(format!(
                "step size {} must satisfy 0 < alpha <= epsilon {}",
                self.step_size, self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(AttackError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.decay < 0.0 {
            return Err(AttackError::InvalidConfig("decay must be >= 0".into()));
        }
        if !self.styless && self.stylized_count > 0 {
            return Err(AttackError::InvalidConfig(
                "stylized_count > 0 requires styless mode".into(),
            ));
        }
        if self.styless && self.stylized_count > 0 && self.max_retries == 0 {
            return Err(AttackError::InvalidConfig(
                "max_retries must be positive when sampling styles".into(),
            ));
        }
        Ok(())
    }

    fn template_for(&self, channels: usize) -> StyleSynthesisParams {
        StyleSynthesisParams::with_ranges(
            channels,
            self.synthesis.lambda_range,
            self.synthesis.beta_range,
            self.synthesis.gamma_range,
        )
    }
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("attack setup failed: {0}")]
    Setup(#[from] TensorError),
    #[error("dataset index {0} out of range")]
    BadIndex(usize),
    #[error("no surrogates provided")]
    NoSurrogates,
    #[error("surrogates disagree on input shape or class count")]
    MismatchedSurrogates,
}

/// Iterate, momentum buffer, and counters for one image.
#[derive(Debug, Clone)]
pub struct AttackState {
    pub x_adv: Vec<f64>,
    pub momentum: Vec<f64>,
    pub iteration: usize,
    pub zero_gradient_flags: usize,
}

impl AttackState {
    pub fn new(benign: &[f64]) -> Self {
        AttackState {
            x_adv: benign.to_vec(),
            momentum: vec![0.0; benign.len()],
            iteration: 0,
            zero_gradient_flags: 0,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Momentum update and clipped sign step.
///
/// A zero accumulated gradient skips the update entirely (normalization is
/// undefined); the iterate is left unchanged and the event is flagged.
pub fn momentum_step(state: &mut AttackState, benign: &[f64], grad: &[f64], config: &AttackConfig) {
    debug_assert_eq!(grad.len(), state.x_adv.len());
    state.iteration += 1;
    let l1: f64 = grad.iter().map(|g| g.abs()).sum();
    if l1 == 0.0 {
        state.zero_gradient_flags += 1;
        return;
    }
    for (m, &g) in state.momentum.iter_mut().zip(grad) {
        *m = config.decay * *m + g / l1;
    }
    for ((xa, &x0), &m) in state.x_adv.iter_mut().zip(benign).zip(&state.momentum) {
        let lo = (x0 - config.epsilon).max(0.0);
        let hi = (x0 + config.epsilon).min(1.0);
        *xa = (*xa + config.step_size * sign(m)).clamp(lo, hi);
    }
}

/// Cast the final iterate to f32 without leaving the epsilon ball: entries
/// that round outside the budget nudge one ulp back toward the benign pixel.
pub fn quantize_within_budget(x_adv: &[f64], benign: &[f32], epsilon: f64) -> Vec<f32> {
    x_adv
        .iter()
        .zip(benign)
        .map(|(&v, &b)| {
            let mut q = v as f32;
            let b64 = b as f64;
            for _ in 0..4 {
                if (q as f64 - b64).abs() <= epsilon && (0.0..=1.0).contains(&(q as f64)) {
                    break;
                }
                q = if q as f64 > b64 { q.next_down() } else { q.next_up() };
            }
            q
        })
        .collect()
}

/// Per-iteration diagnostics of one image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationDiag {
    /// 1-based; records the state after this iteration's step.
    pub iteration: usize,
    /// Surrogate-0 loss of the augmented view used for the gradient (pre-step).
    pub grad_loss: f64,
    /// Surrogate-0 loss at the post-step iterate (loss-gap mode only).
    pub vanilla_loss: Option<f64>,
    /// Mean loss of the diagnostic stylized models at the post-step iterate.
    pub mean_stylized_loss: Option<f64>,
    pub accepted_styles: usize,
    pub rejected_styles: usize,
    pub sampling_failures: usize,
    pub zero_gradient: bool,
}

/// Outcome for a single image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub index: usize,
    pub label: usize,
    pub adversarial: Vec<f32>,
    pub surrogate_clean_pred: usize,
    pub surrogate_adv_pred: usize,
    pub success_on_surrogate: bool,
    pub iterations: Vec<IterationDiag>,
    /// Every stylized draw the attack consumed, for post-hoc auditing.
    pub style_records: Vec<SampleRecord>,
    pub sampling_failures: usize,
    pub zero_gradient_flags: usize,
    pub failed: Option<String>,
}

/// A finished attack over a dataset slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRun {
    pub config: AttackConfig,
    /// Architecture names of the surrogates, in gradient-summation order.
    pub surrogates: Vec<String>,
    pub outcomes: Vec<ImageOutcome>,
}

impl AttackRun {
    /// Adversarial images in dataset form (labels are the true labels).
    pub fn adversarial_dataset(&self, num_classes: u32) -> Dataset {
        Dataset {
            images: self.outcomes.iter().map(|o| o.adversarial.clone()).collect(),
            labels: self.outcomes.iter().map(|o| o.label as u8).collect(),
            num_classes,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.outcomes.iter().map(|o| o.index).collect()
    }
}

/// Everything fixed per (image, surrogate set) during the iteration loop.
struct AttackContext<'a> {
    surrogates: &'a [&'a Model],
    samplers: Vec<StyleSampler<'a>>,
    diag_sampler: Option<StyleSampler<'a>>,
    admix_pool: &'a [Vec<f64>],
    benign: Vec<f64>,
    label: usize,
    index: usize,
    config: &'a AttackConfig,
}

impl<'a> AttackContext<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        surrogates: &'a [&'a Model],
        pools: &'a [StylePool],
        admix_pool: &'a [Vec<f64>],
        dataset_index: usize,
        pool_index: Option<usize>,
        benign: Vec<f64>,
        label: usize,
        config: &'a AttackConfig,
    ) -> Result<Self, SampleError> {
        let mut samplers = Vec::new();
        if config.styless && config.stylized_count > 0 {
            for (model, pool) in surrogates.iter().zip(pools) {
                samplers.push(StyleSampler::new(
                    model,
                    pool,
                    config.template_for(model.split_channels()),
                    config.max_retries,
                    config.clean_guard,
                    pool_index,
                    &benign,
                    label,
                )?);
            }
        }
        let diag_sampler = if config.record_loss_gap && config.gap_styles > 0 {
            Some(StyleSampler::new(
                surrogates[0],
                &pools[0],
                config.template_for(surrogates[0].split_channels()),
                config.max_retries,
                config.clean_guard,
                pool_index,
                &benign,
                label,
            )?)
        } else {
            None
        };
        Ok(AttackContext {
            surrogates,
            samplers,
            diag_sampler,
            admix_pool,
            benign,
            label,
            index: dataset_index,
            config,
        })
    }

    /// One iteration's accumulated gradient: per surrogate, the vanilla
    /// gradient plus N stylized gradients, summed in sample order.
    fn accumulate_gradient(
        &self,
        x_adv: &[f64],
        draw: &augment::AugmentDraw,
        fixed_styles: Option<&[Vec<(StylizedModel<'a>, SampleRecord)>]>,
        rng: &mut ChaCha12Rng,
        records: &mut Vec<SampleRecord>,
    ) -> Result<(Vec<f64>, f64, usize, usize), TensorError> {
        let mut total = vec![0.0; self.benign.len()];
        let mut grad_loss = 0.0;
        let mut failures = 0usize;
        let mut rejected = 0usize;

        for (s_idx, surrogate) in self.surrogates.iter().enumerate() {
            let (grad, loss) = self.input_gradient_for(surrogate, None, x_adv, draw)?;
            if s_idx == 0 {
                grad_loss = loss;
            }
            add_into(&mut total, &grad);

            let n = self.config.stylized_count;
            if n == 0 {
                continue;
            }
            match fixed_styles {
                Some(per_surrogate) => {
                    for (sm, _) in &per_surrogate[s_idx] {
                        let (grad, _) = self.input_gradient_for(surrogate, Some(sm), x_adv, draw)?;
                        add_into(&mut total, &grad);
                    }
                }
                None => {
                    for _ in 0..n {
                        match self.samplers[s_idx].sample(rng) {
                            Ok((sm, record)) => {
                                rejected += record.rejected;
                                records.push(record);
                                let (grad, _) =
                                    self.input_gradient_for(surrogate, Some(&sm), x_adv, draw)?;
                                add_into(&mut total, &grad);
                            }
                            Err(SampleError::Retries(_)) => failures += 1,
                            Err(SampleError::Tensor(e)) => return Err(e),
                        }
                    }
                }
            }
        }
        Ok((total, grad_loss, failures, rejected))
    }

    /// Input gradient of the branch-averaged loss for one model variant.
    fn input_gradient_for(
        &self,
        model: &Model,
        stylized: Option<&StylizedModel>,
        x_adv: &[f64],
        draw: &augment::AugmentDraw,
    ) -> Result<(Vec<f64>, f64), TensorError> {
        let shape = model.input_shape();
        let mut tape = Tape::new();
        let x = batch_input(&mut tape, &[x_adv], shape, true)?;
        let branches = build_branches(
            &mut tape,
            x,
            &self.config.augmentations,
            draw,
            self.admix_pool,
            shape,
        )?;
        let mut total: Option<TensorId> = None;
        for &branch in &branches {
            let logits = match stylized {
                Some(sm) => sm.forward(&mut tape, branch)?,
                None => model.forward(&mut tape, branch)?,
            };
            let loss = tape.softmax_cross_entropy(logits, &[self.label])?;
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        let mut loss = total.expect("at least one branch");
        if branches.len() > 1 {
            loss = tape.scale(loss, 1.0 / branches.len() as f64)?;
        }
        let loss_value = tape.value(loss).item();
        tape.backward(loss)?;
        Ok((
            tape.grad(x).expect("input requires grad").to_vec(),
            loss_value,
        ))
    }

    fn translation_kernel(&self) -> Option<usize> {
        self.config.augmentations.iter().find_map(|a| match a {
            Augmentation::Translation { kernel_size } => Some(*kernel_size),
            _ => None,
        })
    }

    /// Post-step loss-gap measurement with diagnostic-stream styles.
    fn measure_gap(
        &self,
        x_adv: &[f64],
        rng_diag: &mut ChaCha12Rng,
    ) -> Result<(f64, Option<f64>), TensorError> {
        let surrogate = self.surrogates[0];
        let vanilla = surrogate.loss(x_adv, self.label)?;
        let Some(sampler) = &self.diag_sampler else {
            return Ok((vanilla, None));
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..self.config.gap_styles {
            match sampler.sample(rng_diag) {
                Ok((sm, _)) => {
                    total += sm.loss(x_adv, self.label)?;
                    count += 1;
                }
                Err(SampleError::Retries(_)) => {}
                Err(SampleError::Tensor(e)) => return Err(e),
            }
        }
        Ok((
            vanilla,
            if count > 0 { Some(total / count as f64) } else { None },
        ))
    }

    fn run(&self) -> ImageOutcome {
        match self.run_inner() {
            Ok(outcome) => outcome,
            Err(e) => ImageOutcome {
                index: self.index,
                label: self.label,
                adversarial: self.benign.iter().map(|&v| v as f32).collect(),
                surrogate_clean_pred: 0,
                surrogate_adv_pred: 0,
                success_on_surrogate: false,
                iterations: Vec::new(),
                style_records: Vec::new(),
                sampling_failures: 0,
                zero_gradient_flags: 0,
                failed: Some(e.to_string()),
            },
        }
    }

    fn run_inner(&self) -> Result<ImageOutcome, TensorError> {
        let config = self.config;
        let mut rng = stream_rng(config.seed, Stream::Attack(self.index as u64));
        let mut rng_diag = stream_rng(config.seed, Stream::Diagnostics(self.index as u64));

        let clean_pred = self.surrogates[0].predict(&self.benign)?;
        let mut state = AttackState::new(&self.benign);
        let mut records: Vec<SampleRecord> = Vec::new();
        let mut iterations = Vec::with_capacity(config.steps);
        let mut sampling_failures = 0usize;

        // Fixed-pool mode draws the style set once per image up front.
        let fixed_styles: Option<Vec<Vec<(StylizedModel, SampleRecord)>>> =
            if config.style_resample == StyleResample::FixedPerImage
                && config.styless
                && config.stylized_count > 0
            {
                let mut per_surrogate = Vec::with_capacity(self.samplers.len());
                for sampler in &self.samplers {
                    let mut drawn = Vec::with_capacity(config.stylized_count);
                    for _ in 0..config.stylized_count {
                        match sampler.sample(&mut rng) {
                            Ok(pair) => drawn.push(pair),
                            Err(SampleError::Retries(_)) => sampling_failures += 1,
                            Err(SampleError::Tensor(e)) => return Err(e),
                        }
                    }
                    per_surrogate.push(drawn);
                }
                for per in &per_surrogate {
                    for (_, record) in per {
                        records.push(record.clone());
                    }
                }
                Some(per_surrogate)
            } else {
                None
            };

        let image_hw = {
            let (_, h, w) = self.surrogates[0].input_shape();
            (h, w)
        };

        for t in 0..config.steps {
            let draw = draw_augmentations(
                &config.augmentations,
                image_hw,
                self.admix_pool.len(),
                Some(self.index).filter(|_| !self.admix_pool.is_empty()),
                &mut rng,
            )?;
            let (mut grad, grad_loss, failures, rejected) = self.accumulate_gradient(
                &state.x_adv,
                &draw,
                fixed_styles.as_deref(),
                &mut rng,
                &mut records,
            )?;
            sampling_failures += failures;
            if let Some(kernel) = self.translation_kernel() {
                grad = translation_smooth(&grad, self.surrogates[0].input_shape(), kernel)?;
            }
            let pre_flags = state.zero_gradient_flags;
            momentum_step(&mut state, &self.benign, &grad, config);

            let accepted_this_iter = match (&fixed_styles, config.stylized_count) {
                (Some(_), n) => n * self.surrogates.len(),
                (None, n) if config.styless => {
                    n * self.surrogates.len() - failures
                }
                _ => 0,
            };
            let (vanilla_loss, mean_stylized_loss) = if config.record_loss_gap {
                let (v, s) = self.measure_gap(&state.x_adv, &mut rng_diag)?;
                (Some(v), s)
            } else {
                (None, None)
            };
            iterations.push(IterationDiag {
                iteration: t + 1,
                grad_loss,
                vanilla_loss,
                mean_stylized_loss,
                accepted_styles: accepted_this_iter,
                rejected_styles: rejected,
                sampling_failures: failures,
                zero_gradient: state.zero_gradient_flags > pre_flags,
            });
        }

        let benign_f32: Vec<f32> = self.benign.iter().map(|&v| v as f32).collect();
        let adversarial = quantize_within_budget(&state.x_adv, &benign_f32, config.epsilon);
        let adv_f64: Vec<f64> = adversarial.iter().map(|&v| v as f64).collect();
        let adv_pred = self.surrogates[0].predict(&adv_f64)?;

        Ok(ImageOutcome {
            index: self.index,
            label: self.label,
            adversarial,
            surrogate_clean_pred: clean_pred,
            surrogate_adv_pred: adv_pred,
            success_on_surrogate: adv_pred != self.label,
            iterations,
            style_records: records,
            sampling_failures,
            zero_gradient_flags: state.zero_gradient_flags,
            failed: None,
        })
    }
}

fn add_into(acc: &mut [f64], contribution: &[f64]) {
    for (a, c) in acc.iter_mut().zip(contribution) {
        *a += c;
    }
}

/// One iteration's accumulated gradient for `(x_adv, x, y)`:
/// each surrogate's vanilla gradient plus gradients from N freshly sampled
/// stylized models per surrogate, with the iteration's augmented view shared
/// by every term. Returns the gradient, the style draws consumed, and the
/// number of sampling failures (retry exhaustion leaves the sum with fewer
/// stylized terms).
#[allow(clippy::too_many_arguments)]
pub fn styless_gradient(
    surrogates: &[&Model],
    pools: &[StylePool],
    admix_pool: &[Vec<f64>],
    x_adv: &[f64],
    x: &[f64],
    y: usize,
    config: &AttackConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<f64>, Vec<SampleRecord>, usize), AttackError> {
    config.validate()?;
    if surrogates.is_empty() {
        return Err(AttackError::NoSurrogates);
    }
    let ctx = AttackContext::new(
        surrogates,
        pools,
        admix_pool,
        0,
        None,
        x.to_vec(),
        y,
        config,
    )
    .map_err(|e| match e {
        SampleError::Tensor(t) => AttackError::Setup(t),
        SampleError::Retries(r) => AttackError::InvalidConfig(r.to_string()),
    })?;
    let (h, w) = {
        let (_, h, w) = surrogates[0].input_shape();
        (h, w)
    };
    let draw = draw_augmentations(&config.augmentations, (h, w), admix_pool.len(), None, rng)
        .map_err(AttackError::Setup)?;
    let mut records = Vec::new();
    let (mut grad, _, failures, _) = ctx
        .accumulate_gradient(x_adv, &draw, None, rng, &mut records)
        .map_err(AttackError::Setup)?;
    if let Some(kernel) = ctx.translation_kernel() {
        grad = translation_smooth(&grad, surrogates[0].input_shape(), kernel)
            .map_err(AttackError::Setup)?;
    }
    Ok((grad, records, failures))
}

/// Attack a dataset slice. Images run independently (rayon) with per-image
/// RNG streams keyed by dataset index, so batch order and thread count never
/// change results.
pub fn run_attack(
    surrogates: &[&Model],
    dataset: &Dataset,
    indices: &[usize],
    config: &AttackConfig,
) -> Result<AttackRun, AttackError> {
    config.validate()?;
    if surrogates.is_empty() {
        return Err(AttackError::NoSurrogates);
    }
    let shape = surrogates[0].input_shape();
    let classes = surrogates[0].num_classes();
    if surrogates
        .iter()
        .any(|m| m.input_shape() != shape || m.num_classes() != classes)
    {
        return Err(AttackError::MismatchedSurrogates);
    }
    for &idx in indices {
        if idx >= dataset.len() {
            return Err(AttackError::BadIndex(idx));
        }
    }

    // Style statistics of every dataset image, per surrogate; candidate
    // styles and admix mixers come from the attacked dataset itself.
    let all_images: Vec<Vec<f64>> = (0..dataset.len()).map(|i| dataset.image_f64(i)).collect();
    let needs_styles = (config.styless && config.stylized_count > 0)
        || (config.record_loss_gap && config.gap_styles > 0);
    let pools: Vec<StylePool> = if needs_styles {
        surrogates
            .iter()
            .map(|m| {
                StylePool::from_images(
                    m,
                    all_images.iter().map(|v| v.as_slice()),
                    config.style_mode,
                )
            })
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let needs_admix = config
        .augmentations
        .iter()
        .any(|a| matches!(a, Augmentation::Admix { count, .. } if *count > 0));
    let admix_pool: &[Vec<f64>] = if needs_admix { &all_images } else { &[] };

    let outcomes: Vec<ImageOutcome> = indices
        .par_iter()
        .map(|&idx| {
            let benign = dataset.image_f64(idx);
            let label = dataset.label(idx);
            match AttackContext::new(
                surrogates,
                &pools,
                admix_pool,
                idx,
                Some(idx).filter(|_| needs_styles),
                benign.clone(),
                label,
                config,
            ) {
                Ok(ctx) => ctx.run(),
                Err(e) => ImageOutcome {
                    index: idx,
                    label,
                    adversarial: benign.iter().map(|&v| v as f32).collect(),
                    surrogate_clean_pred: 0,
                    surrogate_adv_pred: 0,
                    success_on_surrogate: false,
                    iterations: Vec::new(),
                    style_records: Vec::new(),
                    sampling_failures: 0,
                    zero_gradient_flags: 0,
                    failed: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(AttackRun {
        config: config.clone(),
        surrogates: surrogates.iter().map(|m| m.arch().to_string()).collect(),
        outcomes,
    })
}

/// Re-audit the acceptance predicate of every recorded style draw: the
/// stylized prediction on the benign input must equal the vanilla prediction
/// or the true label. Returns the number of violations.
pub fn audit_acceptance(
    surrogate: &Model,
    dataset: &Dataset,
    run: &AttackRun,
) -> Result<usize, TensorError> {
    let mut violations = 0usize;
    for outcome in &run.outcomes {
        if outcome.style_records.is_empty() {
            continue;
        }
        let benign = dataset.image_f64(outcome.index);
        let activation = crate::stylize::split_activation(surrogate, &benign)?;
        let content = crate::stylize::stats_of_activation(&activation)?;
        let mut tape = Tape::new();
        let act = tape.leaf(activation.clone());
        let logits = surrogate.forward_back(&mut tape, act)?;
        let vanilla_pred = argmax(tape.value(logits).data());
        for record in &outcome.style_records {
            let sm = StylizedModel::new(surrogate, content.clone(), record.stats.clone())?;
            let mut tape = Tape::new();
            let logits = sm.forward_from_activation(&mut tape, &activation)?;
            let pred = argmax(tape.value(logits).data());
            if pred != vanilla_pred && pred != outcome.label {
                violations += 1;
            }
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchName;
    use rand::{Rng, SeedableRng};

    #[test]
    fn momentum_two_step_hand_oracle() {
        // eta = 1: momentum after two steps is g1/|g1| + g2/|g2| (L1 norms).
        let benign = vec![0.5; 4];
        let mut config = AttackConfig::new(AttackName::Mi, false, 0);
        config.epsilon = 0.5;
        config.step_size = 0.1;
        let mut state = AttackState::new(&benign);
        let g1 = vec![1.0, -3.0, 0.0, 4.0]; // l1 = 8
        let g2 = vec![2.0, 2.0, -2.0, 2.0]; // l1 = 8
        momentum_step(&mut state, &benign, &g1, &config);
        momentum_step(&mut state, &benign, &g2, &config);
        let expect: Vec<f64> = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| a / 8.0 + b / 8.0)
            .collect();
        for (m, e) in state.momentum.iter().zip(&expect) {
            assert!((m - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_and_zero_momentum_leave_iterate_unchanged() {
        let benign = vec![0.25; 8];
        let config = AttackConfig::new(AttackName::I, false, 0);
        let mut state = AttackState::new(&benign);
        momentum_step(&mut state, &benign, &vec![0.0; 8], &config);
        assert_eq!(state.x_adv, benign);
        assert_eq!(state.zero_gradient_flags, 1);
    }

    #[test]
    fn step_is_invariant_under_positive_gradient_scaling() {
        let benign = vec![0.5; 6];
        let config = AttackConfig::new(AttackName::I, false, 0);
        let grad = vec![0.3, -0.7, 0.0, 2.0, -0.1, 0.9];
        let run_with = |scale: f64| {
            let mut state = AttackState::new(&benign);
            let g: Vec<f64> = grad.iter().map(|v| v * scale).collect();
            momentum_step(&mut state, &benign, &g, &config);
            state.x_adv
        };
        let a = run_with(1.0);
        let b = run_with(137.25);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn clip_enforces_budget_and_domain() {
        let benign = vec![0.01, 0.99, 0.5];
        let mut config = AttackConfig::new(AttackName::I, false, 0);
        config.epsilon = 0.1;
        config.step_size = 0.1;
        let mut state = AttackState::new(&benign);
        for _ in 0..20 {
            momentum_step(&mut state, &benign, &[1.0, 1.0, -1.0], &config);
        }
        for (xa, &x0) in state.x_adv.iter().zip(&benign) {
            assert!((xa - x0).abs() <= config.epsilon + 1e-12);
            assert!((0.0..=1.0).contains(xa));
        }
    }

    #[test]
    fn quantization_never_leaves_the_ball() {
        let benign_f32: Vec<f32> = vec![0.1, 0.5, 0.9, 0.0, 1.0];
        let eps = 16.0 / 255.0;
        let x_adv: Vec<f64> = benign_f32
            .iter()
            .map(|&b| ((b as f64) + eps).min(1.0))
            .collect();
        let q = quantize_within_budget(&x_adv, &benign_f32, eps);
        for (qv, &b) in q.iter().zip(&benign_f32) {
            assert!((*qv as f64 - b as f64).abs() <= eps);
            assert!((0.0..=1.0).contains(&(*qv as f64)));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = AttackConfig::new(AttackName::I, false, 0);
        c.stylized_count = 3;
        assert!(matches!(c.validate(), Err(AttackError::InvalidConfig(_))));
        let mut c = AttackConfig::new(AttackName::I, false, 0);
        c.step_size = c.epsilon * 2.0;
        assert!(c.validate().is_err());
        let mut c = AttackConfig::new(AttackName::I, false, 0);
        c.steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn attack_names_parse_and_display() {
        for name in AttackName::ALL {
            assert_eq!(AttackName::parse(&name.to_string()), Some(name));
        }
        assert_eq!(AttackName::parse("pgd"), None);
    }

    #[test]
    fn n1_identity_styless_gradient_is_exactly_twice_vanilla() {
        let model = Model::build(ArchName::ConvnetA, 10, (3, 32, 32), 51).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        let x: Vec<f64> = (0..model.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let other: Vec<f64> = (0..model.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pool = StylePool::from_images(
            &model,
            [other.as_slice()],
            StyleSourceMode::ImageStats,
        )
        .unwrap();

        let mut config = AttackConfig::new(AttackName::I, true, 0);
        config.stylized_count = 1;
        config.synthesis = StyleSynthesisParams::with_ranges(
            0,
            [1.0, 1.0],
            [1.0, 1.0],
            [1.0, 1.0],
        );

        // Gradient at a perturbed iterate, not just the benign point.
        let x_adv: Vec<f64> = x
            .iter()
            .map(|v| (v + 0.02).min(1.0))
            .collect();

        let surrogates = [&model];
        let pools = [pool];
        let mut rng_g = ChaCha12Rng::seed_from_u64(53);
        let (styless, records, failures) = styless_gradient(
            &surrogates,
            &pools,
            &[],
            &x_adv,
            &x,
            3,
            &config,
            &mut rng_g,
        )
        .unwrap();
        assert_eq!(failures, 0);
        assert_eq!(records.len(), 1);

        let mut baseline_cfg = config.clone();
        baseline_cfg.styless = false;
        baseline_cfg.stylized_count = 0;
        let mut rng_b = ChaCha12Rng::seed_from_u64(53);
        let (vanilla, _, _) = styless_gradient(
            &surrogates,
            &pools,
            &[],
            &x_adv,
            &x,
            3,
            &baseline_cfg,
            &mut rng_b,
        )
        .unwrap();

        assert!(styless
            .iter()
            .zip(&vanilla)
            .all(|(s, v)| s.to_bits() == (2.0 * v).to_bits()));
    }

    #[test]
    fn two_identical_surrogates_double_the_gradient() {
        let model = Model::build(ArchName::ConvnetB, 10, (3, 32, 32), 54).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        let x: Vec<f64> = (0..model.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let config = AttackConfig::new(AttackName::I, false, 0);
        let surr_one = [&model];
        let surr_two = [&model, &model];
        let mut r1 = ChaCha12Rng::seed_from_u64(1);
        let mut r2 = ChaCha12Rng::seed_from_u64(1);
        let (g1, _, _) =
            styless_gradient(&surr_one, &[], &[], &x, &x, 2, &config, &mut r1).unwrap();
        let (g2, _, _) =
            styless_gradient(&surr_two, &[], &[], &x, &x, 2, &config, &mut r2).unwrap();
        assert!(g1
            .iter()
            .zip(&g2)
            .all(|(a, b)| (2.0 * a).to_bits() == b.to_bits()));
    }
}
