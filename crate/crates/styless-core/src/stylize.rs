//! Style injection: normalization-statistic extraction and synthesis,
//! stylized-surrogate construction with rejection sampling, and the
//! loss-gap diagnostic.
//!
//! A stylized surrogate re-normalizes the split activation: the per-channel
//! statistics of the benign input's activation act as the frozen normalizer,
//! and synthesized statistics are injected in their place. Realized that way
//! the inserted layer is a per-channel affine map whose input Jacobian is
//! exactly `sigma / sigma(x)`, so an identity draw (lambda = 1, unit scales)
//! reproduces the vanilla model bit-for-bit, gradients included.

use crate::nn::{argmax, batch_input, Model};
use crate::tensor::{Result, Tape, Tensor, TensorError, TensorId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stabilizer inside the normalization denominator. Variance-zero channels
/// occur at desk scale (post-relu planes can be all-zero).
pub const IN_EPS: f64 = 1e-5;

/// Per-channel normalization statistics (mean, standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl StyleStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(TensorError::ShapeMismatch {
                op: "style_stats",
                lhs: vec![mu.len()],
                rhs: vec![sigma.len()],
            });
        }
        if sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(TensorError::BadArgument {
                op: "style_stats",
                reason: "sigma entries must be non-negative".into(),
            });
        }
        Ok(StyleStats { mu, sigma })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// Interpolation/scale parameters of one style draw, plus the ranges the
/// draw was (or will be) sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSynthesisParams {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub gamma_range: [f64; 2],
}

pub const DEFAULT_LAMBDA_RANGE: [f64; 2] = [0.0, 0.2];
pub const DEFAULT_BETA_RANGE: [f64; 2] = [0.0, 2.0];
pub const DEFAULT_GAMMA_RANGE: [f64; 2] = [0.0, 2.0];

impl StyleSynthesisParams {
    /// Identity draw (lambda = 1, unit scales) with the default ranges.
    pub fn identity(channels: usize) -> Self {
        StyleSynthesisParams {
            lambda: 1.0,
            beta: vec![1.0; channels],
            gamma: vec![1.0; channels],
            lambda_range: DEFAULT_LAMBDA_RANGE,
            beta_range: DEFAULT_BETA_RANGE,
            gamma_range: DEFAULT_GAMMA_RANGE,
        }
    }

    /// Identity draw carrying custom sampling ranges.
    pub fn with_ranges(
        channels: usize,
        lambda_range: [f64; 2],
        beta_range: [f64; 2],
        gamma_range: [f64; 2],
    ) -> Self {
        StyleSynthesisParams {
            lambda: 1.0,
            beta: vec![1.0; channels],
            gamma: vec![1.0; channels],
            lambda_range,
            beta_range,
            gamma_range,
        }
    }

    /// Redraw lambda and the per-channel scales from the stored ranges.
    /// Beta and gamma entries are sampled i.i.d. per channel.
    pub fn resample(&mut self, rng: &mut ChaCha12Rng) {
        self.lambda = sample_range(rng, self.lambda_range);
        for b in &mut self.beta {
            *b = sample_range(rng, self.beta_range);
        }
        for g in &mut self.gamma {
            *g = sample_range(rng, self.gamma_range);
        }
    }
}

fn sample_range(rng: &mut ChaCha12Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Instance normalization of a 4-D activation with injected statistics.
pub fn instance_norm(
    tape: &mut Tape,
    x: TensorId,
    stats: &StyleStats,
    eps: f64,
) -> Result<TensorId> {
    tape.instance_norm(x, &stats.mu, &stats.sigma, eps)
}

/// Per-channel statistics of a single-sample 4-D activation. The standard
/// deviation is `sqrt(var + IN_EPS)`, the same estimator the normalization
/// denominator uses, so re-injecting extracted stats is an exact fixed point.
pub fn stats_of_activation(activation: &Tensor) -> Result<StyleStats> {
    let shape = activation.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(TensorError::BadShape {
            op: "stats_of_activation",
            shape: shape.to_vec(),
            reason: "expected a single-sample (1, c, h, w) activation".into(),
        });
    }
    let (c, spatial) = (shape[1], shape[2] * shape[3]);
    if spatial == 0 {
        return Err(TensorError::BadShape {
            op: "stats_of_activation",
            shape: shape.to_vec(),
            reason: "spatial extent is zero".into(),
        });
    }
    let n = spatial as f64;
    let mut mu = vec![0.0; c];
    let mut sigma = vec![0.0; c];
    for ch in 0..c {
        let plane = &activation.data()[ch * spatial..(ch + 1) * spatial];
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        mu[ch] = mean;
        sigma[ch] = (var + IN_EPS).sqrt();
    }
    StyleStats::new(mu, sigma)
}

/// The split activation F1(x) of a single image.
pub fn split_activation(model: &Model, image: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = batch_input(&mut tape, &[image], model.input_shape(), false)?;
    let act = model.forward_front(&mut tape, x)?;
    Ok(tape.value(act).clone())
}

/// Per-channel mean/std of the split activation of `image`.
pub fn extract_style(model: &Model, image: &[f64]) -> Result<StyleStats> {
    stats_of_activation(&split_activation(model, image)?)
}

/// Scaled interpolation of content and style statistics:
/// `mu = beta (lambda mu_x + (1 - lambda) mu_s)` and likewise for sigma with
/// gamma. Negative sigma entries (possible only with negative gamma) clamp
/// to zero.
pub fn synthesize_style(
    content: &StyleStats,
    style: &StyleStats,
    params: &StyleSynthesisParams,
) -> Result<StyleStats> {
    let c = content.channels();
    if style.channels() != c || params.beta.len() != c || params.gamma.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "synthesize_style",
            lhs: vec![c],
            rhs: vec![style.channels(), params.beta.len(), params.gamma.len()],
        });
    }
    let l = params.lambda;
    let mut mu = vec![0.0; c];
    let mut sigma = vec![0.0; c];
    for ch in 0..c {
        mu[ch] = params.beta[ch] * (l * content.mu[ch] + (1.0 - l) * style.mu[ch]);
        sigma[ch] =
            (params.gamma[ch] * (l * content.sigma[ch] + (1.0 - l) * style.sigma[ch])).max(0.0);
    }
    StyleStats::new(mu, sigma)
}

/// A surrogate with injected style statistics at the split point.
///
/// The normalizer is the content statistics captured at construction, so the
/// inserted layer is the per-channel affine
/// `z -> (sigma / sigma_c) * z + (mu - (sigma / sigma_c) * mu_c)`.
#[derive(Debug, Clone)]
pub struct StylizedModel<'a> {
    base: &'a Model,
    content_norm: StyleStats,
    style: StyleStats,
}

impl<'a> StylizedModel<'a> {
    pub fn new(base: &'a Model, content_norm: StyleStats, style: StyleStats) -> Result<Self> {
        let c = base.split_channels();
        if content_norm.channels() != c || style.channels() != c {
            return Err(TensorError::ShapeMismatch {
                op: "stylized_model",
                lhs: vec![c],
                rhs: vec![content_norm.channels(), style.channels()],
            });
        }
        if content_norm.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(TensorError::BadArgument {
                op: "stylized_model",
                reason: "content normalizer sigma must be strictly positive".into(),
            });
        }
        Ok(StylizedModel {
            base,
            content_norm,
            style,
        })
    }

    /// Build from the benign input directly.
    pub fn from_benign(base: &'a Model, benign: &[f64], style: StyleStats) -> Result<Self> {
        let content_norm = extract_style(base, benign)?;
        StylizedModel::new(base, content_norm, style)
    }

    pub fn base(&self) -> &Model {
        self.base
    }

    pub fn style(&self) -> &StyleStats {
        &self.style
    }

    pub fn content_norm(&self) -> &StyleStats {
        &self.content_norm
    }

    /// Per-channel (scale, shift) realizing the inserted layer.
    pub fn affine_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.style.channels();
        let mut scale = vec![0.0; c];
        let mut shift = vec![0.0; c];
        for ch in 0..c {
            let a = self.style.sigma[ch] / self.content_norm.sigma[ch];
            scale[ch] = a;
            shift[ch] = self.style.mu[ch] - a * self.content_norm.mu[ch];
        }
        (scale, shift)
    }

    /// Apply the inserted normalization layer to a split activation.
    pub fn inject(&self, tape: &mut Tape, activation: TensorId) -> Result<TensorId> {
        let (scale, shift) = self.affine_coefficients();
        let c = scale.len();
        let scale_id = tape.constant(scale, vec![c])?;
        let shift_id = tape.constant(shift, vec![c])?;
        tape.affine_per_channel(activation, scale_id, shift_id)
    }

    /// Full stylized forward to logits.
    pub fn forward(&self, tape: &mut Tape, input: TensorId) -> Result<TensorId> {
        let front = self.base.forward_front(tape, input)?;
        let injected = self.inject(tape, front)?;
        self.base.forward_back(tape, injected)
    }

    /// Logits starting from a precomputed split activation (single sample).
    pub fn forward_from_activation(&self, tape: &mut Tape, activation: &Tensor) -> Result<TensorId> {
        let act = tape.leaf(activation.clone());
        let injected = self.inject(tape, act)?;
        self.base.forward_back(tape, injected)
    }

    pub fn logits(&self, image: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = batch_input(&mut tape, &[image], self.base.input_shape(), false)?;
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn predict(&self, image: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(image)?))
    }

    pub fn loss(&self, image: &[f64], label: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let x = batch_input(&mut tape, &[image], self.base.input_shape(), false)?;
        let logits = self.forward(&mut tape, x)?;
        let loss = tape.softmax_cross_entropy(logits, &[label])?;
        Ok(tape.value(loss).item())
    }
}

/// How candidate style statistics are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleSourceMode {
    /// Statistics of another image drawn from the pool (default).
    ImageStats,
    /// Image-free synthesis: each channel's (mu, sigma) pair is drawn from a
    /// random pool entry, so the combined style matches no single image.
    ChannelResample,
}

/// Precomputed split-activation statistics of a set of candidate style
/// images, for one model and split point.
#[derive(Debug, Clone)]
pub struct StylePool {
    entries: Vec<StyleStats>,
    mode: StyleSourceMode,
}

impl StylePool {
    pub fn new(entries: Vec<StyleStats>, mode: StyleSourceMode) -> Result<Self> {
        if entries.is_empty() {
            return Err(TensorError::BadArgument {
                op: "style_pool",
                reason: "pool must contain at least one entry".into(),
            });
        }
        Ok(StylePool { entries, mode })
    }

    /// Extract stats for every image in `images` through `model`'s front part.
    pub fn from_images<'i>(
        model: &Model,
        images: impl IntoIterator<Item = &'i [f64]>,
        mode: StyleSourceMode,
    ) -> Result<Self> {
        let entries = images
            .into_iter()
            .map(|img| extract_style(model, img))
            .collect::<Result<Vec<_>>>()?;
        StylePool::new(entries, mode)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mode(&self) -> StyleSourceMode {
        self.mode
    }

    /// Draw candidate style statistics. `exclude` skips one pool index
    /// (the image under attack) when the pool has alternatives.
    pub fn draw(&self, rng: &mut ChaCha12Rng, exclude: Option<usize>) -> StyleStats {
        match self.mode {
            StyleSourceMode::ImageStats => {
                let idx = self.draw_index(rng, exclude);
                self.entries[idx].clone()
            }
            StyleSourceMode::ChannelResample => {
                let c = self.entries[0].channels();
                let mut mu = vec![0.0; c];
                let mut sigma = vec![0.0; c];
                for ch in 0..c {
                    let idx = self.draw_index(rng, exclude);
                    mu[ch] = self.entries[idx].mu[ch];
                    sigma[ch] = self.entries[idx].sigma[ch];
                }
                StyleStats { mu, sigma }
            }
        }
    }

    fn draw_index(&self, rng: &mut ChaCha12Rng, exclude: Option<usize>) -> usize {
        loop {
            let idx = rng.gen_range(0..self.entries.len());
            if Some(idx) != exclude || self.entries.len() == 1 {
                return idx;
            }
        }
    }
}

/// Rejection-sampling failure.
#[derive(Debug, Error)]
#[error(
    "no acceptable stylized model after {attempts} attempts \
     (last candidate predicted {last_pred}, vanilla {vanilla_pred}, label {label})"
)]
pub struct RetriesExhausted {
    pub attempts: usize,
    pub last_pred: usize,
    pub vanilla_pred: usize,
    pub label: usize,
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Retries(#[from] RetriesExhausted),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Reject candidates whose clean loss on the benign input exceeds
/// `max(factor * vanilla_loss, ln(num_classes))`. The floor keeps the guard
/// meaningful when the vanilla model's clean loss is near zero; a stylized
/// model beyond the floor is worse than uniform guessing on that input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanLossGuard {
    pub factor: f64,
}

impl Default for CleanLossGuard {
    fn default() -> Self {
        CleanLossGuard { factor: 5.0 }
    }
}

/// One accepted draw, with enough information to re-audit the acceptance
/// predicate afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub stats: StyleStats,
    pub rejected: usize,
    pub stylized_pred_on_benign: usize,
    pub vanilla_pred: usize,
    pub label: usize,
}

/// Per-image rejection sampler of stylized surrogates.
///
/// Fixes the benign input once (content statistics, split activation,
/// vanilla prediction and clean loss), then draws candidate styles until the
/// acceptance rule holds: the stylized prediction on the benign input equals
/// the vanilla prediction or the true label.
pub struct StyleSampler<'a> {
    model: &'a Model,
    pool: &'a StylePool,
    template: StyleSynthesisParams,
    max_retries: usize,
    clean_guard: Option<CleanLossGuard>,
    exclude: Option<usize>,
    content: StyleStats,
    benign_activation: Tensor,
    vanilla_pred: usize,
    vanilla_clean_loss: f64,
    label: usize,
}

impl<'a> StyleSampler<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a Model,
        pool: &'a StylePool,
        template: StyleSynthesisParams,
        max_retries: usize,
        clean_guard: Option<CleanLossGuard>,
        exclude: Option<usize>,
        benign: &[f64],
        label: usize,
    ) -> Result<Self> {
        let benign_activation = split_activation(model, benign)?;
        let content = stats_of_activation(&benign_activation)?;
        let mut tape = Tape::new();
        let act = tape.leaf(benign_activation.clone());
        let logits = model.forward_back(&mut tape, act)?;
        let vanilla_pred = argmax(tape.value(logits).data());
        let loss = tape.softmax_cross_entropy(logits, &[label])?;
        let vanilla_clean_loss = tape.value(loss).item();
        Ok(StyleSampler {
            model,
            pool,
            template,
            max_retries,
            clean_guard,
            exclude,
            content,
            benign_activation,
            vanilla_pred,
            vanilla_clean_loss,
            label,
        })
    }

    pub fn content(&self) -> &StyleStats {
        &self.content
    }

    pub fn vanilla_pred(&self) -> usize {
        self.vanilla_pred
    }

    pub fn vanilla_clean_loss(&self) -> f64 {
        self.vanilla_clean_loss
    }

    /// Force a fixed draw (no resampling); used by identity and ablation modes.
    pub fn sample_fixed(
        &self,
        params: &StyleSynthesisParams,
        style_src: &StyleStats,
    ) -> Result<(StylizedModel<'a>, usize, f64)> {
        let stats = synthesize_style(&self.content, style_src, params)?;
        let sm = StylizedModel::new(self.model, self.content.clone(), stats)?;
        let mut tape = Tape::new();
        let logits = sm.forward_from_activation(&mut tape, &self.benign_activation)?;
        let pred = argmax(tape.value(logits).data());
        let loss = tape.softmax_cross_entropy(logits, &[self.label])?;
        Ok((sm, pred, tape.value(loss).item()))
    }

    fn accepts(&self, pred: usize, clean_loss: f64) -> bool {
        if pred != self.vanilla_pred && pred != self.label {
            return false;
        }
        match self.clean_guard {
            Some(CleanLossGuard { factor }) => {
                let bound = (factor * self.vanilla_clean_loss)
                    .max((self.model.num_classes() as f64).ln());
                clean_loss <= bound
            }
            None => true,
        }
    }

    /// Draw until accepted or `max_retries` candidates are exhausted.
    pub fn sample(
        &self,
        rng: &mut ChaCha12Rng,
    ) -> std::result::Result<(StylizedModel<'a>, SampleRecord), SampleError> {
        let mut params = self.template.clone();
        let mut last_pred = self.vanilla_pred;
        for attempt in 0..self.max_retries {
            let style_src = self.pool.draw(rng, self.exclude);
            params.resample(rng);
            let (sm, pred, clean_loss) = self.sample_fixed(&params, &style_src)?;
            last_pred = pred;
            if self.accepts(pred, clean_loss) {
                let record = SampleRecord {
                    stats: sm.style().clone(),
                    rejected: attempt,
                    stylized_pred_on_benign: pred,
                    vanilla_pred: self.vanilla_pred,
                    label: self.label,
                };
                return Ok((sm, record));
            }
        }
        Err(RetriesExhausted {
            attempts: self.max_retries,
            last_pred,
            vanilla_pred: self.vanilla_pred,
            label: self.label,
        }
        .into())
    }
}

/// One accepted stylized model for `(x, y)`; convenience over [`StyleSampler`].
#[allow(clippy::too_many_arguments)]
pub fn sample_stylized_model<'a>(
    model: &'a Model,
    x: &[f64],
    y: usize,
    pool: &'a StylePool,
    params: StyleSynthesisParams,
    max_retries: usize,
    clean_guard: Option<CleanLossGuard>,
    rng: &mut ChaCha12Rng,
) -> std::result::Result<(StylizedModel<'a>, SampleRecord), SampleError> {
    let sampler = StyleSampler::new(model, pool, params, max_retries, clean_guard, None, x, y)?;
    sampler.sample(rng)
}

/// Vanilla loss minus the mean stylized loss over `styles`, with stylized
/// models anchored at `x` (content normalizer extracted from `x`).
pub fn loss_gap(model: &Model, x: &[f64], y: usize, styles: &[StyleStats]) -> Result<f64> {
    if styles.is_empty() {
        return Err(TensorError::BadArgument {
            op: "loss_gap",
            reason: "styles list must be nonempty".into(),
        });
    }
    let anchor = extract_style(model, x)?;
    loss_gap_anchored(model, &anchor, x, y, styles)
}

/// Loss gap with an explicit content normalizer (the attack diagnostics
/// anchor at the benign input while evaluating at the current iterate).
pub fn loss_gap_anchored(
    model: &Model,
    content_norm: &StyleStats,
    x_eval: &[f64],
    y: usize,
    styles: &[StyleStats],
) -> Result<f64> {
    let vanilla = model.loss(x_eval, y)?;
    let mut total = 0.0;
    for stats in styles {
        let sm = StylizedModel::new(model, content_norm.clone(), stats.clone())?;
        total += sm.loss(x_eval, y)?;
    }
    Ok(vanilla - total / styles.len() as f64)
}

/// Per-iteration loss-gap record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossGapPoint {
    pub iteration: usize,
    pub vanilla_loss: f64,
    pub mean_stylized_loss: f64,
    pub gap: f64,
}

/// Loss-gap trace over the iterations of one attack.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossGapSeries {
    pub points: Vec<LossGapPoint>,
}

impl LossGapSeries {
    pub fn push(&mut self, iteration: usize, vanilla_loss: f64, mean_stylized_loss: f64) {
        self.points.push(LossGapPoint {
            iteration,
            vanilla_loss,
            mean_stylized_loss,
            gap: vanilla_loss - mean_stylized_loss,
        });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with columns (iteration, vanilla_loss, mean_stylized_loss, gap).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,vanilla_loss,mean_stylized_loss,gap\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.iteration, p.vanilla_loss, p.mean_stylized_loss, p.gap
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchName;
    use rand::{Rng, SeedableRng};

    fn model() -> Model {
        Model::build(ArchName::ConvnetA, 10, (3, 32, 32), 41).unwrap()
    }

    fn random_image(rng: &mut ChaCha12Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn extract_style_of_zero_image_has_zero_mean() {
        // Untrained conv biases are zero, so F1(0) = 0.
        let m = model();
        let stats = extract_style(&m, &vec![0.0; m.input_len()]).unwrap();
        assert!(stats.mu.iter().all(|&v| v == 0.0));
        assert!(stats.sigma.iter().all(|&s| (s - IN_EPS.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn reinjecting_extracted_stats_is_an_identity() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..5 {
            let img = random_image(&mut rng, m.input_len());
            let act = split_activation(&m, &img).unwrap();
            let stats = stats_of_activation(&act).unwrap();
            let mut tape = Tape::new();
            let a = tape.leaf(act.clone());
            let out = instance_norm(&mut tape, a, &stats, IN_EPS).unwrap();
            let max_err = tape
                .value(out)
                .data()
                .iter()
                .zip(act.data())
                .map(|(o, i)| (o - i).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-10, "identity re-stylization error {max_err}");
        }
    }

    #[test]
    fn different_histogram_images_have_different_stats() {
        let m = model();
        let dark = vec![0.1; m.input_len()];
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let bright: Vec<f64> = (0..m.input_len()).map(|_| rng.gen_range(0.6..1.0)).collect();
        let s1 = extract_style(&m, &dark).unwrap();
        let s2 = extract_style(&m, &bright).unwrap();
        assert_ne!(s1, s2);
    }

    #[test]
    fn synthesize_endpoints_recover_inputs() {
        let content = StyleStats::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let style = StyleStats::new(vec![3.0, 0.25], vec![1.5, 0.1]).unwrap();
        let mut params = StyleSynthesisParams::identity(2);

        params.lambda = 1.0;
        let s = synthesize_style(&content, &style, &params).unwrap();
        assert_eq!(s, content);

        params.lambda = 0.0;
        let s = synthesize_style(&content, &style, &params).unwrap();
        assert_eq!(s, style);
    }

    #[test]
    fn synthesize_scalar_example() {
        // lambda = 0.5, beta = 2, gamma = 1, content mu [1], style mu [3]:
        // mu = 2 * (0.5 * 1 + 0.5 * 3) = 4; sigma = mean of the two sigmas.
        let content = StyleStats::new(vec![1.0], vec![0.4]).unwrap();
        let style = StyleStats::new(vec![3.0], vec![0.8]).unwrap();
        let params = StyleSynthesisParams {
            lambda: 0.5,
            beta: vec![2.0],
            gamma: vec![1.0],
            ..StyleSynthesisParams::identity(1)
        };
        let s = synthesize_style(&content, &style, &params).unwrap();
        assert!((s.mu[0] - 4.0).abs() < 1e-15);
        assert!((s.sigma[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn negative_gamma_clamps_sigma_to_zero() {
        let content = StyleStats::new(vec![0.0], vec![1.0]).unwrap();
        let style = StyleStats::new(vec![0.0], vec![1.0]).unwrap();
        let params = StyleSynthesisParams {
            lambda: 0.5,
            beta: vec![1.0],
            gamma: vec![-2.0],
            ..StyleSynthesisParams::identity(1)
        };
        let s = synthesize_style(&content, &style, &params).unwrap();
        assert_eq!(s.sigma[0], 0.0);
    }

    #[test]
    fn identity_stylization_matches_vanilla_bit_exactly() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        for _ in 0..5 {
            let img = random_image(&mut rng, m.input_len());
            let content = extract_style(&m, &img).unwrap();
            let params = StyleSynthesisParams::identity(content.channels());
            let other = StyleStats::new(
                vec![9.0; content.channels()],
                vec![7.0; content.channels()],
            )
            .unwrap();
            let stats = synthesize_style(&content, &other, &params).unwrap();
            let sm = StylizedModel::new(&m, content, stats).unwrap();
            let a = m.logits_batch(&[&img]).unwrap();
            let b = sm.logits(&img).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn identity_sample_is_accepted_first_try() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(45);
        let img = random_image(&mut rng, m.input_len());
        let pool_img = random_image(&mut rng, m.input_len());
        let pool = StylePool::from_images(
            &m,
            [pool_img.as_slice()],
            StyleSourceMode::ImageStats,
        )
        .unwrap();
        // Collapsed ranges force the identity draw.
        let params = StyleSynthesisParams::with_ranges(
            m.split_channels(),
            [1.0, 1.0],
            [1.0, 1.0],
            [1.0, 1.0],
        );
        let sampler =
            StyleSampler::new(&m, &pool, params, 20, Some(CleanLossGuard::default()), None, &img, 3)
                .unwrap();
        let (_, record) = sampler.sample(&mut rng).unwrap();
        assert_eq!(record.rejected, 0);
        assert_eq!(record.stylized_pred_on_benign, record.vanilla_pred);
    }

    #[test]
    fn stylized_forward_preserves_output_shape() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(46);
        let img = random_image(&mut rng, m.input_len());
        let content = extract_style(&m, &img).unwrap();
        let style = StyleStats::new(
            vec![0.3; content.channels()],
            vec![1.7; content.channels()],
        )
        .unwrap();
        let sm = StylizedModel::new(&m, content, style).unwrap();
        assert_eq!(sm.logits(&img).unwrap().len(), m.num_classes());
    }

    #[test]
    fn loss_gap_of_identity_style_is_zero() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let img = random_image(&mut rng, m.input_len());
        let identity = extract_style(&m, &img).unwrap();
        let gap = loss_gap(&m, &img, 2, &[identity]).unwrap();
        assert!(gap.abs() < 1e-6, "identity loss gap {gap}");
    }

    #[test]
    fn loss_gap_is_invariant_under_style_duplication() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(48);
        let img = random_image(&mut rng, m.input_len());
        let style = StyleStats::new(
            vec![0.1; m.split_channels()],
            vec![0.9; m.split_channels()],
        )
        .unwrap();
        let single = loss_gap(&m, &img, 1, &[style.clone()]).unwrap();
        let tripled = loss_gap(&m, &img, 1, &[style.clone(), style.clone(), style]).unwrap();
        assert!((single - tripled).abs() < 1e-12);
    }

    #[test]
    fn input_gradient_scales_linearly_with_sigma() {
        // Power-of-two sigma scaling per channel must scale the instance_norm
        // input gradient by exactly the same per-channel factor.
        let mut rng = ChaCha12Rng::seed_from_u64(49);
        let (c, h, w) = (3, 4, 5);
        let x0: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mu = vec![0.2, -0.4, 0.0];
        let sigma = vec![0.7, 1.3, 0.5];
        let factors = [2.0, 0.5, 4.0];

        let grad_with = |sig: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.variable(x0.clone(), vec![1, c, h, w]).unwrap();
            let out = tape.instance_norm(x, &mu, sig, IN_EPS).unwrap();
            let loss = tape.sum(out).unwrap();
            tape.backward(loss).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let base = grad_with(&sigma);
        let scaled_sigma: Vec<f64> = sigma.iter().zip(&factors).map(|(s, f)| s * f).collect();
        let scaled = grad_with(&scaled_sigma);
        for ch in 0..c {
            for i in 0..h * w {
                let idx = ch * h * w + i;
                assert!(
                    (scaled[idx] - factors[ch] * base[idx]).abs() <= 1e-15 * base[idx].abs(),
                    "channel {ch} gradient did not scale by {}",
                    factors[ch]
                );
            }
        }
    }

    #[test]
    fn stylized_jacobian_is_sigma_over_content_sigma() {
        let m = model();
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        let img = random_image(&mut rng, m.input_len());
        let content = extract_style(&m, &img).unwrap();
        let c = content.channels();
        let style = StyleStats::new(vec![0.0; c], (0..c).map(|i| 0.5 + i as f64).collect()).unwrap();
        let sm = StylizedModel::new(&m, content.clone(), style.clone()).unwrap();

        // Gradient through the inserted layer alone: seed ones upstream.
        let mut tape = Tape::new();
        let act = split_activation(&m, &img).unwrap();
        let spatial: usize = act.shape()[2] * act.shape()[3];
        let a = tape.leaf({
            let mut t = act.clone();
            t.set_requires_grad(true);
            t
        });
        let injected = sm.inject(&mut tape, a).unwrap();
        let loss = tape.sum(injected).unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(a).unwrap();
        for ch in 0..c {
            let expect = style.sigma[ch] / content.sigma[ch];
            for i in 0..spatial {
                let g = grad[ch * spatial + i];
                assert!(
                    (g - expect).abs() < 1e-12,
                    "channel {ch}: dIN/dx = {g}, expected {expect}"
                );
            }
        }
    }
}
