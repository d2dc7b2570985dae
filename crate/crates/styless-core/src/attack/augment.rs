//! Input-side augmentations (diversity, scale copies, admix) and the
//! gradient-side translation smoothing kernel.
//!
//! Diversity and admix draw their randomness once per attack iteration; the
//! same view feeds the vanilla and every stylized gradient of that iteration.

use crate::tensor::{Result, Tape, TensorError, TensorId};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// One augmentation stage. Defaults follow the originating attacks, scaled
/// to 32x32 inputs: diversity probability 0.5, 7x7 uniform translation
/// kernel, 5 scale copies, admix count 3 at strength 0.2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    Diversity { p: f64, max_resize: usize },
    Translation { kernel_size: usize },
    Scale { copies: usize },
    Admix { count: usize, strength: f64 },
}

pub const DEFAULT_DIVERSITY: Augmentation = Augmentation::Diversity { p: 0.5, max_resize: 8 };
pub const DEFAULT_TRANSLATION: Augmentation = Augmentation::Translation { kernel_size: 7 };
pub const DEFAULT_SCALE: Augmentation = Augmentation::Scale { copies: 5 };
pub const DEFAULT_ADMIX: Augmentation = Augmentation::Admix { count: 3, strength: 0.2 };

/// Randomness of one iteration's augmented view, drawn up front so every
/// model variant sees the same transform.
#[derive(Debug, Clone, Default)]
pub struct AugmentDraw {
    /// (target size, pad top, pad left) when the diversity transform fires.
    pub diversity: Option<(usize, usize, usize)>,
    /// Pool indices of the admix images.
    pub admix_indices: Vec<usize>,
}

/// Draw the per-iteration augmentation randomness. Consumes the rng in a
/// fixed order regardless of which stages are present downstream.
pub fn draw_augmentations(
    augmentations: &[Augmentation],
    image_hw: (usize, usize),
    admix_pool_len: usize,
    exclude: Option<usize>,
    rng: &mut ChaCha12Rng,
) -> Result<AugmentDraw> {
    let mut draw = AugmentDraw::default();
    for aug in augmentations {
        match *aug {
            Augmentation::Diversity { p, max_resize } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(TensorError::BadArgument {
                        op: "diversity",
                        reason: format!("probability {p} outside [0, 1]"),
                    });
                }
                let (h, w) = image_hw;
                if max_resize >= h.min(w) {
                    return Err(TensorError::BadArgument {
                        op: "diversity",
                        reason: format!("max_resize {max_resize} >= image extent {}", h.min(w)),
                    });
                }
                if rng.gen_bool(p) {
                    let target = rng.gen_range(h - max_resize..=h);
                    let top = rng.gen_range(0..=h - target);
                    let left = rng.gen_range(0..=w - target);
                    draw.diversity = Some((target, top, left));
                }
            }
            Augmentation::Admix { count, .. } => {
                if admix_pool_len == 0 && count > 0 {
                    return Err(TensorError::BadArgument {
                        op: "admix",
                        reason: "admix requires a nonempty image pool".into(),
                    });
                }
                for _ in 0..count {
                    loop {
                        let idx = rng.gen_range(0..admix_pool_len);
                        if Some(idx) != exclude || admix_pool_len == 1 {
                            draw.admix_indices.push(idx);
                            break;
                        }
                    }
                }
            }
            Augmentation::Translation { .. } | Augmentation::Scale { .. } => {}
        }
    }
    Ok(draw)
}

/// Expand the input into the iteration's forward branches; the final loss
/// averages one cross-entropy per branch.
pub fn build_branches(
    tape: &mut Tape,
    input: TensorId,
    augmentations: &[Augmentation],
    draw: &AugmentDraw,
    admix_pool: &[Vec<f64>],
    input_shape: (usize, usize, usize),
) -> Result<Vec<TensorId>> {
    let (c, h, w) = input_shape;
    let mut branches = vec![input];
    for aug in augmentations {
        match *aug {
            Augmentation::Admix { count, strength } => {
                if count == 0 {
                    continue;
                }
                let mut mixed = Vec::with_capacity(branches.len() * count);
                for &b in &branches {
                    for &pool_idx in &draw.admix_indices {
                        let other = tape.constant(
                            admix_pool[pool_idx].clone(),
                            vec![1, c, h, w],
                        )?;
                        let scaled = tape.scale(other, strength)?;
                        mixed.push(tape.add(b, scaled)?);
                    }
                }
                branches = mixed;
            }
            Augmentation::Scale { copies } => {
                if copies == 0 {
                    return Err(TensorError::BadArgument {
                        op: "scale_copies",
                        reason: "copies must be positive".into(),
                    });
                }
                let mut scaled = Vec::with_capacity(branches.len() * copies);
                for &b in &branches {
                    for i in 0..copies {
                        scaled.push(tape.scale(b, 0.5f64.powi(i as i32))?);
                    }
                }
                branches = scaled;
            }
            Augmentation::Diversity { .. } => {
                if let Some((target, top, left)) = draw.diversity {
                    let mut diversified = Vec::with_capacity(branches.len());
                    for &b in &branches {
                        let resized = tape.resize_nearest(b, target, target)?;
                        diversified.push(tape.pad_zero(resized, top, left, h, w)?);
                    }
                    branches = diversified;
                }
            }
            Augmentation::Translation { .. } => {}
        }
    }
    Ok(branches)
}

/// Smooth a (c, h, w) input gradient with a normalized uniform kernel,
/// zero-padded to keep the shape (the translation-invariance surrogate).
pub fn translation_smooth(
    grad: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel_size: usize,
) -> Result<Vec<f64>> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(TensorError::BadArgument {
            op: "translation_smooth",
            reason: format!("kernel size {kernel_size} must be odd and positive"),
        });
    }
    if kernel_size > h || kernel_size > w {
        return Err(TensorError::BadArgument {
            op: "translation_smooth",
            reason: format!("kernel {kernel_size} larger than image {h}x{w}"),
        });
    }
    if grad.len() != c * h * w {
        return Err(TensorError::BadShape {
            op: "translation_smooth",
            shape: vec![grad.len()],
            reason: format!("expected {c}x{h}x{w} gradient"),
        });
    }
    if kernel_size == 1 {
        return Ok(grad.to_vec());
    }
    let half = kernel_size as isize / 2;
    let weight = 1.0 / (kernel_size * kernel_size) as f64;
    let mut out = vec![0.0; grad.len()];
    for ch in 0..c {
        let plane = &grad[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for ky in -half..=half {
                    let iy = y + ky;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in -half..=half {
                        let ix = x + kx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += plane[(iy * w as isize + ix) as usize];
                    }
                }
                oplane[(y * w as isize + x) as usize] = acc * weight;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn diversity_with_zero_probability_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let augs = [Augmentation::Diversity { p: 0.0, max_resize: 8 }];
        for _ in 0..50 {
            let draw = draw_augmentations(&augs, (32, 32), 0, None, &mut rng).unwrap();
            assert!(draw.diversity.is_none());
        }
    }

    #[test]
    fn diversity_transform_keeps_shape() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let augs = [Augmentation::Diversity { p: 1.0, max_resize: 8 }];
        let draw = draw_augmentations(&augs, (32, 32), 0, None, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.5; 3 * 32 * 32], vec![1, 3, 32, 32]).unwrap();
        let branches = build_branches(&mut tape, x, &augs, &draw, &[], (3, 32, 32)).unwrap();
        assert_eq!(branches.len(), 1);
        assert_eq!(tape.value(branches[0]).shape(), &[1, 3, 32, 32]);
    }

    #[test]
    fn translation_identity_kernel_returns_gradient_unchanged() {
        let grad: Vec<f64> = (0..3 * 8 * 8).map(|v| v as f64 * 0.01).collect();
        let out = translation_smooth(&grad, (3, 8, 8), 1).unwrap();
        assert_eq!(out, grad);
    }

    #[test]
    fn translation_kernel_larger_than_image_errors() {
        let grad = vec![0.0; 3 * 4 * 4];
        assert!(translation_smooth(&grad, (3, 4, 4), 5).is_err());
    }

    #[test]
    fn translation_preserves_total_mass_in_the_interior() {
        // A centered impulse spreads uniformly over the kernel footprint.
        let mut grad = vec![0.0; 9 * 9];
        grad[4 * 9 + 4] = 81.0;
        let out = translation_smooth(&grad, (1, 9, 9), 3).unwrap();
        for y in 3..=5 {
            for x in 3..=5 {
                assert!((out[y * 9 + x] - 9.0).abs() < 1e-12);
            }
        }
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn scale_with_one_copy_equals_input() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.1).collect();
        let x = tape.constant(data.clone(), vec![1, 3, 2, 2]).unwrap();
        let augs = [Augmentation::Scale { copies: 1 }];
        let branches =
            build_branches(&mut tape, x, &augs, &AugmentDraw::default(), &[], (3, 2, 2)).unwrap();
        assert_eq!(branches.len(), 1);
        assert_eq!(tape.value(branches[0]).data(), data.as_slice());
    }

    #[test]
    fn scale_copies_halve_successively() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.8; 4], vec![1, 1, 2, 2]).unwrap();
        let augs = [Augmentation::Scale { copies: 3 }];
        let branches =
            build_branches(&mut tape, x, &augs, &AugmentDraw::default(), &[], (1, 2, 2)).unwrap();
        assert_eq!(branches.len(), 3);
        assert_eq!(tape.value(branches[1]).data(), &[0.4; 4]);
        assert_eq!(tape.value(branches[2]).data(), &[0.2; 4]);
    }

    #[test]
    fn admix_adds_scaled_pool_images() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let augs = [Augmentation::Admix { count: 2, strength: 0.5 }];
        let pool = vec![vec![1.0; 4], vec![2.0; 4]];
        let draw = draw_augmentations(&augs, (2, 2), pool.len(), None, &mut rng).unwrap();
        assert_eq!(draw.admix_indices.len(), 2);
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 4], vec![1, 1, 2, 2]).unwrap();
        let branches = build_branches(&mut tape, x, &augs, &draw, &pool, (1, 2, 2)).unwrap();
        assert_eq!(branches.len(), 2);
        for (b, &idx) in branches.iter().zip(&draw.admix_indices) {
            let expect = 0.5 * pool[idx][0];
            assert_eq!(tape.value(*b).data(), &[expect; 4]);
        }
    }
}
