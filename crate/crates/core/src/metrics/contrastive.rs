//! Reference-free and reference-augmented caption scoring through the
//! world's own contrastive towers.

use crate::encoders::ContrastiveTowers;
use crate::error::Result;
use crate::lm::Vocabulary;
use crate::tensor::Tensor;

pub const DEFAULT_SCORE_SCALE: f64 = 2.5;

fn cos(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

/// w · max(cos(image embedding, caption embedding), 0).
pub fn contrastive_score(
    towers: &ContrastiveTowers,
    image_features: &Tensor,
    caption: &str,
    vocab: &Vocabulary,
    w: f64,
) -> Result<f64> {
    let ie = towers.embed_image(image_features)?;
    let te = towers.embed_text(&vocab.tokenize(caption))?;
    Ok(w * cos(&ie, &te).max(0.0))
}

/// Harmonic mean of the image-caption score and the best reference-caption
/// similarity (both on the w scale).
pub fn ref_contrastive_score(
    towers: &ContrastiveTowers,
    image_features: &Tensor,
    caption: &str,
    references: &[String],
    vocab: &Vocabulary,
    w: f64,
) -> Result<f64> {
    let img_side = contrastive_score(towers, image_features, caption, vocab, w)?;
    let ce = towers.embed_text(&vocab.tokenize(caption))?;
    let mut best = 0.0f64;
    for r in references {
        let re = towers.embed_text(&vocab.tokenize(r))?;
        best = best.max(cos(&ce, &re));
    }
    let ref_side = w * best.max(0.0);
    if img_side + ref_side == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * img_side * ref_side / (img_side + ref_side))
}
