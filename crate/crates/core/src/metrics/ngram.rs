//! N-gram caption metrics: corpus BLEU and CIDEr-D.

use crate::error::{Error, Result};
use crate::lm::split_tokens;
use std::collections::HashMap;

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
const MAX_N: usize = 4;
const BLEU_EPS: f64 = 1e-9;

type Ngram = Vec<String>;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Ngram, f64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// Document frequencies over a reference corpus: an n-gram appearing in any
/// reference of an image counts once for that image.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    df: Vec<HashMap<Ngram, f64>>,
    n_images: usize,
}

impl NgramIndex {
    pub fn build(references: &[Vec<String>]) -> Self {
        let mut df: Vec<HashMap<Ngram, f64>> = (0..MAX_N).map(|_| HashMap::new()).collect();
        for refs in references {
            for n in 1..=MAX_N {
                let mut seen: HashMap<Ngram, ()> = HashMap::new();
                for r in refs {
                    let toks = split_tokens(r);
                    for g in ngram_counts(&toks, n).into_keys() {
                        seen.entry(g).or_insert(());
                    }
                }
                for g in seen.into_keys() {
                    *df[n - 1].entry(g).or_insert(0.0) += 1.0;
                }
            }
        }
        NgramIndex {
            df,
            n_images: references.len(),
        }
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    /// idf = ln(corpus size) − ln(max(df, 1)).
    pub fn idf(&self, gram: &[String]) -> f64 {
        let df = self.df[gram.len() - 1].get(gram).copied().unwrap_or(0.0);
        (self.n_images as f64).ln() - df.max(1.0).ln()
    }
}

/// Per-image CIDEr-D scores. For each n in 1..=4: tf-idf vectors, candidate
/// counts clipped per reference, cosine against each reference with a
/// Gaussian length penalty, averaged over references and n, scaled ×10.
pub fn cider_d_scores(
    candidates: &[String],
    references: &[Vec<String>],
    index: &NgramIndex,
    sigma: f64,
    scale: f64,
) -> Result<Vec<f64>> {
    if candidates.len() != references.len() {
        return Err(Error::Usage(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::Usage("every image needs at least one reference".into()));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for (cand, refs) in candidates.iter().zip(references) {
        let cand_toks = split_tokens(cand);
        let mut total = 0.0f64;
        for n in 1..=MAX_N {
            let cand_vec: HashMap<Ngram, f64> = ngram_counts(&cand_toks, n)
                .into_iter()
                .map(|(g, c)| {
                    let idf = index.idf(&g);
                    (g, c * idf)
                })
                .collect();
            let cand_norm = cand_vec.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut val_n = 0.0f64;
            for r in refs {
                let ref_toks = split_tokens(r);
                let ref_vec: HashMap<Ngram, f64> = ngram_counts(&ref_toks, n)
                    .into_iter()
                    .map(|(g, c)| {
                        let idf = index.idf(&g);
                        (g, c * idf)
                    })
                    .collect();
                let ref_norm = ref_vec.values().map(|v| v * v).sum::<f64>().sqrt();
                let mut dot = 0.0;
                for (g, &cv) in &cand_vec {
                    if let Some(&rv) = ref_vec.get(g) {
                        dot += cv.min(rv) * rv;
                    }
                }
                let mut sim = if cand_norm > 0.0 && ref_norm > 0.0 {
                    dot / (cand_norm * ref_norm)
                } else {
                    0.0
                };
                let delta = cand_toks.len() as f64 - ref_toks.len() as f64;
                sim *= (-(delta * delta) / (2.0 * sigma * sigma)).exp();
                val_n += sim;
            }
            total += val_n / refs.len() as f64;
        }
        out.push(total / MAX_N as f64 * scale);
    }
    Ok(out)
}

/// Corpus CIDEr-D: mean of the per-image scores, with the n-gram index
/// built from the provided references.
pub fn cider_d(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    let index = NgramIndex::build(references);
    let scores = cider_d_scores(candidates, references, &index, CIDER_SIGMA, CIDER_SCALE)?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Corpus BLEU-n with count clipping, geometric mean over 1..=n, brevity
/// penalty, and add-epsilon smoothing.
pub fn bleu(candidates: &[String], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Usage(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let max_n = max_n.clamp(1, MAX_N);
    let mut matches = vec![0.0f64; max_n];
    let mut totals = vec![0.0f64; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in candidates.iter().zip(references) {
        let cand_toks = split_tokens(cand);
        cand_len += cand_toks.len();
        // closest reference length (ties toward the shorter reference)
        let closest = refs
            .iter()
            .map(|r| split_tokens(r).len())
            .min_by_key(|&l| {
                let d = (l as i64 - cand_toks.len() as i64).abs();
                (d, l)
            })
            .unwrap_or(0);
        ref_len += closest;
        for n in 1..=max_n {
            let cand_counts = ngram_counts(&cand_toks, n);
            let mut max_ref: HashMap<Ngram, f64> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(&split_tokens(r), n) {
                    let e = max_ref.entry(g).or_insert(0.0);
                    if c > *e {
                        *e = c;
                    }
                }
            }
            for (g, c) in &cand_counts {
                totals[n - 1] += c;
                let allowed = max_ref.get(g).copied().unwrap_or(0.0);
                matches[n - 1] += c.min(allowed);
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0f64;
    for n in 0..max_n {
        let p = (matches[n] + BLEU_EPS) / (totals[n] + BLEU_EPS);
        log_sum += p.ln();
    }
    let geo = (log_sum / max_n as f64).exp();
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * geo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> (Vec<String>, Vec<Vec<String>>) {
        let refs = vec![
            vec!["a furry wolf prowling in the forest".to_string()],
            vec!["a sleek otter swimming in the river".to_string()],
            vec!["a striped zebra grazing in the savanna".to_string()],
        ];
        let cands = refs.iter().map(|r| r[0].clone()).collect();
        (cands, refs)
    }

    #[test]
    fn identical_captions_score_ten() {
        let (cands, refs) = corpus();
        let score = cider_d(&cands, &refs).unwrap();
        assert!((score - 10.0).abs() < 1e-6, "got {score}");
    }

    #[test]
    fn disjoint_vocabulary_scores_zero() {
        let (_, refs) = corpus();
        let cands: Vec<String> = refs.iter().map(|_| "xyzzy qwerty plugh foo".into()).collect();
        let score = cider_d(&cands, &refs).unwrap();
        assert!(score.abs() < 1e-9, "got {score}");
        let b = bleu(&cands, &refs, 4).unwrap();
        assert!(b < 1e-6, "got {b}");
    }

    #[test]
    fn identical_bleu_is_one() {
        let (cands, refs) = corpus();
        let b = bleu(&cands, &refs, 4).unwrap();
        assert!((b - 1.0).abs() < 1e-9, "got {b}");
    }

    #[test]
    fn empty_candidate_bleu_zero() {
        let refs = vec![vec!["a dog".to_string()]];
        let cands = vec![String::new()];
        assert_eq!(bleu(&cands, &refs, 4).unwrap(), 0.0);
    }

    #[test]
    fn empty_references_are_a_usage_error() {
        let refs: Vec<Vec<String>> = vec![vec![]];
        let cands = vec!["a dog".to_string()];
        assert!(cider_d(&cands, &refs).is_err());
    }

    #[test]
    fn hand_worked_bigram_bleu() {
        // candidate "the cat sat", reference "the cat sat down":
        // p1 = 3/3, p2 = 2/2, BP = exp(1 - 4/3)
        let cands = vec!["the cat sat".to_string()];
        let refs = vec![vec!["the cat sat down".to_string()]];
        let b = bleu(&cands, &refs, 2).unwrap();
        let expect = (1.0f64 - 4.0 / 3.0).exp() * 1.0;
        assert!((b - expect).abs() < 1e-9, "got {b} want {expect}");
    }
}
