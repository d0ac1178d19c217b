//! Property-vector analyses: overlap, average precision, and the
//! category-mention report over generated captions.

use crate::lm::split_tokens;
use crate::world::World;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Jaccard overlap of two binary property vectors; a pair of zero vectors
/// is defined as 0.
pub fn property_overlap(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let union = a.iter().zip(b).filter(|(&x, &y)| x || y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Average precision of a score vector against a gold binary vector:
/// properties ranked by score (ties broken by index), precision averaged
/// at each gold-positive rank.
pub fn property_ap(scores: &[f64], gold: &[bool]) -> f64 {
    debug_assert_eq!(scores.len(), gold.len());
    let n_pos = gold.iter().filter(|&&g| g).count();
    if n_pos == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut ap = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        if gold[idx] {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    ap / n_pos as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnimalReport {
    /// Fraction of captions mentioning the gold category noun.
    pub accuracy: f64,
    /// Mean wup(gold, closest mentioned category) over misses that mention
    /// some other category; NaN when there are no such misses.
    pub mistake_wup: f64,
    pub n_examples: usize,
    pub n_misses: usize,
    pub n_misses_with_mention: usize,
    /// (gold noun, predicted noun) → count over misses.
    pub confusions: BTreeMap<String, usize>,
    /// Mean property-Jaccard between each gold category and its most
    /// frequent confusion (categories with at least `min_count` confusions).
    pub top_confusion_property_overlap: f64,
    /// Mean average precision of the mean mentioned-property vector against
    /// the gold property vector (examples mentioning no category skipped).
    pub property_ap: f64,
}

/// Scan generated captions for category mentions: exact-match accuracy,
/// taxonomic closeness of mistakes, confusion pairs, and property analyses.
pub fn animal_report(
    generations: &[(String, String)], // (generated text, gold category noun)
    world: &World,
    min_confusions: usize,
) -> AnimalReport {
    let nouns: BTreeMap<&str, usize> = world
        .categories
        .iter()
        .map(|c| (c.noun.as_str(), c.id))
        .collect();
    let mut correct = 0usize;
    let mut misses = 0usize;
    let mut misses_with_mention = 0usize;
    let mut wup_sum = 0.0f64;
    let mut confusions: BTreeMap<String, usize> = BTreeMap::new();
    let mut confusion_pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ap_sum = 0.0f64;
    let mut ap_count = 0usize;

    for (gen, gold_noun) in generations {
        let gold_id = match nouns.get(gold_noun.as_str()) {
            Some(&id) => id,
            None => continue,
        };
        let words: HashSet<String> = split_tokens(gen).into_iter().collect();
        let mentioned: Vec<usize> = nouns
            .iter()
            .filter(|(w, _)| words.contains(**w))
            .map(|(_, &id)| id)
            .collect();

        // Property AP over every mentioned category (including hits).
        if !mentioned.is_empty() {
            let b = world.cfg.n_properties;
            let mut mean_vec = vec![0.0f64; b];
            for &id in &mentioned {
                for (j, &bit) in world.categories[id].properties.iter().enumerate() {
                    if bit {
                        mean_vec[j] += 1.0;
                    }
                }
            }
            mean_vec.iter_mut().for_each(|v| *v /= mentioned.len() as f64);
            ap_sum += property_ap(&mean_vec, &world.categories[gold_id].properties);
            ap_count += 1;
        }

        if words.contains(gold_noun.as_str()) {
            correct += 1;
            continue;
        }
        misses += 1;
        let others: Vec<usize> = mentioned.into_iter().filter(|&id| id != gold_id).collect();
        if others.is_empty() {
            continue;
        }
        misses_with_mention += 1;
        let gold_node = world.categories[gold_id].node;
        let (best_id, best_wup) = others
            .iter()
            .map(|&id| {
                (
                    id,
                    super::wup::wup(&world.taxonomy, gold_node, world.categories[id].node),
                )
            })
            .fold((others[0], f64::MIN), |acc, (id, w)| {
                if w > acc.1 {
                    (id, w)
                } else {
                    acc
                }
            });
        wup_sum += best_wup;
        *confusions
            .entry(format!("{gold_noun}->{}", world.categories[best_id].noun))
            .or_insert(0) += 1;
        *confusion_pairs.entry((gold_id, best_id)).or_insert(0) += 1;
    }

    // Top confusion per gold category with enough mass.
    let mut top: BTreeMap<usize, (usize, usize)> = BTreeMap::new(); // gold -> (pred, count)
    for (&(g, p), &c) in &confusion_pairs {
        let e = top.entry(g).or_insert((p, 0));
        if c > e.1 {
            *e = (p, c);
        }
    }
    let overlaps: Vec<f64> = top
        .iter()
        .filter(|(_, &(_, c))| c >= min_confusions)
        .map(|(&g, &(p, _))| world.property_jaccard(g, p))
        .collect();
    let top_overlap = if overlaps.is_empty() {
        f64::NAN
    } else {
        overlaps.iter().sum::<f64>() / overlaps.len() as f64
    };

    AnimalReport {
        accuracy: correct as f64 / generations.len().max(1) as f64,
        mistake_wup: if misses_with_mention == 0 {
            f64::NAN
        } else {
            wup_sum / misses_with_mention as f64
        },
        n_examples: generations.len(),
        n_misses: misses,
        n_misses_with_mention: misses_with_mention,
        confusions,
        top_confusion_property_overlap: top_overlap,
        property_ap: if ap_count == 0 {
            f64::NAN
        } else {
            ap_sum / ap_count as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};

    #[test]
    fn overlap_basics() {
        assert_eq!(property_overlap(&[true, false, true], &[true, false, true]), 1.0);
        assert_eq!(property_overlap(&[true, false], &[false, true]), 0.0);
        assert_eq!(property_overlap(&[false, false], &[false, false]), 0.0);
        // symmetric
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        assert_eq!(property_overlap(&a, &b), property_overlap(&b, &a));
    }

    #[test]
    fn ap_is_one_when_gold_is_top_ranked() {
        let gold = [true, true, false, false];
        let scores = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(property_ap(&scores, &gold), 1.0);
    }

    #[test]
    fn four_property_hand_case() {
        // ranking: idx2 (0.9, neg), idx0 (0.5, pos), idx3 (0.4, pos), idx1 (0.1, neg)
        // precisions at positives: 1/2, 2/3 -> AP = (0.5 + 2/3)/2
        let gold = [true, false, false, true];
        let scores = [0.5, 0.1, 0.9, 0.4];
        let expect = (0.5 + 2.0 / 3.0) / 2.0;
        assert!((property_ap(&scores, &gold) - expect).abs() < 1e-12);
    }

    #[test]
    fn all_correct_corpus_has_accuracy_one_and_no_mistakes() {
        let world = build_world(31, &WorldConfig { n_categories: 6, ..WorldConfig::default() }).unwrap();
        let gens: Vec<(String, String)> = world
            .categories
            .iter()
            .map(|c| (format!("a picture of a {}", c.noun), c.noun.clone()))
            .collect();
        let r = animal_report(&gens, &world, 1);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.confusions.is_empty());
        assert!(r.mistake_wup.is_nan());
    }

    #[test]
    fn hand_counted_five_caption_corpus() {
        let world = build_world(32, &WorldConfig { n_categories: 6, ..WorldConfig::default() }).unwrap();
        let n0 = world.categories[0].noun.clone();
        let n1 = world.categories[1].noun.clone();
        let gens = vec![
            (format!("a {n0} resting"), n0.clone()),   // hit
            (format!("a {n1} resting"), n0.clone()),   // miss with mention
            ("nothing to see".to_string(), n0.clone()), // miss, no mention
            (format!("a {n0} and a {n1}"), n0.clone()), // hit (gold mentioned)
            (format!("a {n0}"), n1.clone()),           // miss with mention
        ];
        let r = animal_report(&gens, &world, 1);
        assert!((r.accuracy - 2.0 / 5.0).abs() < 1e-12);
        assert_eq!(r.n_misses, 3);
        assert_eq!(r.n_misses_with_mention, 2);
        let expected_wup =
            crate::metrics::wup(&world.taxonomy, world.categories[0].node, world.categories[1].node);
        assert!((r.mistake_wup - expected_wup).abs() < 1e-12);
    }
}
