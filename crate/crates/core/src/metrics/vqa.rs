//! VQA accuracy in the multi-annotator form.

/// min(#matching annotators / 3, 1); a single gold answer degenerates to
/// exact match. Inputs are expected pre-normalized.
pub fn vqa_accuracy(pred: &str, golds: &[String]) -> f64 {
    if golds.is_empty() {
        return 0.0;
    }
    if golds.len() == 1 {
        return if pred == golds[0] { 1.0 } else { 0.0 };
    }
    let matches = golds.iter().filter(|g| g.as_str() == pred).count();
    (matches as f64 / 3.0).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golds(spec: &[(&str, usize)]) -> Vec<String> {
        spec.iter()
            .flat_map(|(s, n)| std::iter::repeat(s.to_string()).take(*n))
            .collect()
    }

    #[test]
    fn three_of_ten_matches_is_full_credit() {
        let g = golds(&[("dog", 3), ("cat", 7)]);
        assert_eq!(vqa_accuracy("dog", &g), 1.0);
    }

    #[test]
    fn one_match_is_a_third() {
        let g = golds(&[("dog", 1), ("cat", 9)]);
        assert!((vqa_accuracy("dog", &g) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_match_is_zero_and_single_gold_is_exact() {
        let g = golds(&[("cat", 10)]);
        assert_eq!(vqa_accuracy("dog", &g), 0.0);
        assert_eq!(vqa_accuracy("dog", &["dog".to_string()]), 1.0);
        assert_eq!(vqa_accuracy("dog", &["cat".to_string()]), 0.0);
    }
}
