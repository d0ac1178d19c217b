//! Diagnostic, ignored by default: with prompts set to the exact caption
//! embeddings (a perfect projection), how well does the pretrained LM copy?
//! Separates LM copy ability from projection convergence.

use limber_core::lm::{pretrain_lm, LmConfig, PretrainOptions, Vocabulary};
use limber_core::rng;
use limber_core::world::{build_pretrain_corpus, build_world, make_dataset, CaptionGrammar, WorldConfig};
use std::time::Instant;

#[test]
#[ignore]
fn copy_ability_with_perfect_prompts() {
    let seed = 7;
    let world = build_world(rng::derive_seed(seed, "world"), &WorldConfig::default()).unwrap();
    let grammar = CaptionGrammar::new(&world, rng::derive_seed(seed, "grammar"));
    let words = world.lexicon_words();
    let vocab = Vocabulary::build(words.iter().map(|s| s.as_str()));

    for (steps, batch, lr, echo_tag) in [(1500usize, 16usize, 3e-3f64, "b16-s1500")] {
        let corpus = build_pretrain_corpus(&world, &grammar, 8000, 1_000_000, rng::derive_seed(seed, "corpus"));
        let corpus_tok: Vec<Vec<u32>> = corpus.iter().map(|l| vocab.tokenize(l)).collect();
        let cfg = LmConfig {
            context_len: 128,
            vocab_size: vocab.len(),
            ..LmConfig::default()
        };
        let opts = PretrainOptions {
            steps,
            batch_size: batch,
            threads: 2,
            seed: rng::derive_seed(seed, "lm"),
            eval_every: 400,
            optim: limber_core::tensor::AdamWConfig {
                lr,
                ..limber_core::tensor::AdamWConfig::default()
            },
            ..PretrainOptions::default()
        };
        let t0 = Instant::now();
        let (lm, _) = pretrain_lm(&corpus_tok, &[], cfg, &opts).unwrap();
        let elapsed = t0.elapsed();

        // Perfect-prompt next-token accuracy on held-out captions.
        let ds = make_dataset(&world, &grammar, 50, 200, 50).unwrap();
        let sep = vocab.id(".").unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        let mut content_correct = 0usize;
        let mut content_total = 0usize;
        for ex in &ds.val {
            let toks = vocab.tokenize(&ex.caption);
            let mut padded = toks.clone();
            while padded.len() < 12 {
                padded.push(limber_core::lm::EOS);
            }
            padded.truncate(12);
            let prompts = lm.embed_tokens(&padded).unwrap();
            let mut ids = vec![sep];
            ids.extend_from_slice(&toks);
            let logits = limber_core::lm::forward_mixed(&lm, Some(&prompts), &ids).unwrap();
            let k_off = prompts.rows();
            let roles = &ex.roles;
            for (i, &target) in toks.iter().enumerate() {
                let row = logits.row(k_off + i);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0 as u32;
                let word = vocab.token(target).to_string();
                let is_content = roles.contains_key(&word);
                if pred == target {
                    correct += 1;
                    if is_content {
                        content_correct += 1;
                    }
                }
                total += 1;
                if is_content {
                    content_total += 1;
                }
            }
        }
        println!(
            "{echo_tag}: lm {steps} steps lr {lr} in {elapsed:?}: perfect-prompt acc {:.4}, content-word acc {:.4} ({content_correct}/{content_total})",
            correct as f64 / total as f64,
            content_correct as f64 / content_total as f64,
        );
    }
}
