//! Second diagnostic: prompt padding variants and run variance; ignored.

use limber_core::lm::{forward_mixed, pretrain_lm, LmConfig, PretrainOptions, Vocabulary};
use limber_core::rng;
use limber_core::world::{build_pretrain_corpus, build_world, make_dataset, CaptionGrammar, WorldConfig};
use std::time::Instant;

#[test]
#[ignore]
fn padding_variants_and_variance() {
    let seed = 7;
    let world = build_world(rng::derive_seed(seed, "world"), &WorldConfig::default()).unwrap();
    let grammar = CaptionGrammar::new(&world, rng::derive_seed(seed, "grammar"));
    let words = world.lexicon_words();
    let vocab = Vocabulary::build(words.iter().map(|s| s.as_str()));
    let ds = make_dataset(&world, &grammar, 50, 200, 50).unwrap();
    let corpus = build_pretrain_corpus(&world, &grammar, 8000, 1_000_000, rng::derive_seed(seed, "corpus"));
    let corpus_tok: Vec<Vec<u32>> = corpus.iter().map(|l| vocab.tokenize(l)).collect();

    for lm_seed in [1u64, 2] {
        let cfg = LmConfig {
            context_len: 128,
            vocab_size: vocab.len(),
            ..LmConfig::default()
        };
        let opts = PretrainOptions {
            steps: 1500,
            batch_size: 12,
            threads: 2,
            seed: lm_seed,
            eval_every: 500,
            warmup_steps: 50,
            final_lr_frac: 1.0, // constant after warmup
            optim: limber_core::tensor::AdamWConfig {
                lr: 3e-3,
                ..limber_core::tensor::AdamWConfig::default()
            },
            ..PretrainOptions::default()
        };
        let t0 = Instant::now();
        let (lm, _) = pretrain_lm(&corpus_tok, &[], cfg, &opts).unwrap();
        println!("lm seed {lm_seed} trained in {:?}", t0.elapsed());

        let sep = vocab.id(".").unwrap();
        for (pad_tag, pad_tok) in [
            ("eos-pad", Some(limber_core::lm::EOS)),
            ("dot-pad", Some(sep)),
            ("no-pad", None),
        ] {
            let mut correct = 0usize;
            let mut total = 0usize;
            for ex in &ds.val {
                let toks = vocab.tokenize(&ex.caption);
                let prompt_ids: Vec<u32> = match pad_tok {
                    Some(p) => {
                        let mut v = toks.clone();
                        while v.len() < 12 {
                            v.push(p);
                        }
                        v
                    }
                    None => toks.clone(),
                };
                let prompts = lm.embed_tokens(&prompt_ids).unwrap();
                let mut ids = vec![sep];
                ids.extend_from_slice(&toks);
                let logits = forward_mixed(&lm, Some(&prompts), &ids).unwrap();
                let k_off = prompts.rows();
                for (i, &target) in toks.iter().enumerate() {
                    let row = logits.row(k_off + i);
                    let pred = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0 as u32;
                    let word = vocab.token(target).to_string();
                    if ex.roles.contains_key(&word) {
                        if pred == target {
                            correct += 1;
                        }
                        total += 1;
                    }
                }
            }
            println!(
                "  lm{lm_seed} {pad_tag}: content acc {:.4} ({correct}/{total})",
                correct as f64 / total as f64
            );
        }
    }
}
