//! Exploratory end-to-end runs, ignored by default; used to size training
//! configs. Run manually:
//!   cargo test -p limber-core --test pipeline_probe -- --ignored --nocapture

use limber_core::encoders::{
    pretrain_encoder_classifier, pretrain_encoder_contrastive, pretrain_encoder_ssl,
    random_encoder, ClassifierConfig, ContrastiveConfig, EncoderModel, RandomConfig, SslConfig,
};
use limber_core::lm::{pretrain_lm, perplexity, DecoderLM, LmConfig, PretrainOptions, Vocabulary};
use limber_core::metrics::cider_d;
use limber_core::projection::{train_projection, LimberTrainConfig, Projection, TrainExample};
use limber_core::rng;
use limber_core::tasks::{caption_eval_split, full_caption, run_captioning, DecodeSettings, Triple};
use limber_core::world::{
    build_pretrain_corpus, build_world, make_dataset, CaptionGrammar, DatasetExample, World,
    WorldConfig,
};
use std::time::Instant;

fn tokenize_all(vocab: &Vocabulary, lines: &[String]) -> Vec<Vec<u32>> {
    lines.iter().map(|l| vocab.tokenize(l)).collect()
}

struct Stack {
    world: World,
    grammar: CaptionGrammar,
    vocab: Vocabulary,
    lm: DecoderLM,
    train: Vec<DatasetExample>,
    val: Vec<DatasetExample>,
}

fn build_stack(seed: u64, lm_steps: usize, corpus_lines: usize, n_train: usize) -> Stack {
    let t0 = Instant::now();
    let world = build_world(rng::derive_seed(seed, "world"), &WorldConfig::default()).unwrap();
    let grammar = CaptionGrammar::new(&world, rng::derive_seed(seed, "grammar"));
    let words = world.lexicon_words();
    let vocab = Vocabulary::build(words.iter().map(|s| s.as_str()));
    println!("world+vocab ({} words) in {:?}", vocab.len(), t0.elapsed());

    let t0 = Instant::now();
    let corpus = build_pretrain_corpus(&world, &grammar, corpus_lines, 1_000_000, rng::derive_seed(seed, "corpus"));
    let val_corpus = build_pretrain_corpus(&world, &grammar, 300, 3_000_000, rng::derive_seed(seed, "corpus-val"));
    let corpus_tok = tokenize_all(&vocab, &corpus);
    let val_tok = tokenize_all(&vocab, &val_corpus);
    let cfg = LmConfig {
        context_len: 128,
        vocab_size: vocab.len(),
        ..LmConfig::default()
    };
    let opts = PretrainOptions {
        steps: lm_steps,
        threads: 2,
        seed: rng::derive_seed(seed, "lm"),
        eval_every: 500,
        ..PretrainOptions::default()
    };
    let (lm, report) = pretrain_lm(&corpus_tok, &val_tok, cfg, &opts).unwrap();
    println!(
        "lm pretrain {} steps in {:?}; val ppl {:?}; curve {:?}",
        lm_steps,
        t0.elapsed(),
        report.val_perplexity,
        report.val_curve
    );
    let ds = make_dataset(&world, &grammar, n_train, 300, 300).unwrap();
    Stack {
        world,
        grammar,
        vocab,
        lm,
        train: ds.train,
        val: ds.val,
    }
}

fn limber_examples(
    stack: &Stack,
    encoder: &EncoderModel,
    split: &[DatasetExample],
) -> Vec<TrainExample> {
    split
        .iter()
        .map(|ex| TrainExample {
            features: encoder.encode_flat(ex.observation.as_ref().unwrap()).unwrap(),
            tokens: stack.vocab.tokenize(&ex.caption),
        })
        .collect()
}

fn train_and_eval(stack: &Stack, encoder: &EncoderModel, steps: usize, tag: &str) -> f64 {
    let t0 = Instant::now();
    let sep = stack.vocab.id(".").unwrap();
    let mut proj = Projection::for_encoder(encoder, stack.lm.cfg.d_model, 7);
    let cfg = LimberTrainConfig {
        steps,
        batch_size: 24,
        threads: 2,
        seed: 11,
        sep_token: sep,
        ..LimberTrainConfig::default()
    };
    let examples = limber_examples(stack, encoder, &stack.train);
    let (report, _) = train_projection(&examples, &mut proj, &stack.lm, &cfg, None).unwrap();
    let triple = Triple {
        projection: &proj,
        lm: &stack.lm,
        vocab: &stack.vocab,
    };
    let eval = caption_eval_split(&stack.val, encoder).unwrap();
    let records = run_captioning(&eval, &triple, DecodeSettings::default(), 5, 2).unwrap();
    let cands: Vec<String> = records.iter().map(full_caption).collect();
    let refs: Vec<Vec<String>> = stack.val.iter().map(|e| vec![e.caption.clone()]).collect();
    let score = cider_d(&cands, &refs).unwrap();
    println!(
        "{tag}: loss {:.3} cider {:.3} in {:?} | sample: {}",
        report.final_loss,
        score,
        t0.elapsed(),
        cands[0]
    );
    score
}

#[test]
#[ignore]
fn probe_lm_and_ordering() {
    let seed = 7;
    let stack = build_stack(seed, 1200, 8000, 3000);
    let ppl = perplexity(&stack.lm, &tokenize_all(&stack.vocab, &stack.train.iter().map(|e| e.caption.clone()).collect::<Vec<_>>())).unwrap();
    println!("caption-only ppl of mixed-trained lm: {ppl:.3}");

    let obs_dim = stack.world.d_obs();
    let t0 = Instant::now();
    let cls_data: Vec<(Vec<f32>, usize)> = stack
        .train
        .iter()
        .map(|e| {
            (
                e.observation.clone().unwrap(),
                stack.world.category_by_noun(&e.category).unwrap().id,
            )
        })
        .collect();
    let val_data: Vec<(Vec<f32>, usize)> = stack
        .val
        .iter()
        .map(|e| {
            (
                e.observation.clone().unwrap(),
                stack.world.category_by_noun(&e.category).unwrap().id,
            )
        })
        .collect();
    let (cls, acc) = pretrain_encoder_classifier(
        &cls_data,
        &val_data,
        stack.world.n_categories(),
        &ClassifierConfig { input_dim: obs_dim, ..ClassifierConfig::default() },
        101,
    )
    .unwrap();
    println!("classifier acc {acc:.3} in {:?}", t0.elapsed());

    let t0 = Instant::now();
    let ctr_data: Vec<(Vec<f32>, Vec<u32>)> = stack
        .train
        .iter()
        .map(|e| (e.observation.clone().unwrap(), stack.vocab.tokenize(&e.caption)))
        .collect();
    let ctr_val: Vec<(Vec<f32>, Vec<u32>)> = stack
        .val
        .iter()
        .map(|e| (e.observation.clone().unwrap(), stack.vocab.tokenize(&e.caption)))
        .collect();
    let (ctr, _towers, ctr_report) = pretrain_encoder_contrastive(
        &ctr_data,
        &ctr_val,
        stack.vocab.len(),
        &ContrastiveConfig { input_dim: obs_dim, ..ContrastiveConfig::default() },
        102,
    )
    .unwrap();
    println!(
        "contrastive r@1 {:.3} init loss {:.3} (ln64={:.3}) in {:?}",
        ctr_report.r_at_1,
        ctr_report.initial_loss,
        (64f64).ln(),
        t0.elapsed()
    );

    let t0 = Instant::now();
    let ssl_data: Vec<Vec<f32>> = stack.train.iter().map(|e| e.observation.clone().unwrap()).collect();
    let ssl_val: Vec<Vec<f32>> = stack.val.iter().map(|e| e.observation.clone().unwrap()).collect();
    let (ssl, ssl_report) = pretrain_encoder_ssl(&ssl_data, &ssl_val, &SslConfig::default(), 103).unwrap();
    println!(
        "ssl masked mse {:.4} baseline {:.4} in {:?}",
        ssl_report.masked_mse, ssl_report.baseline_mse, t0.elapsed()
    );

    let rnd = random_encoder(&RandomConfig { input_dim: obs_dim, ..RandomConfig::default() }, 104);

    let c_ctr = train_and_eval(&stack, &ctr, 600, "contrastive");
    let c_cls = train_and_eval(&stack, &cls, 600, "classifier");
    let c_ssl = train_and_eval(&stack, &ssl, 600, "ssl");
    let c_rnd = train_and_eval(&stack, &rnd, 600, "random");
    println!("ORDERING: ctr {c_ctr:.3} cls {c_cls:.3} ssl {c_ssl:.3} rnd {c_rnd:.3}");
}

#[test]
#[ignore]
fn probe_oracle_recoverability() {
    use limber_core::projection::OracleEncoder;
    let seed = 9;
    let stack = build_stack(seed, 1200, 8000, 2500);
    let k = 11usize;
    let oracle = OracleEncoder::new(k, stack.lm.cfg.d_model, 5);
    let make = |split: &[DatasetExample]| -> Vec<TrainExample> {
        split
            .iter()
            .map(|e| {
                let toks = stack.vocab.tokenize(&e.caption);
                TrainExample {
                    features: oracle.features_for(&stack.lm, &toks).unwrap(),
                    tokens: toks,
                }
            })
            .collect()
    };
    let train = make(&stack.train);
    let val = make(&stack.val);
    let mut proj = Projection::vector_to_sequence(oracle.feature_dim(), k, stack.lm.cfg.d_model, 3);
    let sep = stack.vocab.id(".").unwrap();
    let t0 = Instant::now();
    let cfg = LimberTrainConfig {
        steps: 900,
        batch_size: 24,
        threads: 2,
        seed: 13,
        sep_token: sep,
        eval_every: 100,
        ..LimberTrainConfig::default()
    };
    let (report, _) = train_projection(&train, &mut proj, &stack.lm, &cfg, None).unwrap();
    println!("oracle train loss curve {:?} in {:?}", report.loss_curve, t0.elapsed());

    // held-out next-token accuracy
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in &val {
        let prompts = proj.project(&ex.features).unwrap();
        let mut ids = vec![sep];
        ids.extend_from_slice(&ex.tokens);
        let logits = limber_core::lm::forward_mixed(&stack.lm, Some(&prompts), &ids).unwrap();
        let k_off = prompts.rows();
        for (i, &target) in ex.tokens.iter().enumerate() {
            let row = logits.row(k_off + i);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred as u32 == target {
                correct += 1;
            }
            total += 1;
        }
    }
    println!("oracle held-out next-token acc {:.4}", correct as f64 / total as f64);

    // verbatim reproduction through the captioning path
    let eval: Vec<limber_core::tasks::EvalExample> = stack
        .val
        .iter()
        .map(|e| limber_core::tasks::EvalExample {
            id: e.scene_id,
            features: oracle
                .features_for(&stack.lm, &stack.vocab.tokenize(&e.caption))
                .unwrap(),
            gold: e.caption.clone(),
            category: e.category.clone(),
        })
        .collect();
    let triple = Triple { projection: &proj, lm: &stack.lm, vocab: &stack.vocab };
    let records = run_captioning(&eval, &triple, DecodeSettings::default(), 5, 2).unwrap();
    let verbatim = records
        .iter()
        .filter(|r| full_caption(r) == r.gold)
        .count();
    println!(
        "verbatim {}/{} = {:.3} | ex: '{}' vs '{}'",
        verbatim,
        records.len(),
        verbatim as f64 / records.len() as f64,
        full_caption(&records[0]),
        records[0].gold
    );
}
