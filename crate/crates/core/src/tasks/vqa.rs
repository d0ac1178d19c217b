//! Few-shot visual question answering and its blind control.
//!
//! Prompt format per block: [image prompts] ". q : <question> a : <answer>"
//! with blocks separated by EOS; the target block ends at "a :". The blind
//! variant is identical minus every prompt block.

use super::{
    assemble_rows, tensor_hash, DecodeSettings, GenerationRecord, Segment, Transcript, Triple,
};
use crate::encoders::EncoderModel;
use crate::error::{Error, Result};
use crate::lm::{generate, DecodeMode};
use crate::rng;
use crate::tensor::Tensor;
use crate::world::{question_for, CaptionGrammar, QuestionFamily, World, QUESTION_FAMILIES};
use rand::Rng;
use rayon::prelude::*;

/// A VQA item: features, question, and its ground-truth answer(s).
#[derive(Debug, Clone)]
pub struct VqaExample {
    pub id: u64,
    pub features: Tensor,
    pub question: String,
    pub answers: Vec<String>,
    pub family: QuestionFamily,
    pub category: String,
}

/// Build VQA examples over scene ids starting at `id_base` (choose a range
/// disjoint from captioning splits and exemplar pools). Families rotate
/// round-robin; counting scenes render 1–3 instances.
pub fn make_vqa_examples(
    world: &World,
    grammar: &CaptionGrammar,
    encoder: &EncoderModel,
    n: usize,
    id_base: u64,
    seed: u64,
) -> Result<Vec<VqaExample>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let scene_id = id_base + i as u64;
        let family = QUESTION_FAMILIES[i % QUESTION_FAMILIES.len()];
        let cat = (rng::key(seed, &[0x9a7a, scene_id]) % world.n_categories() as u64) as usize;
        let scene = if family == QuestionFamily::Counting {
            let count = (rng::key(seed, &[0xc0, scene_id]) % 3 + 1) as u8;
            world.scene_with_count(cat, scene_id, count)
        } else {
            world.scene(cat, scene_id)
        };
        let obs = crate::world::render(world, &scene);
        let features = encoder.encode(&obs)?;
        let (question, answer) = question_for(world, grammar, &scene, family, seed);
        out.push(VqaExample {
            id: scene_id,
            features,
            question,
            answers: vec![answer],
            family,
            category: world.categories[cat].noun.clone(),
        });
    }
    Ok(out)
}

fn exemplar_block(ex: &VqaExample, k: usize, sighted: bool) -> Vec<Segment> {
    let mut segs = Vec::with_capacity(3);
    if sighted {
        segs.push(Segment::Prompt {
            example_ref: ex.id,
            k,
            feature_hash: tensor_hash(&ex.features),
        });
    }
    segs.push(Segment::Text {
        text: format!(". q : {} a : {}", ex.question, ex.answers[0]),
    });
    segs.push(Segment::Eos);
    segs
}

fn target_block(ex: &VqaExample, k: usize, sighted: bool) -> Vec<Segment> {
    let mut segs = Vec::with_capacity(2);
    if sighted {
        segs.push(Segment::Prompt {
            example_ref: ex.id,
            k,
            feature_hash: tensor_hash(&ex.features),
        });
    }
    segs.push(Segment::Text {
        text: format!(". q : {} a :", ex.question),
    });
    segs
}

/// Take the first word of the generation, truncated to the character
/// length of the longest ground-truth answer.
pub fn extract_answer(generated: &str, answers: &[String]) -> String {
    let first = generated.split_whitespace().next().unwrap_or("");
    let max_len = answers.iter().map(|a| a.len()).max().unwrap_or(0);
    let mut word = first.to_string();
    if max_len > 0 && word.len() > max_len {
        word.truncate(max_len);
    }
    word
}

fn run_vqa_inner(
    split: &[VqaExample],
    pool_examples: &[VqaExample],
    triple: &Triple<'_>,
    n_shots: usize,
    seed: u64,
    threads: usize,
    sighted: bool,
) -> Result<Vec<GenerationRecord>> {
    if pool_examples.len() < n_shots {
        return Err(Error::Config(format!(
            "exemplar pool of {} is smaller than n_shots {}",
            pool_examples.len(),
            n_shots
        )));
    }
    let task = if sighted { "vqa" } else { "blind-vqa" };
    let decode = DecodeSettings {
        mode: DecodeMode::Greedy,
        max_len: 4,
    };
    let tp = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records = tp.install(|| {
        split
            .par_iter()
            .map(|ex| {
                // Seeded exemplar sampling without replacement, per example.
                let mut r = rng::keyed_rng(seed, &[0xe8e, ex.id]);
                let mut chosen: Vec<usize> = Vec::new();
                let mut avail: Vec<usize> = (0..pool_examples.len()).collect();
                for _ in 0..n_shots {
                    let pick = r.gen_range(0..avail.len());
                    chosen.push(avail.swap_remove(pick));
                }
                let mut segments = Vec::new();
                for &ci in &chosen {
                    segments.extend(exemplar_block(
                        &pool_examples[ci],
                        triple.projection.k,
                        sighted,
                    ));
                }
                segments.extend(target_block(ex, triple.projection.k, sighted));
                let transcript = Transcript {
                    segments,
                    decode,
                    seed: rng::key(seed, &[0x9e4, ex.id]),
                };
                let resolve = |id: u64| -> Result<Tensor> {
                    if id == ex.id {
                        return Ok(ex.features.clone());
                    }
                    pool_examples
                        .iter()
                        .find(|p| p.id == id)
                        .map(|p| p.features.clone())
                        .ok_or_else(|| Error::Lookup(format!("no features for example {id}")))
                };
                let result = assemble_rows(triple, &transcript.segments, &resolve).and_then(
                    |rows| {
                        generate(
                            triple.lm,
                            Some(&rows),
                            &[],
                            transcript.decode.mode,
                            transcript.decode.max_len,
                            transcript.seed,
                        )
                    },
                );
                match result {
                    Ok(ids) => {
                        let text = triple.vocab.detokenize(&ids);
                        GenerationRecord {
                            id: ex.id,
                            task: task.into(),
                            n_shots,
                            output: extract_answer(&text, &ex.answers),
                            gold: ex.answers.join("|"),
                            transcript_hash: transcript.hash(),
                            error: None,
                            transcript,
                        }
                    }
                    Err(e) => GenerationRecord {
                        id: ex.id,
                        task: task.into(),
                        n_shots,
                        output: String::new(),
                        gold: ex.answers.join("|"),
                        transcript_hash: transcript.hash(),
                        error: Some(e.to_string()),
                        transcript,
                    },
                }
            })
            .collect()
    });
    Ok(records)
}

/// n-shot VQA with image prompts.
pub fn run_vqa(
    split: &[VqaExample],
    pool_examples: &[VqaExample],
    triple: &Triple<'_>,
    n_shots: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<GenerationRecord>> {
    run_vqa_inner(split, pool_examples, triple, n_shots, seed, threads, true)
}

/// Identical protocol with every image prompt omitted.
pub fn run_blind(
    split: &[VqaExample],
    pool_examples: &[VqaExample],
    triple: &Triple<'_>,
    n_shots: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<GenerationRecord>> {
    run_vqa_inner(split, pool_examples, triple, n_shots, seed, threads, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_extraction_truncates_to_longest_gold() {
        assert_eq!(extract_answer("dogged pursuit", &["dog".into()]), "dog");
        assert_eq!(extract_answer("yes", &["yes".into(), "no".into()]), "yes");
        assert_eq!(extract_answer("", &["dog".into()]), "");
    }
}
