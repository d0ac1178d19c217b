//! Text corpus for LM pretraining.
//!
//! The LM must learn (1) the caption language, (2) to condition a caption
//! on earlier context that mentions the same content, and (3) the QA
//! format. Lines are mixtures of four kinds:
//!   caption                      — marginal caption language
//!   context . caption            — content-conditioned continuation
//!   caption . caption            — verbatim copy
//!   context . q : <q> a : <a>    — question answering over the context
//!
//! At stitch time the projected image prompts stand in the context slot.

use super::grammar::{context_sentence, generate_caption, CaptionGrammar};
use super::{Scene, World};
use crate::rng;
use rand::Rng;

/// Question families asked about a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionFamily {
    Identity,
    PropertyYesNo,
    Modifier,
    Habitat,
    Counting,
}

pub const QUESTION_FAMILIES: [QuestionFamily; 5] = [
    QuestionFamily::Identity,
    QuestionFamily::PropertyYesNo,
    QuestionFamily::Modifier,
    QuestionFamily::Habitat,
    QuestionFamily::Counting,
];

pub const COUNT_WORDS: [&str; 3] = ["one", "two", "three"];

/// Question text and gold answer for a scene. The property question picks
/// its attribute from the scene's query seed.
pub fn question_for(
    world: &World,
    grammar: &CaptionGrammar,
    scene: &Scene,
    family: QuestionFamily,
    query_seed: u64,
) -> (String, String) {
    let words = grammar.scene_words(world, scene);
    match family {
        QuestionFamily::Identity => ("what animal is this ?".into(), words.noun),
        QuestionFamily::PropertyYesNo => {
            let names = world.property_names();
            let mut r = rng::keyed_rng(query_seed, &[0x9a, scene.instance_seed]);
            let bit = r.gen_range(0..names.len());
            let active = world.categories[scene.category].properties[bit];
            (
                format!("is it {} ?", names[bit]),
                if active { "yes".into() } else { "no".into() },
            )
        }
        QuestionFamily::Modifier => ("how does it look ?".into(), words.modifier),
        QuestionFamily::Habitat => ("where is it ?".into(), words.habitat),
        QuestionFamily::Counting => (
            "how many animals are there ?".into(),
            COUNT_WORDS[(scene.count.clamp(1, 3) - 1) as usize].into(),
        ),
    }
}

/// Context sentence for a counting scene (the only family whose answer is
/// not present in the ordinary caption frame).
fn counting_context(world: &World, grammar: &CaptionGrammar, scene: &Scene) -> String {
    let words = grammar.scene_words(world, scene);
    let count = COUNT_WORDS[(scene.count.clamp(1, 3) - 1) as usize];
    format!("there are {count} animals in the {}", words.habitat)
}

/// Build `n_lines` pretraining lines over held-out scene ids starting at
/// `id_base` (keep these disjoint from evaluation scenes).
pub fn build_pretrain_corpus(
    world: &World,
    grammar: &CaptionGrammar,
    n_lines: usize,
    id_base: u64,
    seed: u64,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n_lines);
    let mut r = rng::rng(rng::derive_seed(seed, "corpus-mix"));
    for i in 0..n_lines {
        let scene_id = id_base + i as u64;
        let cat = (rng::key(seed, &[0xca7, scene_id]) % world.n_categories() as u64) as usize;
        let roll: f64 = r.gen();
        let line = if roll < 0.15 {
            let scene = world.scene(cat, scene_id);
            generate_caption(world, grammar, &scene).caption
        } else if roll < 0.55 {
            let scene = world.scene(cat, scene_id);
            let ctx = context_sentence(world, grammar, &scene);
            let cap = generate_caption(world, grammar, &scene).caption;
            format!("{ctx} . {cap}")
        } else if roll < 0.75 {
            let scene = world.scene(cat, scene_id);
            let cap = generate_caption(world, grammar, &scene).caption;
            format!("{cap} . {cap}")
        } else {
            let family = QUESTION_FAMILIES[r.gen_range(0..QUESTION_FAMILIES.len())];
            let scene = if family == QuestionFamily::Counting {
                let count = r.gen_range(1..=3u8);
                world.scene_with_count(cat, scene_id, count)
            } else {
                world.scene(cat, scene_id)
            };
            let ctx = if family == QuestionFamily::Counting {
                counting_context(world, grammar, &scene)
            } else {
                context_sentence(world, grammar, &scene)
            };
            let (q, a) = question_for(world, grammar, &scene, family, seed);
            format!("{ctx} . q : {q} a : {a}")
        };
        out.push(line);
    }
    out
}

/// Pure caption lines (for perplexity-floor experiments).
pub fn build_caption_corpus(
    world: &World,
    grammar: &CaptionGrammar,
    n_lines: usize,
    id_base: u64,
    seed: u64,
) -> Vec<String> {
    (0..n_lines)
        .map(|i| {
            let scene_id = id_base + i as u64;
            let cat = (rng::key(seed, &[0xca7, scene_id]) % world.n_categories() as u64) as usize;
            let scene = world.scene(cat, scene_id);
            generate_caption(world, grammar, &scene).caption
        })
        .collect()
}
