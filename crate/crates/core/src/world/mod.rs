//! A controlled two-modality world: categories in a taxonomy with binary
//! property vectors, rendered observations, and grammar-generated captions.
//!
//! Observations are built so that property and nuisance factors carry large
//! variance while exact category identity carries small variance (the
//! `identity_ratio` knob). Encoders trained with different supervision pick
//! up different parts of that spectrum, which is what the downstream
//! analyses measure.

mod corpus;
mod dataset;
mod grammar;
mod render;

pub use corpus::{
    build_caption_corpus, build_pretrain_corpus, question_for, QuestionFamily, COUNT_WORDS,
    QUESTION_FAMILIES,
};
pub use dataset::{make_dataset, resolve_observations, DatasetExample, SplitSet};
pub use grammar::{
    context_sentence, generate_caption, CaptionExample, CaptionGrammar, Role, SceneWords,
    BRIGHTNESS_WORDS,
};
pub use render::{render, Observation};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const NOUNS: [&str; 60] = [
    "wolf", "fox", "coyote", "jackal", "hound", "bear", "badger", "otter", "weasel", "ferret",
    "lion", "tiger", "leopard", "lynx", "panther", "deer", "elk", "moose", "antelope", "gazelle",
    "bison", "ox", "yak", "goat", "sheep", "horse", "zebra", "donkey", "camel", "llama",
    "rabbit", "hare", "squirrel", "beaver", "marmot", "mouse", "rat", "hamster", "vole", "shrew",
    "whale", "dolphin", "porpoise", "seal", "walrus", "eagle", "hawk", "falcon", "owl", "raven",
    "heron", "crane", "stork", "swan", "goose", "monkey", "ape", "lemur", "sloth", "armadillo",
];

const ADJECTIVES: [&str; 16] = [
    "furry", "sleek", "scaly", "feathered", "spotted", "striped", "horned", "tusked",
    "swift", "sluggish", "fierce", "gentle", "aquatic", "burrowing", "nocturnal", "herding",
];

const VERBS: [&str; 16] = [
    "prowling", "gliding", "slithering", "soaring", "lounging", "pacing", "charging", "digging",
    "sprinting", "dozing", "hunting", "grazing", "swimming", "tunneling", "lurking", "marching",
];

const HABITATS: [&str; 16] = [
    "forest", "river", "swamp", "cliffs", "savanna", "thicket", "highlands", "tundra",
    "plains", "marsh", "jungle", "meadow", "ocean", "burrow", "cave", "steppe",
];

const LEVEL_NAMES: [&str; 4] = ["clade", "family", "tribe", "genus"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_categories: usize,
    pub n_properties: usize,
    pub taxonomy_depth: usize,
    /// Patch grid side; observations are `grid² × d_patch`.
    pub grid: usize,
    pub d_patch: usize,
    /// Latent signal dimensionality behind every patch.
    pub d_signal: usize,
    pub property_magnitude: f64,
    /// Identity-to-property magnitude ratio.
    pub identity_ratio: f64,
    pub nuisance_magnitude: f64,
    pub noise_std: f64,
    /// Per-edge property flip probability in the taxonomy.
    pub flip_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_categories: 50,
            n_properties: 16,
            taxonomy_depth: 4,
            grid: 3,
            d_patch: 8,
            d_signal: 24,
            property_magnitude: 1.0,
            identity_ratio: 0.25,
            nuisance_magnitude: 0.8,
            noise_std: 0.08,
            flip_prob: 0.15,
        }
    }
}

/// Number of continuous nuisance factors per scene (brightness + three
/// word-choice factors).
pub const N_NUISANCE: usize = 4;

#[derive(Debug, Clone)]
pub struct TaxNode {
    pub name: String,
    pub parent: Option<usize>,
    /// Root has depth 1.
    pub depth: usize,
}

/// Rooted category tree. Node 0 is always the root, named "entity".
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    nodes: Vec<TaxNode>,
    by_name: BTreeMap<String, usize>,
}

impl Taxonomy {
    fn add(&mut self, name: &str, parent: Option<usize>) -> usize {
        let depth = parent.map(|p| self.nodes[p].depth + 1).unwrap_or(1);
        let idx = self.nodes.len();
        self.nodes.push(TaxNode {
            name: name.to_string(),
            parent,
            depth,
        });
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: usize) -> &TaxNode {
        &self.nodes[idx]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown taxonomy node {name}")))
    }

    pub fn depth(&self, idx: usize) -> usize {
        self.nodes[idx].depth
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        self.nodes[idx].parent
    }

    /// Path of node indices from `idx` up to the root (inclusive).
    pub fn path_to_root(&self, idx: usize) -> Vec<usize> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    /// Lowest common ancestor.
    pub fn lca(&self, a: usize, b: usize) -> usize {
        let pa: std::collections::HashSet<usize> = self.path_to_root(a).into_iter().collect();
        let mut cur = b;
        loop {
            if pa.contains(&cur) {
                return cur;
            }
            cur = self.nodes[cur].parent.expect("disconnected taxonomy");
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    /// Write TSV lines "child<TAB>parent"; the root appears as a parent only.
    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for node in &self.nodes {
            if let Some(p) = node.parent {
                out.push_str(&format!("{}\t{}\n", node.name, self.nodes[p].name));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load from TSV lines "child<TAB>parent" with single root "entity".
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tsv_str(&text)
    }

    pub fn from_tsv_str(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (child, parent) = line
                .split_once('\t')
                .ok_or_else(|| Error::Integrity(format!("bad taxonomy line: {line}")))?;
            edges.push((child.trim().to_string(), parent.trim().to_string()));
        }
        let mut tax = Taxonomy::default();
        tax.add("entity", None);
        // Insert in passes so parents exist before children.
        let mut remaining = edges;
        while !remaining.is_empty() {
            let before = remaining.len();
            remaining.retain(|(child, parent)| {
                if let Some(&p) = tax.by_name.get(parent) {
                    if !tax.by_name.contains_key(child) {
                        tax.add(child, Some(p));
                    }
                    false
                } else {
                    true
                }
            });
            if remaining.len() == before {
                return Err(Error::Integrity(format!(
                    "taxonomy has unreachable nodes, e.g. {:?}",
                    remaining[0]
                )));
            }
        }
        Ok(tax)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategorySpec {
    pub id: usize,
    /// Leaf taxonomy node index.
    pub node: usize,
    pub noun: String,
    pub properties: Vec<bool>,
    /// Modifier words licensed by active property bits.
    pub modifiers: Vec<String>,
    /// Relation verbs licensed by active property bits.
    pub verbs: Vec<String>,
    /// Habitat words licensed by active property bits.
    pub habitats: Vec<String>,
}

/// A concrete sample of the world: one category rendered with nuisance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Scene {
    pub category: usize,
    pub instance_seed: u64,
    /// Rendered instance count (VQA counting scenes use 2 or 3).
    pub count: u8,
    pub nuisance: [f32; N_NUISANCE],
}

#[derive(Debug, Clone)]
pub(crate) struct RenderBasis {
    pub prop_dirs: Tensor,     // [B × d_signal]
    pub ident_dirs: Tensor,    // [n_categories × d_signal]
    pub nuis_dirs: Tensor,     // [N_NUISANCE × d_signal]
    pub patch_maps: Vec<Tensor>, // per patch: [d_signal × d_patch]
}

#[derive(Debug, Clone)]
pub struct World {
    pub cfg: WorldConfig,
    pub seed: u64,
    pub taxonomy: Taxonomy,
    pub categories: Vec<CategorySpec>,
    pub(crate) basis: RenderBasis,
}

fn word_table(base: &[&'static str], n: usize, synth_prefix: &str) -> Vec<String> {
    (0..n)
        .map(|i| {
            if i < base.len() {
                base[i].to_string()
            } else {
                format!("{synth_prefix}{i}")
            }
        })
        .collect()
}

/// Build the world: taxonomy, per-category property vectors correlated
/// along tree edges, licensed word sets, and the rendering basis.
pub fn build_world(seed: u64, cfg: &WorldConfig) -> Result<World> {
    let n = cfg.n_categories;
    let b = cfg.n_properties;
    if n < 2 {
        return Err(Error::Config("need at least 2 categories".into()));
    }
    if cfg.taxonomy_depth < 2 {
        return Err(Error::Config("taxonomy depth must be at least 2".into()));
    }
    if b < 4 {
        return Err(Error::Config("need at least 4 properties".into()));
    }
    if cfg.grid == 0 || cfg.d_patch == 0 || cfg.d_signal < b / 2 {
        return Err(Error::Config("degenerate observation geometry".into()));
    }

    let mut r = rng::keyed_rng(seed, &[0x701d]);
    let mut nouns = word_table(&NOUNS, n.max(NOUNS.len()), "species");
    nouns.shuffle(&mut r);
    nouns.truncate(n);

    // Taxonomy: chunk leaves bottom-up with a branching factor sized so the
    // tree reaches the requested depth.
    let levels = cfg.taxonomy_depth - 2; // internal levels between root and leaves
    let mut tax = Taxonomy::default();
    let root = tax.add("entity", None);
    // groups[level] = list of children index lists
    let branching = ((n as f64).powf(1.0 / (levels.max(1) as f64 + 1.0)).ceil() as usize).max(2);
    // Build top-down: split leaf index ranges recursively.
    fn split_ranges(count: usize, parts: usize) -> Vec<usize> {
        let base = count / parts;
        let extra = count % parts;
        (0..parts)
            .map(|i| base + usize::from(i < extra))
            .filter(|&c| c > 0)
            .collect()
    }
    struct Level {
        parent: usize,
        count: usize,
    }
    let mut frontier = vec![Level { parent: root, count: n }];
    for level in 0..levels {
        let mut next = Vec::new();
        let mut counter = 0usize;
        for item in frontier {
            let parts = branching.min(item.count).max(1);
            for c in split_ranges(item.count, parts) {
                let name = format!(
                    "{}{}",
                    LEVEL_NAMES.get(level).copied().unwrap_or("level"),
                    counter
                );
                counter += 1;
                let idx = tax.add(&name, Some(item.parent));
                next.push(Level { parent: idx, count: c });
            }
        }
        frontier = next;
    }
    // Attach leaves.
    let mut leaf_nodes = Vec::with_capacity(n);
    let mut noun_iter = nouns.iter();
    for item in &frontier {
        for _ in 0..item.count {
            let noun = noun_iter.next().expect("noun supply");
            leaf_nodes.push(tax.add(noun, Some(item.parent)));
        }
    }

    // Property vectors: root Bernoulli(0.5), then flips along each edge.
    let mut vectors: Vec<Option<Vec<bool>>> = vec![None; tax.len()];
    let mut pr = rng::keyed_rng(seed, &[0x9209]);
    vectors[root] = Some((0..b).map(|_| pr.gen::<f64>() < 0.5).collect());
    for idx in 1..tax.len() {
        let parent = tax.parent(idx).unwrap();
        let pv = vectors[parent].clone().expect("parent before child");
        let mut v = pv;
        for bit in v.iter_mut() {
            if pr.gen::<f64>() < cfg.flip_prob {
                *bit = !*bit;
            }
        }
        vectors[idx] = Some(v);
    }

    let adjectives = word_table(&ADJECTIVES, b, "trait");
    let verbs = word_table(&VERBS, b, "roaming");
    let habitats = word_table(&HABITATS, b, "region");

    let mut categories = Vec::with_capacity(n);
    for (id, &node) in leaf_nodes.iter().enumerate() {
        let mut props = vectors[node].clone().unwrap();
        // Guarantee at least two active bits so word sets are never empty.
        let mut active: Vec<usize> = (0..b).filter(|&i| props[i]).collect();
        let mut fix = rng::keyed_rng(seed, &[0xf1f, id as u64]);
        while active.len() < 2 {
            let pick = fix.gen_range(0..b);
            if !props[pick] {
                props[pick] = true;
                active.push(pick);
            }
        }
        let modifiers = active.iter().map(|&i| adjectives[i].clone()).collect();
        let verbs_c = active.iter().map(|&i| verbs[i].clone()).collect();
        let habitats_c = active.iter().map(|&i| habitats[i].clone()).collect();
        categories.push(CategorySpec {
            id,
            node,
            noun: tax.node(node).name.clone(),
            properties: props,
            modifiers,
            verbs: verbs_c,
            habitats: habitats_c,
        });
    }

    let basis = render::build_basis(seed, cfg, n)?;
    Ok(World {
        cfg: cfg.clone(),
        seed,
        taxonomy: tax,
        categories,
        basis,
    })
}

impl World {
    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category(&self, id: usize) -> &CategorySpec {
        &self.categories[id]
    }

    pub fn category_by_noun(&self, noun: &str) -> Option<&CategorySpec> {
        self.categories.iter().find(|c| c.noun == noun)
    }

    /// Flat observation dimensionality (`grid² × d_patch`).
    pub fn d_obs(&self) -> usize {
        self.cfg.grid * self.cfg.grid * self.cfg.d_patch
    }

    pub fn n_patches(&self) -> usize {
        self.cfg.grid * self.cfg.grid
    }

    /// Deterministic scene construction; nuisance is derived from
    /// (world seed, instance seed).
    pub fn scene(&self, category: usize, instance_seed: u64) -> Scene {
        self.scene_with_count(category, instance_seed, 1)
    }

    pub fn scene_with_count(&self, category: usize, instance_seed: u64, count: u8) -> Scene {
        assert!(category < self.categories.len(), "invalid category id");
        let mut r = rng::keyed_rng(self.seed, &[0x5ce7e, instance_seed]);
        let mut nuisance = [0.0f32; N_NUISANCE];
        for v in nuisance.iter_mut() {
            *v = r.gen_range(-1.0f32..1.0);
        }
        Scene {
            category,
            instance_seed,
            count,
            nuisance,
        }
    }

    /// Property names (for CSV headers and VQA questions).
    pub fn property_names(&self) -> Vec<String> {
        word_table(&ADJECTIVES, self.cfg.n_properties, "trait")
    }

    /// Index of the property bit whose active/inactive split is closest to
    /// even across categories.
    pub fn balanced_property_bit(&self) -> usize {
        let n = self.categories.len() as f64;
        (0..self.cfg.n_properties)
            .min_by_key(|&b| {
                let active = self.categories.iter().filter(|c| c.properties[b]).count() as f64;
                ((active / n - 0.5).abs() * 1e6) as i64
            })
            .unwrap_or(0)
    }

    /// Jaccard overlap of two categories' property vectors.
    pub fn property_jaccard(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (&self.categories[a].properties, &self.categories[b].properties);
        let inter = pa.iter().zip(pb).filter(|(&x, &y)| x && y).count();
        let union = pa.iter().zip(pb).filter(|(&x, &y)| x || y).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Every word the world can emit (captions, questions, answers).
    pub fn lexicon_words(&self) -> Vec<String> {
        let mut words: Vec<String> = vec![
            "a", "picture", "of", "in", "the", "this", "was", "seen", ".", "q", ":", "?",
            "what", "animal", "is", "it", "how", "does", "look", "where", "many", "animals",
            "are", "there", "yes", "no", "one", "two", "three",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        words.extend(BRIGHTNESS_WORDS.iter().map(|s| s.to_string()));
        for c in &self.categories {
            words.push(c.noun.clone());
            words.extend(c.modifiers.iter().cloned());
            words.extend(c.verbs.iter().cloned());
            words.extend(c.habitats.iter().cloned());
        }
        words.extend(self.property_names());
        words.sort();
        words.dedup();
        words
    }

    /// Write the property matrix as CSV: header = property names, one row
    /// per category.
    pub fn save_properties_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("category");
        for name in self.property_names() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for c in &self.categories {
            out.push_str(&c.noun);
            for &p in &c.properties {
                out.push(',');
                out.push(if p { '1' } else { '0' });
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Write the role lexicon as TSV "word<TAB>role<TAB>taxonomy_node".
    pub fn save_lexicon_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut lines: Vec<String> = Vec::new();
        for c in &self.categories {
            lines.push(format!("{}\tnoun\t{}", c.noun, c.noun));
            for m in &c.modifiers {
                lines.push(format!("{m}\tmodifier\t-"));
            }
            for v in &c.verbs {
                lines.push(format!("{v}\trelation\t-"));
            }
            for h in &c.habitats {
                lines.push(format!("{h}\trelation\t-"));
            }
        }
        for bwords in BRIGHTNESS_WORDS {
            lines.push(format!("{bwords}\tmodifier\t-"));
        }
        lines.sort();
        lines.dedup();
        std::fs::write(path, lines.join("\n") + "\n")?;
        Ok(())
    }
}
