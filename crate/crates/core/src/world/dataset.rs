//! Dataset generation and the JSONL interchange format.

use super::{generate_caption, render, CaptionGrammar, Role, World};
use crate::error::{Error, Result};
use crate::io::Container;
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// One dataset row. `observation` is inline by default; external dumps may
/// reference a row of a "features" tensor in a container file instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetExample {
    pub scene_id: u64,
    pub category: String,
    pub caption: String,
    pub roles: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub obs_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub row: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct SplitSet {
    pub train: Vec<DatasetExample>,
    pub val: Vec<DatasetExample>,
    pub test: Vec<DatasetExample>,
}

fn balanced_categories(world: &World, n: usize, seed: u64, tag: u64) -> Vec<usize> {
    let k = world.n_categories();
    let mut cats: Vec<usize> = (0..n).map(|i| i % k).collect();
    cats.shuffle(&mut rng::keyed_rng(seed, &[0xdeaf, tag]));
    cats
}

fn build_split(
    world: &World,
    grammar: &CaptionGrammar,
    n: usize,
    id_base: u64,
    seed: u64,
    tag: u64,
) -> Vec<DatasetExample> {
    let cats = balanced_categories(world, n, seed, tag);
    cats.into_iter()
        .enumerate()
        .map(|(i, cat)| {
            let scene_id = id_base + i as u64;
            let scene = world.scene(cat, scene_id);
            let ex = generate_caption(world, grammar, &scene);
            let obs = render(world, &scene);
            DatasetExample {
                scene_id,
                category: world.categories[cat].noun.clone(),
                caption: ex.caption,
                roles: ex
                    .roles
                    .iter()
                    .map(|(w, r)| (w.clone(), r.as_str().to_string()))
                    .collect(),
                observation: Some(obs.flat()),
                obs_file: None,
                row: None,
            }
        })
        .collect()
}

/// Generate disjoint train/val/test splits with every category present in
/// every split and per-category counts within ±20% of uniform.
pub fn make_dataset(
    world: &World,
    grammar: &CaptionGrammar,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<SplitSet> {
    let k = world.n_categories();
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < k {
            return Err(Error::Config(format!(
                "{name} split of {n} cannot cover {k} categories"
            )));
        }
    }
    let seed = world.seed;
    let train = build_split(world, grammar, n_train, 0, seed, 0);
    let val = build_split(world, grammar, n_val, n_train as u64, seed, 1);
    let test = build_split(world, grammar, n_test, (n_train + n_val) as u64, seed, 2);
    Ok(SplitSet { train, val, test })
}

/// Resolve `obs_file`+`row` references into inline observations.
pub fn resolve_observations(examples: &mut [DatasetExample], base_dir: &Path) -> Result<()> {
    let mut cache: BTreeMap<String, Container> = BTreeMap::new();
    for ex in examples.iter_mut() {
        if ex.observation.is_some() {
            continue;
        }
        let (file, row) = match (&ex.obs_file, ex.row) {
            (Some(f), Some(r)) => (f.clone(), r),
            _ => {
                return Err(Error::Integrity(format!(
                    "example {} has neither observation nor obs_file+row",
                    ex.scene_id
                )))
            }
        };
        if !cache.contains_key(&file) {
            let c = Container::load(base_dir.join(&file))?;
            cache.insert(file.clone(), c);
        }
        let c = &cache[&file];
        let feats = c.get("features")?;
        if row >= feats.rows() {
            return Err(Error::Integrity(format!(
                "row {row} out of range for {file} with {} rows",
                feats.rows()
            )));
        }
        ex.observation = Some(feats.row(row).to_vec());
    }
    Ok(())
}

impl DatasetExample {
    pub fn role_of(&self, word: &str) -> Option<Role> {
        match self.roles.get(word).map(|s| s.as_str()) {
            Some("noun") => Some(Role::Noun),
            Some("modifier") => Some(Role::Modifier),
            Some("relation") => Some(Role::Relation),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};

    fn small_world() -> World {
        build_world(
            21,
            &WorldConfig {
                n_categories: 10,
                ..WorldConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_disjoint_scene_ids() {
        let world = small_world();
        let grammar = CaptionGrammar::new(&world, 0);
        let ds = make_dataset(&world, &grammar, 40, 20, 10).unwrap();
        assert_eq!(ds.train.len(), 40);
        assert_eq!(ds.val.len(), 20);
        assert_eq!(ds.test.len(), 10);
        let mut ids: Vec<u64> = ds
            .train
            .iter()
            .chain(&ds.val)
            .chain(&ds.test)
            .map(|e| e.scene_id)
            .collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n, "scene ids collide across splits");
    }

    #[test]
    fn every_category_in_every_split_within_20pct_of_uniform() {
        let world = small_world();
        let grammar = CaptionGrammar::new(&world, 0);
        let ds = make_dataset(&world, &grammar, 200, 50, 50).unwrap();
        for split in [&ds.train, &ds.val, &ds.test] {
            let mut counts = BTreeMap::new();
            for e in split.iter() {
                *counts.entry(e.category.clone()).or_insert(0usize) += 1;
            }
            assert_eq!(counts.len(), world.n_categories());
            let uniform = split.len() as f64 / world.n_categories() as f64;
            for (_, c) in counts {
                assert!((c as f64) >= uniform * 0.8 && (c as f64) <= uniform * 1.2);
            }
        }
    }

    #[test]
    fn undersized_split_is_config_error() {
        let world = small_world();
        let grammar = CaptionGrammar::new(&world, 0);
        assert!(make_dataset(&world, &grammar, 5, 20, 20).is_err());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let world = small_world();
        let world2 = build_world(
            21,
            &WorldConfig {
                n_categories: 10,
                ..WorldConfig::default()
            },
        )
        .unwrap();
        let g1 = CaptionGrammar::new(&world, 9);
        let g2 = CaptionGrammar::new(&world2, 9);
        let a = make_dataset(&world, &g1, 30, 10, 10).unwrap();
        let b = make_dataset(&world2, &g2, 30, 10, 10).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.caption, y.caption);
            assert_eq!(x.observation, y.observation);
        }
    }
}
