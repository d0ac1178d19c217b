//! Ingestion of externally produced artifacts (e.g. feature dumps from real
//! pretrained models) into a validated analysis bundle.

use anyhow::{bail, Context, Result};
use limber_core::io::Container;
use limber_core::metrics::{load_lexicon_tsv, LexiconEntry};
use limber_core::tensor::Tensor;
use limber_core::world::{DatasetExample, Taxonomy};
use std::path::Path;

/// A validated bundle: features aligned row-by-row with captions, plus the
/// lexicon and taxonomy needed for the text-side analyses.
pub struct AnalysisBundle {
    pub features: Tensor,
    pub ids: Vec<u64>,
    pub examples: Vec<DatasetExample>,
    pub lexicon: Vec<LexiconEntry>,
    pub taxonomy: Taxonomy,
}

/// Load and validate (features container, captions JSONL, lexicon TSV,
/// taxonomy TSV). Row counts must agree and the feature payload must be
/// well-formed.
pub fn ingest_external(
    features_path: &Path,
    captions_path: &Path,
    lexicon_path: &Path,
    taxonomy_path: &Path,
) -> Result<AnalysisBundle> {
    let container = Container::load(features_path)
        .with_context(|| format!("loading features {}", features_path.display()))?;
    let features = container.get("features")?.clone();
    let ids_tensor = container.get("ids")?;
    if ids_tensor.numel() != features.rows() {
        bail!(
            "ids tensor has {} entries but features has {} rows",
            ids_tensor.numel(),
            features.rows()
        );
    }
    let ids: Vec<u64> = ids_tensor.data().iter().map(|&v| v as u64).collect();
    let examples: Vec<DatasetExample> = limber_core::io::read_jsonl(captions_path)
        .with_context(|| format!("loading captions {}", captions_path.display()))?;
    if examples.len() != features.rows() {
        bail!(
            "row-count mismatch: {} captions vs {} feature rows",
            examples.len(),
            features.rows()
        );
    }
    let lexicon = load_lexicon_tsv(lexicon_path)
        .with_context(|| format!("loading lexicon {}", lexicon_path.display()))?;
    let taxonomy = Taxonomy::load_tsv(taxonomy_path)
        .with_context(|| format!("loading taxonomy {}", taxonomy_path.display()))?;
    for e in &lexicon {
        if let Some(node) = &e.node {
            taxonomy
                .index_of(node)
                .with_context(|| format!("lexicon word {} maps to unknown node {node}", e.word))?;
        }
    }
    Ok(AnalysisBundle {
        features,
        ids,
        examples,
        lexicon,
        taxonomy,
    })
}

/// Write a feature dump in the shared container layout: "features" [N×d]
/// plus "ids" [N].
pub fn write_feature_dump(path: &Path, features: &Tensor, ids: &[u64]) -> Result<()> {
    let mut c = Container::new();
    c.insert("features", features.clone());
    c.insert(
        "ids",
        Tensor::from_vec(&[ids.len()], ids.iter().map(|&v| v as f32).collect())?,
    );
    c.save(path)?;
    Ok(())
}
