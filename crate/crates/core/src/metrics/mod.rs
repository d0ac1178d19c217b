//! Quantitative analyses: caption metrics, lexical transfer, taxonomy
//! similarity, property analyses, representational similarity, linear
//! probes, and neighbor purity.
//!
//! All functions here are pure over their inputs; parallel callers must
//! aggregate in a deterministic order (sort by example id first).

mod contrastive;
mod lexical;
mod ngram;
mod probe;
mod properties;
mod purity;
mod rsa;
mod vqa;
mod wup;

pub use contrastive::{contrastive_score, ref_contrastive_score, DEFAULT_SCORE_SCALE};
pub use lexical::{lexical_prf, load_lexicon_tsv, top_lexicon, LexicalReport, LexiconEntry, Prf, WordPrf};
pub use ngram::{bleu, cider_d, cider_d_scores, NgramIndex, CIDER_SCALE, CIDER_SIGMA};
pub use probe::{eval_probe, train_probe, Probe, ProbeConfig, ProbeEval, ProbeLabels, ProbeTask};
pub use properties::{animal_report, property_ap, property_overlap, AnimalReport};
pub use purity::neighbor_purity;
pub use rsa::rsa;
pub use vqa::vqa_accuracy;
pub use wup::{wup, wup_names};
