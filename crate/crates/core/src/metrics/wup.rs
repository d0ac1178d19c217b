//! Wu-Palmer similarity over the world taxonomy.

use crate::error::Result;
use crate::world::Taxonomy;

/// 2·depth(LCA) / (depth(a) + depth(b)), with the root at depth 1.
pub fn wup(tax: &Taxonomy, a: usize, b: usize) -> f64 {
    let lca = tax.lca(a, b);
    2.0 * tax.depth(lca) as f64 / (tax.depth(a) + tax.depth(b)) as f64
}

/// Name-based lookup variant; unknown names are lookup errors.
pub fn wup_names(tax: &Taxonomy, a: &str, b: &str) -> Result<f64> {
    let ia = tax.index_of(a)?;
    let ib = tax.index_of(b)?;
    Ok(wup(tax, ia, ib))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_taxonomy() -> Taxonomy {
        Taxonomy::from_tsv_str("animal\tentity\ndog\tanimal\ncat\tanimal\n").unwrap()
    }

    #[test]
    fn identity_is_one() {
        let t = hand_taxonomy();
        assert_eq!(wup_names(&t, "dog", "dog").unwrap(), 1.0);
    }

    #[test]
    fn hand_case_two_thirds() {
        // root(1) -> animal(2) -> {dog, cat}(3): 2*2/(3+3) = 2/3
        let t = hand_taxonomy();
        let v = wup_names(&t, "dog", "cat").unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric() {
        let t = hand_taxonomy();
        assert_eq!(
            wup_names(&t, "dog", "cat").unwrap(),
            wup_names(&t, "cat", "dog").unwrap()
        );
    }

    #[test]
    fn unknown_node_is_lookup_error() {
        let t = hand_taxonomy();
        assert!(wup_names(&t, "dog", "unicorn").is_err());
    }
}
