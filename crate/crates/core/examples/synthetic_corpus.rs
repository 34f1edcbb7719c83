//! The seeded tweet generator: ambiguous place words, context words that
//! resolve them, and the exact conditional density of each tweet.
//!
//!     cargo run --example synthetic_corpus

use std::collections::BTreeMap;

use cmdn::corpus::GeneratorSpec;
use cmdn::mixture::mode_approx;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GeneratorSpec::desk_default();
    println!(
        "{} place words ({} bimodal), {} fillers",
        spec.places.len(),
        spec.places.iter().filter(|p| p.gmm.k() == 2).count(),
        spec.fillers.len()
    );
    let records = spec.generate(2000, spec.seed);
    let mut classes = BTreeMap::new();
    for r in &records {
        *classes
            .entry(format!("{:?}", spec.classify(&r.text)))
            .or_insert(0) += 1;
    }
    println!("tweet classes: {classes:?}");

    for text in ["w001 twin0 w002", "w001 twin0 twin0a w002", "w003 w004"] {
        let g = spec.conditional(text);
        let (mode, density) = mode_approx(&g);
        println!(
            "{text:>24}: {} components, mode ({:.2}, {:.2}) density {density:.3}",
            g.k(),
            mode[0],
            mode[1]
        );
    }
    println!("first record: {}", serde_json::to_string(&records[0])?);
    Ok(())
}
