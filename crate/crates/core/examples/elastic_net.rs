//! Sparse linear baseline on bag-of-words counts.
//!
//!     cargo run --release --example elastic_net

use cmdn::corpus::GeneratorSpec;
use cmdn::geo::vincenty_distance;
use cmdn::model::{BagOfWords, EnetConfig, EnetModel};
use cmdn::text::{encode, tokenize, Vocab};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GeneratorSpec::desk_default();
    let records = spec.generate(6000, spec.seed);
    let (train, test) = records.split_at(5000);
    let tokens: Vec<Vec<String>> = train.iter().map(|r| tokenize(&r.text)).collect();
    let vocab = Vocab::build(&tokens, 1)?;
    let bag = |text: &str| BagOfWords::from_encoded(&encode(&tokenize(text), &vocab, 32));
    let docs: Vec<BagOfWords> = train.iter().map(|r| bag(&r.text)).collect();
    let targets: Vec<[f64; 2]> = train.iter().map(|r| [r.lat, r.lon]).collect();

    let (model, fit) = EnetModel::fit(&docs, &targets, vocab.len(), EnetConfig::default())?;
    println!(
        "{} iterations (converged: {}), {:?} nonzero weights of {}",
        fit.iterations,
        fit.converged,
        model.nonzeros(),
        vocab.len()
    );
    let mut errors: Vec<f64> = test
        .iter()
        .map(|r| {
            let p = model.predict(&bag(&r.text));
            let p = cmdn::geo::GeoPoint::normalized(p[0], p[1]).unwrap();
            vincenty_distance(p, r.point().unwrap()).km
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    println!("test median error {:.1} km", errors[errors.len() / 2]);
    Ok(())
}
