//! Trading coverage for accuracy: discard predictions whose density at the
//! predicted point is low and watch the retained error shrink.
//!
//!     cargo run --release --example likelihood_filter [epochs]

use cmdn::corpus::GeneratorSpec;
use cmdn::eval::{
    default_bounds, export_histogram, likelihood_sweep, predict_corpus, BootstrapConfig, Transform,
};
use cmdn::geo::GeoPoint;
use cmdn::model::{ModelConfig, ModelKind};
use cmdn::text::{percentile_length, tokenize, Vocab};
use cmdn::train::{train, Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(15), |a| a.parse())?;
    let spec = GeneratorSpec::desk_default();
    let records = spec.generate(8000, spec.seed);
    let (train_records, rest) = records.split_at(6000);
    let (dev_records, test_records) = rest.split_at(1000);
    let tokens: Vec<Vec<String>> = train_records.iter().map(|r| tokenize(&r.text)).collect();
    let vocab = Vocab::build(&tokens, 1)?;
    let max_len = percentile_length(tokens.iter().map(Vec::len), 0.95).max(5);
    let config = ModelConfig {
        max_len,
        ..ModelConfig::default()
    };
    let settings = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train(
        ModelKind::Cmdn,
        &config,
        vocab.len(),
        &Dataset::from_records(train_records, &vocab, max_len),
        &Dataset::from_records(dev_records, &vocab, max_len),
        &settings,
    )?;

    let test_set = Dataset::from_records(test_records, &vocab, max_len);
    let truths: Vec<GeoPoint> = test_records
        .iter()
        .map(|r| r.point())
        .collect::<Result<_, _>>()?;
    let results = predict_corpus(&outcome.model, &test_set.tweets, &truths)?;

    let bounds = default_bounds(&results, 10)?;
    println!(
        "{:>10} {:>9} {:>10} {:>22}",
        "bound", "retained", "median km", "95% CI"
    );
    for row in likelihood_sweep(&results, &bounds, &BootstrapConfig::default())? {
        match (row.median_km, row.median_ci) {
            (Some(m), Some((lo, hi))) => println!(
                "{:>10.4} {:>9} {:>10.1} {:>10.1} - {:<10.1}",
                row.bound, row.retained, m, lo, hi
            ),
            _ => println!("{:>10.4} {:>9}", row.bound, row.retained),
        }
    }

    let h = export_histogram(&results, 12, Transform::Log10, None)?;
    println!("\nlog10 error histogram");
    for (center, count) in h.centers().iter().zip(&h.counts) {
        println!("{:>8.1} km {}", 10f64.powf(*center), "#".repeat(count / 4));
    }
    Ok(())
}
