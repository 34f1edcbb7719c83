//! Trains every model family on the same synthetic split and prints a
//! comparison table with bootstrap intervals, plus the error on tweets whose
//! only place word is ambiguous.
//!
//!     cargo run --release --example compare_models [epochs] [kinds]
//!
//! `kinds` is a comma-separated list such as `cmdn,cnn-l1,cnn-l2,mlp-l2,mean`.

use cmdn::corpus::{GeneratorSpec, TweetClass};
use cmdn::eval::{bootstrap_ci, errors, median, predict_corpus, BootstrapConfig, Statistic};
use cmdn::geo::GeoPoint;
use cmdn::model::{ModelConfig, ModelKind};
use cmdn::text::{percentile_length, tokenize, Vocab};
use cmdn::train::{train, Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(Ok(20), |a| a.parse())?;
    let kinds: Vec<ModelKind> = args
        .next()
        .unwrap_or_else(|| "cmdn,mdn,cnn-l1,cnn-l2,mlp-l2,enet,median,mean".into())
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;

    let spec = GeneratorSpec::desk_default();
    let records = spec.generate(24_000, spec.seed);
    let (train_records, rest) = records.split_at(20_000);
    let (dev_records, test_records) = rest.split_at(2000);
    let tokens: Vec<Vec<String>> = train_records.iter().map(|r| tokenize(&r.text)).collect();
    let vocab = Vocab::build(&tokens, 1)?;
    let config = ModelConfig::default();
    let max_len = percentile_length(tokens.iter().map(Vec::len), 0.95).max(config.widest_window());
    let config = ModelConfig { max_len, ..config };
    let train_set = Dataset::from_records(train_records, &vocab, max_len);
    let dev_set = Dataset::from_records(dev_records, &vocab, max_len);
    let test_set = Dataset::from_records(test_records, &vocab, max_len);
    let truths: Vec<GeoPoint> = test_records
        .iter()
        .map(|r| r.point())
        .collect::<Result<_, _>>()?;
    let ambiguous: Vec<usize> = (0..test_records.len())
        .filter(|&i| spec.classify(&test_records[i].text) == TweetClass::Ambiguous)
        .collect();

    let settings = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    println!(
        "{:<8} {:>9} {:>20} {:>9} {:>14}",
        "model", "mean km", "median km [95% CI]", "best ep", "ambiguous med"
    );
    for kind in kinds {
        let outcome = train(kind, &config, vocab.len(), &train_set, &dev_set, &settings)?;
        let results = predict_corpus(&outcome.model, &test_set.tweets, &truths)?;
        let e = errors(&results);
        let (lo, hi) = bootstrap_ci(&e, Statistic::Median, &BootstrapConfig::default())?;
        let amb: Vec<f64> = ambiguous.iter().map(|&i| e[i]).collect();
        println!(
            "{:<8} {:>9.1} {:>7.1} [{:>5.1},{:>6.1}] {:>9} {:>14.1}",
            kind.name(),
            cmdn::eval::mean(&e),
            median(&e),
            lo,
            hi,
            outcome.best_epoch,
            median(&amb)
        );
    }
    Ok(())
}
