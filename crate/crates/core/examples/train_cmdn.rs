//! Train a convolutional mixture density network on a synthetic corpus,
//! then look at what it predicts for ambiguous and disambiguated text.
//!
//!     cargo run --release --example train_cmdn [train_size] [epochs]

use cmdn::corpus::GeneratorSpec;
use cmdn::eval::{predict_corpus, summarize};
use cmdn::geo::GeoPoint;
use cmdn::model::{Checkpoint, ModelConfig, ModelKind, Prediction};
use cmdn::text::{encode, percentile_length, tokenize, Vocab};
use cmdn::train::{train, Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let train_size: usize = args.next().map_or(Ok(6000), |a| a.parse())?;
    let epochs: usize = args.next().map_or(Ok(15), |a| a.parse())?;

    let spec = GeneratorSpec::desk_default();
    let records = spec.generate(train_size + 2000, spec.seed);
    let (train_records, rest) = records.split_at(train_size);
    let (dev_records, test_records) = rest.split_at(1000);

    let tokens: Vec<Vec<String>> = train_records.iter().map(|r| tokenize(&r.text)).collect();
    let vocab = Vocab::build(&tokens, 1)?;
    let config = ModelConfig::default();
    let max_len = percentile_length(tokens.iter().map(Vec::len), 0.95).max(config.widest_window());
    let config = ModelConfig { max_len, ..config };
    println!(
        "vocabulary {} tokens, sequence length {max_len}",
        vocab.len()
    );

    let train_set = Dataset::from_records(train_records, &vocab, max_len);
    let dev_set = Dataset::from_records(dev_records, &vocab, max_len);
    let settings = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train(
        ModelKind::Cmdn,
        &config,
        vocab.len(),
        &train_set,
        &dev_set,
        &settings,
    )?;
    for e in &outcome.history {
        println!(
            "epoch {:>3}  train nll {:>7.4}  dev nll {:>7.4}  dev median {:>6.1} km",
            e.epoch, e.train_loss, e.dev_loss, e.dev_median_km
        );
    }
    println!("kept epoch {}", outcome.best_epoch);

    let test_set = Dataset::from_records(test_records, &vocab, max_len);
    let truths: Vec<GeoPoint> = test_records
        .iter()
        .map(|r| r.point())
        .collect::<Result<_, _>>()?;
    let results = predict_corpus(&outcome.model, &test_set.tweets, &truths)?;
    let s = summarize(&results)?;
    println!(
        "test mean {:.1} km, median {:.1} km",
        s.mean_km, s.median_km
    );

    let twin = &spec.places.iter().find(|p| p.word == "twin0").unwrap().gmm;
    println!("twin0 sites: {:?}", twin.means());
    for text in ["twin0 w010 w020", "twin0 twin0a w010", "twin0 twin0b w010"] {
        let tweet = encode(&tokenize(text), &vocab, max_len);
        if let Prediction::Density(g) = &outcome.model.predict(&[tweet])?[0] {
            let (p, lik) = outcome
                .model
                .predict(&[encode(&tokenize(text), &vocab, max_len)])?[0]
                .point();
            let top = g
                .weights()
                .iter()
                .zip(g.means())
                .filter(|(w, _)| **w > 0.1)
                .map(|(w, m)| format!("{w:.2}@({:.1},{:.1})", m[0], m[1]))
                .collect::<Vec<_>>();
            println!(
                "{text:>20}: point ({:.2}, {:.2}) likelihood {:.3}; heavy components {top:?}",
                p[0],
                p[1],
                lik.unwrap()
            );
        }
    }

    let json = Checkpoint::from_model(&outcome.model, &vocab, max_len).to_json();
    let reloaded = Checkpoint::from_json(&json)?.into_model(&vocab)?;
    let again = predict_corpus(&reloaded, &test_set.tweets, &truths)?;
    println!(
        "checkpoint of {} bytes reloads to identical predictions: {}",
        json.len(),
        again == results
    );
    Ok(())
}
