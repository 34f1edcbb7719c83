//! The file-based workflow behind the `cmdn` binary: generate corpora,
//! train, evaluate and predict, all inside a temporary directory.
//!
//!     cargo run --release --example pipeline

use cmdn::cli::{cmd_eval, cmd_gen_data, cmd_predict, cmd_train, EvalOptions, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config_path = dir.path().join("run.cfg");
    std::fs::write(
        &config_path,
        "train_size = 3000\ndev_size = 500\ntest_size = 500\nmodel = cmdn\nepochs = 8\nseed = 11\n",
    )?;
    let config = RunConfig::load(&config_path)?;
    println!("config hash {}", config.hash());

    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    cmd_gen_data(&config, &data)?;
    let report = cmd_train(&config, &data, &run)?;
    println!(
        "trained for {} epochs, kept epoch {}",
        report.epochs_run, report.best_epoch
    );
    let summary = cmd_eval(
        &run,
        &data.join("test.jsonl"),
        &eval,
        EvalOptions {
            sweep: true,
            hist: true,
        },
    )?;
    println!("{}", summary.to_json());

    for line in cmd_predict(&run, &["twin3 w010 w011".into(), String::new()], true)? {
        println!("{}", &line[..line.len().min(160)]);
    }
    for entry in std::fs::read_dir(&eval)? {
        let entry = entry?;
        println!(
            "{:>8} bytes  {}",
            entry.metadata()?.len(),
            entry.file_name().to_string_lossy()
        );
    }
    Ok(())
}
