//! Generates the synthetic desk dataset, trains the default desk model on it
//! and prints the final retrieval report.
//!
//! cargo run --release --example train_desk -- [out_dir] [epochs]

use std::path::PathBuf;
use std::time::Instant;

use can_reid::data::{generate_synthetic, SynthConfig};
use can_reid::train::{train, TrainConfig};

fn main() -> can_reid::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("can_desk"));
    let mut config = TrainConfig::desk();
    if let Some(e) = args.next() {
        config.total_epochs = e.parse().expect("epochs must be an integer");
    }
    let manifest = generate_synthetic(&SynthConfig::default(), out.join("data"))?;
    let start = Instant::now();
    let outcome = train(&config, &manifest, Some(&out.join("run")))?;
    let steps = outcome.log.steps.len();
    let secs = start.elapsed().as_secs_f64();
    println!("{steps} steps in {secs:.1}s ({:.3}s/step)", secs / steps.max(1) as f64);
    for e in &outcome.log.evals {
        println!("epoch {:>4}  mAP {:.4}  rank-1 {:.4}", e.epoch, e.report.map, e.report.rank1());
    }
    if let Some(last) = outcome.log.steps.last() {
        println!("final loss {:.5} (ce {:.5}, triplet {:.5}, center {:.5})", last.total, last.ce, last.triplet, last.center);
    }
    Ok(())
}
