//! Retrieval evaluation on a hand-made distance matrix, then on a
//! checkpoint if one is given.
//!
//! cargo run --release --example evaluate -- [checkpoint_dir data_dir]

use can_reid::data::load_manifest;
use can_reid::eval::{evaluate, DistanceMatrix, ItemMeta};
use can_reid::train::evaluate_checkpoint;
use can_reid::Tensor;

fn main() -> can_reid::Result<()> {
    let m = |id, cam| ItemMeta { id, cam };
    // Query id 1 / cam 0. Gallery: a same-camera copy (excluded), junk, two
    // true matches at ranks 1 and 3 after exclusion, and distractors.
    let dm = DistanceMatrix::new(
        Tensor::new(vec![1, 6], vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4])?,
        vec![m(1, 0)],
        vec![m(1, 0), m(-1, 1), m(1, 1), m(2, 1), m(1, 2), m(3, 1)],
    )?;
    let report = evaluate(&dm, 4)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [ckpt, data] = args.as_slice() {
        let report = evaluate_checkpoint(ckpt, &load_manifest(data)?, 10)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}
