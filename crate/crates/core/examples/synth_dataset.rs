//! Writes a synthetic dataset and summarizes its manifest.
//!
//! cargo run --example synth_dataset -- [out_dir]

use can_reid::data::{generate_synthetic, load_manifest, PkSampler, Split, SynthConfig};

fn main() -> can_reid::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("can_synth"));
    generate_synthetic(&SynthConfig::default(), &out)?;
    let m = load_manifest(&out)?;
    for split in [Split::Train, Split::Query, Split::Gallery] {
        println!("{split:?}: {} images, {} ids", m.split_indices(split).len(), m.ids(split).len());
    }
    let sampler = PkSampler::new(&m, 4, 4, 0)?;
    let batches = sampler.epoch_batches(0);
    println!("{} PK batches per epoch; first batch records {:?}", batches.len(), batches[0]);
    println!("manifest at {}", out.display());
    Ok(())
}
