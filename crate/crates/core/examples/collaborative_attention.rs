//! Stream layout of a CAN model and what collaborative attention does to a
//! part map: each local feature is the elementwise max of two adjacent parts.

use can_reid::autodiff::Tape;
use can_reid::model::{collaborative_attention, stream_layout, BranchSpec, CanModel, ModelConfig};
use can_reid::Tensor;

fn main() -> can_reid::Result<()> {
    let spec = BranchSpec::can();
    for ca in [true, false] {
        let names: Vec<String> = stream_layout(&spec, ca).iter().map(|s| s.name()).collect();
        println!("CA {ca}: {} streams {:?}", names.len(), names);
    }

    // Channel 0 of a 4-part map; parts 1 and 2 carry the strongest response.
    let mut tape = Tape::new();
    let parts = tape.leaf(Tensor::new(vec![1, 1, 4, 1], vec![0.2, 0.9, 0.7, 0.1])?);
    let blocks = collaborative_attention(&mut tape, parts)?;
    let vals: Vec<f64> = blocks.iter().map(|&b| tape.value(b).data()[0]).collect();
    println!("parts [0.2, 0.9, 0.7, 0.1] -> CA blocks {vals:?}");

    let model = CanModel::build(ModelConfig::desk(16), 0)?;
    println!(
        "desk model: {} parameters ({} scalars), descriptor dim {}",
        model.store.len(),
        model.store.num_scalars(),
        model.descriptor_dim()
    );
    Ok(())
}
