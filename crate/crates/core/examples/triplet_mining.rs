//! Batch-hard mining on a tiny batch and the resulting composite loss terms.

use can_reid::autodiff::Tape;
use can_reid::losses::{batch_hard_triplet, mine_batch_hard, BatchLabels, CenterBank};
use can_reid::nn::pairwise_sq_dist;
use can_reid::Tensor;

fn main() -> can_reid::Result<()> {
    // Two ids, two 2-d features each; id 1 has one far-out sample.
    let feats = Tensor::new(vec![4, 2], vec![0.0, 0.0, 0.2, 0.0, 1.0, 0.0, 3.0, 0.0])?;
    let labels = BatchLabels::new(vec![0, 0, 1, 1]);
    let dist = pairwise_sq_dist(&feats)?;
    for (a, (p, n)) in mine_batch_hard(&dist, &labels)?.into_iter().enumerate() {
        println!("anchor {a}: hardest positive {p}, hardest negative {n}");
    }
    let mut tape = Tape::new();
    let f = tape.leaf(feats.clone());
    let trip = batch_hard_triplet(&mut tape, f, &labels, 0.3)?;
    let mut bank = CenterBank::new(2, 2);
    bank.update(&feats, &labels, 0.5)?;
    let center = bank.loss(&mut tape, f, &labels, true)?;
    println!("triplet {:.4}, center {:.4}", tape.value(trip).item()?, tape.value(center).item()?);
    Ok(())
}
