//! Adaptive pooling geometry: kernel and stride inferred from input and
//! output sizes, then applied to a small feature map.

use can_reid::nn::{adaptive_pool2d, adaptive_pool_params};
use can_reid::{ReduceMode, Tensor};

fn main() -> can_reid::Result<()> {
    println!("input 24 -> output n: stride / kernel");
    for n in [1, 2, 3, 5, 7, 8, 24] {
        let g = adaptive_pool_params(24, n)?;
        println!("  n = {n:>2}: stride {:>2}, kernel {:>2}", g.stride, g.kernel);
    }

    // 1×1×6×2 map pooled into 3 horizontal parts.
    let x = Tensor::new(vec![1, 1, 6, 2], (0..12).map(|v| v as f64).collect())?;
    for mode in [ReduceMode::Max, ReduceMode::Mean] {
        let y = adaptive_pool2d(&x, 3, 1, mode)?;
        println!("{mode:?} pooling into 3×1 parts: {:?}", y.data());
    }
    Ok(())
}
