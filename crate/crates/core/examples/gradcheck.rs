//! Every differentiable op and the whole-model composite loss against
//! central finite differences.

use can_reid::gradcheck::{model_check, op_suite, GRAD_TOLERANCE};

fn main() -> can_reid::Result<()> {
    let mut rows = op_suite(20, 0)?;
    rows.push(model_check(true, 0)?);
    rows.push(model_check(false, 0)?);
    for r in &rows {
        println!("{:<22} {:.2e}  {}", r.name, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
    }
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("worst {worst:.2e} (tolerance {GRAD_TOLERANCE:e})");
    Ok(())
}
