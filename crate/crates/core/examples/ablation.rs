//! Ablations on the desk benchmark: collaborative attention on/off and
//! CE-only vs the full composite loss, averaged over seeds.
//!
//! cargo run --release --example ablation -- [benchmark.json] [seeds]

use can_reid::bench::Benchmark;
use can_reid::losses::LossConfig;

fn main() -> can_reid::Result<()> {
    let mut args = std::env::args().skip(1);
    let bench: Benchmark = match args.next().filter(|a| a != "-") {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(&p).expect("readable benchmark file"))?,
        None => Benchmark::default(),
    };
    let n: u64 = args.next().map(|s| s.parse().expect("seed count")).unwrap_or(5);
    let seeds: Vec<u64> = (0..n).collect();
    let scratch = tempfile_dir();

    let runs = [
        ("parts 1,3,5,7 + CA", bench.clone().with_ca(true)),
        ("parts 1,3,5,7 plain", bench.clone().with_ca(false)),
        ("CE only", bench.clone().with_losses(&LossConfig::ce_only())),
    ];
    for (name, b) in runs {
        let t = std::time::Instant::now();
        let (map, r1, reports) = b.run_seeds(&seeds, &scratch)?;
        let per: Vec<String> = reports.iter().map(|r| format!("{:.3}", r.map)).collect();
        println!(
            "{name:<22} mAP {map:.4}  rank-1 {r1:.4}  per-seed [{}]  {:.0}s",
            per.join(", "),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("can_ablation_{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("scratch dir");
    d
}
