//! Mean squared dimension error of the score-based estimator and the kNN
//! baselines on the benchmark manifolds, averaged over trials.
//!
//! `cargo run --release --example benchmark_table -- [iterations] [trials]`

use scoredim::cli::{run_table3, Benchmark, Preset, RunConfig};

fn main() -> scoredim::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    Preset::Reduced.apply(&mut cfg);
    cfg.dataset.count = 1000;
    if let Some(it) = args.next() {
        cfg.train.iterations = it.parse().expect("iterations");
    }
    if let Some(tr) = args.next() {
        cfg.trials = tr.parse().expect("trials");
    }
    let benches = [Benchmark::Swirl, Benchmark::SwirlNoisy, Benchmark::LineDiskBall, Benchmark::HyperTwinPeaks(10)];
    let (table, _) = run_table3(&cfg, &benches)?;
    print!("{table}");
    println!("config {}", table.config_hash);
    Ok(())
}
