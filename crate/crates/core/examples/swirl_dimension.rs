//! Per-point dimension of the 2-D Swirl from a regularized single-scale score model.
//!
//! `cargo run --release --example swirl_dimension -- [iterations]`

use scoredim::attack::AttackConfig;
use scoredim::estimator::{estimate_td_all, evaluate_mse};
use scoredim::manifolds::{gen_swirl, normalize};
use scoredim::train::{train, TrainConfig};

fn main() -> scoredim::Result<()> {
    let iterations = std::env::args().nth(1).map_or(5000, |s| s.parse().expect("iterations"));
    let (data, _) = normalize(&gen_swirl(1000, 0.0, 0)?)?;

    let cfg = TrainConfig {
        gamma: 0.01,
        iterations,
        hidden: vec![64; 3],
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg)?;
    let last = out.log.last().unwrap();
    println!("trained {iterations} steps: dsm {:.4}, penalty {:.4}", last.dsm_loss, last.de_penalty);

    let est = estimate_td_all(out.model(), &data.points, None, cfg.gamma, 0.1, &AttackConfig::pgd(10, 0.1))?;
    println!("MSE against the true dimension 1: {:.4}", evaluate_mse(&est, &data.true_td)?);

    let mut hist = [0usize; 5];
    for e in &est {
        hist[((e.n_hat_clamped * 2.0).round() as usize).min(4)] += 1;
    }
    for (i, h) in hist.iter().enumerate() {
        println!("  n̂ ≈ {:.1}: {h}", i as f64 / 2.0);
    }
    Ok(())
}
