//! Estimated dimension of Swirl points along the diffusion. Near `t = 0` the
//! points sit on a curve, in the middle the noise has smeared them into a
//! disk, and at `t = 1` everything has collapsed into the Gaussian prior.

use scoredim::attack::AttackConfig;
use scoredim::diffusion::NoiseSchedule;
use scoredim::estimator::estimate_td_over_time;
use scoredim::manifolds::{gen_swirl, normalize};
use scoredim::train::{train, TrainConfig};

fn main() -> scoredim::Result<()> {
    let iterations = std::env::args().nth(1).map_or(20_000, |s| s.parse().expect("iterations"));
    let (data, _) = normalize(&gen_swirl(1000, 0.0, 0)?)?;
    let cfg = TrainConfig {
        schedule: NoiseSchedule::default(),
        iterations,
        hidden: vec![128; 3],
        prior_skip: true,
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg)?.checkpoint.model;

    let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let head: Vec<String> = times.iter().map(|t| format!("{t:>5.1}")).collect();
    println!("point {}", head.join(""));
    for idx in [100, 400, 700] {
        let est = estimate_td_over_time(&model, &data.point(idx), &times, cfg.gamma, &cfg.schedule, &AttackConfig::pgd(10, 1.0))?;
        let row: Vec<String> = est.iter().map(|e| format!("{:>5.2}", e.n_hat_clamped)).collect();
        println!("{idx:>5} {}", row.join(""));
    }
    Ok(())
}
