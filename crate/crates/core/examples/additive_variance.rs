//! The learned variance around an isolated point grows by `γ`.
//!
//! A score model trained on a single point at the origin of ℝ¹⁶ with noise
//! `σ = 0.1` should have slope `1 / (σ² + γ)` along any direction.

use scoredim::manifolds::gen_isolated_point;
use scoredim::score_model::ScoreMap;
use scoredim::train::{train, TrainConfig};

fn main() -> scoredim::Result<()> {
    let data = gen_isolated_point(16, 1000)?;
    println!("{:>8} {:>10} {:>10}", "gamma", "learned", "σ² + γ");
    for gamma in [0.0, 1e-3, 3e-3, 1e-2] {
        let cfg = TrainConfig {
            gamma,
            iterations: 5000,
            hidden: vec![64; 3],
            ..TrainConfig::default()
        };
        let model = train(&data, &cfg)?.checkpoint.model;

        let r = 0.1;
        let s0 = model.eval(&[0.0; 16], None)?;
        let s1 = model.eval(&[r / 4.0; 16], None)?;
        let slope = s1.iter().zip(&s0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / r;
        println!("{gamma:>8} {:>10.5} {:>10.5}", 1.0 / slope, 0.01 + gamma);
    }
    Ok(())
}
