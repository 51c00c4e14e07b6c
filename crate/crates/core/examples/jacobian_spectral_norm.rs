//! Top singular value of a score Jacobian by power iteration, without forming
//! the Jacobian.

use ndarray::{array, Array1};
use scoredim::manifolds::{gen_swirl, normalize};
use scoredim::regularizer::{de_penalty, jacobian_power_iteration};
use scoredim::train::{train, TrainConfig};

fn main() -> scoredim::Result<()> {
    let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, -1.0]];
    let linear = scoredim::score_model::ScoreModel::linear(&a, &Array1::zeros(3))?;
    let pi = jacobian_power_iteration(&linear, &[0.1, 0.2, 0.3], None, 30, 1e-3, 0)?;
    println!("linear map: σ²_max = {:.6} (exact 9), direction {:.3?}", pi.sq_spectral_norm, pi.direction);
    let penalty = de_penalty(&linear, &[0.1, 0.2, 0.3], None, 0.01, 30, 1e-3, 0)?;
    println!("penalty nγσ²_max at γ = 0.01: {penalty:.4}");

    // A fresh model has a zero last layer and hence a zero Jacobian.
    let (data, _) = normalize(&gen_swirl(500, 0.0, 0)?)?;
    let cfg = TrainConfig { gamma: 0.0, iterations: 500, hidden: vec![32, 32], ..TrainConfig::default() };
    let untrained = cfg.init_model(2)?;
    let pi = jacobian_power_iteration(&untrained, &data.point(0), None, 5, 1e-3, 1)?;
    println!("untrained: σ²_max = {:.1e}, degenerate = {}", pi.sq_spectral_norm, pi.degenerate);

    let model = train(&data, &cfg)?.checkpoint.model;
    for iters in [1, 2, 5, 20] {
        let pi = jacobian_power_iteration(&model, &data.point(0), None, iters, 1e-3, 1)?;
        println!("trained, {iters:>2} rounds: σ²_max = {:.3}", pi.sq_spectral_norm);
    }
    Ok(())
}
