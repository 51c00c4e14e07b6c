//! Closed-form check of the additive variance property on a linear model.
//!
//! In the normal directions of a flat manifold the penalized optimum is
//! `A = −I / (σ² + (n/n⊥)γ)`. Gradient descent on the exact objective finds
//! it, and an estimator fed that score recovers the tangent dimension.

use scoredim::attack::AttackConfig;
use scoredim::estimator::estimate_td;
use scoredim::oracle::{build_anisotropic_oracle_score, fixed_point_slope, solve_linear_fixed_point, LocalSplit};

fn main() -> scoredim::Result<()> {
    let (sigma, gamma) = (0.1, 0.01);
    println!("{:>3} {:>3} {:>12} {:>12} {:>8} {:>6}", "n", "n⊥", "predicted", "solved", "iters", "n̂");
    for (n, n_perp) in [(2, 1), (4, 1), (4, 3), (8, 2), (16, 8)] {
        let split = LocalSplit::new(n, n_perp, sigma * sigma, gamma)?;
        let fp = solve_linear_fixed_point(&split, 1e-8, 0)?;
        let solved = -fp.a.diag().mean().unwrap();
        let score = build_anisotropic_oracle_score(&split, 0.0)?;
        let x = vec![0.1; n];
        let est = estimate_td(&score, &x, None, gamma, sigma, &AttackConfig::pgd(10, 1.0))?;
        println!(
            "{n:>3} {n_perp:>3} {:>12.6} {solved:>12.6} {:>8} {:>6.3}",
            fixed_point_slope(&split),
            fp.iterations,
            est.n_hat
        );
    }
    Ok(())
}
