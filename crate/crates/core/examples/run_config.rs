//! Run configurations are plain TOML. Every output file carries the hash of
//! the configuration that produced it.

use scoredim::cli::{Method, RunConfig};
use scoredim::diffusion::NoiseSchedule;

fn main() -> scoredim::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.dataset.name = "hyper_twin_peaks".into();
    cfg.dataset.intrinsic_dim = 10;
    cfg.train.schedule = NoiseSchedule::single(0.1);
    cfg.train.hidden = vec![64; 3];
    cfg.estimators = vec![Method::ScoreMap, Method::Mle(10)];

    let text = cfg.to_toml();
    println!("{text}");
    let back = RunConfig::from_toml(&text)?;
    assert_eq!(back, cfg);
    println!("hash {}", cfg.hash());

    let sample = cfg.prepare(&cfg.dataset.generate()?)?;
    println!("{}: {} points in R^{}", sample.name, sample.count(), sample.ambient_dim());

    let partial = RunConfig::from_toml("[train]\ngamma = 0.05\n")?;
    println!("partial file: gamma {}, everything else default", partial.train.gamma);
    Ok(())
}
