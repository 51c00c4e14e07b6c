//! Interrupting training and resuming from a checkpoint file reproduces the
//! uninterrupted run bit for bit.

use scoredim::manifolds::{gen_line_disk_ball, normalize};
use scoredim::score_model::Checkpoint;
use scoredim::train::{train_resumable, TrainConfig};

fn main() -> scoredim::Result<()> {
    let (data, _) = normalize(&gen_line_disk_ball(500, 0)?)?;
    let cfg = TrainConfig { iterations: 400, hidden: vec![32, 32], ..TrainConfig::default() };

    let straight = train_resumable(&data.points, &cfg, None, None)?;
    let first = train_resumable(&data.points, &cfg, None, Some(150))?;

    let path = std::env::temp_dir().join("scoredim_resume_example.ck");
    first.checkpoint.save(&path)?;
    let resumed = train_resumable(&data.points, &cfg, Some(Checkpoint::load(&path)?), None)?;
    std::fs::remove_file(&path).ok();

    let same = straight.checkpoint.model.params == resumed.checkpoint.model.params;
    println!("stopped at {}, resumed to {}", first.checkpoint.iteration, resumed.checkpoint.iteration);
    println!("parameters identical to the straight run: {same}");
    Ok(())
}
