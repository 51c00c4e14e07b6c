//! Nearest-neighbour dimension estimators on the benchmark manifolds.

use scoredim::baselines::{mind_ml, mle_levina_bickel, MleVariant};
use scoredim::manifolds::{gen_hyper_twin_peaks, gen_line_disk_ball, gen_swirl, normalize};

fn main() -> scoredim::Result<()> {
    let sets = [
        gen_swirl(1000, 0.0, 0)?,
        gen_swirl(1000, 0.01, 0)?,
        gen_line_disk_ball(1000, 0)?,
        gen_hyper_twin_peaks(10, 1000, 0)?,
    ];
    println!("{:<24} {:>8} {:>8} {:>8} {:>8}", "dataset", "MLE_10", "MLE_20", "MiND_10", "MiND_20");
    for raw in &sets {
        let (s, _) = normalize(raw)?;
        let mut row = Vec::new();
        for k in [10, 20] {
            row.push(mle_levina_bickel(&s.points, k, MleVariant::LevinaBickel)?.mse(&s.true_td)?);
        }
        for k in [10, 20] {
            row.push(mind_ml(&s.points, k)?.mse(&s.true_td)?);
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>8.3}")).collect();
        println!("{:<24} {}", s.name, cells.join(" "));
    }

    let (ldb, _) = normalize(&sets[2])?;
    let mle = mle_levina_bickel(&ldb.points, 10, MleVariant::LevinaBickel)?;
    let mind = mind_ml(&ldb.points, 10)?;
    println!("line-disk-ball: mean local MLE {:.2}, global MiND {}", mle.mean, mind.d_hat);
    Ok(())
}
