//! FRR / FAR / score at a fixed threshold, a threshold sweep, and score
//! averaging of two single-modality systems.

use bkws::scoring::{average_scores, best_operating_point, score, sweep, Label, LabeledScores, ScoredUtterance};

fn system(scores: &[(f64, Label)], prefix: &str) -> bkws::Result<LabeledScores> {
    LabeledScores::new(
        scores
            .iter()
            .enumerate()
            .map(|(i, &(score, label))| ScoredUtterance {
                id: format!("{prefix}{i:03}"),
                label,
                score,
            })
            .collect(),
    )
}

pub fn run_example() -> bkws::Result<()> {
    use Label::{NonWake, Wake};
    let audio = system(
        &[
            (0.91, Wake),
            (0.40, Wake),
            (0.77, Wake),
            (0.62, Wake),
            (0.10, NonWake),
            (0.55, NonWake),
            (0.30, NonWake),
            (0.05, NonWake),
        ],
        "utt",
    )?;
    let video = system(
        &[
            (0.70, Wake),
            (0.68, Wake),
            (0.52, Wake),
            (0.45, Wake),
            (0.20, NonWake),
            (0.35, NonWake),
            (0.60, NonWake),
            (0.15, NonWake),
        ],
        "utt",
    )?;

    for (name, s) in [("audio", &audio), ("video", &video)] {
        println!("{name:6} @0.5  {}", score(s, 0.5)?.render_percent());
    }
    let fused = average_scores(&[audio, video])?;
    println!("fused  @0.5  {}", score(&fused, 0.5)?.render_percent());

    let points = sweep(&fused)?;
    if let Some(best) = best_operating_point(&points) {
        println!(
            "best of {} thresholds: {:.3} -> {}",
            points.len(),
            best.threshold,
            best.render_percent()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
