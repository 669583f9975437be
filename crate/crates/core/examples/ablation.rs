//! Desk-scale ablation: every arm on the standard synthetic split for the
//! given seeds (default 0..5), one CSV row per run.
//!
//! ```text
//! cargo run --release -p expat-core --example ablation -- 0 1 2
//! ```

use std::time::Instant;

use expat_core::ablation::{desk_data, run_arm, AT_CSBN, EXPAT_CSBN, EXPAT_L2, ID_ONLY, TRIPLET};

fn main() -> expat_core::Result<()> {
    let arms = [ID_ONLY, TRIPLET, AT_CSBN, EXPAT_CSBN, EXPAT_L2];
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let seeds = if seeds.is_empty() {
        vec![0, 1, 2, 3, 4]
    } else {
        seeds
    };
    println!("seed,arm,rank1,map,separability_gap,descent_ratio,seconds");
    for &seed in &seeds {
        let (train, test) = desk_data(seed)?;
        for arm in &arms {
            let t = Instant::now();
            let r = run_arm(&train, &test, arm, seed)?;
            println!(
                "{seed},{},{:.4},{:.4},{:.4},{:.4},{:.1}",
                r.arm,
                r.rank1,
                r.map,
                r.separability_gap,
                r.descent_ratio,
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
