//! Group categories from a similarity matrix across grouping volatilities.
//!
//! cargo run --example grouping -- [matrix.csv]

use trunk::sim::{group_categories, grouping_profile, gv_range, SimilarityMatrix};

fn demo_matrix() -> SimilarityMatrix {
    let labels = ["cat", "dog", "car", "truck", "ship"].map(String::from).to_vec();
    SimilarityMatrix::new(
        labels,
        vec![
            vec![0.62, 0.30, 0.02, 0.02, 0.04],
            vec![0.28, 0.65, 0.03, 0.02, 0.02],
            vec![0.02, 0.02, 0.70, 0.22, 0.04],
            vec![0.01, 0.02, 0.25, 0.68, 0.04],
            vec![0.05, 0.03, 0.06, 0.05, 0.81],
        ],
    )
    .expect("rows sum to one")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = match std::env::args().nth(1) {
        Some(path) => SimilarityMatrix::from_csv(&std::fs::read_to_string(path)?)?,
        None => demo_matrix(),
    };
    println!("{}", s.to_csv()?);
    for gv in [0.1, 0.5, 1.0, 1.5] {
        let g = group_categories(&s, gv)?;
        let named: Vec<Vec<&str>> = g
            .partition
            .iter()
            .map(|set| set.iter().map(|&i| s.labels[i].as_str()).collect())
            .collect();
        println!("gv {gv:<4} -> {} groups {named:?}", g.len());
    }
    println!("\ngv sweep:");
    for (gv, n) in grouping_profile(&s, &gv_range(0.25, 2.0, 0.25))? {
        println!("  {gv:<5} {n}");
    }
    Ok(())
}
