//! Regenerates the relevance CSVs under `fixtures/relevance/`.
//!
//!     cargo run -p semexpand --example gen_fixtures

use std::path::Path;

use semexpand::relevance::Dataset;
use semexpand::synth::{relevance_dataset, RelevanceMix};

fn rounded(d: Dataset) -> Dataset {
    let mut out = Dataset::new(d.schema.clone());
    for (row, y) in d.rows.into_iter().zip(d.labels) {
        let row = row.into_iter().map(|x| (x * 1e4).round() / 1e4).collect();
        out.push(row, y).unwrap();
    }
    out
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/relevance");
    std::fs::create_dir_all(&dir).unwrap();
    let shifted = RelevanceMix {
        new_fraction: 0.7,
        low_grade_shift: -0.5,
    };
    let sets = [
        ("base.csv", relevance_dataset(11, 800, RelevanceMix::EXISTING)),
        ("new.csv", relevance_dataset(12, 400, shifted)),
        ("holdout_us.csv", relevance_dataset(13, 300, shifted)),
        ("holdout_uk.csv", relevance_dataset(14, 300, RelevanceMix::EXISTING)),
    ];
    for (name, d) in sets {
        rounded(d).save_csv(dir.join(name)).unwrap();
        println!("wrote {name}");
    }
}
