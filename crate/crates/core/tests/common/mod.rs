#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub const MARKETS: [&str; 2] = ["US", "UK"];

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// The offline chain over the bundled fixture, as argument vectors
/// (without the program name). Outputs land in `out`.
pub fn pipeline_steps(out: &Path) -> Vec<Vec<String>> {
    let fx = fixtures();
    let emb = out.join("embeddings.tsv");
    let mut steps = vec![vec![
        "embed".into(),
        "--input".into(),
        s(&fx.join("keywords.tsv")),
        "--dim".into(),
        "64".into(),
        "--out".into(),
        s(&emb),
    ]];
    for m in MARKETS {
        let clustering = out.join("clustering").join(format!("{m}.json"));
        let thresholds = out.join("thresholds").join(format!("{m}.jsonl"));
        steps.push(
            [
                "cluster", "--embeddings", &s(&emb), "--market", m, "--clusters", "6", "--seed", "7", "--out",
                &s(&clustering),
            ]
            .map(String::from)
            .to_vec(),
        );
        steps.push(
            [
                "thresholds", "--embeddings", &s(&emb), "--market", m, "--clustering", &s(&clustering), "--p", "99",
                "--min-cluster-size", "3", "--out", &s(&thresholds),
            ]
            .map(String::from)
            .to_vec(),
        );
        steps.push(
            [
                "expand", "--embeddings", &s(&emb), "--market", m, "--clustering", &s(&clustering), "--thresholds",
                &s(&thresholds), "--campaigns", &s(&fx.join("campaigns.json")), "-k", "20", "--out",
                &s(&out.join(format!("expansions_{m}.jsonl"))),
            ]
            .map(String::from)
            .to_vec(),
        );
    }
    let rel = fx.join("relevance");
    steps.push(
        [
            "train-base", "--data", &s(&rel.join("base.csv")), "--trees", "60", "--learning-rate", "0.1", "--out",
            &s(&out.join("model_base.json")),
        ]
        .map(String::from)
        .to_vec(),
    );
    steps.push(
        [
            "train-adjust", "--base", &s(&out.join("model_base.json")), "--data", &s(&rel.join("new.csv")), "--out",
            &s(&out.join("model.json")),
        ]
        .map(String::from)
        .to_vec(),
    );
    for (m, holdout) in [("US", "holdout_us.csv"), ("UK", "holdout_uk.csv")] {
        steps.push(
            [
                "tune-threshold", "--model", &s(&out.join("model.json")), "--holdout", &s(&rel.join(holdout)),
                "--market", m, "--precision-target", "0.8", "--out", &s(&out.join("market_thresholds.json")),
            ]
            .map(String::from)
            .to_vec(),
        );
    }
    steps.push(
        [
            "build-snapshot", "--campaigns", &s(&fx.join("campaigns.json")), "--expansions",
            &s(&out.join("expansions_US.jsonl")), "--expansions", &s(&out.join("expansions_UK.jsonl")), "--model",
            &s(&out.join("model.json")), "--market-thresholds", &s(&out.join("market_thresholds.json")),
            "--version", "1", "--out", &s(&out.join("snapshot")), "--embeddings", &s(&emb), "--clustering-dir",
            &s(&out.join("clustering")), "--thresholds-dir", &s(&out.join("thresholds")), "-k", "20",
        ]
        .map(String::from)
        .to_vec(),
    );
    steps.push(
        [
            "match", "--snapshot", &s(&out.join("snapshot")), "--queries", &s(&fx.join("queries.tsv")), "--out",
            &s(&out.join("matches.jsonl")),
        ]
        .map(String::from)
        .to_vec(),
    );
    steps
}

/// Runs the chain in-process.
pub fn run_pipeline_in_process(out: &Path) {
    for step in pipeline_steps(out) {
        let mut argv = vec!["semexpand".to_string()];
        argv.extend(step.iter().cloned());
        let code = semexpand::cli::run(argv);
        assert_eq!(code, 0, "step failed: {step:?}");
    }
}

/// Runs the chain through the binary with a fixed thread count.
pub fn run_pipeline_binary(out: &Path, threads: usize) {
    for step in pipeline_steps(out) {
        let o = Command::new(env!("CARGO_BIN_EXE_semexpand"))
            .arg("--threads")
            .arg(threads.to_string())
            .args(&step)
            .output()
            .expect("spawn semexpand");
        assert!(
            o.status.success(),
            "step {step:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

/// Files compared by the golden run.
pub fn golden_artifacts() -> Vec<String> {
    let mut v = Vec::new();
    for m in MARKETS {
        v.push(format!("expansions_{m}.jsonl"));
        v.push(format!("thresholds/{m}.jsonl"));
        v.push(format!("clustering/{m}.json"));
    }
    v.extend(["embeddings.tsv", "model.json", "market_thresholds.json", "matches.jsonl"].map(String::from));
    v
}

pub struct TprFixture {
    pub set: semexpand::embedding::EmbeddingSet,
    pub clustering: semexpand::clustering::Clustering,
    /// Every labeled pair is valid.
    pub all_positive: semexpand::report::ExpansionLabelSet,
    /// Only the twins are labeled; the filters remove exactly the invalid ones.
    pub filter_labels: semexpand::report::ExpansionLabelSet,
}

/// Three well separated groups. Each origin has two exact twins: one valid
/// and one that a consistency filter rejects. Fillers spread the clusters.
pub fn tpr_fixture() -> TprFixture {
    use semexpand::embedding::{normalize, EmbeddingSet};
    use semexpand::rng::SplitMix64;

    let groups = [
        ("mens running shoes", "mens running trainers", "womens running shoes"),
        ("iphone 13 case", "iphone 13 cover", "iphone 12 case"),
        ("65w usb-c charger", "usb-c power adapter 65w", "45w usb-c charger"),
    ];
    let fillers = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];
    let dim = 16;
    let mut rng = SplitMix64::new(17);
    let mut rows = Vec::new();
    let mut all = String::new();
    let mut filt = String::new();
    for (g, (origin, pos, neg)) in groups.iter().enumerate() {
        let mut center = vec![0.0f32; dim];
        center[g] = 1.0;
        let v = normalize(&center).unwrap();
        for t in [origin, pos, neg] {
            rows.push((t.to_string(), v.clone()));
        }
        all.push_str(&format!("{origin}\t{pos}\t1\n"));
        filt.push_str(&format!("{origin}\t{pos}\t1\n{origin}\t{neg}\t0\n"));
        for f in fillers {
            let noisy: Vec<f32> = center.iter().map(|c| c + (0.08 * rng.next_gaussian()) as f32).collect();
            let name = format!("g{g} filler {f}");
            all.push_str(&format!("{origin}\t{name}\t1\n"));
            rows.push((name, normalize(&noisy).unwrap()));
        }
    }
    let set = EmbeddingSet::from_rows("US", rows).unwrap();
    let clustering =
        semexpand::clustering::kmeans(&set, semexpand::clustering::KMeansParams::new(3, 0)).unwrap();
    TprFixture {
        set,
        clustering,
        all_positive: semexpand::report::ExpansionLabelSet::from_tsv(&all).unwrap(),
        filter_labels: semexpand::report::ExpansionLabelSet::from_tsv(&filt).unwrap(),
    }
}
