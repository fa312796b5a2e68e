//! On-disk snapshot directory:
//!
//! ```text
//! snapshot.json             manifest
//! campaigns.json
//! expansions.jsonl
//! model.json                stacked model
//! market_thresholds.json
//! embeddings.tsv            } only when online expansion is enabled
//! clustering/<market>.json  }
//! thresholds/<market>.jsonl }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::campaign::CampaignFile;
use super::snapshot::{build_snapshot, MarketThresholds, Snapshot, SnapshotInputs};
use crate::clustering::Clustering;
use crate::embedding::{format_row, load_embeddings};
use crate::error::{Error, Result};
use crate::expansion::{load_jsonl, save_jsonl, Expander, FilterConfig};
use crate::features::FeatureExtractor;
use crate::relevance::{GbdtModel, StackedModel};
use crate::thresholds::ThresholdTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotManifest {
    pub version: u64,
    pub feature_dim: usize,
    pub k_neighbors: usize,
    pub filters: bool,
    /// Markets with online expansion data.
    #[serde(default)]
    pub expander_markets: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_market_thresholds(path: impl AsRef<Path>) -> Result<MarketThresholds> {
    Ok(serde_json::from_str(&read(path.as_ref())?)?)
}

pub fn save_market_thresholds(t: &MarketThresholds, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(t)?;
    text.push('\n');
    write(path.as_ref(), &text)
}

/// Reads either a stacked model or a bare base model (wrapped with no
/// adjustment trees).
pub fn load_scoring_model(path: impl AsRef<Path>) -> Result<StackedModel> {
    let path = path.as_ref();
    let value: serde_json::Value = serde_json::from_str(&read(path)?)?;
    if value.get("base").is_some() {
        StackedModel::load(path)
    } else {
        GbdtModel::load(path).map(StackedModel::identity)
    }
}

pub fn write_snapshot_dir(dir: impl AsRef<Path>, inputs: &SnapshotInputs, manifest: &SnapshotManifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    inputs.campaigns.save(dir.join("campaigns.json"))?;
    save_jsonl(&inputs.expansions, dir.join("expansions.jsonl"))?;
    inputs.model.save(dir.join("model.json"))?;
    save_market_thresholds(&inputs.thresholds, dir.join("market_thresholds.json"))?;
    if !inputs.expanders.is_empty() {
        let cdir = dir.join("clustering");
        let tdir = dir.join("thresholds");
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        let mut emb = String::new();
        for (m, ex) in &inputs.expanders {
            for (k, v) in ex.set.iter() {
                let _ = writeln!(emb, "{}", format_row(m, &k.text, v.as_slice()));
            }
            ex.clustering.save(cdir.join(format!("{m}.json")))?;
            ex.table.save(tdir.join(format!("{m}.jsonl")))?;
        }
        write(&dir.join("embeddings.tsv"), &emb)?;
    }
    // The manifest goes last so a reader never sees it before its data.
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write(&dir.join("snapshot.json"), &text)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<SnapshotManifest> {
    Ok(serde_json::from_str(&read(&dir.as_ref().join("snapshot.json"))?)?)
}

pub fn load_snapshot_inputs(dir: impl AsRef<Path>) -> Result<(SnapshotManifest, SnapshotInputs)> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let campaigns = CampaignFile::load(dir.join("campaigns.json"))?;
    let expansions = load_jsonl(dir.join("expansions.jsonl"))?;
    let model = load_scoring_model(dir.join("model.json"))?;
    let thresholds = load_market_thresholds(dir.join("market_thresholds.json"))?;
    let filters = if manifest.filters {
        FilterConfig::default()
    } else {
        FilterConfig::disabled()
    };
    let mut expanders = BTreeMap::new();
    for m in &manifest.expander_markets {
        let set = load_embeddings(dir.join("embeddings.tsv"), m)?;
        let clustering = Clustering::load(dir.join("clustering").join(format!("{m}.json")))?;
        let table = ThresholdTable::load(dir.join("thresholds").join(format!("{m}.jsonl")))?;
        expanders.insert(
            m.clone(),
            Expander::new(set, clustering, table, manifest.k_neighbors, filters.clone())?,
        );
    }
    let inputs = SnapshotInputs {
        campaigns,
        expansions,
        model,
        thresholds,
        extractor: FeatureExtractor::new(manifest.feature_dim)?,
        expanders,
    };
    Ok((manifest, inputs))
}

/// Loads and validates a snapshot directory. `previous` is the version
/// currently being served, if any.
pub fn load_snapshot_dir(dir: impl AsRef<Path>, previous: Option<u64>) -> Result<Snapshot> {
    let (manifest, inputs) = load_snapshot_inputs(dir)?;
    build_snapshot(inputs, manifest.version, previous)
}
