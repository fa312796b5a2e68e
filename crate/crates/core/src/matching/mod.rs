//! Campaign data, broad matching and the scoring runtime over immutable,
//! atomically swapped snapshots.

mod campaign;
mod holder;
mod snapshot;
mod store;

pub use campaign::{AdGroup, Campaign, CampaignFile, Item};
pub use holder::{swap_snapshot, SnapshotHolder};
pub use snapshot::{broad_match, build_snapshot, MarketData, MarketThresholds, MatchRecord, Snapshot, SnapshotInputs};
pub use store::{
    load_manifest, load_market_thresholds, load_scoring_model, load_snapshot_dir, load_snapshot_inputs,
    save_market_thresholds, write_snapshot_dir, SnapshotManifest,
};

/// Formats match records as JSON lines.
pub fn to_jsonl(records: &[MatchRecord]) -> crate::error::Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
