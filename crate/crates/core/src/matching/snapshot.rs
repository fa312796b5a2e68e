use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::campaign::{CampaignFile, Item};
use crate::error::{Error, Result};
use crate::expansion::{ExpansionRecord, Expander};
use crate::features::{FeatureExtractor, TextSide, FEATURE_NAMES};
use crate::relevance::StackedModel;
use crate::text::token_set;

/// Market threshold file contents; `None` disables relevance filtering.
pub type MarketThresholds = BTreeMap<String, Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub query: String,
    pub market: String,
    pub item_id: u64,
    pub matched_keyword: String,
    pub origin_keyword: String,
    pub score: f64,
    pub base: f64,
    pub adjustment: f64,
    /// `null` when filtering is disabled for the market.
    pub threshold: Option<f64>,
}

/// True iff every keyword token occurs in the query.
pub fn broad_match(query_tokens: &BTreeSet<String>, keyword_tokens: &BTreeSet<String>) -> bool {
    keyword_tokens.is_subset(query_tokens)
}

#[derive(Debug, Clone)]
struct Entry {
    keyword: String,
    tokens: BTreeSet<String>,
    origin: String,
    similarity: f64,
    groups: Vec<usize>,
}

#[derive(Debug, Clone)]
struct PreparedItem {
    item: Item,
    title: TextSide,
}

#[derive(Debug, Clone)]
pub struct MarketData {
    pub threshold: Option<f64>,
    pub expansions: BTreeMap<String, ExpansionRecord>,
    pub expander: Option<Expander>,
    entries: Vec<Entry>,
    /// Entry indices keyed by the rarest token of each entry, so a matching
    /// entry is found exactly once while scanning the query tokens.
    buckets: HashMap<String, Vec<usize>>,
    groups: Vec<Vec<u64>>,
    items: BTreeMap<u64, PreparedItem>,
}

impl MarketData {
    pub fn n_keywords(&self) -> usize {
        self.entries.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    fn candidates(&self, q: &BTreeSet<String>) -> Vec<&Entry> {
        let mut out = Vec::new();
        for t in q {
            if let Some(ids) = self.buckets.get(t) {
                out.extend(ids.iter().map(|&i| &self.entries[i]).filter(|e| broad_match(q, &e.tokens)));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub version: u64,
    pub model: StackedModel,
    pub extractor: FeatureExtractor,
    pub markets: BTreeMap<String, MarketData>,
}

#[derive(Debug, Clone)]
pub struct SnapshotInputs {
    pub campaigns: CampaignFile,
    pub expansions: Vec<ExpansionRecord>,
    pub model: StackedModel,
    pub thresholds: MarketThresholds,
    pub extractor: FeatureExtractor,
    /// Optional per-market context for expanding unseen keywords online.
    pub expanders: BTreeMap<String, Expander>,
}

pub fn build_snapshot(inputs: SnapshotInputs, version: u64, previous: Option<u64>) -> Result<Snapshot> {
    if let Some(current) = previous {
        if version <= current {
            return Err(Error::VersionRegression { current, offered: version });
        }
    }
    let schema = inputs.model.schema();
    if schema.len() != FEATURE_NAMES.len() {
        return Err(Error::SchemaMismatch {
            expected: FEATURE_NAMES.len(),
            found: schema.len(),
        });
    }
    if schema.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b) {
        return Err(Error::InvalidArgument(format!(
            "model schema {schema:?} does not match the feature extractor {FEATURE_NAMES:?}"
        )));
    }
    for (m, t) in &inputs.thresholds {
        if t.is_some_and(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("market threshold for {m} is not finite")));
        }
    }

    let mut markets: BTreeMap<String, MarketData> = BTreeMap::new();
    let campaign_markets = inputs.campaigns.markets();
    for m in &campaign_markets {
        let threshold = *inputs
            .thresholds
            .get(m)
            .ok_or_else(|| Error::InvalidArgument(format!("no market threshold for {m}")))?;
        markets.insert(
            m.clone(),
            MarketData {
                threshold,
                expansions: BTreeMap::new(),
                expander: None,
                entries: Vec::new(),
                buckets: HashMap::new(),
                groups: Vec::new(),
                items: BTreeMap::new(),
            },
        );
    }

    // origin keyword -> ad groups, per market
    let mut origin_groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for c in &inputs.campaigns.campaigns {
        let md = markets.get_mut(&c.market).expect("campaign market registered above");
        for g in &c.ad_groups {
            let gi = md.groups.len();
            let mut ids: Vec<u64> = g.items.iter().map(|i| i.id).collect();
            ids.sort_unstable();
            ids.dedup();
            md.groups.push(ids);
            for item in &g.items {
                md.items.entry(item.id).or_insert_with(|| PreparedItem {
                    item: item.clone(),
                    title: inputs.extractor.prepare(&item.title),
                });
            }
            for kw in &g.keywords {
                let groups = origin_groups.entry((c.market.clone(), kw.clone())).or_default();
                if groups.last() != Some(&gi) {
                    groups.push(gi);
                }
            }
        }
    }

    for rec in inputs.expansions {
        let market = rec.origin.market.clone();
        let origin = rec.origin.text.clone();
        if !origin_groups.contains_key(&(market.clone(), origin.clone())) {
            return Err(Error::DanglingReference(format!(
                "expansion origin {origin:?} ({market}) is not a campaign keyword"
            )));
        }
        let md = markets.get_mut(&market).expect("origin market has campaigns");
        if md.expansions.insert(origin.clone(), rec).is_some() {
            return Err(Error::InvalidArgument(format!("two expansion records for {origin:?} ({market})")));
        }
    }

    // (keyword, origin) -> similarity; origins match as themselves.
    let mut keyed: BTreeMap<String, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for (market, origin) in origin_groups.keys() {
        keyed.entry(market.clone()).or_default().insert((origin.clone(), origin.clone()), 1.0);
    }
    for (market, md) in &markets {
        for (origin, rec) in &md.expansions {
            let slot = keyed.entry(market.clone()).or_default();
            for v in rec.accepted() {
                if v.keyword.text == *origin || token_set(&v.keyword.text).is_empty() {
                    continue;
                }
                let e = slot.entry((v.keyword.text.clone(), origin.clone())).or_insert(v.similarity);
                *e = e.max(v.similarity);
            }
        }
    }
    for (market, pairs) in keyed {
        let md = markets.get_mut(&market).expect("keyed markets come from campaigns");
        let entries: Vec<Entry> = pairs
            .into_iter()
            .map(|((keyword, origin), similarity)| Entry {
                tokens: token_set(&keyword),
                groups: origin_groups[&(market.clone(), origin.clone())].clone(),
                keyword,
                origin,
                similarity,
            })
            .collect();
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for e in &entries {
            for t in &e.tokens {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut buckets: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let rarest = e
                .tokens
                .iter()
                .min_by_key(|t| (freq[t.as_str()], t.as_str()))
                .expect("entries always have tokens");
            buckets.entry(rarest.clone()).or_default().push(i);
        }
        md.entries = entries;
        md.buckets = buckets;
    }

    for (m, ex) in inputs.expanders {
        if ex.market() != m {
            return Err(Error::InvalidArgument(format!(
                "expansion context for {m} was built for {}",
                ex.market()
            )));
        }
        let md = markets.entry(m.clone()).or_insert_with(|| MarketData {
            threshold: inputs.thresholds.get(&m).copied().flatten(),
            expansions: BTreeMap::new(),
            expander: None,
            entries: Vec::new(),
            buckets: HashMap::new(),
            groups: Vec::new(),
            items: BTreeMap::new(),
        });
        md.expander = Some(ex);
    }

    Ok(Snapshot {
        version,
        model: inputs.model,
        extractor: inputs.extractor,
        markets,
    })
}

impl Snapshot {
    pub fn market(&self, market: &str) -> Result<&MarketData> {
        self.markets
            .get(market)
            .ok_or_else(|| Error::UnknownMarket(market.to_string()))
    }

    pub fn expander(&self, market: &str) -> Result<&Expander> {
        self.market(market)?
            .expander
            .as_ref()
            .ok_or_else(|| Error::UnknownMarket(format!("{market} (no expansion context)")))
    }

    /// Broad-matches the query against every expanded keyword of the market,
    /// scores the reachable items and keeps those at or above the market
    /// threshold. One record per item (its best-scoring keyword), ordered by
    /// descending score then ascending item id.
    pub fn match_query(&self, query: &str, market: &str) -> Result<Vec<MatchRecord>> {
        let md = self.market(market)?;
        let q_tokens = token_set(query);
        let matched = md.candidates(&q_tokens);
        if matched.is_empty() {
            return Ok(Vec::new());
        }
        let q_side = self.extractor.prepare(query);
        let mut best: BTreeMap<u64, MatchRecord> = BTreeMap::new();
        for e in matched {
            let mut seen = BTreeSet::new();
            for &g in &e.groups {
                for &id in &md.groups[g] {
                    if !seen.insert(id) {
                        continue;
                    }
                    let p = &md.items[&id];
                    let x = self
                        .extractor
                        .features(&q_side, &p.title, p.item.price, &e.tokens, e.similarity);
                    let s = self.model.score(&x)?;
                    let better = match best.get(&id) {
                        None => true,
                        Some(cur) => {
                            s.total > cur.score
                                || (s.total == cur.score
                                    && (e.keyword.as_str(), e.origin.as_str())
                                        < (cur.matched_keyword.as_str(), cur.origin_keyword.as_str()))
                        }
                    };
                    if better {
                        best.insert(
                            id,
                            MatchRecord {
                                query: query.to_string(),
                                market: market.to_string(),
                                item_id: id,
                                matched_keyword: e.keyword.clone(),
                                origin_keyword: e.origin.clone(),
                                score: s.total,
                                base: s.base,
                                adjustment: s.adjustment,
                                threshold: md.threshold,
                            },
                        );
                    }
                }
            }
        }
        let mut out: Vec<MatchRecord> = best
            .into_values()
            .filter(|r| md.threshold.is_none_or(|t| r.score >= t))
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id)));
        Ok(out)
    }
}
