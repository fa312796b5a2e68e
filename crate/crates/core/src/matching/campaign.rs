use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: u64,
    pub title: String,
    pub price: f64,
    /// Filled from the owning campaign when absent in the file.
    #[serde(default)]
    pub market: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdGroup {
    pub keywords: Vec<String>,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: u64,
    pub market: String,
    pub ad_groups: Vec<AdGroup>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignFile {
    pub campaigns: Vec<Campaign>,
}

impl CampaignFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut f: Self = serde_json::from_str(text)?;
        f.normalize()?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Propagates markets onto items and checks the id and content rules.
    /// An item may appear in several ad groups as long as every copy is
    /// identical.
    pub fn normalize(&mut self) -> Result<()> {
        let mut campaign_ids = BTreeSet::new();
        let mut items: BTreeMap<(String, u64), Item> = BTreeMap::new();
        for c in &mut self.campaigns {
            if !campaign_ids.insert(c.id) {
                return Err(Error::InvalidArgument(format!("duplicate campaign id {}", c.id)));
            }
            if c.market.is_empty() {
                return Err(Error::InvalidArgument(format!("campaign {} has no market", c.id)));
            }
            for g in &mut c.ad_groups {
                for kw in &g.keywords {
                    if tokenize(kw).is_empty() {
                        return Err(Error::InvalidArgument(format!(
                            "campaign {}: keyword {kw:?} has no tokens",
                            c.id
                        )));
                    }
                }
                for item in &mut g.items {
                    if item.market.is_empty() {
                        item.market = c.market.clone();
                    } else if item.market != c.market {
                        return Err(Error::InvalidArgument(format!(
                            "item {} is in market {} but campaign {} is in {}",
                            item.id, item.market, c.id, c.market
                        )));
                    }
                    if item.title.trim().is_empty() {
                        return Err(Error::InvalidArgument(format!("item {} has an empty title", item.id)));
                    }
                    if !(item.price.is_finite() && item.price >= 0.0) {
                        return Err(Error::InvalidArgument(format!("item {} has invalid price", item.id)));
                    }
                    match items.get(&(item.market.clone(), item.id)) {
                        Some(prev) if prev != item => {
                            return Err(Error::InvalidArgument(format!(
                                "item id {} is defined twice in market {}",
                                item.id, item.market
                            )))
                        }
                        Some(_) => {}
                        None => {
                            items.insert((item.market.clone(), item.id), item.clone());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn markets(&self) -> BTreeSet<String> {
        self.campaigns.iter().map(|c| c.market.clone()).collect()
    }

    /// Distinct advertiser keywords per market, in first-seen order.
    pub fn keywords(&self, market: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in self.campaigns.iter().filter(|c| c.market == market) {
            for g in &c.ad_groups {
                for k in &g.keywords {
                    if seen.insert(k.as_str()) {
                        out.push(k.clone());
                    }
                }
            }
        }
        out
    }
}
