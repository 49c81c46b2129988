//! Word-category lexicon and category-count text features.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::util::split_tokens;

/// Category name -> word set. Words are stored lowercase; a token may belong
/// to several categories and then increments each of their counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconSpec {
    categories: BTreeMap<String, BTreeSet<String>>,
}

impl LexiconSpec {
    pub fn new(raw: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if raw.is_empty() {
            return Err(CoreError::Config("lexicon has no categories".into()));
        }
        let mut categories = BTreeMap::new();
        for (name, words) in raw {
            if words.is_empty() {
                return Err(CoreError::Config(format!("lexicon category {name} is empty")));
            }
            let set: BTreeSet<String> = words.into_iter().map(|w| w.to_lowercase()).collect();
            categories.insert(name, set);
        }
        Ok(LexiconSpec { categories })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
        LexiconSpec::new(raw)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let raw: BTreeMap<&String, Vec<&String>> = self
            .categories
            .iter()
            .map(|(k, v)| (k, v.iter().collect()))
            .collect();
        let text = serde_json::to_string_pretty(&raw)
            .map_err(|e| CoreError::Data(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Category names in stable (sorted) order; this is the feature order of
    /// [`LexiconSpec::count_features`].
    pub fn category_names(&self) -> Vec<String> {
        self.categories.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Words of one category, sorted.
    pub fn words(&self, category: &str) -> Option<Vec<String>> {
        self.categories
            .get(category)
            .map(|set| set.iter().cloned().collect())
    }

    /// Per-category count of tokens in `text` belonging to that category.
    pub fn count_features(&self, text: &str) -> Vec<f64> {
        let tokens = split_tokens(text);
        self.categories
            .values()
            .map(|words| tokens.iter().filter(|t| words.contains(*t)).count() as f64)
            .collect()
    }
}
