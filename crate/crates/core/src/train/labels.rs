//! Raw emotion labels to class indices.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::CLASSES;

/// Case-insensitive alias table onto the five classes. Anything not listed
/// is rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    aliases: BTreeMap<String, usize>,
}

impl Default for LabelMap {
    fn default() -> Self {
        let groups: [&[&str]; 5] = [
            &["ang", "anger", "angry"],
            &["hap", "happy", "happiness", "exc", "excited", "excitement"],
            &["sad", "sadness"],
            &["neu", "neutral"],
            &["fru", "frustrated", "frustration"],
        ];
        let aliases = groups
            .iter()
            .enumerate()
            .flat_map(|(c, names)| names.iter().map(move |n| (n.to_string(), c)))
            .collect();
        Self { aliases }
    }
}

impl LabelMap {
    /// Adds or overrides an alias, e.g. `("joy", "Hap")`.
    pub fn with_alias(mut self, raw: &str, class: &str) -> Result<Self> {
        let c = class_index(class)?;
        self.aliases.insert(raw.trim().to_ascii_lowercase(), c);
        Ok(self)
    }

    pub fn map(&self, raw: &str) -> Result<usize> {
        self.aliases
            .get(&raw.trim().to_ascii_lowercase())
            .copied()
            .ok_or_else(|| Error::Label(raw.to_string()))
    }
}

/// Index of a canonical class name (`Ang`, `Hap`, ...), case-insensitive.
pub fn class_index(name: &str) -> Result<usize> {
    CLASSES
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| Error::Label(name.to_string()))
}
