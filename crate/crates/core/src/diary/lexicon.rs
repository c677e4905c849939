use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivityCode, DiaryError, LocationId, Result};

/// Code and location vocabularies.
///
/// An empty `activities` map accepts any code whose major category is
/// registered; an empty `locations` map accepts any location id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    #[serde(default)]
    pub activities: BTreeMap<ActivityCode, String>,
    #[serde(default)]
    pub locations: BTreeMap<LocationId, String>,
    #[serde(default = "default_categories")]
    pub categories: BTreeMap<u8, String>,
    /// Code emitted for synthesized travel between locations.
    #[serde(default = "default_travel_code")]
    pub travel_code: ActivityCode,
    /// Major category whose records are treated as travel.
    #[serde(default = "default_travel_category")]
    pub travel_category: u8,
    /// Codes excluded when ranking a class's dominant activity. Defaults to
    /// the `0101xx` sleeping codes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleep_codes: Option<BTreeSet<ActivityCode>>,
}

fn default_categories() -> BTreeMap<u8, String> {
    [
        (1, "personal care"),
        (2, "household"),
        (3, "caring for household members"),
        (4, "caring for nonhousehold members"),
        (5, "work"),
        (6, "education"),
        (7, "consumer purchases"),
        (8, "professional and personal care services"),
        (9, "household services"),
        (10, "government services and civic obligations"),
        (11, "eating and drinking"),
        (12, "socializing, relaxing and leisure"),
        (13, "sports, exercise and recreation"),
        (14, "religious and spiritual"),
        (15, "volunteer"),
        (16, "telephone calls"),
        (18, "travel"),
        (50, "data codes"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_owned()))
    .collect()
}

fn default_travel_code() -> ActivityCode {
    ActivityCode(189_999)
}

fn default_travel_category() -> u8 {
    18
}

impl Default for Lexicons {
    fn default() -> Self {
        Self {
            activities: BTreeMap::new(),
            locations: BTreeMap::new(),
            categories: default_categories(),
            travel_code: default_travel_code(),
            travel_category: default_travel_category(),
            sleep_codes: None,
        }
    }
}

impl Lexicons {
    pub fn from_json(text: &str) -> Result<Self> {
        let lex: Lexicons = serde_json::from_str(text)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for code in self.activities.keys().chain(std::iter::once(&self.travel_code)) {
            if !self.categories.contains_key(&code.major_category()) {
                return Err(DiaryError::UnregisteredCategory {
                    code: code.value(),
                    category: code.major_category(),
                });
            }
        }
        if self.travel_code.major_category() != self.travel_category {
            return Err(DiaryError::InvalidSpec(format!(
                "travel code {} is outside travel category {}",
                self.travel_code, self.travel_category
            )));
        }
        Ok(())
    }

    pub fn knows_code(&self, code: ActivityCode) -> bool {
        if self.activities.is_empty() {
            self.categories.contains_key(&code.major_category())
        } else {
            self.activities.contains_key(&code) || code == self.travel_code
        }
    }

    pub fn knows_location(&self, loc: LocationId) -> bool {
        self.locations.is_empty() || self.locations.contains_key(&loc)
    }

    pub fn is_travel(&self, code: ActivityCode) -> bool {
        code.major_category() == self.travel_category
    }

    pub fn is_sleep(&self, code: ActivityCode) -> bool {
        match &self.sleep_codes {
            Some(set) => set.contains(&code),
            None => code.value() / 100 == 101,
        }
    }

    pub fn category_label(&self, category: u8) -> String {
        self.categories
            .get(&category)
            .cloned()
            .unwrap_or_else(|| format!("category {category:02}"))
    }
}
