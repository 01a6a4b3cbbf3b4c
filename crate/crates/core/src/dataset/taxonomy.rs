use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric class label. `0` is always background.
pub type ClassId = u8;

pub const BACKGROUND: ClassId = 0;

const FOOD_CLASSES: [&str; 9] = [
    "rice",
    "beans",
    "boiled egg",
    "fried egg",
    "pasta",
    "salad",
    "roasted meat",
    "apple",
    "chicken breast",
];

/// Ordered set of food classes with contiguous ids `1..=K`; id 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    entries: Vec<(ClassId, String)>,
}

impl ClassTaxonomy {
    /// Builds a taxonomy from food class names; ids are assigned `1..=K` in order.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::validation("taxonomy needs at least one food class"));
        }
        if names.len() > usize::from(ClassId::MAX) {
            return Err(Error::validation("too many classes for an 8-bit label mask"));
        }
        let mut entries = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref().trim();
            if name.is_empty() {
                return Err(Error::validation("class names must be non-empty"));
            }
            if entries
                .iter()
                .any(|(_, n): &(ClassId, String)| normalize(n) == normalize(name))
            {
                return Err(Error::validation(format!("duplicate class name {name:?}")));
            }
            entries.push((i as ClassId + 1, name.to_string()));
        }
        Ok(Self { entries })
    }

    /// The nine Brazilian food classes.
    pub fn brazilian_food() -> Self {
        Self::new(&FOOD_CLASSES).expect("built-in taxonomy is valid")
    }

    pub fn background_id(&self) -> ClassId {
        BACKGROUND
    }

    /// Food classes in id order (background excluded).
    pub fn entries(&self) -> &[(ClassId, String)] {
        &self.entries
    }

    pub fn food_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn num_food_classes(&self) -> usize {
        self.entries.len()
    }

    /// Number of labels including background.
    pub fn num_labels(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn contains(&self, id: ClassId) -> bool {
        usize::from(id) <= self.entries.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        if id == BACKGROUND {
            return Some("background");
        }
        self.entries
            .get(usize::from(id) - 1)
            .map(|(_, n)| n.as_str())
    }

    /// Resolves a class name. Matching ignores case and treats `_`/`-` as spaces,
    /// so `"Boiled_Egg"` finds `"boiled egg"`.
    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        let wanted = normalize(name);
        self.entries
            .iter()
            .find(|(_, n)| normalize(n) == wanted)
            .map(|(id, _)| *id)
    }

    /// Parses `taxonomy.txt`: one `id<TAB>name` per line, ids contiguous from 1.
    pub fn parse_manifest(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let entry = format!("taxonomy line {}", lineno + 1);
            let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
                entry: entry.clone(),
                message: "expected `id<TAB>name`".into(),
            })?;
            let id: usize = id.trim().parse().map_err(|_| Error::Parse {
                entry: entry.clone(),
                message: format!("bad class id {id:?}"),
            })?;
            if id == 0 {
                // background row is optional in the manifest
                continue;
            }
            if id != names.len() + 1 {
                return Err(Error::Parse {
                    entry,
                    message: format!("class ids must be contiguous from 1, found {id}"),
                });
            }
            names.push(name.trim().to_string());
        }
        Self::new(&names)
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (id, name) in &self.entries {
            let _ = writeln!(out, "{id}\t{name}");
        }
        out
    }
}

fn normalize(name: &str) -> String {
    name.trim()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}
