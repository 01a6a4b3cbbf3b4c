//! Meal diary persisted as an append-only JSON-lines journal.
//!
//! Each line stores the full current state of one entry; the last line for
//! an id wins. The journal is rewritten without superseded lines on open and
//! once it grows past twice the live entry count.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use myfood_core::dataset::{ClassId, ClassTaxonomy};
use myfood_core::nutrition::{MealEstimate, NutritionTable, Nutrients};
use myfood_core::{Error, Result};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Journal lines beyond the live entries tolerated before compaction.
const COMPACT_SLACK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditField {
    Grams,
    ClassId,
}

/// A requested change to one meal item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub item: usize,
    pub field: EditField,
    /// Grams as a number; a class as its id or name.
    pub value: Value,
}

/// An applied change, as recorded in the entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserEdit {
    pub item: usize,
    pub field: EditField,
    pub old: Value,
    pub new: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiaryEntry {
    pub entry_id: String,
    pub timestamp: DateTime<Utc>,
    pub image_ref: String,
    pub meal: MealEstimate,
    #[serde(default)]
    pub user_edits: Vec<UserEdit>,
}

impl DiaryEntry {
    /// Applies edits in order to a copy. On any failure the entry is left
    /// untouched and the error names the offending edit.
    pub fn with_edits(&self, edits: &[EditRequest], table: &NutritionTable, taxonomy: &ClassTaxonomy) -> Result<DiaryEntry> {
        let mut next = self.clone();
        for (n, edit) in edits.iter().enumerate() {
            let fail = |m: String| Error::Validation(format!("edit {n}: {m}"));
            let item = next
                .meal
                .items
                .get(edit.item)
                .ok_or_else(|| fail(format!("no item {} in a meal of {}", edit.item, next.meal.items.len())))?;
            let (old, new) = match edit.field {
                EditField::Grams => {
                    let grams = decimal_of(&edit.value).ok_or_else(|| fail(format!("grams must be a number, got {}", edit.value)))?;
                    let old = decimal_value(item.grams);
                    next.meal.set_grams(edit.item, grams, table).map_err(|e| fail(e.to_string()))?;
                    (old, decimal_value(grams))
                }
                EditField::ClassId => {
                    let class = class_of(&edit.value, taxonomy).ok_or_else(|| fail(format!("unknown class {}", edit.value)))?;
                    let old = Value::from(item.class_id);
                    next.meal.set_class(edit.item, class, table).map_err(|e| fail(e.to_string()))?;
                    (old, Value::from(class))
                }
            };
            next.user_edits.push(UserEdit {
                item: edit.item,
                field: edit.field,
                old,
                new,
            });
        }
        Ok(next)
    }
}

fn decimal_of(v: &Value) -> Option<Decimal> {
    let n = v.as_number()?.to_string();
    Decimal::from_str(&n).or_else(|_| Decimal::from_scientific(&n)).ok()
}

fn decimal_value(d: Decimal) -> Value {
    serde_json::to_value(d).expect("decimal serializes")
}

fn class_of(v: &Value, taxonomy: &ClassTaxonomy) -> Option<ClassId> {
    let id = match v {
        Value::Number(n) => ClassId::try_from(n.as_u64()?).ok()?,
        Value::String(s) => taxonomy.id_of(s)?,
        _ => return None,
    };
    (id != myfood_core::dataset::BACKGROUND && taxonomy.contains(id)).then_some(id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyTotal {
    pub date: NaiveDate,
    pub entries: usize,
    pub totals: Nutrients,
}

/// Totals per UTC calendar day, in date order.
pub fn daily_totals<'a>(entries: impl IntoIterator<Item = &'a DiaryEntry>) -> Vec<DailyTotal> {
    let mut days: BTreeMap<NaiveDate, DailyTotal> = BTreeMap::new();
    for e in entries {
        let date = e.timestamp.date_naive();
        let day = days.entry(date).or_insert(DailyTotal {
            date,
            entries: 0,
            totals: Nutrients::ZERO,
        });
        day.entries += 1;
        day.totals = day.totals + e.meal.totals;
    }
    days.into_values().collect()
}

pub struct DiaryStore {
    path: PathBuf,
    entries: BTreeMap<String, DiaryEntry>,
    journal: File,
    journal_lines: usize,
}

impl DiaryStore {
    /// Opens or creates the journal. A malformed final line (an interrupted
    /// append) is dropped with a warning; malformed earlier lines are errors.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut lines = 0;
        if path.exists() {
            let file = File::open(path).map_err(|e| io(path, e))?;
            let all: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| io(path, e))?;
            let last = all.len();
            for (n, line) in all.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<DiaryEntry>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.entry_id.clone(), entry);
                        lines += 1;
                    }
                    Err(e) if n + 1 == last => {
                        log::warn!("{}: dropping incomplete last line: {e}", path.display());
                        lines += 1;
                    }
                    Err(e) => {
                        return Err(Error::Parse {
                            entry: format!("{}:{}", path.display(), n + 1),
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let journal = append_handle(path)?;
        let mut store = Self {
            path: path.to_path_buf(),
            entries,
            journal,
            journal_lines: lines,
        };
        if store.journal_lines > store.entries.len() {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DiaryEntry> {
        self.entries.get(id)
    }

    /// Adds a new entry; its id must be unused.
    pub fn insert(&mut self, entry: DiaryEntry) -> Result<()> {
        if self.entries.contains_key(&entry.entry_id) {
            return Err(Error::Validation(format!("entry {} already exists", entry.entry_id)));
        }
        self.put(entry)
    }

    /// Replaces an existing entry.
    pub fn replace(&mut self, entry: DiaryEntry) -> Result<()> {
        if !self.entries.contains_key(&entry.entry_id) {
            return Err(Error::Lookup(entry.entry_id));
        }
        self.put(entry)
    }

    /// Entries with `from <= timestamp <= to`, in timestamp order.
    pub fn range(&self, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Vec<&DiaryEntry> {
        let mut out: Vec<&DiaryEntry> = self
            .entries
            .values()
            .filter(|e| from.is_none_or(|f| e.timestamp >= f) && to.is_none_or(|t| e.timestamp <= t))
            .collect();
        out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.entry_id.cmp(&b.entry_id)));
        out
    }

    /// Rewrites the journal with one line per live entry.
    pub fn compact(&mut self) -> Result<()> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut f = File::create(&tmp).map_err(|e| io(&tmp, e))?;
            for entry in self.entries.values() {
                writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| io(&tmp, e))?;
            }
            f.sync_all().map_err(|e| io(&tmp, e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| io(&self.path, e))?;
        self.journal = append_handle(&self.path)?;
        self.journal_lines = self.entries.len();
        Ok(())
    }

    /// Writes the journal line first; memory changes only once it is durable.
    fn put(&mut self, entry: DiaryEntry) -> Result<()> {
        let line = serde_json::to_string(&entry)?;
        self.journal
            .write_all(format!("{line}\n").as_bytes())
            .and_then(|()| self.journal.sync_data())
            .map_err(|e| io(&self.path, e))?;
        self.journal_lines += 1;
        self.entries.insert(entry.entry_id.clone(), entry);
        if self.journal_lines > 2 * self.entries.len() + COMPACT_SLACK {
            self.compact()?;
        }
        Ok(())
    }
}

fn append_handle(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io(path, e))
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use myfood_core::nutrition::{estimate_from_areas, load_nutrition_table, AreaCalibration};

    fn table() -> NutritionTable {
        let mut s = String::from("class,kcal_100g,protein_100g,carb_100g,fat_100g\n");
        for (_, name) in ClassTaxonomy::brazilian_food().entries() {
            s.push_str(&format!("{name},130,2.5,28.1,0.3\n"));
        }
        s = s.replace("pasta,130", "pasta,158");
        load_nutrition_table(&s, &ClassTaxonomy::brazilian_food()).unwrap()
    }

    fn entry(id: &str, ts: &str) -> DiaryEntry {
        let calib = AreaCalibration::new((1..=9).map(|c| (c, Decimal::new(3, 3))).collect()).unwrap();
        let meal = estimate_from_areas(&BTreeMap::from([(1, 1000), (2, 500)]), &table(), &calib).unwrap();
        DiaryEntry {
            entry_id: id.into(),
            timestamp: ts.parse().unwrap(),
            image_ref: format!("{id}.png"),
            meal,
            user_edits: vec![],
        }
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diary.jsonl");
        let a = entry("a", "2026-03-01T12:00:00Z");
        {
            let mut s = DiaryStore::open(&path).unwrap();
            s.insert(a.clone()).unwrap();
            assert!(s.insert(a.clone()).is_err());
        }
        let s = DiaryStore::open(&path).unwrap();
        assert_eq!(s.get("a"), Some(&a));
    }

    #[test]
    fn replacement_wins_and_compacts_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diary.jsonl");
        let mut a = entry("a", "2026-03-01T12:00:00Z");
        {
            let mut s = DiaryStore::open(&path).unwrap();
            s.insert(a.clone()).unwrap();
            a.image_ref = "changed".into();
            s.replace(a.clone()).unwrap();
            assert!(s.replace(entry("zzz", "2026-03-01T12:00:00Z")).is_err());
        }
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
        let s = DiaryStore::open(&path).unwrap();
        assert_eq!(s.get("a").unwrap().image_ref, "changed");
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn many_updates_trigger_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diary.jsonl");
        let mut s = DiaryStore::open(&path).unwrap();
        let mut a = entry("a", "2026-03-01T12:00:00Z");
        s.insert(a.clone()).unwrap();
        for i in 0..200 {
            a.image_ref = i.to_string();
            s.replace(a.clone()).unwrap();
        }
        assert!(fs::read_to_string(&path).unwrap().lines().count() <= 2 + COMPACT_SLACK + 1);
        drop(s);
        assert_eq!(DiaryStore::open(&path).unwrap().get("a").unwrap().image_ref, "199");
    }

    #[test]
    fn torn_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diary.jsonl");
        let a = entry("a", "2026-03-01T12:00:00Z");
        fs::write(&path, format!("{}\n{{\"entry_id\":\"b\",", serde_json::to_string(&a).unwrap())).unwrap();
        let s = DiaryStore::open(&path).unwrap();
        assert_eq!(s.len(), 1);
        fs::write(&path, format!("garbage\n{}\n", serde_json::to_string(&a).unwrap())).unwrap();
        assert!(matches!(DiaryStore::open(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn range_and_daily_totals() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = DiaryStore::open(&dir.path().join("d.jsonl")).unwrap();
        s.insert(entry("late", "2026-03-01T20:00:00Z")).unwrap();
        s.insert(entry("early", "2026-03-01T08:00:00Z")).unwrap();
        s.insert(entry("next", "2026-03-02T08:00:00Z")).unwrap();
        let all = s.range(None, None);
        let ids: Vec<&str> = all.iter().map(|e| e.entry_id.as_str()).collect();
        assert_eq!(ids, ["early", "late", "next"]);
        let days = daily_totals(all.iter().copied());
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].entries, 2);
        assert_eq!(days[0].totals, all[0].meal.totals + all[1].meal.totals);
        let from = "2026-03-02T00:00:00Z".parse().ok();
        assert_eq!(s.range(from, None).len(), 1);
        let to = "2026-02-01T00:00:00Z".parse().ok();
        assert!(s.range(from, to).is_empty());
    }

    #[test]
    fn edits_apply_atomically() {
        let tax = ClassTaxonomy::brazilian_food();
        let e = entry("a", "2026-03-01T12:00:00Z");
        let double = EditRequest {
            item: 0,
            field: EditField::Grams,
            value: serde_json::json!(6.0),
        };
        let edited = e.with_edits(std::slice::from_ref(&double), &table(), &tax).unwrap();
        assert_eq!(edited.meal.items[0].nutrients, e.meal.items[0].nutrients.scale(Decimal::TWO));
        assert_eq!(edited.meal.totals, edited.meal.items[0].nutrients + edited.meal.items[1].nutrients);
        assert_eq!(edited.user_edits.len(), 1);
        assert_eq!(decimal_of(&edited.user_edits[0].old), Some(Decimal::from(3)));

        let rename = EditRequest {
            item: 1,
            field: EditField::ClassId,
            value: serde_json::json!("pasta"),
        };
        let edited = e.with_edits(&[rename], &table(), &tax).unwrap();
        assert_eq!(edited.meal.items[1].name, "pasta");

        let bad = EditRequest {
            item: 5,
            field: EditField::Grams,
            value: serde_json::json!(1),
        };
        assert!(e.with_edits(&[double, bad], &table(), &tax).is_err());
        for value in [serde_json::json!("ten"), serde_json::json!(-1)] {
            let edit = EditRequest { item: 0, field: EditField::Grams, value };
            assert!(e.with_edits(&[edit], &table(), &tax).is_err());
        }
        for value in [serde_json::json!(0), serde_json::json!("pizza"), serde_json::json!(true)] {
            let edit = EditRequest { item: 0, field: EditField::ClassId, value };
            assert!(e.with_edits(&[edit], &table(), &tax).is_err());
        }
    }
}
