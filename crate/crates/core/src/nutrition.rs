//! Portion and nutrient estimates from a segmentation.
//!
//! Mass comes from predicted pixel area times a per-class grams-per-pixel
//! factor. Arithmetic is decimal so that scaling and summing are exact.

use std::collections::{BTreeMap, BTreeSet};
use std::iter::Sum;
use std::ops::Add;
use std::path::Path;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, ClassTaxonomy, BACKGROUND};
use crate::modelhub::PredictionOutput;
use crate::{Error, Result};

const HUNDRED: Decimal = Decimal::ONE_HUNDRED;

/// Energy in kcal, the rest in grams.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nutrients {
    pub kcal: Decimal,
    pub protein: Decimal,
    pub carbohydrate: Decimal,
    pub fat: Decimal,
}

impl Nutrients {
    pub const ZERO: Nutrients = Nutrients {
        kcal: Decimal::ZERO,
        protein: Decimal::ZERO,
        carbohydrate: Decimal::ZERO,
        fat: Decimal::ZERO,
    };

    pub fn scale(&self, k: Decimal) -> Nutrients {
        self.map(|v| v * k)
    }

    /// Rounded half away from zero, for display.
    pub fn rounded(&self, decimals: u32) -> Nutrients {
        self.map(|v| v.round_dp_with_strategy(decimals, rust_decimal::RoundingStrategy::MidpointAwayFromZero))
    }

    fn map(&self, f: impl Fn(Decimal) -> Decimal) -> Nutrients {
        Nutrients {
            kcal: f(self.kcal),
            protein: f(self.protein),
            carbohydrate: f(self.carbohydrate),
            fat: f(self.fat),
        }
    }
}

impl Add for Nutrients {
    type Output = Nutrients;

    fn add(self, o: Nutrients) -> Nutrients {
        Nutrients {
            kcal: self.kcal + o.kcal,
            protein: self.protein + o.protein,
            carbohydrate: self.carbohydrate + o.carbohydrate,
            fat: self.fat + o.fat,
        }
    }
}

impl Sum for Nutrients {
    fn sum<I: Iterator<Item = Nutrients>>(iter: I) -> Nutrients {
        iter.fold(Nutrients::ZERO, Add::add)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NutrientProfile {
    pub class_id: ClassId,
    pub name: String,
    pub per_100g: Nutrients,
}

impl NutrientProfile {
    pub fn for_grams(&self, grams: Decimal) -> Nutrients {
        self.per_100g.scale(grams / HUNDRED)
    }
}

pub type NutritionTable = BTreeMap<ClassId, NutrientProfile>;

/// Parses `class,kcal_100g,protein_100g,carb_100g,fat_100g`. Lines starting
/// with `#` are comments. Every food class of the taxonomy must appear; a
/// repeated class keeps its last row.
pub fn load_nutrition_table(text: &str, taxonomy: &ClassTaxonomy) -> Result<NutritionTable> {
    const COLUMNS: [&str; 5] = ["class", "kcal_100g", "protein_100g", "carb_100g", "fat_100g"];
    let mut table = NutritionTable::new();
    for row in read_csv(text, &COLUMNS, "nutrition table")? {
        let class_id = class_of(taxonomy, &row.fields[0])?;
        let v: Vec<Decimal> = (1..5)
            .map(|k| parse_decimal(&row.fields[k], COLUMNS[k], row.line))
            .collect::<Result<_>>()?;
        if let Some(k) = v.iter().position(|x| x.is_sign_negative()) {
            return Err(Error::validation(format!(
                "nutrition table line {}: {} is negative for {}",
                row.line,
                COLUMNS[k + 1],
                row.fields[0]
            )));
        }
        let profile = NutrientProfile {
            class_id,
            name: taxonomy.name(class_id).unwrap_or_default().to_string(),
            per_100g: Nutrients {
                kcal: v[0],
                protein: v[1],
                carbohydrate: v[2],
                fat: v[3],
            },
        };
        if table.insert(class_id, profile).is_some() {
            log::warn!("nutrition table line {}: {} repeated, keeping this row", row.line, row.fields[0]);
        }
    }
    check_complete(taxonomy, |c| table.contains_key(&c))?;
    Ok(table)
}

pub fn read_nutrition_table(path: &Path, taxonomy: &ClassTaxonomy) -> Result<NutritionTable> {
    load_nutrition_table(&read_text(path)?, taxonomy)
}

/// Grams per predicted pixel, per class, at the image's native resolution.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaCalibration {
    grams_per_pixel: BTreeMap<ClassId, Decimal>,
}

impl AreaCalibration {
    pub fn new(grams_per_pixel: BTreeMap<ClassId, Decimal>) -> Result<Self> {
        if let Some((class, f)) = grams_per_pixel.iter().find(|(_, f)| **f <= Decimal::ZERO) {
            return Err(Error::validation(format!("grams_per_pixel for class {class} must be positive, got {f}")));
        }
        Ok(Self { grams_per_pixel })
    }

    pub fn get(&self, class: ClassId) -> Option<Decimal> {
        self.grams_per_pixel.get(&class).copied()
    }
}

/// Parses `class,grams_per_pixel`; every food class must appear.
pub fn load_calibration(text: &str, taxonomy: &ClassTaxonomy) -> Result<AreaCalibration> {
    let mut factors = BTreeMap::new();
    for row in read_csv(text, &["class", "grams_per_pixel"], "calibration")? {
        let class = class_of(taxonomy, &row.fields[0])?;
        let f = parse_decimal(&row.fields[1], "grams_per_pixel", row.line)?;
        if factors.insert(class, f).is_some() {
            log::warn!("calibration line {}: {} repeated, keeping this row", row.line, row.fields[0]);
        }
    }
    check_complete(taxonomy, |c| factors.contains_key(&c))?;
    AreaCalibration::new(factors)
}

pub fn read_calibration(path: &Path, taxonomy: &ClassTaxonomy) -> Result<AreaCalibration> {
    load_calibration(&read_text(path)?, taxonomy)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MealItem {
    pub class_id: ClassId,
    pub name: String,
    pub pixel_area: u64,
    pub grams: Decimal,
    pub nutrients: Nutrients,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MealEstimate {
    pub items: Vec<MealItem>,
    pub totals: Nutrients,
}

impl MealEstimate {
    pub fn from_items(items: Vec<MealItem>) -> Self {
        let totals = items.iter().map(|i| i.nutrients).sum();
        Self { items, totals }
    }

    /// Overrides an item's mass; its nutrients and the totals follow.
    pub fn set_grams(&mut self, index: usize, grams: Decimal, table: &NutritionTable) -> Result<()> {
        if grams.is_sign_negative() {
            return Err(Error::validation(format!("grams must not be negative, got {grams}")));
        }
        let item = self.item(index)?;
        let nutrients = profile(table, item.class_id)?.for_grams(grams);
        let item = &mut self.items[index];
        item.grams = grams;
        item.nutrients = nutrients;
        self.retotal();
        Ok(())
    }

    /// Reassigns an item to another class at the same mass.
    pub fn set_class(&mut self, index: usize, class: ClassId, table: &NutritionTable) -> Result<()> {
        self.item(index)?;
        let p = profile(table, class)?;
        let item = &mut self.items[index];
        item.nutrients = p.for_grams(item.grams);
        item.class_id = class;
        item.name = p.name.clone();
        self.retotal();
        Ok(())
    }

    pub fn remove_item(&mut self, index: usize) -> Result<MealItem> {
        self.item(index)?;
        let item = self.items.remove(index);
        self.retotal();
        Ok(item)
    }

    /// Checks that the totals are the sum of the items and that every item's
    /// nutrients follow from its grams.
    pub fn check(&self, table: &NutritionTable) -> Result<()> {
        for (i, item) in self.items.iter().enumerate() {
            if profile(table, item.class_id)?.for_grams(item.grams) != item.nutrients {
                return Err(Error::validation(format!("item {i} nutrients do not match its grams")));
            }
        }
        if self.items.iter().map(|i| i.nutrients).sum::<Nutrients>() != self.totals {
            return Err(Error::validation("totals are not the sum of the items"));
        }
        Ok(())
    }

    /// Same meal with every figure rounded to one decimal.
    pub fn rounded(&self) -> MealEstimate {
        MealEstimate {
            items: self
                .items
                .iter()
                .map(|i| MealItem {
                    grams: i.grams.round_dp(1),
                    nutrients: i.nutrients.rounded(1),
                    ..i.clone()
                })
                .collect(),
            totals: self.totals.rounded(1),
        }
    }

    fn item(&self, index: usize) -> Result<&MealItem> {
        self.items
            .get(index)
            .ok_or_else(|| Error::validation(format!("no item {index} in a meal of {}", self.items.len())))
    }

    fn retotal(&mut self) {
        self.totals = self.items.iter().map(|i| i.nutrients).sum();
    }
}

/// One item per food class with a nonzero predicted area, in class order.
pub fn estimate_meal(pred: &PredictionOutput, table: &NutritionTable, calib: &AreaCalibration) -> Result<MealEstimate> {
    let mut areas = BTreeMap::new();
    for &c in pred.label_mask.values() {
        if c != BACKGROUND {
            *areas.entry(c).or_insert(0u64) += 1;
        }
    }
    estimate_from_areas(&areas, table, calib)
}

/// As [`estimate_meal`], from per-class pixel areas.
pub fn estimate_from_areas(
    areas: &BTreeMap<ClassId, u64>,
    table: &NutritionTable,
    calib: &AreaCalibration,
) -> Result<MealEstimate> {
    let mut items = Vec::new();
    for (&class, &pixel_area) in areas {
        if class == BACKGROUND || pixel_area == 0 {
            continue;
        }
        let p = profile(table, class)?;
        let factor = calib.get(class).ok_or_else(|| Error::Estimation {
            class: p.name.clone(),
            message: "no area calibration".into(),
        })?;
        let grams = Decimal::from(pixel_area)
            .checked_mul(factor)
            .ok_or_else(|| Error::Estimation {
                class: p.name.clone(),
                message: "mass overflows".into(),
            })?;
        items.push(MealItem {
            class_id: class,
            name: p.name.clone(),
            pixel_area,
            grams,
            nutrients: p.for_grams(grams),
        });
    }
    Ok(MealEstimate::from_items(items))
}

fn profile(table: &NutritionTable, class: ClassId) -> Result<&NutrientProfile> {
    table.get(&class).ok_or_else(|| Error::Estimation {
        class: format!("class {class}"),
        message: "not in the nutrition table".into(),
    })
}

struct CsvRow {
    line: u64,
    fields: Vec<String>,
}

fn read_csv(text: &str, columns: &[&str], what: &str) -> Result<Vec<CsvRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != columns {
        return Err(Error::Parse {
            entry: what.into(),
            message: format!("expected header {}, got {}", columns.join(","), header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != columns.len() {
            return Err(Error::Parse {
                entry: format!("{what} line {line}"),
                message: format!("expected {} fields, got {}", columns.len(), record.len()),
            });
        }
        rows.push(CsvRow {
            line,
            fields: record.iter().map(str::to_string).collect(),
        });
    }
    Ok(rows)
}

fn class_of(taxonomy: &ClassTaxonomy, name: &str) -> Result<ClassId> {
    taxonomy
        .id_of(name)
        .filter(|&c| c != BACKGROUND)
        .ok_or_else(|| Error::Taxonomy {
            names: vec![name.to_string()],
        })
}

fn parse_decimal(s: &str, column: &str, line: u64) -> Result<Decimal> {
    Decimal::from_str(s)
        .or_else(|_| Decimal::from_scientific(s))
        .map_err(|e| Error::Parse {
            entry: format!("line {line}, {column}"),
            message: format!("{s:?}: {e}"),
        })
}

fn check_complete(taxonomy: &ClassTaxonomy, has: impl Fn(ClassId) -> bool) -> Result<()> {
    let missing: BTreeSet<ClassId> = taxonomy.food_ids().filter(|&c| !has(c)).collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(Error::Completeness {
        classes: missing
            .into_iter()
            .map(|c| taxonomy.name(c).unwrap_or_default().to_string())
            .collect(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
