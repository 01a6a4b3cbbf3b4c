//! VGG Image Annotator (VIA) JSON.
//!
//! Accepts a bare annotation export (`{key: {filename, regions, ...}}`) or a
//! full project file with the same map under `_via_img_metadata`. Regions may
//! be a list (VIA 2) or an index-keyed object (VIA 1).

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{ClassTaxonomy, ImageRecord, Polygon, RegionAnnotation, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ViaOptions {
    /// Region attribute holding the class name.
    pub class_key: String,
    /// Used when an entry carries no `width`/`height` file attributes.
    pub default_width: u32,
    pub default_height: u32,
}

impl Default for ViaOptions {
    fn default() -> Self {
        Self {
            class_key: "food".into(),
            default_width: 512,
            default_height: 512,
        }
    }
}

pub fn parse_via(
    document: &str,
    taxonomy: &ClassTaxonomy,
    options: &ViaOptions,
) -> Result<Vec<ImageRecord>> {
    let root: Value = serde_json::from_str(document).map_err(|e| Error::Parse {
        entry: "<document>".into(),
        message: e.to_string(),
    })?;
    let entries = match root.get("_via_img_metadata") {
        Some(meta) => meta,
        None => &root,
    };
    let entries = entries.as_object().ok_or_else(|| Error::Parse {
        entry: "<document>".into(),
        message: "expected an object of image entries".into(),
    })?;

    let mut unknown = BTreeSet::new();
    let mut records = Vec::with_capacity(entries.len());
    for (key, entry) in entries {
        if let Some(record) = parse_entry(key, entry, taxonomy, options, &mut unknown)? {
            records.push(record);
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Taxonomy {
            names: unknown.into_iter().collect(),
        });
    }
    Ok(records)
}

/// Parses several VIA files (for example one per split) into one record list.
pub fn parse_via_documents<S: AsRef<str>>(
    documents: &[S],
    taxonomy: &ClassTaxonomy,
    options: &ViaOptions,
) -> Result<Vec<ImageRecord>> {
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for doc in documents {
        for record in parse_via(doc.as_ref(), taxonomy, options)? {
            if !seen.insert(record.image_id.clone()) {
                return Err(Error::Parse {
                    entry: record.image_id,
                    message: "image appears in more than one entry".into(),
                });
            }
            all.push(record);
        }
    }
    Ok(all)
}

fn parse_entry(
    key: &str,
    entry: &Value,
    taxonomy: &ClassTaxonomy,
    options: &ViaOptions,
    unknown: &mut BTreeSet<String>,
) -> Result<Option<ImageRecord>> {
    let malformed = |message: &str| Error::Parse {
        entry: key.to_string(),
        message: message.to_string(),
    };
    let entry = entry
        .as_object()
        .ok_or_else(|| malformed("entry is not an object"))?;
    let filename = entry
        .get("filename")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing filename"))?;
    let image_id = Path::new(filename)
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| malformed("filename has no stem"))?
        .to_string();

    let attrs = entry.get("file_attributes").and_then(Value::as_object);
    let dim = |name: &str, default: u32| -> Result<u32> {
        match attrs.and_then(|a| a.get(name)) {
            None => Ok(default),
            Some(v) => as_u32(v).ok_or_else(|| malformed(&format!("bad {name} attribute"))),
        }
    };
    let width = dim("width", options.default_width)?;
    let height = dim("height", options.default_height)?;
    if width == 0 || height == 0 {
        return Err(malformed("image dimensions must be positive"));
    }

    let raw_regions: Vec<(String, &Value)> = match entry.get("regions") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(list)) => list
            .iter()
            .enumerate()
            .map(|(i, r)| (i.to_string(), r))
            .collect(),
        Some(Value::Object(map)) => map.iter().map(|(k, r)| (k.clone(), r)).collect(),
        Some(_) => return Err(malformed("regions must be a list or object")),
    };

    let mut regions = Vec::with_capacity(raw_regions.len());
    for (idx, region) in raw_regions {
        let region_err = |message: &str| Error::Parse {
            entry: format!("{key} region {idx}"),
            message: message.to_string(),
        };
        let shape = region
            .get("shape_attributes")
            .and_then(Value::as_object)
            .ok_or_else(|| region_err("missing shape_attributes"))?;
        if shape.get("name").and_then(Value::as_str) != Some("polygon") {
            return Err(region_err("only polygon shapes are supported"));
        }
        let xs = number_list(shape.get("all_points_x")).ok_or_else(|| region_err("bad all_points_x"))?;
        let ys = number_list(shape.get("all_points_y")).ok_or_else(|| region_err("bad all_points_y"))?;
        if xs.len() != ys.len() {
            return Err(region_err("all_points_x and all_points_y differ in length"));
        }
        if xs.len() < 3 {
            return Err(Error::Annotation {
                image_id: image_id.clone(),
                message: format!("region {idx} has {} points, need at least 3", xs.len()),
            });
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(region_err("non-finite coordinate"));
        }

        let class_name = class_name(region.get("region_attributes"), &options.class_key)
            .ok_or_else(|| region_err(&format!("missing class attribute {:?}", options.class_key)))?;
        let Some(class_id) = taxonomy.id_of(&class_name) else {
            unknown.insert(class_name);
            continue;
        };

        let (w, h) = (f64::from(width), f64::from(height));
        let points = xs
            .into_iter()
            .zip(ys)
            .map(|(x, y)| (x.clamp(0.0, w), y.clamp(0.0, h)))
            .collect();
        let polygon = Polygon::new(points).map_err(|e| Error::Annotation {
            image_id: image_id.clone(),
            message: e.to_string(),
        })?;
        regions.push(RegionAnnotation { polygon, class_id });
    }

    Ok(Some(ImageRecord {
        image_id,
        file_path: filename.to_string(),
        width,
        height,
        regions,
        split: Split::Unassigned,
    }))
}

fn as_u32(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn number_list(v: Option<&Value>) -> Option<Vec<f64>> {
    v?.as_array()?.iter().map(Value::as_f64).collect()
}

/// Class attribute as text. Dropdown/checkbox attributes arrive as
/// `{"rice": true}`; the single checked key is used.
fn class_name(attrs: Option<&Value>, key: &str) -> Option<String> {
    match attrs?.get(key)? {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Object(options) => {
            let mut checked = options
                .iter()
                .filter(|(_, v)| v.as_bool() == Some(true))
                .map(|(k, _)| k.clone());
            let first = checked.next()?;
            checked.next().is_none().then_some(first)
        }
        _ => None,
    }
}

/// Serializes records as a VIA annotation export. Image sizes are kept in
/// `file_attributes` so a re-parse restores them.
pub fn write_via(records: &[ImageRecord], taxonomy: &ClassTaxonomy, class_key: &str) -> String {
    let mut root = Map::new();
    for record in records {
        let regions: Vec<Value> = record
            .regions
            .iter()
            .map(|r| {
                let (xs, ys): (Vec<f64>, Vec<f64>) = r.polygon.points().iter().copied().unzip();
                json!({
                    "shape_attributes": {
                        "name": "polygon",
                        "all_points_x": xs,
                        "all_points_y": ys,
                    },
                    "region_attributes": {
                        class_key: taxonomy.name(r.class_id).unwrap_or_default(),
                    },
                })
            })
            .collect();
        root.insert(
            record.file_path.clone(),
            json!({
                "filename": record.file_path,
                "size": -1,
                "regions": regions,
                "file_attributes": {"width": record.width, "height": record.height},
            }),
        );
    }
    serde_json::to_string_pretty(&Value::Object(root)).expect("json values serialize")
}
