//! Part-class catalog: label merging plus the frequency and size filters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, PartKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogRules {
    /// Fine-grained part name to merged name, e.g. `upper_arm -> arm`.
    pub merge: BTreeMap<String, String>,
    /// Parts with at most this many instances are discarded.
    pub min_count: usize,
    /// Parts whose mean `(w + h) / 2` is at most this many pixels are discarded.
    pub min_mean_size: f64,
}

impl Default for CatalogRules {
    fn default() -> Self {
        CatalogRules {
            merge: BTreeMap::new(),
            min_count: 10,
            min_mean_size: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub object: String,
    pub part: String,
    pub count: usize,
    /// Mean of `(w + h) / 2` over instances, in source pixels.
    pub mean_size: f64,
    /// Mean part area over the mean area of objects of the same class.
    pub normalized_size: f64,
}

impl CatalogEntry {
    pub fn key(&self) -> PartKey {
        PartKey::new(&self.object, &self.part)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartCatalog {
    pub parts: Vec<CatalogEntry>,
    pub discarded: Vec<CatalogEntry>,
}

impl PartCatalog {
    pub fn contains(&self, key: &PartKey) -> bool {
        self.parts.iter().any(|e| e.object == key.object && e.part == key.part)
    }

    pub fn object_classes(&self) -> Vec<String> {
        let mut v: Vec<String> = self.parts.iter().map(|e| e.object.clone()).collect();
        v.dedup();
        v
    }
}

/// Follows merge chains to their end. Names on a cycle resolve to the
/// smallest name of the cycle.
pub fn canonical_part(name: &str, merge: &BTreeMap<String, String>) -> String {
    let mut seen = vec![name.to_string()];
    let mut cur = name.to_string();
    while let Some(next) = merge.get(&cur) {
        if let Some(pos) = seen.iter().position(|s| s == next) {
            return seen[pos..].iter().min().expect("non-empty cycle").clone();
        }
        seen.push(next.clone());
        cur = next.clone();
    }
    cur
}

pub fn filter_catalog(images: &[AnnotatedImage], rules: &CatalogRules) -> PartCatalog {
    #[derive(Default)]
    struct Acc {
        count: usize,
        size: f64,
        area: f64,
    }
    let mut objects: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut parts: BTreeMap<PartKey, Acc> = BTreeMap::new();
    for img in images {
        for o in &img.objects {
            let a = objects.entry(&o.class).or_default();
            a.count += 1;
            a.area += o.bbox.area();
        }
        for p in &img.parts {
            let Some(parent) = img.objects.get(p.parent) else { continue };
            let key = PartKey::new(&parent.class, canonical_part(&p.part_class, &rules.merge));
            let a = parts.entry(key).or_default();
            a.count += 1;
            a.size += (p.bbox.w + p.bbox.h) / 2.0;
            a.area += p.bbox.area();
        }
    }
    let mut catalog = PartCatalog::default();
    for (key, acc) in parts {
        let obj = &objects[key.object.as_str()];
        let mean_area = acc.area / acc.count as f64;
        let entry = CatalogEntry {
            count: acc.count,
            mean_size: acc.size / acc.count as f64,
            normalized_size: mean_area / (obj.area / obj.count as f64),
            object: key.object,
            part: key.part,
        };
        if entry.count <= rules.min_count || entry.mean_size <= rules.min_mean_size {
            catalog.discarded.push(entry);
        } else {
            catalog.parts.push(entry);
        }
    }
    catalog
}

/// Applies the merge table and drops parts that are not in `catalog`.
pub fn relabel(images: &[AnnotatedImage], rules: &CatalogRules, catalog: &PartCatalog) -> Vec<AnnotatedImage> {
    images
        .iter()
        .map(|img| {
            let mut out = img.clone();
            out.parts.retain_mut(|p| {
                p.part_class = canonical_part(&p.part_class, &rules.merge);
                img.objects
                    .get(p.parent)
                    .is_some_and(|o| catalog.contains(&PartKey::new(&o.class, &p.part_class)))
            });
            out
        })
        .collect()
}
