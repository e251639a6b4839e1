//! The urban class set and remapping of source-dataset labels onto it.
//!
//! Mapping files are plain text, one statement per line:
//!
//! ```text
//! # comments start with '#'
//! source = SensatUrban
//! universe = 0-4, 7
//! 0 = Terrain
//! 1 = Vegetation
//! 2 = Building
//! 3 = Building
//! 4 = Street Elements
//! 7 = Water
//! ```
//!
//! `universe` lists every id the source dataset may emit, as comma separated
//! ids or inclusive `a-b` ranges. Every id in the universe needs exactly one
//! `id = class` entry. Class names are matched case-insensitively, ignoring
//! spaces and underscores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Number of semantic (non-Unassigned) classes.
pub const NUM_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassId {
    Unassigned = 0,
    Soil = 1,
    Terrain = 2,
    Vegetation = 3,
    Building = 4,
    StreetElements = 5,
    Water = 6,
}

impl ClassId {
    pub const ALL: [ClassId; 7] = [
        ClassId::Unassigned,
        ClassId::Soil,
        ClassId::Terrain,
        ClassId::Vegetation,
        ClassId::Building,
        ClassId::StreetElements,
        ClassId::Water,
    ];

    /// The six classes used for training and evaluation, in canonical order.
    pub const SEMANTIC: [ClassId; NUM_CLASSES] = [
        ClassId::Soil,
        ClassId::Terrain,
        ClassId::Vegetation,
        ClassId::Building,
        ClassId::StreetElements,
        ClassId::Water,
    ];

    pub fn from_u8(value: u8) -> Option<ClassId> {
        ClassId::ALL.get(value as usize).copied()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// Column of this class in a probability row (`Soil` is 0). `None` for Unassigned.
    pub fn semantic_index(self) -> Option<usize> {
        match self {
            ClassId::Unassigned => None,
            c => Some(c as usize - 1),
        }
    }

    pub fn from_semantic_index(index: usize) -> Option<ClassId> {
        ClassId::SEMANTIC.get(index).copied()
    }

    pub fn is_semantic(self) -> bool {
        self != ClassId::Unassigned
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Unassigned => "Unassigned",
            ClassId::Soil => "Soil",
            ClassId::Terrain => "Terrain",
            ClassId::Vegetation => "Vegetation",
            ClassId::Building => "Building",
            ClassId::StreetElements => "Street Elements",
            ClassId::Water => "Water",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        let class = match key.as_str() {
            "unassigned" => ClassId::Unassigned,
            "soil" => ClassId::Soil,
            "terrain" => ClassId::Terrain,
            "vegetation" => ClassId::Vegetation,
            "building" => ClassId::Building,
            "streetelements" | "streetelement" => ClassId::StreetElements,
            "water" => ClassId::Water,
            _ => {
                if let Ok(n) = key.parse::<u8>() {
                    return ClassId::from_u8(n)
                        .ok_or_else(|| Error::Validation(format!("unknown class id {n}")));
                }
                return Err(Error::Validation(format!("unknown class name `{s}`")));
            }
        };
        Ok(class)
    }
}

/// A map from one source dataset's class ids into [`ClassId`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub source_name: String,
    pub entries: BTreeMap<u32, ClassId>,
    pub universe: BTreeSet<u32>,
}

impl LabelMapping {
    pub fn new(
        source_name: impl Into<String>,
        universe: impl IntoIterator<Item = u32>,
        entries: impl IntoIterator<Item = (u32, ClassId)>,
    ) -> Self {
        LabelMapping {
            source_name: source_name.into(),
            universe: universe.into_iter().collect(),
            entries: entries.into_iter().collect(),
        }
    }

    /// The identity map over the seven class values.
    pub fn identity() -> Self {
        LabelMapping::new(
            "identity",
            ClassId::ALL.iter().map(|c| c.as_u8() as u32),
            ClassId::ALL.iter().map(|&c| (c.as_u8() as u32, c)),
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut source_name = None;
        let mut universe: Option<BTreeSet<u32>> = None;
        let mut entries = BTreeMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                reason: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "source" => {
                    if source_name.replace(value.to_string()).is_some() {
                        return Err(Error::Parse {
                            line,
                            reason: "duplicate `source` line".into(),
                        });
                    }
                }
                "universe" => {
                    let ids = parse_id_list(value).map_err(|reason| Error::Parse { line, reason })?;
                    if universe.replace(ids).is_some() {
                        return Err(Error::Parse {
                            line,
                            reason: "duplicate `universe` line".into(),
                        });
                    }
                }
                _ => {
                    let id: u32 = key.parse().map_err(|_| Error::Parse {
                        line,
                        reason: format!("`{key}` is neither a keyword nor a source id"),
                    })?;
                    let class: ClassId = value.parse().map_err(|e: Error| Error::Parse {
                        line,
                        reason: e.to_string(),
                    })?;
                    if entries.insert(id, class).is_some() {
                        return Err(Error::Parse {
                            line,
                            reason: format!("source id {id} is mapped more than once"),
                        });
                    }
                }
            }
        }

        let universe = universe.ok_or_else(|| Error::Parse {
            line: 0,
            reason: "mapping declares no `universe`".into(),
        })?;
        Ok(LabelMapping {
            source_name: source_name.unwrap_or_else(|| "unnamed".into()),
            entries,
            universe,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelMapping::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("source = {}\n", self.source_name);
        let ids: Vec<String> = self.universe.iter().map(u32::to_string).collect();
        out.push_str(&format!("universe = {}\n", ids.join(", ")));
        for (id, class) in &self.entries {
            out.push_str(&format!("{id} = {class}\n"));
        }
        out
    }
}

fn parse_id_list(value: &str) -> std::result::Result<BTreeSet<u32>, String> {
    let mut ids = BTreeSet::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: u32 = lo.trim().parse().map_err(|_| format!("bad range start in `{part}`"))?;
            let hi: u32 = hi.trim().parse().map_err(|_| format!("bad range end in `{part}`"))?;
            if lo > hi {
                return Err(format!("empty range `{part}`"));
            }
            ids.extend(lo..=hi);
        } else {
            ids.insert(part.parse().map_err(|_| format!("bad id `{part}`"))?);
        }
    }
    Ok(ids)
}

/// Checks that the mapping is a total function on its declared universe.
pub fn validate_mapping(mapping: &LabelMapping) -> Result<()> {
    let missing: Vec<u32> = mapping
        .universe
        .iter()
        .filter(|id| !mapping.entries.contains_key(id))
        .copied()
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::IncompleteMapping {
            source_name: mapping.source_name.clone(),
            missing,
        })
    }
}

pub fn remap_labels(labels: &[u32], mapping: &LabelMapping) -> Result<Vec<ClassId>> {
    labels
        .iter()
        .enumerate()
        .map(|(index, &id)| {
            if !mapping.universe.contains(&id) {
                return Err(Error::LabelDomain { id, index });
            }
            mapping
                .entries
                .get(&id)
                .copied()
                .ok_or(Error::LabelDomain { id, index })
        })
        .collect()
}

/// Indices of all points whose label is not Unassigned, ascending.
pub fn mask_unassigned(cloud: &PointCloud) -> Result<Vec<usize>> {
    let labels = cloud.labels.as_ref().ok_or(Error::MissingColumn("label"))?;
    Ok(assigned_indices(labels))
}

pub fn assigned_indices(labels: &[ClassId]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_semantic())
        .map(|(i, _)| i)
        .collect()
}
