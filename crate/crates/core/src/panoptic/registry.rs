//! Class registry: id, name, thing/stuff kind, traversability, traversal cost.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassId = u8;

/// Reserved id for "no conclusive class". Treated as potentially dynamic and
/// non-traversable everywhere.
pub const UNKNOWN_CLASS: ClassId = 0;

/// Reserved marker stamped into the dynamic map layer for tracked objects
/// whose class was never conclusively determined. Not a registry entry and
/// never present in masks; always non-traversable.
pub const UNKNOWN_OBJECT_CLASS: ClassId = 255;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("duplicate class id {0}")]
    DuplicateClassId(ClassId),
    #[error("registry has no 'unknown' entry with id 0")]
    MissingUnknownClass,
    #[error("class '{0}' has negative traverse cost")]
    NegativeCost(String),
    #[error("class '{name}': {msg}")]
    InvalidEntry { name: String, msg: String },
    #[error("registry parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
    pub traversable: bool,
    pub cost: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryDoc {
    class: Vec<ClassSpec>,
}

/// Immutable class registry with deterministic iteration order by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRegistry {
    specs: Vec<ClassSpec>,
    index: [Option<u16>; 256],
}

const DEFAULT_REGISTRY_TOML: &str = include_str!("../../assets/registry.toml");

impl ClassRegistry {
    /// The bundled construction taxonomy: 34 classes plus "unknown".
    pub fn default_construction() -> Self {
        Self::from_toml_str(DEFAULT_REGISTRY_TOML).expect("bundled registry is valid")
    }

    pub fn from_specs(mut specs: Vec<ClassSpec>) -> Result<Self, RegistryError> {
        specs.sort_by_key(|s| s.id);
        let mut index = [None; 256];
        for (i, spec) in specs.iter().enumerate() {
            if index[spec.id as usize].is_some() {
                return Err(RegistryError::DuplicateClassId(spec.id));
            }
            index[spec.id as usize] = Some(i as u16);
            if !spec.cost.is_finite() {
                return Err(RegistryError::InvalidEntry {
                    name: spec.name.clone(),
                    msg: "traverse cost must be finite".into(),
                });
            }
            if spec.cost < 0.0 {
                return Err(RegistryError::NegativeCost(spec.name.clone()));
            }
            if spec.cost == 0.0 && !spec.traversable {
                return Err(RegistryError::InvalidEntry {
                    name: spec.name.clone(),
                    msg: "zero cost is only allowed for traversable classes".into(),
                });
            }
        }
        match specs.iter().find(|s| s.id == UNKNOWN_CLASS) {
            None => return Err(RegistryError::MissingUnknownClass),
            Some(u) if u.traversable => {
                return Err(RegistryError::InvalidEntry {
                    name: u.name.clone(),
                    msg: "unknown class must be non-traversable".into(),
                })
            }
            _ => {}
        }
        Ok(Self { specs, index })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RegistryError> {
        let doc: RegistryDoc =
            toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::from_specs(doc.class)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegistryError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = RegistryDoc {
            class: self.specs.clone(),
        };
        toml::to_string(&doc).expect("registry serializes")
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Classes in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &ClassSpec> {
        self.specs.iter()
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassSpec> {
        self.index[id as usize].map(|i| &self.specs[i as usize])
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.index[id as usize].is_some()
    }

    pub fn is_thing(&self, id: ClassId) -> bool {
        self.get(id).map_or(false, |s| s.kind == ClassKind::Thing)
    }

    /// Unknown and unknown-object ids are never traversable, registry or not.
    pub fn traversable(&self, id: ClassId) -> bool {
        if id == UNKNOWN_CLASS || id == UNKNOWN_OBJECT_CLASS {
            return false;
        }
        self.get(id).map_or(false, |s| s.traversable)
    }

    pub fn cost(&self, id: ClassId) -> f64 {
        self.get(id).map_or(f64::INFINITY, |s| s.cost)
    }
}
