//! Annotation schema: the entity and relation type inventory.
//!
//! A schema file is a small line-oriented text format:
//!
//! ```text
//! # comment
//! [entities]
//! Task: Applications, problems to solve, systems to construct.
//! Method
//!
//! [relations]
//! Used-for: The head is used for the tail.
//! Compare symmetric: The two entities are compared.
//! ```
//!
//! Every entry is `<Name>[ symmetric][: <description>]`. Names are
//! case-sensitive and contain neither whitespace nor the tuple delimiter `;`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The schema shipped with the toolkit (full SciERC inventory).
pub const DEFAULT_SCHEMA: &str = include_str!("../assets/scierc.schema");

/// Reserved tuple delimiter; never allowed in a type name.
pub const DELIMITER: char = ';';

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("failed to read schema {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}: `{text}`")]
    Syntax { line: usize, text: String, message: String },
    #[error("line {line}: duplicate {kind} type `{name}`")]
    DuplicateName { line: usize, kind: LabelKind, name: String },
    #[error("schema declares no {0} types")]
    EmptyInventory(LabelKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Entity,
    Relation,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelKind::Entity => f.write_str("entity"),
            LabelKind::Relation => f.write_str("relation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypeDef {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTypeDef {
    pub name: String,
    pub description: String,
    pub symmetric: bool,
}

/// Validated, immutable type inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    entity_types: Vec<EntityTypeDef>,
    relation_types: Vec<RelationTypeDef>,
}

impl Schema {
    /// Builds a schema from already-parsed definitions, enforcing the
    /// inventory invariants.
    pub fn new(entity_types: Vec<EntityTypeDef>, relation_types: Vec<RelationTypeDef>) -> Result<Self, SchemaError> {
        check_inventory(LabelKind::Entity, entity_types.iter().map(|e| e.name.as_str()))?;
        check_inventory(LabelKind::Relation, relation_types.iter().map(|r| r.name.as_str()))?;
        Ok(Schema {
            entity_types,
            relation_types,
        })
    }

    /// The bundled SciERC schema.
    pub fn scierc() -> Self {
        parse_schema(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn entity_types(&self) -> &[EntityTypeDef] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[RelationTypeDef] {
        &self.relation_types
    }

    pub fn entity_type(&self, name: &str) -> Option<&EntityTypeDef> {
        self.entity_types.iter().find(|e| e.name == name)
    }

    pub fn relation_type(&self, name: &str) -> Option<&RelationTypeDef> {
        self.relation_types.iter().find(|r| r.name == name)
    }

    /// Case-sensitive membership test against the inventory of `kind`.
    pub fn validate_label(&self, label: &str, kind: LabelKind) -> bool {
        match kind {
            LabelKind::Entity => self.entity_type(label).is_some(),
            LabelKind::Relation => self.relation_type(label).is_some(),
        }
    }

    /// True when `label` names a relation type flagged symmetric.
    pub fn is_symmetric(&self, label: &str) -> bool {
        self.relation_type(label).is_some_and(|r| r.symmetric)
    }

    /// Hex SHA-256 over a canonical rendering of the inventory. Comments and
    /// formatting in the source file do not affect it.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entity_types {
            hasher.update(b"E\0");
            hasher.update(e.name.as_bytes());
            hasher.update(b"\0");
            hasher.update(e.description.as_bytes());
            hasher.update(b"\n");
        }
        for r in &self.relation_types {
            hasher.update(if r.symmetric { b"S\0" } else { b"R\0" });
            hasher.update(r.name.as_bytes());
            hasher.update(b"\0");
            hasher.update(r.description.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

fn check_inventory<'a>(kind: LabelKind, names: impl Iterator<Item = &'a str>) -> Result<(), SchemaError> {
    let mut seen = HashSet::new();
    for (i, name) in names.enumerate() {
        if let Some(message) = name_problem(name) {
            return Err(SchemaError::Syntax {
                line: 0,
                text: name.to_string(),
                message: message.to_string(),
            });
        }
        if !seen.insert(name) {
            return Err(SchemaError::DuplicateName {
                line: i + 1,
                kind,
                name: name.to_string(),
            });
        }
    }
    if seen.is_empty() {
        return Err(SchemaError::EmptyInventory(kind));
    }
    Ok(())
}

fn name_problem(name: &str) -> Option<&'static str> {
    if name.is_empty() {
        Some("empty type name")
    } else if name.chars().any(char::is_whitespace) {
        Some("type name contains whitespace")
    } else if name.contains(DELIMITER) {
        Some("type name contains reserved delimiter ';'")
    } else {
        None
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema, SchemaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_schema(&text)
}

/// Parses schema text. Errors carry the 1-based line number.
pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let mut section: Option<LabelKind> = None;
    let mut entities: Vec<EntityTypeDef> = Vec::new();
    let mut relations: Vec<RelationTypeDef> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |message: &str| SchemaError::Syntax {
            line: line_no,
            text: raw.to_string(),
            message: message.to_string(),
        };

        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| syntax("unterminated section header"))?;
            section = Some(match header.trim() {
                "entities" => LabelKind::Entity,
                "relations" => LabelKind::Relation,
                _ => return Err(syntax("unknown section (expected [entities] or [relations])")),
            });
            continue;
        }

        let kind = section.ok_or_else(|| syntax("entry before any section header"))?;
        let (head, description) = match line.split_once(':') {
            Some((h, d)) => (h.trim(), d.trim()),
            None => (line, ""),
        };
        let mut words = head.split_whitespace();
        let name = words.next().ok_or_else(|| syntax("missing type name"))?;
        if name.contains(DELIMITER) {
            return Err(syntax("type name contains reserved delimiter ';'"));
        }
        let symmetric = match words.next() {
            None => false,
            Some("symmetric") if kind == LabelKind::Relation => true,
            Some("symmetric") => return Err(syntax("`symmetric` is only valid for relation types")),
            Some(_) => return Err(syntax("unexpected token after type name")),
        };
        if words.next().is_some() {
            return Err(syntax("unexpected token after type name"));
        }

        let duplicate = match kind {
            LabelKind::Entity => entities.iter().any(|e| e.name == name),
            LabelKind::Relation => relations.iter().any(|r| r.name == name),
        };
        if duplicate {
            return Err(SchemaError::DuplicateName {
                line: line_no,
                kind,
                name: name.to_string(),
            });
        }

        match kind {
            LabelKind::Entity => entities.push(EntityTypeDef {
                name: name.to_string(),
                description: description.to_string(),
            }),
            LabelKind::Relation => relations.push(RelationTypeDef {
                name: name.to_string(),
                description: description.to_string(),
                symmetric,
            }),
        }
    }

    if entities.is_empty() {
        return Err(SchemaError::EmptyInventory(LabelKind::Entity));
    }
    if relations.is_empty() {
        return Err(SchemaError::EmptyInventory(LabelKind::Relation));
    }
    Schema::new(entities, relations)
}
