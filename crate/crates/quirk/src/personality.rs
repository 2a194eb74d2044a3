//! Trait prompts, the entity-type registry, and per-game entity mappings.
//!
//! A personality profile is a named block of prompt text injected verbatim
//! into planner prompts. Prompts may reference canonical game concepts with
//! `{entity:<id>}` placeholders; [`map_entities`] substitutes the target
//! game's term for each one before the prompt reaches the planner.
//!
//! The seven built-in trait prompts live under `assets/personalities/`, one
//! plain-text file per trait, and are compiled in as fallbacks so the crate
//! works without an install path. A custom directory passed to
//! [`load_profile`] shadows built-ins of the same name at runtime. The texts
//! are paraphrases of the trait names, not quotations from any player model.

use std::collections::BTreeMap;
use std::path::Path;

/// The seven built-in trait names, in canonical order.
pub const BUILTIN_TRAITS: [&str; 7] = [
    "achievement",
    "adrenaline",
    "aggression",
    "caution",
    "completion",
    "curiosity",
    "efficiency",
];

/// Number of entity types in a fully populated registry.
pub const ENTITY_REGISTRY_SIZE: usize = 9;

const BUILTIN_PROMPTS: [(&str, &str); 7] = [
    (
        "achievement",
        include_str!("../../../assets/personalities/achievement.txt"),
    ),
    (
        "adrenaline",
        include_str!("../../../assets/personalities/adrenaline.txt"),
    ),
    (
        "aggression",
        include_str!("../../../assets/personalities/aggression.txt"),
    ),
    (
        "caution",
        include_str!("../../../assets/personalities/caution.txt"),
    ),
    (
        "completion",
        include_str!("../../../assets/personalities/completion.txt"),
    ),
    (
        "curiosity",
        include_str!("../../../assets/personalities/curiosity.txt"),
    ),
    (
        "efficiency",
        include_str!("../../../assets/personalities/efficiency.txt"),
    ),
];

const BUILTIN_ENTITY_REGISTRY: &str = include_str!("../../../assets/entities.tsv");

#[derive(Debug, thiserror::Error)]
pub enum PersonalityError {
    #[error("unknown personality {name:?}; available: {available}")]
    UnknownProfile { name: String, available: String },
    #[error("profile {name:?}: prompt text is empty")]
    EmptyPrompt { name: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: expected id<TAB>value")]
    BadRow { path: String, line: usize },
    #[error("entity id {id:?} is not in the registry ({seeded} of {expected} entries seeded)")]
    UnregisteredEntity {
        id: String,
        seeded: usize,
        expected: usize,
    },
    #[error("entity mapping for {game}: empty term for id {id:?}")]
    EmptyTerm { game: String, id: String },
    #[error("prompt references entity {id:?} with no mapping entry")]
    UnmappedPlaceholder { id: String },
    #[error("malformed entity placeholder near byte {at}: missing closing brace")]
    UnterminatedPlaceholder { at: usize },
}

/// Where a profile's text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileOrigin {
    BuiltIn,
    Custom,
}

/// A named behavioural trait injected into planner prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonalityProfile {
    pub name: String,
    pub prompt_text: String,
    pub origin: ProfileOrigin,
}

/// One canonical game-concept category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityType {
    pub id: String,
    pub description: String,
}

/// The registry of canonical entity types.
#[derive(Debug, Clone)]
pub struct EntityRegistry {
    entries: Vec<EntityType>,
}

impl EntityRegistry {
    /// The registry shipped with the crate: `enemy_hazard` plus eight
    /// configurable slots awaiting concrete definitions.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_ENTITY_REGISTRY, "<builtin>").expect("builtin registry parses")
    }

    pub fn load(path: &Path) -> Result<Self, PersonalityError> {
        let text = std::fs::read_to_string(path).map_err(|source| PersonalityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn parse(text: &str, path: &str) -> Result<Self, PersonalityError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, description) = line.split_once('\t').ok_or(PersonalityError::BadRow {
                path: path.to_string(),
                line: idx + 1,
            })?;
            entries.push(EntityType {
                id: id.trim().to_string(),
                description: description.trim().to_string(),
            });
        }
        Ok(EntityRegistry { entries })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    /// Entries whose description is a real definition, not a placeholder slot.
    pub fn seeded_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.description.contains("unassigned"))
            .count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Entity-id to game-term substitutions for one game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMapping {
    pub game_subject: String,
    pub entries: BTreeMap<String, String>,
}

impl EntityMapping {
    pub fn empty(game_subject: impl Into<String>) -> Self {
        EntityMapping {
            game_subject: game_subject.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Load `id<TAB>term` rows, validating every id against the registry.
    pub fn load(
        path: &Path,
        game_subject: &str,
        registry: &EntityRegistry,
    ) -> Result<Self, PersonalityError> {
        let text = std::fs::read_to_string(path).map_err(|source| PersonalityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string(), game_subject, registry)
    }

    pub fn parse(
        text: &str,
        path: &str,
        game_subject: &str,
        registry: &EntityRegistry,
    ) -> Result<Self, PersonalityError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (id, term) = raw.split_once('\t').ok_or(PersonalityError::BadRow {
                path: path.to_string(),
                line: idx + 1,
            })?;
            let id = id.trim().to_string();
            let term = term.trim().to_string();
            if !registry.contains(&id) {
                return Err(PersonalityError::UnregisteredEntity {
                    id,
                    seeded: registry.seeded_count(),
                    expected: ENTITY_REGISTRY_SIZE,
                });
            }
            if term.is_empty() {
                return Err(PersonalityError::EmptyTerm {
                    game: game_subject.to_string(),
                    id,
                });
            }
            entries.insert(id, term);
        }
        Ok(EntityMapping {
            game_subject: game_subject.to_string(),
            entries,
        })
    }
}

/// Resolve a trait name to its profile.
///
/// A prompt file named `<name>` (optionally `<name>.txt`) inside
/// `custom_dir` shadows a built-in of the same name.
pub fn load_profile(
    name: &str,
    custom_dir: Option<&Path>,
) -> Result<PersonalityProfile, PersonalityError> {
    if let Some(dir) = custom_dir {
        for candidate in [dir.join(name), dir.join(format!("{name}.txt"))] {
            if candidate.is_file() {
                let text =
                    std::fs::read_to_string(&candidate).map_err(|source| PersonalityError::Io {
                        path: candidate.display().to_string(),
                        source,
                    })?;
                let text = text.trim().to_string();
                if text.is_empty() {
                    return Err(PersonalityError::EmptyPrompt {
                        name: name.to_string(),
                    });
                }
                return Ok(PersonalityProfile {
                    name: name.to_string(),
                    prompt_text: text,
                    origin: ProfileOrigin::Custom,
                });
            }
        }
    }

    if let Some((_, text)) = BUILTIN_PROMPTS.iter().find(|(n, _)| *n == name) {
        return Ok(PersonalityProfile {
            name: name.to_string(),
            prompt_text: text.trim().to_string(),
            origin: ProfileOrigin::BuiltIn,
        });
    }

    Err(PersonalityError::UnknownProfile {
        name: name.to_string(),
        available: available_profiles(custom_dir).join(", "),
    })
}

/// All resolvable profile names: built-ins plus custom files, deduplicated.
pub fn available_profiles(custom_dir: Option<&Path>) -> Vec<String> {
    let mut names: Vec<String> = BUILTIN_TRAITS.iter().map(|s| s.to_string()).collect();
    if let Some(dir) = custom_dir {
        if let Ok(read) = std::fs::read_dir(dir) {
            for entry in read.flatten() {
                if entry.path().is_file() {
                    let name = entry.file_name().to_string_lossy().to_string();
                    let name = name.strip_suffix(".txt").unwrap_or(&name).to_string();
                    if !names.contains(&name) {
                        names.push(name);
                    }
                }
            }
        }
    }
    names.sort();
    names
}

/// Replace every `{entity:<id>}` placeholder with the game term from
/// `mapping`. Text outside placeholders is untouched, byte for byte.
pub fn map_entities(
    profile: &PersonalityProfile,
    mapping: &EntityMapping,
) -> Result<String, PersonalityError> {
    render_placeholders(&profile.prompt_text, mapping)
}

fn render_placeholders(text: &str, mapping: &EntityMapping) -> Result<String, PersonalityError> {
    const OPEN: &str = "{entity:";
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut offset = 0usize;
    while let Some(start) = rest.find(OPEN) {
        out.push_str(&rest[..start]);
        let after_open = &rest[start + OPEN.len()..];
        let Some(end) = after_open.find('}') else {
            return Err(PersonalityError::UnterminatedPlaceholder { at: offset + start });
        };
        let id = &after_open[..end];
        let term = mapping
            .entries
            .get(id)
            .ok_or_else(|| PersonalityError::UnmappedPlaceholder { id: id.to_string() })?;
        out.push_str(term);
        offset += start + OPEN.len() + end + 1;
        rest = &after_open[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
