//! Embedded, append-only persistence for one agent's memories and skills.
//!
//! On-disk layout under `<root>/<agent_name>/`:
//!
//! ```text
//! meta.json            {"dim": <embedding dimension>}
//! memories.log         one JSON memory record per line, append-only
//! skills/manifest.log  one JSON skill record (sans body) per line, last wins
//! skills/<name>.skill  the skill body, written via tmp-file + rename
//! ```
//!
//! Every append is flushed before the call returns, and the loader drops a
//! torn final line, so a run killed mid-write reopens to exactly the records
//! that were fully written.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::embed::{embed_text, Embedder};
use super::{EmbeddingVector, MemoryError, MemoryRecord, RetrievalHit, SkillRecord};

const MEMORIES_FILE: &str = "memories.log";
const SKILLS_DIR: &str = "skills";
const MANIFEST_FILE: &str = "manifest.log";
const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct Meta {
    dim: usize,
}

/// Manifest line: a skill record without its body.
#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    description: String,
    dependencies: Vec<String>,
    origin: super::SkillOrigin,
    refinement_count: u32,
    description_embedding: EmbeddingVector,
}

/// One agent's collection, loaded in memory and journaled to disk.
pub struct MemoryStore {
    dir: PathBuf,
    agent_name: String,
    dim: usize,
    embedder: Arc<dyn Embedder>,
    memories: Vec<MemoryRecord>,
    memory_ids: BTreeMap<String, usize>,
    skills: Vec<SkillRecord>,
    skill_index: BTreeMap<String, usize>,
    memories_log: BufWriter<File>,
    manifest_log: BufWriter<File>,
}

fn io_err(path: &Path, source: std::io::Error) -> MemoryError {
    MemoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a journal's lines, dropping a torn final line (the signature of a
/// write interrupted by process death). A bad line anywhere else is real
/// corruption and surfaces as an error.
fn read_journal<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, MemoryError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(value) => out.push(value),
            Err(e) if idx + 1 == lines.len() => {
                log::warn!("{}: dropping torn final record ({e})", path.display());
            }
            Err(e) => {
                return Err(MemoryError::Corrupt {
                    path: path.display().to_string(),
                    line: idx + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn append_line<T: Serialize>(
    writer: &mut BufWriter<File>,
    path: &Path,
    value: &T,
) -> Result<(), MemoryError> {
    let line = serde_json::to_string(value).map_err(|e| MemoryError::Corrupt {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    writer
        .write_all(line.as_bytes())
        .map_err(|e| io_err(path, e))?;
    writer.write_all(b"\n").map_err(|e| io_err(path, e))?;
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn valid_skill_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl MemoryStore {
    /// Open or create the collection for `agent_name` under `root`.
    /// The embedding dimension is fixed at creation; reopening with an
    /// embedder of a different dimension is an error.
    pub fn open(
        root: &Path,
        agent_name: &str,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, MemoryError> {
        let dir = root.join(agent_name);
        let skills_dir = dir.join(SKILLS_DIR);
        std::fs::create_dir_all(&skills_dir).map_err(|e| io_err(&skills_dir, e))?;

        let meta_path = dir.join(META_FILE);
        let dim = embedder.dim();
        if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
            let meta: Meta = serde_json::from_str(&text).map_err(|e| MemoryError::Corrupt {
                path: meta_path.display().to_string(),
                line: 1,
                reason: e.to_string(),
            })?;
            if meta.dim != dim {
                return Err(MemoryError::DimensionMismatch {
                    expected: meta.dim,
                    got: dim,
                });
            }
        } else {
            let tmp = dir.join(".meta.tmp");
            std::fs::write(&tmp, serde_json::to_string(&Meta { dim }).unwrap())
                .map_err(|e| io_err(&tmp, e))?;
            std::fs::rename(&tmp, &meta_path).map_err(|e| io_err(&meta_path, e))?;
        }

        let memories_path = dir.join(MEMORIES_FILE);
        let memories: Vec<MemoryRecord> = read_journal(&memories_path)?;
        let mut memory_ids = BTreeMap::new();
        for (idx, rec) in memories.iter().enumerate() {
            memory_ids.insert(rec.id.clone(), idx);
        }

        let manifest_path = skills_dir.join(MANIFEST_FILE);
        let entries: Vec<ManifestEntry> = read_journal(&manifest_path)?;
        let mut skills: Vec<SkillRecord> = Vec::new();
        let mut skill_index: BTreeMap<String, usize> = BTreeMap::new();
        for entry in entries {
            let body_path = skills_dir.join(format!("{}.skill", entry.name));
            let body = std::fs::read_to_string(&body_path).map_err(|e| io_err(&body_path, e))?;
            let record = SkillRecord {
                name: entry.name.clone(),
                description: entry.description,
                body,
                dependencies: entry.dependencies,
                origin: entry.origin,
                refinement_count: entry.refinement_count,
                description_embedding: entry.description_embedding,
            };
            match skill_index.get(&entry.name) {
                Some(&idx) => skills[idx] = record,
                None => {
                    skill_index.insert(entry.name, skills.len());
                    skills.push(record);
                }
            }
        }

        let memories_log = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&memories_path)
                .map_err(|e| io_err(&memories_path, e))?,
        );
        let manifest_log = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&manifest_path)
                .map_err(|e| io_err(&manifest_path, e))?,
        );

        Ok(MemoryStore {
            dir,
            agent_name: agent_name.to_string(),
            dim,
            embedder,
            memories,
            memory_ids,
            skills,
            skill_index,
            memories_log,
            manifest_log,
        })
    }

    pub fn agent_name(&self) -> &str {
        &self.agent_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn memory_count(&self) -> usize {
        self.memories.len()
    }

    pub fn skill_count(&self) -> usize {
        self.skills.len()
    }

    pub fn get_memory(&self, id: &str) -> Option<&MemoryRecord> {
        self.memory_ids.get(id).map(|&idx| &self.memories[idx])
    }

    pub fn get_skill(&self, name: &str) -> Option<&SkillRecord> {
        self.skill_index.get(name).map(|&idx| &self.skills[idx])
    }

    pub fn skills(&self) -> impl Iterator<Item = &SkillRecord> {
        self.skills.iter()
    }

    pub fn skill_names(&self) -> Vec<String> {
        self.skills.iter().map(|s| s.name.clone()).collect()
    }

    /// Embed text with this store's embedder (hash-wrapped errors).
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, MemoryError> {
        embed_text(self.embedder.as_ref(), text)
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), MemoryError> {
        if v.dim() != self.dim {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    /// Persist a memory record. Records are immutable once stored;
    /// corrections are new records.
    pub fn store_memory(&mut self, rec: MemoryRecord) -> Result<String, MemoryError> {
        if self.memory_ids.contains_key(&rec.id) {
            return Err(MemoryError::DuplicateId(rec.id));
        }
        self.check_dim(&rec.state_embedding)?;
        self.check_dim(&rec.preference_embedding)?;
        if rec.preference_summary.is_empty() {
            return Err(MemoryError::EmptyPreferenceSummary);
        }
        let path = self.dir.join(MEMORIES_FILE);
        append_line(&mut self.memories_log, &path, &rec)?;
        let id = rec.id.clone();
        self.memory_ids.insert(id.clone(), self.memories.len());
        self.memories.push(rec);
        Ok(id)
    }

    /// Persist a skill. Re-storing an existing name replaces the body,
    /// description, and dependencies, and increments `refinement_count`
    /// past the stored value. Dependencies must resolve and must not form
    /// a cycle.
    pub fn store_skill(&mut self, mut rec: SkillRecord) -> Result<String, MemoryError> {
        if !valid_skill_name(&rec.name) {
            return Err(MemoryError::BadSkillName(rec.name));
        }
        self.check_dim(&rec.description_embedding)?;
        for dep in &rec.dependencies {
            let known = self.skill_index.contains_key(dep);
            if !known {
                return Err(MemoryError::UnknownDependency {
                    skill: rec.name.clone(),
                    dependency: dep.clone(),
                });
            }
        }
        if self.would_cycle(&rec.name, &rec.dependencies) {
            return Err(MemoryError::DependencyCycle { skill: rec.name });
        }

        let existing = self.skill_index.get(&rec.name).copied();
        if let Some(idx) = existing {
            rec.refinement_count = self.skills[idx].refinement_count + 1;
        }

        let skills_dir = self.dir.join(SKILLS_DIR);
        let body_path = skills_dir.join(format!("{}.skill", rec.name));
        let tmp_path = skills_dir.join(format!(".{}.tmp", rec.name));
        std::fs::write(&tmp_path, &rec.body).map_err(|e| io_err(&tmp_path, e))?;
        std::fs::rename(&tmp_path, &body_path).map_err(|e| io_err(&body_path, e))?;

        let manifest_path = skills_dir.join(MANIFEST_FILE);
        let entry = ManifestEntry {
            name: rec.name.clone(),
            description: rec.description.clone(),
            dependencies: rec.dependencies.clone(),
            origin: rec.origin,
            refinement_count: rec.refinement_count,
            description_embedding: rec.description_embedding.clone(),
        };
        append_line(&mut self.manifest_log, &manifest_path, &entry)?;

        let name = rec.name.clone();
        match existing {
            Some(idx) => self.skills[idx] = rec,
            None => {
                self.skill_index.insert(name.clone(), self.skills.len());
                self.skills.push(rec);
            }
        }
        Ok(name)
    }

    /// Would storing `name` with `deps` close a dependency loop?
    fn would_cycle(&self, name: &str, deps: &[String]) -> bool {
        // DFS from each new dependency, following stored edges; hitting
        // `name` again means the new edges close a loop.
        let mut stack: Vec<&str> = deps.iter().map(String::as_str).collect();
        let mut seen: Vec<&str> = Vec::new();
        while let Some(current) = stack.pop() {
            if current == name {
                return true;
            }
            if seen.contains(&current) {
                continue;
            }
            seen.push(current);
            if let Some(&idx) = self.skill_index.get(current) {
                stack.extend(self.skills[idx].dependencies.iter().map(String::as_str));
            }
        }
        false
    }

    fn top_k<'a, I>(
        query: &EmbeddingVector,
        k: usize,
        items: I,
    ) -> Result<Vec<RetrievalHit>, MemoryError>
    where
        I: Iterator<Item = (&'a str, &'a EmbeddingVector)>,
    {
        let mut scored: Vec<(usize, &str, f64)> = Vec::new();
        for (insertion_idx, (id, embedding)) in items.enumerate() {
            let score = super::cosine(query, embedding)?;
            scored.push((insertion_idx, id, score));
        }
        // Score descending; earlier insertion wins ties.
        scored.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("cosine scores are finite")
                .then(a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(_, id, score)| RetrievalHit {
                id: id.to_string(),
                score,
            })
            .collect())
    }

    /// Memories whose preference summaries best match the active
    /// personality prompt.
    pub fn retrieve_preferred(
        &self,
        personality_prompt: &str,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, MemoryError> {
        assert!(k >= 1, "k must be >= 1");
        if self.memories.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embed(personality_prompt)?;
        Self::top_k(
            &query,
            k,
            self.memories
                .iter()
                .map(|m| (m.id.as_str(), &m.preference_embedding)),
        )
    }

    /// Memories whose stored game state best matches the current one.
    pub fn retrieve_related(
        &self,
        current_state: &str,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, MemoryError> {
        assert!(k >= 1, "k must be >= 1");
        if self.memories.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embed(current_state)?;
        Self::top_k(
            &query,
            k,
            self.memories
                .iter()
                .map(|m| (m.id.as_str(), &m.state_embedding)),
        )
    }

    /// Skills whose descriptions best match the current plan description.
    pub fn retrieve_skills(
        &self,
        plan_description: &str,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, MemoryError> {
        assert!(k >= 1, "k must be >= 1");
        if self.skills.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embed(plan_description)?;
        Self::top_k(
            &query,
            k,
            self.skills
                .iter()
                .map(|s| (s.name.as_str(), &s.description_embedding)),
        )
    }
}

/// Remove every memory and skill stored for `agent_name`. Returns whether
/// anything existed.
pub fn delete_collection(root: &Path, agent_name: &str) -> Result<bool, MemoryError> {
    let dir = root.join(agent_name);
    if !dir.exists() {
        return Ok(false);
    }
    std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{HashEmbedder, Outcome, SkillOrigin};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn embedder() -> Arc<dyn Embedder> {
        Arc::new(HashEmbedder::new(0, 64))
    }

    fn open_store(root: &Path) -> MemoryStore {
        MemoryStore::open(root, "tester", embedder()).unwrap()
    }

    fn record(store: &MemoryStore, id: &str, state: &str, preference: &str) -> MemoryRecord {
        MemoryRecord {
            id: id.to_string(),
            agent_name: "tester".into(),
            iteration: 0,
            plan_summary: format!("plan for {id}"),
            outcome: Outcome::Success,
            context: "ctx".into(),
            game_state_snapshot: state.to_string(),
            preference_summary: preference.to_string(),
            state_embedding: store.embed(state).unwrap(),
            preference_embedding: store.embed(preference).unwrap(),
            created_at: 1,
        }
    }

    fn skill(store: &MemoryStore, name: &str, deps: &[&str]) -> SkillRecord {
        SkillRecord {
            name: name.to_string(),
            description: format!("skill {name}"),
            body: format!("body of {name}"),
            dependencies: deps.iter().map(|s| s.to_string()).collect(),
            origin: SkillOrigin::Basic,
            refinement_count: 0,
            description_embedding: store.embed(&format!("skill {name}")).unwrap(),
        }
    }

    #[test]
    fn store_then_fetch_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let rec = record(&store, "m1", "state one", "prefers speed");
        store.store_memory(rec.clone()).unwrap();
        assert_eq!(store.get_memory("m1"), Some(&rec));
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store.store_memory(record(&store, "m1", "s", "p")).unwrap();
        let err = store
            .store_memory(record(&store, "m1", "s2", "p2"))
            .unwrap_err();
        assert!(matches!(err, MemoryError::DuplicateId(_)));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let mut rec = record(&store, "m1", "s", "p");
        rec.state_embedding = EmbeddingVector::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            store.store_memory(rec),
            Err(MemoryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn thousand_records_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        for i in 0..1000 {
            store
                .store_memory(record(
                    &store,
                    &format!("m{i}"),
                    &format!("state {i}"),
                    &format!("pref {i}"),
                ))
                .unwrap();
        }
        assert_eq!(store.memory_count(), 1000);
    }

    #[test]
    fn skill_with_resolvable_dependency() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store.store_skill(skill(&store, "moveTo", &[])).unwrap();
        store
            .store_skill(skill(&store, "mineBlock", &["moveTo"]))
            .unwrap();
        assert_eq!(store.skill_count(), 2);
    }

    #[test]
    fn dangling_dependency_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let err = store
            .store_skill(skill(&store, "mineBlock", &["flyTo"]))
            .unwrap_err();
        match err {
            MemoryError::UnknownDependency { dependency, .. } => assert_eq!(dependency, "flyTo"),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn restore_increments_refinement_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store.store_skill(skill(&store, "mineBlock", &[])).unwrap();
        let mut updated = skill(&store, "mineBlock", &[]);
        updated.body = "new body".into();
        store.store_skill(updated).unwrap();
        let stored = store.get_skill("mineBlock").unwrap();
        assert_eq!(stored.refinement_count, 1);
        assert_eq!(stored.body, "new body");
    }

    #[test]
    fn cycle_via_replacement_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store.store_skill(skill(&store, "a", &[])).unwrap();
        store.store_skill(skill(&store, "b", &["a"])).unwrap();
        let err = store.store_skill(skill(&store, "a", &["b"])).unwrap_err();
        assert!(matches!(err, MemoryError::DependencyCycle { .. }));
    }

    #[test]
    fn self_dependency_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store.store_skill(skill(&store, "a", &[])).unwrap();
        assert!(matches!(
            store.store_skill(skill(&store, "a", &["a"])),
            Err(MemoryError::DependencyCycle { .. })
        ));
    }

    #[test]
    fn dependency_graph_stays_acyclic_under_random_store_sequences() {
        fn is_acyclic(store: &MemoryStore) -> bool {
            // Kahn-style peel: repeatedly remove nodes whose deps are gone.
            let mut remaining: Vec<(&str, Vec<&str>)> = store
                .skills()
                .map(|s| {
                    (
                        s.name.as_str(),
                        s.dependencies.iter().map(String::as_str).collect(),
                    )
                })
                .collect();
            loop {
                let before = remaining.len();
                let names: Vec<&str> = remaining.iter().map(|(n, _)| *n).collect();
                remaining.retain(|(_, deps)| deps.iter().any(|d| names.contains(d)));
                if remaining.is_empty() {
                    return true;
                }
                if remaining.len() == before {
                    return false;
                }
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for round in 0..300 {
            let name = format!("s{}", rng.random_range(0..20));
            let existing = store.skill_names();
            let deps: Vec<&str> = (0..rng.random_range(0..3))
                .filter_map(|_| {
                    if existing.is_empty() {
                        None
                    } else {
                        Some(existing[rng.random_range(0..existing.len())].as_str())
                    }
                })
                .collect();
            let dep_refs: Vec<&str> = deps.clone();
            let _ = store.store_skill(skill(&store, &name, &dep_refs));
            assert!(is_acyclic(&store), "cycle appeared at round {round}");
        }
    }

    #[test]
    fn empty_collection_retrieval_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let store = open_store(dir.path());
        assert!(store.retrieve_preferred("anything", 5).unwrap().is_empty());
        assert!(store.retrieve_related("anything", 5).unwrap().is_empty());
        assert!(store.retrieve_skills("anything", 5).unwrap().is_empty());
    }

    #[test]
    fn exact_state_match_ranks_first_with_unit_score() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store
            .store_memory(record(&store, "m1", "at the gate", "p1"))
            .unwrap();
        store
            .store_memory(record(&store, "m2", "deep in the cave", "p2"))
            .unwrap();
        let hits = store.retrieve_related("at the gate", 2).unwrap();
        assert_eq!(hits[0].id, "m1");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_larger_than_collection_returns_all_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        for i in 0..3 {
            store
                .store_memory(record(&store, &format!("m{i}"), &format!("state {i}"), "p"))
                .unwrap();
        }
        let hits = store.retrieve_related("state 0", 10).unwrap();
        assert_eq!(hits.len(), 3);
        for pair in hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn identical_embeddings_tie_break_by_insertion() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        // Same token multiset embeds identically, so these three tie.
        store
            .store_memory(record(&store, "first", "alpha beta", "p"))
            .unwrap();
        store
            .store_memory(record(&store, "second", "beta alpha", "p"))
            .unwrap();
        store
            .store_memory(record(&store, "third", "alpha beta", "p"))
            .unwrap();
        let hits = store.retrieve_related("alpha beta", 3).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["first", "second", "third"]);
    }

    #[test]
    fn skill_self_match_ranks_first() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        store.store_skill(skill(&store, "approach", &[])).unwrap();
        store.store_skill(skill(&store, "retreat", &[])).unwrap();
        let hits = store.retrieve_skills("skill approach", 2).unwrap();
        assert_eq!(hits[0].id, "approach");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ranking_matches_brute_force_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut states = Vec::new();
        for i in 0..200 {
            let state: String = (0..rng.random_range(2..10))
                .map(|_| format!("w{}", rng.random_range(0..50)))
                .collect::<Vec<_>>()
                .join(" ");
            store
                .store_memory(record(&store, &format!("m{i}"), &state, "p"))
                .unwrap();
            states.push(state);
        }
        let query = "w1 w2 w3 probe";
        let hits = store.retrieve_related(query, 5).unwrap();

        // Oracle: exhaustive sort with a test-local cosine.
        let emb = HashEmbedder::new(0, 64);
        let q = emb.embed(query).unwrap();
        let mut scored: Vec<(usize, f64)> = states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let v = emb.embed(s).unwrap();
                let dot: f64 = q
                    .as_slice()
                    .iter()
                    .zip(v.as_slice())
                    .map(|(a, b)| a * b)
                    .sum();
                let na: f64 = q.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = v.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt();
                (i, dot / (na * nb))
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<String> = scored
            .iter()
            .take(5)
            .map(|(i, _)| format!("m{i}"))
            .collect();
        let got: Vec<String> = hits.into_iter().map(|h| h.id).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn scores_stay_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..100 {
            let state: String = (0..rng.random_range(1..12))
                .map(|_| format!("t{}", rng.random_range(0..30)))
                .collect::<Vec<_>>()
                .join(" ");
            store
                .store_memory(record(&store, &format!("m{i}"), &state, "p"))
                .unwrap();
        }
        for hit in store.retrieve_related("t1 t2", 100).unwrap() {
            assert!(hit.score >= -1.0 - 1e-9 && hit.score <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn reopen_preserves_records_and_rankings() {
        let dir = tempfile::tempdir().unwrap();
        let ranking_before;
        {
            let mut store = open_store(dir.path());
            for i in 0..20 {
                store
                    .store_memory(record(
                        &store,
                        &format!("m{i}"),
                        &format!("state {i}"),
                        &format!("pref {i}"),
                    ))
                    .unwrap();
            }
            store.store_skill(skill(&store, "approach", &[])).unwrap();
            ranking_before = store.retrieve_related("state 7", 5).unwrap();
        }
        let store = open_store(dir.path());
        assert_eq!(store.memory_count(), 20);
        assert_eq!(store.skill_count(), 1);
        assert_eq!(
            store.retrieve_related("state 7", 5).unwrap(),
            ranking_before
        );
    }

    #[test]
    fn torn_final_line_is_dropped_on_load() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = open_store(dir.path());
            for i in 0..5 {
                store
                    .store_memory(record(&store, &format!("m{i}"), "s", "p"))
                    .unwrap();
            }
        }
        let log = dir.path().join("tester").join(MEMORIES_FILE);
        let mut file = OpenOptions::new().append(true).open(&log).unwrap();
        file.write_all(b"{\"id\":\"m5\",\"agent_name\":\"tes")
            .unwrap();
        drop(file);
        let store = open_store(dir.path());
        assert_eq!(store.memory_count(), 5);
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = open_store(dir.path());
            store.store_memory(record(&store, "m0", "s", "p")).unwrap();
        }
        let log = dir.path().join("tester").join(MEMORIES_FILE);
        let good = std::fs::read_to_string(&log).unwrap();
        std::fs::write(&log, format!("garbage line\n{good}")).unwrap();
        assert!(matches!(
            MemoryStore::open(dir.path(), "tester", embedder()),
            Err(MemoryError::Corrupt { .. })
        ));
    }

    #[test]
    fn delete_absent_collection_reports_false() {
        let dir = tempfile::tempdir().unwrap();
        assert!(!delete_collection(dir.path(), "nobody").unwrap());
    }

    #[test]
    fn delete_then_open_yields_empty_collection() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = open_store(dir.path());
            store.store_memory(record(&store, "m0", "s", "p")).unwrap();
        }
        assert!(delete_collection(dir.path(), "tester").unwrap());
        let store = open_store(dir.path());
        assert_eq!(store.memory_count(), 0);
    }

    #[test]
    fn continued_open_preserves_count() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = open_store(dir.path());
            for i in 0..7 {
                store
                    .store_memory(record(&store, &format!("m{i}"), "s", "p"))
                    .unwrap();
            }
        }
        let store = open_store(dir.path());
        assert_eq!(store.memory_count(), 7);
    }

    #[test]
    fn dimension_mismatch_on_reopen_rejected() {
        let dir = tempfile::tempdir().unwrap();
        {
            let _ = open_store(dir.path());
        }
        let result = MemoryStore::open(dir.path(), "tester", Arc::new(HashEmbedder::new(0, 32)));
        assert!(matches!(result, Err(MemoryError::DimensionMismatch { .. })));
    }
}
