//! A deterministic grid-dungeon game implementing the environment side of
//! the bridge protocol, plus a [`CodeExecutor`](crate::executor::CodeExecutor)
//! for a five-verb skill DSL. It exists so the full agent loop runs and is
//! testable offline; `docs/refenv.md` is the normative rule table.
//!
//! Coordinates are (x, y) with the origin at the top-left corner: x grows
//! east, y grows south, so `move north` decreases y by one.

mod dsl;
mod harness;
mod scenario;

pub use dsl::{parse_program, DslExecutor, DslProgram, DslStatement, MAX_INTERPRETED_STEPS};
pub use harness::{
    run_env, verify_transcript, EnvHarness, ServeOptions, TranscriptEntry, TranscriptStats,
};
pub use scenario::{builtin_scenario, load_scenario, parse_scenario, BUILTIN_SCENARIOS};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Entities beyond this Chebyshev distance are invisible in status text.
pub const VISIBILITY_RADIUS: i64 = 5;
/// Damage dealt by one attack.
pub const ATTACK_DAMAGE: i64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario line {line}: {reason}")]
    Scenario { line: usize, reason: String },
    #[error("cannot connect to agent bridge at {addr}: {source}")]
    Connect {
        addr: String,
        source: std::io::Error,
    },
    #[error("wire error: {0}")]
    Wire(std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terrain {
    Floor,
    Wall,
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Player {
    pub x: i64,
    pub y: i64,
    pub hp: i64,
    pub max_hp: i64,
    pub inventory: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enemy {
    pub x: i64,
    pub y: i64,
    pub hp: i64,
}

/// The full game state. [`step`] is a pure transition over it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DungeonState {
    pub width: i64,
    pub height: i64,
    terrain: Vec<Terrain>,
    pub player: Player,
    pub items: BTreeMap<(i64, i64), String>,
    pub enemies: BTreeMap<String, Enemy>,
    pub turn: u64,
    pub rng_seed: u64,
    pub level_complete: bool,
}

impl DungeonState {
    pub fn terrain_at(&self, x: i64, y: i64) -> Terrain {
        if x < 0 || y < 0 || x >= self.width || y >= self.height {
            return Terrain::Wall;
        }
        self.terrain[(y * self.width + x) as usize]
    }

    fn enemy_at(&self, x: i64, y: i64) -> Option<&str> {
        self.enemies
            .iter()
            .find(|(_, e)| e.x == x && e.y == y)
            .map(|(id, _)| id.as_str())
    }

    fn walkable(&self, x: i64, y: i64) -> bool {
        self.terrain_at(x, y) != Terrain::Wall && self.enemy_at(x, y).is_none()
    }
}

/// Result of one attempted action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub state: DungeonState,
    pub logs: Vec<String>,
    pub errors: Vec<String>,
}

fn direction_delta(dir: &str) -> Option<(i64, i64)> {
    match dir {
        "north" => Some((0, -1)),
        "south" => Some((0, 1)),
        "east" => Some((1, 0)),
        "west" => Some((-1, 0)),
        _ => None,
    }
}

fn adjacent(ax: i64, ay: i64, bx: i64, by: i64) -> bool {
    (ax - bx).abs() + (ay - by).abs() == 1
}

/// Apply one action to the state. Pure: the input state is never mutated,
/// and a rejected action (any errors) returns it unchanged, turn included.
/// The turn counter increments on every accepted action.
pub fn step(
    state: &DungeonState,
    action: &str,
    params: &serde_json::Map<String, serde_json::Value>,
) -> StepResult {
    let mut next = state.clone();
    let mut logs = Vec::new();
    let mut errors = Vec::new();

    let param_str = |key: &str| params.get(key).and_then(|v| v.as_str());

    match action {
        "move" => match param_str("dir").and_then(direction_delta) {
            None => errors.push("missing or invalid parameter: dir".to_string()),
            Some((dx, dy)) => {
                let (nx, ny) = (next.player.x + dx, next.player.y + dy);
                if next.walkable(nx, ny) {
                    next.player.x = nx;
                    next.player.y = ny;
                    logs.push(format!(
                        "moved {} to ({nx}, {ny})",
                        param_str("dir").expect("checked above")
                    ));
                } else {
                    errors.push("blocked".to_string());
                }
            }
        },
        "attack" => {
            let target_arg = param_str("target").or_else(|| param_str("dir"));
            let target_id: Option<String> = match target_arg {
                Some(arg) => {
                    if let Some((dx, dy)) = direction_delta(arg) {
                        state
                            .enemy_at(state.player.x + dx, state.player.y + dy)
                            .map(String::from)
                    } else {
                        state
                            .enemies
                            .get(arg)
                            .filter(|e| adjacent(state.player.x, state.player.y, e.x, e.y))
                            .map(|_| arg.to_string())
                    }
                }
                None => state
                    .enemies
                    .iter()
                    .find(|(_, e)| adjacent(state.player.x, state.player.y, e.x, e.y))
                    .map(|(id, _)| id.clone()),
            };
            match target_id {
                None => errors.push("no adjacent enemy".to_string()),
                Some(id) => {
                    let enemy = next.enemies.get_mut(&id).expect("resolved above");
                    enemy.hp -= ATTACK_DAMAGE;
                    if enemy.hp <= 0 {
                        next.enemies.remove(&id);
                        logs.push(format!("defeated {id}"));
                    } else {
                        let hp = enemy.hp;
                        logs.push(format!("hit {id}, hp now {hp}"));
                    }
                }
            }
        }
        "pickup" => match next.items.remove(&(next.player.x, next.player.y)) {
            Some(item) => {
                logs.push(format!("picked up {item}"));
                next.player.inventory.push(item);
            }
            None => errors.push("nothing to pick up".to_string()),
        },
        "wait" => logs.push("waited".to_string()),
        "descend" => {
            if state.terrain_at(state.player.x, state.player.y) == Terrain::Exit {
                next.level_complete = true;
                logs.push("descended to the next level".to_string());
            } else {
                errors.push("not on an exit".to_string());
            }
        }
        other => errors.push(format!("unknown action: {other}")),
    }

    if errors.is_empty() {
        next.turn += 1;
        StepResult {
            state: next,
            logs,
            errors,
        }
    } else {
        StepResult {
            state: state.clone(),
            logs,
            errors,
        }
    }
}

// ---------------------------------------------------------------------------
// Status serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisiblePlayer {
    pub x: i64,
    pub y: i64,
    pub hp: i64,
    pub max_hp: i64,
    pub inventory: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearbyEntity {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub x: i64,
    pub y: i64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hp: Option<i64>,
}

/// The agent-facing view of the state; what [`serialize_state`] emits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleState {
    pub turn: u64,
    pub level_complete: bool,
    pub player: VisiblePlayer,
    pub nearby: Vec<NearbyEntity>,
}

fn chebyshev(ax: i64, ay: i64, bx: i64, by: i64) -> i64 {
    (ax - bx).abs().max((ay - by).abs())
}

/// Canonical deterministic status text: equal states serialize to
/// byte-identical JSON. Entities beyond [`VISIBILITY_RADIUS`] are omitted.
pub fn serialize_state(state: &DungeonState) -> String {
    let (px, py) = (state.player.x, state.player.y);
    let mut nearby = Vec::new();
    for (id, enemy) in &state.enemies {
        if chebyshev(px, py, enemy.x, enemy.y) <= VISIBILITY_RADIUS {
            nearby.push(NearbyEntity {
                kind: "enemy".into(),
                id: Some(id.clone()),
                x: enemy.x,
                y: enemy.y,
                hp: Some(enemy.hp),
            });
        }
    }
    for (&(x, y), id) in &state.items {
        if chebyshev(px, py, x, y) <= VISIBILITY_RADIUS {
            nearby.push(NearbyEntity {
                kind: "item".into(),
                id: Some(id.clone()),
                x,
                y,
                hp: None,
            });
        }
    }
    for y in 0..state.height {
        for x in 0..state.width {
            if state.terrain_at(x, y) == Terrain::Exit
                && chebyshev(px, py, x, y) <= VISIBILITY_RADIUS
            {
                nearby.push(NearbyEntity {
                    kind: "exit".into(),
                    id: None,
                    x,
                    y,
                    hp: None,
                });
            }
        }
    }
    nearby.sort_by(|a, b| (&a.kind, &a.id, a.x, a.y).cmp(&(&b.kind, &b.id, b.x, b.y)));
    let visible = VisibleState {
        turn: state.turn,
        level_complete: state.level_complete,
        player: VisiblePlayer {
            x: px,
            y: py,
            hp: state.player.hp,
            max_hp: state.player.max_hp,
            inventory: state.player.inventory.clone(),
        },
        nearby,
    };
    serde_json::to_string(&visible).expect("visible state serializes")
}

/// Parse a status string back into its structured view (test helper and
/// prompt tooling).
pub fn parse_state(text: &str) -> Result<VisibleState, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(pairs: &[(&str, &str)]) -> serde_json::Map<String, serde_json::Value> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect()
    }

    fn arena() -> DungeonState {
        parse_scenario(builtin_scenario("combat-arena").unwrap()).unwrap()
    }

    fn open_room() -> DungeonState {
        parse_scenario(builtin_scenario("open-room").unwrap()).unwrap()
    }

    #[test]
    fn move_north_decreases_y() {
        let mut state = open_room();
        state.player.x = 2;
        state.player.y = 3;
        let result = step(&state, "move", &params(&[("dir", "north")]));
        assert!(result.errors.is_empty());
        assert_eq!((result.state.player.x, result.state.player.y), (2, 2));
        assert_eq!(result.state.turn, state.turn + 1);
    }

    #[test]
    fn move_into_wall_is_blocked_and_state_unchanged() {
        let state = open_room();
        // Player starts at (1, 1); north of it is the border wall.
        let result = step(&state, "move", &params(&[("dir", "north")]));
        assert_eq!(result.errors, vec!["blocked"]);
        assert_eq!(result.state, state);
    }

    #[test]
    fn missing_dir_is_an_error() {
        let state = open_room();
        let result = step(&state, "move", &params(&[]));
        assert_eq!(result.errors, vec!["missing or invalid parameter: dir"]);
        assert_eq!(result.state, state);
    }

    #[test]
    fn attack_kills_enemy_with_two_hp() {
        let mut state = arena();
        let id = state.enemies.keys().next().unwrap().clone();
        let enemy = state.enemies.get_mut(&id).unwrap();
        enemy.hp = 2;
        let (ex, ey) = (enemy.x, enemy.y);
        state.player.x = ex - 1;
        state.player.y = ey;
        let result = step(&state, "attack", &params(&[("target", &id)]));
        assert!(result.errors.is_empty(), "{:?}", result.errors);
        assert!(!result.state.enemies.contains_key(&id));
        assert!(result.logs.iter().any(|l| l.contains("defeated")));
    }

    #[test]
    fn attack_wounds_enemy_above_two_hp() {
        let mut state = arena();
        let id = state.enemies.keys().next().unwrap().clone();
        let (ex, ey) = {
            let e = &state.enemies[&id];
            (e.x, e.y)
        };
        state.player.x = ex;
        state.player.y = ey + 1;
        let result = step(&state, "attack", &params(&[]));
        assert!(result.errors.is_empty());
        assert_eq!(result.state.enemies[&id].hp, 2);
    }

    #[test]
    fn attack_with_nothing_adjacent_fails() {
        let state = open_room();
        let result = step(&state, "attack", &params(&[]));
        assert_eq!(result.errors, vec!["no adjacent enemy"]);
    }

    #[test]
    fn pickup_moves_item_to_inventory() {
        let mut state = open_room();
        state
            .items
            .insert((state.player.x, state.player.y), "potion".into());
        let result = step(&state, "pickup", &params(&[]));
        assert!(result.errors.is_empty());
        assert_eq!(result.state.player.inventory, vec!["potion"]);
        assert!(result.state.items.is_empty());
    }

    #[test]
    fn descend_requires_exit_cell() {
        let state = open_room();
        let result = step(&state, "descend", &params(&[]));
        assert_eq!(result.errors, vec!["not on an exit"]);

        let mut on_exit = open_room();
        for y in 0..on_exit.height {
            for x in 0..on_exit.width {
                if on_exit.terrain_at(x, y) == Terrain::Exit {
                    on_exit.player.x = x;
                    on_exit.player.y = y;
                }
            }
        }
        let result = step(&on_exit, "descend", &params(&[]));
        assert!(result.errors.is_empty());
        assert!(result.state.level_complete);
    }

    #[test]
    fn unknown_action_names_itself() {
        let state = open_room();
        let result = step(&state, "fly", &params(&[]));
        assert_eq!(result.errors, vec!["unknown action: fly"]);
        assert_eq!(result.state, state);
    }

    #[test]
    fn equal_states_serialize_identically() {
        let a = arena();
        let b = arena();
        assert_eq!(serialize_state(&a), serialize_state(&b));
    }

    #[test]
    fn distant_enemy_is_invisible() {
        let mut state = open_room();
        state.enemies.insert(
            "lurker-1".into(),
            Enemy {
                x: state.player.x + 6,
                y: state.player.y,
                hp: 4,
            },
        );
        let text = serialize_state(&state);
        assert!(!text.contains("lurker-1"));
        state.enemies.get_mut("lurker-1").unwrap().x = state.player.x + 5;
        let text = serialize_state(&state);
        assert!(text.contains("lurker-1"));
    }

    #[test]
    fn status_round_trips_through_parse() {
        let state = arena();
        let text = serialize_state(&state);
        let visible = parse_state(&text).unwrap();
        assert_eq!(serde_json::to_string(&visible).unwrap(), text);
        assert_eq!(visible.player.x, state.player.x);
        assert_eq!(
            visible.nearby.iter().filter(|n| n.kind == "enemy").count(),
            state.enemies.len()
        );
    }

    #[test]
    fn step_is_a_pure_function_of_its_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let actions = ["move", "attack", "pickup", "wait", "descend", "fly"];
        let dirs = ["north", "south", "east", "west", "up"];
        let mut state = arena();
        for _ in 0..500 {
            let action = actions[rng.random_range(0..actions.len())];
            let p = if action == "move" || rng.random_bool(0.3) {
                params(&[("dir", dirs[rng.random_range(0..dirs.len())])])
            } else {
                params(&[])
            };
            let before = state.clone();
            let first = step(&state, action, &p);
            let second = step(&before, action, &p);
            assert_eq!(first, second, "step not deterministic for {action}");
            state = first.state;
        }
    }

    #[test]
    fn bounds_hold_over_fuzzed_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let actions = ["move", "attack", "pickup", "wait", "descend"];
        let dirs = ["north", "south", "east", "west"];
        let mut state = arena();
        for _ in 0..10_000 {
            let action = actions[rng.random_range(0..actions.len())];
            let p = params(&[("dir", dirs[rng.random_range(0..dirs.len())])]);
            state = step(&state, action, &p).state;
            assert!(state.player.x >= 0 && state.player.x < state.width);
            assert!(state.player.y >= 0 && state.player.y < state.height);
            assert!(state.player.hp >= 0 && state.player.hp <= state.player.max_hp);
            assert_ne!(
                state.terrain_at(state.player.x, state.player.y),
                Terrain::Wall
            );
            for enemy in state.enemies.values() {
                assert!(enemy.hp > 0);
                assert!(enemy.x >= 0 && enemy.x < state.width);
                assert!(enemy.y >= 0 && enemy.y < state.height);
            }
        }
    }
}
