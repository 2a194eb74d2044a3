//! Plain-text scenario files: metadata lines, then a `grid:` block.
//!
//! ```text
//! name: combat-arena      # optional metadata, key: value
//! monster_type: goblin    # enemy id prefix (default "enemy")
//! enemy_hp: 4             # default 4
//! player_hp: 10           # default 10
//! seed: 7                 # default 0
//! grid:                   # everything after this line is the map
//! #########
//! #@..e..>#
//! #########
//! ```
//!
//! Grid legend: `#` wall, `.` floor, `@` player start (exactly one), `>`
//! exit, `e` enemy, `i` item. Enemies and items are numbered in row-major
//! scan order: `goblin-1`, `goblin-2`, `item-1`, ...

use std::collections::BTreeMap;
use std::path::Path;

use super::{DungeonState, Enemy, EnvError, Player, Terrain};

pub const BUILTIN_SCENARIOS: [(&str, &str); 3] = [
    (
        "open-room",
        include_str!("../../../../assets/scenarios/open-room.txt"),
    ),
    (
        "corridor-maze",
        include_str!("../../../../assets/scenarios/corridor-maze.txt"),
    ),
    (
        "combat-arena",
        include_str!("../../../../assets/scenarios/combat-arena.txt"),
    ),
];

/// Look up one of the shipped scenarios by name.
pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn load_scenario(path: &Path) -> Result<DungeonState, EnvError> {
    let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<DungeonState, EnvError> {
    let mut monster_type = "enemy".to_string();
    let mut enemy_hp: i64 = 4;
    let mut player_hp: i64 = 10;
    let mut seed: u64 = 0;
    let mut grid_rows: Vec<(usize, &str)> = Vec::new();
    let mut in_grid = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if in_grid {
            grid_rows.push((line_no, raw));
            continue;
        }
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(EnvError::Scenario {
                line: line_no,
                reason: format!("expected key: value or grid:, got {line:?}"),
            });
        };
        let value = value.trim();
        match key.trim() {
            "grid" => in_grid = true,
            "name" => {} // informational only
            "monster_type" => monster_type = value.to_string(),
            "enemy_hp" => {
                enemy_hp = value.parse().map_err(|_| EnvError::Scenario {
                    line: line_no,
                    reason: format!("bad enemy_hp {value:?}"),
                })?
            }
            "player_hp" => {
                player_hp = value.parse().map_err(|_| EnvError::Scenario {
                    line: line_no,
                    reason: format!("bad player_hp {value:?}"),
                })?
            }
            "seed" => {
                seed = value.parse().map_err(|_| EnvError::Scenario {
                    line: line_no,
                    reason: format!("bad seed {value:?}"),
                })?
            }
            other => {
                return Err(EnvError::Scenario {
                    line: line_no,
                    reason: format!("unknown key {other:?}"),
                })
            }
        }
    }

    while grid_rows
        .last()
        .is_some_and(|(_, row)| row.trim().is_empty())
    {
        grid_rows.pop();
    }
    if grid_rows.is_empty() {
        return Err(EnvError::Scenario {
            line: text.lines().count(),
            reason: "no grid rows".into(),
        });
    }

    let width = grid_rows[0].1.chars().count() as i64;
    let height = grid_rows.len() as i64;
    let mut terrain = Vec::with_capacity((width * height) as usize);
    let mut player: Option<(i64, i64)> = None;
    let mut enemies = BTreeMap::new();
    let mut items = BTreeMap::new();
    let mut enemy_n = 0;
    let mut item_n = 0;

    for (y, (line_no, row)) in grid_rows.iter().enumerate() {
        if row.chars().count() as i64 != width {
            return Err(EnvError::Scenario {
                line: *line_no,
                reason: format!(
                    "grid row has {} cells, expected {width}",
                    row.chars().count()
                ),
            });
        }
        for (x, c) in row.chars().enumerate() {
            let (x, y) = (x as i64, y as i64);
            let tile = match c {
                '#' => Terrain::Wall,
                '.' => Terrain::Floor,
                '>' => Terrain::Exit,
                '@' => {
                    if player.replace((x, y)).is_some() {
                        return Err(EnvError::Scenario {
                            line: *line_no,
                            reason: "more than one player start".into(),
                        });
                    }
                    Terrain::Floor
                }
                'e' => {
                    enemy_n += 1;
                    enemies.insert(
                        format!("{monster_type}-{enemy_n}"),
                        Enemy { x, y, hp: enemy_hp },
                    );
                    Terrain::Floor
                }
                'i' => {
                    item_n += 1;
                    items.insert((x, y), format!("item-{item_n}"));
                    Terrain::Floor
                }
                other => {
                    return Err(EnvError::Scenario {
                        line: *line_no,
                        reason: format!("unknown grid character {other:?}"),
                    })
                }
            };
            terrain.push(tile);
        }
    }

    let (px, py) = player.ok_or_else(|| EnvError::Scenario {
        line: grid_rows[0].0,
        reason: "no player start (@) in grid".into(),
    })?;

    Ok(DungeonState {
        width,
        height,
        terrain,
        player: Player {
            x: px,
            y: py,
            hp: player_hp,
            max_hp: player_hp,
            inventory: Vec::new(),
        },
        items,
        enemies,
        turn: 0,
        rng_seed: seed,
        level_complete: false,
    })
}
