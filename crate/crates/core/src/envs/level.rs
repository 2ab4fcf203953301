use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::shortest_solution;
use super::{Family, LevelSpec, GRID, MAX_CUES};
use crate::error::{Error, Result};

pub(crate) type Pos = (usize, usize);

/// Bounce period of a dodger hazard sweeping columns 0..=8 and back.
pub(crate) const MOVER_PERIOD: u64 = 2 * (GRID as u64 - 1);

/// A hazard that sweeps one row back and forth, one column per tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mover {
    pub row: usize,
    pub phase: u64,
}

impl Mover {
    pub fn column_at(&self, tick: u64) -> usize {
        let k = (self.phase + tick) % MOVER_PERIOD;
        if k < GRID as u64 {
            k as usize
        } else {
            (MOVER_PERIOD - k) as usize
        }
    }
}

/// A generated layout. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub spec: LevelSpec,
    pub walls: Vec<bool>,
    pub hazards: Vec<bool>,
    pub movers: Vec<Mover>,
    pub goal: Pos,
    pub start: Pos,
    pub cues: Vec<Pos>,
}

pub(crate) fn cell(x: usize, y: usize) -> usize {
    y * GRID + x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MAX_REROLLS: usize = 10_000;

impl Level {
    /// Generates the level for `spec`, rerolling until the goal is reachable.
    pub fn generate(spec: LevelSpec) -> Result<Level> {
        let salt = match spec.family {
            Family::Runner => 0x52_55_4E,
            Family::Climber => 0x43_4C_4D,
            Family::Dodger => 0x44_4F_44,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(spec.level_seed ^ splitmix(salt)));
        for _ in 0..MAX_REROLLS {
            let candidate = match spec.family {
                Family::Runner => runner(spec, &mut rng),
                Family::Climber => climber(spec, &mut rng),
                Family::Dodger => dodger(spec, &mut rng),
            };
            if shortest_solution(&candidate).is_some() {
                return Ok(candidate);
            }
        }
        Err(Error::Config(format!("could not generate a solvable level for {spec:?}")))
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.walls[cell(x, y)]
    }

    pub fn hazard_at(&self, x: usize, y: usize, tick: u64) -> bool {
        self.hazards[cell(x, y)]
            || self
                .movers
                .iter()
                .any(|m| m.row == y && m.column_at(tick) == x)
    }

    /// Number of distinct ticks after which hazard positions repeat.
    pub fn period(&self) -> u64 {
        if self.movers.is_empty() {
            1
        } else {
            MOVER_PERIOD
        }
    }

    /// One character per cell: `#` wall, `x` hazard, `G` goal, `c` cue,
    /// `A` agent, `.` empty.
    pub fn render(&self, agent: Pos, tick: u64, cues_left: &[bool]) -> String {
        let mut out = String::with_capacity(GRID * (GRID + 1));
        for y in 0..GRID {
            for x in 0..GRID {
                let ch = if (x, y) == agent {
                    'A'
                } else if self.is_wall(x, y) {
                    '#'
                } else if self.hazard_at(x, y, tick) {
                    'x'
                } else if (x, y) == self.goal {
                    'G'
                } else if self
                    .cues
                    .iter()
                    .zip(cues_left)
                    .any(|(&c, &left)| left && c == (x, y))
                {
                    'c'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

fn blank(spec: LevelSpec, start: Pos, goal: Pos) -> Level {
    Level {
        spec,
        walls: vec![false; GRID * GRID],
        hazards: vec![false; GRID * GRID],
        movers: Vec::new(),
        goal,
        start,
        cues: Vec::new(),
    }
}

fn place_cues(level: &mut Level, rng: &mut ChaCha8Rng, rows: std::ops::RangeInclusive<usize>) {
    let mut free: Vec<Pos> = rows
        .flat_map(|y| (0..GRID).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            !level.walls[cell(x, y)]
                && !level.hazards[cell(x, y)]
                && (x, y) != level.start
                && (x, y) != level.goal
        })
        .collect();
    free.shuffle(rng);
    level.cues = free.into_iter().take(MAX_CUES).collect();
}

fn floor(level: &mut Level) {
    for x in 0..GRID {
        level.walls[cell(x, GRID - 1)] = true;
    }
}

fn runner(spec: LevelSpec, rng: &mut ChaCha8Rng) -> Level {
    let ground = GRID - 2;
    let mut l = blank(spec, (0, ground), (GRID - 1, ground));
    floor(&mut l);
    // Pits: floor cells turned into hazards, never adjacent to each other.
    let mut used = [false; GRID];
    let pits = rng.gen_range(1..=2);
    for _ in 0..pits {
        let x = rng.gen_range(2..=6);
        if used[x - 1] || used[x] || used[x + 1] {
            continue;
        }
        used[x] = true;
        l.walls[cell(x, GRID - 1)] = false;
        l.hazards[cell(x, GRID - 1)] = true;
    }
    let pillars = rng.gen_range(0..=2);
    for _ in 0..pillars {
        let x = rng.gen_range(2..=6);
        if used[x - 1] || used[x] || used[x + 1] {
            continue;
        }
        used[x] = true;
        let height = rng.gen_range(1..=2);
        for h in 0..height {
            l.walls[cell(x, ground - h)] = true;
        }
    }
    // Occasional floating block overhead.
    if rng.gen_bool(0.5) {
        let x = rng.gen_range(1..=7);
        let y = rng.gen_range(3..=4);
        l.walls[cell(x, y)] = true;
    }
    place_cues(&mut l, rng, 4..=6);
    l
}

fn climber(spec: LevelSpec, rng: &mut ChaCha8Rng) -> Level {
    let ground = GRID - 2;
    let start = (rng.gen_range(0..=1), ground);
    let mut l = blank(spec, start, (0, 0));
    floor(&mut l);
    // Two platforms stepping up to the right; the goal sits on the far end
    // of the upper one.
    let a1 = rng.gen_range(2..=3);
    let len1 = rng.gen_range(2..=3);
    let a2 = rng.gen_range(a1 + 1..=a1 + len1);
    let len2 = rng.gen_range(2..=3).min(GRID - a2);
    for x in a1..a1 + len1 {
        l.walls[cell(x, 6)] = true;
    }
    for x in a2..a2 + len2 {
        l.walls[cell(x, 4)] = true;
    }
    l.goal = (a2 + len2 - 1, 3);
    // Spikes on the ground beyond the first platform's edge.
    for _ in 0..rng.gen_range(1..=2) {
        let x = rng.gen_range(a1..GRID);
        l.hazards[cell(x, ground)] = true;
    }
    place_cues(&mut l, rng, 1..=ground);
    l
}

fn dodger(spec: LevelSpec, rng: &mut ChaCha8Rng) -> Level {
    let mut l = blank(spec, (GRID / 2, GRID - 1), (rng.gen_range(0..GRID), 0));
    let mut rows: Vec<usize> = (1..GRID - 1).collect();
    rows.shuffle(rng);
    for &row in rows.iter().take(5) {
        l.movers.push(Mover {
            row,
            phase: rng.gen_range(0..MOVER_PERIOD),
        });
    }
    for _ in 0..rng.gen_range(3..=6) {
        let x = rng.gen_range(0..GRID);
        let y = rng.gen_range(1..GRID - 1);
        l.walls[cell(x, y)] = true;
    }
    place_cues(&mut l, rng, 1..=GRID - 2);
    l
}
