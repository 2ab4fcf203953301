//! Pure transition rules shared by the environments and the level validator.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::level::{Level, Pos};
use super::{Family, GRID, NUM_ACTIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Alive,
    Goal,
    Hazard,
}

#[derive(Clone, Debug)]
pub(crate) struct Transition {
    pub pos: Pos,
    /// Every cell entered during the step, in order.
    pub path: Vec<Pos>,
    pub outcome: Outcome,
}

struct Mover<'a> {
    level: &'a Level,
    tick: u64,
    pos: Pos,
    path: Vec<Pos>,
    outcome: Outcome,
}

impl Mover<'_> {
    fn blocked(&self, x: isize, y: isize) -> bool {
        x < 0 || y < 0 || x >= GRID as isize || y >= GRID as isize || self.level.is_wall(x as usize, y as usize)
    }

    fn supported(&self) -> bool {
        let (x, y) = self.pos;
        self.blocked(x as isize, y as isize + 1)
    }

    /// Moves one cell if possible; returns whether the agent moved.
    fn try_move(&mut self, dx: isize, dy: isize) -> bool {
        if self.outcome != Outcome::Alive {
            return false;
        }
        let (x, y) = (self.pos.0 as isize + dx, self.pos.1 as isize + dy);
        if self.blocked(x, y) {
            return false;
        }
        self.pos = (x as usize, y as usize);
        self.path.push(self.pos);
        if self.level.hazard_at(self.pos.0, self.pos.1, self.tick) {
            self.outcome = Outcome::Hazard;
        } else if self.pos == self.level.goal {
            self.outcome = Outcome::Goal;
        }
        true
    }
}

/// Applies `action` at `pos` when hazards are laid out as at `tick`.
pub(crate) fn transition(level: &Level, pos: Pos, tick: u64, action: usize) -> Transition {
    let mut m = Mover {
        level,
        tick,
        pos,
        path: Vec::with_capacity(3),
        outcome: Outcome::Alive,
    };
    match level.spec.family {
        Family::Runner | Family::Climber => platformer(&mut m, action),
        Family::Dodger => top_down(&mut m, action),
    }
    Transition {
        pos: m.pos,
        path: m.path,
        outcome: m.outcome,
    }
}

// 0 up (needs footing), 1 down, 2 left, 3 right, 4 jump two cells,
// 5 jump then right, 6 jump then left, 7 wait. Gravity pulls one cell per
// step unless the agent rose this step.
fn platformer(m: &mut Mover<'_>, action: usize) {
    let mut rose = false;
    match action {
        0 => {
            if m.supported() {
                rose = m.try_move(0, -1);
            }
        }
        1 => {
            m.try_move(0, 1);
        }
        2 => {
            m.try_move(-1, 0);
        }
        3 => {
            m.try_move(1, 0);
        }
        4 => {
            if m.supported() && m.try_move(0, -1) {
                rose = true;
                m.try_move(0, -1);
            }
        }
        5 | 6
            if m.supported() => {
                rose = m.try_move(0, -1);
                m.try_move(if action == 5 { 1 } else { -1 }, 0);
            }
        _ => {}
    }
    if !rose && !m.supported() {
        m.try_move(0, 1);
    }
}

// 0-3 single moves, 4 dash up, 5 dash left, 6 dash right, 7 wait.
// Hazards advance after the agent; landing on a hazard's next cell is fatal.
fn top_down(m: &mut Mover<'_>, action: usize) {
    let (dx, dy, n) = match action {
        0 => (0, -1, 1),
        1 => (0, 1, 1),
        2 => (-1, 0, 1),
        3 => (1, 0, 1),
        4 => (0, -1, 2),
        5 => (-1, 0, 2),
        6 => (1, 0, 2),
        _ => (0, 0, 0),
    };
    for _ in 0..n {
        if !m.try_move(dx, dy) {
            break;
        }
    }
    if m.outcome == Outcome::Alive && m.level.hazard_at(m.pos.0, m.pos.1, m.tick + 1) {
        m.outcome = Outcome::Hazard;
    }
}

/// Breadth-first search over `(position, tick mod period)`; returns the
/// shortest action sequence from the start that reaches the goal.
pub fn shortest_solution(level: &Level) -> Option<Vec<usize>> {
    let period = level.period();
    let start = (level.start, 0u64);
    if level.hazard_at(level.start.0, level.start.1, 0) {
        return None;
    }
    let mut parent: HashMap<(Pos, u64), ((Pos, u64), usize)> = HashMap::new();
    let mut queue = VecDeque::from([start]);
    parent.insert(start, (start, usize::MAX));
    while let Some(state @ (pos, phase)) = queue.pop_front() {
        for action in 0..NUM_ACTIONS {
            let t = transition(level, pos, phase, action);
            match t.outcome {
                Outcome::Hazard => continue,
                Outcome::Goal => {
                    let mut actions = vec![action];
                    let mut cur = state;
                    while cur != start {
                        let (prev, a) = parent[&cur];
                        actions.push(a);
                        cur = prev;
                    }
                    actions.reverse();
                    return Some(actions);
                }
                Outcome::Alive => {
                    let next = (t.pos, (phase + 1) % period);
                    if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(next) {
                        e.insert((state, action));
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    None
}
