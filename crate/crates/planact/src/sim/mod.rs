//! Symbolic tabletop simulator.
//!
//! A 12x16 cell workspace with a drawer (top-left), a bin (top-right) and a
//! single gripper. Transitions are pure functions: every operation takes a
//! [`WorldState`] by reference and returns a new one, so trajectories replay
//! bit-identically from (scenario, seed, action sequence, event script).

pub mod action;
pub mod predicates;
pub mod render;
pub mod scenario;

pub use action::{apply_action, ConcreteAction, SimEvent};
pub use predicates::check_predicate;
pub use render::{render_depth, CameraModel, CameraNoise, DepthGrid, DEPTH_H, DEPTH_W};
pub use scenario::{reset_scenario, HoldAtStart, SceneTemplate, ScenarioConfig, ALL_TEMPLATES};

use crate::domain::{Category, Shape};
use serde::{Deserialize, Serialize};

/// Workspace rows (x axis; the drawer pulls toward +x).
pub const GRID_H: usize = 12;
/// Workspace columns (y axis).
pub const GRID_W: usize = 16;

/// Fixed gripper start cell; every skill begins from here.
pub const HOME: (usize, usize) = (8, 8);

/// Drawer interior: rows 0..=2, cols 0..=4. The front edge sits at
/// `DRAWER_FRONT_CLOSED` when closed and `DRAWER_FRONT_OPEN` when pulled out.
pub const DRAWER_ROWS: std::ops::RangeInclusive<usize> = 0..=2;
pub const DRAWER_COLS: std::ops::RangeInclusive<usize> = 0..=4;
pub const DRAWER_FRONT_CLOSED: usize = 3;
pub const DRAWER_FRONT_OPEN: usize = 5;
pub const HANDLE_COL: usize = 2;
/// Cells the drawer front must travel for one open/close stroke.
pub const PULL_DIST: i32 = (DRAWER_FRONT_OPEN - DRAWER_FRONT_CLOSED) as i32;

/// Bin region: rows 0..=3, cols 11..=15.
pub const BIN_ROWS: std::ops::RangeInclusive<usize> = 0..=3;
pub const BIN_COLS: std::ops::RangeInclusive<usize> = 11..=15;

/// Objects spawn in the open table area below the fixtures.
pub const SPAWN_ROWS: std::ops::RangeInclusive<usize> = 6..=11;

pub fn in_drawer_interior(cell: (usize, usize)) -> bool {
    DRAWER_ROWS.contains(&cell.0) && DRAWER_COLS.contains(&cell.1)
}

pub fn in_bin_region(cell: (usize, usize)) -> bool {
    BIN_ROWS.contains(&cell.0) && BIN_COLS.contains(&cell.1)
}

/// "Near the drawer" for the grasp-near-drawer skill: the spawn rows that
/// border the drawer's pull-out zone.
pub fn near_drawer(cell: (usize, usize)) -> bool {
    cell.0 <= 7 && cell.1 <= 5
}

/// Named gripper height levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Height {
    Table,
    Handle,
    AboveBin,
    AboveDrawer,
}

pub const HEIGHT_LEVELS: usize = 4;

impl Height {
    pub fn from_index(i: usize) -> Height {
        match i {
            0 => Height::Table,
            1 => Height::Handle,
            2 => Height::AboveBin,
            _ => Height::AboveDrawer,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Height::Table => 0,
            Height::Handle => 1,
            Height::AboveBin => 2,
            Height::AboveDrawer => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: usize,
    pub category: Category,
    /// Table cell. Retained while held (used by "near the drawer" checks);
    /// updated on deposit.
    pub cell: (usize, usize),
    /// Unitless footprint scale in [0.85, 1.15].
    pub scale: f64,
    pub cut: bool,
    pub in_bin: bool,
    pub in_drawer: bool,
}

impl ObjectInstance {
    pub fn shape(&self) -> Shape {
        self.category.shape()
    }

    /// On the open table surface (graspable at table height).
    pub fn on_table(&self) -> bool {
        !self.in_bin && !self.in_drawer
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Held {
    Object(usize),
    Handle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gripper {
    pub cell: (usize, usize),
    pub z: Height,
    /// Rotation index: 0 = 0 degrees (objects), 1 = 90 degrees (the handle).
    pub alpha: u8,
    pub closed: bool,
}

/// Where the last deposit landed; skill postconditions read this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Place {
    Table,
    Bin,
    Drawer,
}

/// A scripted or armed perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Event {
    AddObject { category: Category, cell: (usize, usize), scale: f64 },
    RemoveObject { id: usize },
    /// Drop the held object when `step_count` reaches `step`.
    SlipAtStep { step: u32 },
    /// Drop the object grabbed by the `nth` successful grasp (1-based).
    SlipAtClosure { nth: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<ObjectInstance>,
    pub drawer_open: bool,
    pub gripper: Gripper,
    pub held: Option<Held>,
    pub last_deposit: Option<(usize, Place)>,
    pub rng_seed: u64,
    pub step_count: u32,
    pub grasp_count: u32,
    /// Probability that a successful grasp immediately slips (evaluation-time
    /// perturbation; 0 during training).
    pub p_slip: f64,
    pub armed_slips: Vec<Event>,
    next_id: usize,
}

impl WorldState {
    pub fn empty(seed: u64) -> WorldState {
        WorldState {
            objects: Vec::new(),
            drawer_open: false,
            gripper: Gripper { cell: HOME, z: Height::Table, alpha: 0, closed: false },
            held: None,
            last_deposit: None,
            rng_seed: seed,
            step_count: 0,
            grasp_count: 0,
            p_slip: 0.0,
            armed_slips: Vec::new(),
            next_id: 0,
        }
    }

    pub fn handle_cell(&self) -> (usize, usize) {
        (if self.drawer_open { DRAWER_FRONT_OPEN } else { DRAWER_FRONT_CLOSED }, HANDLE_COL)
    }

    pub fn object(&self, id: usize) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn held_object(&self) -> Option<&ObjectInstance> {
        match self.held {
            Some(Held::Object(id)) => self.object(id),
            _ => None,
        }
    }

    /// Binary contact signal: 1 iff the gripper is holding something.
    pub fn tactile(&self) -> u8 {
        u8::from(self.held.is_some())
    }

    /// The on-table object at `cell`, if any.
    pub fn object_at(&self, cell: (usize, usize)) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| {
            o.on_table() && o.cell == cell && !matches!(self.held, Some(Held::Object(id)) if id == o.id)
        })
    }

    /// Cells free for placing an object on the open table surface: inside the
    /// grid, clear of the bin, the drawer and its pull-out track, and of
    /// other on-table objects.
    pub fn cell_free(&self, cell: (usize, usize)) -> bool {
        cell.0 < GRID_H
            && cell.1 < GRID_W
            && !in_bin_region(cell)
            && !(cell.0 <= DRAWER_FRONT_OPEN && DRAWER_COLS.contains(&cell.1))
            && self.object_at(cell).is_none()
    }

    pub fn add_object(&mut self, category: Category, cell: (usize, usize), scale: f64) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.objects.push(ObjectInstance {
            id,
            category,
            cell,
            scale,
            cut: false,
            in_bin: false,
            in_drawer: false,
        });
        id
    }
}

/// Applies an event to the world. Add/remove take effect immediately; slip
/// events are armed and fire inside [`apply_action`].
pub fn inject_event(w: &WorldState, e: &Event) -> crate::Result<WorldState> {
    let mut next = w.clone();
    match e {
        Event::AddObject { category, cell, scale } => {
            if !(cell.0 < GRID_H && cell.1 < GRID_W) || next.object_at(*cell).is_some() {
                return Err(crate::Error::Scenario(format!(
                    "cannot add object at occupied or out-of-range cell {cell:?}"
                )));
            }
            next.add_object(*category, *cell, *scale);
        }
        Event::RemoveObject { id } => {
            let before = next.objects.len();
            next.objects.retain(|o| o.id != *id);
            if next.objects.len() == before {
                return Err(crate::Error::Scenario(format!("no object with id {id}")));
            }
            if next.held == Some(Held::Object(*id)) {
                next.held = None;
                next.gripper.closed = false;
            }
        }
        Event::SlipAtStep { .. } | Event::SlipAtClosure { .. } => {
            next.armed_slips.push(e.clone());
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests;
