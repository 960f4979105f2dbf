//! The gripper action primitive and the world transition function.

use super::{
    in_bin_region, in_drawer_interior, Event, Height, Held, Place, WorldState, GRID_H, GRID_W,
    PULL_DIST,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Displacement bins along rows: -11..=11.
pub const DX_BINS: usize = 2 * (GRID_H - 1) + 1;
/// Displacement bins along columns: -15..=15.
pub const DY_BINS: usize = 2 * (GRID_W - 1) + 1;

/// One discrete gripper command: planar displacement, then height, then
/// rotation, then closure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteAction {
    /// Row displacement bin in 0..DX_BINS (decodes to -11..=11).
    pub dx: usize,
    /// Column displacement bin in 0..DY_BINS (decodes to -15..=15).
    pub dy: usize,
    /// Height level index in 0..4.
    pub z: usize,
    /// Rotation index: 0 or 1.
    pub alpha: usize,
    /// Closure command: 1 = close, 0 = open.
    pub beta: usize,
}

impl ConcreteAction {
    pub fn decode_dx(&self) -> i32 {
        self.dx.min(DX_BINS - 1) as i32 - (GRID_H as i32 - 1)
    }

    pub fn decode_dy(&self) -> i32 {
        self.dy.min(DY_BINS - 1) as i32 - (GRID_W as i32 - 1)
    }

    /// Encodes a row/column displacement into bin indices.
    pub fn encode_delta(dx: i32, dy: i32) -> (usize, usize) {
        let bx = (dx + GRID_H as i32 - 1).clamp(0, DX_BINS as i32 - 1) as usize;
        let by = (dy + GRID_W as i32 - 1).clamp(0, DY_BINS as i32 - 1) as usize;
        (bx, by)
    }
}

/// Something observable that happened during a transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SimEvent {
    Grasped { id: usize },
    GraspedHandle,
    Deposited { id: usize, place: Place },
    DrawerToggled { open: bool },
    Cut { id: usize },
    Slip { id: usize, to: (usize, usize) },
}

fn clamp_cell(r: i32, c: i32) -> (usize, usize) {
    (r.clamp(0, GRID_H as i32 - 1) as usize, c.clamp(0, GRID_W as i32 - 1) as usize)
}

/// First free table cell at increasing Chebyshev distance from `from`, in a
/// fixed scan order (deterministic drop placement).
fn nearest_free(w: &WorldState, from: (usize, usize)) -> Option<(usize, usize)> {
    for radius in 0..GRID_H.max(GRID_W) as i32 {
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                if dr.abs().max(dc.abs()) != radius {
                    continue;
                }
                let cell = clamp_cell(from.0 as i32 + dr, from.1 as i32 + dc);
                if w.cell_free(cell) {
                    return Some(cell);
                }
            }
        }
    }
    None
}

/// Executes one [`ConcreteAction`]. Pure: returns the successor state, the
/// post-step tactile signal, and the events that occurred. Physically invalid
/// attempts (grasping air, depositing at the wrong height) are no-ops that
/// still consume the step.
pub fn apply_action(w: &WorldState, a: &ConcreteAction) -> (WorldState, u8, Vec<SimEvent>) {
    let mut next = w.clone();
    let mut events = Vec::new();
    let step = next.step_count;
    let (dx, dy) = (a.decode_dx(), a.decode_dy());

    if next.held == Some(Held::Handle) {
        // Holding the handle constrains the gripper to the drawer track: only
        // a full pull/push stroke does anything.
        if !next.drawer_open && dx >= PULL_DIST {
            next.drawer_open = true;
            events.push(SimEvent::DrawerToggled { open: true });
        } else if next.drawer_open && dx <= -PULL_DIST {
            next.drawer_open = false;
            events.push(SimEvent::DrawerToggled { open: false });
        }
        next.gripper.cell = next.handle_cell();
        next.gripper.z = Height::Handle;
        if a.beta == 0 {
            next.held = None;
            next.gripper.closed = false;
        }
    } else {
        let (r, c) = next.gripper.cell;
        next.gripper.cell = clamp_cell(r as i32 + dx, c as i32 + dy);
        next.gripper.z = Height::from_index(a.z.min(3));
        next.gripper.alpha = (a.alpha.min(1)) as u8;

        match (a.beta, next.held) {
            (1, None) => {
                let cell = next.gripper.cell;
                next.gripper.closed = true;
                if next.gripper.z == Height::Table && next.gripper.alpha == 0 {
                    if let Some(id) = next.object_at(cell).map(|o| o.id) {
                        next.held = Some(Held::Object(id));
                        next.grasp_count += 1;
                        events.push(SimEvent::Grasped { id });
                    }
                } else if next.gripper.z == Height::Handle
                    && next.gripper.alpha == 1
                    && cell == next.handle_cell()
                {
                    next.held = Some(Held::Handle);
                    events.push(SimEvent::GraspedHandle);
                }
            }
            (0, Some(Held::Object(id))) => {
                let cell = next.gripper.cell;
                let place = match next.gripper.z {
                    Height::AboveBin if in_bin_region(cell) => Some((Place::Bin, cell)),
                    Height::AboveDrawer if next.drawer_open && in_drawer_interior(cell) => {
                        Some((Place::Drawer, cell))
                    }
                    Height::Table => nearest_free(&next, cell).map(|c| (Place::Table, c)),
                    _ => None,
                };
                if let Some((place, at)) = place {
                    let obj = next.objects.iter_mut().find(|o| o.id == id).unwrap();
                    obj.cell = at;
                    obj.in_bin = place == Place::Bin;
                    obj.in_drawer = place == Place::Drawer;
                    next.held = None;
                    next.gripper.closed = false;
                    next.last_deposit = Some((id, place));
                    events.push(SimEvent::Deposited { id, place });
                }
            }
            (0, None) => next.gripper.closed = false,
            _ => {}
        }

        // A held knife cuts whatever cuttable it is moved onto.
        if let Some(held) = next.held_object() {
            if held.category == crate::domain::Category::Knife && next.gripper.z == Height::Table {
                let target =
                    next.object_at(next.gripper.cell).filter(|o| o.category.is_cuttable() && !o.cut);
                if let Some(tid) = target.map(|o| o.id) {
                    next.objects.iter_mut().find(|o| o.id == tid).unwrap().cut = true;
                    events.push(SimEvent::Cut { id: tid });
                }
            }
        }
    }

    // Slip resolution: armed scripts fire on their step / grasp ordinal;
    // otherwise each successful grasp slips with probability p_slip.
    if let Some(Held::Object(id)) = next.held {
        let grasped_now = events.iter().any(|e| matches!(e, SimEvent::Grasped { .. }));
        let mut fire = false;
        next.armed_slips.retain(|arm| {
            let hit = match arm {
                Event::SlipAtStep { step: s } => *s == step,
                Event::SlipAtClosure { nth } => grasped_now && *nth == next.grasp_count,
                _ => false,
            };
            fire |= hit;
            !hit
        });
        let mut rng =
            ChaCha8Rng::seed_from_u64(next.rng_seed ^ (step as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15));
        if !fire && grasped_now && next.p_slip > 0.0 {
            fire = rng.gen_bool(next.p_slip);
        }
        if fire {
            if let Some(to) = nearest_free(&next, next.gripper.cell) {
                // Jitter the landing spot among the free neighbours so drops
                // do not stack deterministically on one cell.
                let candidates: Vec<(usize, usize)> = (-1..=1)
                    .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
                    .map(|(dr, dc)| clamp_cell(to.0 as i32 + dr, to.1 as i32 + dc))
                    .filter(|&c| next.cell_free(c))
                    .collect();
                let to = if candidates.is_empty() {
                    to
                } else {
                    candidates[rng.gen_range(0..candidates.len())]
                };
                let obj = next.objects.iter_mut().find(|o| o.id == id).unwrap();
                obj.cell = to;
                next.held = None;
                next.gripper.closed = false;
                events.push(SimEvent::Slip { id, to });
            }
        }
    }

    next.step_count += 1;
    let tactile = next.tactile();
    (next, tactile, events)
}
