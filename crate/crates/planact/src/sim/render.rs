//! Depth heightmap rendering.
//!
//! The observation is a 24x32 normalized heightmap (2x2 pixels per workspace
//! cell). Each category renders at a distinct height so a small conv net can
//! identify what is where; the gripper and whatever it holds are deliberately
//! not rendered, so two worlds that differ only in what is grasped (or what
//! already sits inside the bin) produce identical images.

use super::{WorldState, BIN_COLS, BIN_ROWS, DRAWER_COLS, DRAWER_ROWS, GRID_H, GRID_W, HANDLE_COL};
use crate::domain::Category;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEPTH_H: usize = 2 * GRID_H;
pub const DEPTH_W: usize = 2 * GRID_W;

/// Millimetres of camera offset per depth pixel.
const MM_TO_PX: f64 = 0.1;
/// Footprint scale per degree of field-of-view error.
const FOV_TO_SCALE: f64 = 0.4;

pub const DRAWER_LID_HEIGHT: f32 = 0.15;
pub const DRAWER_CAVITY_HEIGHT: f32 = 0.06;
pub const HANDLE_HEIGHT: f32 = 0.85;
pub const BIN_RIM_HEIGHT: f32 = 0.75;
pub const BIN_CAVITY_HEIGHT: f32 = 0.04;

/// Per-category render height. Distinct values (and distinct from the
/// fixtures) make categories recoverable from depth alone.
pub fn category_height(c: Category) -> f32 {
    match c {
        Category::Trash => 0.22,
        Category::Knife => 0.28,
        Category::Banana => 0.33,
        Category::Cuttable => 0.38,
        Category::RoundObject => 0.48,
        Category::Apple => 0.55,
        Category::Cosmetic => 0.62,
        Category::Can => 0.70,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    pub data: Vec<f32>,
}

impl DepthGrid {
    pub fn zeros() -> DepthGrid {
        DepthGrid { data: vec![0.0; DEPTH_H * DEPTH_W] }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * DEPTH_W + c]
    }

    fn raise(&mut self, r: usize, c: usize, h: f32) {
        let v = &mut self.data[r * DEPTH_W + c];
        *v = v.max(h.clamp(0.0, 1.0));
    }
}

/// Camera intrinsic/extrinsic perturbation (the domain-randomization axis).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Position offset in millimetres.
    pub pos_mm: [f64; 3],
    /// Pointing offset in millimetres.
    pub point_mm: [f64; 3],
    /// Field-of-view offset in degrees.
    pub fov_deg: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CameraNoise {
    /// Uniform bound on each position/pointing component, millimetres.
    pub mm: f64,
    /// Uniform bound on the field-of-view offset, degrees.
    pub deg: f64,
}

impl Default for CameraNoise {
    fn default() -> Self {
        CameraNoise { mm: 2.5, deg: 0.025 }
    }
}

impl CameraModel {
    pub fn ideal() -> CameraModel {
        CameraModel { pos_mm: [0.0; 3], point_mm: [0.0; 3], fov_deg: 0.0 }
    }

    pub fn sample<R: Rng>(noise: &CameraNoise, rng: &mut R) -> CameraModel {
        let mut u = |b: f64| rng.gen_range(-b..=b);
        CameraModel {
            pos_mm: [u(noise.mm), u(noise.mm), u(noise.mm)],
            point_mm: [u(noise.mm), u(noise.mm), u(noise.mm)],
            fov_deg: u(noise.deg),
        }
    }

    /// Net sub-pixel image shift (rows, cols).
    fn shift_px(&self) -> (f64, f64) {
        (
            (self.pos_mm[0] + self.point_mm[0]) * MM_TO_PX,
            (self.pos_mm[1] + self.point_mm[1]) * MM_TO_PX,
        )
    }

    fn footprint_scale(&self) -> f64 {
        1.0 + self.fov_deg * FOV_TO_SCALE
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Footprint {
    Block,
    Round,
    Elongated,
}

/// Cut objects render flattened and spread out, so "already cut" is visible
/// in depth (the planner needs it to emit "Done").
const CUT_HEIGHT_FACTOR: f32 = 0.45;
const CUT_SPREAD_FACTOR: f64 = 1.3;

/// Stamps a footprint centred on cell `(r, c)` with half-extent `e` pixels.
fn stamp(g: &mut DepthGrid, cell: (usize, usize), e: f64, h: f32, fp: Footprint, cam: &CameraModel) {
    let (sr, sc) = cam.shift_px();
    let cr = 2.0 * cell.0 as f64 + 1.0 + sr;
    let cc = 2.0 * cell.1 as f64 + 1.0 + sc;
    let (er, ec) = match fp {
        Footprint::Elongated => (0.55 * e, 2.0 * e),
        _ => (e, e),
    };
    let r0 = ((cr - er).floor().max(0.0)) as usize;
    let r1 = ((cr + er).ceil().min(DEPTH_H as f64)) as usize;
    let c0 = ((cc - ec).floor().max(0.0)) as usize;
    let c1 = ((cc + ec).ceil().min(DEPTH_W as f64)) as usize;
    for r in r0..r1 {
        for c in c0..c1 {
            let pr = r as f64 + 0.5 - cr;
            let pc = c as f64 + 0.5 - cc;
            let inside = match fp {
                Footprint::Block | Footprint::Elongated => pr.abs() <= er && pc.abs() <= ec,
                Footprint::Round => (pr / er).powi(2) + (pc / ec).powi(2) <= 1.0,
            };
            if inside {
                g.raise(r, c, h);
            }
        }
    }
}

/// Renders the world through `cam`. Deterministic; all heights in [0, 1].
pub fn render_depth(w: &WorldState, cam: &CameraModel) -> DepthGrid {
    let mut g = DepthGrid::zeros();

    // Bin: raised rim around a low cavity. Contents are below the rim and
    // not visible.
    for r in BIN_ROWS {
        for c in BIN_COLS {
            let rim = r == *BIN_ROWS.start()
                || r == *BIN_ROWS.end()
                || c == *BIN_COLS.start()
                || c == *BIN_COLS.end();
            let h = if rim { BIN_RIM_HEIGHT } else { BIN_CAVITY_HEIGHT };
            stamp(&mut g, (r, c), 1.0, h, Footprint::Block, cam);
        }
    }

    // Drawer: a lid over the interior, a front edge that sits further out
    // when open, and the handle. The open cavity exposes its floor.
    let front = if w.drawer_open { super::DRAWER_FRONT_OPEN } else { super::DRAWER_FRONT_CLOSED };
    for r in DRAWER_ROWS {
        for c in DRAWER_COLS {
            let h = if w.drawer_open { DRAWER_CAVITY_HEIGHT } else { DRAWER_LID_HEIGHT };
            stamp(&mut g, (r, c), 1.0, h, Footprint::Block, cam);
        }
    }
    for r in (*DRAWER_ROWS.end() + 1)..=front {
        for c in DRAWER_COLS {
            stamp(&mut g, (r, c), 1.0, DRAWER_LID_HEIGHT, Footprint::Block, cam);
        }
    }
    stamp(&mut g, (front, HANDLE_COL), 0.6, HANDLE_HEIGHT, Footprint::Block, cam);

    let fov = cam.footprint_scale();
    for o in &w.objects {
        if o.in_bin {
            continue; // below the bin rim
        }
        if matches!(w.held, Some(super::Held::Object(id)) if id == o.id) {
            continue; // in the gripper, outside the table crop
        }
        if o.in_drawer && !w.drawer_open {
            continue; // closed drawer hides its contents
        }
        let mut e = o.scale * fov;
        let mut h = category_height(o.category);
        if o.cut {
            e *= CUT_SPREAD_FACTOR;
            h *= CUT_HEIGHT_FACTOR;
        }
        let fp = if o.category == Category::Knife {
            Footprint::Elongated
        } else if !o.cut && o.shape() == crate::domain::Shape::Round {
            Footprint::Round
        } else {
            Footprint::Block
        };
        stamp(&mut g, o.cell, e, h, fp, cam);
    }
    g
}
