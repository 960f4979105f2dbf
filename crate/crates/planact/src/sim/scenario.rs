//! Seeded scene construction.
//!
//! Seven templates cover the task corpus; every scene also contains the
//! drawer and bin fixtures. All sampling flows from one seeded generator, so
//! identical (config, seed) pairs produce bit-identical worlds.

use super::{Held, WorldState, GRID_W, SPAWN_ROWS};
use crate::domain::{Category, ALL_CATEGORIES};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SCALE_MIN: f64 = 0.85;
pub const SCALE_MAX: f64 = 1.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneTemplate {
    /// Just the fixtures, plus up to two far-away distractors.
    DrawerOnly,
    /// One target object and up to two distractors of other categories.
    SingleTarget,
    /// A target in the zone bordering the drawer, distractors away from it.
    NearDrawer,
    /// Only trash on the table (one to three pieces).
    TrashTable,
    /// A knife and a cuttable target, plus non-cuttable distractors.
    KnifeTarget,
    /// One to three round objects among one or two non-round ones.
    RoundMix,
    /// A target, some trash, and a knife when the target is cuttable.
    MixedClutter,
}

pub const ALL_TEMPLATES: [SceneTemplate; 7] = [
    SceneTemplate::DrawerOnly,
    SceneTemplate::SingleTarget,
    SceneTemplate::NearDrawer,
    SceneTemplate::TrashTable,
    SceneTemplate::KnifeTarget,
    SceneTemplate::RoundMix,
    SceneTemplate::MixedClutter,
];

/// What the gripper holds when the episode starts (for single-skill tasks
/// whose precondition is "already holding X").
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldAtStart {
    Target,
    Knife,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub template: SceneTemplate,
    /// None samples open/closed with equal probability.
    pub drawer_open: Option<bool>,
    /// None samples a template-appropriate category.
    pub target: Option<Category>,
    pub hold_at_start: Option<HoldAtStart>,
    #[serde(default)]
    pub p_slip: f64,
}

impl ScenarioConfig {
    pub fn new(template: SceneTemplate) -> ScenarioConfig {
        ScenarioConfig { template, drawer_open: None, target: None, hold_at_start: None, p_slip: 0.0 }
    }
}

const CUTTABLE: [Category; 3] = [Category::Apple, Category::Banana, Category::Cuttable];
const ROUND: [Category; 3] = [Category::Apple, Category::RoundObject, Category::Can];

struct Spawner {
    cells: Vec<(usize, usize)>,
}

impl Spawner {
    fn new(rng: &mut ChaCha8Rng) -> Spawner {
        let mut cells: Vec<(usize, usize)> =
            SPAWN_ROWS.flat_map(|r| (0..GRID_W).map(move |c| (r, c))).collect();
        cells.shuffle(rng);
        Spawner { cells }
    }

    fn take(&mut self, pred: impl Fn((usize, usize)) -> bool) -> Result<(usize, usize)> {
        let idx = self
            .cells
            .iter()
            .position(|&c| pred(c))
            .ok_or_else(|| Error::Scenario("no free spawn cell matches the placement rule".into()))?;
        Ok(self.cells.remove(idx))
    }

    fn any(&mut self) -> Result<(usize, usize)> {
        self.take(|_| true)
    }
}

fn scale(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(SCALE_MIN..=SCALE_MAX)
}

fn pick(rng: &mut ChaCha8Rng, from: &[Category]) -> Category {
    from[rng.gen_range(0..from.len())]
}

/// Distinct distractor categories, excluding anything in `avoid`.
fn distractors(rng: &mut ChaCha8Rng, n: usize, avoid: &[Category]) -> Vec<Category> {
    let mut pool: Vec<Category> =
        ALL_CATEGORIES.iter().copied().filter(|c| !avoid.contains(c)).collect();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

/// Builds the initial world for `cfg` under `seed`.
pub fn reset_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<WorldState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WorldState::empty(seed);
    w.p_slip = cfg.p_slip;
    w.drawer_open = cfg.drawer_open.unwrap_or_else(|| rng.gen_bool(0.5));
    let mut spawn = Spawner::new(&mut rng);
    let mut target_id = None;

    match cfg.template {
        SceneTemplate::DrawerOnly => {
            let n = rng.gen_range(0..=2);
            for c in distractors(&mut rng, n, &[]) {
                let cell = spawn.take(|c| !super::near_drawer(c))?;
                w.add_object(c, cell, scale(&mut rng));
            }
        }
        SceneTemplate::SingleTarget => {
            let target = cfg.target.unwrap_or_else(|| pick(&mut rng, &ALL_CATEGORIES));
            let cell = spawn.any()?;
            target_id = Some(w.add_object(target, cell, scale(&mut rng)));
            let n = rng.gen_range(0..=2);
            for c in distractors(&mut rng, n, &[target]) {
                let cell = spawn.any()?;
                w.add_object(c, cell, scale(&mut rng));
            }
        }
        SceneTemplate::NearDrawer => {
            let target = cfg.target.unwrap_or_else(|| pick(&mut rng, &ALL_CATEGORIES));
            let cell = spawn.take(super::near_drawer)?;
            target_id = Some(w.add_object(target, cell, scale(&mut rng)));
            let n = rng.gen_range(1..=2);
            for c in distractors(&mut rng, n, &[target]) {
                let cell = spawn.take(|c| !super::near_drawer(c))?;
                w.add_object(c, cell, scale(&mut rng));
            }
        }
        SceneTemplate::TrashTable => {
            for _ in 0..rng.gen_range(1..=3) {
                let cell = spawn.any()?;
                w.add_object(Category::Trash, cell, scale(&mut rng));
            }
        }
        SceneTemplate::KnifeTarget => {
            let target = match cfg.target {
                Some(c) if c.is_cuttable() => c,
                Some(c) => {
                    return Err(Error::Scenario(format!("{} is not cuttable", c.word())))
                }
                None => pick(&mut rng, &CUTTABLE),
            };
            let cell = spawn.any()?;
            target_id = Some(w.add_object(target, cell, scale(&mut rng)));
            let cell = spawn.any()?;
            w.add_object(Category::Knife, cell, scale(&mut rng));
            let n = rng.gen_range(0..=2);
            let avoid = [target, Category::Knife, Category::Apple, Category::Banana, Category::Cuttable];
            for c in distractors(&mut rng, n, &avoid) {
                let cell = spawn.any()?;
                w.add_object(c, cell, scale(&mut rng));
            }
        }
        SceneTemplate::RoundMix => {
            for _ in 0..rng.gen_range(1..=3) {
                let cell = spawn.any()?;
                w.add_object(pick(&mut rng, &ROUND), cell, scale(&mut rng));
            }
            let nonround = [Category::Cosmetic, Category::Banana, Category::Trash, Category::Cuttable];
            for _ in 0..rng.gen_range(1..=2) {
                let cell = spawn.any()?;
                w.add_object(pick(&mut rng, &nonround), cell, scale(&mut rng));
            }
        }
        SceneTemplate::MixedClutter => {
            let target =
                cfg.target.unwrap_or_else(|| pick(&mut rng, &[Category::Cosmetic, Category::Can]));
            let cell = spawn.any()?;
            target_id = Some(w.add_object(target, cell, scale(&mut rng)));
            for _ in 0..rng.gen_range(1..=2) {
                let cell = spawn.any()?;
                w.add_object(Category::Trash, cell, scale(&mut rng));
            }
            if target.is_cuttable() {
                let cell = spawn.any()?;
                w.add_object(Category::Knife, cell, scale(&mut rng));
            }
        }
    }

    match cfg.hold_at_start {
        None => {}
        Some(HoldAtStart::Target) => {
            let id = target_id
                .ok_or_else(|| Error::Scenario("template places no target to hold".into()))?;
            w.held = Some(Held::Object(id));
            w.gripper.closed = true;
        }
        Some(HoldAtStart::Knife) => {
            let id = w
                .objects
                .iter()
                .find(|o| o.category == Category::Knife)
                .map(|o| o.id)
                .ok_or_else(|| Error::Scenario("scene contains no knife to hold".into()))?;
            w.held = Some(Held::Object(id));
            w.gripper.closed = true;
        }
    }
    Ok(w)
}
