//! Supervised dataset for coarse-inference tuning.
//!
//! Each record is one intermediate state of an oracle-rolled episode,
//! labelled with the oracle's next skill. File format: one record per line,
//! tab-separated fields in the order
//! `task name, episode seed, instruction, tactile, label, depth` where depth
//! is the flattened 24x32 grid as comma-separated floats.

use super::oracle::{oracle_next_step, oracle_skill_executor};
use super::{scenario_for, Instruction};
use crate::domain::{ActionLanguage, TaskId, ALL_TASKS};
use crate::sim::{render_depth, reset_scenario, CameraModel, CameraNoise, DEPTH_H, DEPTH_W};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub task: TaskId,
    pub seed: u64,
    pub instruction: Instruction,
    pub tactile: u8,
    pub depth: Vec<f32>,
    pub label: ActionLanguage,
}

/// Longest admissible oracle plan (skills including "Done").
pub const MAX_PLAN_STEPS: usize = 12;

/// Rolls `n_per_task` seeded oracle episodes per task and emits one record
/// per intermediate state. Records are shuffled with the same master seed.
pub fn generate_dataset(n_per_task: usize, seed: u64) -> Result<Vec<DatasetRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for &task in &ALL_TASKS {
        for _ in 0..n_per_task {
            let episode_seed: u64 = rng.gen();
            records.extend(episode_records(task, episode_seed)?);
        }
    }
    records.shuffle(&mut rng);
    Ok(records)
}

/// One oracle episode of `task`, every step recorded.
pub fn episode_records(task: TaskId, episode_seed: u64) -> Result<Vec<DatasetRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let inst = Instruction::sample(task, &mut rng);
    let cfg = scenario_for(task, inst.target);
    let mut w = reset_scenario(&cfg, rng.gen())?;
    let noise = CameraNoise::default();
    let mut records = Vec::new();
    for _ in 0..MAX_PLAN_STEPS {
        let label = oracle_next_step(&w, &inst).map_err(|e| {
            Error::Oracle(format!("{e} (task {}, episode seed {episode_seed})", task.name()))
        })?;
        let cam = CameraModel::sample(&noise, &mut rng);
        records.push(DatasetRecord {
            task,
            seed: episode_seed,
            instruction: inst.clone(),
            tactile: w.tactile(),
            depth: render_depth(&w, &cam).data,
            label,
        });
        if label == ActionLanguage::Done {
            return Ok(records);
        }
        let (next, ok) = oracle_skill_executor(&w, &label);
        if !ok {
            return Err(Error::Oracle(format!(
                "skill '{}' failed during generation (task {}, episode seed {episode_seed})",
                label.text(),
                task.name()
            )));
        }
        w = next;
    }
    Err(Error::Oracle(format!(
        "episode did not reach Done within {MAX_PLAN_STEPS} steps (task {}, seed {episode_seed})",
        task.name()
    )))
}

impl DatasetRecord {
    pub fn to_line(&self) -> String {
        let depth: Vec<String> = self.depth.iter().map(|v| v.to_string()).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.task.name(),
            self.seed,
            self.instruction.text,
            self.tactile,
            self.label.text(),
            depth.join(",")
        )
    }

    pub fn from_line(line: &str) -> Result<DatasetRecord> {
        let mut parts = line.split('\t');
        let mut field = |name: &str| {
            parts.next().ok_or_else(|| Error::Io(format!("dataset line missing field {name}")))
        };
        let task = TaskId::from_name(field("task")?)
            .ok_or_else(|| Error::Io("unknown task name in dataset line".into()))?;
        let seed: u64 =
            field("seed")?.parse().map_err(|e| Error::Io(format!("bad seed field: {e}")))?;
        let text = field("instruction")?.to_string();
        let tactile: u8 =
            field("tactile")?.parse().map_err(|e| Error::Io(format!("bad tactile field: {e}")))?;
        let label = ActionLanguage::parse(field("label")?)
            .ok_or_else(|| Error::Io("label not in the closed skill set".into()))?;
        let depth: Vec<f32> = field("depth")?
            .split(',')
            .map(|v| v.parse::<f32>().map_err(|e| Error::Io(format!("bad depth value: {e}"))))
            .collect::<Result<_>>()?;
        if depth.len() != DEPTH_H * DEPTH_W {
            return Err(Error::Io(format!("depth grid has {} values", depth.len())));
        }
        // The surface target is recoverable from the instruction text; the
        // file stores only what evaluation needs.
        let target = crate::domain::ALL_CATEGORIES
            .iter()
            .copied()
            .find(|c| text.split_whitespace().any(|word| word == c.word()));
        Ok(DatasetRecord {
            task,
            seed,
            instruction: Instruction { text, task, target },
            tactile,
            depth,
            label,
        })
    }
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", r.to_line()).map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    std::io::BufReader::new(file)
        .lines()
        .map(|l| DatasetRecord::from_line(&l.map_err(|e| Error::Io(e.to_string()))?))
        .collect()
}
