//! Fine-resolution skill execution: a shared language-conditioned policy
//! over factored discrete gripper commands, trained with PPO against
//! distance-shaped rewards in procedurally generated skill episodes.

pub mod policy;
pub mod ppo;

pub use policy::{
    load_policy, run_skill_policy, save_policy, skill_ready, ActionDistribution, FineState,
    PolicyConfig, PolicyNet, SkillEmbeddings, H_SKILL,
};
pub use ppo::{
    collect_rollouts, collect_rollouts_weighted, compute_rewards, eval_skill, executable_skills,
    ppo_loss, ppo_update,
    skill_scenario, target_cell, train_policy, PpoConfig, Rollout, StepSample, TrainLog,
};

#[cfg(test)]
mod tests;
