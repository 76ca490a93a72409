//! Pinned reference returns for score normalisation, stored with the
//! environment configurations they were computed under.

use rebrac_core::envs::{EnvKind, MazeConfig, MazeEnv, ReachConfig, ReachEnv, RefScores};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Seed of the reference rollouts.
pub const REF_SEED: u64 = 0;

const PINNED: &str = include_str!("../refs.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefsFile {
    pub seed: u64,
    pub reach: ReachRefs,
    pub maze: MazeRefs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachRefs {
    pub env: ReachConfig,
    pub scores: RefScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeRefs {
    pub env: MazeConfig,
    pub scores: RefScores,
}

impl RefsFile {
    pub fn scores(&self, env: EnvKind) -> RefScores {
        match env {
            EnvKind::Reach => self.reach.scores,
            EnvKind::Maze => self.maze.scores,
        }
    }
}

/// Recomputes the file contents from the default environments.
pub fn compute() -> Result<RefsFile> {
    let reach = ReachConfig::default();
    let maze = MazeConfig::default();
    Ok(RefsFile {
        seed: REF_SEED,
        reach: ReachRefs {
            scores: RefScores::compute(&mut ReachEnv::new(reach.clone()), REF_SEED)?,
            env: reach,
        },
        maze: MazeRefs {
            scores: RefScores::compute(&mut MazeEnv::new(maze.clone()), REF_SEED)?,
            env: maze,
        },
    })
}

pub fn pinned_file() -> RefsFile {
    serde_json::from_str(PINNED).expect("refs.json is valid")
}

pub fn pinned(env: EnvKind) -> RefScores {
    pinned_file().scores(env)
}
