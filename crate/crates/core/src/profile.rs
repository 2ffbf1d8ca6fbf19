//! Compute profiles: the full-size settings and a reduced desk-scale variant.
//!
//! The desk profile keeps the per-scale proportions of the full profile
//! (instances per epoch and batch size per scale role) but shrinks node
//! counts and epoch counts so a lifelong run fits on a laptop CPU.

use serde::{Deserialize, Serialize};

use crate::tasks::Distribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

/// Which of the three scale tiers a task belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRole {
    Small,
    Medium,
    Large,
}

impl ScaleRole {
    pub fn of(distribution: Distribution) -> Self {
        match distribution {
            Distribution::U | Distribution::R => ScaleRole::Small,
            Distribution::G | Distribution::E => ScaleRole::Medium,
            Distribution::C | Distribution::GM => ScaleRole::Large,
        }
    }
}

impl Profile {
    pub fn scales(&self) -> [usize; 3] {
        match self {
            Profile::Desk => [10, 20, 30],
            Profile::Paper => [20, 50, 100],
        }
    }

    pub fn scale_of(&self, role: ScaleRole) -> usize {
        let s = self.scales();
        match role {
            ScaleRole::Small => s[0],
            ScaleRole::Medium => s[1],
            ScaleRole::Large => s[2],
        }
    }

    pub fn scale_for(&self, distribution: Distribution) -> usize {
        self.scale_of(ScaleRole::of(distribution))
    }

    /// Role of a scale under this profile; scales outside the map fall into
    /// the nearest tier.
    pub fn role_of_scale(&self, scale: usize) -> ScaleRole {
        let s = self.scales();
        if scale <= s[0] {
            ScaleRole::Small
        } else if scale <= s[1] {
            ScaleRole::Medium
        } else {
            ScaleRole::Large
        }
    }

    /// Vehicle capacity for a scale: 30/40/50 across the three tiers.
    pub fn capacity_for(&self, scale: usize) -> u32 {
        match self.role_of_scale(scale) {
            ScaleRole::Small => 30,
            ScaleRole::Medium => 40,
            ScaleRole::Large => 50,
        }
    }

    pub fn instances_per_epoch(&self, scale: usize) -> usize {
        let role = self.role_of_scale(scale);
        match (self, role) {
            (Profile::Paper, ScaleRole::Small) => 10_000,
            (Profile::Paper, ScaleRole::Medium) => 4_000,
            (Profile::Paper, ScaleRole::Large) => 2_000,
            (Profile::Desk, ScaleRole::Small) => 2_000,
            (Profile::Desk, ScaleRole::Medium) => 800,
            (Profile::Desk, ScaleRole::Large) => 400,
        }
    }

    pub fn batch_size(&self, scale: usize) -> usize {
        match self.role_of_scale(scale) {
            ScaleRole::Small => 64,
            ScaleRole::Medium => 32,
            ScaleRole::Large => 16,
        }
    }

    pub fn epochs_per_task(&self) -> usize {
        match self {
            Profile::Desk => 20,
            Profile::Paper => 200,
        }
    }

    pub fn test_instances(&self) -> usize {
        match self {
            Profile::Desk => 200,
            Profile::Paper => 1000,
        }
    }

    /// Buffer capacity in experience batches.
    pub fn buffer_capacity(&self) -> usize {
        match self {
            Profile::Desk => 50,
            Profile::Paper => 1000,
        }
    }

    /// Experience batches sampled per update.
    pub fn sample_count(&self) -> usize {
        match self {
            Profile::Desk => 2,
            Profile::Paper => 16,
        }
    }
}
