use std::collections::BTreeSet;

use super::PipelineError;
use crate::corpus::Stage;

/// The per-clip stage DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    edges: Vec<(Stage, Stage)>,
    order: Vec<Stage>,
}

impl StagePlan {
    /// Separation feeds ASR and the music captioner, the gate guards the
    /// music captioner, every cue feeds fusion, and fusion feeds scoring.
    pub fn standard() -> Self {
        use Stage::*;
        Self::from_edges(vec![
            (Separate, Asr),
            (Separate, MusicCap),
            (MusicGate, MusicCap),
            (Asr, Fuse),
            (AudioCap, Fuse),
            (MusicCap, Fuse),
            (VideoCap, Fuse),
            (Fuse, EmbedScore),
            (EmbedScore, Filter),
        ])
        .expect("standard plan is acyclic")
    }

    /// Builds a plan over all stages; fails if the edges contain a cycle.
    pub fn from_edges(edges: Vec<(Stage, Stage)>) -> Result<Self, PipelineError> {
        // Kahn's algorithm, taking ready stages in declaration order.
        let mut order = Vec::with_capacity(Stage::ALL.len());
        let mut done = BTreeSet::new();
        while order.len() < Stage::ALL.len() {
            let next = Stage::ALL.into_iter().find(|s| {
                !done.contains(s) && edges.iter().all(|(from, to)| to != s || done.contains(from))
            });
            match next {
                Some(s) => {
                    done.insert(s);
                    order.push(s);
                }
                None => {
                    let stuck = Stage::ALL.into_iter().filter(|s| !done.contains(s)).map(|s| s.name()).collect();
                    return Err(PipelineError::CyclicPlan(stuck));
                }
            }
        }
        Ok(Self { edges, order })
    }

    pub fn predecessors(&self, stage: Stage) -> Vec<Stage> {
        self.edges.iter().filter(|(_, to)| *to == stage).map(|(from, _)| *from).collect()
    }

    pub fn successors(&self, stage: Stage) -> Vec<Stage> {
        self.edges.iter().filter(|(from, _)| *from == stage).map(|(_, to)| *to).collect()
    }

    /// Every stage, each after all of its predecessors.
    pub fn topological_order(&self) -> &[Stage] {
        &self.order
    }

    /// Stages that `stage` depends on, directly or transitively.
    pub fn ancestors(&self, stage: Stage) -> BTreeSet<Stage> {
        let mut out = BTreeSet::new();
        let mut stack = self.predecessors(stage);
        while let Some(s) = stack.pop() {
            if out.insert(s) {
                stack.extend(self.predecessors(s));
            }
        }
        out
    }
}

impl Default for StagePlan {
    fn default() -> Self {
        Self::standard()
    }
}
