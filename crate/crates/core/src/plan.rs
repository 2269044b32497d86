//! Plans, subtasks and execution traces shared by the agents.

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactId;
use crate::llm::parse::PlanItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    /// 1-based, contiguous.
    pub index: u32,
    pub goal_text: String,
    pub tool_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_call: Option<String>,
    pub status: SubtaskStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Reflected { from_round: u32 },
    /// The planner answered that the structure should stay as it is.
    Kept { from_round: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub round: u32,
    pub agent_id: u32,
    pub subtasks: Vec<Subtask>,
    pub provenance: Provenance,
}

impl Plan {
    pub fn from_items(round: u32, agent_id: u32, items: &[PlanItem], provenance: Provenance) -> Plan {
        Plan {
            round,
            agent_id,
            subtasks: items
                .iter()
                .enumerate()
                .map(|(i, it)| Subtask {
                    index: i as u32 + 1,
                    goal_text: it.goal_text.clone(),
                    tool_name: it.tool_name.clone(),
                    bound_call: None,
                    status: SubtaskStatus::Pending,
                })
                .collect(),
            provenance,
        }
    }

    pub fn items(&self) -> Vec<PlanItem> {
        self.subtasks
            .iter()
            .map(|s| PlanItem {
                goal_text: s.goal_text.clone(),
                tool_name: s.tool_name.clone(),
            })
            .collect()
    }

    /// Same structure carried into a new round, statuses reset.
    pub fn carried(&self, round: u32, provenance: Provenance) -> Plan {
        let mut p = self.clone();
        p.round = round;
        p.provenance = provenance;
        for s in &mut p.subtasks {
            s.bound_call = None;
            s.status = SubtaskStatus::Pending;
        }
        p
    }

    pub fn render(&self) -> String {
        crate::llm::parse::render_plan(&self.items())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub subtask: u32,
    pub tool: String,
    /// Canonical call line, once arguments were bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<String>,
    pub input: ArtifactId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<ArtifactId>,
    /// Non-image results (sizes, captions, scores) do not advance the chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Whether the arguments came from the language model.
    pub llm_args: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustment: Option<String>,
}

impl StepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Whether the step advanced the image chain.
    pub fn advanced(&self) -> bool {
        self.output.is_some() && self.observation.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub round: u32,
    pub agent_id: u32,
    pub steps: Vec<StepRecord>,
    pub final_output: ArtifactId,
}

impl ExecutionTrace {
    /// Each step reads the last image produced before it, the input first.
    pub fn check_chain(&self) -> Result<(), String> {
        let mut current = ArtifactId::input();
        for s in &self.steps {
            if s.input != current {
                return Err(format!(
                    "step {} read `{}` but the chain was at `{}`",
                    s.subtask, s.input, current
                ));
            }
            if s.advanced() {
                current = s.output.clone().expect("advanced step has output");
            }
        }
        if self.final_output != current {
            return Err(format!("final output `{}` is not the chain end `{current}`", self.final_output));
        }
        Ok(())
    }

    /// Tool invocations attempted, failed ones included.
    pub fn tool_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.call.is_some()).count()
    }
}
