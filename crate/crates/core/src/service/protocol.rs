//! Wire messages. Every frame is a JSON object whose first key is `type`.

use serde::{Deserialize, Serialize};

use super::Status;
use crate::belief::{DiffEvent, Transition, Violation};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    ListTasks,
    StartTask { task_id: usize },
    Stop,
    GetStep { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    Busy,
    BadIndex,
    UnknownTask,
    SchemaMismatch,
    NoTraceEpisode,
    SessionInUse,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub id: usize,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomNames {
    pub object: Vec<String>,
    pub action: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventView {
    pub atom: String,
    pub transition: Transition,
}

impl From<DiffEvent> for EventView {
    fn from(e: DiffEvent) -> Self {
        Self {
            atom: e.atom,
            transition: e.transition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMessage {
    pub timestep: u64,
    /// PNG, standard base64.
    pub image_b64: String,
    pub object_state: Vec<u8>,
    pub action_state: Vec<u8>,
    /// Present on step 0 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_names: Option<AtomNames>,
    pub events: Vec<EventView>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session_id: String,
        protocol_version: u32,
        status: Status,
        history_len: usize,
    },
    Tasks {
        tasks: Vec<TaskInfo>,
    },
    TaskStarted {
        task_id: usize,
        instruction: String,
        atom_names: AtomNames,
        object_layer: usize,
        action_layer: usize,
        max_steps: usize,
    },
    Step(StepMessage),
    TaskComplete {
        task_id: usize,
        total_steps: usize,
        success: bool,
    },
    Stopped {
        total_steps: usize,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}
