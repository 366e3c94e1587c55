//! Event-triggered super-agent loop shared by data collection, the HDM and
//! the sequence-regressor baseline.

use super::dataset::{TrajectoryRecord, Trigger};
use super::model::{HdmInput, HdmModel, HistoryToken};
use super::{AgentId, OrchestrationAction, SuperState, HISTORY_DIGEST};
use crate::error::Result;
use crate::intent::ValidatedGoal;

/// Everything an orchestrator may look at when it is triggered.
pub struct Decision<'a> {
    pub state: &'a SuperState,
    pub goal: Option<&'a ValidatedGoal>,
    pub new_goal: bool,
    /// Encoded sequence input (history, recent states, goal).
    pub input: &'a HdmInput,
}

pub trait Orchestrator: Send {
    fn name(&self) -> &str;
    fn decide(&mut self, decision: &Decision<'_>) -> Result<OrchestrationAction>;
}

impl Orchestrator for HdmModel {
    fn name(&self) -> &str {
        "hdm"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Result<OrchestrationAction> {
        Ok(self.predict(d.input)?.action)
    }
}

/// One step of a live super-state stream.
#[derive(Debug, Clone)]
pub struct StreamStep {
    pub step: u64,
    pub state: SuperState,
    /// Encoded goal token.
    pub goal_token: Vec<f64>,
    pub goal: Option<ValidatedGoal>,
    pub new_goal: bool,
}

/// Acts only when the drift flag is raised or a new goal arrives, and keeps
/// the history the sequence models condition on.
pub struct SuperAgent {
    orchestrator: Box<dyn Orchestrator>,
    history_len: usize,
    recent_len: usize,
    history: Vec<HistoryToken>,
    recent: Vec<Vec<f64>>,
    invocations: Vec<AgentId>,
    episode: usize,
    records: Option<Vec<TrajectoryRecord>>,
}

impl SuperAgent {
    pub fn new(orchestrator: Box<dyn Orchestrator>, history_len: usize, recent_len: usize) -> Self {
        Self {
            orchestrator,
            history_len,
            recent_len: recent_len.max(1),
            history: vec![],
            recent: vec![],
            invocations: vec![],
            episode: 0,
            records: None,
        }
    }

    /// Keep every decision as a trajectory record of `episode`.
    pub fn recording(mut self, episode: usize) -> Self {
        self.episode = episode;
        self.records = Some(vec![]);
        self
    }

    pub fn orchestrator_name(&self) -> &str {
        self.orchestrator.name()
    }

    /// Most recent invocations, oldest first.
    pub fn digest(&self) -> Vec<AgentId> {
        let skip = self.invocations.len().saturating_sub(HISTORY_DIGEST);
        self.invocations[skip..].to_vec()
    }

    pub fn take_records(&mut self) -> Vec<TrajectoryRecord> {
        self.records.take().unwrap_or_default()
    }

    pub fn on_step(&mut self, s: &StreamStep) -> Result<Option<OrchestrationAction>> {
        if !(s.state.drift || s.new_goal) {
            return Ok(None);
        }
        let features = s.state.to_features();
        self.recent.push(features.clone());
        if self.recent.len() > self.recent_len {
            self.recent.remove(0);
        }
        let input = HdmInput {
            history: self.history.clone(),
            recent: self.recent.clone(),
            goal: s.goal_token.clone(),
        };
        let decision = Decision {
            state: &s.state,
            goal: s.goal.as_ref(),
            new_goal: s.new_goal,
            input: &input,
        };
        let action = self.orchestrator.decide(&decision)?;
        debug_assert!(action.is_feasible());
        self.history.push(HistoryToken {
            state: features.clone(),
            goal: s.goal_token.clone(),
            action: action.encode().to_vec(),
        });
        if self.history.len() > self.history_len {
            self.history.remove(0);
        }
        self.invocations.push(action.agent);
        if let Some(r) = self.records.as_mut() {
            r.push(TrajectoryRecord {
                episode: self.episode,
                step: s.step,
                trigger: if s.new_goal { Trigger::Goal } else { Trigger::Drift },
                state: features,
                goal: s.goal_token.clone(),
                action,
            });
        }
        Ok(Some(action))
    }
}

/// Run an orchestrator over a recorded stream; returns `(step, action)` for
/// every triggered step.
pub fn infer(
    orchestrator: Box<dyn Orchestrator>,
    history_len: usize,
    recent_len: usize,
    stream: impl IntoIterator<Item = StreamStep>,
) -> Result<Vec<(u64, OrchestrationAction)>> {
    let mut agent = SuperAgent::new(orchestrator, history_len, recent_len);
    let mut out = vec![];
    for mut s in stream {
        s.state.history = agent.digest();
        if let Some(a) = agent.on_step(&s)? {
            out.push((s.step, a));
        }
    }
    Ok(out)
}
