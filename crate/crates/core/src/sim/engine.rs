use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, EventKind, RunConfig};
use crate::error::{Error, Result};
use crate::hdm::dataset::{TrajectoryRecord, Trigger};
use crate::hdm::{
    encode_goal, AgentId, DtStub, HdmModel, OrchestrationAction, Orchestrator, ScriptedOracle, SliceFeatures,
    StreamStep, SuperAgent, SuperState, NUM_SLICES, THETA_FAIRNESS, THETA_HEALING,
};
use crate::healing::{apply_weights, build_healing_state, deviation, propose_deltas};
use crate::intent::{parse_intent, retrieve_context, validate_goal, ContextStore, ValidatedGoal, ValidationLimits};
use crate::inter_slice::{
    build_observation, enumerate_combinations, inter_reward, map_action_with_floors, InterContext,
    InterSlicePolicy, IntentAware, ObservationScales, PriorityWeights, RbgCombination, RuleBased, SliceDemand,
    DEFAULT_COMBINATION_CAP,
};
use crate::intra_slice::{run_microsteps, BaselinePolicy, IntraParams, SliceSnapshot, UeView};
use crate::metrics::{
    aggregate_slice, buffer_latency, fifth_percentile, instantaneous_throughput, longterm_throughput, KpiWindow,
    SliceKpis, UeKpis, UeSample,
};
use crate::rng::{stream, SimRng, Stream};
use crate::sla::{evaluate_compliance, Intent, SliceKind, SliceSla};
use crate::topology::{place_topology, step_links, Layout};
use crate::traffic::{generate_arrivals, serve_buffer, toggle_be_users, TrafficProfile, UeBuffer};

/// Spectral efficiency used to normalize channel quality in micro-states.
const SE_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// RBGs per slice, in configured slice order.
    pub allocation: Vec<usize>,
    pub priorities: Vec<f64>,
    pub floors: Vec<usize>,
    pub slices: Vec<SliceKpis>,
    pub compliant: Vec<bool>,
    pub reward: f64,
    pub drift: bool,
    pub healing_gain: f64,
    pub fairness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeRecord {
    pub step: u64,
    pub ue: usize,
    pub slice: SliceKind,
    pub kpis: UeKpis,
    pub buffer_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub step: u64,
    pub ue: usize,
    pub rsrp_w: f64,
    pub interference_w: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroRecord {
    pub step: u64,
    pub slice: SliceKind,
    pub micro_step: usize,
    pub ue: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealingRecord {
    pub step: u64,
    pub deviations: Vec<f64>,
    pub deltas: Vec<f64>,
    pub priorities: Vec<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestrationRecord {
    pub step: u64,
    pub trigger: Trigger,
    pub action: OrchestrationAction,
    /// The action had an effect (self-healing is ignored when healing is
    /// disabled).
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub step: u64,
    pub text: String,
    pub accepted: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<StepRecord>,
    pub ues: Vec<UeRecord>,
    pub links: Vec<LinkRecord>,
    pub micro: Vec<MicroRecord>,
    pub healing: Vec<HealingRecord>,
    pub orchestration: Vec<OrchestrationRecord>,
    pub intents: Vec<IntentRecord>,
}

struct UeState {
    slice: usize,
    kind: SliceKind,
    active: bool,
    buffer: UeBuffer,
    window: KpiWindow,
    /// Arrived bits of the last `window` steps.
    offered: VecDeque<f64>,
    offered_sum: f64,
}

impl UeState {
    fn offered_bps(&self, tti: f64) -> f64 {
        if self.offered.is_empty() {
            0.0
        } else {
            self.offered_sum.max(0.0) / (self.offered.len() as f64 * tti)
        }
    }

    fn record_offered(&mut self, bits: f64, len: usize) {
        self.offered.push_back(bits);
        self.offered_sum += bits;
        if self.offered.len() > len {
            self.offered_sum -= self.offered.pop_front().unwrap_or(0.0);
        }
    }

    fn deactivate(&mut self) {
        self.buffer.clear();
        self.window.clear();
        self.offered.clear();
        self.offered_sum = 0.0;
    }
}

/// Loads a trained orchestrator checkpoint, telling HDM and
/// sequence-regressor files apart by their `format` field.
pub fn load_orchestrator(path: &Path) -> Result<Box<dyn Orchestrator>> {
    let text = std::fs::read(path)?;
    let v: serde_json::Value = serde_json::from_slice(&text)?;
    match v.get("format").and_then(|f| f.as_str()) {
        Some(crate::hdm::model::CHECKPOINT_FORMAT) => Ok(Box::new(HdmModel::load(path)?)),
        Some(crate::hdm::dt::DT_FORMAT) => Ok(Box::new(DtStub::load(path)?)),
        other => Err(Error::Format(format!("unknown checkpoint format {other:?}"))),
    }
}

pub struct Simulator {
    cfg: RunConfig,
    seed: u64,
    layout: Layout,
    channel_rng: SimRng,
    traffic_rng: SimRng,
    activity_rng: SimRng,
    ues: Vec<UeState>,
    slice_ues: Vec<Vec<usize>>,
    slas: Vec<SliceSla>,
    base_slas: Vec<SliceSla>,
    arrival_scale: Vec<f64>,
    options: Vec<RbgCombination>,
    priorities: PriorityWeights,
    inter: Box<dyn InterSlicePolicy>,
    healing_enabled: bool,
    agent: Option<SuperAgent>,
    store: ContextStore,
    goal: Option<ValidatedGoal>,
    prev: Vec<SliceKpis>,
    allocation: RbgCombination,
    floors: Vec<usize>,
    floors_until: u64,
    healing_theta: f64,
    healing_until: u64,
    fairness: f64,
    streaks: Vec<u32>,
    cooldown_until: u64,
    load_forecast: Vec<f64>,
    loss_forecast: Vec<f64>,
    step: u64,
    trace: Trace,
}

impl Simulator {
    /// Builds a replica; orchestrated controllers load
    /// `orchestrator_path` or fall back to the scripted oracle.
    pub fn new(cfg: RunConfig, seed: u64) -> Result<Self> {
        let orch: Option<Box<dyn Orchestrator>> = if cfg.controller.orchestrated() {
            match &cfg.orchestrator_path {
                Some(p) => Some(load_orchestrator(p)?),
                None => {
                    log::info!("no orchestrator checkpoint given; using the scripted policy");
                    Some(Box::new(ScriptedOracle))
                }
            }
        } else {
            None
        };
        Self::with_orchestrator(cfg, seed, orch)
    }

    pub fn with_orchestrator(cfg: RunConfig, seed: u64, orchestrator: Option<Box<dyn Orchestrator>>) -> Result<Self> {
        cfg.validate()?;
        let net = &cfg.network;
        let mut topo_rng = stream(seed, Stream::Topology);
        let layout = place_topology(net, &cfg.channel, &mut topo_rng);
        let mut ues = Vec::with_capacity(net.num_ue);
        let mut slice_ues = vec![vec![]; cfg.slices.len()];
        for (s, setup) in cfg.slices.iter().enumerate() {
            for _ in 0..setup.ues {
                slice_ues[s].push(ues.len());
                ues.push(UeState {
                    slice: s,
                    kind: setup.kind,
                    active: true,
                    buffer: UeBuffer::new(cfg.buffer_bits),
                    window: KpiWindow::new(cfg.window),
                    offered: VecDeque::with_capacity(cfg.window + 1),
                    offered_sum: 0.0,
                });
            }
        }
        let s = cfg.slices.len();
        let options = enumerate_combinations(net.num_rbg, s, DEFAULT_COMBINATION_CAP)?;
        let inter: Box<dyn InterSlicePolicy> = match cfg.controller {
            ControllerKind::RuleBased => Box::new(RuleBased {
                ratio: cfg.rule_ratio.clone(),
            }),
            _ => Box::new(IntentAware {
                params: cfg.intent_aware.clone(),
            }),
        };
        let slas: Vec<SliceSla> = cfg.slices.iter().map(|x| x.sla.clone()).collect();
        let agent = if cfg.controller.orchestrated() {
            let o = orchestrator.ok_or_else(|| Error::config("orchestrated controller needs an orchestrator"))?;
            Some(SuperAgent::new(o, 8, 4))
        } else {
            None
        };
        Ok(Self {
            seed,
            layout,
            channel_rng: stream(seed, Stream::Channel),
            traffic_rng: stream(seed, Stream::Traffic),
            activity_rng: stream(seed, Stream::Activity),
            ues,
            slice_ues,
            store: ContextStore::from_slas(&slas),
            base_slas: slas.clone(),
            slas,
            arrival_scale: vec![1.0; s],
            options,
            priorities: PriorityWeights::uniform(s),
            inter,
            healing_enabled: cfg.controller.healing(),
            agent,
            goal: None,
            prev: cfg.slices.iter().map(|x| SliceKpis::empty(x.kind)).collect(),
            allocation: RbgCombination(vec![0; s]),
            floors: vec![0; s],
            floors_until: 0,
            healing_theta: 0.0,
            healing_until: 0,
            fairness: cfg.orchestration.fairness,
            streaks: vec![0; s],
            cooldown_until: 0,
            load_forecast: vec![0.0; s],
            loss_forecast: vec![0.0; s],
            step: 0,
            trace: Trace::default(),
            cfg,
        })
    }

    /// Replaces the inter-slice policy (used to vary base behaviour when
    /// collecting demonstrations).
    pub fn set_inter_policy(&mut self, policy: Box<dyn InterSlicePolicy>) {
        self.inter = policy;
    }

    /// Keep every orchestration decision as a trajectory record.
    pub fn record_decisions(&mut self, episode: usize) {
        if let Some(a) = self.agent.take() {
            self.agent = Some(a.recording(episode));
        }
    }

    pub fn take_decisions(&mut self) -> Vec<TrajectoryRecord> {
        self.agent.as_mut().map(|a| a.take_records()).unwrap_or_default()
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn slas(&self) -> &[SliceSla] {
        &self.slas
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            self.step()?;
        }
        Ok(())
    }

    fn rbg_bits_per_se(&self) -> f64 {
        self.cfg.network.rbg_bandwidth_hz() * self.cfg.network.tti_s
    }

    fn apply_events(&mut self, n: u64) -> bool {
        let mut new_goal = false;
        let events: Vec<_> = self.cfg.events.iter().filter(|e| e.step == n).cloned().collect();
        for e in events {
            match e.kind {
                EventKind::ScaleArrivals { slice, factor } => {
                    if let Some(i) = self.cfg.slice_index(slice) {
                        self.arrival_scale[i] = factor;
                    }
                }
                EventKind::Intent { text } => {
                    let limits = ValidationLimits {
                        max_increase_pct: self.cfg.orchestration.max_increase_pct,
                    };
                    let outcome = parse_intent(&text)
                        .map_err(|e| e.to_string())
                        .and_then(|g| {
                            let ctx = retrieve_context(&g, &self.store);
                            validate_goal(&g, &self.slas, &ctx, &limits).map_err(|r| r.to_string())
                        });
                    match outcome {
                        Ok(vg) => {
                            if let Some(i) = self.cfg.slice_index(vg.region.slice) {
                                self.slas[i].set_threshold(vg.region.kpi, vg.region.bound);
                            }
                            self.trace.intents.push(IntentRecord {
                                step: n,
                                text,
                                accepted: true,
                                detail: format!("{} {} bound {}", vg.region.slice, intent_name(vg.region.kpi), vg.region.bound),
                            });
                            self.goal = Some(vg);
                            new_goal = true;
                        }
                        Err(detail) => {
                            log::warn!("intent at step {n} rejected: {detail}");
                            self.trace.intents.push(IntentRecord {
                                step: n,
                                text,
                                accepted: false,
                                detail,
                            });
                        }
                    }
                }
            }
        }
        new_goal
    }

    fn healing_step(&mut self, n: u64, kpis: &[SliceKpis], demand: &[SliceDemand]) {
        let tti = self.cfg.network.tti_s;
        let offered: f64 = demand.iter().map(|d| d.offered_bps * tti).sum();
        let per_rbg: Vec<f64> = demand.iter().map(|d| d.bits_per_rbg).filter(|b| *b > 0.0).collect();
        let servable = if per_rbg.is_empty() {
            0.0
        } else {
            per_rbg.iter().sum::<f64>() / per_rbg.len() as f64 * self.cfg.network.num_rbg as f64
        };
        let state = build_healing_state(kpis, &self.slas, &self.allocation, offered, servable);
        let surplus: Vec<f64> = kpis
            .iter()
            .zip(&self.slas)
            .map(|(k, sla)| if k.active_ues == 0 { 0.0 } else { deviation(sla, k).max(0.0) })
            .collect();
        let gain = self.healing_gain(n);
        let delta = propose_deltas(&state, &self.cfg.healing, gain, &surplus);
        self.priorities = apply_weights(&self.priorities, &delta, &self.cfg.healing);
        self.trace.healing.push(HealingRecord {
            step: n,
            deviations: state.deviations,
            deltas: delta.deltas,
            priorities: self.priorities.0.clone(),
            gain,
        });
    }

    fn healing_gain(&self, n: u64) -> f64 {
        if n < self.healing_until {
            1.0 + self.cfg.orchestration.healing_gain_max * self.healing_theta
        } else {
            1.0
        }
    }

    /// Advances one TTI.
    pub fn step(&mut self) -> Result<()> {
        let n = self.step;
        let net = self.cfg.network.clone();
        let tti = net.tti_s;
        let r = net.num_rbg;
        let s_count = self.cfg.slices.len();
        let win = self.cfg.window;

        // Activity of BE users.
        if let Some(be) = self.cfg.slice_index(SliceKind::Be) {
            let period = self.cfg.slices[be].traffic.be_toggle_period;
            let kinds: Vec<SliceKind> = self.ues.iter().map(|u| u.kind).collect();
            let mut active: Vec<bool> = self.ues.iter().map(|u| u.active).collect();
            if toggle_be_users(n, period, &kinds, &mut active, &mut self.activity_rng) > 0 {
                for (u, a) in self.ues.iter_mut().zip(active) {
                    if u.active && !a {
                        u.deactivate();
                    }
                    u.active = a;
                }
            }
        }

        let new_goal = self.apply_events(n);

        // Arrivals.
        let profiles: Vec<TrafficProfile> = self
            .cfg
            .slices
            .iter()
            .zip(&self.arrival_scale)
            .map(|(s, k)| TrafficProfile {
                mean_rate_bps: s.traffic.mean_rate_bps * k,
                ..s.traffic.clone()
            })
            .collect();
        for u in self.ues.iter_mut() {
            let bits = if u.active {
                let b = generate_arrivals(&profiles[u.slice], &mut self.traffic_rng, tti);
                u.buffer.push(n, b);
                b
            } else {
                0.0
            };
            u.record_offered(bits, win);
        }

        let links = step_links(&self.layout, &self.cfg.channel, &net, &mut self.channel_rng, n);
        if self.cfg.traces.links {
            self.trace.links.extend(links.iter().enumerate().map(|(ue, l)| LinkRecord {
                step: n,
                ue,
                rsrp_w: l.rsrp_w,
                interference_w: l.interference_w,
                se: l.se,
            }));
        }

        // Inter-slice decision from the previous step's KPIs and current demand.
        let bits_per_se = self.rbg_bits_per_se();
        let demand: Vec<SliceDemand> = (0..s_count)
            .map(|s| {
                let active: Vec<usize> = self.slice_ues[s].iter().copied().filter(|&u| self.ues[u].active).collect();
                let mean_se = if active.is_empty() {
                    0.0
                } else {
                    active.iter().map(|&u| links[u].se).sum::<f64>() / active.len() as f64
                };
                SliceDemand {
                    kind: self.cfg.slices[s].kind,
                    active_ues: active.len(),
                    backlog_bits: active.iter().map(|&u| self.ues[u].buffer.occupancy()).sum(),
                    offered_bps: active.iter().map(|&u| self.ues[u].offered_bps(tti)).sum(),
                    bits_per_rbg: mean_se * bits_per_se,
                    kpis: self.prev[s].clone(),
                }
            })
            .collect();
        let scales = ObservationScales {
            throughput_bps: net.bandwidth_hz * SE_NORM,
            buffer_bits: self.cfg.buffer_bits * self.ues.len().max(1) as f64,
            latency_s: self.slas.iter().map(|x| x.l_max_s).fold(0.0, f64::max),
        };
        let observation = build_observation(&self.prev, &self.slas, &scales)?;
        let ctx = InterContext {
            observation: &observation,
            demand: &demand,
            slas: &self.slas,
            num_rbg: r,
            tti_s: tti,
        };
        let action = self.inter.act(&ctx);
        let floors = if n < self.floors_until { self.floors.clone() } else { vec![0; s_count] };
        let (_, alloc) = map_action_with_floors(&action, r, &self.options, &self.priorities, &floors)?;
        debug_assert_eq!(alloc.total(), r);
        self.allocation = alloc.clone();

        // Intra-slice scheduling and service.
        let mut samples: Vec<Vec<UeSample>> = vec![vec![]; s_count];
        for s in 0..s_count {
            let kind = self.cfg.slices[s].kind;
            let views: Vec<UeView> = self.slice_ues[s]
                .iter()
                .copied()
                .filter(|&u| self.ues[u].active)
                .map(|u| UeView {
                    ue: u,
                    chunks: self.ues[u]
                        .buffer
                        .chunks()
                        .map(|(st, b)| ((n - st) as f64 * tti, b))
                        .collect(),
                    se: links[u].se,
                })
                .collect();
            let snapshot = SliceSnapshot { kind, ues: views };
            let params = IntraParams {
                l_max_s: self.slas[s].l_max_s,
                b_max_bits: net.bandwidth_hz * SE_NORM * tti,
                se_max: SE_NORM,
                queue_scale_bits: self.cfg.buffer_bits,
                rbg_bits_per_se: bits_per_se,
            };
            let mut policy = BaselinePolicy {
                kind,
                fairness: if kind == SliceKind::Embb { self.fairness } else { 0.0 },
            };
            let out = run_microsteps(&snapshot, alloc.0[s], &mut policy, &params);
            if self.cfg.traces.micro {
                for (k, (&j, &rw)) in out.assignment.chosen.iter().zip(&out.rewards).enumerate() {
                    self.trace.micro.push(MicroRecord {
                        step: n,
                        slice: kind,
                        micro_step: k + 1,
                        ue: snapshot.ues[j].ue,
                        reward: rw,
                    });
                }
            }
            let l_max = self.slas[s].l_max_s;
            for (j, view) in snapshot.ues.iter().enumerate() {
                let u = &mut self.ues[view.ue];
                let rbgs = out.assignment.rbgs.get(j).copied().unwrap_or(0);
                let rate = instantaneous_throughput(rbgs, r, net.bandwidth_hz, view.se);
                let pre = u.buffer.occupancy();
                let (_, r_eff) = serve_buffer(&mut u.buffer, rate, tti);
                u.window.push(r_eff);
                let g = longterm_throughput(&u.window)?;
                let f = fifth_percentile(&u.window)?;
                let kpis = UeKpis {
                    r_bps: rate,
                    r_eff_bps: r_eff,
                    latency_s: buffer_latency(pre, g, l_max),
                    loss: u.buffer.loss_rate(),
                    g_bps: g,
                    f_bps: f,
                };
                if self.cfg.traces.ue {
                    self.trace.ues.push(UeRecord {
                        step: n,
                        ue: view.ue,
                        slice: kind,
                        kpis,
                        buffer_bits: u.buffer.occupancy(),
                    });
                }
                samples[s].push(UeSample {
                    kpis,
                    buffer_bits: u.buffer.occupancy(),
                    arrivals_window: u.buffer.arrivals_window,
                    dropped_window: u.buffer.dropped_window,
                    offered_bps: u.offered_bps(tti),
                });
            }
        }

        let kpis: Vec<SliceKpis> = (0..s_count)
            .map(|s| aggregate_slice(self.cfg.slices[s].kind, &samples[s]))
            .collect();
        if (n + 1).is_multiple_of(win as u64) {
            for u in self.ues.iter_mut() {
                u.buffer.reset_window();
            }
        }
        let mut compliant = Vec::with_capacity(s_count);
        let mut satisfied = 0usize;
        let mut total_intents = 0usize;
        for (k, sla) in kpis.iter().zip(&self.slas) {
            if k.active_ues == 0 {
                compliant.push(true);
                continue;
            }
            let rep = evaluate_compliance(sla, k)?;
            for st in &rep.intents {
                if sla.weight(st.intent) > 0.0 {
                    total_intents += 1;
                    satisfied += usize::from(st.satisfied);
                }
            }
            compliant.push(rep.all_satisfied());
        }
        let reward = inter_reward(&kpis, &self.slas)?.total;
        for k in &kpis {
            self.store.ingest(n, k);
        }

        if self.healing_enabled && n > 0 && n.is_multiple_of(self.cfg.healing.cadence) {
            self.healing_step(n, &kpis, &demand);
        }

        // Drift detection and the super-state.
        let orch = self.cfg.orchestration;
        let alpha = 1.0 / orch.forecast_horizon.max(1.0);
        let mut violations = vec![0.0; s_count];
        for s in 0..s_count {
            let k = &kpis[s];
            let sla = &self.slas[s];
            let intent = sla.kind.primary_intent();
            let v = if k.active_ues == 0 { 0.0 } else { sla.violation(intent, k.value(intent)) };
            // A throughput shortfall only counts while data is waiting.
            let backlogged = k.buffer_bits > sla.threshold(intent) * tti;
            let counts = v > 0.0 && (!intent.higher_is_better() || backlogged);
            violations[s] = v;
            self.streaks[s] = if counts { self.streaks[s] + 1 } else { 0 };
            let load_ref = self.cfg.slices[s].traffic.mean_rate_bps * self.cfg.slices[s].ues as f64 * 2.0;
            let load = if load_ref > 0.0 { k.offered_bps / load_ref } else { 0.0 };
            self.load_forecast[s] += alpha * (load - self.load_forecast[s]);
            self.loss_forecast[s] += alpha * (k.loss - self.loss_forecast[s]);
        }
        let any_persistent = self.streaks.iter().any(|&x| x >= orch.drift_persistence);
        let drift = any_persistent && n >= self.cfg.warmup && n >= self.cooldown_until;

        if self.agent.is_some() {
            let mut state = SuperState {
                floors: [0.0; NUM_SLICES],
                healing_scale: if n < self.healing_until { self.healing_theta } else { 0.0 },
                fairness: self.fairness,
                fulfillment: if total_intents == 0 { 1.0 } else { satisfied as f64 / total_intents as f64 },
                drift,
                ..SuperState::default()
            };
            for s in 0..s_count {
                let k = &kpis[s];
                let setup = &self.cfg.slices[s];
                let sla = &self.slas[s];
                let idx = setup.kind.index();
                let thr_ref = match setup.kind {
                    SliceKind::Be => sla.f_req_bps.max(sla.g_req_bps),
                    _ => sla.r_req_bps,
                };
                let thr_val = match setup.kind {
                    SliceKind::Be => k.percentile_bps,
                    _ => k.throughput_bps,
                };
                state.slices[idx] = SliceFeatures {
                    throughput: if thr_ref > 0.0 { thr_val / (2.0 * thr_ref) } else { 0.0 },
                    latency: k.latency_s / sla.l_max_s.max(1e-12),
                    loss: k.loss,
                    buffer: k.buffer_bits / (self.cfg.buffer_bits * k.active_ues.max(1) as f64),
                    violation: violations[s],
                    share: self.allocation.0[s] as f64 / r as f64,
                    persistent: self.streaks[s] >= orch.drift_persistence,
                    offered_forecast: self.load_forecast[s],
                    loss_forecast: self.loss_forecast[s],
                };
                if n < self.floors_until {
                    state.floors[idx] = self.floors[s] as f64 / r as f64;
                }
            }
            let agent = self.agent.as_mut().expect("checked");
            state.history = agent.digest();
            let reference = self
                .goal
                .as_ref()
                .and_then(|g| self.cfg.slice_index(g.region.slice).map(|i| self.base_slas[i].threshold(g.region.kpi)))
                .unwrap_or(0.0);
            let step_in = StreamStep {
                step: n,
                goal_token: encode_goal(self.goal.as_ref(), new_goal, reference),
                goal: self.goal,
                new_goal,
                state,
            };
            if let Some(a) = agent.on_step(&step_in)? {
                let applied = self.apply_orchestration(n, &a, &kpis, &demand);
                self.trace.orchestration.push(OrchestrationRecord {
                    step: n,
                    trigger: if new_goal { Trigger::Goal } else { Trigger::Drift },
                    action: a,
                    applied,
                });
                self.cooldown_until = n + orch.drift_cooldown;
            }
        }

        self.trace.steps.push(StepRecord {
            step: n,
            allocation: alloc.0.clone(),
            priorities: self.priorities.0.clone(),
            floors,
            slices: kpis.clone(),
            compliant,
            reward,
            drift,
            healing_gain: self.healing_gain(n),
            fairness: self.fairness,
        });
        self.prev = kpis;
        self.step += 1;
        Ok(())
    }

    fn apply_orchestration(
        &mut self,
        n: u64,
        a: &OrchestrationAction,
        kpis: &[SliceKpis],
        demand: &[SliceDemand],
    ) -> bool {
        let hold = self.cfg.orchestration.action_hold;
        match a.agent {
            AgentId::InterSlice => {
                let by_kind = a.floors_rbg(self.cfg.network.num_rbg);
                self.floors = self.cfg.slices.iter().map(|s| by_kind[s.kind.index()]).collect();
                self.floors_until = n + 1 + hold;
                true
            }
            AgentId::SelfHealing => {
                if !self.healing_enabled {
                    return false;
                }
                self.healing_theta = a.theta[THETA_HEALING];
                self.healing_until = n + 1 + hold;
                self.healing_step(n, kpis, demand);
                true
            }
            AgentId::IntraSlice => {
                self.fairness = a.theta[THETA_FAIRNESS];
                true
            }
        }
    }
}

pub(crate) fn intent_name(i: Intent) -> &'static str {
    match i {
        Intent::Throughput => "throughput",
        Intent::Latency => "latency",
        Intent::Loss => "loss",
        Intent::LongTerm => "long-term",
        Intent::Percentile => "percentile",
    }
}

/// Runs one replica to completion.
pub fn run_episode(cfg: &RunConfig, seed: u64) -> Result<Trace> {
    let mut sim = Simulator::new(cfg.clone(), seed)?;
    sim.run()?;
    Ok(sim.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{EventKind, ScenarioEvent};

    fn short(controller: ControllerKind) -> RunConfig {
        RunConfig {
            controller,
            steps: 250,
            warmup: 20,
            ..RunConfig::default()
        }
    }

    #[test]
    fn every_step_hands_out_all_rbgs() {
        for c in ControllerKind::ALL {
            let cfg = short(c);
            let r = cfg.network.num_rbg;
            let t = run_episode(&cfg, 3).unwrap();
            assert_eq!(t.steps.len(), 250);
            assert!(t.steps.iter().all(|s| s.allocation.iter().sum::<usize>() == r), "{c}");
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = short(ControllerKind::HdmAgentic);
        let a = run_episode(&cfg, 9).unwrap();
        let b = run_episode(&cfg, 9).unwrap();
        let c = run_episode(&cfg, 10).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn accepted_intent_tightens_the_threshold() {
        let mut cfg = short(ControllerKind::HdmAgentic);
        cfg.events = vec![
            ScenarioEvent {
                step: 50,
                kind: EventKind::Intent { text: "URLLC latency <= 1.5 ms".into() },
            },
            ScenarioEvent {
                step: 60,
                kind: EventKind::Intent { text: "increase eMBB throughput by 400%".into() },
            },
        ];
        let mut sim = Simulator::new(cfg, 1).unwrap();
        sim.run().unwrap();
        let intents = &sim.trace().intents;
        assert_eq!(intents.len(), 2);
        assert!(intents[0].accepted && !intents[1].accepted);
        let urllc = sim.slas().iter().find(|s| s.kind == SliceKind::Urllc).unwrap();
        assert!((urllc.l_req_s - 1.5e-3).abs() < 1e-15);
    }

    #[test]
    fn rule_based_never_orchestrates_or_heals() {
        let t = run_episode(&short(ControllerKind::RuleBased), 2).unwrap();
        assert!(t.orchestration.is_empty() && t.healing.is_empty());
        assert!(t.steps.iter().all(|s| s.allocation == t.steps[0].allocation));
    }
}
