//! Single-threaded discrete-event simulation of the center, its worker
//! pool, the station agents and the links between them.
//!
//! Every state change happens inside an event popped from the virtual
//! clock, and every random draw comes from one seeded generator, so a
//! scenario and a seed fix the trace byte for byte.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use irs_core::balancer::WorkerHealth;
use irs_core::clock::VirtualClock;
use irs_core::framework::ServiceDecl;
use irs_core::ladder::Strategy;
use irs_core::link::{Direction, LinkError, StationLink, TrafficClass};
use irs_core::model::FaultLayer;
use irs_core::sfbuffer::{ChannelLoad, RemovalReason};
use irs_core::{Activation, DesiredState, LinkProfile, RegionClass, SimTime, StationIdentity, V2iMessage, Version};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_yaml::Value;
use sha2::{Digest, Sha256};

use crate::agent::{Agent, AgentConfig, AgentState, BootFaults, FRAMEWORK_SUBJECT};
use crate::center::{Center, CenterError};
use crate::scenario::{Behavior, Directive, FaultSpec, Scenario, ScenarioError, Settings, TimelineEntry};
use crate::store::Liveness;
use crate::wire::Frame;

pub const LOG_SCAN_INTERVAL: Duration = Duration::from_secs(60);

/// Formats virtual time as seconds with microsecond precision.
pub fn secs(t: SimTime) -> String {
    let us = t.as_micros();
    format!("{}.{:06}", us / 1_000_000, us % 1_000_000)
}

fn dsecs(d: Duration) -> String {
    format!("{}.{:06}", d.as_secs(), d.subsec_micros())
}

/// Trace attribute values carry no spaces.
fn clean(s: &str) -> String {
    s.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

/// Line-oriented event trace with a running SHA-256.
#[derive(Clone, Debug)]
pub struct Trace {
    lines: Vec<String>,
    hasher: Sha256,
}

impl Default for Trace {
    fn default() -> Self {
        Trace {
            lines: Vec::new(),
            hasher: Sha256::new(),
        }
    }
}

impl Trace {
    pub fn push(&mut self, at: SimTime, kind: &str, attrs: String) {
        let line = if attrs.is_empty() {
            format!("t={} EVENT {kind}", secs(at))
        } else {
            format!("t={} EVENT {kind} {attrs}", secs(at))
        };
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    /// The lines followed by a `DIGEST <hex>` line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out.push_str("DIGEST ");
        out.push_str(&self.digest());
        out.push('\n');
        out
    }
}

/// An operator write to the store.
#[derive(Clone, Debug, PartialEq)]
pub enum Write {
    Assign {
        station: String,
        package: String,
        version: Version,
        activation: Activation,
    },
    Configure {
        station: String,
        app: String,
        entries: BTreeMap<String, String>,
    },
}

impl Write {
    pub fn station(&self) -> &str {
        match self {
            Write::Assign { station, .. } | Write::Configure { station, .. } => station,
        }
    }

    fn describe(&self) -> String {
        match self {
            Write::Assign {
                station,
                package,
                version,
                ..
            } => format!("op=ASSIGN station={station} package={package} version={version}"),
            Write::Configure { station, app, .. } => format!("op=CONFIGURE station={station} app={app}"),
        }
    }
}

#[derive(Clone, Debug)]
enum Request {
    Frame { from: String, frame: Frame },
    Write(Write),
}

#[derive(Clone, Debug)]
struct Pending {
    worker: String,
    request: Request,
}

#[derive(Clone, Debug)]
enum Event {
    Boot(String),
    Heartbeat(String),
    Sample(String),
    LogScan(String),
    SfTick(String),
    Ping(String),
    ToCenter { from: String, frame: Frame },
    ToStation { to: String, frame: Frame },
    WorkerDone { req: u64, worker: String },
    FunctionTx { station: String, app: String },
    FunctionArrive { station: String, app: String, bytes: u64 },
    Directive(usize),
    Fault { spec: FaultSpec },
    LinkRestore(String),
    DataRestore(String),
}

/// Latest entries and number of acked writes, per app.
type AckedConfigs = BTreeMap<String, (BTreeMap<String, String>, u64)>;

/// Writes acknowledged to the operator, kept independently of the store.
#[derive(Clone, Debug, Default)]
pub struct WriteOracle {
    configs: BTreeMap<String, AckedConfigs>,
    /// station -> package -> version
    assignments: BTreeMap<String, BTreeMap<String, Version>>,
    pub acked: u64,
}

impl WriteOracle {
    fn record(&mut self, w: &Write) {
        self.acked += 1;
        match w {
            Write::Assign {
                station,
                package,
                version,
                ..
            } => {
                self.assignments
                    .entry(station.clone())
                    .or_default()
                    .insert(package.clone(), *version);
            }
            Write::Configure { station, app, entries } => {
                let e = self
                    .configs
                    .entry(station.clone())
                    .or_default()
                    .entry(app.clone())
                    .or_insert((BTreeMap::new(), 0));
                e.0 = entries.clone();
                e.1 += 1;
            }
        }
    }

    /// Acked writes the store no longer reflects.
    pub fn lost(&self, center: &Center) -> Vec<String> {
        let mut lost = Vec::new();
        let desired = |s: &str| center.store.stations.get(s).map(|r| &r.desired);
        for (station, apps) in &self.configs {
            for (app, (entries, n)) in apps {
                let ok = desired(station)
                    .and_then(|d| d.configs.get(app))
                    .is_some_and(|c| &c.entries == entries && c.version == *n);
                if !ok {
                    lost.push(format!("{station}/config/{app}"));
                }
            }
        }
        for (station, pkgs) in &self.assignments {
            for (pkg, v) in pkgs {
                let ok = desired(station)
                    .and_then(|d| d.assignments.get(pkg))
                    .is_some_and(|a| a.version == *v);
                if !ok {
                    lost.push(format!("{station}/assignment/{pkg}"));
                }
            }
        }
        lost
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssertionResult {
    pub at: f64,
    pub metric: String,
    pub station: Option<String>,
    pub app: Option<String>,
    pub op: String,
    pub expected: Value,
    pub actual: Value,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Metrics {
    /// REPORT frames put on the wire, with their arrival time.
    pub heartbeats_sent: BTreeMap<String, Vec<SimTime>>,
    pub heartbeats_delivered: BTreeMap<String, u64>,
    /// Heartbeats that could not be sent because the link was down.
    pub heartbeat_failures: BTreeMap<String, u64>,
    /// (station, ping sent at, round trip)
    pub ping_rtts: Vec<(String, SimTime, Duration)>,
    /// (station, app) -> (arrival, bytes)
    pub function_deliveries: BTreeMap<(String, String), Vec<(SimTime, u64)>>,
    pub function_dropped: BTreeMap<(String, String), u64>,
    /// (station, subject) -> rungs applied, in order
    pub ladder: BTreeMap<(String, String), Vec<Strategy>>,
    pub operator_directives: u64,
    pub desired_changed_at: BTreeMap<String, SimTime>,
    pub converged_at: BTreeMap<String, SimTime>,
    pub convergence_times: BTreeMap<String, Duration>,
    pub broadcasts: BTreeMap<String, u64>,
    pub assertions: Vec<AssertionResult>,
}

impl Metrics {
    pub fn heartbeats_lost(&self, now: SimTime) -> u64 {
        self.heartbeats_sent
            .iter()
            .map(|(s, arrivals)| {
                let due = arrivals.iter().filter(|a| **a <= now).count() as u64;
                due.saturating_sub(self.heartbeats_delivered.get(s).copied().unwrap_or(0))
            })
            .sum()
    }

    pub fn ping_rtt_max(&self) -> Option<Duration> {
        self.ping_rtts.iter().map(|(_, _, d)| *d).max()
    }

    pub fn function_bytes(&self, station: &str, app: &str) -> u64 {
        self.function_deliveries
            .get(&(station.to_string(), app.to_string()))
            .map_or(0, |v| v.iter().map(|(_, b)| b).sum())
    }
}

pub struct Simulation {
    clock: VirtualClock<Event>,
    pub center: Center,
    agents: BTreeMap<String, Agent>,
    links: BTreeMap<String, StationLink>,
    profiles: BTreeMap<String, LinkProfile>,
    behaviors: BTreeMap<String, Behavior>,
    rng: ChaCha8Rng,
    pub trace: Trace,
    pending: BTreeMap<u64, Pending>,
    next_req: u64,
    next_nonce: u64,
    timeline: Vec<TimelineEntry>,
    settings: Settings,
    channel: BTreeMap<String, (ChannelLoad, usize)>,
    held: BTreeMap<String, VecDeque<Frame>>,
    pings: BTreeMap<u64, String>,
    pub metrics: Metrics,
    pub oracle: WriteOracle,
    duration: SimTime,
}

fn services_of(behaviors: &BTreeMap<String, Behavior>) -> BTreeMap<String, ServiceDecl> {
    behaviors
        .iter()
        .map(|(n, b)| {
            (
                n.clone(),
                ServiceDecl {
                    provides: b.provides.clone(),
                    requires: b.requires.clone(),
                },
            )
        })
        .collect()
}

impl Simulation {
    /// Builds the world at t = 0: packages published, stations registered,
    /// boots and timeline scheduled. Nothing has run yet.
    pub fn new(scenario: &Scenario) -> Result<Simulation, ScenarioError> {
        scenario.validate()?;
        let profiles: BTreeMap<String, LinkProfile> =
            scenario.profiles().into_iter().map(|p| (p.name.clone(), p)).collect();
        let mut center = Center::new(scenario.worker_ids(), profiles.keys().cloned().collect());
        center.liveness.heartbeat_interval = Duration::from_secs_f64(scenario.settings.heartbeat_interval);
        let mut sim = Simulation {
            clock: VirtualClock::new(),
            center,
            agents: BTreeMap::new(),
            links: BTreeMap::new(),
            behaviors: scenario
                .packages
                .iter()
                .map(|p| (p.name.clone(), p.behavior.clone()))
                .collect(),
            profiles,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            trace: Trace::default(),
            pending: BTreeMap::new(),
            next_req: 1,
            next_nonce: 1,
            timeline: scenario.timeline.clone(),
            settings: scenario.settings.clone(),
            channel: BTreeMap::new(),
            held: BTreeMap::new(),
            pings: BTreeMap::new(),
            metrics: Metrics::default(),
            oracle: WriteOracle::default(),
            duration: SimTime::from_secs_f64(scenario.duration),
        };
        sim.trace.push(SimTime::ZERO, "START", format!("seed={} duration={}", scenario.seed, scenario.duration));
        for p in &scenario.packages {
            let archive = p.archive()?;
            let (name, version) = sim
                .center
                .publish_package(&archive.to_zip())
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            sim.trace.push(SimTime::ZERO, "PUBLISH", format!("package={name} version={version}"));
        }
        let stations = scenario.stations()?;
        let n = stations.len().max(1) as f64;
        for (i, s) in stations.into_iter().enumerate() {
            let offset = SimTime::from_secs_f64(scenario.settings.boot_spread * i as f64 / n);
            sim.add_station(s, offset).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        for (i, e) in sim.timeline.iter().enumerate() {
            sim.clock.schedule_at(SimTime::from_secs_f64(e.at), Event::Directive(i));
        }
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn duration(&self) -> SimTime {
        self.duration
    }

    pub fn agent(&self, station: &str) -> Option<&Agent> {
        self.agents.get(station)
    }

    pub fn link(&self, station: &str) -> Option<&StationLink> {
        self.links.get(station)
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }

    fn heartbeat_interval(&self) -> Duration {
        Duration::from_secs_f64(self.settings.heartbeat_interval)
    }

    fn latency(&self) -> Duration {
        Duration::from_millis(self.settings.worker_latency_ms)
    }

    /// Registers a station with the center and brings up its agent and
    /// link. The agent boots after `boot_in`.
    pub fn add_station(&mut self, identity: StationIdentity, boot_in: SimTime) -> Result<(), CenterError> {
        let now = self.now();
        let profile = self
            .profiles
            .get(&identity.link_profile)
            .cloned()
            .ok_or_else(|| CenterError::UnknownLinkProfile(identity.link_profile.clone()))?;
        self.center.register_station(
            &identity.hardware_id,
            &identity.logical_id,
            &identity.link_profile,
            identity.region_class,
        )?;
        let id = identity.logical_id.clone();
        self.trace.push(
            now,
            "REGISTER",
            format!(
                "station={id} hardware={} profile={} region={}",
                identity.hardware_id,
                identity.link_profile,
                identity.region_class.as_str()
            ),
        );
        let mut link = StationLink::new(profile);
        for (app, b) in &self.behaviors {
            if b.traffic.is_some() {
                let quota = self
                    .center
                    .store
                    .repository
                    .get(app)
                    .and_then(|vs| vs.values().next_back())
                    .map_or(0, |e| e.manifest.quota.bandwidth_up);
                link.set_app_quota(app, quota);
            }
        }
        self.links.insert(id.clone(), link);
        self.agents.insert(id.clone(), self.new_agent(identity));
        self.metrics.desired_changed_at.insert(id.clone(), now);
        let start = now + Duration::from_micros(boot_in.as_micros());
        self.clock.schedule_at(start, Event::Boot(id.clone()));
        let hb = self.heartbeat_interval();
        self.clock.schedule_at(start + hb, Event::Heartbeat(id.clone()));
        self.clock.schedule_at(start + irs_core::checks::DEFAULT_DATA_INTERVAL, Event::Sample(id.clone()));
        self.clock.schedule_at(start + LOG_SCAN_INTERVAL, Event::LogScan(id.clone()));
        self.clock.schedule_at(start + Duration::from_secs(1), Event::SfTick(id.clone()));
        if let Some(p) = self.settings.ping_interval {
            self.clock.schedule_at(start + Duration::from_secs_f64(p), Event::Ping(id.clone()));
        }
        for (app, b) in &self.behaviors {
            if let Some(t) = &b.traffic {
                let at = SimTime::from_secs_f64(t.start).max(now);
                self.clock.schedule_at(
                    at,
                    Event::FunctionTx {
                        station: id.clone(),
                        app: app.clone(),
                    },
                );
            }
        }
        Ok(())
    }

    fn new_agent(&self, identity: StationIdentity) -> Agent {
        let config = AgentConfig {
            heartbeat_interval: self.heartbeat_interval(),
            ..AgentConfig::default()
        };
        Agent::new(identity, config, services_of(&self.behaviors))
    }

    /// Runs every event due by `until`.
    pub fn advance_to(&mut self, until: SimTime) {
        while let Some((at, ev)) = self.clock.pop_until(until) {
            self.handle(at, ev);
        }
        self.clock.advance(until);
    }

    /// Runs the whole scenario and closes the trace.
    pub fn run(&mut self) -> RunResult {
        self.advance_to(self.duration);
        self.finish()
    }

    /// Writes the per-station end state into the trace.
    pub fn finish(&mut self) -> RunResult {
        let now = self.now();
        let ids: Vec<String> = self.agents.keys().cloned().collect();
        for id in &ids {
            let rec = &self.center.store.stations[id];
            let drift = self.center.actions_for(id).map(|a| a.len()).unwrap_or(0);
            let state = self.agents[id].state().as_str();
            let line = format!(
                "station={id} region={} profile={} liveness={} state={state} drift={drift}",
                rec.identity.region_class.as_str(),
                rec.identity.link_profile,
                liveness_str(self.center.liveness_of(rec, now)),
            );
            self.trace.push(now, "FINAL", line);
        }
        let counts = self.center.pool.dispatch_counts().clone();
        for (w, n) in &counts {
            self.trace.push(now, "WORKER", format!("worker={w} dispatched={n}"));
        }
        let passed = self.metrics.assertions.iter().all(|a| a.passed);
        self.trace.push(now, "END", format!("assertions={} passed={passed}", self.metrics.assertions.len()));
        RunResult {
            digest: self.trace.digest(),
            passed,
        }
    }

    fn handle(&mut self, now: SimTime, ev: Event) {
        match ev {
            Event::Boot(id) => self.on_boot(&id, now),
            Event::Heartbeat(id) => self.on_heartbeat(&id, now),
            Event::Sample(id) => {
                if let Some(a) = self.agents.get_mut(&id) {
                    a.collect_sample(now);
                }
                self.clock
                    .schedule_in(irs_core::checks::DEFAULT_DATA_INTERVAL, Event::Sample(id));
            }
            Event::LogScan(id) => {
                if let Some(a) = self.agents.get_mut(&id) {
                    if a.state().is_reachable() {
                        for ev in a.analyze_logs(now) {
                            self.trace.push(
                                now,
                                "LOG_RULE",
                                format!("station={id} layer={:?} severity={:?} subject={}", ev.layer, ev.severity, ev.subject),
                            );
                        }
                    }
                }
                self.flush_agent(&id, now);
                self.clock.schedule_in(LOG_SCAN_INTERVAL, Event::LogScan(id));
            }
            Event::SfTick(id) => self.on_sf_tick(&id, now),
            Event::Ping(id) => {
                let nonce = self.next_nonce;
                self.next_nonce += 1;
                self.pings.insert(nonce, id.clone());
                self.send_down(&id, Frame::Ping { nonce, sent_at: now }, now);
                if let Some(p) = self.settings.ping_interval {
                    self.clock.schedule_in(Duration::from_secs_f64(p), Event::Ping(id));
                }
            }
            Event::ToCenter { from, frame } => self.on_center_receive(from, frame, now),
            Event::ToStation { to, frame } => self.on_station_receive(&to, frame, now),
            Event::WorkerDone { req, worker } => self.on_worker_done(req, &worker, now),
            Event::FunctionTx { station, app } => self.on_function_tx(station, app, now),
            Event::FunctionArrive { station, app, bytes } => {
                self.trace.push(now, "FN_DELIVER", format!("station={station} app={app} bytes={bytes}"));
                self.metrics
                    .function_deliveries
                    .entry((station, app))
                    .or_default()
                    .push((now, bytes));
            }
            Event::Directive(i) => {
                let entry = self.timeline[i].clone();
                self.on_directive(entry.directive, now);
            }
            Event::Fault { spec } => self.inject_once(&spec, now),
            Event::LinkRestore(id) => {
                if let Some(l) = self.links.get_mut(&id) {
                    l.set_up(true);
                }
                if let Some(a) = self.agents.get_mut(&id) {
                    a.set_link_up(true);
                }
                self.trace.push(now, "LINK_UP", format!("station={id}"));
                let held: Vec<Frame> = self.held.remove(&id).unwrap_or_default().into();
                for f in held {
                    self.send_up(&id, f, now);
                }
            }
            Event::DataRestore(id) => {
                if let Some(a) = self.agents.get_mut(&id) {
                    a.set_data_stalled(false);
                }
                self.trace.push(now, "DATA_RESTORED", format!("station={id}"));
            }
        }
    }

    fn on_boot(&mut self, id: &str, now: SimTime) {
        let Some(agent) = self.agents.get_mut(id) else { return };
        let report = agent.boot(now);
        let phases: Vec<String> = report.phases.iter().map(|(p, o)| format!("{p:?}:{o:?}")).collect();
        let state = agent.state().as_str();
        self.trace
            .push(now, "BOOT", format!("station={id} state={state} phases={}", phases.join(",")));
        self.flush_agent(id, now);
    }

    fn on_heartbeat(&mut self, id: &str, now: SimTime) {
        let hb = self.heartbeat_interval();
        let up = self.links.get(id).is_some_and(|l| l.is_up());
        let Some(agent) = self.agents.get_mut(id) else { return };
        if !agent.state().is_reachable() {
            self.clock.schedule_in(hb, Event::Heartbeat(id.into()));
            return;
        }
        if !up {
            let delay = agent.backoff.next_delay();
            agent.local_verify(now);
            *self.metrics.heartbeat_failures.entry(id.into()).or_default() += 1;
            self.trace
                .push(now, "HEARTBEAT_FAIL", format!("station={id} retry_in={}", dsecs(delay)));
            self.flush_agent(id, now);
            self.clock.schedule_in(delay, Event::Heartbeat(id.into()));
            return;
        }
        agent.backoff.reset();
        if let Some(f) = agent.heartbeat(now) {
            self.send_up(id, f, now);
        }
        self.flush_agent(id, now);
        self.clock.schedule_in(hb, Event::Heartbeat(id.into()));
    }

    fn on_sf_tick(&mut self, id: &str, now: SimTime) {
        let (load, neighbors) = self
            .channel
            .get(id)
            .copied()
            .unwrap_or((ChannelLoad::default(), self.settings.neighbors));
        if let Some(agent) = self.agents.get_mut(id) {
            let period = agent.sf.config().period;
            if agent.state().is_reachable() {
                let out = agent.sf.tick(neighbors, load, now);
                for b in &out.broadcasts {
                    *self.metrics.broadcasts.entry(id.into()).or_default() += 1;
                    self.trace.push(
                        now,
                        "BROADCAST",
                        format!("station={id} msg={} nth={} priority={}", b.msg_id, b.nth, b.priority),
                    );
                }
                for r in &out.removed {
                    let reason = match r.reason {
                        RemovalReason::Completed => "COMPLETED".to_string(),
                        RemovalReason::Expired {
                            broadcasts_done,
                            under_redundancy,
                        } => format!(
                            "{} broadcasts={broadcasts_done}",
                            if under_redundancy { "UNDER_REDUNDANCY" } else { "EXPIRED" }
                        ),
                    };
                    self.trace
                        .push(now, "SF_REMOVED", format!("station={id} msg={} reason={reason}", r.msg_id));
                }
            }
            self.clock.schedule_in(period, Event::SfTick(id.into()));
        }
    }

    fn send_up(&mut self, id: &str, frame: Frame, now: SimTime) {
        let Some(link) = self.links.get_mut(id) else { return };
        let kind = frame.kind();
        let bytes = frame.encode().len() as u64;
        match link.send(Direction::Up, TrafficClass::Management, bytes, now, &mut self.rng) {
            Ok(d) => {
                if kind == "REPORT" {
                    self.metrics.heartbeats_sent.entry(id.into()).or_default().push(d.arrive_at);
                }
                self.trace.push(
                    now,
                    "SEND",
                    format!("from={id} to=center kind={kind} bytes={bytes} arrive={}", secs(d.arrive_at)),
                );
                self.clock.schedule_at(
                    d.arrive_at,
                    Event::ToCenter {
                        from: id.into(),
                        frame,
                    },
                );
            }
            Err(e) => {
                self.trace
                    .push(now, "SEND_FAIL", format!("from={id} kind={kind} reason={}", clean(&e.to_string())));
                if !matches!(frame, Frame::Report { .. } | Frame::Pong { .. }) && e == LinkError::LinkDown {
                    self.held.entry(id.into()).or_default().push_back(frame);
                }
            }
        }
    }

    fn send_down(&mut self, id: &str, frame: Frame, now: SimTime) {
        let Some(link) = self.links.get_mut(id) else { return };
        let kind = frame.kind();
        let bytes = frame.encode().len() as u64;
        match link.send(Direction::Down, TrafficClass::Management, bytes, now, &mut self.rng) {
            Ok(d) => {
                self.trace.push(
                    now,
                    "SEND",
                    format!("from=center to={id} kind={kind} bytes={bytes} arrive={}", secs(d.arrive_at)),
                );
                self.clock.schedule_at(d.arrive_at, Event::ToStation { to: id.into(), frame });
            }
            Err(e) => self
                .trace
                .push(now, "SEND_FAIL", format!("from=center to={id} kind={kind} reason={}", clean(&e.to_string()))),
        }
    }

    fn flush_agent(&mut self, id: &str, now: SimTime) {
        let frames = match self.agents.get_mut(id) {
            Some(a) => a.take_outbox(),
            None => return,
        };
        for f in frames {
            if let Frame::Fault {
                event,
                strategy: Some(s),
            } = &f
            {
                if event.severity >= irs_core::Severity::Error {
                    self.metrics
                        .ladder
                        .entry((id.into(), event.subject.clone()))
                        .or_default()
                        .push(*s);
                }
            }
            self.send_up(id, f, now);
        }
    }

    fn flush_center(&mut self, now: SimTime) {
        for (to, f) in self.center.take_outbox() {
            self.send_down(&to, f, now);
        }
    }

    fn dispatch(&mut self, request: Request, now: SimTime) {
        let what = match &request {
            Request::Frame { from, frame } => format!("kind={} station={from}", frame.kind()),
            Request::Write(w) => w.describe(),
        };
        match self.center.dispatch() {
            Ok(worker) => {
                let req = self.next_req;
                self.next_req += 1;
                self.trace.push(now, "DISPATCH", format!("req={req} worker={worker} {what}"));
                self.clock.schedule_in(
                    self.latency(),
                    Event::WorkerDone {
                        req,
                        worker: worker.clone(),
                    },
                );
                self.pending.insert(req, Pending { worker, request });
            }
            Err(e) => self.trace.push(now, "DISPATCH_FAIL", format!("{what} reason={}", clean(&e.to_string()))),
        }
    }

    fn on_center_receive(&mut self, from: String, frame: Frame, now: SimTime) {
        self.trace.push(now, "DELIVER", format!("from={from} to=center kind={}", frame.kind()));
        match frame {
            Frame::Pong { nonce, sent_at } => {
                if self.pings.remove(&nonce).is_some() {
                    let rtt = now.since(sent_at);
                    self.trace.push(now, "PING_RTT", format!("station={from} rtt={}", dsecs(rtt)));
                    self.metrics.ping_rtts.push((from, sent_at, rtt));
                }
            }
            Frame::Hello { .. } | Frame::Report { .. } | Frame::Fault { .. } => {
                if matches!(frame, Frame::Report { .. }) {
                    *self.metrics.heartbeats_delivered.entry(from.clone()).or_default() += 1;
                }
                self.dispatch(Request::Frame { from, frame }, now);
            }
            _ => {}
        }
    }

    fn on_worker_done(&mut self, req: u64, worker: &str, now: SimTime) {
        match self.pending.get(&req) {
            Some(p) if p.worker == worker => {}
            // Superseded by a retry on another worker.
            _ => return,
        }
        let p = self.pending.remove(&req).expect("checked above");
        let station = match &p.request {
            Request::Frame { from, .. } => from.clone(),
            Request::Write(w) => w.station().to_string(),
        };
        let before = self.center.store.stations.get(&station).map(|r| r.desired.clone());
        match p.request {
            Request::Frame { frame, .. } => {
                let fault = match &frame {
                    Frame::Fault { event, .. } => Some(event.clone()),
                    _ => None,
                };
                let kind = frame.kind();
                let r = self.center.handle_frame(frame, now);
                if let Some(ev) = fault {
                    let decision = self.center.store.faults.last().map(|f| f.decision.clone());
                    let decisions = decision
                        .map(|d| d.decisions.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","))
                        .unwrap_or_default();
                    self.trace.push(
                        now,
                        "FAULT",
                        format!(
                            "station={} layer={:?} severity={:?} subject={} exhausted={} decision={}",
                            ev.station,
                            ev.layer,
                            ev.severity,
                            clean(&ev.subject),
                            ev.ladder_exhausted,
                            clean(&decisions)
                        ),
                    );
                }
                match r {
                    Ok(()) => self.trace.push(now, "APPLY", format!("req={req} worker={worker} kind={kind} station={station}")),
                    Err(e) => self
                        .trace
                        .push(now, "REJECT", format!("req={req} kind={kind} reason={}", clean(&e.to_string()))),
                }
            }
            Request::Write(w) => match self.apply_write(&w) {
                Ok(()) => {
                    self.oracle.record(&w);
                    self.trace.push(now, "ACK", format!("req={req} worker={worker} {}", w.describe()));
                    let _ = self.center.push_actions(&station);
                }
                Err(e) => self
                    .trace
                    .push(now, "NACK", format!("req={req} {} reason={}", w.describe(), clean(&e.to_string()))),
            },
        }
        let after = self.center.store.stations.get(&station).map(|r| r.desired.clone());
        if before != after {
            self.metrics.desired_changed_at.insert(station.clone(), now);
            self.metrics.converged_at.remove(&station);
        }
        self.track_convergence(&station, now);
        self.flush_center(now);
    }

    fn apply_write(&mut self, w: &Write) -> Result<(), CenterError> {
        match w {
            Write::Assign {
                station,
                package,
                version,
                activation,
            } => self.center.assign_package(station, package, *version, *activation).map(|_| ()),
            Write::Configure { station, app, entries } => {
                self.center.set_desired_config(station, app, entries.clone()).map(|_| ())
            }
        }
    }

    /// Applies an operator write immediately, bypassing the event queue.
    /// Used by the management API, which acknowledges synchronously.
    pub fn operator_write(&mut self, w: Write) -> Result<(), CenterError> {
        let now = self.now();
        let worker = self.center.dispatch()?;
        let station = w.station().to_string();
        self.apply_write(&w)?;
        self.oracle.record(&w);
        self.trace.push(now, "ACK", format!("req=api worker={worker} {}", w.describe()));
        self.metrics.desired_changed_at.insert(station.clone(), now);
        self.metrics.converged_at.remove(&station);
        let _ = self.center.push_actions(&station);
        self.flush_center(now);
        Ok(())
    }

    /// Operator-ordered strategy for a station.
    pub fn operator_order(&mut self, station: &str, strategy: Strategy, subject: &str) -> Result<(), CenterError> {
        let now = self.now();
        self.center.order_strategy(station, strategy, subject)?;
        self.metrics.operator_directives += 1;
        self.trace.push(
            now,
            "OPERATOR",
            format!("station={station} strategy={} subject={}", strategy.as_str(), clean(subject)),
        );
        self.flush_center(now);
        Ok(())
    }

    fn track_convergence(&mut self, station: &str, now: SimTime) {
        let Some(rec) = self.center.store.stations.get(station) else { return };
        let converged = rec.reported.is_some() && self.center.actions_for(station).is_ok_and(|a| a.is_empty());
        let was = self.metrics.converged_at.contains_key(station);
        if converged && !was {
            let since = self.metrics.desired_changed_at.get(station).copied().unwrap_or(SimTime::ZERO);
            let took = now.since(since);
            self.metrics.converged_at.insert(station.into(), now);
            self.metrics.convergence_times.insert(station.into(), took);
            self.trace.push(now, "CONVERGED", format!("station={station} after={}", dsecs(took)));
        } else if !converged && was {
            self.metrics.converged_at.remove(station);
            self.trace.push(now, "DIVERGED", format!("station={station}"));
        }
    }

    fn on_station_receive(&mut self, id: &str, frame: Frame, now: SimTime) {
        let kind = frame.kind();
        self.trace.push(now, "DELIVER", format!("from=center to={id} kind={kind}"));
        let Some(agent) = self.agents.get_mut(id) else { return };
        if let Frame::Decision { decision, subject, .. } = &frame {
            self.trace.push(
                now,
                "DECISION",
                format!(
                    "station={id} subject={} decisions={}",
                    clean(subject),
                    decision.decisions.iter().map(|d| format!("{d:?}")).collect::<Vec<_>>().join(",")
                ),
            );
        }
        let reply = agent.on_frame(frame, now);
        let state = agent.state();
        if kind == "DECISION" {
            self.trace.push(now, "AGENT_STATE", format!("station={id} state={}", state.as_str()));
        }
        self.flush_agent(id, now);
        if let Some(r) = reply {
            self.send_up(id, r, now);
        }
    }

    fn on_function_tx(&mut self, station: String, app: String, now: SimTime) {
        let Some(t) = self.behaviors.get(&app).and_then(|b| b.traffic.clone()) else { return };
        if t.stop.is_some_and(|s| now >= SimTime::from_secs_f64(s)) || t.rate == 0 || t.frame == 0 {
            return;
        }
        let running = self.agents.get(&station).is_some_and(|a| {
            a.framework()
                .handle(&app)
                .is_some_and(|h| h.state == irs_core::framework::FunctionState::Active)
        });
        if running {
            let link = self.links.get_mut(&station).expect("station has a link");
            match link.send(Direction::Up, TrafficClass::Function(app.clone()), t.frame, now, &mut self.rng) {
                Ok(d) if d.dropped => {
                    self.trace.push(now, "FN_LOST", format!("station={station} app={app} bytes={}", t.frame));
                }
                Ok(d) => {
                    self.clock.schedule_at(
                        d.arrive_at,
                        Event::FunctionArrive {
                            station: station.clone(),
                            app: app.clone(),
                            bytes: t.frame,
                        },
                    );
                }
                Err(e) => {
                    *self.metrics.function_dropped.entry((station.clone(), app.clone())).or_default() += 1;
                    let reason = match e {
                        LinkError::Backlog(_) => "BACKLOG".to_string(),
                        other => clean(&other.to_string()),
                    };
                    self.trace
                        .push(now, "FN_DROP", format!("station={station} app={app} reason={reason}"));
                }
            }
        }
        let gap = Duration::from_micros((t.frame * 1_000_000).div_ceil(t.rate));
        self.clock.schedule_in(gap, Event::FunctionTx { station, app });
    }

    fn on_directive(&mut self, d: Directive, now: SimTime) {
        let ids = self.station_ids();
        self.trace.push(now, "DIRECTIVE", format!("kind={}", d.kind()));
        match d {
            Directive::Assign {
                stations,
                package,
                version,
                activation,
            } => {
                let Ok(version) = version.parse::<Version>() else {
                    self.trace.push(now, "NACK", format!("op=ASSIGN reason=bad_version package={package}"));
                    return;
                };
                for s in stations.resolve(&ids) {
                    let w = Write::Assign {
                        station: s,
                        package: package.clone(),
                        version,
                        activation,
                    };
                    self.dispatch(Request::Write(w), now);
                }
            }
            Directive::Configure { stations, app, entries } => {
                for s in stations.resolve(&ids) {
                    let w = Write::Configure {
                        station: s,
                        app: app.clone(),
                        entries: entries.clone(),
                    };
                    self.dispatch(Request::Write(w), now);
                }
            }
            Directive::InjectFault(spec) => {
                let spacing = Duration::from_secs_f64(spec.spacing);
                for k in 0..spec.repeat.max(1) {
                    self.clock.schedule_at(now + spacing * k, Event::Fault { spec: spec.clone() });
                }
            }
            Directive::KillWorker { worker } => self.kill_worker(&worker, now),
            Directive::ReplaceHardware { station, hardware } => self.replace_hardware(&station, &hardware, now),
            Directive::PostV2i {
                stations,
                msg_id,
                msg_type,
                priority,
                size,
                ttl,
                redundancy,
                origin,
            } => {
                let expiry = now + Duration::from_secs_f64(ttl);
                let msg = match V2iMessage::new(msg_id, msg_type, priority, size, now, expiry, redundancy, origin) {
                    Ok(m) => m,
                    Err(e) => {
                        self.trace.push(now, "V2I_INVALID", format!("msg={msg_id} reason={}", clean(&e.to_string())));
                        return;
                    }
                };
                let targets = stations.resolve(&ids);
                if origin == irs_core::model::Origin::Center {
                    if let Err(e) = self.center.post_v2i(&targets, &msg) {
                        self.trace.push(now, "V2I_INVALID", format!("msg={msg_id} reason={}", clean(&e.to_string())));
                    }
                    self.flush_center(now);
                } else {
                    for t in targets {
                        if let Some(a) = self.agents.get_mut(&t) {
                            a.bridge_v2i(msg.clone(), now);
                        }
                        self.flush_agent(&t, now);
                    }
                }
            }
            Directive::SetChannelLoad { stations, load, neighbors } => {
                for s in stations.resolve(&ids) {
                    let n = neighbors.unwrap_or(self.settings.neighbors);
                    self.channel.insert(s.clone(), (ChannelLoad::from_fraction(load), n));
                    self.trace.push(now, "CHANNEL", format!("station={s} load={load} neighbors={n}"));
                }
            }
            Directive::Assert {
                metric,
                station,
                app,
                op,
                value,
            } => {
                let actual = self.metric(&metric, station.as_deref(), app.as_deref());
                let passed = compare(&actual, &op, &value);
                self.trace.push(
                    now,
                    "ASSERT",
                    format!(
                        "metric={metric} station={} op={op} expected={} actual={} passed={passed}",
                        station.as_deref().unwrap_or("*"),
                        clean(&value_str(&value)),
                        clean(&value_str(&actual))
                    ),
                );
                self.metrics.assertions.push(AssertionResult {
                    at: now.as_secs_f64(),
                    metric,
                    station,
                    app,
                    op,
                    expected: value,
                    actual,
                    passed,
                });
            }
        }
    }

    fn kill_worker(&mut self, worker: &str, now: SimTime) {
        if let Err(e) = self.center.worker_failover(worker, WorkerHealth::Down) {
            self.trace.push(now, "KILL_FAIL", format!("worker={worker} reason={}", clean(&e.to_string())));
            return;
        }
        self.trace.push(now, "WORKER_DOWN", format!("worker={worker}"));
        let stranded: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, p)| p.worker == worker)
            .map(|(r, _)| *r)
            .collect();
        for req in stranded {
            match self.center.dispatch() {
                Ok(next) => {
                    self.trace.push(now, "RETRY", format!("req={req} from={worker} to={next}"));
                    self.pending.get_mut(&req).expect("pending").worker = next.clone();
                    self.clock.schedule_in(self.latency(), Event::WorkerDone { req, worker: next });
                }
                Err(_) => {
                    self.pending.remove(&req);
                    self.trace.push(now, "LOST", format!("req={req} reason=no_worker"));
                }
            }
        }
    }

    fn replace_hardware(&mut self, station: &str, hardware: &str, now: SimTime) {
        let Some(old) = self.agents.get(station) else { return };
        let mut identity = old.identity.clone();
        let previous = std::mem::replace(&mut identity.hardware_id, hardware.to_string());
        self.trace
            .push(now, "REPLACE", format!("station={station} old={previous} new={hardware}"));
        let agent = self.new_agent(identity);
        self.agents.insert(station.into(), agent);
        self.held.remove(station);
        self.metrics.desired_changed_at.insert(station.into(), now);
        self.metrics.converged_at.remove(station);
        self.on_boot(station, now);
    }

    fn inject_once(&mut self, spec: &FaultSpec, now: SimTime) {
        let id = spec.station.as_str();
        let subject = match (spec.layer, spec.subject.is_empty()) {
            (FaultLayer::Framework, _) => FRAMEWORK_SUBJECT.to_string(),
            (_, false) => spec.subject.clone(),
            (FaultLayer::Os, true) => "os".into(),
            (FaultLayer::Network, true) => "link".into(),
            (FaultLayer::DataCollection, true) => "data".into(),
            (FaultLayer::Function, true) => "function".into(),
        };
        self.trace.push(
            now,
            "INJECT",
            format!("station={id} layer={:?} severity={:?} subject={}", spec.layer, spec.severity, clean(&subject)),
        );
        if let Some(n) = spec.corrupt_downloads {
            if let Some(a) = self.agents.get_mut(id) {
                a.corrupt_next_downloads(&subject, n);
            }
            return;
        }
        if spec.at_boot {
            if let Some(a) = self.agents.get_mut(id) {
                a.set_boot_faults(BootFaults {
                    os: spec.layer == FaultLayer::Os,
                    framework: spec.layer == FaultLayer::Framework,
                    framework_persistent: spec.clears_after.is_none(),
                });
            }
            self.on_boot(id, now);
            return;
        }
        match spec.layer {
            FaultLayer::Network => {
                let d = Duration::from_secs_f64(spec.duration.unwrap_or(30.0));
                if let Some(l) = self.links.get_mut(id) {
                    l.set_up(false);
                }
                if let Some(a) = self.agents.get_mut(id) {
                    a.set_link_up(false);
                }
                self.trace.push(now, "LINK_DOWN", format!("station={id} for={}", dsecs(d)));
                self.clock.schedule_in(d, Event::LinkRestore(id.into()));
            }
            FaultLayer::DataCollection => {
                let d = Duration::from_secs_f64(spec.duration.unwrap_or(30.0));
                if let Some(a) = self.agents.get_mut(id) {
                    a.set_data_stalled(true);
                }
                self.clock.schedule_in(d, Event::DataRestore(id.into()));
            }
            layer => {
                let Some(a) = self.agents.get_mut(id) else { return };
                if let Some(o) = a.inject_fault(layer, spec.severity, &subject, spec.clears_after, now) {
                    let state = a.state().as_str();
                    self.trace.push(
                        now,
                        "LADDER",
                        format!(
                            "station={id} subject={} rung={} recovered={} state={state}",
                            clean(&subject),
                            o.rung.as_str(),
                            o.recovered
                        ),
                    );
                }
            }
        }
        self.flush_agent(id, now);
    }

    /// Current value of a named metric.
    pub fn metric(&self, metric: &str, station: Option<&str>, app: Option<&str>) -> Value {
        let now = self.now();
        let stations: Vec<String> = match station {
            Some(s) => vec![s.to_string()],
            None => self.station_ids(),
        };
        let rec = |s: &str| self.center.store.stations.get(s);
        let app = app.unwrap_or("");
        match metric {
            "converged" => Value::Bool(stations.iter().all(|s| self.metrics.converged_at.contains_key(s))),
            "convergence_time_max" => {
                if stations.iter().all(|s| self.metrics.converged_at.contains_key(s)) {
                    let m = stations
                        .iter()
                        .filter_map(|s| self.metrics.convergence_times.get(s))
                        .max()
                        .copied()
                        .unwrap_or_default();
                    Value::from(m.as_secs_f64())
                } else {
                    Value::Null
                }
            }
            "heartbeats_lost" => Value::from(self.metrics.heartbeats_lost(now)),
            "ping_rtt_max" => self.metrics.ping_rtt_max().map_or(Value::Null, |d| Value::from(d.as_secs_f64())),
            "fault_count" => Value::from(
                self.center
                    .store
                    .faults
                    .iter()
                    .filter(|f| station.is_none_or(|s| f.event.station == s))
                    .count() as u64,
            ),
            "operator_directives" => Value::from(self.metrics.operator_directives),
            "agent_state" => stations
                .first()
                .and_then(|s| self.agents.get(s))
                .map_or(Value::Null, |a| Value::from(a.state().as_str())),
            "health" => stations
                .first()
                .and_then(|s| self.agents.get(s))
                .and_then(|a| a.reported().health.get(app).copied())
                .map_or(Value::from("ABSENT"), |h| Value::from(format!("{h:?}").to_uppercase())),
            "installed_version" => stations
                .first()
                .and_then(|s| self.agents.get(s))
                .and_then(|a| a.reported().installed.get(app).copied())
                .map_or(Value::Null, |v| Value::from(v.to_string())),
            "acked_write_loss" => Value::from(self.oracle.lost(&self.center).len() as u64),
            "dispatch_skew" => Value::from(self.dispatch_skew()),
            "sf_len" => Value::from(
                stations
                    .iter()
                    .filter_map(|s| self.agents.get(s))
                    .map(|a| a.sf.len() as u64)
                    .sum::<u64>(),
            ),
            "broadcasts" => Value::from(
                stations
                    .iter()
                    .map(|s| self.metrics.broadcasts.get(s).copied().unwrap_or(0))
                    .sum::<u64>(),
            ),
            "function_bytes" => Value::from(stations.iter().map(|s| self.metrics.function_bytes(s, app)).sum::<u64>()),
            "liveness" => stations
                .first()
                .and_then(|s| rec(s))
                .map_or(Value::Null, |r| Value::from(liveness_str(self.center.liveness_of(r, now)))),
            "reported_matches_desired" => Value::Bool(stations.iter().all(|s| {
                let (Some(r), Some(a)) = (rec(s), self.agents.get(s)) else { return false };
                a.reported() == r.desired.expected_report()
            })),
            _ => Value::Null,
        }
    }

    /// Spread of dispatch counts among the workers that are still healthy.
    pub fn dispatch_skew(&self) -> u64 {
        let counts = self.center.pool.dispatch_counts();
        let healthy: Vec<u64> = self
            .center
            .pool
            .healthy()
            .map(|w| counts.get(&w.id).copied().unwrap_or(0))
            .collect();
        match (healthy.iter().max(), healthy.iter().min()) {
            (Some(a), Some(b)) => a - b,
            _ => 0,
        }
    }

    pub fn desired(&self, station: &str) -> Option<&DesiredState> {
        self.center.store.stations.get(station).map(|r| &r.desired)
    }

    /// Registers and boots a new station while the simulation runs.
    pub fn register_live(
        &mut self,
        hardware_id: &str,
        logical_id: &str,
        link_profile: &str,
        region_class: RegionClass,
    ) -> Result<(), CenterError> {
        if self.agents.contains_key(logical_id) {
            self.center
                .register_station(hardware_id, logical_id, link_profile, region_class)?;
            return Ok(());
        }
        self.add_station(
            StationIdentity {
                logical_id: logical_id.into(),
                hardware_id: hardware_id.into(),
                link_profile: link_profile.into(),
                region_class,
            },
            SimTime::ZERO,
        )
    }

    pub fn agent_states(&self) -> BTreeMap<String, AgentState> {
        self.agents.iter().map(|(k, a)| (k.clone(), a.state())).collect()
    }
}

pub fn liveness_str(l: Liveness) -> &'static str {
    match l {
        Liveness::Online => "ONLINE",
        Liveness::Suspect => "SUSPECT",
        Liveness::Offline => "OFFLINE",
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub digest: String,
    pub passed: bool,
}

fn value_str(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
    }
}

/// Numbers compare numerically; everything else only by (in)equality.
pub fn compare(actual: &Value, op: &str, expected: &Value) -> bool {
    if let (Some(a), Some(e)) = (actual.as_f64(), expected.as_f64()) {
        return match op {
            "==" => a == e,
            "!=" => a != e,
            "<" => a < e,
            "<=" => a <= e,
            ">" => a > e,
            ">=" => a >= e,
            _ => false,
        };
    }
    let eq = match (actual, expected) {
        (Value::String(a), Value::String(e)) => a.eq_ignore_ascii_case(e),
        (a, e) => a == e,
    };
    match op {
        "==" => eq,
        "!=" => !eq,
        _ => false,
    }
}

/// Loads, runs and reports one scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<(Simulation, RunResult), ScenarioError> {
    let mut sim = Simulation::new(scenario)?;
    let r = sim.run();
    Ok((sim, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(extra: &str) -> Scenario {
        let text = format!(
            r#"
seed: 3
duration: 90
fleet:
  stations:
    - {{id: irs-001, profile: XDSL, region: URBAN}}
    - {{id: irs-002, profile: GPRS, region: RURAL}}
packages:
  - name: base
    version: 1.0.0
    behavior: {{provides: [time]}}
  - name: lsa-bridge
    version: 1.2.0
    depends: [[base, 1.0.0]]
    behavior: {{requires: [time]}}
timeline:
  - at: 1
    ASSIGN: {{stations: all, package: lsa-bridge, version: 1.2.0}}
{extra}"#
        );
        Scenario::from_yaml(&text).unwrap()
    }

    #[test]
    fn converges_and_is_deterministic() {
        let s = scenario("  - at: 80\n    ASSERT: {metric: converged, value: true}\n");
        let (sim, r) = run_scenario(&s).unwrap();
        assert!(r.passed, "{:?}", sim.metrics.assertions);
        for id in ["irs-001", "irs-002"] {
            let a = sim.agent(id).unwrap().reported();
            assert_eq!(a, sim.desired(id).unwrap().expected_report());
        }
        let (_, again) = run_scenario(&s).unwrap();
        assert_eq!(r.digest, again.digest);
        let other = Scenario { seed: 4, ..s };
        let (_, r4) = run_scenario(&other).unwrap();
        assert!(r4.passed);
    }

    #[test]
    fn failing_install_fails_assertion() {
        let s = scenario(
            "  - at: 1\n    INJECT_FAULT: {station: irs-001, layer: FUNCTION, subject: lsa-bridge, corrupt_downloads: 1000}\n  - at: 80\n    ASSERT: {metric: converged, value: true}\n",
        );
        let (sim, r) = run_scenario(&s).unwrap();
        assert!(!r.passed);
        assert!(!sim.agent("irs-001").unwrap().reported().installed.contains_key("lsa-bridge"));
        assert!(sim.center.store.faults.iter().any(|f| f.event.subject == "lsa-bridge"));
    }

    #[test]
    fn trace_lines_have_the_documented_shape() {
        let (sim, _) = run_scenario(&scenario("")).unwrap();
        for l in sim.trace.lines() {
            let mut parts = l.splitn(4, ' ');
            assert!(parts.next().unwrap().starts_with("t="));
            assert_eq!(parts.next(), Some("EVENT"));
            assert!(parts.next().is_some());
        }
        assert!(sim.trace.render().ends_with(&format!("DIGEST {}\n", sim.trace.digest())));
    }

    #[test]
    fn compare_ops() {
        assert!(compare(&Value::from(1.5), "<=", &Value::from(2)));
        assert!(!compare(&Value::from(3), "<", &Value::from(2)));
        assert!(compare(&Value::from("running"), "==", &Value::from("RUNNING")));
        assert!(compare(&Value::Bool(true), "!=", &Value::Bool(false)));
        assert!(!compare(&Value::Null, "<", &Value::from(1)));
    }
}
