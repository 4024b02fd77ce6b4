//! The world loop: link, flows, clients, proxy and origin driven by one
//! event queue. A run is single-threaded and fully determined by its setup
//! and seed.

use std::collections::{BTreeMap, VecDeque};

use crate::client::{
    BufferEvent, ClientConfig, ClientSession, FetchAction, RequestId, OVERWRITE_NOTICE_HEADER,
};
use crate::engine::{
    advance, client_seed, ClientId, EventDetail, EventKind, EventLog, EventQueue, Flow,
    FlowId, LinkMode, LinkModel,
};
use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps, SegmentPayload};
use crate::proxy::{ProxyConfig, ProxyState, SliceStep};
use crate::server::{serve_request, PushPolicy, ServerResponse};

/// Upper bound on loop iterations; a correct run needs a few thousand per
/// client.
const MAX_STEPS: u64 = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum JoinRule {
    AtTime(f64),
    /// Join once `client` has received `segments` segments.
    AfterSegments { client: ClientId, segments: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub name: String,
    pub join: JoinRule,
}

/// Everything a run needs, already validated and resolved to client ids.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub ladder: BitrateLadder,
    pub base_rtt_s: f64,
    pub client: ClientConfig,
    pub proxy: ProxyConfig,
    pub clients: Vec<ClientSpec>,
    pub schedule: Vec<SliceStep>,
}

#[derive(Debug)]
enum Ev {
    Join(Vec<ClientId>),
    ResponseStart { client: ClientId, id: RequestId },
    Wake { client: ClientId, generation: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    NotJoined,
    Idle,
    Waiting,
    AwaitPush(u32),
    AwaitResponse,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PayloadRole {
    Lead,
    Push,
}

struct FlowMeta {
    client: ClientId,
    request: RequestId,
    role: PayloadRole,
    /// Pushes still to be sent after this payload, in order.
    rest: VecDeque<SegmentPayload>,
}

struct ClientRt {
    session: ClientSession,
    phase: Phase,
    wake_generation: u64,
    pending: Option<(RequestId, ServerResponse)>,
    /// Bitrate of each delivered segment, by index - 1.
    delivered: Vec<Kbps>,
}

struct World<'a> {
    setup: &'a SimSetup,
    policy: PushPolicy,
    now: f64,
    queue: EventQueue<Ev>,
    link: LinkModel,
    flows: Vec<Flow>,
    metas: BTreeMap<FlowId, FlowMeta>,
    next_flow: u64,
    clients: Vec<ClientRt>,
    proxy: ProxyState,
    log: EventLog,
    /// (trigger client, segment count, clients to join).
    triggers: Vec<(ClientId, u32, Vec<ClientId>)>,
}

/// Runs one simulation and returns its event log.
pub fn run(setup: &SimSetup, seed: u64) -> Result<EventLog> {
    let mut world = World::new(setup, seed)?;
    world.run()?;
    Ok(world.log)
}

impl<'a> World<'a> {
    fn new(setup: &'a SimSetup, seed: u64) -> Result<Self> {
        if setup.clients.is_empty() {
            return Err(SimError::Config("a scenario needs at least one client".into()));
        }
        let capacity = setup.proxy.capacity_kbps;
        let link = match setup.proxy.strategy.link_mode() {
            LinkMode::Shared => LinkModel::shared(capacity, setup.base_rtt_s)?,
            LinkMode::Sliced => LinkModel::sliced(capacity, setup.base_rtt_s)?,
        };
        let policy = PushPolicy::new(setup.client.k)?;
        let proxy = ProxyState::new(setup.ladder.clone(), setup.proxy, setup.schedule.clone())?;
        let clients = (0..setup.clients.len())
            .map(|i| {
                let id = ClientId(i as u32);
                Ok(ClientRt {
                    session: ClientSession::new(id, setup.ladder.clone(), setup.client, client_seed(seed, id.0))?,
                    phase: Phase::NotJoined,
                    wake_generation: 0,
                    pending: None,
                    delivered: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut queue = EventQueue::new();
        let mut at_time: BTreeMap<u64, (f64, Vec<ClientId>)> = BTreeMap::new();
        let mut triggers: Vec<(ClientId, u32, Vec<ClientId>)> = Vec::new();
        for (i, spec) in setup.clients.iter().enumerate() {
            let id = ClientId(i as u32);
            match spec.join {
                JoinRule::AtTime(t) => {
                    if !(t >= 0.0 && t.is_finite()) {
                        return Err(SimError::Config(format!("client {} joins at invalid time {t}", spec.name)));
                    }
                    at_time.entry(t.to_bits()).or_insert((t, Vec::new())).1.push(id);
                }
                JoinRule::AfterSegments { client, segments } => {
                    if client.index() >= setup.clients.len() || client == id {
                        return Err(SimError::Config(format!("client {} has an unresolvable join rule", spec.name)));
                    }
                    match triggers.iter_mut().find(|(c, n, _)| *c == client && *n == segments) {
                        Some(t) => t.2.push(id),
                        None => triggers.push((client, segments, vec![id])),
                    }
                }
            }
        }
        let mut timed: Vec<_> = at_time.into_values().collect();
        timed.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, ids) in timed {
            queue.schedule(t, Ev::Join(ids))?;
        }
        let names = setup.clients.iter().map(|c| c.name.clone()).collect();
        Ok(Self {
            setup,
            policy,
            now: 0.0,
            queue,
            link,
            flows: Vec::new(),
            metas: BTreeMap::new(),
            next_flow: 0,
            clients,
            proxy,
            log: EventLog::new(names),
            triggers,
        })
    }

    fn log(&mut self, time: f64, client: ClientId, kind: EventKind, detail: EventDetail) {
        let t = time.max(self.log.end_time());
        self.log.push(t, client, kind, detail);
    }

    fn buffer_level(&self, client: ClientId) -> f64 {
        self.clients[client.index()].session.buffer().level_s()
    }

    fn run(&mut self) -> Result<()> {
        let mut steps = 0u64;
        loop {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(SimError::Internal("simulation did not terminate".into()));
            }
            let tq = self.queue.peek_time();
            let tc = self.link.next_completion(&self.flows).map(|d| self.now + d);
            let t = match (tq, tc) {
                (None, None) => break,
                (Some(a), None) | (None, Some(a)) => a,
                (Some(a), Some(b)) => a.min(b),
            };
            let completions = self.advance_to(t)?;
            if !completions.is_empty() {
                for flow in completions {
                    self.on_flow_done(flow)?;
                }
                continue;
            }
            if tq.is_some_and(|q| q <= t) {
                let (_, ev) = self.queue.next_event().expect("peeked");
                self.handle(ev)?;
            }
        }
        if let Some((i, _)) = self.clients.iter().enumerate().find(|(_, c)| c.phase == Phase::NotJoined) {
            return Err(SimError::Config(format!(
                "client {} never joined: its join trigger was not reached",
                self.setup.clients[i].name
            )));
        }
        // Play out whatever is left in the buffers.
        let tail = self
            .clients
            .iter()
            .map(|c| c.session.buffer().level_s())
            .fold(0.0, f64::max);
        self.tick_playback(tail + 1.0)?;
        Ok(())
    }

    /// Moves time to `t`: plays every buffer and progresses every flow.
    fn advance_to(&mut self, t: f64) -> Result<Vec<Flow>> {
        let dt = t - self.now;
        if dt < 0.0 {
            return Err(SimError::Internal(format!("time moved backwards from {} to {t}", self.now)));
        }
        if dt == 0.0 {
            return Ok(Vec::new());
        }
        self.tick_playback(dt)?;
        let done = advance(&mut self.flows, &self.link, dt);
        self.now = t;
        self.queue.advance_clock(t)?;
        Ok(done.into_iter().map(|c| c.flow).collect())
    }

    fn tick_playback(&mut self, dt: f64) -> Result<()> {
        let start = self.now;
        let mut events: Vec<(f64, ClientId, BufferEvent)> = Vec::new();
        for (i, c) in self.clients.iter_mut().enumerate() {
            for (off, ev) in c.session.buffer_mut().tick(dt) {
                events.push((start + off, ClientId(i as u32), ev));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (t, client, ev) in events {
            self.log_buffer_event(t, client, ev)?;
        }
        Ok(())
    }

    fn log_buffer_event(&mut self, t: f64, client: ClientId, ev: BufferEvent) -> Result<()> {
        let level = self.buffer_level(client);
        let (kind, detail) = match ev {
            BufferEvent::Start => (EventKind::PlaybackStart, EventDetail::default().with_buffer(level)),
            BufferEvent::Resume => (EventKind::PlaybackResume, EventDetail::default().with_buffer(level)),
            BufferEvent::Stall => (EventKind::PlaybackStall, EventDetail::default().with_buffer(0.0)),
            BufferEvent::SegmentPlayed(index) => {
                let bitrate = *self.clients[client.index()]
                    .delivered
                    .get(index as usize - 1)
                    .ok_or_else(|| SimError::Internal(format!("played undelivered segment {index}")))?;
                (EventKind::SegmentPlayed, EventDetail::segment(index, bitrate))
            }
            BufferEvent::Finished => return Ok(()),
        };
        self.log(t, client, kind, detail);
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        match ev {
            Ev::Join(ids) => self.join(ids),
            Ev::ResponseStart { client, id } => self.response_start(client, id),
            Ev::Wake { client, generation } => {
                let c = &self.clients[client.index()];
                if c.wake_generation == generation && c.phase == Phase::Waiting {
                    self.drive(client)?;
                }
                Ok(())
            }
        }
    }

    fn install_slices(&mut self, slices: BTreeMap<ClientId, f64>) -> Result<()> {
        if self.link.mode() != LinkMode::Sliced {
            return Ok(());
        }
        self.link.set_slices(slices.clone())?;
        for (c, s) in slices {
            self.log(self.now, c, EventKind::SliceUpdate, EventDetail::default().with_extra(format!("slice_kbps={s:.3}")));
        }
        Ok(())
    }

    fn join(&mut self, ids: Vec<ClientId>) -> Result<()> {
        let mut slices = BTreeMap::new();
        for &id in &ids {
            if self.clients[id.index()].phase != Phase::NotJoined {
                return Err(SimError::Internal(format!("client {} joined twice", id.0)));
            }
            self.log(self.now, id, EventKind::ClientJoin, EventDetail::default());
            slices = self.proxy.join(id)?;
            self.clients[id.index()].phase = Phase::Idle;
        }
        self.install_slices(slices)?;
        for id in ids {
            self.drive(id)?;
        }
        Ok(())
    }

    fn leave(&mut self, client: ClientId) -> Result<()> {
        self.clients[client.index()].phase = Phase::Left;
        self.log(self.now, client, EventKind::ClientLeave, EventDetail::default());
        // Only discarded pushes can still be in flight; they stop with the client.
        let dropped: Vec<FlowId> = self.flows.iter().filter(|f| f.client == client).map(|f| f.id).collect();
        self.flows.retain(|f| f.client != client);
        for id in dropped {
            self.metas.remove(&id);
        }
        let slices = self.proxy.leave(client)?;
        self.install_slices(slices)
    }

    fn start_flow(&mut self, client: ClientId, request: RequestId, role: PayloadRole, payload: SegmentPayload, rest: VecDeque<SegmentPayload>) {
        let id = FlowId(self.next_flow);
        self.next_flow += 1;
        self.flows.push(Flow::new(id, client, payload, self.now));
        self.metas.insert(id, FlowMeta { client, request, role, rest });
    }

    fn response_start(&mut self, client: ClientId, id: RequestId) -> Result<()> {
        let (pid, response) = self.clients[client.index()]
            .pending
            .take()
            .ok_or_else(|| SimError::Internal("response start without a pending response".into()))?;
        if pid != id {
            return Err(SimError::Internal("response start for a different request".into()));
        }
        let lead = response.lead.seg;
        let mut detail = EventDetail::segment(lead.index, lead.bitrate_kbps);
        if let Some(n) = response.headers.get(OVERWRITE_NOTICE_HEADER) {
            detail = detail.with_extra(format!("notice={n}"));
        }
        self.log(self.now, client, EventKind::ResponseStarted, detail);
        for p in &response.promises {
            self.log(self.now, client, EventKind::PushPromiseReceived, EventDetail::segment(p.seg.index, p.seg.bitrate_kbps));
        }
        let evicted = self.clients[client.index()].session.on_response_start(id, &response)?;
        for old in evicted {
            self.log(
                self.now,
                client,
                EventKind::PushDiscarded,
                EventDetail::segment(response.lead.seg.index, old.bitrate_kbps).with_extra("replaced"),
            );
        }
        self.start_flow(client, id, PayloadRole::Lead, response.lead, response.promises.into_iter().collect());
        Ok(())
    }

    fn on_flow_done(&mut self, flow: Flow) -> Result<()> {
        let Some(mut meta) = self.metas.remove(&flow.id) else {
            return Ok(());
        };
        let client = meta.client;
        let seg = flow.payload.seg;
        if let Some(next) = meta.rest.pop_front() {
            let rest = std::mem::take(&mut meta.rest);
            self.start_flow(client, meta.request, PayloadRole::Push, next, rest);
        }
        match meta.role {
            PayloadRole::Lead => {
                self.log(
                    self.now,
                    client,
                    EventKind::ResponseDone,
                    EventDetail::segment(seg.index, seg.bitrate_kbps).with_buffer(self.buffer_level(client)),
                );
                let ev = self.clients[client.index()].session.on_lead_done(meta.request, flow.payload, self.now)?;
                self.on_delivered(client, seg.bitrate_kbps, ev)?;
                if self.clients[client.index()].phase == Phase::AwaitResponse {
                    self.drive(client)?;
                }
            }
            PayloadRole::Push => {
                let kept = self.clients[client.index()].session.on_push_done(meta.request, flow.payload, self.now)?;
                let detail = EventDetail::segment(seg.index, seg.bitrate_kbps);
                self.log(self.now, client, EventKind::PushPayloadDone, if kept { detail } else { detail.with_extra("discarded") });
                if self.clients[client.index()].phase == Phase::AwaitPush(seg.index) {
                    self.drive(client)?;
                }
            }
        }
        Ok(())
    }

    /// Bookkeeping after a segment entered a buffer.
    fn on_delivered(&mut self, client: ClientId, bitrate: Kbps, ev: Option<BufferEvent>) -> Result<()> {
        let rt = &mut self.clients[client.index()];
        rt.delivered.push(bitrate);
        let count = rt.session.delivered();
        if let Some(ev) = ev {
            self.log_buffer_event(self.now, client, ev)?;
        }
        if let Some(slices) = self.proxy.on_progress(client, count) {
            self.install_slices(slices)?;
        }
        let fired: Vec<Vec<ClientId>> = self
            .triggers
            .iter()
            .filter(|(c, n, _)| *c == client && *n == count)
            .map(|(_, _, ids)| ids.clone())
            .collect();
        // Joined before the trigger client acts again, so the proxy already
        // counts the newcomers when that client's next request arrives.
        for ids in fired {
            self.join(ids)?;
        }
        Ok(())
    }

    /// Lets the client act until it blocks.
    fn drive(&mut self, client: ClientId) -> Result<()> {
        loop {
            let action = self.clients[client.index()].session.next_fetch(self.now)?;
            match action {
                FetchAction::ConsumeFromCache { seg, buffer_event } => {
                    self.on_delivered(client, seg.bitrate_kbps, buffer_event)?;
                }
                FetchAction::Discard { seg, in_flight } => {
                    let detail = EventDetail::segment(seg.index, seg.bitrate_kbps)
                        .with_extra(if in_flight { "in_flight" } else { "cached" });
                    self.log(self.now, client, EventKind::PushDiscarded, detail);
                }
                FetchAction::AwaitPush { index } => {
                    self.clients[client.index()].phase = Phase::AwaitPush(index);
                    return Ok(());
                }
                FetchAction::AwaitResponse => {
                    self.clients[client.index()].phase = Phase::AwaitResponse;
                    return Ok(());
                }
                FetchAction::SendRequest { id, request } => {
                    let level = self.buffer_level(client);
                    self.log(
                        self.now,
                        client,
                        EventKind::RequestSent,
                        EventDetail::segment(request.seg.index, request.seg.bitrate_kbps).with_buffer(level),
                    );
                    let (forwarded, decision) = self.proxy.process_request(client, &request)?;
                    if decision.triggered {
                        let mut extra = format!("from={}", decision.original_bitrate);
                        if let Some(be) = decision.estimated_buffer_s {
                            extra.push_str(&format!(";estimated_buffer_s={be:.3}"));
                        }
                        if decision.notified {
                            extra.push_str(";notice");
                        }
                        self.log(
                            self.now,
                            client,
                            EventKind::RequestRewritten,
                            EventDetail::segment(request.seg.index, decision.final_bitrate)
                                .with_buffer(level)
                                .with_extra(extra),
                        );
                    }
                    let response = serve_request(&self.setup.ladder, &forwarded, self.policy)?;
                    let rt = &mut self.clients[client.index()];
                    rt.pending = Some((id, response));
                    rt.phase = Phase::AwaitResponse;
                    self.queue.schedule(self.now + self.setup.base_rtt_s, Ev::ResponseStart { client, id })?;
                    return Ok(());
                }
                FetchAction::Wait { dt_s } => {
                    let rt = &mut self.clients[client.index()];
                    rt.wake_generation += 1;
                    rt.phase = Phase::Waiting;
                    let generation = rt.wake_generation;
                    self.queue.schedule(self.now + dt_s, Ev::Wake { client, generation })?;
                    return Ok(());
                }
                FetchAction::Done => {
                    if self.clients[client.index()].phase != Phase::Left {
                        self.leave(client)?;
                    }
                    return Ok(());
                }
            }
        }
    }
}
