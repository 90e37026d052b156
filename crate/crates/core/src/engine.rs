//! Per-peer protocol state machine.
//!
//! The engine never touches a socket. Outgoing frames accumulate in an outbox
//! that the driver hands to a transport, and received frames are fed back in
//! through [`PeerEngine::on_frame`]. Local actions are broadcast and only take
//! effect when their own frame comes back through loopback, so local and remote
//! events share one code path.
//!
//! Discovery: `HELLO` is broadcast; peers in a team answer with `GROUPS`.
//! Discovery completes once our own `HELLO` has looped back and no new
//! `GROUPS` arrived for `quiet_window` ticks. If the loopback never shows up
//! within `avail_timeout` ticks the network is reported unavailable.
//!
//! Joining a team with one or two existing members makes every member replay
//! its world as `SYNC` frames. With more members the joiner broadcasts `CHOICE`
//! naming the smallest member address and only that member replays.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chat::{ChatEntry, ChatLog};
use crate::game::{BuildSession, GameData};
use crate::wire::{
    self, ConstructId, Decimal, MessageEnvelope, MessageKind, Payload, PeerAddress, Placement,
    Vec3, WireError,
};
use crate::world::{DiscardReason, Disposition, WorldError, WorldState};

/// Group label used by a single-player engine. Its frames never leave the peer.
pub const SINGLE_PLAYER_GROUP: &str = "~single";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PeerPhase {
    Offline,
    Discovering,
    Joined,
    Synchronizing,
}

impl PeerPhase {
    pub fn name(self) -> &'static str {
        match self {
            PeerPhase::Offline => "Offline",
            PeerPhase::Discovering => "Discovering",
            PeerPhase::Joined => "Joined",
            PeerPhase::Synchronizing => "Synchronizing",
        }
    }

    pub fn in_team(self) -> bool {
        matches!(self, PeerPhase::Joined | PeerPhase::Synchronizing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatClock {
    /// Engine ticks; deterministic.
    Ticks,
    /// Seconds since the Unix epoch.
    WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    /// Ticks to wait for our own HELLO before declaring the network unavailable.
    pub avail_timeout: u64,
    /// Ticks without new discovery or sync traffic before a phase completes.
    pub quiet_window: u64,
    /// Seeds question selection.
    pub seed: u64,
    pub chat_clock: ChatClock,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            avail_timeout: 10,
            quiet_window: 10,
            seed: 0,
            chat_clock: ChatClock::Ticks,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("discovery already started")]
    AlreadyStarted,
    #[error("team discovery has not completed")]
    NotDiscovered,
    #[error("team name must not be empty")]
    EmptyTeamName,
    #[error("not joined to a team")]
    NotJoined,
    #[error("{action} is not allowed while {phase}")]
    PhaseViolation {
        phase: &'static str,
        action: &'static str,
    },
    #[error("construct {0} is locked: owned by another peer")]
    NotOwner(ConstructId),
    #[error("unknown construct {0}")]
    UnknownConstruct(ConstructId),
    #[error("network commands are unavailable in single-player mode")]
    SinglePlayer,
    #[error(transparent)]
    Decode(#[from] WireError),
}

/// Locally initiated state changes that go through the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalAction {
    Translate {
        id: ConstructId,
        translation: Vec3,
    },
    Rotate {
        id: ConstructId,
        axis: Vec3,
        angle: Decimal,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    Completed,
    Abandoned,
}

/// Observable history of one engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    FrameSent {
        seq: u64,
        kind: MessageKind,
        construct_type: Option<String>,
    },
    Delivered {
        sender: PeerAddress,
        seq: u64,
        kind: MessageKind,
        disposition: Disposition,
    },
    PhaseChanged {
        from: PeerPhase,
        to: PeerPhase,
    },
    /// Discovery finished: the team list a panel would show.
    TeamPanel {
        teams: Vec<String>,
    },
    NetworkUnavailable,
    WorldReplayed {
        frames: usize,
    },
    PrerequisitesChecked {
        construct_type: String,
        passed: bool,
    },
    SessionOpened {
        construct_type: String,
        question_id: String,
    },
    QuestionShown {
        construct_type: String,
        question_id: String,
    },
    AnswerChecked {
        construct_type: String,
        question_id: String,
        correct: bool,
    },
    SessionClosed {
        construct_type: String,
        end: SessionEnd,
    },
    ChatLogged {
        display_name: String,
        text: String,
    },
}

#[derive(Debug, Clone)]
struct Discovery {
    hello_seq: u64,
    elapsed: u64,
    loopback: bool,
    quiet: u64,
    complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscoveryStatus {
    Idle,
    Waiting,
    Complete(Vec<String>),
    Unavailable,
}

pub struct PeerEngine {
    me: PeerAddress,
    config: EngineConfig,
    mode: Mode,
    phase: PeerPhase,
    next_seq: u64,
    known_teams: BTreeSet<String>,
    team_members: BTreeMap<String, BTreeSet<PeerAddress>>,
    group: Option<String>,
    members: BTreeSet<PeerAddress>,
    seen: HashSet<(PeerAddress, u64)>,
    pub(crate) world: WorldState,
    // Mutations that overtook the creation of their construct.
    parked: BTreeMap<ConstructId, Vec<MessageEnvelope>>,
    discovery: Option<Discovery>,
    discovery_status: DiscoveryStatus,
    sync_quiet: u64,
    outbox: VecDeque<Vec<u8>>,
    pub(crate) events: Vec<EngineEvent>,
    disposition_counts: BTreeMap<Disposition, u64>,
    now: u64,
    pub(crate) game: Arc<GameData>,
    pub(crate) session: Option<BuildSession>,
    pub(crate) next_construct: u64,
    pub(crate) personal_points: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) username: String,
    pub(crate) chat: ChatLog,
}

impl std::fmt::Debug for PeerEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeerEngine")
            .field("me", &self.me)
            .field("phase", &self.phase)
            .field("group", &self.group)
            .field("members", &self.members)
            .field("constructs", &self.world.len())
            .finish_non_exhaustive()
    }
}

impl PeerEngine {
    /// A network peer, initially offline.
    pub fn new(me: PeerAddress, game: Arc<GameData>, config: EngineConfig) -> Self {
        PeerEngine {
            me,
            mode: Mode::Multi,
            phase: PeerPhase::Offline,
            next_seq: 0,
            known_teams: BTreeSet::new(),
            team_members: BTreeMap::new(),
            group: None,
            members: BTreeSet::new(),
            seen: HashSet::new(),
            world: WorldState::default(),
            parked: BTreeMap::new(),
            discovery: None,
            discovery_status: DiscoveryStatus::Idle,
            sync_quiet: 0,
            outbox: VecDeque::new(),
            events: Vec::new(),
            disposition_counts: BTreeMap::new(),
            now: 0,
            game,
            session: None,
            next_construct: 0,
            personal_points: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            username: String::new(),
            chat: ChatLog::default(),
            config,
        }
    }

    /// A peer playing alone: permanently joined to a private group, with every
    /// broadcast looped straight back without touching a transport.
    pub fn single_player(me: PeerAddress, game: Arc<GameData>, config: EngineConfig) -> Self {
        let mut engine = PeerEngine::new(me, game, config);
        engine.mode = Mode::Single;
        engine.phase = PeerPhase::Joined;
        engine.group = Some(SINGLE_PLAYER_GROUP.to_owned());
        engine.world.group = engine.group.clone();
        engine
    }

    pub fn address(&self) -> &PeerAddress {
        &self.me
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn phase(&self) -> PeerPhase {
        self.phase
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn group(&self) -> Option<&str> {
        self.group.as_deref()
    }

    pub fn members(&self) -> &BTreeSet<PeerAddress> {
        &self.members
    }

    pub fn known_teams(&self) -> &BTreeSet<String> {
        &self.known_teams
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn seen_len(&self) -> usize {
        self.seen.len()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn disposition_count(&self, d: Disposition) -> u64 {
        self.disposition_counts.get(&d).copied().unwrap_or(0)
    }

    pub fn discovery_status(&self) -> &DiscoveryStatus {
        &self.discovery_status
    }

    pub fn game(&self) -> &GameData {
        &self.game
    }

    /// Next frame waiting to be handed to the transport.
    pub fn poll_outgoing(&mut self) -> Option<Vec<u8>> {
        self.outbox.pop_front()
    }

    pub fn has_outgoing(&self) -> bool {
        !self.outbox.is_empty()
    }

    /// True when no phase timer is running.
    pub fn is_settled(&self) -> bool {
        !matches!(
            self.phase,
            PeerPhase::Discovering | PeerPhase::Synchronizing
        ) || matches!(self.discovery, Some(Discovery { complete: true, .. }))
    }

    fn set_phase(&mut self, to: PeerPhase) {
        if self.phase != to {
            self.events.push(EngineEvent::PhaseChanged {
                from: self.phase,
                to,
            });
            self.phase = to;
        }
    }

    fn require_network(&self) -> Result<(), EngineError> {
        match self.mode {
            Mode::Single => Err(EngineError::SinglePlayer),
            Mode::Multi => Ok(()),
        }
    }

    pub(crate) fn broadcast(&mut self, group: String, payload: Payload) -> MessageEnvelope {
        let msg = MessageEnvelope {
            sender: self.me.clone(),
            seq: self.next_seq,
            group,
            payload,
        };
        self.next_seq += 1;
        let frame = wire::encode(&msg).expect("engine only builds valid envelopes");
        let construct_type = match &msg.payload {
            Payload::Create(p) => Some(p.construct_type.clone()),
            _ => None,
        };
        self.events.push(EngineEvent::FrameSent {
            seq: msg.seq,
            kind: msg.kind(),
            construct_type,
        });
        match self.mode {
            Mode::Multi => self.outbox.push_back(frame),
            Mode::Single => {
                self.on_envelope(msg.clone());
            }
        }
        msg
    }

    fn group_label(&self) -> String {
        self.group.clone().unwrap_or_default()
    }

    pub fn start_discovery(&mut self) -> Result<(), EngineError> {
        self.require_network()?;
        if self.phase != PeerPhase::Offline {
            return Err(EngineError::AlreadyStarted);
        }
        let hello = self.broadcast(String::new(), Payload::Hello);
        self.discovery = Some(Discovery {
            hello_seq: hello.seq,
            elapsed: 0,
            loopback: false,
            quiet: 0,
            complete: false,
        });
        self.discovery_status = DiscoveryStatus::Waiting;
        self.set_phase(PeerPhase::Discovering);
        Ok(())
    }

    pub fn join_team(&mut self, team: &str) -> Result<(), EngineError> {
        self.require_network()?;
        if team.is_empty() {
            return Err(EngineError::EmptyTeamName);
        }
        if self.phase != PeerPhase::Discovering
            || !self.discovery.as_ref().is_some_and(|d| d.complete)
        {
            return Err(EngineError::NotDiscovered);
        }
        let existing: BTreeSet<PeerAddress> = self
            .team_members
            .get(team)
            .map(|m| m.iter().filter(|a| **a != self.me).cloned().collect())
            .unwrap_or_default();
        self.broadcast(
            team.to_owned(),
            Payload::Join {
                team: team.to_owned(),
            },
        );
        self.discovery = None;
        self.group = Some(team.to_owned());
        self.known_teams.insert(team.to_owned());
        self.team_members
            .entry(team.to_owned())
            .or_default()
            .insert(self.me.clone());
        self.world = WorldState::new(self.group.clone());
        self.members = existing;
        if self.members.is_empty() {
            self.set_phase(PeerPhase::Joined);
        } else {
            self.sync_quiet = 0;
            self.set_phase(PeerPhase::Synchronizing);
            if self.members.len() > 2 {
                let chosen = self.members.iter().next().cloned().expect("non-empty");
                self.broadcast(team.to_owned(), Payload::Choice { chosen });
            }
        }
        Ok(())
    }

    pub fn leave(&mut self) -> Result<(), EngineError> {
        self.require_network()?;
        if !self.phase.in_team() {
            return Err(EngineError::NotJoined);
        }
        let group = self.group_label();
        self.broadcast(group.clone(), Payload::Leave);
        if let Some(m) = self.team_members.get_mut(&group) {
            m.remove(&self.me);
        }
        self.group = None;
        self.members.clear();
        self.world = WorldState::default();
        self.parked.clear();
        if let Some(session) = self.session.take() {
            self.events.push(EngineEvent::SessionClosed {
                construct_type: session.requested_type,
                end: SessionEnd::Abandoned,
            });
        }
        self.set_phase(PeerPhase::Offline);
        Ok(())
    }

    /// Broadcasts one SYNC per construct carrying its current transform.
    pub fn replay_world(&mut self) -> Result<usize, EngineError> {
        if self.phase != PeerPhase::Joined {
            return Err(EngineError::PhaseViolation {
                phase: self.phase.name(),
                action: "world replay",
            });
        }
        let group = self.group_label();
        let snapshot: Vec<_> = self
            .world
            .constructs()
            .map(|c| Payload::Sync {
                placement: Placement {
                    id: c.id.clone(),
                    construct_type: c.construct_type.clone(),
                    transform: c.transform,
                },
                seqs: c.seqs,
            })
            .collect();
        let frames = snapshot.len();
        for payload in snapshot {
            self.broadcast(group.clone(), payload);
        }
        self.events.push(EngineEvent::WorldReplayed { frames });
        Ok(frames)
    }

    pub(crate) fn require_team(&self, action: &'static str) -> Result<(), EngineError> {
        if !self.phase.in_team() {
            return Err(EngineError::PhaseViolation {
                phase: self.phase.name(),
                action,
            });
        }
        Ok(())
    }

    /// Moves or rotates one of our own constructs.
    pub fn send_local(&mut self, action: LocalAction) -> Result<MessageEnvelope, EngineError> {
        let (id, payload) = match action {
            LocalAction::Translate { id, translation } => {
                (id.clone(), Payload::Translate { id, translation })
            }
            LocalAction::Rotate { id, axis, angle } => {
                (id.clone(), Payload::Rotate { id, axis, angle })
            }
        };
        self.require_team(payload.kind().as_str())?;
        let Some(construct) = self.world.get(&id) else {
            return Err(EngineError::UnknownConstruct(id));
        };
        if construct.owner() != self.me {
            return Err(EngineError::NotOwner(id));
        }
        Ok(self.broadcast(self.group_label(), payload))
    }

    /// Advances the engine clock by one tick.
    pub fn tick(&mut self) {
        self.now += 1;
        if let Some(d) = self.discovery.as_mut() {
            d.elapsed += 1;
            if !d.loopback {
                if d.elapsed >= self.config.avail_timeout {
                    self.discovery = None;
                    self.discovery_status = DiscoveryStatus::Unavailable;
                    self.events.push(EngineEvent::NetworkUnavailable);
                    self.set_phase(PeerPhase::Offline);
                }
            } else if !d.complete {
                d.quiet += 1;
                if d.quiet >= self.config.quiet_window {
                    d.complete = true;
                    let teams: Vec<String> = self.known_teams.iter().cloned().collect();
                    self.discovery_status = DiscoveryStatus::Complete(teams.clone());
                    self.events.push(EngineEvent::TeamPanel { teams });
                }
            }
        }
        if self.phase == PeerPhase::Synchronizing {
            self.sync_quiet += 1;
            if self.sync_quiet >= self.config.quiet_window {
                self.set_phase(PeerPhase::Joined);
            }
        }
    }

    pub(crate) fn chat_time(&self) -> u64 {
        match self.config.chat_clock {
            ChatClock::Ticks => self.now,
            ChatClock::WallClock => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Decodes and processes one delivered frame.
    pub fn on_frame(&mut self, frame: &[u8]) -> Result<Disposition, EngineError> {
        let msg = wire::decode(frame)?;
        Ok(self.on_envelope(msg))
    }

    pub fn on_envelope(&mut self, msg: MessageEnvelope) -> Disposition {
        let disposition = if !self.seen.insert(msg.key()) {
            Disposition::Discarded(DiscardReason::Duplicate)
        } else if msg.kind().is_handshake() {
            self.handle_handshake(&msg)
        } else if self.group.as_deref() != Some(msg.group.as_str()) {
            Disposition::Discarded(DiscardReason::ForeignGroup)
        } else if msg.kind().is_system() {
            self.handle_system(&msg)
        } else {
            self.handle_chat(&msg)
        };
        *self.disposition_counts.entry(disposition).or_default() += 1;
        self.events.push(EngineEvent::Delivered {
            sender: msg.sender,
            seq: msg.seq,
            kind: msg.payload.kind(),
            disposition,
        });
        disposition
    }

    fn record_membership(&mut self, peer: &PeerAddress, team: Option<&str>) {
        for (name, members) in self.team_members.iter_mut() {
            if Some(name.as_str()) != team {
                members.remove(peer);
            }
        }
        match team {
            Some(team) => {
                self.known_teams.insert(team.to_owned());
                self.team_members
                    .entry(team.to_owned())
                    .or_default()
                    .insert(peer.clone());
                if self.group.as_deref() == Some(team) {
                    self.members.insert(peer.clone());
                } else {
                    self.members.remove(peer);
                }
            }
            None => {
                self.members.remove(peer);
            }
        }
    }

    fn handle_handshake(&mut self, msg: &MessageEnvelope) -> Disposition {
        let own = msg.sender == self.me;
        match &msg.payload {
            Payload::Hello => {
                if own {
                    if let Some(d) = self.discovery.as_mut() {
                        if d.hello_seq == msg.seq {
                            d.loopback = true;
                            d.quiet = 0;
                        }
                    }
                } else if self.phase.in_team() {
                    let teams = self.known_teams.iter().cloned().collect();
                    let group = self.group_label();
                    self.broadcast(
                        String::new(),
                        Payload::Groups {
                            responder_group: group,
                            teams,
                        },
                    );
                }
            }
            Payload::Groups {
                responder_group,
                teams,
            } => {
                if !own {
                    self.known_teams.extend(teams.iter().cloned());
                    let team = (!responder_group.is_empty()).then_some(responder_group.as_str());
                    self.record_membership(&msg.sender, team);
                    if let Some(d) = self.discovery.as_mut() {
                        d.quiet = 0;
                    }
                }
            }
            Payload::Join { team } => {
                if !own {
                    self.record_membership(&msg.sender, Some(team));
                    if self.group.as_deref() == Some(team.as_str())
                        && self.phase == PeerPhase::Joined
                    {
                        let existing =
                            self.members.iter().filter(|m| **m != msg.sender).count() + 1;
                        if existing <= 2 {
                            let _ = self.replay_world();
                        }
                    }
                }
            }
            Payload::Leave => {
                if !own {
                    self.record_membership(&msg.sender, None);
                }
            }
            Payload::Choice { chosen } => {
                if *chosen == self.me
                    && self.phase == PeerPhase::Joined
                    && self.group.as_deref() == Some(msg.group.as_str())
                {
                    let _ = self.replay_world();
                }
            }
            _ => unreachable!("not a handshake payload"),
        }
        Disposition::Applied
    }

    fn handle_system(&mut self, msg: &MessageEnvelope) -> Disposition {
        match msg.kind() {
            MessageKind::Create | MessageKind::Sync => {
                if msg.kind() == MessageKind::Sync && self.phase == PeerPhase::Synchronizing {
                    self.sync_quiet = 0;
                }
                let disposition = match self.world.apply_create(msg) {
                    Ok(d) => d,
                    Err(WorldError::BadConstructId { .. }) => {
                        Disposition::Discarded(DiscardReason::NotOwner)
                    }
                    Err(e) => unreachable!("{e}"),
                };
                if disposition == Disposition::Applied {
                    if let Payload::Create(p) = &msg.payload {
                        if p.id.owner() == self.me {
                            self.personal_points += self.game.catalog.points_of(&p.construct_type);
                        }
                    }
                    let id = msg.payload.construct_id().expect("system payload").clone();
                    self.apply_parked(&id);
                }
                disposition
            }
            MessageKind::Translate | MessageKind::Rotate => {
                let disposition = self.world.apply_move(msg).expect("move payload");
                if disposition == Disposition::Discarded(DiscardReason::UnknownConstruct) {
                    let id = msg.payload.construct_id().expect("system payload").clone();
                    self.parked.entry(id).or_default().push(msg.clone());
                }
                disposition
            }
            _ => unreachable!("not a system payload"),
        }
    }

    fn apply_parked(&mut self, id: &ConstructId) {
        let Some(mut pending) = self.parked.remove(id) else {
            return;
        };
        pending.sort_by_key(|m| m.seq);
        for msg in pending {
            let _ = self.world.apply_move(&msg);
        }
    }

    fn handle_chat(&mut self, msg: &MessageEnvelope) -> Disposition {
        let Payload::Chat { username, text } = &msg.payload else {
            unreachable!("not a chat payload");
        };
        let entry = ChatEntry {
            at: self.chat_time(),
            display_name: format!("{}-{}", msg.sender.short_suffix(), username),
            text: text.clone(),
        };
        self.events.push(EngineEvent::ChatLogged {
            display_name: entry.display_name.clone(),
            text: entry.text.clone(),
        });
        self.chat.push(entry);
        Disposition::Applied
    }
}
