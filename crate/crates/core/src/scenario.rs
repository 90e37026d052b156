//! Line-oriented scenario scripts run against a simulated cluster.
//!
//! ```text
//! # two peers build and converge
//! data ../data
//! spawn P1
//! spawn P2
//! cmd P1 discover
//! quiesce
//! cmd P1 join alpha
//! expect P1 phase Joined
//! ```
//!
//! Directives:
//!
//! * `data <dir>`: load `<dir>/models` and `<dir>/questions` (relative to the script)
//! * `config avail-timeout|quiet-window <n>`: engine timers for peers spawned later
//! * `set-bus duplicate|drop <p>` or `set-bus reorder <n>`
//! * `spawn <peer> [single]`
//! * `tick <n>`, `quiesce [max-ticks]`
//! * `cmd <peer> <command>`: a peer command; failure fails the scenario
//! * `try <peer> <command>`: like `cmd` but the error is only remembered
//! * `expect <peer> <assertion>`
//!
//! After the last directive every peer's event log goes through the build gate
//! audit.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::command::{self, Command};
use crate::engine::{DiscoveryStatus, EngineConfig, EngineEvent, PeerEngine};
use crate::game::{audit_build_gate, GameData};
use crate::sim::Cluster;
use crate::transport::SimBusConfig;
use crate::wire::{ConstructId, Decimal, MessageKind};
use crate::world::Disposition;

pub const DEFAULT_QUIESCE_LIMIT: u64 = 100_000;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ge,
    Le,
}

impl Cmp {
    fn parse(s: &str) -> Option<Cmp> {
        match s {
            "=" | "==" => Some(Cmp::Eq),
            ">=" => Some(Cmp::Ge),
            "<=" => Some(Cmp::Le),
            _ => None,
        }
    }

    fn holds(self, got: u64, want: u64) -> bool {
        match self {
            Cmp::Eq => got == want,
            Cmp::Ge => got >= want,
            Cmp::Le => got <= want,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Score {
    Personal,
    Contribution,
    Total,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assertion {
    Phase(String),
    Teams(Vec<String>),
    Discovery(String),
    Members(usize),
    Constructs(usize),
    Has(ConstructId),
    Lacks(ConstructId),
    At {
        id: ConstructId,
        x: Decimal,
        y: Decimal,
        z: Decimal,
    },
    SameWorld(String),
    WorldHash(String),
    Disposition {
        disposition: Disposition,
        cmp: Cmp,
        n: u64,
    },
    Delivered {
        kind: MessageKind,
        disposition: Disposition,
        cmp: Cmp,
        n: u64,
    },
    Sent {
        kind: MessageKind,
        cmp: Cmp,
        n: u64,
    },
    Score(Score, u64),
    Level(u32),
    ChatCount(usize),
    ChatHas {
        from: String,
        text: String,
    },
    Event {
        name: String,
        cmp: Cmp,
        n: u64,
    },
    Error(String),
    NoError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BusParam {
    Duplicate(f64),
    Drop(f64),
    Reorder(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Data(PathBuf),
    Config {
        name: String,
        value: u64,
    },
    SetBus(BusParam),
    Spawn {
        peer: String,
        single: bool,
    },
    Tick(u64),
    Quiesce(u64),
    Cmd {
        peer: String,
        command: Command,
        must_succeed: bool,
    },
    Expect {
        peer: String,
        assertion: Assertion,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub number: usize,
    pub text: String,
    pub directive: Directive,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Script {
    pub lines: Vec<Line>,
}

const EVENT_NAMES: &[&str] = &[
    "team-panel",
    "network-unavailable",
    "world-replayed",
    "session-opened",
    "session-closed",
    "chat-logged",
];

fn event_name(e: &EngineEvent) -> Option<&'static str> {
    Some(match e {
        EngineEvent::TeamPanel { .. } => "team-panel",
        EngineEvent::NetworkUnavailable => "network-unavailable",
        EngineEvent::WorldReplayed { .. } => "world-replayed",
        EngineEvent::SessionOpened { .. } => "session-opened",
        EngineEvent::SessionClosed { .. } => "session-closed",
        EngineEvent::ChatLogged { .. } => "chat-logged",
        _ => return None,
    })
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T, ScriptError> {
    s.parse()
        .map_err(|_| err(line, format!("invalid {what} {s:?}")))
}

fn parse_kind(line: usize, s: &str) -> Result<MessageKind, ScriptError> {
    MessageKind::ALL
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| err(line, format!("unknown message kind {s:?}")))
}

fn parse_disposition(line: usize, s: &str) -> Result<Disposition, ScriptError> {
    Disposition::from_name(s).ok_or_else(|| err(line, format!("unknown disposition {s:?}")))
}

fn parse_cmp(line: usize, s: &str) -> Result<Cmp, ScriptError> {
    Cmp::parse(s).ok_or_else(|| err(line, format!("expected =, >= or <=, found {s:?}")))
}

fn parse_id(line: usize, s: &str) -> Result<ConstructId, ScriptError> {
    s.parse().map_err(|e| err(line, format!("{e}")))
}

fn parse_decimal(line: usize, s: &str) -> Result<Decimal, ScriptError> {
    Decimal::parse_lenient(s).ok_or_else(|| err(line, format!("invalid number {s:?}")))
}

fn parse_assertion(line: usize, rest: &str) -> Result<Assertion, ScriptError> {
    let words: Vec<&str> = rest.split_whitespace().collect();
    let bad = || err(line, format!("malformed assertion {rest:?}"));
    let Some((&name, args)) = words.split_first() else {
        return Err(bad());
    };
    Ok(match (name, args) {
        ("phase", [p]) => Assertion::Phase(p.to_string()),
        ("teams", ["-"]) => Assertion::Teams(Vec::new()),
        ("teams", [list]) => Assertion::Teams(list.split(',').map(str::to_owned).collect()),
        ("discovery", [s]) if ["idle", "waiting", "complete", "unavailable"].contains(s) => {
            Assertion::Discovery(s.to_string())
        }
        ("members", [n]) => Assertion::Members(parse_num(line, n, "count")?),
        ("constructs", [n]) => Assertion::Constructs(parse_num(line, n, "count")?),
        ("has", [id]) => Assertion::Has(parse_id(line, id)?),
        ("lacks", [id]) => Assertion::Lacks(parse_id(line, id)?),
        ("at", [id, x, y, z]) => Assertion::At {
            id: parse_id(line, id)?,
            x: parse_decimal(line, x)?,
            y: parse_decimal(line, y)?,
            z: parse_decimal(line, z)?,
        },
        ("same-world", [peer]) => Assertion::SameWorld(peer.to_string()),
        ("world-hash", [h]) => Assertion::WorldHash(h.to_string()),
        ("disposition", [d, cmp, n]) => Assertion::Disposition {
            disposition: parse_disposition(line, d)?,
            cmp: parse_cmp(line, cmp)?,
            n: parse_num(line, n, "count")?,
        },
        ("delivered", [k, d, cmp, n]) => Assertion::Delivered {
            kind: parse_kind(line, k)?,
            disposition: parse_disposition(line, d)?,
            cmp: parse_cmp(line, cmp)?,
            n: parse_num(line, n, "count")?,
        },
        ("sent", [k, cmp, n]) => Assertion::Sent {
            kind: parse_kind(line, k)?,
            cmp: parse_cmp(line, cmp)?,
            n: parse_num(line, n, "count")?,
        },
        ("score", [which, n]) => {
            let which = match *which {
                "personal" => Score::Personal,
                "contribution" => Score::Contribution,
                "total" => Score::Total,
                _ => return Err(bad()),
            };
            Assertion::Score(which, parse_num(line, n, "score")?)
        }
        ("level", [n]) => Assertion::Level(parse_num(line, n, "level")?),
        ("chat-count", [n]) => Assertion::ChatCount(parse_num(line, n, "count")?),
        ("chat-has", [from, ..]) if args.len() > 1 => Assertion::ChatHas {
            from: from.to_string(),
            text: args[1..].join(" "),
        },
        ("event", [e, cmp, n]) if EVENT_NAMES.contains(e) => Assertion::Event {
            name: e.to_string(),
            cmp: parse_cmp(line, cmp)?,
            n: parse_num(line, n, "count")?,
        },
        ("error", [_, ..]) => Assertion::Error(args.join(" ")),
        ("no-error", []) => Assertion::NoError,
        _ => return Err(bad()),
    })
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim();
    match s.split_once(char::is_whitespace) {
        Some((a, b)) => (a, b.trim()),
        None => (s, ""),
    }
}

/// Parses a script and checks that every peer is spawned before use.
pub fn parse_script(input: &str) -> Result<Script, ScriptError> {
    let mut script = Script::default();
    let mut spawned: BTreeSet<String> = BTreeSet::new();
    for (i, raw) in input.lines().enumerate() {
        let number = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (word, rest) = split_word(text);
        let args: Vec<&str> = rest.split_whitespace().collect();
        let peer_ref = |peer: &str| -> Result<String, ScriptError> {
            if spawned.contains(peer) {
                Ok(peer.to_owned())
            } else {
                Err(err(number, format!("peer {peer:?} has not been spawned")))
            }
        };
        let directive = match (word, args.as_slice()) {
            ("data", [dir]) => {
                if !spawned.is_empty() {
                    return Err(err(number, "data must come before the first spawn"));
                }
                Directive::Data(PathBuf::from(dir))
            }
            ("config", [name, value]) if ["avail-timeout", "quiet-window"].contains(name) => {
                Directive::Config {
                    name: name.to_string(),
                    value: parse_num(number, value, "value")?,
                }
            }
            ("set-bus", ["duplicate", p]) => {
                Directive::SetBus(BusParam::Duplicate(parse_num(number, p, "probability")?))
            }
            ("set-bus", ["drop", p]) => {
                Directive::SetBus(BusParam::Drop(parse_num(number, p, "probability")?))
            }
            ("set-bus", ["reorder", n]) => {
                Directive::SetBus(BusParam::Reorder(parse_num(number, n, "window")?))
            }
            ("spawn", [peer, flags @ ..]) => {
                let single = match flags {
                    [] => false,
                    ["single"] => true,
                    _ => return Err(err(number, "usage: spawn <peer> [single]")),
                };
                if !spawned.insert(peer.to_string()) {
                    return Err(err(number, format!("peer {peer:?} spawned twice")));
                }
                Directive::Spawn {
                    peer: peer.to_string(),
                    single,
                }
            }
            ("tick", [n]) => Directive::Tick(parse_num(number, n, "tick count")?),
            ("quiesce", []) => Directive::Quiesce(DEFAULT_QUIESCE_LIMIT),
            ("quiesce", [n]) => Directive::Quiesce(parse_num(number, n, "tick limit")?),
            ("cmd" | "try", [peer, _, ..]) => {
                let peer = peer_ref(peer)?;
                let (_, line) = split_word(rest);
                let command = Command::parse(line, true)
                    .map_err(|e| err(number, e.to_string()))?
                    .expect("non-empty");
                Directive::Cmd {
                    peer,
                    command,
                    must_succeed: word == "cmd",
                }
            }
            ("expect", [peer, _, ..]) => {
                let peer = peer_ref(peer)?;
                let (_, assertion) = split_word(rest);
                let assertion = parse_assertion(number, assertion)?;
                if let Assertion::SameWorld(other) = &assertion {
                    peer_ref(other)?;
                }
                Directive::Expect { peer, assertion }
            }
            _ => return Err(err(number, format!("unrecognized directive {text:?}"))),
        };
        script.lines.push(Line {
            number,
            text: text.to_owned(),
            directive,
        });
    }
    Ok(script)
}

/// Outcome of a run. Identical (script, seed) pairs give identical reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub lines: Vec<String>,
    pub passed: usize,
    pub failed: usize,
}

impl Report {
    pub fn success(&self) -> bool {
        self.failed == 0
    }

    fn record(&mut self, what: String, result: Result<(), String>) {
        match result {
            Ok(()) => {
                self.passed += 1;
                self.lines.push(format!("{what}: pass"));
            }
            Err(why) => {
                self.failed += 1;
                self.lines.push(format!("{what}: FAIL ({why})"));
            }
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        writeln!(f, "summary: {} passed, {} failed", self.passed, self.failed)
    }
}

struct Runner {
    base: PathBuf,
    seed: u64,
    game: Arc<GameData>,
    bus: SimBusConfig,
    engine: EngineConfig,
    cluster: Option<Cluster>,
    last_error: Vec<(String, Option<String>)>,
}

impl Runner {
    fn cluster(&mut self) -> Result<&mut Cluster, String> {
        if self.cluster.is_none() {
            let cluster = Cluster::new(self.bus, self.game.clone(), self.engine)
                .map_err(|e| e.to_string())?;
            self.cluster = Some(cluster);
        }
        Ok(self.cluster.as_mut().expect("created"))
    }

    fn engine(&self, peer: &str) -> &PeerEngine {
        let c = self.cluster.as_ref().expect("peers exist");
        c.engine(c.index_of(peer).expect("checked at parse time"))
    }

    fn last_error_mut(&mut self, peer: &str) -> &mut Option<String> {
        let i = self
            .last_error
            .iter()
            .position(|(p, _)| p == peer)
            .expect("spawned");
        &mut self.last_error[i].1
    }

    fn check(&self, peer: &str, assertion: &Assertion) -> Result<(), String> {
        let engine = self.engine(peer);
        let expect_eq = |got: String, want: String| {
            if got == want {
                Ok(())
            } else {
                Err(format!("got {got}"))
            }
        };
        let expect_cmp = |got: u64, cmp: Cmp, want: u64| {
            if cmp.holds(got, want) {
                Ok(())
            } else {
                Err(format!("got {got}"))
            }
        };
        match assertion {
            Assertion::Phase(p) => expect_eq(engine.phase().name().into(), p.clone()),
            Assertion::Teams(teams) => {
                let got: Vec<String> = engine.known_teams().iter().cloned().collect();
                expect_eq(got.join(","), teams.join(","))
            }
            Assertion::Discovery(s) => {
                let got = match engine.discovery_status() {
                    DiscoveryStatus::Idle => "idle",
                    DiscoveryStatus::Waiting => "waiting",
                    DiscoveryStatus::Complete(_) => "complete",
                    DiscoveryStatus::Unavailable => "unavailable",
                };
                expect_eq(got.into(), s.clone())
            }
            Assertion::Members(n) => expect_eq(engine.members().len().to_string(), n.to_string()),
            Assertion::Constructs(n) => expect_eq(engine.world().len().to_string(), n.to_string()),
            Assertion::Has(id) => engine
                .world()
                .get(id)
                .map(|_| ())
                .ok_or_else(|| "absent".to_owned()),
            Assertion::Lacks(id) => match engine.world().get(id) {
                Some(_) => Err("present".into()),
                None => Ok(()),
            },
            Assertion::At { id, x, y, z } => {
                let c = engine.world().get(id).ok_or("absent")?;
                let t = c.transform.translation;
                expect_eq(format!("{} {} {}", t.x, t.y, t.z), format!("{x} {y} {z}"))
            }
            Assertion::SameWorld(other) => {
                let mine = engine.world().world_section();
                let theirs = self.engine(other).world().world_section();
                if mine == theirs {
                    Ok(())
                } else {
                    Err(format!(
                        "{} constructs vs {} in {other}",
                        engine.world().len(),
                        self.engine(other).world().len()
                    ))
                }
            }
            Assertion::WorldHash(h) => expect_eq(engine.world().dump_hash(), h.clone()),
            Assertion::Disposition {
                disposition,
                cmp,
                n,
            } => expect_cmp(engine.disposition_count(*disposition), *cmp, *n),
            Assertion::Delivered {
                kind,
                disposition,
                cmp,
                n,
            } => {
                let got = engine
                    .events()
                    .iter()
                    .filter(|e| {
                        matches!(e, EngineEvent::Delivered { kind: k, disposition: d, .. }
                            if k == kind && d == disposition)
                    })
                    .count();
                expect_cmp(got as u64, *cmp, *n)
            }
            Assertion::Sent { kind, cmp, n } => {
                let got = engine
                    .events()
                    .iter()
                    .filter(|e| matches!(e, EngineEvent::FrameSent { kind: k, .. } if k == kind))
                    .count();
                expect_cmp(got as u64, *cmp, *n)
            }
            Assertion::Score(which, n) => {
                let s = engine.scores();
                let got = match which {
                    Score::Personal => s.personal,
                    Score::Contribution => s.contribution,
                    Score::Total => s.team_total,
                };
                expect_eq(got.to_string(), n.to_string())
            }
            Assertion::Level(n) => expect_eq(engine.level().to_string(), n.to_string()),
            Assertion::ChatCount(n) => {
                expect_eq(engine.chat_log().len().to_string(), n.to_string())
            }
            Assertion::ChatHas { from, text } => {
                if engine
                    .chat_log()
                    .entries()
                    .iter()
                    .any(|e| e.display_name == *from && e.text == *text)
                {
                    Ok(())
                } else {
                    Err("no such entry".into())
                }
            }
            Assertion::Event { name, cmp, n } => {
                let got = engine
                    .events()
                    .iter()
                    .filter(|e| event_name(e) == Some(name))
                    .count();
                expect_cmp(got as u64, *cmp, *n)
            }
            Assertion::Error(want) => {
                let got = self
                    .last_error
                    .iter()
                    .find(|(p, _)| p == peer)
                    .and_then(|(_, e)| e.clone());
                match got {
                    Some(e) if e.contains(want.as_str()) => Ok(()),
                    Some(e) => Err(format!("got error {e:?}")),
                    None => Err("no error".into()),
                }
            }
            Assertion::NoError => {
                match self
                    .last_error
                    .iter()
                    .find(|(p, _)| p == peer)
                    .and_then(|(_, e)| e.clone())
                {
                    Some(e) => Err(format!("got error {e:?}")),
                    None => Ok(()),
                }
            }
        }
    }

    fn step(&mut self, line: &Line, report: &mut Report) -> Result<(), ScriptError> {
        let what = format!("line {}: {}", line.number, line.text);
        match &line.directive {
            Directive::Data(dir) => {
                let root = self.base.join(dir);
                let game = GameData::load(&root.join("models"), &root.join("questions"))
                    .map_err(|e| err(line.number, format!("loading {}: {e}", root.display())))?;
                self.game = Arc::new(game);
            }
            Directive::Config { name, value } => {
                match name.as_str() {
                    "avail-timeout" => self.engine.avail_timeout = *value,
                    _ => self.engine.quiet_window = *value,
                }
                if let Some(c) = self.cluster.as_mut() {
                    *c.engine_config_mut() = self.engine;
                }
            }
            Directive::SetBus(param) => {
                let mut cfg = match &self.cluster {
                    Some(c) => c.bus().config(),
                    None => self.bus,
                };
                match param {
                    BusParam::Duplicate(p) => cfg.duplicate_prob = *p,
                    BusParam::Drop(p) => cfg.drop_prob = *p,
                    BusParam::Reorder(n) => cfg.reorder_window = *n,
                }
                cfg.validate()
                    .map_err(|e| err(line.number, e.to_string()))?;
                self.bus = cfg;
                if let Some(c) = self.cluster.as_mut() {
                    c.bus_mut()
                        .reconfigure(cfg)
                        .map_err(|e| err(line.number, e.to_string()))?;
                }
            }
            Directive::Spawn { peer, single } => {
                let cluster = self.cluster().map_err(|e| err(line.number, e))?;
                let spawned = if *single {
                    cluster.spawn_single(peer)
                } else {
                    cluster.spawn(peer)
                };
                spawned.map_err(|e| err(line.number, e.to_string()))?;
                self.last_error.push((peer.clone(), None));
            }
            Directive::Tick(n) => {
                if let Some(c) = self.cluster.as_mut() {
                    c.run_ticks(*n)
                        .map_err(|e| err(line.number, e.to_string()))?;
                }
            }
            Directive::Quiesce(max) => {
                if let Some(c) = self.cluster.as_mut() {
                    if let Err(e) = c.run_until_quiet(*max) {
                        report.record(what, Err(e.to_string()));
                    }
                }
            }
            Directive::Cmd {
                peer,
                command,
                must_succeed,
            } => {
                let cluster = self.cluster.as_mut().expect("peer spawned");
                let index = cluster.index_of(peer).expect("checked at parse time");
                let result = command::execute(cluster.engine_mut(index), command, None);
                let error = result.err().map(|e| e.to_string());
                if *must_succeed {
                    if let Some(e) = &error {
                        report.record(what, Err(e.clone()));
                    }
                }
                *self.last_error_mut(peer) = error;
            }
            Directive::Expect { peer, assertion } => {
                let result = self.check(peer, assertion);
                let what = match (assertion, &result) {
                    (Assertion::SameWorld(_), Ok(())) => {
                        let hash = self.engine(peer).world().dump_hash();
                        format!("{what} (world-hash {})", &hash[..16])
                    }
                    _ => what,
                };
                report.record(what, result);
            }
        }
        Ok(())
    }
}

/// Runs a parsed script. `base` resolves relative `data` paths.
pub fn run_script(script: &Script, seed: u64, base: &Path) -> Result<Report, ScriptError> {
    let mut runner = Runner {
        base: base.to_owned(),
        seed,
        game: Arc::new(GameData::default()),
        bus: SimBusConfig::faithful(seed),
        engine: EngineConfig {
            seed,
            ..EngineConfig::default()
        },
        cluster: None,
        last_error: Vec::new(),
    };
    let mut report = Report::default();
    report.lines.push(format!("seed {}", runner.seed));
    for line in &script.lines {
        runner.step(line, &mut report)?;
    }
    if let Some(cluster) = &runner.cluster {
        for engine in cluster.engines() {
            let what = format!("gate audit {}", engine.address());
            match audit_build_gate(engine.events()) {
                Ok(n) => {
                    report.passed += 1;
                    report.lines.push(format!("{what}: pass ({n} creates)"));
                }
                Err(e) => report.record(what, Err(e.to_string())),
            }
        }
    }
    Ok(report)
}

/// Parses and runs a script file.
pub fn run_file(path: &Path, seed: u64) -> Result<Report, ScriptError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| err(0, format!("{}: {e}", path.display())))?;
    let script = parse_script(&text)?;
    run_script(&script, seed, path.parent().unwrap_or(Path::new(".")))
}
