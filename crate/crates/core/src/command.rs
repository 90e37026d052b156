//! Text commands understood by the interactive peer and by scenario scripts.
//!
//! Each command maps to one engine operation. [`execute`] runs it and returns
//! the lines to print; engine events are rendered separately with
//! [`describe_event`] so that asynchronous results show up in order.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chat::{ChatError, CHAT_FILE};
use crate::engine::{EngineError, EngineEvent, LocalAction, PeerEngine, SessionEnd};
use crate::game::{AnswerOutcome, GameError};
use crate::questions::Question;
use crate::wire::{ConstructId, Decimal, Vec3, WireError};
use crate::world::{self, StatusScores, WorldError};

pub const STATUS_FILE: &str = "w_status.xml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerChoice {
    Index(usize),
    /// Scenario scripts only: whichever choice is right.
    Correct,
    /// Scenario scripts only: any wrong choice.
    Wrong,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Discover,
    Teams,
    Join(String),
    Leave,
    Build(String),
    Answer(AnswerChoice),
    Retry,
    Abandon,
    Move {
        id: ConstructId,
        to: Vec3,
    },
    Rotate {
        id: ConstructId,
        axis: Vec3,
        degrees: Decimal,
    },
    Chat(String),
    Nick(String),
    Status,
    World,
    Save,
    Quit,
}

/// Command names with their usage, in help order.
pub const COMMANDS: &[(&str, &str)] = &[
    ("discover", "discover"),
    ("teams", "teams"),
    ("join", "join <team>"),
    ("leave", "leave"),
    ("build", "build <type>"),
    ("answer", "answer <index>"),
    ("retry", "retry"),
    ("abandon", "abandon"),
    ("move", "move <id> <x> <y> <z>"),
    ("rotate", "rotate <id> <ax> <ay> <az> <degrees>"),
    ("chat", "chat <text>"),
    ("nick", "nick <name>"),
    ("status", "status"),
    ("world", "world"),
    ("save", "save"),
    ("quit", "quit"),
];

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("usage: {0}")]
    Usage(&'static str),
    #[error("unknown command {0:?}")]
    Unknown(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    World(#[from] WorldError),
}

fn usage(name: &str) -> CommandError {
    let (_, u) = COMMANDS
        .iter()
        .find(|(n, _)| *n == name)
        .expect("known command");
    CommandError::Usage(u)
}

fn number(s: &str) -> Result<Decimal, CommandError> {
    let x: f64 = s
        .parse()
        .map_err(|_| CommandError::Invalid(format!("not a number: {s:?}")))?;
    Decimal::from_f64(x).map_err(|e: WireError| CommandError::Invalid(format!("{s}: {e}")))
}

fn construct_id(s: &str) -> Result<ConstructId, CommandError> {
    s.parse()
        .map_err(|e: WireError| CommandError::Invalid(e.to_string()))
}

impl Command {
    /// Parses one line. `oracle` enables `answer correct|wrong`.
    pub fn parse(line: &str, oracle: bool) -> Result<Option<Command>, CommandError> {
        let line = line.trim();
        if line.is_empty() {
            return Ok(None);
        }
        let (name, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let args: Vec<&str> = rest.split_whitespace().collect();
        let no_args = |cmd: Command| {
            if args.is_empty() {
                Ok(cmd)
            } else {
                Err(usage(name))
            }
        };
        let one_arg = || match args.as_slice() {
            [a] => Ok(a.to_string()),
            _ => Err(usage(name)),
        };
        let cmd = match name {
            "discover" => no_args(Command::Discover)?,
            "teams" => no_args(Command::Teams)?,
            "join" => Command::Join(one_arg()?),
            "leave" => no_args(Command::Leave)?,
            "build" => Command::Build(one_arg()?),
            "answer" => Command::Answer(match one_arg()?.as_str() {
                "correct" if oracle => AnswerChoice::Correct,
                "wrong" if oracle => AnswerChoice::Wrong,
                n => AnswerChoice::Index(n.parse().map_err(|_| usage(name))?),
            }),
            "retry" => no_args(Command::Retry)?,
            "abandon" => no_args(Command::Abandon)?,
            "move" => match args.as_slice() {
                [id, x, y, z] => Command::Move {
                    id: construct_id(id)?,
                    to: Vec3::new(number(x)?, number(y)?, number(z)?),
                },
                _ => return Err(usage(name)),
            },
            "rotate" => match args.as_slice() {
                [id, ax, ay, az, deg] => Command::Rotate {
                    id: construct_id(id)?,
                    axis: Vec3::new(number(ax)?, number(ay)?, number(az)?),
                    degrees: number(deg)?,
                },
                _ => return Err(usage(name)),
            },
            "chat" if !rest.is_empty() => Command::Chat(rest.to_owned()),
            "chat" => return Err(usage(name)),
            "nick" if !rest.is_empty() => Command::Nick(rest.to_owned()),
            "nick" => return Err(usage(name)),
            "status" => no_args(Command::Status)?,
            "world" => no_args(Command::World)?,
            "save" => no_args(Command::Save)?,
            "quit" => no_args(Command::Quit)?,
            other => return Err(CommandError::Unknown(other.to_owned())),
        };
        Ok(Some(cmd))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Discover => "discover",
            Command::Teams => "teams",
            Command::Join(_) => "join",
            Command::Leave => "leave",
            Command::Build(_) => "build",
            Command::Answer(_) => "answer",
            Command::Retry => "retry",
            Command::Abandon => "abandon",
            Command::Move { .. } => "move",
            Command::Rotate { .. } => "rotate",
            Command::Chat(_) => "chat",
            Command::Nick(_) => "nick",
            Command::Status => "status",
            Command::World => "world",
            Command::Save => "save",
            Command::Quit => "quit",
        }
    }
}

/// Where `save` writes its files.
#[derive(Debug, Clone)]
pub struct SaveTarget {
    pub models_dir: PathBuf,
}

impl SaveTarget {
    pub fn new(models_dir: impl Into<PathBuf>) -> Self {
        SaveTarget {
            models_dir: models_dir.into(),
        }
    }
}

/// Renders a question with numbered choices.
pub fn format_question(q: &Question) -> Vec<String> {
    let mut lines = vec![format!("question {} (level {}): {}", q.id, q.level, q.text)];
    lines.extend(
        q.choices
            .iter()
            .enumerate()
            .map(|(i, c)| format!("  [{i}] {c}")),
    );
    lines
}

/// Writes the status file for the engine's current world.
pub fn save_world(engine: &PeerEngine, dir: &Path) -> Result<usize, WorldError> {
    let scores = engine.scores();
    world::save_status(
        engine.world(),
        StatusScores {
            points: scores.personal,
            contribution: scores.contribution,
        },
        engine.level(),
        &dir.join(STATUS_FILE),
    )
}

/// Runs one command against an engine and returns the output lines.
pub fn execute(
    engine: &mut PeerEngine,
    cmd: &Command,
    save: Option<&SaveTarget>,
) -> Result<Vec<String>, CommandError> {
    let mut out = Vec::new();
    match cmd {
        Command::Discover => {
            engine.start_discovery()?;
            out.push("discovering teams...".into());
        }
        Command::Teams => {
            let teams: Vec<&str> = engine.known_teams().iter().map(String::as_str).collect();
            out.push(if teams.is_empty() {
                "no teams found".into()
            } else {
                format!("teams: {}", teams.join(", "))
            });
        }
        Command::Join(team) => {
            engine.join_team(team)?;
            out.push(format!("joining {team}"));
        }
        Command::Leave => {
            engine.leave()?;
            out.push("left the team".into());
        }
        Command::Build(ty) => {
            let session = engine.request_build(ty)?;
            out.extend(format_question(&session.question));
        }
        Command::Answer(choice) => {
            let session = engine.session().ok_or(GameError::SessionClosed)?;
            let q = &session.question;
            let index = match *choice {
                AnswerChoice::Index(i) => i,
                AnswerChoice::Correct => q.correct_index,
                AnswerChoice::Wrong => (q.correct_index + 1) % q.choices.len(),
            };
            match engine.answer(index)? {
                AnswerOutcome::Correct(id) => out.push(format!("correct: building {id}")),
                AnswerOutcome::Wrong(Some(next)) => {
                    out.push("wrong answer; try this one".into());
                    out.extend(format_question(&next));
                }
                AnswerOutcome::Wrong(None) => {
                    out.push("wrong answer; no questions left, build abandoned".into())
                }
            }
        }
        Command::Retry => {
            let q = engine.retry_question()?.clone();
            out.extend(format_question(&q));
        }
        Command::Abandon => {
            engine.abandon_build()?;
            out.push("build abandoned".into());
        }
        Command::Move { id, to } => {
            engine.send_local(LocalAction::Translate {
                id: id.clone(),
                translation: *to,
            })?;
        }
        Command::Rotate { id, axis, degrees } => {
            engine.send_local(LocalAction::Rotate {
                id: id.clone(),
                axis: *axis,
                angle: *degrees,
            })?;
        }
        Command::Chat(text) => engine.send_chat(text)?,
        Command::Nick(name) => {
            engine.set_username(name)?;
            out.push(format!("username set to {name}"));
        }
        Command::Status => {
            out.push(format!(
                "{} level={} phase={}",
                engine.status(),
                engine.level(),
                engine.phase().name()
            ));
        }
        Command::World => {
            out.extend(engine.world().world_section().lines().map(str::to_owned));
        }
        Command::Save => {
            let target = save.ok_or_else(|| CommandError::Invalid("no save directory".into()))?;
            save_world(engine, &target.models_dir)?;
            engine.flush_log(&target.models_dir.join(CHAT_FILE))?;
            out.push(format!("saved to {}", target.models_dir.display()));
        }
        Command::Quit => {
            if engine.phase().in_team() && engine.group().is_some() {
                // Single-player peers have nobody to tell.
                let _ = engine.leave();
            }
            out.push("bye".into());
        }
    }
    Ok(out)
}

/// One printable line per event worth showing to a player.
pub fn describe_event(event: &EngineEvent) -> Option<String> {
    Some(match event {
        EngineEvent::PhaseChanged { from, to } => {
            format!("phase: {} -> {}", from.name(), to.name())
        }
        EngineEvent::TeamPanel { teams } if teams.is_empty() => "no teams found".into(),
        EngineEvent::TeamPanel { teams } => format!("teams: {}", teams.join(", ")),
        EngineEvent::NetworkUnavailable => "network unavailable".into(),
        EngineEvent::WorldReplayed { frames } => format!("replayed {frames} constructs"),
        EngineEvent::ChatLogged { display_name, text } => format!("[{display_name}] {text}"),
        EngineEvent::SessionClosed {
            construct_type,
            end: SessionEnd::Abandoned,
        } => {
            format!("build of {construct_type} closed")
        }
        _ => return None,
    })
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        for (name, usage) in COMMANDS {
            let sample = usage
                .replace("<team>", "alpha")
                .replace("<type>", "house")
                .replace("<index>", "0")
                .replace("<id>", "P1#1")
                .replace("<x> <y> <z>", "1 2 3")
                .replace("<ax> <ay> <az> <degrees>", "0 1 0 90")
                .replace("<text>", "hello there")
                .replace("<name>", "ann");
            let cmd = Command::parse(&sample, false).unwrap().unwrap();
            assert_eq!(cmd.name(), *name);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Command::parse("fly", false),
            Err(CommandError::Unknown(_))
        ));
        assert!(matches!(
            Command::parse("join", false),
            Err(CommandError::Usage(_))
        ));
        assert!(matches!(
            Command::parse("join a b", false),
            Err(CommandError::Usage(_))
        ));
        assert!(Command::parse("move P1#1 1 2", false).is_err());
        assert!(Command::parse("move nope 1 2 3", false).is_err());
        assert!(Command::parse("move P1#1 1 2 nan", false).is_err());
        assert!(Command::parse("answer correct", false).is_err());
        assert_eq!(
            Command::parse("answer correct", true).unwrap(),
            Some(Command::Answer(AnswerChoice::Correct))
        );
        assert_eq!(Command::parse("   ", false).unwrap(), None);
    }

    #[test]
    fn chat_keeps_inner_spacing() {
        assert_eq!(
            Command::parse("chat  hi  there ", false).unwrap(),
            Some(Command::Chat("hi  there".into()))
        );
    }
}
