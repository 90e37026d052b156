//! Team chat, the chat log file and the status snapshot.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::engine::{Mode, PeerEngine};
use crate::wire::Payload;
use crate::xml::{self, escape_attr, escape_text, schema, XmlError};

pub const CHAT_FILE: &str = "chat.xml";

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("not joined to a team")]
    NotJoined,
    #[error("set a username before chatting")]
    EmptyUsername,
    #[error("invalid username {0:?}")]
    InvalidName(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatEntry {
    pub at: u64,
    pub display_name: String,
    pub text: String,
}

/// Entries in delivery order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChatLog {
    entries: Vec<ChatEntry>,
}

impl ChatLog {
    pub fn push(&mut self, entry: ChatEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[ChatEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn render_chat(log: &ChatLog) -> String {
    if log.is_empty() {
        return "<chat/>\n".to_owned();
    }
    let mut out = String::from("<chat>\n");
    for e in &log.entries {
        let _ = writeln!(
            out,
            "  <entry at=\"{}\" from=\"{}\">{}</entry>",
            e.at,
            escape_attr(&e.display_name),
            escape_text(&e.text)
        );
    }
    out.push_str("</chat>\n");
    out
}

pub fn parse_chat(input: &str) -> Result<ChatLog, XmlError> {
    let root = xml::parse_document(input)?;
    root.expect_name("chat")?;
    root.only_attrs(&[])?;
    root.no_text()?;
    let mut log = ChatLog::default();
    for el in &root.children {
        el.expect_name("entry")?;
        el.only_attrs(&["at", "from"])?;
        if let Some(c) = el.children.first() {
            return Err(schema(format!("unexpected <{}> inside <entry>", c.name)));
        }
        log.push(ChatEntry {
            at: el.parse_attr("at")?,
            display_name: el.attr("from")?.to_owned(),
            text: el.text.clone(),
        });
    }
    Ok(log)
}

pub fn validate_username(name: &str) -> Result<(), ChatError> {
    if name.is_empty() || name.contains(['|', ';', '\n', '\r']) {
        return Err(ChatError::InvalidName(name.to_owned()));
    }
    Ok(())
}

/// What the information panel shows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusSnapshot {
    pub mode: Mode,
    pub personal: u64,
    pub contribution: u64,
    pub team_total: u64,
    pub group: Option<String>,
    pub members: usize,
}

impl std::fmt::Display for StatusSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = match self.mode {
            Mode::Single => "single",
            Mode::Multi => "multi",
        };
        write!(
            f,
            "mode={mode} personal={} contribution={} teamTotal={} group={} members={}",
            self.personal,
            self.contribution,
            self.team_total,
            self.group.as_deref().unwrap_or("-"),
            self.members
        )
    }
}

impl PeerEngine {
    pub fn username(&self) -> &str {
        &self.username
    }

    pub fn set_username(&mut self, name: &str) -> Result<(), ChatError> {
        validate_username(name)?;
        self.username = name.to_owned();
        Ok(())
    }

    pub fn chat_log(&self) -> &ChatLog {
        &self.chat
    }

    /// Broadcasts a chat line; it reaches our own log through loopback.
    pub fn send_chat(&mut self, text: &str) -> Result<(), ChatError> {
        if !self.phase().in_team() {
            return Err(ChatError::NotJoined);
        }
        if self.username.is_empty() {
            return Err(ChatError::EmptyUsername);
        }
        let group = self.group().unwrap_or_default().to_owned();
        let username = self.username.clone();
        self.broadcast(
            group,
            Payload::Chat {
                username,
                text: text.to_owned(),
            },
        );
        Ok(())
    }

    pub fn flush_log(&self, path: &Path) -> Result<(), ChatError> {
        fs::write(path, render_chat(&self.chat))?;
        Ok(())
    }

    pub fn status(&self) -> StatusSnapshot {
        let scores = self.scores();
        StatusSnapshot {
            mode: self.mode(),
            personal: scores.personal,
            contribution: scores.contribution,
            team_total: scores.team_total,
            group: self.group().map(str::to_owned),
            members: self.members().len() + usize::from(self.group().is_some()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(at: u64, from: &str, text: &str) -> ChatEntry {
        ChatEntry {
            at,
            display_name: from.into(),
            text: text.into(),
        }
    }

    #[test]
    fn documented_layout() {
        let doc = r#"<chat><entry at="42" from="7-ann">hi</entry></chat>"#;
        let log = parse_chat(doc).unwrap();
        assert_eq!(log.entries(), &[entry(42, "7-ann", "hi")]);
        assert_eq!(
            render_chat(&log),
            "<chat>\n  <entry at=\"42\" from=\"7-ann\">hi</entry>\n</chat>\n"
        );
    }

    #[test]
    fn empty_log() {
        assert_eq!(render_chat(&ChatLog::default()), "<chat/>\n");
        assert!(parse_chat("<chat/>").unwrap().is_empty());
    }

    #[test]
    fn canonical_round_trip() {
        let mut log = ChatLog::default();
        log.push(entry(1, "P1-ann", "a <b> & \"c\"\nsecond line"));
        log.push(entry(9, "7-b&b", "  padded  "));
        let text = render_chat(&log);
        let back = parse_chat(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(render_chat(&back), text);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(parse_chat("<chat><entry from=\"x\">hi</entry></chat>").is_err());
        assert!(parse_chat("<chat><entry at=\"1\" from=\"x\"><b/></entry></chat>").is_err());
        assert!(parse_chat("<log/>").is_err());
    }

    #[test]
    fn username_policy() {
        assert!(validate_username("ann").is_ok());
        for bad in ["", "a;b", "a|b", "a\nb"] {
            assert!(matches!(
                validate_username(bad),
                Err(ChatError::InvalidName(_))
            ));
        }
    }
}
