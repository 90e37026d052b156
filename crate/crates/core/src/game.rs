//! Construction rules: the construct catalog, prerequisite checks, the
//! question-gated build flow, score accounting and level thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::engine::{EngineError, EngineEvent, Mode, PeerEngine, SessionEnd};
use crate::questions::{self, Question, QuestionBank, QuestionError};
use crate::wire::{ConstructId, MessageKind, Payload, Placement, Transform};
use crate::world::WorldState;
use crate::xml::{self, escape_attr, schema, Element, XmlError};

pub const PROPERTIES_FILE: &str = "properties.xml";
pub const LEVELS_FILE: &str = "levels.xml";

#[derive(Debug, Error)]
pub enum GameError {
    #[error("unknown construct type {0:?}")]
    UnknownType(String),
    #[error("prerequisites not met: {}", UnmetList(.0))]
    PrereqUnmet(Vec<Unmet>),
    #[error("a build session is already active")]
    SessionActive,
    #[error("no build session is awaiting an answer")]
    SessionClosed,
    #[error("no questions available at level {0}")]
    NoQuestionsAtLevel(u32),
    #[error("choice {index} is out of range for a question with {len} choices")]
    InvalidChoiceIndex { index: usize, len: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("invalid game data: {0}")]
    Schema(#[from] XmlError),
    #[error("question bank: {0}")]
    Questions(QuestionError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<QuestionError> for GameError {
    fn from(e: QuestionError) -> Self {
        match e {
            QuestionError::NoQuestionsAtLevel(l) => GameError::NoQuestionsAtLevel(l),
            QuestionError::InvalidChoiceIndex { index, len } => {
                GameError::InvalidChoiceIndex { index, len }
            }
            other => GameError::Questions(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub construct_type: String,
    /// Display areas; gameplay only uses the sum.
    pub points_by_area: BTreeMap<String, u64>,
    pub required_counts: BTreeMap<String, usize>,
    pub required_points: u64,
}

impl CatalogEntry {
    pub fn total_points(&self) -> u64 {
        self.points_by_area.values().sum()
    }

    fn is_free(&self) -> bool {
        self.required_counts.is_empty() && self.required_points == 0
    }
}

/// One failed requirement with what the world has and what it needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unmet {
    Count {
        construct_type: String,
        have: usize,
        need: usize,
    },
    Points {
        have: u64,
        need: u64,
    },
}

impl fmt::Display for Unmet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unmet::Count {
                construct_type,
                have,
                need,
            } => {
                write!(f, "{construct_type} {have}/{need}")
            }
            Unmet::Points { have, need } => write!(f, "points {have}/{need}"),
        }
    }
}

struct UnmetList<'a>(&'a [Unmet]);

impl fmt::Display for UnmetList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, u) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{u}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    entries: BTreeMap<String, CatalogEntry>,
}

impl Catalog {
    /// Validates references and that every type is buildable starting from an
    /// empty world.
    pub fn new(entries: impl IntoIterator<Item = CatalogEntry>) -> Result<Self, GameError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if map.contains_key(&e.construct_type) {
                return Err(GameError::Catalog(format!(
                    "duplicate type {:?}",
                    e.construct_type
                )));
            }
            map.insert(e.construct_type.clone(), e);
        }
        for e in map.values() {
            if let Some(missing) = e.required_counts.keys().find(|t| !map.contains_key(*t)) {
                return Err(GameError::Catalog(format!(
                    "{} requires unknown type {missing:?}",
                    e.construct_type
                )));
            }
        }
        let catalog = Catalog { entries: map };
        let stuck = catalog.unbuildable();
        if !stuck.is_empty() {
            return Err(GameError::Catalog(format!(
                "types can never be built from an empty world: {}",
                stuck.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(catalog)
    }

    /// Types that no sequence of builds can ever unlock.
    fn unbuildable(&self) -> BTreeSet<String> {
        let mut reachable: BTreeSet<&str> = BTreeSet::new();
        loop {
            // Any reachable type with points can be rebuilt to reach any threshold.
            let unbounded_points = reachable
                .iter()
                .any(|t| self.entries[*t].total_points() > 0);
            let before = reachable.len();
            for e in self.entries.values() {
                let types_ok = e
                    .required_counts
                    .keys()
                    .all(|t| reachable.contains(t.as_str()));
                let points_ok = e.required_points == 0 || unbounded_points;
                if types_ok && points_ok {
                    reachable.insert(&e.construct_type);
                }
            }
            if reachable.len() == before {
                break;
            }
        }
        self.entries
            .keys()
            .filter(|t| !reachable.contains(t.as_str()))
            .cloned()
            .collect()
    }

    pub fn get(&self, construct_type: &str) -> Option<&CatalogEntry> {
        self.entries.get(construct_type)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    /// Point yield of a type; types missing from the local catalog yield nothing.
    pub fn points_of(&self, construct_type: &str) -> u64 {
        self.get(construct_type)
            .map_or(0, CatalogEntry::total_points)
    }

    pub fn has_free_entry(&self) -> bool {
        self.entries.values().any(CatalogEntry::is_free)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelTable {
    thresholds: Vec<(u32, u64)>,
}

impl LevelTable {
    pub fn new(thresholds: Vec<(u32, u64)>) -> Result<Self, GameError> {
        let Some(first) = thresholds.first() else {
            return Err(GameError::Catalog("level table is empty".into()));
        };
        if *first != (1, 0) {
            return Err(GameError::Catalog("level 1 must start at 0 points".into()));
        }
        for (i, w) in thresholds.windows(2).enumerate() {
            if w[1].0 != w[0].0 + 1 {
                return Err(GameError::Catalog(format!(
                    "level index {} out of sequence",
                    w[1].0
                )));
            }
            if w[1].1 <= w[0].1 {
                return Err(GameError::Catalog(format!(
                    "level {} threshold must exceed level {}",
                    i + 2,
                    i + 1
                )));
            }
        }
        Ok(LevelTable { thresholds })
    }

    pub fn thresholds(&self) -> &[(u32, u64)] {
        &self.thresholds
    }

    /// Largest level whose threshold is at most `points`.
    pub fn level_for(&self, points: u64) -> u32 {
        self.thresholds
            .iter()
            .take_while(|(_, min)| *min <= points)
            .last()
            .map_or(1, |(level, _)| *level)
    }
}

impl Default for LevelTable {
    fn default() -> Self {
        LevelTable {
            thresholds: vec![(1, 0)],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreSheet {
    /// Points earned by every construct this peer has built, in any team.
    pub personal: u64,
    /// Points of constructs in the current world owned by this peer.
    pub contribution: u64,
    /// Points of every construct in the current world.
    pub team_total: u64,
}

impl ScoreSheet {
    /// Points that gate prerequisites and levels.
    pub fn relevant(&self, mode: Mode) -> u64 {
        match mode {
            Mode::Single => self.personal,
            Mode::Multi => self.team_total,
        }
    }
}

pub fn current_level(scores: &ScoreSheet, mode: Mode, table: &LevelTable) -> u32 {
    table.level_for(scores.relevant(mode))
}

/// Checks an entry's prerequisites against the whole shared world.
pub fn validate_prerequisites(
    world: &WorldState,
    scores: &ScoreSheet,
    mode: Mode,
    entry: &CatalogEntry,
) -> Result<(), Vec<Unmet>> {
    let mut unmet: Vec<Unmet> = entry
        .required_counts
        .iter()
        .filter_map(|(t, need)| {
            let have = world.count_of_type(t);
            (have < *need).then(|| Unmet::Count {
                construct_type: t.clone(),
                have,
                need: *need,
            })
        })
        .collect();
    let have = scores.relevant(mode);
    if have < entry.required_points {
        unmet.push(Unmet::Points {
            have,
            need: entry.required_points,
        });
    }
    if unmet.is_empty() {
        Ok(())
    } else {
        Err(unmet)
    }
}

/// Everything a peer needs to run the construction game.
#[derive(Debug, Clone, Default)]
pub struct GameData {
    pub catalog: Catalog,
    pub levels: LevelTable,
    pub bank: QuestionBank,
}

impl GameData {
    pub fn load(models_dir: &Path, questions_dir: &Path) -> Result<Self, GameError> {
        Ok(GameData {
            catalog: load_catalog(models_dir)?,
            levels: load_levels(&models_dir.join(LEVELS_FILE))?,
            bank: questions::load_bank(questions_dir)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingAnswer,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSession {
    pub requested_type: String,
    pub level: u32,
    pub question: Question,
    pub shown: BTreeSet<String>,
    pub state: SessionState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerOutcome {
    Correct(ConstructId),
    /// Wrong answer with the replacement question, if any is left.
    Wrong(Option<Question>),
}

impl PeerEngine {
    pub fn scores(&self) -> ScoreSheet {
        let catalog = &self.game.catalog;
        let mut sheet = ScoreSheet {
            personal: self.personal_points,
            ..ScoreSheet::default()
        };
        for c in self.world.constructs() {
            let points = catalog.points_of(&c.construct_type);
            sheet.team_total += points;
            if c.owner() == *self.address() {
                sheet.contribution += points;
            }
        }
        sheet
    }

    pub fn level(&self) -> u32 {
        current_level(&self.scores(), self.mode(), &self.game.levels)
    }

    pub fn session(&self) -> Option<&BuildSession> {
        self.session.as_ref()
    }

    fn check_prerequisites(&mut self, construct_type: &str) -> Result<(), GameError> {
        let game = self.game.clone();
        let entry = game
            .catalog
            .get(construct_type)
            .ok_or_else(|| GameError::UnknownType(construct_type.to_owned()))?;
        let result = validate_prerequisites(&self.world, &self.scores(), self.mode(), entry);
        self.events.push(EngineEvent::PrerequisitesChecked {
            construct_type: construct_type.to_owned(),
            passed: result.is_ok(),
        });
        result.map_err(GameError::PrereqUnmet)
    }

    /// Starts a question-gated build of `construct_type`.
    pub fn request_build(&mut self, construct_type: &str) -> Result<&BuildSession, GameError> {
        self.require_team("build")?;
        if self.session.is_some() {
            return Err(GameError::SessionActive);
        }
        self.check_prerequisites(construct_type)?;
        let level = self.level();
        let game = self.game.clone();
        let question =
            questions::select_question(&game.bank, level, &BTreeSet::new(), &mut self.rng)?.clone();
        self.events.push(EngineEvent::SessionOpened {
            construct_type: construct_type.to_owned(),
            question_id: question.id.clone(),
        });
        self.session = Some(BuildSession {
            requested_type: construct_type.to_owned(),
            level,
            shown: [question.id.clone()].into(),
            question: question.clone(),
            state: SessionState::AwaitingAnswer,
        });
        Ok(self.session.as_ref().expect("just opened"))
    }

    fn close_session(&mut self, end: SessionEnd) {
        if let Some(session) = self.session.take() {
            self.events.push(EngineEvent::SessionClosed {
                construct_type: session.requested_type,
                end,
            });
        }
    }

    /// Replaces the current question with an unseen one at the same level.
    pub fn retry_question(&mut self) -> Result<&Question, GameError> {
        let game = self.game.clone();
        let session = self.session.as_mut().ok_or(GameError::SessionClosed)?;
        let next =
            questions::select_question(&game.bank, session.level, &session.shown, &mut self.rng)?
                .clone();
        session.shown.insert(next.id.clone());
        session.question = next.clone();
        self.events.push(EngineEvent::QuestionShown {
            construct_type: session.requested_type.clone(),
            question_id: next.id.clone(),
        });
        Ok(&self.session.as_ref().expect("open").question)
    }

    pub fn abandon_build(&mut self) -> Result<(), GameError> {
        if self.session.is_none() {
            return Err(GameError::SessionClosed);
        }
        self.close_session(SessionEnd::Abandoned);
        Ok(())
    }

    /// Submits an answer for the open session.
    ///
    /// A correct answer re-checks prerequisites against the current world and
    /// broadcasts CREATE at the identity transform. A wrong answer offers an
    /// unseen replacement at the same level; when none is left the session is
    /// abandoned.
    pub fn answer(&mut self, choice: usize) -> Result<AnswerOutcome, GameError> {
        let session = self.session.as_ref().ok_or(GameError::SessionClosed)?;
        let correct = questions::check_answer(&session.question, choice)?;
        let construct_type = session.requested_type.clone();
        self.events.push(EngineEvent::AnswerChecked {
            construct_type: construct_type.clone(),
            question_id: session.question.id.clone(),
            correct,
        });
        if !correct {
            return match self.retry_question() {
                Ok(q) => Ok(AnswerOutcome::Wrong(Some(q.clone()))),
                Err(GameError::NoQuestionsAtLevel(_)) => {
                    self.close_session(SessionEnd::Abandoned);
                    Ok(AnswerOutcome::Wrong(None))
                }
                Err(e) => Err(e),
            };
        }
        if let Err(e) = self.check_prerequisites(&construct_type) {
            self.close_session(SessionEnd::Abandoned);
            return Err(e);
        }
        self.next_construct += 1;
        let id = ConstructId::new(self.address(), self.next_construct);
        let group = self.group().unwrap_or_default().to_owned();
        self.broadcast(
            group,
            Payload::Create(Placement {
                id: id.clone(),
                construct_type,
                transform: Transform::identity(),
            }),
        );
        self.close_session(SessionEnd::Completed);
        Ok(AnswerOutcome::Correct(id))
    }
}

/// A CREATE in an event log that was not earned.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {index}: {reason}")]
pub struct GateViolation {
    pub index: usize,
    pub reason: String,
}

/// Replays one engine's event log and checks that every CREATE it sent was
/// preceded by a passing prerequisite check and a correct answer in an open
/// session for the same construct type. Returns the number of CREATEs checked.
pub fn audit_build_gate(events: &[EngineEvent]) -> Result<usize, GateViolation> {
    let mut open: Option<String> = None;
    let mut prereq_ok: Option<String> = None;
    let mut answered: Option<String> = None;
    let mut checked = 0;
    for (index, event) in events.iter().enumerate() {
        match event {
            EngineEvent::SessionOpened { construct_type, .. } => {
                if open.is_some() {
                    return Err(GateViolation {
                        index,
                        reason: "second session opened".into(),
                    });
                }
                open = Some(construct_type.clone());
                answered = None;
            }
            EngineEvent::PrerequisitesChecked {
                construct_type,
                passed,
            } => {
                prereq_ok = passed.then(|| construct_type.clone());
            }
            EngineEvent::AnswerChecked {
                construct_type,
                correct,
                ..
            } => {
                if open.as_ref() != Some(construct_type) {
                    return Err(GateViolation {
                        index,
                        reason: "answer outside a session".into(),
                    });
                }
                answered = correct.then(|| construct_type.clone());
            }
            EngineEvent::SessionClosed { .. } => {
                open = None;
                answered = None;
                prereq_ok = None;
            }
            EngineEvent::FrameSent {
                kind: MessageKind::Create,
                construct_type,
                ..
            } => {
                let ty = construct_type.clone().unwrap_or_default();
                let reason = if open.as_ref() != Some(&ty) {
                    "CREATE without an open build session"
                } else if answered.as_ref() != Some(&ty) {
                    "CREATE without a correct answer"
                } else if prereq_ok.as_ref() != Some(&ty) {
                    "CREATE without a passing prerequisite check"
                } else {
                    checked += 1;
                    answered = None;
                    continue;
                };
                return Err(GateViolation {
                    index,
                    reason: format!("{reason} ({ty})"),
                });
            }
            _ => {}
        }
    }
    Ok(checked)
}

fn parse_entry(root: &Element) -> Result<CatalogEntry, XmlError> {
    root.expect_name("construct")?;
    root.only_attrs(&["type"])?;
    root.no_text()?;
    let construct_type = root.attr("type")?.to_owned();
    let mut entry = CatalogEntry {
        construct_type,
        points_by_area: BTreeMap::new(),
        required_counts: BTreeMap::new(),
        required_points: 0,
    };
    let mut saw_points_req = false;
    for el in &root.children {
        el.no_children()?;
        el.no_text()?;
        match el.name.as_str() {
            "points" => {
                el.only_attrs(&["area", "value"])?;
                let area = el.attr("area")?.to_owned();
                if entry
                    .points_by_area
                    .insert(area.clone(), el.parse_attr("value")?)
                    .is_some()
                {
                    return Err(schema(format!("duplicate points area {area:?}")));
                }
            }
            "requires" => {
                el.only_attrs(&["type", "count"])?;
                let ty = el.attr("type")?.to_owned();
                let count: usize = el.parse_attr("count")?;
                if count == 0 {
                    return Err(schema(format!("requirement on {ty:?} has count 0")));
                }
                if entry.required_counts.insert(ty.clone(), count).is_some() {
                    return Err(schema(format!("duplicate requirement on {ty:?}")));
                }
            }
            "requiresPoints" => {
                el.only_attrs(&["value"])?;
                if saw_points_req {
                    return Err(schema("duplicate <requiresPoints>"));
                }
                saw_points_req = true;
                entry.required_points = el.parse_attr("value")?;
            }
            other => return Err(schema(format!("unknown element <{other}> in properties"))),
        }
    }
    Ok(entry)
}

/// Parses one `properties.xml` document.
pub fn parse_properties(input: &str) -> Result<CatalogEntry, XmlError> {
    parse_entry(&xml::parse_document(input)?)
}

pub fn render_properties(entry: &CatalogEntry) -> String {
    let mut out = format!(
        "<construct type=\"{}\">\n",
        escape_attr(&entry.construct_type)
    );
    for (area, value) in &entry.points_by_area {
        let _ = writeln!(
            out,
            "  <points area=\"{}\" value=\"{value}\"/>",
            escape_attr(area)
        );
    }
    for (ty, count) in &entry.required_counts {
        let _ = writeln!(
            out,
            "  <requires type=\"{}\" count=\"{count}\"/>",
            escape_attr(ty)
        );
    }
    if entry.required_points > 0 {
        let _ = writeln!(
            out,
            "  <requiresPoints value=\"{}\"/>",
            entry.required_points
        );
    }
    out.push_str("</construct>\n");
    out
}

/// Reads `models/<type>/properties.xml` for every subdirectory that has one.
pub fn load_catalog(models_dir: &Path) -> Result<Catalog, GameError> {
    let mut dirs: Vec<_> = fs::read_dir(models_dir)?
        .filter_map(Result::ok)
        .filter(|e| e.path().join(PROPERTIES_FILE).is_file())
        .collect();
    dirs.sort_by_key(|e| e.file_name());
    let mut entries = Vec::new();
    for dir in dirs {
        let text = fs::read_to_string(dir.path().join(PROPERTIES_FILE))?;
        let entry = parse_properties(&text)?;
        if dir.file_name().to_str() != Some(entry.construct_type.as_str()) {
            return Err(GameError::Catalog(format!(
                "{}/{PROPERTIES_FILE} declares type {:?}",
                dir.file_name().to_string_lossy(),
                entry.construct_type
            )));
        }
        entries.push(entry);
    }
    Catalog::new(entries)
}

pub fn parse_levels(input: &str) -> Result<Vec<(u32, u64)>, XmlError> {
    let root = xml::parse_document(input)?;
    root.expect_name("levels")?;
    root.only_attrs(&[])?;
    root.no_text()?;
    root.children
        .iter()
        .map(|el| {
            el.expect_name("level")?;
            el.only_attrs(&["index", "minPoints"])?;
            el.no_children()?;
            el.no_text()?;
            Ok((el.parse_attr("index")?, el.parse_attr("minPoints")?))
        })
        .collect()
}

pub fn render_levels(table: &LevelTable) -> String {
    let mut out = String::from("<levels>\n");
    for (index, min) in &table.thresholds {
        let _ = writeln!(out, "  <level index=\"{index}\" minPoints=\"{min}\"/>");
    }
    out.push_str("</levels>\n");
    out
}

pub fn load_levels(path: &Path) -> Result<LevelTable, GameError> {
    LevelTable::new(parse_levels(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{MessageEnvelope, PeerAddress};

    fn entry(ty: &str, points: u64, reqs: &[(&str, usize)], req_points: u64) -> CatalogEntry {
        CatalogEntry {
            construct_type: ty.into(),
            points_by_area: [("general".to_string(), points)].into(),
            required_counts: reqs.iter().map(|(t, n)| (t.to_string(), *n)).collect(),
            required_points: req_points,
        }
    }

    fn world_with(types: &[&str]) -> WorldState {
        let mut w = WorldState::default();
        let owner = PeerAddress::new("P1").unwrap();
        for (i, ty) in types.iter().enumerate() {
            let msg = MessageEnvelope {
                sender: owner.clone(),
                seq: i as u64,
                group: "g".into(),
                payload: Payload::Create(Placement {
                    id: ConstructId::new(&owner, i as u64 + 1),
                    construct_type: ty.to_string(),
                    transform: Transform::identity(),
                }),
            };
            w.apply_create(&msg).unwrap();
        }
        w
    }

    fn hospital() -> CatalogEntry {
        entry("hospital", 40, &[("house", 2)], 50)
    }

    #[test]
    fn no_requirements_on_empty_world() {
        let house = entry("house", 10, &[], 0);
        let scores = ScoreSheet::default();
        assert_eq!(
            validate_prerequisites(&WorldState::default(), &scores, Mode::Multi, &house),
            Ok(())
        );
    }

    #[test]
    fn unmet_lists_counts_and_points() {
        let w = world_with(&["house"]);
        let scores = ScoreSheet {
            personal: 10,
            contribution: 10,
            team_total: 10,
        };
        let unmet = validate_prerequisites(&w, &scores, Mode::Multi, &hospital()).unwrap_err();
        assert_eq!(
            unmet,
            vec![
                Unmet::Count {
                    construct_type: "house".into(),
                    have: 1,
                    need: 2
                },
                Unmet::Points { have: 10, need: 50 },
            ]
        );
        assert_eq!(UnmetList(&unmet).to_string(), "house 1/2, points 10/50");
    }

    #[test]
    fn requirements_met_at_boundary() {
        let w = world_with(&["house", "house"]);
        let scores = ScoreSheet {
            personal: 0,
            contribution: 0,
            team_total: 50,
        };
        assert_eq!(
            validate_prerequisites(&w, &scores, Mode::Multi, &hospital()),
            Ok(())
        );
        // Single-player gates on personal points.
        let unmet = validate_prerequisites(&w, &scores, Mode::Single, &hospital()).unwrap_err();
        assert_eq!(unmet, vec![Unmet::Points { have: 0, need: 50 }]);
    }

    #[test]
    fn level_thresholds() {
        let t = LevelTable::new(vec![(1, 0), (2, 100), (3, 250)]).unwrap();
        assert_eq!(t.level_for(0), 1);
        assert_eq!(t.level_for(99), 1);
        assert_eq!(t.level_for(120), 2);
        assert_eq!(t.level_for(249), 2);
        assert_eq!(t.level_for(250), 3);
        assert_eq!(t.level_for(10_000), 3);
    }

    #[test]
    fn level_table_validation() {
        assert!(LevelTable::new(vec![]).is_err());
        assert!(LevelTable::new(vec![(1, 5)]).is_err());
        assert!(LevelTable::new(vec![(1, 0), (2, 0)]).is_err());
        assert!(LevelTable::new(vec![(1, 0), (3, 10)]).is_err());
    }

    #[test]
    fn catalog_liveness() {
        assert!(Catalog::new([entry("house", 10, &[], 0), hospital()]).is_ok());
        // Cycle with no free entry.
        let err = Catalog::new([entry("a", 1, &[("b", 1)], 0), entry("b", 1, &[("a", 1)], 0)]);
        assert!(matches!(err, Err(GameError::Catalog(_))));
        // Self requirement.
        assert!(Catalog::new([entry("house", 10, &[], 0), entry("x", 1, &[("x", 1)], 0)]).is_err());
        // Point threshold unreachable when nothing yields points.
        assert!(Catalog::new([entry("park", 0, &[], 0), entry("mall", 5, &[], 10)]).is_err());
        // Unknown reference.
        assert!(Catalog::new([entry("house", 10, &[("castle", 1)], 0)]).is_err());
    }

    #[test]
    fn properties_round_trip() {
        let doc = r#"<construct type="hospital"><points area="health" value="30"/><points area="economy" value="10"/><requires type="house" count="2"/><requiresPoints value="50"/></construct>"#;
        let e = parse_properties(doc).unwrap();
        assert_eq!(e.total_points(), 40);
        assert_eq!(e.required_counts["house"], 2);
        assert_eq!(e.required_points, 50);
        let rendered = render_properties(&e);
        assert_eq!(parse_properties(&rendered).unwrap(), e);
        assert!(parse_properties("<construct type=\"x\"><bogus/></construct>").is_err());
    }

    #[test]
    fn levels_parse() {
        let doc = r#"<levels><level index="1" minPoints="0"/><level index="2" minPoints="100"/></levels>"#;
        let t = LevelTable::new(parse_levels(doc).unwrap()).unwrap();
        assert_eq!(t.level_for(100), 2);
        assert_eq!(
            LevelTable::new(parse_levels(&render_levels(&t)).unwrap()).unwrap(),
            t
        );
    }

    #[test]
    fn gate_audit_flags_unearned_create() {
        let sent = EngineEvent::FrameSent {
            seq: 3,
            kind: MessageKind::Create,
            construct_type: Some("house".into()),
        };
        assert!(audit_build_gate(std::slice::from_ref(&sent)).is_err());
        let ok = vec![
            EngineEvent::PrerequisitesChecked {
                construct_type: "house".into(),
                passed: true,
            },
            EngineEvent::SessionOpened {
                construct_type: "house".into(),
                question_id: "q1".into(),
            },
            EngineEvent::AnswerChecked {
                construct_type: "house".into(),
                question_id: "q1".into(),
                correct: true,
            },
            EngineEvent::PrerequisitesChecked {
                construct_type: "house".into(),
                passed: true,
            },
            sent.clone(),
            EngineEvent::SessionClosed {
                construct_type: "house".into(),
                end: SessionEnd::Completed,
            },
        ];
        assert_eq!(audit_build_gate(&ok), Ok(1));
        let mut wrong = ok.clone();
        wrong[2] = EngineEvent::AnswerChecked {
            construct_type: "house".into(),
            question_id: "q1".into(),
            correct: false,
        };
        assert!(audit_build_gate(&wrong).is_err());
    }
}
