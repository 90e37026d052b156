//! Educational objectives, leveled multiple-choice questions, seeded selection
//! and the tutor-side CRUD operations over `lessons.xml` / `questions.xml`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::xml::{self, escape_attr, escape_text, schema, Element, XmlError};

pub const LESSONS_FILE: &str = "lessons.xml";
pub const QUESTIONS_FILE: &str = "questions.xml";

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("invalid question bank: {0}")]
    Schema(#[from] XmlError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no questions available at level {0}")]
    NoQuestionsAtLevel(u32),
    #[error("choice {index} is out of range for a question with {len} choices")]
    InvalidChoiceIndex { index: usize, len: usize },
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("dangling reference: objective {eo:?} is still used by {count} question(s)")]
    DanglingReference { eo: String, count: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid entry: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EducationalObjective {
    pub id: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub eo: String,
    pub level: u32,
    pub text: String,
    pub image: Option<String>,
    pub choices: Vec<String>,
    pub correct_index: usize,
}

impl Question {
    fn check(&self) -> Result<(), QuestionError> {
        if self.id.is_empty() {
            return Err(QuestionError::Invalid("question id is empty".into()));
        }
        if self.level == 0 {
            return Err(QuestionError::Invalid(format!(
                "question {}: level starts at 1",
                self.id
            )));
        }
        if self.choices.len() < 2 {
            return Err(QuestionError::Invalid(format!(
                "question {} needs at least two choices",
                self.id
            )));
        }
        if self.correct_index >= self.choices.len() {
            return Err(QuestionError::InvalidChoiceIndex {
                index: self.correct_index,
                len: self.choices.len(),
            });
        }
        Ok(())
    }
}

pub fn check_answer(question: &Question, choice: usize) -> Result<bool, QuestionError> {
    if choice >= question.choices.len() {
        return Err(QuestionError::InvalidChoiceIndex {
            index: choice,
            len: question.choices.len(),
        });
    }
    Ok(choice == question.correct_index)
}

/// One tutor edit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QmOp {
    AddEo(EducationalObjective),
    EditEo(EducationalObjective),
    DeleteEo { id: String, cascade: bool },
    AddQ(Question),
    EditQ(Question),
    DeleteQ(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionBank {
    objectives: BTreeMap<String, EducationalObjective>,
    questions: BTreeMap<String, Question>,
    pub rng_seed: u64,
}

impl QuestionBank {
    pub fn new(
        objectives: impl IntoIterator<Item = EducationalObjective>,
        questions: impl IntoIterator<Item = Question>,
    ) -> Result<Self, QuestionError> {
        let mut bank = QuestionBank::default();
        for eo in objectives {
            if bank.objectives.contains_key(&eo.id) {
                return Err(QuestionError::DuplicateId(eo.id));
            }
            bank.objectives.insert(eo.id.clone(), eo);
        }
        for q in questions {
            if bank.questions.contains_key(&q.id) {
                return Err(QuestionError::DuplicateId(q.id));
            }
            bank.questions.insert(q.id.clone(), q);
        }
        bank.validate()?;
        Ok(bank)
    }

    pub fn objectives(&self) -> impl Iterator<Item = &EducationalObjective> {
        self.objectives.values()
    }

    pub fn questions(&self) -> impl Iterator<Item = &Question> {
        self.questions.values()
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.get(id)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Checks every bank invariant.
    pub fn validate(&self) -> Result<(), QuestionError> {
        for eo in self.objectives.values() {
            if eo.id.is_empty() {
                return Err(QuestionError::Invalid("objective id is empty".into()));
            }
        }
        for q in self.questions.values() {
            q.check()?;
            if !self.objectives.contains_key(&q.eo) {
                return Err(QuestionError::Invalid(format!(
                    "question {} references unknown objective {:?}",
                    q.id, q.eo
                )));
            }
        }
        Ok(())
    }

    /// Applies one edit, returning the new bank. The receiver is never modified.
    pub fn mutate(&self, op: QmOp) -> Result<QuestionBank, QuestionError> {
        let mut next = self.clone();
        match op {
            QmOp::AddEo(eo) => {
                if next.objectives.contains_key(&eo.id) {
                    return Err(QuestionError::DuplicateId(eo.id));
                }
                next.objectives.insert(eo.id.clone(), eo);
            }
            QmOp::EditEo(eo) => {
                let slot = next
                    .objectives
                    .get_mut(&eo.id)
                    .ok_or_else(|| QuestionError::UnknownId(eo.id.clone()))?;
                *slot = eo;
            }
            QmOp::DeleteEo { id, cascade } => {
                if next.objectives.remove(&id).is_none() {
                    return Err(QuestionError::UnknownId(id));
                }
                let count = next.questions.values().filter(|q| q.eo == id).count();
                if count > 0 && !cascade {
                    return Err(QuestionError::DanglingReference { eo: id, count });
                }
                next.questions.retain(|_, q| q.eo != id);
            }
            QmOp::AddQ(q) => {
                if next.questions.contains_key(&q.id) {
                    return Err(QuestionError::DuplicateId(q.id));
                }
                next.questions.insert(q.id.clone(), q);
            }
            QmOp::EditQ(q) => {
                let slot = next
                    .questions
                    .get_mut(&q.id)
                    .ok_or_else(|| QuestionError::UnknownId(q.id.clone()))?;
                *slot = q;
            }
            QmOp::DeleteQ(id) => {
                if next.questions.remove(&id).is_none() {
                    return Err(QuestionError::UnknownId(id));
                }
            }
        }
        next.validate()?;
        Ok(next)
    }

    /// Questions at `level`, optionally within one objective, in id order.
    pub fn candidates<'a>(
        &'a self,
        level: u32,
        eo: Option<&'a str>,
        exclude: &'a BTreeSet<String>,
    ) -> impl Iterator<Item = &'a Question> + 'a {
        self.questions.values().filter(move |q| {
            q.level == level && eo.is_none_or(|e| q.eo == e) && !exclude.contains(&q.id)
        })
    }

    /// Image paths that do not exist under `root`.
    pub fn missing_assets(&self, root: &Path) -> Vec<String> {
        self.questions
            .values()
            .filter_map(|q| q.image.as_ref())
            .filter(|img| !root.join(img).exists())
            .cloned()
            .collect()
    }
}

/// Uniform draw over the level's questions that are not excluded.
pub fn select_question<'a, R: Rng + ?Sized>(
    bank: &'a QuestionBank,
    level: u32,
    exclude: &BTreeSet<String>,
    rng: &mut R,
) -> Result<&'a Question, QuestionError> {
    select_question_in(bank, level, None, exclude, rng)
}

/// Like [`select_question`] but restricted to one educational objective.
pub fn select_question_in<'a, R: Rng + ?Sized>(
    bank: &'a QuestionBank,
    level: u32,
    eo: Option<&str>,
    exclude: &BTreeSet<String>,
    rng: &mut R,
) -> Result<&'a Question, QuestionError> {
    let candidates: Vec<&'a Question> = bank
        .questions
        .values()
        .filter(|q| q.level == level && eo.is_none_or(|e| q.eo == e) && !exclude.contains(&q.id))
        .collect();
    if candidates.is_empty() {
        return Err(QuestionError::NoQuestionsAtLevel(level));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

pub fn parse_lessons(input: &str) -> Result<Vec<EducationalObjective>, XmlError> {
    let root = xml::parse_document(input)?;
    root.expect_name("lessons")?;
    root.only_attrs(&[])?;
    root.no_text()?;
    root.children
        .iter()
        .map(|el| {
            el.expect_name("lesson")?;
            el.only_attrs(&["id", "title"])?;
            el.no_children()?;
            el.no_text()?;
            Ok(EducationalObjective {
                id: el.attr("id")?.to_owned(),
                title: el.attr("title")?.to_owned(),
            })
        })
        .collect()
}

fn parse_question(el: &Element) -> Result<Question, XmlError> {
    el.expect_name("question")?;
    el.only_attrs(&["id", "lesson", "level"])?;
    el.no_text()?;
    let id = el.attr("id")?.to_owned();
    let mut children = el.children.iter().peekable();
    let text = match children.next() {
        Some(t) if t.name == "text" => {
            t.only_attrs(&[])?;
            t.no_children()?;
            t.text.clone()
        }
        _ => return Err(schema(format!("question {id} must start with <text>"))),
    };
    let image = match children.peek() {
        Some(img) if img.name == "image" => {
            img.only_attrs(&[])?;
            img.no_children()?;
            let path = img.text.clone();
            children.next();
            Some(path)
        }
        _ => None,
    };
    let mut choices = Vec::new();
    let mut correct = Vec::new();
    for (i, c) in children.enumerate() {
        c.expect_name("choice")?;
        c.only_attrs(&["correct"])?;
        c.no_children()?;
        match c.attr("correct")? {
            "true" => correct.push(i),
            "false" => {}
            other => {
                return Err(schema(format!(
                    "question {id}: correct={other:?} is not a boolean"
                )))
            }
        }
        choices.push(c.text.clone());
    }
    let correct_index = match correct.as_slice() {
        [one] => *one,
        [] => return Err(schema(format!("question {id} has no correct choice"))),
        _ => {
            return Err(schema(format!(
                "question {id} has more than one correct choice"
            )))
        }
    };
    Ok(Question {
        level: el.parse_attr("level")?,
        eo: el.attr("lesson")?.to_owned(),
        id,
        text,
        image,
        choices,
        correct_index,
    })
}

pub fn parse_questions(input: &str) -> Result<Vec<Question>, XmlError> {
    let root = xml::parse_document(input)?;
    root.expect_name("questions")?;
    root.only_attrs(&[])?;
    root.no_text()?;
    root.children.iter().map(parse_question).collect()
}

/// Builds a validated bank from the two documents.
pub fn parse_bank(lessons: &str, questions: &str) -> Result<QuestionBank, QuestionError> {
    let objectives = parse_lessons(lessons)?;
    let questions = parse_questions(questions)?;
    QuestionBank::new(objectives, questions).map_err(|e| match e {
        QuestionError::Schema(_) => e,
        other => QuestionError::Schema(schema(other.to_string())),
    })
}

pub fn load_bank(dir: &Path) -> Result<QuestionBank, QuestionError> {
    let lessons = fs::read_to_string(dir.join(LESSONS_FILE))?;
    let questions = fs::read_to_string(dir.join(QUESTIONS_FILE))?;
    parse_bank(&lessons, &questions)
}

pub fn render_lessons(bank: &QuestionBank) -> String {
    if bank.objectives.is_empty() {
        return "<lessons/>\n".into();
    }
    let mut out = String::from("<lessons>\n");
    for eo in bank.objectives.values() {
        let _ = writeln!(
            out,
            "  <lesson id=\"{}\" title=\"{}\"/>",
            escape_attr(&eo.id),
            escape_attr(&eo.title)
        );
    }
    out.push_str("</lessons>\n");
    out
}

fn leaf(out: &mut String, indent: &str, open: &str, close: &str, text: &str) {
    if text.is_empty() {
        let _ = writeln!(out, "{indent}<{open}/>");
    } else {
        let _ = writeln!(out, "{indent}<{open}>{}</{close}>", escape_text(text));
    }
}

pub fn render_questions(bank: &QuestionBank) -> String {
    if bank.questions.is_empty() {
        return "<questions/>\n".into();
    }
    let mut out = String::from("<questions>\n");
    for q in bank.questions.values() {
        let _ = writeln!(
            out,
            "  <question id=\"{}\" lesson=\"{}\" level=\"{}\">",
            escape_attr(&q.id),
            escape_attr(&q.eo),
            q.level
        );
        leaf(&mut out, "    ", "text", "text", &q.text);
        if let Some(image) = &q.image {
            leaf(&mut out, "    ", "image", "image", image);
        }
        for (i, choice) in q.choices.iter().enumerate() {
            let open = format!("choice correct=\"{}\"", i == q.correct_index);
            leaf(&mut out, "    ", &open, "choice", choice);
        }
        out.push_str("  </question>\n");
    }
    out.push_str("</questions>\n");
    out
}

pub fn save_bank(bank: &QuestionBank, dir: &Path) -> Result<(), QuestionError> {
    fs::write(dir.join(LESSONS_FILE), render_lessons(bank))?;
    fs::write(dir.join(QUESTIONS_FILE), render_questions(bank))?;
    Ok(())
}
