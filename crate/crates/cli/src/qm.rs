//! Question manager: tutor-side edits of lessons.xml and questions.xml.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Subcommand};
use evie_core::questions::{
    load_bank, save_bank, EducationalObjective, QmOp, Question, QuestionBank, QuestionError,
};

#[derive(Args)]
pub struct QmArgs {
    /// Directory holding lessons.xml and questions.xml
    #[arg(long, default_value = "questions")]
    questions_dir: PathBuf,
    #[command(subcommand)]
    action: Action,
}

#[derive(Args)]
struct QuestionFields {
    #[arg(long)]
    id: String,
    /// Educational objective (lesson) id
    #[arg(long)]
    eo: String,
    #[arg(long)]
    level: u32,
    #[arg(long)]
    text: String,
    /// Image path relative to the questions directory
    #[arg(long)]
    image: Option<String>,
    /// One choice; repeat for each choice in order
    #[arg(long = "choice", required = true)]
    choices: Vec<String>,
    /// Zero-based index of the correct choice
    #[arg(long)]
    correct: usize,
}

impl QuestionFields {
    fn into_question(self) -> Question {
        Question {
            id: self.id,
            eo: self.eo,
            level: self.level,
            text: self.text,
            image: self.image,
            choices: self.choices,
            correct_index: self.correct,
        }
    }
}

#[derive(Subcommand)]
enum Action {
    /// Add an educational objective
    AddEo {
        id: String,
        title: String,
    },
    /// Rename an educational objective
    EditEo {
        id: String,
        title: String,
    },
    /// Delete an educational objective
    DeleteEo {
        id: String,
        /// Also delete the objective's questions
        #[arg(long)]
        cascade: bool,
    },
    /// Add a question
    AddQ(QuestionFields),
    /// Replace the question with the same id
    EditQ(QuestionFields),
    /// Delete a question
    DeleteQ {
        id: String,
    },
    /// Exit 0 iff the bank loads and passes every check
    Validate {
        /// Also require every referenced image to exist
        #[arg(long)]
        check_assets: bool,
    },
    /// Print objectives and their questions
    List,
}

fn exit_code(e: &QuestionError) -> u8 {
    match e {
        QuestionError::Schema(_) => 3,
        QuestionError::Io(_) => 4,
        QuestionError::UnknownId(_) => 5,
        QuestionError::DanglingReference { .. } => 6,
        QuestionError::DuplicateId(_) => 7,
        QuestionError::InvalidChoiceIndex { .. } => 8,
        QuestionError::Invalid(_) => 9,
        QuestionError::NoQuestionsAtLevel(_) => 10,
    }
}

fn list(bank: &QuestionBank) {
    for eo in bank.objectives() {
        let count = bank.questions().filter(|q| q.eo == eo.id).count();
        println!("{} {} ({count} questions)", eo.id, eo.title);
        for q in bank.questions().filter(|q| q.eo == eo.id) {
            println!("  {} level {}: {}", q.id, q.level, q.text);
        }
    }
}

fn apply(args: QmArgs) -> Result<(), QuestionError> {
    let bank = load_bank(&args.questions_dir)?;
    let op = match args.action {
        Action::AddEo { id, title } => QmOp::AddEo(EducationalObjective { id, title }),
        Action::EditEo { id, title } => QmOp::EditEo(EducationalObjective { id, title }),
        Action::DeleteEo { id, cascade } => QmOp::DeleteEo { id, cascade },
        Action::AddQ(fields) => QmOp::AddQ(fields.into_question()),
        Action::EditQ(fields) => QmOp::EditQ(fields.into_question()),
        Action::DeleteQ { id } => QmOp::DeleteQ(id),
        Action::Validate { check_assets } => {
            bank.validate()?;
            if check_assets {
                let missing = bank.missing_assets(&args.questions_dir);
                if !missing.is_empty() {
                    return Err(QuestionError::Invalid(format!(
                        "missing images: {}",
                        missing.join(", ")
                    )));
                }
            }
            println!(
                "ok: {} objectives, {} questions",
                bank.objectives().count(),
                bank.len()
            );
            return Ok(());
        }
        Action::List => {
            list(&bank);
            return Ok(());
        }
    };
    let next = bank.mutate(op)?;
    save_bank(&next, &args.questions_dir)?;
    println!("saved {}", args.questions_dir.display());
    Ok(())
}

pub fn run(args: QmArgs) -> ExitCode {
    match apply(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
