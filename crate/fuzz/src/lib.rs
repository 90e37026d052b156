//! Fuzz entry points. Each one feeds arbitrary bytes to a parser and, when
//! the input is accepted, checks that rendering and re-parsing is stable.

use std::collections::BTreeSet;

use evie_core::chat::{parse_chat, render_chat};
use evie_core::game::{
    parse_levels, parse_properties, render_levels, render_properties, LevelTable,
};
use evie_core::questions::{
    parse_lessons, parse_questions, render_lessons, render_questions, EducationalObjective,
    QuestionBank,
};
use evie_core::scenario::parse_script;
use evie_core::wire::{decode, encode};
use evie_core::world::{parse_status, render_status};

pub fn wire_decode(data: &[u8]) {
    if let Ok(msg) = decode(data) {
        let line = encode(&msg).expect("decoded envelopes encode");
        assert_eq!(decode(&line).expect("encoded frames decode"), msg);
    }
}

pub fn status_xml(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((world, scores, level)) = parse_status(text) {
        let doc = render_status(&world, scores, level);
        let (again, scores2, level2) = parse_status(&doc).expect("rendered status parses");
        assert_eq!(again.world_section(), world.world_section());
        assert_eq!((scores2, level2), (scores, level));
        assert_eq!(render_status(&again, scores2, level2), doc);
    }
}

pub fn question_bank_xml(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(lessons) = parse_lessons(text) {
        if let Ok(bank) = QuestionBank::new(lessons, []) {
            let doc = render_lessons(&bank);
            let again = parse_lessons(&doc).expect("rendered lessons parse");
            assert_eq!(render_lessons(&QuestionBank::new(again, []).unwrap()), doc);
        }
    }
    if let Ok(questions) = parse_questions(text) {
        let objectives: Vec<EducationalObjective> = questions
            .iter()
            .map(|q| q.eo.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|id| EducationalObjective {
                id,
                title: String::new(),
            })
            .collect();
        if let Ok(bank) = QuestionBank::new(objectives.clone(), questions) {
            let doc = render_questions(&bank);
            let again = parse_questions(&doc).expect("rendered questions parse");
            let bank2 = QuestionBank::new(objectives, again).expect("rendered bank is valid");
            assert_eq!(render_questions(&bank2), doc);
        }
    }
}

pub fn catalog_xml(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entry) = parse_properties(text) {
        let doc = render_properties(&entry);
        assert_eq!(
            parse_properties(&doc).expect("rendered properties parse"),
            entry
        );
    }
    if let Ok(levels) = parse_levels(text) {
        if let Ok(table) = LevelTable::new(levels) {
            let doc = render_levels(&table);
            assert_eq!(
                parse_levels(&doc).expect("rendered levels parse"),
                table.thresholds()
            );
        }
    }
}

pub fn chat_xml(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(log) = parse_chat(text) {
        let doc = render_chat(&log);
        assert_eq!(parse_chat(&doc).expect("rendered chat parses"), log);
    }
}

pub fn scenario_script(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_script(text);
}
