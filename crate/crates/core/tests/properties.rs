use std::collections::BTreeMap;

use evie_core::chat::{parse_chat, render_chat, ChatEntry, ChatLog};
use evie_core::questions::{
    parse_bank, render_lessons, render_questions, EducationalObjective, QmOp, Question,
    QuestionBank,
};
use evie_core::wire::{
    decode, encode, format_decimal, pct_decode, pct_encode, ConstructId, Decimal, MessageEnvelope,
    MessageKind, MutationSeqs, Payload, PeerAddress, Placement, Transform, Vec3,
};
use evie_core::world::{Disposition, WorldState};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 |;#%,:.~_\\-\n\té城😀]{0,12}"
}

fn non_empty_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 |;#%,:.~_\\-\n\té城😀]{1,12}"
}

fn address() -> impl Strategy<Value = PeerAddress> {
    "[a-zA-Z0-9 #%,:.~_\\-é]{1,10}".prop_map(|s| PeerAddress::new(s).unwrap())
}

fn decimal() -> impl Strategy<Value = Decimal> {
    (-999_999_999_999_999i64..=999_999_999_999_999).prop_map(|m| Decimal::from_micros(m).unwrap())
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (decimal(), decimal(), decimal()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn construct_id() -> impl Strategy<Value = ConstructId> {
    (address(), any::<u64>()).prop_map(|(a, n)| ConstructId::new(&a, n))
}

fn placement() -> impl Strategy<Value = Placement> {
    (construct_id(), non_empty_text(), vec3(), vec3(), decimal()).prop_map(
        |(id, construct_type, translation, axis, angle)| Placement {
            id,
            construct_type,
            transform: Transform {
                translation,
                axis,
                angle,
            },
        },
    )
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        Just(Payload::Hello),
        (text(), prop::collection::vec(non_empty_text(), 0..4)).prop_map(
            |(responder_group, teams)| Payload::Groups {
                responder_group,
                teams
            }
        ),
        non_empty_text().prop_map(|team| Payload::Join { team }),
        Just(Payload::Leave),
        address().prop_map(|chosen| Payload::Choice { chosen }),
        placement().prop_map(Payload::Create),
        (placement(), any::<u64>(), any::<u64>()).prop_map(|(placement, t, r)| Payload::Sync {
            placement,
            seqs: MutationSeqs {
                translation: t,
                rotation: r
            },
        }),
        (construct_id(), vec3())
            .prop_map(|(id, translation)| Payload::Translate { id, translation }),
        (construct_id(), vec3(), decimal()).prop_map(|(id, axis, angle)| Payload::Rotate {
            id,
            axis,
            angle
        }),
        (non_empty_text(), text()).prop_map(|(username, text)| Payload::Chat { username, text }),
    ]
}

fn envelope() -> impl Strategy<Value = MessageEnvelope> {
    (
        address(),
        any::<u64>(),
        non_empty_text(),
        payload(),
        any::<bool>(),
    )
        .prop_map(|(sender, seq, group, payload, empty_group)| {
            let group = if empty_group && payload.kind().allows_empty_group() {
                String::new()
            } else {
                group
            };
            MessageEnvelope {
                sender,
                seq,
                group,
                payload,
            }
        })
}

proptest! {
    #[test]
    fn wire_round_trip(msg in envelope()) {
        let line = encode(&msg).unwrap();
        prop_assert_eq!(line.last(), Some(&b'\n'));
        prop_assert_eq!(line.iter().filter(|b| **b == b'\n').count(), 1);
        let back = decode(&line).unwrap();
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(encode(&back).unwrap(), line);
    }

    #[test]
    fn pct_round_trip(s in "\\PC{0,24}") {
        let enc = pct_encode(&s);
        prop_assert!(enc.bytes().all(|b| b.is_ascii_alphanumeric() || b"._~-%".contains(&b)));
        prop_assert_eq!(pct_decode(&enc).unwrap(), s);
    }

    #[test]
    fn decimal_text_round_trip(d in decimal()) {
        let s = d.to_string();
        prop_assert_eq!(s.split_once('.').unwrap().1.len(), 6);
        prop_assert_eq!(Decimal::parse_canonical(&s), Some(d));
        prop_assert_eq!(format_decimal(d.to_f64()).unwrap(), s);
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..120)) {
        let _ = decode(&bytes);
    }
}

fn owner() -> PeerAddress {
    PeerAddress::new("P1").unwrap()
}

fn msg(seq: u64, payload: Payload) -> MessageEnvelope {
    MessageEnvelope {
        sender: owner(),
        seq,
        group: "alpha".into(),
        payload,
    }
}

fn apply(world: &mut WorldState, m: &MessageEnvelope) -> Disposition {
    match m.kind() {
        MessageKind::Create | MessageKind::Sync => world.apply_create(m).unwrap(),
        _ => world.apply_move(m).unwrap(),
    }
}

/// An owner's CREATE (seq 0) followed by moves with distinct seqs.
fn owner_history() -> impl Strategy<Value = Vec<MessageEnvelope>> {
    let id = ConstructId::new(&owner(), 1);
    let create = msg(
        0,
        Payload::Create(Placement {
            id: id.clone(),
            construct_type: "house".into(),
            transform: Transform::identity(),
        }),
    );
    prop::collection::vec((any::<bool>(), vec3(), decimal()), 1..20).prop_map(move |moves| {
        let mut out = vec![create.clone()];
        for (i, (translate, v, angle)) in moves.into_iter().enumerate() {
            let seq = i as u64 + 1;
            out.push(msg(
                seq,
                if translate {
                    Payload::Translate {
                        id: id.clone(),
                        translation: v,
                    }
                } else {
                    Payload::Rotate {
                        id: id.clone(),
                        axis: v,
                        angle,
                    }
                },
            ));
        }
        out
    })
}

proptest! {
    #[test]
    fn moves_commute_under_reordering(
        (history, order) in owner_history().prop_flat_map(|h| {
            let n = h.len() - 1;
            (Just(h), Just((1..=n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let mut sorted = WorldState::new(Some("alpha".into()));
        for m in &history {
            apply(&mut sorted, m);
        }
        let mut shuffled = WorldState::new(Some("alpha".into()));
        apply(&mut shuffled, &history[0]);
        for i in order {
            apply(&mut shuffled, &history[i]);
        }
        prop_assert_eq!(shuffled.world_section(), sorted.world_section());
    }

    #[test]
    fn redelivery_changes_nothing(history in owner_history(), dup in any::<prop::sample::Index>()) {
        let mut world = WorldState::new(Some("alpha".into()));
        for m in &history {
            apply(&mut world, m);
        }
        let before = world.world_section();
        let again = &history[dup.index(history.len())];
        prop_assert_ne!(apply(&mut world, again), Disposition::Applied);
        prop_assert_eq!(world.world_section(), before);
    }

    #[test]
    fn non_owner_moves_are_rejected(history in owner_history(), v in vec3()) {
        let mut world = WorldState::new(Some("alpha".into()));
        for m in &history {
            apply(&mut world, m);
        }
        let before = world.world_section();
        let forged = MessageEnvelope {
            sender: PeerAddress::new("P2").unwrap(),
            seq: 1000,
            group: "alpha".into(),
            payload: Payload::Translate { id: ConstructId::new(&owner(), 1), translation: v },
        };
        prop_assert_ne!(apply(&mut world, &forged), Disposition::Applied);
        prop_assert_eq!(world.world_section(), before);
    }
}

fn xml_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 <>&\"'é城.,!?-]{0,16}"
}

fn bank_strategy() -> impl Strategy<Value = QuestionBank> {
    let eos = prop::collection::btree_map("EO[0-9]", xml_text(), 1..4);
    eos.prop_flat_map(|eos: BTreeMap<String, String>| {
        let ids: Vec<String> = eos.keys().cloned().collect();
        let question = (
            prop::sample::select(ids),
            1u32..5,
            xml_text(),
            prop::option::of("[a-z]{1,8}\\.png"),
            prop::collection::vec(xml_text(), 2..5),
            any::<prop::sample::Index>(),
        );
        let questions = prop::collection::btree_map("Q[0-9]{2}", question, 0..8);
        (Just(eos), questions)
    })
    .prop_map(|(eos, questions)| {
        let objectives = eos
            .into_iter()
            .map(|(id, title)| EducationalObjective { id, title });
        let questions =
            questions
                .into_iter()
                .map(
                    |(id, (eo, level, text, image, choices, correct))| Question {
                        id,
                        eo,
                        level,
                        text,
                        image,
                        correct_index: correct.index(choices.len()),
                        choices,
                    },
                );
        QuestionBank::new(objectives, questions).unwrap()
    })
}

fn qm_question() -> impl Strategy<Value = Question> {
    (
        "Q[0-9]{2}",
        "EO[0-9]",
        0u32..5,
        xml_text(),
        prop::collection::vec(xml_text(), 0..4),
        0usize..4,
    )
        .prop_map(|(id, eo, level, text, choices, correct_index)| Question {
            id,
            eo,
            level,
            text,
            image: None,
            choices,
            correct_index,
        })
}

fn qm_op() -> impl Strategy<Value = QmOp> {
    prop_oneof![
        ("EO[0-9]", xml_text())
            .prop_map(|(id, title)| QmOp::AddEo(EducationalObjective { id, title })),
        ("EO[0-9]", xml_text())
            .prop_map(|(id, title)| QmOp::EditEo(EducationalObjective { id, title })),
        ("EO[0-9]", any::<bool>()).prop_map(|(id, cascade)| QmOp::DeleteEo { id, cascade }),
        qm_question().prop_map(QmOp::AddQ),
        qm_question().prop_map(QmOp::EditQ),
        "Q[0-9]{2}".prop_map(QmOp::DeleteQ),
    ]
}

proptest! {
    #[test]
    fn question_files_round_trip(bank in bank_strategy()) {
        let lessons = render_lessons(&bank);
        let questions = render_questions(&bank);
        let back = parse_bank(&lessons, &questions).unwrap();
        prop_assert_eq!(render_lessons(&back), lessons);
        prop_assert_eq!(render_questions(&back), questions);
        prop_assert_eq!(back.len(), bank.len());
    }

    #[test]
    fn qm_edits_keep_the_bank_valid(bank in bank_strategy(), ops in prop::collection::vec(qm_op(), 1..12)) {
        let mut current = bank;
        for op in ops {
            let snapshot = current.clone();
            match current.mutate(op) {
                Ok(next) => {
                    prop_assert!(next.validate().is_ok());
                    let reparsed = parse_bank(&render_lessons(&next), &render_questions(&next)).unwrap();
                    prop_assert_eq!(reparsed.len(), next.len());
                    current = next;
                }
                Err(_) => prop_assert_eq!(&current, &snapshot),
            }
        }
    }

    #[test]
    fn chat_round_trip(entries in prop::collection::vec((any::<u32>(), "[a-zA-Z0-9 <>&\"'é]{1,8}", xml_text()), 0..6)) {
        let mut log = ChatLog::default();
        for (at, display_name, text) in entries {
            log.push(ChatEntry { at: u64::from(at), display_name, text });
        }
        let xml = render_chat(&log);
        let back = parse_chat(&xml).unwrap();
        prop_assert_eq!(&back, &log);
        prop_assert_eq!(render_chat(&back), xml);
    }
}
