//! Every engine operation a player can trigger is reachable from exactly one
//! REPL command, and every command reaches its operation.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use evie_core::command::{execute, Command, SaveTarget, COMMANDS};
use evie_core::engine::{DiscoveryStatus, EngineConfig, EngineEvent, PeerPhase};
use evie_core::game::GameData;
use evie_core::sim::Cluster;
use evie_core::transport::SimBusConfig;
use evie_core::wire::MessageKind;

const TABLE: &[(&str, &str)] = &[
    ("PeerEngine::start_discovery", "discover"),
    ("PeerEngine::known_teams", "teams"),
    ("PeerEngine::join_team", "join"),
    ("PeerEngine::leave", "leave"),
    ("PeerEngine::request_build", "build"),
    ("PeerEngine::answer", "answer"),
    ("PeerEngine::retry_question", "retry"),
    ("PeerEngine::abandon_build", "abandon"),
    ("PeerEngine::send_local(Translate)", "move"),
    ("PeerEngine::send_local(Rotate)", "rotate"),
    ("PeerEngine::send_chat", "chat"),
    ("PeerEngine::set_username", "nick"),
    ("PeerEngine::status", "status"),
    ("WorldState::world_section", "world"),
    ("command::save_world", "save"),
    ("shutdown", "quit"),
];

#[test]
fn table_is_a_bijection() {
    let ops: BTreeSet<_> = TABLE.iter().map(|(op, _)| *op).collect();
    let cmds: BTreeSet<_> = TABLE.iter().map(|(_, c)| *c).collect();
    assert_eq!(ops.len(), TABLE.len(), "operation listed twice");
    assert_eq!(cmds.len(), TABLE.len(), "command listed twice");
    let known: BTreeSet<_> = COMMANDS.iter().map(|(name, _)| *name).collect();
    assert_eq!(cmds, known);
}

fn cluster() -> Cluster {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let game = GameData::load(&data.join("models"), &data.join("questions")).unwrap();
    let mut c = Cluster::new(
        SimBusConfig::faithful(3),
        Arc::new(game),
        EngineConfig::default(),
    )
    .unwrap();
    c.spawn("P1").unwrap();
    c
}

fn run(c: &mut Cluster, line: &str, save: Option<&SaveTarget>) -> Vec<String> {
    let cmd = Command::parse(line, true).unwrap().unwrap();
    let out = execute(c.engine_mut(0), &cmd, save).unwrap();
    c.run_until_quiet(500).unwrap();
    out
}

fn sent(c: &Cluster, kind: MessageKind) -> usize {
    c.engine(0)
        .events()
        .iter()
        .filter(|e| matches!(e, EngineEvent::FrameSent { kind: k, .. } if *k == kind))
        .count()
}

#[test]
fn every_command_reaches_its_operation() {
    let dir = tempfile::tempdir().unwrap();
    let save = SaveTarget::new(dir.path());
    let mut c = cluster();
    let mut covered = BTreeSet::new();
    let mut check = |name: &str, ok: bool| {
        assert!(ok, "command {name} did not reach its operation");
        covered.insert(name.to_string());
    };

    let cmd = Command::parse("discover", true).unwrap().unwrap();
    execute(c.engine_mut(0), &cmd, None).unwrap();
    check(
        "discover",
        *c.engine(0).discovery_status() == DiscoveryStatus::Waiting,
    );
    c.run_until_quiet(500).unwrap();

    check("teams", run(&mut c, "teams", None) == ["no teams found"]);

    run(&mut c, "join alpha", None);
    check("join", c.engine(0).phase() == PeerPhase::Joined);

    check("nick", {
        run(&mut c, "nick ann", None);
        c.engine(0).username() == "ann"
    });

    let out = run(&mut c, "build house", None);
    check("build", c.engine(0).session().is_some() && !out.is_empty());

    let shown = |c: &Cluster| {
        c.engine(0)
            .events()
            .iter()
            .filter(|e| matches!(e, EngineEvent::QuestionShown { .. }))
            .count()
    };
    let before = shown(&c);
    run(&mut c, "retry", None);
    check("retry", shown(&c) == before + 1);

    run(&mut c, "abandon", None);
    check("abandon", c.engine(0).session().is_none());

    run(&mut c, "build house", None);
    run(&mut c, "answer correct", None);
    check("answer", c.engine(0).world().len() == 1);

    run(&mut c, "move P1#1 1 2 3", None);
    check("move", sent(&c, MessageKind::Translate) == 1);
    run(&mut c, "rotate P1#1 0 1 0 90", None);
    check("rotate", sent(&c, MessageKind::Rotate) == 1);

    run(&mut c, "chat hello there", None);
    check("chat", c.engine(0).chat_log().len() == 1);

    let out = run(&mut c, "status", None);
    check("status", out[0].starts_with("mode=multi personal=10"));

    let out = run(&mut c, "world", None);
    let section: Vec<String> = c
        .engine(0)
        .world()
        .world_section()
        .lines()
        .map(String::from)
        .collect();
    check("world", out == section);

    run(&mut c, "save", Some(&save));
    check(
        "save",
        dir.path().join("w_status.xml").exists() && dir.path().join("chat.xml").exists(),
    );

    run(&mut c, "leave", None);
    check("leave", c.engine(0).phase() == PeerPhase::Offline);

    // quit from inside a team announces the departure first.
    let mut q = cluster();
    run(&mut q, "discover", None);
    run(&mut q, "join beta", None);
    run(&mut q, "quit", None);
    check("quit", sent(&q, MessageKind::Leave) == 1);

    let all: BTreeSet<String> = COMMANDS.iter().map(|(n, _)| n.to_string()).collect();
    assert_eq!(covered, all);
}
