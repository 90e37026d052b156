//! Interactive peer: a line-based REPL driving one engine over a transport.

use std::io::{self, BufRead, IsTerminal, Write};
use std::net::{Ipv4Addr, UdpSocket};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use evie_core::command::{self, AnswerChoice, Command, SaveTarget, COMMANDS};
use evie_core::engine::{ChatClock, EngineConfig, PeerEngine};
use evie_core::game::GameData;
use evie_core::transport::{EndpointId, MulticastConfig, MulticastEndpoint, SimBus, SimBusConfig};
use evie_core::wire::PeerAddress;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    /// In-process simulated bus (this peer alone)
    Sim,
    /// UDP multicast on the local network
    Udp,
}

#[derive(Args)]
pub struct PeerArgs {
    #[arg(long, value_enum, default_value_t = TransportKind::Udp)]
    transport: TransportKind,
    /// Peer address; defaults to <local-ip>:<process-id>
    #[arg(long)]
    addr: Option<String>,
    #[arg(long, default_value_t = MulticastConfig::default().group)]
    mcast_group: Ipv4Addr,
    #[arg(long, default_value_t = MulticastConfig::default().port)]
    port: u16,
    #[arg(long, default_value = "models")]
    models_dir: PathBuf,
    #[arg(long, default_value = "questions")]
    questions_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Play alone without any network traffic
    #[arg(long)]
    single_player: bool,
    /// Milliseconds per engine tick
    #[arg(long, default_value_t = 50)]
    tick_ms: u64,
}

enum Net {
    None,
    Sim {
        bus: Box<SimBus>,
        endpoint: EndpointId,
    },
    Udp(MulticastEndpoint),
}

impl Net {
    fn flush(&mut self, engine: &mut PeerEngine) {
        while let Some(frame) = engine.poll_outgoing() {
            let sent = match self {
                Net::None => Ok(()),
                Net::Sim { bus, endpoint } => bus.broadcast(*endpoint, &frame),
                Net::Udp(ep) => ep.broadcast(&frame),
            };
            if let Err(e) = sent {
                eprintln!("warning: send failed: {e}");
            }
        }
    }

    fn receive(&mut self, engine: &mut PeerEngine) {
        let frames = match self {
            Net::None => Vec::new(),
            Net::Sim { bus, endpoint } => {
                bus.step();
                bus.drain(*endpoint)
            }
            Net::Udp(ep) => std::iter::from_fn(|| ep.recv()).collect(),
        };
        for frame in frames {
            // Garbage on the multicast group is not ours to report.
            let _ = engine.on_frame(&frame);
        }
    }
}

fn local_ipv4() -> Ipv4Addr {
    let probe = || -> io::Result<Ipv4Addr> {
        let s = UdpSocket::bind("0.0.0.0:0")?;
        s.connect("192.0.2.1:9")?;
        match s.local_addr()?.ip() {
            std::net::IpAddr::V4(ip) if !ip.is_unspecified() => Ok(ip),
            _ => Ok(Ipv4Addr::LOCALHOST),
        }
    };
    probe().unwrap_or(Ipv4Addr::LOCALHOST)
}

fn load_game(args: &PeerArgs) -> GameData {
    match GameData::load(&args.models_dir, &args.questions_dir) {
        Ok(game) => game,
        Err(e) => {
            eprintln!("warning: game data unavailable ({e}); building is disabled");
            GameData::default()
        }
    }
}

fn spawn_stdin() -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

enum Wait {
    Ticks(u64),
    Constructs { count: usize, deadline: u64 },
}

enum Step {
    Continue,
    Wait(Wait),
    Quit,
}

const AWAIT_TIMEOUT_TICKS: u64 = 400;

fn help() {
    println!("commands:");
    for (_, usage) in COMMANDS {
        println!("  {usage}");
    }
    println!("  wait <ticks>");
    println!("  await <constructs>");
    println!("  help");
}

struct Repl {
    engine: PeerEngine,
    net: Net,
    save: SaveTarget,
}

impl Repl {
    fn print_events(&mut self) {
        for event in self.engine.take_events() {
            if let Some(line) = command::describe_event(&event) {
                println!("{line}");
            }
        }
    }

    fn tick(&mut self) {
        self.net.receive(&mut self.engine);
        self.engine.tick();
        self.net.flush(&mut self.engine);
        self.print_events();
    }

    fn handle(&mut self, line: &str) -> Result<Step> {
        let line = line.trim();
        let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match word {
            "help" => {
                help();
                return Ok(Step::Continue);
            }
            "wait" => {
                let n: u64 = rest.parse().context("usage: wait <ticks>")?;
                return Ok(Step::Wait(Wait::Ticks(self.engine.now() + n)));
            }
            "await" => {
                let count: usize = rest.parse().context("usage: await <constructs>")?;
                let deadline = self.engine.now() + AWAIT_TIMEOUT_TICKS;
                return Ok(Step::Wait(Wait::Constructs { count, deadline }));
            }
            _ => {}
        }
        let cmd = match line.parse::<usize>() {
            Ok(i) if self.engine.session().is_some() => Command::Answer(AnswerChoice::Index(i)),
            _ => match Command::parse(line, false)? {
                Some(cmd) => cmd,
                None => return Ok(Step::Continue),
            },
        };
        if cmd == Command::Save {
            std::fs::create_dir_all(&self.save.models_dir)
                .with_context(|| format!("creating {}", self.save.models_dir.display()))?;
        }
        let out = command::execute(&mut self.engine, &cmd, Some(&self.save))?;
        for line in out {
            println!("{line}");
        }
        self.net.flush(&mut self.engine);
        self.print_events();
        Ok(if cmd == Command::Quit {
            Step::Quit
        } else {
            Step::Continue
        })
    }

    fn wait_done(&self, wait: &Wait) -> Result<bool> {
        match *wait {
            Wait::Ticks(until) => Ok(self.engine.now() >= until),
            Wait::Constructs { count, deadline } => {
                if self.engine.world().len() >= count {
                    Ok(true)
                } else if self.engine.now() >= deadline {
                    bail!("timed out waiting for {count} constructs");
                } else {
                    Ok(false)
                }
            }
        }
    }
}

pub fn run(args: PeerArgs) -> Result<ExitCode> {
    let game = Arc::new(load_game(&args));
    let addr = args
        .addr
        .clone()
        .unwrap_or_else(|| format!("{}:{}", local_ipv4(), std::process::id()));
    let address = PeerAddress::new(addr).context("invalid --addr")?;
    let config = EngineConfig {
        seed: args.seed,
        chat_clock: ChatClock::WallClock,
        ..EngineConfig::default()
    };
    let (engine, net) = if args.single_player {
        (
            PeerEngine::single_player(address.clone(), game, config),
            Net::None,
        )
    } else {
        let net = match args.transport {
            TransportKind::Sim => {
                let mut bus = SimBus::new(SimBusConfig::faithful(args.seed))?;
                let endpoint = bus.attach(address.clone())?;
                Net::Sim {
                    bus: Box::new(bus),
                    endpoint,
                }
            }
            TransportKind::Udp => {
                let cfg = MulticastConfig {
                    group: args.mcast_group,
                    port: args.port,
                    ..MulticastConfig::default()
                };
                Net::Udp(
                    MulticastEndpoint::open(cfg, address.clone())
                        .context("opening multicast socket")?,
                )
            }
        };
        (PeerEngine::new(address.clone(), game, config), net)
    };
    let interactive = io::stdin().is_terminal();
    let mut repl = Repl {
        engine,
        net,
        save: SaveTarget::new(&args.models_dir),
    };
    let tick = Duration::from_millis(args.tick_ms.max(1));
    let input = spawn_stdin();
    let mut waiting: Option<Wait> = None;

    println!("peer {address} ready; type 'help' for commands");
    let prompt = |waiting: &Option<Wait>| {
        if interactive && waiting.is_none() {
            print!("> ");
            let _ = io::stdout().flush();
        }
    };
    prompt(&waiting);
    loop {
        if let Some(w) = &waiting {
            match repl.wait_done(w) {
                Ok(true) => {
                    waiting = None;
                    prompt(&waiting);
                }
                Ok(false) => {}
                Err(e) if interactive => {
                    println!("error: {e:#}");
                    waiting = None;
                    prompt(&waiting);
                }
                Err(e) => return Err(e),
            }
        }
        while waiting.is_none() {
            let line = match input.try_recv() {
                Ok(line) => line,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    repl.handle("quit")?;
                    return Ok(ExitCode::SUCCESS);
                }
            };
            match repl.handle(&line) {
                Ok(Step::Continue) => prompt(&waiting),
                Ok(Step::Wait(w)) => waiting = Some(w),
                Ok(Step::Quit) => return Ok(ExitCode::SUCCESS),
                Err(e) if interactive => {
                    println!("error: {e:#}");
                    prompt(&waiting);
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        thread::sleep(tick);
        repl.tick();
    }
}
