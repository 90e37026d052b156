//! Several engines wired to one [`SimBus`], stepped in lockstep.

use std::sync::Arc;

use thiserror::Error;

use crate::engine::{EngineConfig, PeerEngine};
use crate::game::GameData;
use crate::transport::{EndpointId, SimBus, SimBusConfig, TransportError};
use crate::wire::{PeerAddress, WireError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Address(#[from] WireError),
    #[error("unknown peer {0:?}")]
    UnknownPeer(String),
    #[error("network still busy after {0} ticks")]
    NotQuiet(u64),
}

struct Node {
    endpoint: Option<EndpointId>,
    engine: PeerEngine,
}

pub struct Cluster {
    bus: SimBus,
    game: Arc<GameData>,
    config: EngineConfig,
    nodes: Vec<Node>,
    undecodable: u64,
}

impl Cluster {
    pub fn new(
        bus: SimBusConfig,
        game: Arc<GameData>,
        config: EngineConfig,
    ) -> Result<Self, SimError> {
        Ok(Cluster {
            bus: SimBus::new(bus)?,
            game,
            config,
            nodes: Vec::new(),
            undecodable: 0,
        })
    }

    pub fn bus(&self) -> &SimBus {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut SimBus {
        &mut self.bus
    }

    pub fn engine_config_mut(&mut self) -> &mut EngineConfig {
        &mut self.config
    }

    /// Adds a network peer attached to the bus.
    pub fn spawn(&mut self, name: &str) -> Result<usize, SimError> {
        let address = PeerAddress::new(name)?;
        if self.find(name).is_some() {
            return Err(TransportError::DuplicateAddress(address).into());
        }
        let endpoint = self.bus.attach(address.clone())?;
        let config = self.peer_config();
        self.nodes.push(Node {
            endpoint: Some(endpoint),
            engine: PeerEngine::new(address, self.game.clone(), config),
        });
        Ok(self.nodes.len() - 1)
    }

    /// Adds a single-player peer that never touches the bus.
    pub fn spawn_single(&mut self, name: &str) -> Result<usize, SimError> {
        let address = PeerAddress::new(name)?;
        if self.find(name).is_some() {
            return Err(TransportError::DuplicateAddress(address).into());
        }
        let config = self.peer_config();
        self.nodes.push(Node {
            endpoint: None,
            engine: PeerEngine::single_player(address, self.game.clone(), config),
        });
        Ok(self.nodes.len() - 1)
    }

    // Each peer draws questions from its own stream.
    fn peer_config(&self) -> EngineConfig {
        let mut config = self.config;
        config.seed = config.seed.wrapping_add(self.nodes.len() as u64);
        config
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.engine.address().as_str() == name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize, SimError> {
        self.find(name)
            .ok_or_else(|| SimError::UnknownPeer(name.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn engine(&self, index: usize) -> &PeerEngine {
        &self.nodes[index].engine
    }

    pub fn engine_mut(&mut self, index: usize) -> &mut PeerEngine {
        &mut self.nodes[index].engine
    }

    pub fn engines(&self) -> impl Iterator<Item = &PeerEngine> {
        self.nodes.iter().map(|n| &n.engine)
    }

    /// Frames that reached an engine but failed to decode.
    pub fn undecodable(&self) -> u64 {
        self.undecodable
    }

    /// Moves every engine's pending frames onto the bus, in spawn order.
    pub fn flush(&mut self) -> Result<(), SimError> {
        for node in &mut self.nodes {
            while let Some(frame) = node.engine.poll_outgoing() {
                if let Some(ep) = node.endpoint {
                    self.bus.broadcast(ep, &frame)?;
                }
            }
        }
        Ok(())
    }

    /// One round: flush outboxes, advance the bus, deliver, then tick engines.
    pub fn run_tick(&mut self) -> Result<(), SimError> {
        self.flush()?;
        self.bus.step();
        for node in &mut self.nodes {
            let Some(ep) = node.endpoint else { continue };
            for frame in self.bus.drain(ep) {
                if node.engine.on_frame(&frame).is_err() {
                    self.undecodable += 1;
                }
            }
        }
        for node in &mut self.nodes {
            node.engine.tick();
        }
        Ok(())
    }

    pub fn run_ticks(&mut self, n: u64) -> Result<(), SimError> {
        for _ in 0..n {
            self.run_tick()?;
        }
        Ok(())
    }

    /// Nothing in flight, nothing queued, no phase timer running.
    pub fn is_quiet(&self) -> bool {
        self.bus.is_quiescent()
            && self
                .nodes
                .iter()
                .all(|n| !n.engine.has_outgoing() && n.engine.is_settled())
    }

    /// Steps until [`Cluster::is_quiet`]; returns the ticks taken.
    pub fn run_until_quiet(&mut self, max_ticks: u64) -> Result<u64, SimError> {
        for ticks in 0..=max_ticks {
            if self.is_quiet() {
                return Ok(ticks);
            }
            self.run_tick()?;
        }
        Err(SimError::NotQuiet(max_ticks))
    }
}
