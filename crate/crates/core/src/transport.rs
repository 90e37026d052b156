//! Broadcast delivery with loopback: a seeded in-memory bus for simulation and
//! LAN UDP multicast for real peers.

use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socket2::{Domain, Protocol, Socket, Type};
use thiserror::Error;

use crate::wire::{PeerAddress, MAX_FRAME_LEN};

pub const DEFAULT_MULTICAST_GROUP: Ipv4Addr = Ipv4Addr::new(239, 255, 42, 99);
pub const DEFAULT_MULTICAST_PORT: u16 = 4242;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("address {0} is already attached")]
    DuplicateAddress(PeerAddress),
    #[error("endpoint is detached")]
    Detached,
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN} byte limit")]
    FrameTooLarge(usize),
    #[error("invalid bus configuration: {0}")]
    InvalidConfig(String),
    #[error("socket error: {0}")]
    Socket(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimBusConfig {
    pub seed: u64,
    pub duplicate_prob: f64,
    pub drop_prob: f64,
    /// Maximum extra ticks a frame copy may be held back.
    pub reorder_window: u32,
}

impl SimBusConfig {
    /// No loss, no duplication, no reordering.
    pub fn faithful(seed: u64) -> Self {
        SimBusConfig {
            seed,
            duplicate_prob: 0.0,
            drop_prob: 0.0,
            reorder_window: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        for (name, p) in [("duplicate", self.duplicate_prob), ("drop", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TransportError::InvalidConfig(format!(
                    "{name} probability {p} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

impl Default for SimBusConfig {
    fn default() -> Self {
        SimBusConfig::faithful(0)
    }
}

/// Handle to an endpoint attached to a [`SimBus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointId(usize);

#[derive(Debug)]
struct Slot {
    address: PeerAddress,
    inbox: VecDeque<Vec<u8>>,
    attached: bool,
}

#[derive(Debug)]
struct InFlight {
    dest: usize,
    frame: Arc<[u8]>,
}

/// Deterministic broadcast medium. Every random draw comes from one seeded
/// generator, in attach order, so (seed, attach order, broadcast schedule)
/// fixes every inbox.
#[derive(Debug)]
pub struct SimBus {
    config: SimBusConfig,
    rng: ChaCha8Rng,
    slots: Vec<Slot>,
    // Keyed by (due tick, enqueue order): ties deliver in broadcast order.
    in_flight: BTreeMap<(u64, u64), InFlight>,
    now: u64,
    next_order: u64,
    broadcasts: u64,
}

impl SimBus {
    pub fn new(config: SimBusConfig) -> Result<Self, TransportError> {
        config.validate()?;
        Ok(SimBus {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            slots: Vec::new(),
            in_flight: BTreeMap::new(),
            now: 0,
            next_order: 0,
            broadcasts: 0,
        })
    }

    pub fn config(&self) -> SimBusConfig {
        self.config
    }

    /// Changes fault parameters; a new seed restarts the generator.
    pub fn reconfigure(&mut self, config: SimBusConfig) -> Result<(), TransportError> {
        config.validate()?;
        if config.seed != self.config.seed {
            self.rng = ChaCha8Rng::seed_from_u64(config.seed);
        }
        self.config = config;
        Ok(())
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn attach(&mut self, address: PeerAddress) -> Result<EndpointId, TransportError> {
        if self
            .slots
            .iter()
            .any(|s| s.attached && s.address == address)
        {
            return Err(TransportError::DuplicateAddress(address));
        }
        self.slots.push(Slot {
            address,
            inbox: VecDeque::new(),
            attached: true,
        });
        Ok(EndpointId(self.slots.len() - 1))
    }

    /// Frames already in flight to a detached endpoint are discarded on arrival.
    pub fn detach(&mut self, id: EndpointId) {
        if let Some(slot) = self.slots.get_mut(id.0) {
            slot.attached = false;
            slot.inbox.clear();
        }
    }

    pub fn address(&self, id: EndpointId) -> &PeerAddress {
        &self.slots[id.0].address
    }

    pub fn broadcast(&mut self, from: EndpointId, frame: &[u8]) -> Result<(), TransportError> {
        if !self.slots.get(from.0).is_some_and(|s| s.attached) {
            return Err(TransportError::Detached);
        }
        let frame: Arc<[u8]> = Arc::from(frame);
        self.broadcasts += 1;
        for dest in 0..self.slots.len() {
            if !self.slots[dest].attached {
                continue;
            }
            if self.rng.gen::<f64>() < self.config.drop_prob {
                continue;
            }
            let copies = if self.rng.gen::<f64>() < self.config.duplicate_prob {
                2
            } else {
                1
            };
            for _ in 0..copies {
                let delay = if self.config.reorder_window > 0 {
                    self.rng
                        .gen_range(0..=u64::from(self.config.reorder_window))
                } else {
                    0
                };
                let order = self.next_order;
                self.next_order += 1;
                self.in_flight.insert(
                    (self.now + 1 + delay, order),
                    InFlight {
                        dest,
                        frame: frame.clone(),
                    },
                );
            }
        }
        Ok(())
    }

    /// Advances one tick and moves every due frame into its inbox.
    ///
    /// Returns the number of frames delivered during this tick. With a non-zero
    /// reorder window a tick can deliver nothing while frames are still held
    /// back; use [`SimBus::is_quiescent`] to detect an empty network.
    pub fn step(&mut self) -> usize {
        self.now += 1;
        let later = self.in_flight.split_off(&(self.now + 1, 0));
        let due = std::mem::replace(&mut self.in_flight, later);
        let mut delivered = 0;
        for (_, f) in due {
            let slot = &mut self.slots[f.dest];
            if slot.attached {
                slot.inbox.push_back(f.frame.to_vec());
                delivered += 1;
            }
        }
        delivered
    }

    pub fn is_quiescent(&self) -> bool {
        self.in_flight.is_empty()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn broadcasts(&self) -> u64 {
        self.broadcasts
    }

    pub fn recv(&mut self, id: EndpointId) -> Option<Vec<u8>> {
        self.slots.get_mut(id.0)?.inbox.pop_front()
    }

    pub fn drain(&mut self, id: EndpointId) -> Vec<Vec<u8>> {
        self.slots
            .get_mut(id.0)
            .map(|s| s.inbox.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn inbox_len(&self, id: EndpointId) -> usize {
        self.slots.get(id.0).map_or(0, |s| s.inbox.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MulticastConfig {
    pub group: Ipv4Addr,
    pub port: u16,
    /// Local interface used for joining and sending; unspecified lets the OS pick.
    pub interface: Ipv4Addr,
    /// Allow several peers on one host to share the port.
    pub reuse_address: bool,
    pub ttl: u32,
}

impl Default for MulticastConfig {
    fn default() -> Self {
        MulticastConfig {
            group: DEFAULT_MULTICAST_GROUP,
            port: DEFAULT_MULTICAST_PORT,
            interface: Ipv4Addr::UNSPECIFIED,
            reuse_address: true,
            ttl: 1,
        }
    }
}

/// A peer joined to an IPv4 multicast group with loopback enabled.
///
/// One datagram carries exactly one frame. A background thread appends
/// received datagrams to the inbox; the owner drains it with [`recv`].
///
/// [`recv`]: MulticastEndpoint::recv
pub struct MulticastEndpoint {
    address: PeerAddress,
    socket: UdpSocket,
    target: SocketAddr,
    inbox: mpsc::Receiver<Vec<u8>>,
    stop: Arc<AtomicBool>,
    receiver: Option<thread::JoinHandle<()>>,
}

impl MulticastEndpoint {
    pub fn open(config: MulticastConfig, address: PeerAddress) -> Result<Self, TransportError> {
        if !config.group.is_multicast() {
            return Err(TransportError::Socket(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} is not a multicast address", config.group),
            )));
        }
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_reuse_address(config.reuse_address)?;
        socket.bind(&SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, config.port).into())?;
        socket.join_multicast_v4(&config.group, &config.interface)?;
        socket.set_multicast_loop_v4(true)?;
        socket.set_multicast_ttl_v4(config.ttl)?;
        if !config.interface.is_unspecified() {
            socket.set_multicast_if_v4(&config.interface)?;
        }
        let socket: UdpSocket = socket.into();
        let reader = socket.try_clone()?;
        reader.set_read_timeout(Some(Duration::from_millis(50)))?;

        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let receiver = thread::Builder::new()
            .name("evie-mcast-rx".into())
            .spawn(move || {
                let mut buf = vec![0u8; 65_536];
                while !stop_flag.load(Ordering::Relaxed) {
                    match reader.recv_from(&mut buf) {
                        Ok((n, _)) => {
                            if tx.send(buf[..n].to_vec()).is_err() {
                                break;
                            }
                        }
                        Err(e)
                            if matches!(
                                e.kind(),
                                io::ErrorKind::WouldBlock
                                    | io::ErrorKind::TimedOut
                                    | io::ErrorKind::Interrupted
                            ) => {}
                        Err(_) => break,
                    }
                }
            })?;

        Ok(MulticastEndpoint {
            address,
            socket,
            target: SocketAddrV4::new(config.group, config.port).into(),
            inbox: rx,
            stop,
            receiver: Some(receiver),
        })
    }

    pub fn address(&self) -> &PeerAddress {
        &self.address
    }

    pub fn broadcast(&self, frame: &[u8]) -> Result<(), TransportError> {
        if frame.len() > MAX_FRAME_LEN {
            return Err(TransportError::FrameTooLarge(frame.len()));
        }
        self.socket.send_to(frame, self.target)?;
        Ok(())
    }

    pub fn recv(&self) -> Option<Vec<u8>> {
        self.inbox.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Vec<u8>> {
        self.inbox.recv_timeout(timeout).ok()
    }
}

impl Drop for MulticastEndpoint {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.receiver.take() {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> PeerAddress {
        PeerAddress::new(s).unwrap()
    }

    fn drain_all(bus: &mut SimBus) -> usize {
        let mut total = 0;
        while !bus.is_quiescent() {
            total += bus.step();
        }
        total
    }

    #[test]
    fn loopback_reaches_sender_and_peers() {
        let mut bus = SimBus::new(SimBusConfig::faithful(1)).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        let p2 = bus.attach(addr("P2")).unwrap();
        bus.broadcast(p1, b"hello").unwrap();
        assert_eq!(bus.step(), 2);
        assert_eq!(bus.step(), 0);
        assert_eq!(bus.drain(p1), vec![b"hello".to_vec()]);
        assert_eq!(bus.drain(p2), vec![b"hello".to_vec()]);
    }

    #[test]
    fn duplicate_attach_is_rejected() {
        let mut bus = SimBus::new(SimBusConfig::faithful(1)).unwrap();
        bus.attach(addr("P1")).unwrap();
        assert!(matches!(
            bus.attach(addr("P1")),
            Err(TransportError::DuplicateAddress(_))
        ));
    }

    #[test]
    fn single_endpoint_gets_exactly_one_copy() {
        let mut bus = SimBus::new(SimBusConfig::faithful(9)).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        bus.broadcast(p1, b"x").unwrap();
        assert_eq!(drain_all(&mut bus), 1);
        assert_eq!(bus.drain(p1).len(), 1);
    }

    #[test]
    fn faithful_bus_preserves_broadcast_order() {
        let mut bus = SimBus::new(SimBusConfig::faithful(3)).unwrap();
        let ids: Vec<_> = ["P1", "P2", "P3"]
            .iter()
            .map(|a| bus.attach(addr(a)).unwrap())
            .collect();
        for (i, id) in ids.iter().enumerate() {
            bus.broadcast(*id, format!("m{i}").as_bytes()).unwrap();
        }
        assert_eq!(drain_all(&mut bus), 9);
        for id in ids {
            assert_eq!(
                bus.drain(id),
                vec![b"m0".to_vec(), b"m1".to_vec(), b"m2".to_vec()]
            );
        }
    }

    #[test]
    fn forced_duplication_doubles_every_copy() {
        let cfg = SimBusConfig {
            duplicate_prob: 1.0,
            ..SimBusConfig::faithful(5)
        };
        let mut bus = SimBus::new(cfg).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        let p2 = bus.attach(addr("P2")).unwrap();
        bus.broadcast(p1, b"f").unwrap();
        drain_all(&mut bus);
        assert_eq!(bus.drain(p1), vec![b"f".to_vec(), b"f".to_vec()]);
        assert_eq!(bus.drain(p2).len(), 2);
    }

    #[test]
    fn total_drop_loses_loopback() {
        let cfg = SimBusConfig {
            drop_prob: 1.0,
            ..SimBusConfig::faithful(5)
        };
        let mut bus = SimBus::new(cfg).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        let p2 = bus.attach(addr("P2")).unwrap();
        bus.broadcast(p1, b"f").unwrap();
        assert_eq!(drain_all(&mut bus), 0);
        assert_eq!(bus.inbox_len(p1), 0);
        assert_eq!(bus.inbox_len(p2), 0);
    }

    #[test]
    fn idle_step_delivers_nothing() {
        let mut bus = SimBus::new(SimBusConfig::faithful(0)).unwrap();
        assert_eq!(bus.step(), 0);
    }

    #[test]
    fn detached_endpoint_cannot_broadcast() {
        let mut bus = SimBus::new(SimBusConfig::faithful(0)).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        bus.detach(p1);
        assert!(matches!(
            bus.broadcast(p1, b"x"),
            Err(TransportError::Detached)
        ));
        // The address becomes free again.
        bus.attach(addr("P1")).unwrap();
    }

    #[test]
    fn reorder_delay_is_bounded() {
        let cfg = SimBusConfig {
            reorder_window: 3,
            ..SimBusConfig::faithful(11)
        };
        let mut bus = SimBus::new(cfg).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        for i in 0..50u8 {
            bus.broadcast(p1, &[i]).unwrap();
        }
        for _ in 0..4 {
            bus.step();
        }
        assert!(bus.is_quiescent());
        let got = bus.drain(p1);
        assert_eq!(got.len(), 50);
        assert_ne!(got, (0..50u8).map(|i| vec![i]).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let cfg = SimBusConfig {
            drop_prob: 1.5,
            ..SimBusConfig::faithful(0)
        };
        assert!(SimBus::new(cfg).is_err());
    }

    fn delivery_count(seed: u64) -> (usize, Vec<Vec<u8>>) {
        let cfg = SimBusConfig {
            duplicate_prob: 0.5,
            reorder_window: 2,
            ..SimBusConfig::faithful(seed)
        };
        let mut bus = SimBus::new(cfg).unwrap();
        let p1 = bus.attach(addr("P1")).unwrap();
        let p2 = bus.attach(addr("P2")).unwrap();
        let mut total = 0;
        for i in 0..100u32 {
            bus.broadcast(if i % 2 == 0 { p1 } else { p2 }, &i.to_le_bytes())
                .unwrap();
            total += bus.step();
        }
        total += drain_all(&mut bus);
        (total, bus.drain(p2))
    }

    #[test]
    fn seeded_schedule_is_reproducible() {
        let (a, inbox_a) = delivery_count(77);
        let (b, inbox_b) = delivery_count(77);
        assert_eq!(a, b);
        assert_eq!(inbox_a, inbox_b);
        assert!(a > 200 && a < 400, "{a}");
    }
}
