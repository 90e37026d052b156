//! Message model and the line-oriented text frame shared by every transport.
//!
//! A frame is one LF-terminated UTF-8 line:
//!
//! ```text
//! EVIE1|<sender>|<seq>|<group>|<KIND>|<payload>
//! ```
//!
//! Every textual field is percent-encoded (all bytes outside `[A-Za-z0-9._~-]`),
//! so payload text can never break framing. Decimals are fixed-point with six
//! fractional digits which keeps encodings canonical across peers.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const MAGIC: &str = "EVIE1";

/// Largest frame a transport is expected to carry in one datagram.
pub const MAX_FRAME_LEN: usize = 60_000;

const MICROS: i64 = 1_000_000;
const MAX_ABS_MICROS: i64 = 1_000_000_000 * MICROS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("decimal is not finite")]
    NonFinite,
    #[error("decimal out of range (|x| must be below 1e9)")]
    OutOfRange,
}

/// Identity of a peer: a symbolic name on the simulated bus, `host:port` over UDP.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerAddress(String);

impl PeerAddress {
    pub fn new(value: impl Into<String>) -> Result<Self, WireError> {
        let value = value.into();
        if value.is_empty() {
            return Err(WireError::InvalidEnvelope("empty peer address".into()));
        }
        if value.contains(['|', ';', '\n']) {
            return Err(WireError::InvalidEnvelope(format!(
                "peer address {value:?} contains a reserved character"
            )));
        }
        Ok(PeerAddress(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The trailing component of the host part, used to prefix chat names.
    ///
    /// `192.168.1.7:4242` yields `7`; addresses without a dot are returned whole.
    pub fn short_suffix(&self) -> &str {
        let addr = self.0.as_str();
        if !addr.contains('.') {
            return addr;
        }
        let host = match addr.rsplit_once(':') {
            Some((host, port)) if !port.is_empty() && port.bytes().all(|b| b.is_ascii_digit()) => {
                host
            }
            _ => addr,
        };
        match host.rsplit_once('.') {
            Some((_, tail)) if !tail.is_empty() => tail,
            _ => host,
        }
    }
}

impl fmt::Display for PeerAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PeerAddress {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PeerAddress::new(s)
    }
}

/// `<ownerAddress>#<n>`; ordering is byte-wise on the textual form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConstructId(String);

impl ConstructId {
    pub fn new(owner: &PeerAddress, n: u64) -> Self {
        ConstructId(format!("{owner}#{n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn owner(&self) -> PeerAddress {
        let (owner, _) = self.0.rsplit_once('#').expect("validated at construction");
        PeerAddress(owner.to_owned())
    }

    pub fn serial(&self) -> u64 {
        let (_, n) = self.0.rsplit_once('#').expect("validated at construction");
        n.parse().expect("validated at construction")
    }
}

impl fmt::Display for ConstructId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ConstructId {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WireError::BadPayload(format!("construct id {s:?} is not <owner>#<n>"));
        let (owner, n) = s.rsplit_once('#').ok_or_else(bad)?;
        PeerAddress::new(owner).map_err(|_| bad())?;
        parse_canonical_u64(n).ok_or_else(bad)?;
        Ok(ConstructId(s.to_owned()))
    }
}

/// Fixed-point decimal with six fractional digits, stored as millionths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal(i64);

impl Decimal {
    pub const ZERO: Decimal = Decimal(0);

    pub fn from_micros(micros: i64) -> Result<Self, WireError> {
        if micros.checked_abs().is_none_or(|m| m >= MAX_ABS_MICROS) {
            return Err(WireError::OutOfRange);
        }
        Ok(Decimal(micros))
    }

    pub fn from_int(value: i32) -> Self {
        Decimal(i64::from(value) * MICROS)
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    /// Rounds `x` half away from zero at the sixth fractional digit.
    ///
    /// Rounding is applied to the shortest decimal form of `x` (the literal a
    /// caller would have written), so `1.0000005` becomes `1.000001` even though
    /// its binary value sits just under the midpoint.
    pub fn from_f64(x: f64) -> Result<Self, WireError> {
        if !x.is_finite() {
            return Err(WireError::NonFinite);
        }
        let text = format!("{}", x.abs());
        let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
        if int_part.len() > 10 {
            return Err(WireError::OutOfRange);
        }
        let int: i64 = int_part.parse().map_err(|_| WireError::OutOfRange)?;
        let mut frac: i64 = 0;
        for d in frac_part.bytes().chain(std::iter::repeat(b'0')).take(6) {
            frac = frac * 10 + i64::from(d - b'0');
        }
        let mut micros = int * MICROS + frac;
        if frac_part.as_bytes().get(6).is_some_and(|d| *d >= b'5') {
            micros += 1;
        }
        if x < 0.0 {
            micros = -micros;
        }
        Decimal::from_micros(micros)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / MICROS as f64
    }

    /// Strict parser accepting only the canonical encoding produced by `Display`.
    pub fn parse_canonical(s: &str) -> Option<Self> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.')?;
        if frac.len() != 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let int = parse_canonical_u64(int)?;
        let micros = i64::try_from(int).ok()?.checked_mul(MICROS)? + frac.parse::<i64>().ok()?;
        if neg && micros == 0 {
            return None;
        }
        Decimal::from_micros(if neg { -micros } else { micros }).ok()
    }

    /// Accepts `-?digits(.digits{1,6})?`, for hand-written files and commands.
    pub fn parse_lenient(s: &str) -> Option<Self> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || int.len() > 10 || !int.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) || body.ends_with('.') {
            return None;
        }
        let mut micros: i64 = int.parse::<i64>().ok()?.checked_mul(MICROS)?;
        let mut scale = MICROS / 10;
        for d in frac.bytes() {
            micros += i64::from(d - b'0') * scale;
            scale /= 10;
        }
        Decimal::from_micros(if neg { -micros } else { micros }).ok()
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let m = MICROS as u64;
        write!(f, "{sign}{}.{:06}", abs / m, abs % m)
    }
}

/// Fixed-point rendering with exactly six fractional digits.
pub fn format_decimal(x: f64) -> Result<String, WireError> {
    Decimal::from_f64(x).map(|d| d.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Vec3 {
    pub x: Decimal,
    pub y: Decimal,
    pub z: Decimal,
}

impl Vec3 {
    pub const fn new(x: Decimal, y: Decimal, z: Decimal) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_f64(x: f64, y: f64, z: f64) -> Result<Self, WireError> {
        Ok(Vec3::new(
            Decimal::from_f64(x)?,
            Decimal::from_f64(y)?,
            Decimal::from_f64(z)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transform {
    pub translation: Vec3,
    pub axis: Vec3,
    /// Degrees.
    pub angle: Decimal,
}

impl Transform {
    /// Origin, no rotation about the vertical axis.
    pub fn identity() -> Self {
        Transform {
            translation: Vec3::default(),
            axis: Vec3::new(Decimal::ZERO, Decimal::from_int(1), Decimal::ZERO),
            angle: Decimal::ZERO,
        }
    }
}

impl Default for Transform {
    fn default() -> Self {
        Transform::identity()
    }
}

/// Owner sequence numbers of the last applied translation and rotation of a
/// construct. Each starts at the sequence number of the CREATE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MutationSeqs {
    pub translation: u64,
    pub rotation: u64,
}

impl MutationSeqs {
    pub fn both(seq: u64) -> Self {
        MutationSeqs {
            translation: seq,
            rotation: seq,
        }
    }

    pub fn last(self) -> u64 {
        self.translation.max(self.rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Hello,
    Groups,
    Join,
    Leave,
    Choice,
    Create,
    Sync,
    Translate,
    Rotate,
    Chat,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::Hello,
        MessageKind::Groups,
        MessageKind::Join,
        MessageKind::Leave,
        MessageKind::Choice,
        MessageKind::Create,
        MessageKind::Sync,
        MessageKind::Translate,
        MessageKind::Rotate,
        MessageKind::Chat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::Groups => "GROUPS",
            MessageKind::Join => "JOIN",
            MessageKind::Leave => "LEAVE",
            MessageKind::Choice => "CHOICE",
            MessageKind::Create => "CREATE",
            MessageKind::Sync => "SYNC",
            MessageKind::Translate => "TRANSLATE",
            MessageKind::Rotate => "ROTATE",
            MessageKind::Chat => "CHAT",
        }
    }

    /// The "Welcome" family: processed regardless of the receiver's group.
    pub fn is_handshake(self) -> bool {
        matches!(
            self,
            MessageKind::Hello
                | MessageKind::Groups
                | MessageKind::Join
                | MessageKind::Leave
                | MessageKind::Choice
        )
    }

    /// Messages that mutate the replicated world.
    pub fn is_system(self) -> bool {
        matches!(
            self,
            MessageKind::Create | MessageKind::Sync | MessageKind::Translate | MessageKind::Rotate
        )
    }

    pub fn allows_empty_group(self) -> bool {
        matches!(
            self,
            MessageKind::Hello | MessageKind::Groups | MessageKind::Join | MessageKind::Leave
        )
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| WireError::UnknownKind(s.to_owned()))
    }
}

/// A construct as announced by CREATE or replayed by SYNC.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placement {
    pub id: ConstructId,
    pub construct_type: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Hello,
    Groups {
        /// The responder's own team, empty when it has none.
        responder_group: String,
        teams: Vec<String>,
    },
    Join {
        team: String,
    },
    Leave,
    Choice {
        chosen: PeerAddress,
    },
    Create(Placement),
    Sync {
        placement: Placement,
        seqs: MutationSeqs,
    },
    Translate {
        id: ConstructId,
        translation: Vec3,
    },
    Rotate {
        id: ConstructId,
        axis: Vec3,
        angle: Decimal,
    },
    Chat {
        username: String,
        text: String,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Hello => MessageKind::Hello,
            Payload::Groups { .. } => MessageKind::Groups,
            Payload::Join { .. } => MessageKind::Join,
            Payload::Leave => MessageKind::Leave,
            Payload::Choice { .. } => MessageKind::Choice,
            Payload::Create(_) => MessageKind::Create,
            Payload::Sync { .. } => MessageKind::Sync,
            Payload::Translate { .. } => MessageKind::Translate,
            Payload::Rotate { .. } => MessageKind::Rotate,
            Payload::Chat { .. } => MessageKind::Chat,
        }
    }

    /// Construct targeted by a system message.
    pub fn construct_id(&self) -> Option<&ConstructId> {
        match self {
            Payload::Create(p) | Payload::Sync { placement: p, .. } => Some(&p.id),
            Payload::Translate { id, .. } | Payload::Rotate { id, .. } => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MessageEnvelope {
    pub sender: PeerAddress,
    pub seq: u64,
    pub group: String,
    pub payload: Payload,
}

impl MessageEnvelope {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// The dedup key.
    pub fn key(&self) -> (PeerAddress, u64) {
        (self.sender.clone(), self.seq)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        let kind = self.kind();
        if self.group.is_empty() && !kind.allows_empty_group() {
            return Err(WireError::InvalidEnvelope(format!(
                "{kind} requires a group"
            )));
        }
        match &self.payload {
            Payload::Join { team } if team.is_empty() => Err(WireError::InvalidEnvelope(
                "JOIN with empty team name".into(),
            )),
            Payload::Groups { teams, .. } if teams.iter().any(String::is_empty) => Err(
                WireError::InvalidEnvelope("GROUPS with empty team name".into()),
            ),
            _ => Ok(()),
        }
    }
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'~' | b'-')
}

pub fn pct_encode(s: &str) -> String {
    const HEX: &[u8; 16] = b"0123456789ABCDEF";
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        if is_unreserved(b) {
            out.push(b as char);
        } else {
            out.push('%');
            out.push(HEX[usize::from(b >> 4)] as char);
            out.push(HEX[usize::from(b & 0x0f)] as char);
        }
    }
    out
}

/// Inverse of [`pct_encode`]; rejects anything `pct_encode` would not produce.
pub fn pct_decode(field: &str) -> Result<String, WireError> {
    fn hex(b: u8) -> Option<u8> {
        match b {
            b'0'..=b'9' => Some(b - b'0'),
            b'A'..=b'F' => Some(b - b'A' + 10),
            _ => None,
        }
    }
    let bytes = field.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'%' {
            let hi = bytes.get(i + 1).copied().and_then(hex);
            let lo = bytes.get(i + 2).copied().and_then(hex);
            let (Some(hi), Some(lo)) = (hi, lo) else {
                return Err(WireError::MalformedFrame(format!(
                    "bad percent-escape in {field:?}"
                )));
            };
            let decoded = hi << 4 | lo;
            if is_unreserved(decoded) {
                return Err(WireError::MalformedFrame(format!(
                    "needless percent-escape in {field:?}"
                )));
            }
            out.push(decoded);
            i += 3;
        } else if is_unreserved(b) {
            out.push(b);
            i += 1;
        } else {
            return Err(WireError::MalformedFrame(format!(
                "unescaped byte {b:#04x} in field"
            )));
        }
    }
    String::from_utf8(out).map_err(|_| WireError::MalformedFrame("field is not UTF-8".into()))
}

fn parse_canonical_u64(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return None;
    }
    s.parse().ok()
}

fn push_vec3(fields: &mut Vec<String>, v: &Vec3) {
    fields.extend([v.x.to_string(), v.y.to_string(), v.z.to_string()]);
}

fn placement_fields(p: &Placement) -> Vec<String> {
    let mut fields = vec![pct_encode(p.id.as_str()), pct_encode(&p.construct_type)];
    push_vec3(&mut fields, &p.transform.translation);
    push_vec3(&mut fields, &p.transform.axis);
    fields.push(p.transform.angle.to_string());
    fields
}

fn encode_payload(payload: &Payload) -> String {
    let fields: Vec<String> = match payload {
        Payload::Hello | Payload::Leave => Vec::new(),
        Payload::Groups {
            responder_group,
            teams,
        } => {
            let list: Vec<String> = teams.iter().map(|t| pct_encode(t)).collect();
            vec![pct_encode(responder_group), list.join(",")]
        }
        Payload::Join { team } => vec![pct_encode(team)],
        Payload::Choice { chosen } => vec![pct_encode(chosen.as_str())],
        Payload::Create(p) => placement_fields(p),
        Payload::Sync { placement, seqs } => {
            let mut fields = placement_fields(placement);
            fields.push(seqs.translation.to_string());
            fields.push(seqs.rotation.to_string());
            fields
        }
        Payload::Translate { id, translation } => {
            let mut fields = vec![pct_encode(id.as_str())];
            push_vec3(&mut fields, translation);
            fields
        }
        Payload::Rotate { id, axis, angle } => {
            let mut fields = vec![pct_encode(id.as_str())];
            push_vec3(&mut fields, axis);
            fields.push(angle.to_string());
            fields
        }
        Payload::Chat { username, text } => vec![pct_encode(username), pct_encode(text)],
    };
    fields.join(";")
}

/// Encodes one envelope as a single LF-terminated frame.
pub fn encode(msg: &MessageEnvelope) -> Result<Vec<u8>, WireError> {
    msg.validate()?;
    let line = format!(
        "{MAGIC}|{}|{}|{}|{}|{}\n",
        pct_encode(msg.sender.as_str()),
        msg.seq,
        pct_encode(&msg.group),
        msg.kind(),
        encode_payload(&msg.payload)
    );
    Ok(line.into_bytes())
}

struct PayloadFields<'a> {
    kind: MessageKind,
    fields: Vec<&'a str>,
}

impl<'a> PayloadFields<'a> {
    fn expect_len(&self, n: usize) -> Result<(), WireError> {
        if self.fields.len() != n {
            return Err(WireError::BadPayload(format!(
                "{} expects {n} fields, got {}",
                self.kind,
                self.fields.len()
            )));
        }
        Ok(())
    }

    fn text(&self, i: usize) -> Result<String, WireError> {
        pct_decode(self.fields[i])
    }

    fn decimal(&self, i: usize) -> Result<Decimal, WireError> {
        Decimal::parse_canonical(self.fields[i]).ok_or_else(|| {
            WireError::BadPayload(format!("{:?} is not a canonical decimal", self.fields[i]))
        })
    }

    fn vec3(&self, start: usize) -> Result<Vec3, WireError> {
        Ok(Vec3::new(
            self.decimal(start)?,
            self.decimal(start + 1)?,
            self.decimal(start + 2)?,
        ))
    }

    fn construct_id(&self, i: usize) -> Result<ConstructId, WireError> {
        self.text(i)?.parse()
    }

    fn placement(&self) -> Result<Placement, WireError> {
        Ok(Placement {
            id: self.construct_id(0)?,
            construct_type: self.text(1)?,
            transform: Transform {
                translation: self.vec3(2)?,
                axis: self.vec3(5)?,
                angle: self.decimal(8)?,
            },
        })
    }
}

fn decode_payload(kind: MessageKind, raw: &str) -> Result<Payload, WireError> {
    let fields: Vec<&str> = if raw.is_empty() {
        Vec::new()
    } else {
        raw.split(';').collect()
    };
    let p = PayloadFields { kind, fields };
    let payload = match kind {
        MessageKind::Hello => {
            p.expect_len(0)?;
            Payload::Hello
        }
        MessageKind::Leave => {
            p.expect_len(0)?;
            Payload::Leave
        }
        MessageKind::Groups => {
            // An empty responder group with an empty list encodes as ";".
            let fields: Vec<&str> = raw.split(';').collect();
            let p = PayloadFields { kind, fields };
            p.expect_len(2)?;
            let teams = if p.fields[1].is_empty() {
                Vec::new()
            } else {
                p.fields[1]
                    .split(',')
                    .map(|t| pct_decode(t).map_err(|e| WireError::BadPayload(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?
            };
            if teams.iter().any(String::is_empty) {
                return Err(WireError::BadPayload("empty team name in GROUPS".into()));
            }
            Payload::Groups {
                responder_group: p.text(0)?,
                teams,
            }
        }
        MessageKind::Join => {
            p.expect_len(1)?;
            let team = p.text(0)?;
            if team.is_empty() {
                return Err(WireError::BadPayload("JOIN with empty team name".into()));
            }
            Payload::Join { team }
        }
        MessageKind::Choice => {
            p.expect_len(1)?;
            let chosen =
                PeerAddress::new(p.text(0)?).map_err(|e| WireError::BadPayload(e.to_string()))?;
            Payload::Choice { chosen }
        }
        MessageKind::Create => {
            p.expect_len(9)?;
            Payload::Create(p.placement()?)
        }
        MessageKind::Sync => {
            p.expect_len(11)?;
            let seq = |i: usize| {
                parse_canonical_u64(p.fields[i])
                    .ok_or_else(|| WireError::BadPayload("bad SYNC owner sequence".into()))
            };
            let seqs = MutationSeqs {
                translation: seq(9)?,
                rotation: seq(10)?,
            };
            Payload::Sync {
                placement: p.placement()?,
                seqs,
            }
        }
        MessageKind::Translate => {
            p.expect_len(4)?;
            Payload::Translate {
                id: p.construct_id(0)?,
                translation: p.vec3(1)?,
            }
        }
        MessageKind::Rotate => {
            p.expect_len(5)?;
            Payload::Rotate {
                id: p.construct_id(0)?,
                axis: p.vec3(1)?,
                angle: p.decimal(4)?,
            }
        }
        MessageKind::Chat => {
            // A CHAT with empty username and text still has its separator.
            let fields: Vec<&str> = raw.split(';').collect();
            let p = PayloadFields { kind, fields };
            p.expect_len(2)?;
            Payload::Chat {
                username: p.text(0)?,
                text: p.text(1)?,
            }
        }
    };
    Ok(payload)
}

/// Parses one frame. A single trailing LF is accepted but not required.
pub fn decode(line: &[u8]) -> Result<MessageEnvelope, WireError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = std::str::from_utf8(line)
        .map_err(|_| WireError::MalformedFrame("frame is not UTF-8".into()))?;
    let parts: Vec<&str> = line.split('|').collect();
    if parts.len() != 6 {
        return Err(WireError::MalformedFrame(format!(
            "expected 6 '|'-separated fields, got {}",
            parts.len()
        )));
    }
    if parts[0] != MAGIC {
        return Err(WireError::MalformedFrame(format!(
            "bad magic {:?}",
            parts[0]
        )));
    }
    let sender = PeerAddress::new(pct_decode(parts[1])?)
        .map_err(|e| WireError::MalformedFrame(e.to_string()))?;
    let seq = parse_canonical_u64(parts[2])
        .ok_or_else(|| WireError::MalformedFrame(format!("bad sequence number {:?}", parts[2])))?;
    let group = pct_decode(parts[3])?;
    let kind: MessageKind = parts[4].parse()?;
    let payload = decode_payload(kind, parts[5])?;
    let msg = MessageEnvelope {
        sender,
        seq,
        group,
        payload,
    };
    msg.validate()
        .map_err(|e| WireError::MalformedFrame(e.to_string()))?;
    Ok(msg)
}
