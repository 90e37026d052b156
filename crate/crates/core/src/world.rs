//! The replicated construct registry and its `w_status.xml` persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{
    ConstructId, Decimal, MessageEnvelope, MutationSeqs, Payload, PeerAddress, Transform, Vec3,
};
use crate::xml::{self, escape_attr, schema, Element, XmlError};

/// Why a delivered frame did not change state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiscardReason {
    Duplicate,
    ForeignGroup,
    NotOwner,
    UnknownConstruct,
    Stale,
}

/// Outcome of handing one frame to a peer. Exactly one per delivered frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Disposition {
    Applied,
    Discarded(DiscardReason),
}

impl Disposition {
    pub fn name(self) -> &'static str {
        match self {
            Disposition::Applied => "Applied",
            Disposition::Discarded(DiscardReason::Duplicate) => "Duplicate",
            Disposition::Discarded(DiscardReason::ForeignGroup) => "ForeignGroup",
            Disposition::Discarded(DiscardReason::NotOwner) => "NotOwner",
            Disposition::Discarded(DiscardReason::UnknownConstruct) => "UnknownConstruct",
            Disposition::Discarded(DiscardReason::Stale) => "Stale",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        use DiscardReason::*;
        Some(match name {
            "Applied" => Disposition::Applied,
            "Duplicate" => Disposition::Discarded(Duplicate),
            "ForeignGroup" => Disposition::Discarded(ForeignGroup),
            "NotOwner" => Disposition::Discarded(NotOwner),
            "UnknownConstruct" => Disposition::Discarded(UnknownConstruct),
            "Stale" => Disposition::Discarded(Stale),
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("construct {id} cannot be created by {sender}")]
    BadConstructId {
        id: ConstructId,
        sender: PeerAddress,
    },
    #[error("{0} does not carry a construct")]
    NotApplicable(&'static str),
    #[error("invalid status file: {0}")]
    Schema(#[from] XmlError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Construct {
    pub id: ConstructId,
    pub construct_type: String,
    pub transform: Transform,
    pub seqs: MutationSeqs,
}

impl Construct {
    pub fn owner(&self) -> PeerAddress {
        self.id.owner()
    }

    /// Owner sequence number of the last applied creation or mutation.
    pub fn last_seq(&self) -> u64 {
        self.seqs.last()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    pub group: Option<String>,
    constructs: BTreeMap<ConstructId, Construct>,
}

/// The per-peer score block stored next to the world.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusScores {
    pub points: u64,
    pub contribution: u64,
}

impl WorldState {
    pub fn new(group: Option<String>) -> Self {
        WorldState {
            group,
            constructs: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.constructs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constructs.is_empty()
    }

    pub fn get(&self, id: &ConstructId) -> Option<&Construct> {
        self.constructs.get(id)
    }

    /// Constructs in byte-wise id order.
    pub fn constructs(&self) -> impl Iterator<Item = &Construct> {
        self.constructs.values()
    }

    pub fn count_of_type(&self, construct_type: &str) -> usize {
        self.constructs
            .values()
            .filter(|c| c.construct_type == construct_type)
            .count()
    }

    pub fn clear(&mut self) {
        self.constructs.clear();
    }

    /// Inserts without protocol checks; used by loaders and tests.
    pub fn insert(&mut self, construct: Construct) -> Option<Construct> {
        self.constructs.insert(construct.id.clone(), construct)
    }

    /// Handles CREATE and SYNC.
    ///
    /// A CREATE must come from the construct's owner. A SYNC may come from any
    /// replaying member; it only overwrites an existing construct when it
    /// reflects a newer owner mutation, field by field.
    pub fn apply_create(&mut self, msg: &MessageEnvelope) -> Result<Disposition, WorldError> {
        let (placement, seqs) = match &msg.payload {
            Payload::Create(p) => {
                if p.id.owner() != msg.sender {
                    return Err(WorldError::BadConstructId {
                        id: p.id.clone(),
                        sender: msg.sender.clone(),
                    });
                }
                (p, MutationSeqs::both(msg.seq))
            }
            Payload::Sync { placement, seqs } => (placement, *seqs),
            other => return Err(WorldError::NotApplicable(other.kind().as_str())),
        };
        if let Some(existing) = self.constructs.get_mut(&placement.id) {
            let mut refreshed = false;
            if matches!(msg.payload, Payload::Sync { .. }) {
                if seqs.translation > existing.seqs.translation {
                    existing.transform.translation = placement.transform.translation;
                    existing.seqs.translation = seqs.translation;
                    refreshed = true;
                }
                if seqs.rotation > existing.seqs.rotation {
                    existing.transform.axis = placement.transform.axis;
                    existing.transform.angle = placement.transform.angle;
                    existing.seqs.rotation = seqs.rotation;
                    refreshed = true;
                }
            }
            return Ok(if refreshed {
                Disposition::Applied
            } else {
                Disposition::Discarded(DiscardReason::Duplicate)
            });
        }
        self.constructs.insert(
            placement.id.clone(),
            Construct {
                id: placement.id.clone(),
                construct_type: placement.construct_type.clone(),
                transform: placement.transform,
                seqs,
            },
        );
        Ok(Disposition::Applied)
    }

    /// Handles TRANSLATE and ROTATE with the owner lock and per-owner ordering.
    ///
    /// Translation and rotation are ordered independently, so an older
    /// TRANSLATE overtaken by a newer ROTATE still applies.
    pub fn apply_move(&mut self, msg: &MessageEnvelope) -> Result<Disposition, WorldError> {
        let id = match &msg.payload {
            Payload::Translate { id, .. } | Payload::Rotate { id, .. } => id,
            other => return Err(WorldError::NotApplicable(other.kind().as_str())),
        };
        let Some(construct) = self.constructs.get_mut(id) else {
            return Ok(Disposition::Discarded(DiscardReason::UnknownConstruct));
        };
        if construct.owner() != msg.sender {
            return Ok(Disposition::Discarded(DiscardReason::NotOwner));
        }
        let field_seq = match &msg.payload {
            Payload::Translate { .. } => &mut construct.seqs.translation,
            _ => &mut construct.seqs.rotation,
        };
        if msg.seq <= *field_seq {
            return Ok(Disposition::Discarded(DiscardReason::Stale));
        }
        *field_seq = msg.seq;
        match &msg.payload {
            Payload::Translate { translation, .. } => {
                construct.transform.translation = *translation
            }
            Payload::Rotate { axis, angle, .. } => {
                construct.transform.axis = *axis;
                construct.transform.angle = *angle;
            }
            _ => unreachable!(),
        }
        Ok(Disposition::Applied)
    }

    /// The canonical `<constructs>` block, indented as inside `w_status.xml`.
    pub fn world_section(&self) -> String {
        let mut out = String::new();
        if self.constructs.is_empty() {
            out.push_str("  <constructs/>\n");
            return out;
        }
        out.push_str("  <constructs>\n");
        for c in self.constructs.values() {
            let t = &c.transform;
            let _ = writeln!(
                out,
                "    <construct id=\"{}\" type=\"{}\" owner=\"{}\" lastSeq=\"{}\">",
                escape_attr(c.id.as_str()),
                escape_attr(&c.construct_type),
                escape_attr(c.owner().as_str()),
                c.last_seq()
            );
            let _ = writeln!(
                out,
                "      <translation x=\"{}\" y=\"{}\" z=\"{}\"/>",
                t.translation.x, t.translation.y, t.translation.z
            );
            let _ = writeln!(
                out,
                "      <rotation ax=\"{}\" ay=\"{}\" az=\"{}\" angle=\"{}\"/>",
                t.axis.x, t.axis.y, t.axis.z, t.angle
            );
            out.push_str("    </construct>\n");
        }
        out.push_str("  </constructs>\n");
        out
    }

    /// Hex SHA-256 of [`WorldState::world_section`].
    pub fn dump_hash(&self) -> String {
        hex::encode(Sha256::digest(self.world_section().as_bytes()))
    }
}

/// Renders the full `w_status.xml` document.
pub fn render_status(world: &WorldState, scores: StatusScores, level: u32) -> String {
    format!(
        "<world group=\"{}\" points=\"{}\" contribution=\"{}\" level=\"{}\">\n{}</world>\n",
        escape_attr(world.group.as_deref().unwrap_or("")),
        scores.points,
        scores.contribution,
        level,
        world.world_section()
    )
}

pub fn save_status(
    world: &WorldState,
    scores: StatusScores,
    level: u32,
    path: &Path,
) -> Result<usize, WorldError> {
    let doc = render_status(world, scores, level);
    fs::write(path, doc.as_bytes())?;
    Ok(doc.len())
}

fn decimal_attr(el: &Element, name: &str) -> Result<Decimal, XmlError> {
    let raw = el.attr(name)?;
    Decimal::parse_lenient(raw)
        .ok_or_else(|| schema(format!("<{}> {name}={raw:?} is not a decimal", el.name)))
}

fn parse_construct(el: &Element) -> Result<Construct, XmlError> {
    el.expect_name("construct")?;
    el.only_attrs(&["id", "type", "owner", "lastSeq"])?;
    el.no_text()?;
    let id: ConstructId = el
        .attr("id")?
        .parse()
        .map_err(|_| schema(format!("bad construct id {:?}", el.opt_attr("id"))))?;
    if el.attr("owner")? != id.owner().as_str() {
        return Err(schema(format!(
            "construct {id} owner attribute does not match its id"
        )));
    }
    let [translation, rotation] = el.children.as_slice() else {
        return Err(schema(format!(
            "construct {id} needs <translation> and <rotation>"
        )));
    };
    translation.expect_name("translation")?;
    translation.only_attrs(&["x", "y", "z"])?;
    translation.no_children()?;
    translation.no_text()?;
    rotation.expect_name("rotation")?;
    rotation.only_attrs(&["ax", "ay", "az", "angle"])?;
    rotation.no_children()?;
    rotation.no_text()?;
    Ok(Construct {
        construct_type: el.attr("type")?.to_owned(),
        // The file keeps one sequence number; both fields resume from it.
        seqs: MutationSeqs::both(el.parse_attr("lastSeq")?),
        transform: Transform {
            translation: Vec3::new(
                decimal_attr(translation, "x")?,
                decimal_attr(translation, "y")?,
                decimal_attr(translation, "z")?,
            ),
            axis: Vec3::new(
                decimal_attr(rotation, "ax")?,
                decimal_attr(rotation, "ay")?,
                decimal_attr(rotation, "az")?,
            ),
            angle: decimal_attr(rotation, "angle")?,
        },
        id,
    })
}

/// Parses a `w_status.xml` document.
pub fn parse_status(input: &str) -> Result<(WorldState, StatusScores, u32), XmlError> {
    let root = xml::parse_document(input)?;
    root.expect_name("world")?;
    root.only_attrs(&["group", "points", "contribution", "level"])?;
    root.no_text()?;
    let group = root.attr("group")?;
    let scores = StatusScores {
        points: root.parse_attr("points")?,
        contribution: root.parse_attr("contribution")?,
    };
    let level: u32 = root.parse_attr("level")?;
    if level == 0 {
        return Err(schema("level starts at 1"));
    }
    let [constructs] = root.children.as_slice() else {
        return Err(schema("<world> must contain exactly one <constructs>"));
    };
    constructs.expect_name("constructs")?;
    constructs.only_attrs(&[])?;
    constructs.no_text()?;
    let mut world = WorldState::new((!group.is_empty()).then(|| group.to_owned()));
    for el in &constructs.children {
        let c = parse_construct(el)?;
        let id = c.id.clone();
        if world.insert(c).is_some() {
            return Err(schema(format!("duplicate construct id {id}")));
        }
    }
    Ok((world, scores, level))
}

pub fn load_status(path: &Path) -> Result<(WorldState, StatusScores, u32), WorldError> {
    let text = fs::read_to_string(path)?;
    Ok(parse_status(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Placement;

    fn addr(s: &str) -> PeerAddress {
        PeerAddress::new(s).unwrap()
    }

    fn cid(s: &str) -> ConstructId {
        s.parse().unwrap()
    }

    fn env(sender: &str, seq: u64, payload: Payload) -> MessageEnvelope {
        MessageEnvelope {
            sender: addr(sender),
            seq,
            group: "alpha".into(),
            payload,
        }
    }

    fn create(sender: &str, seq: u64, id: &str) -> MessageEnvelope {
        env(
            sender,
            seq,
            Payload::Create(Placement {
                id: cid(id),
                construct_type: "house".into(),
                transform: Transform::identity(),
            }),
        )
    }

    fn translate(sender: &str, seq: u64, id: &str, x: i32) -> MessageEnvelope {
        env(
            sender,
            seq,
            Payload::Translate {
                id: cid(id),
                translation: Vec3::new(Decimal::from_int(x), Decimal::ZERO, Decimal::ZERO),
            },
        )
    }

    #[test]
    fn create_at_identity() {
        let mut w = WorldState::new(Some("alpha".into()));
        assert_eq!(
            w.apply_create(&create("P1", 4, "P1#1")).unwrap(),
            Disposition::Applied
        );
        assert_eq!(w.len(), 1);
        let c = w.get(&cid("P1#1")).unwrap();
        assert_eq!(c.transform, Transform::identity());
        assert_eq!(c.last_seq(), 4);
    }

    #[test]
    fn sync_of_known_construct_is_duplicate() {
        let mut w = WorldState::default();
        w.apply_create(&create("P1", 1, "P1#1")).unwrap();
        let before = w.clone();
        let sync = env(
            "P2",
            40,
            Payload::Sync {
                placement: Placement {
                    id: cid("P1#1"),
                    construct_type: "house".into(),
                    transform: Transform::identity(),
                },
                seqs: MutationSeqs::both(1),
            },
        );
        assert_eq!(
            w.apply_create(&sync).unwrap(),
            Disposition::Discarded(DiscardReason::Duplicate)
        );
        assert_eq!(w, before);
    }

    #[test]
    fn newer_sync_refreshes_transform() {
        let mut w = WorldState::default();
        w.apply_create(&create("P1", 1, "P1#1")).unwrap();
        let mut t = Transform::identity();
        t.translation.x = Decimal::from_int(5);
        let sync = env(
            "P2",
            3,
            Payload::Sync {
                placement: Placement {
                    id: cid("P1#1"),
                    construct_type: "house".into(),
                    transform: t,
                },
                seqs: MutationSeqs::both(7),
            },
        );
        assert_eq!(w.apply_create(&sync).unwrap(), Disposition::Applied);
        assert_eq!(w.get(&cid("P1#1")).unwrap().last_seq(), 7);
        assert_eq!(w.get(&cid("P1#1")).unwrap().transform, t);
    }

    #[test]
    fn translation_and_rotation_are_ordered_separately() {
        let id = cid("P1#1");
        let tr = env(
            "P1",
            5,
            Payload::Translate {
                id: id.clone(),
                translation: Vec3::from_f64(1.0, 2.0, 3.0).unwrap(),
            },
        );
        let rot = env(
            "P1",
            6,
            Payload::Rotate {
                id: id.clone(),
                axis: Vec3::from_f64(1.0, 0.0, 0.0).unwrap(),
                angle: Decimal::from_int(45),
            },
        );
        let mut in_order = WorldState::default();
        in_order.apply_create(&create("P1", 1, "P1#1")).unwrap();
        let mut reordered = in_order.clone();
        in_order.apply_move(&tr).unwrap();
        in_order.apply_move(&rot).unwrap();
        assert_eq!(reordered.apply_move(&rot).unwrap(), Disposition::Applied);
        assert_eq!(reordered.apply_move(&tr).unwrap(), Disposition::Applied);
        assert_eq!(reordered.world_section(), in_order.world_section());
        assert_eq!(
            reordered.apply_move(&tr).unwrap(),
            Disposition::Discarded(DiscardReason::Stale)
        );
    }

    #[test]
    fn forged_create_is_rejected() {
        let mut w = WorldState::default();
        assert!(matches!(
            w.apply_create(&create("P2", 1, "P1#1")),
            Err(WorldError::BadConstructId { .. })
        ));
        assert!(w.is_empty());
    }

    #[test]
    fn owner_moves_and_stale_reorders() {
        let mut w = WorldState::default();
        w.apply_create(&create("P1", 4, "P1#1")).unwrap();
        assert_eq!(
            w.apply_move(&translate("P1", 9, "P1#1", 9)).unwrap(),
            Disposition::Applied
        );
        assert_eq!(
            w.apply_move(&translate("P1", 6, "P1#1", 6)).unwrap(),
            Disposition::Discarded(DiscardReason::Stale)
        );
        assert_eq!(
            w.get(&cid("P1#1")).unwrap().transform.translation.x,
            Decimal::from_int(9)
        );
    }

    #[test]
    fn lock_and_unknown() {
        let mut w = WorldState::default();
        w.apply_create(&create("P1", 4, "P1#1")).unwrap();
        let rot = env(
            "P2",
            10,
            Payload::Rotate {
                id: cid("P1#1"),
                axis: Vec3::default(),
                angle: Decimal::from_int(3),
            },
        );
        assert_eq!(
            w.apply_move(&rot).unwrap(),
            Disposition::Discarded(DiscardReason::NotOwner)
        );
        assert_eq!(
            w.apply_move(&translate("P1", 10, "P1#2", 1)).unwrap(),
            Disposition::Discarded(DiscardReason::UnknownConstruct)
        );
    }

    #[test]
    fn empty_status_skeleton() {
        let doc = render_status(&WorldState::default(), StatusScores::default(), 1);
        assert_eq!(
            doc,
            "<world group=\"\" points=\"0\" contribution=\"0\" level=\"1\">\n  <constructs/>\n</world>\n"
        );
        let (w, s, l) = parse_status(&doc).unwrap();
        assert_eq!(
            (w, s, l),
            (WorldState::default(), StatusScores::default(), 1)
        );
    }

    #[test]
    fn status_matches_documented_layout() {
        let mut w = WorldState::new(Some("alpha".into()));
        w.insert(Construct {
            id: cid("P1#1"),
            construct_type: "house".into(),
            transform: Transform {
                translation: Vec3::new(Decimal::from_int(1), Decimal::ZERO, Decimal::from_int(2)),
                axis: Vec3::new(Decimal::ZERO, Decimal::from_int(1), Decimal::ZERO),
                angle: Decimal::from_int(90),
            },
            seqs: MutationSeqs::both(9),
        });
        let doc = render_status(
            &w,
            StatusScores {
                points: 120,
                contribution: 70,
            },
            2,
        );
        let expected = "<world group=\"alpha\" points=\"120\" contribution=\"70\" level=\"2\">
  <constructs>
    <construct id=\"P1#1\" type=\"house\" owner=\"P1\" lastSeq=\"9\">
      <translation x=\"1.000000\" y=\"0.000000\" z=\"2.000000\"/>
      <rotation ax=\"0.000000\" ay=\"1.000000\" az=\"0.000000\" angle=\"90.000000\"/>
    </construct>
  </constructs>
</world>
";
        assert_eq!(doc, expected);
    }

    #[test]
    fn hand_written_minimal_file() {
        let doc = r#"<?xml version="1.0" encoding="UTF-8"?>
<world group="beta" points="10" contribution="10" level="1">
  <constructs>
    <construct id="10.0.0.3:4242#2" type="shop" owner="10.0.0.3:4242" lastSeq="3">
      <translation x="-1.5" y="0" z="4.25"/>
      <rotation ax="0" ay="1" az="0" angle="45"/>
    </construct>
  </constructs>
</world>"#;
        let (w, scores, level) = parse_status(doc).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(scores.points, 10);
        assert_eq!(level, 1);
        let c = w.constructs().next().unwrap();
        assert_eq!(c.transform.translation.x.to_string(), "-1.500000");
        assert_eq!(c.transform.translation.z.to_string(), "4.250000");
        assert_eq!(c.transform.angle.to_string(), "45.000000");
    }

    #[test]
    fn schema_violations() {
        let dup = r#"<world group="" points="0" contribution="0" level="1"><constructs>
<construct id="P1#1" type="a" owner="P1" lastSeq="1"><translation x="0" y="0" z="0"/><rotation ax="0" ay="0" az="0" angle="0"/></construct>
<construct id="P1#1" type="a" owner="P1" lastSeq="1"><translation x="0" y="0" z="0"/><rotation ax="0" ay="0" az="0" angle="0"/></construct>
</constructs></world>"#;
        assert!(matches!(parse_status(dup), Err(XmlError::Schema(_))));
        let unknown = r#"<world group="" points="0" contribution="0" level="1"><constructs/><extra/></world>"#;
        assert!(parse_status(unknown).is_err());
        let bad_decimal = r#"<world group="" points="0" contribution="0" level="1"><constructs>
<construct id="P1#1" type="a" owner="P1" lastSeq="1"><translation x="zero" y="0" z="0"/><rotation ax="0" ay="0" az="0" angle="0"/></construct>
</constructs></world>"#;
        assert!(parse_status(bad_decimal).is_err());
        let owner_mismatch = r#"<world group="" points="0" contribution="0" level="1"><constructs>
<construct id="P1#1" type="a" owner="P2" lastSeq="1"><translation x="0" y="0" z="0"/><rotation ax="0" ay="0" az="0" angle="0"/></construct>
</constructs></world>"#;
        assert!(parse_status(owner_mismatch).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w_status.xml");
        let mut w = WorldState::new(Some("a&b".into()));
        w.apply_create(&create("P1", 2, "P1#1")).unwrap();
        let scores = StatusScores {
            points: 30,
            contribution: 10,
        };
        save_status(&w, scores, 3, &path).unwrap();
        let (w2, s2, l2) = load_status(&path).unwrap();
        assert_eq!((w2, s2, l2), (w.clone(), scores, 3));
        let first = fs::read(&path).unwrap();
        save_status(&w, scores, 3, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert!(matches!(
            load_status(&dir.path().join("missing.xml")),
            Err(WorldError::Io(_))
        ));
    }
}
