//! Arterial network description and demand expansion.
//!
//! The network document (`actf-net/1`) lists intersections with their NEMA
//! phase-to-movement map and stop-line detectors, the links feeding each
//! approach, and the external entry points where demand is injected.
//!
//! An approach is named by the side vehicles arrive from: a `W` approach
//! carries eastbound traffic.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{from_json, Error, Result};
use crate::phase::Phase;

pub const NETWORK_SCHEMA: &str = "actf-net/1";

/// Right turns are a fixed share of every approach volume.
pub const RIGHT_TURN_SHARE: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    N,
    S,
    E,
    W,
}

/// Compass direction of travel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    North,
    South,
    East,
    West,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Turn {
    L,
    T,
    R,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::N, Approach::S, Approach::E, Approach::W];

    pub fn opposite(self) -> Approach {
        match self {
            Approach::N => Approach::S,
            Approach::S => Approach::N,
            Approach::E => Approach::W,
            Approach::W => Approach::E,
        }
    }

    /// Direction of travel of vehicles on this approach.
    pub fn heading(self) -> Heading {
        match self {
            Approach::N => Heading::South,
            Approach::S => Heading::North,
            Approach::E => Heading::West,
            Approach::W => Heading::East,
        }
    }

    /// Heading after executing `turn` from this approach.
    pub fn exit_heading(self, turn: Turn) -> Heading {
        let h = self.heading();
        match turn {
            Turn::T => h,
            Turn::L => h.left(),
            Turn::R => h.right(),
        }
    }

    fn perpendicular(self, other: Approach) -> bool {
        matches!(
            (self, other),
            (Approach::N | Approach::S, Approach::E | Approach::W)
                | (Approach::E | Approach::W, Approach::N | Approach::S)
        )
    }
}

impl Heading {
    fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    fn right(self) -> Heading {
        self.left().left().left()
    }

    /// The approach a vehicle with this heading uses at the next intersection.
    pub fn arrival_approach(self) -> Approach {
        match self {
            Heading::North => Approach::S,
            Heading::South => Approach::N,
            Heading::East => Approach::W,
            Heading::West => Approach::E,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Movement {
    pub approach: Approach,
    pub turn: Turn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detector {
    pub zone_length_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intersection {
    pub id: String,
    pub phases: BTreeMap<Phase, Movement>,
    #[serde(default)]
    pub detectors: BTreeMap<Phase, Detector>,
}

impl Intersection {
    /// Phase serving the given movement group. Right turns ride with the
    /// through phase of their approach.
    pub fn phase_for(&self, approach: Approach, turn: Turn) -> Option<Phase> {
        let wanted = if turn == Turn::R { Turn::T } else { turn };
        self.phases
            .iter()
            .find(|(_, m)| m.approach == approach && m.turn == wanted)
            .map(|(p, _)| *p)
    }
}

/// Lane counts per movement group on the approach a link feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lanes {
    pub left: u32,
    /// Through lanes; right turns share them.
    pub through: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: String,
    /// Upstream intersection or external entry id.
    pub from: String,
    /// Downstream intersection id.
    pub to: String,
    /// Approach of `to` this link feeds. Optional for links leaving an
    /// external entry, where it is implied by the entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach: Option<Approach>,
    pub length_m: f64,
    pub ffs_mps: f64,
    pub lanes: Lanes,
}

impl Link {
    pub fn free_flow_time(&self) -> f64 {
        self.length_m / self.ffs_mps
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEntry {
    pub id: String,
    pub intersection: String,
    pub approach: Approach,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    schema: String,
    intersections: Vec<Intersection>,
    links: Vec<Link>,
    externals: Vec<ExternalEntry>,
}

/// A validated arterial. Immutable once loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ArterialNetwork {
    intersections: Vec<Intersection>,
    links: Vec<Link>,
    externals: Vec<ExternalEntry>,
    // (intersection index, approach) -> link index
    feeders: HashMap<(usize, Approach), usize>,
}

/// Parse and validate a network document.
pub fn load_network(text: &str) -> Result<ArterialNetwork> {
    let doc: NetworkDoc = from_json(text)?;
    if doc.schema != NETWORK_SCHEMA {
        return Err(Error::parse(
            "schema",
            format!("expected `{NETWORK_SCHEMA}`, found `{}`", doc.schema),
        ));
    }
    ArterialNetwork::new(doc.intersections, doc.links, doc.externals)
}

/// The three-intersection reference arterial shipped with the crate.
pub fn reference_network() -> ArterialNetwork {
    load_network(REFERENCE_NETWORK_JSON).expect("bundled reference network is valid")
}

pub const REFERENCE_NETWORK_JSON: &str = include_str!("../data/reference_network.json");

/// Peak-hour entry volumes and left-turn rate for the reference arterial.
pub const REFERENCE_VOLUMES_JSON: &str = include_str!("../data/reference_volumes.json");

pub fn reference_volumes() -> (ExternalVolumes, f64) {
    load_volumes(REFERENCE_VOLUMES_JSON).expect("bundled reference volumes are valid")
}

impl ArterialNetwork {
    pub fn new(
        intersections: Vec<Intersection>,
        mut links: Vec<Link>,
        externals: Vec<ExternalEntry>,
    ) -> Result<Self> {
        let mut findings = Vec::new();

        let mut int_index: HashMap<&str, usize> = HashMap::new();
        for (i, int) in intersections.iter().enumerate() {
            if int.id.is_empty() {
                findings.push(format!("intersections[{i}]: empty id"));
            }
            if int_index.insert(int.id.as_str(), i).is_some() {
                findings.push(format!("duplicate intersection id `{}`", int.id));
            }
            check_phase_map(int, &mut findings);
        }

        let mut ext_index: HashMap<&str, usize> = HashMap::new();
        for (i, ext) in externals.iter().enumerate() {
            if int_index.contains_key(ext.id.as_str()) {
                findings.push(format!("external id `{}` collides with an intersection id", ext.id));
            }
            if ext_index.insert(ext.id.as_str(), i).is_some() {
                findings.push(format!("duplicate external id `{}`", ext.id));
            }
            if !int_index.contains_key(ext.intersection.as_str()) {
                findings.push(format!(
                    "external `{}` references unknown intersection `{}`",
                    ext.id, ext.intersection
                ));
            }
        }

        let mut link_ids = HashSet::new();
        let mut feeders = HashMap::new();
        let mut ext_links: HashMap<&str, usize> = HashMap::new();
        for (k, link) in links.iter_mut().enumerate() {
            if !link_ids.insert(link.id.clone()) {
                findings.push(format!("duplicate link id `{}`", link.id));
            }
            if !(link.length_m.is_finite() && link.length_m > 0.0) {
                findings.push(format!("link `{}`: length_m must be positive", link.id));
            }
            if !(link.ffs_mps.is_finite() && link.ffs_mps > 0.0) {
                findings.push(format!("link `{}`: ffs_mps must be positive", link.id));
            }
            if link.lanes.through == 0 || link.lanes.left == 0 {
                findings.push(format!(
                    "link `{}`: protected lefts need at least one left and one through lane",
                    link.id
                ));
            }
            let Some(&to) = int_index.get(link.to.as_str()) else {
                findings.push(format!("link `{}` references unknown intersection `{}`", link.id, link.to));
                continue;
            };
            if let Some(&e) = ext_index.get(link.from.as_str()) {
                let ext = &externals[e];
                if ext.intersection != link.to {
                    findings.push(format!(
                        "link `{}` leaves external `{}` but does not reach its intersection `{}`",
                        link.id, ext.id, ext.intersection
                    ));
                }
                match link.approach {
                    Some(a) if a != ext.approach => findings.push(format!(
                        "link `{}` approach {:?} disagrees with external `{}` approach {:?}",
                        link.id, a, ext.id, ext.approach
                    )),
                    _ => link.approach = Some(ext.approach),
                }
                if ext_links.insert(ext.id.as_str(), k).is_some() {
                    findings.push(format!("external `{}` has more than one link", ext.id));
                }
            } else if int_index.contains_key(link.from.as_str()) {
                if link.from == link.to {
                    findings.push(format!("link `{}` is a self loop", link.id));
                }
                if link.approach.is_none() {
                    findings.push(format!("link `{}`: approach is required between intersections", link.id));
                }
            } else {
                findings.push(format!("link `{}` references unknown node `{}`", link.id, link.from));
                continue;
            }
            if let Some(a) = link.approach {
                if feeders.insert((to, a), k).is_some() {
                    findings.push(format!("approach {:?} of `{}` is fed by more than one link", a, link.to));
                }
            }
        }

        for ext in &externals {
            if !ext_links.contains_key(ext.id.as_str()) && int_index.contains_key(ext.intersection.as_str()) {
                findings.push(format!("external `{}` has no entry link", ext.id));
            }
        }
        for (i, int) in intersections.iter().enumerate() {
            for a in Approach::ALL {
                let served = int.phases.values().any(|m| m.approach == a);
                if served && !feeders.contains_key(&(i, a)) {
                    findings.push(format!("approach {:?} of `{}` has no feeding link", a, int.id));
                }
            }
        }

        if intersections.is_empty() {
            findings.push("network has no intersections".into());
        }
        if !findings.is_empty() {
            return Err(Error::Validation { findings });
        }
        Ok(ArterialNetwork { intersections, links, externals, feeders })
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn externals(&self) -> &[ExternalEntry] {
        &self.externals
    }

    pub fn intersection_index(&self, id: &str) -> Option<usize> {
        self.intersections.iter().position(|i| i.id == id)
    }

    /// Link index feeding the given approach.
    pub fn feeder(&self, intersection: usize, approach: Approach) -> Option<usize> {
        self.feeders.get(&(intersection, approach)).copied()
    }

    /// Internal link leaving `intersection` with the given heading, if any.
    pub fn outgoing(&self, intersection: usize, heading: Heading) -> Option<usize> {
        let from = &self.intersections[intersection].id;
        let arrival = heading.arrival_approach();
        self.links.iter().position(|l| &l.from == from && l.approach == Some(arrival))
    }

    pub fn external_link(&self, external: &str) -> Option<usize> {
        self.links.iter().position(|l| l.from == external)
    }

    /// Free-flow offsets along the eastbound direction: each chain of
    /// intersections joined by eastbound links starts at 0 and accumulates
    /// link travel time. Intersections off any chain get 0. Not reduced
    /// modulo the cycle.
    pub fn eastbound_travel_times(&self) -> Vec<f64> {
        let n = self.intersections.len();
        let mut offset = vec![0.0; n];
        for start in 0..n {
            let fed_internally = self
                .feeder(start, Approach::W)
                .is_some_and(|k| self.intersection_index(&self.links[k].from).is_some());
            if fed_internally {
                continue;
            }
            let mut visited = vec![false; n];
            let mut cur = start;
            visited[cur] = true;
            while let Some(k) = self.outgoing(cur, Heading::East) {
                let Some(next) = self.intersection_index(&self.links[k].to) else { break };
                if visited[next] {
                    break;
                }
                offset[next] = offset[cur] + self.links[k].free_flow_time();
                visited[next] = true;
                cur = next;
            }
        }
        offset
    }

    /// Serialize back to an `actf-net/1` document.
    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            schema: NETWORK_SCHEMA.into(),
            intersections: self.intersections.clone(),
            links: self.links.clone(),
            externals: self.externals.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }
}

fn check_phase_map(int: &Intersection, findings: &mut Vec<String>) {
    let id = &int.id;
    if int.phases.len() != 8 {
        findings.push(format!("intersection `{id}` maps {} phases, expected 8", int.phases.len()));
        return;
    }
    for (p, m) in &int.phases {
        let want = if p.is_left() { Turn::L } else { Turn::T };
        if m.turn != want {
            findings.push(format!(
                "intersection `{id}` phase {p}: expected turn {want:?}, found {:?} (right turns ride with the through phase)",
                m.turn
            ));
        }
    }
    let at = |n: u8| int.phases[&Phase::new(n).unwrap()].approach;
    // Ring pairs on each side must be concurrent-safe: the coordinated
    // throughs oppose each other and each leading left sits on the approach
    // of the opposite ring's through.
    let pairs = [(2, 6, 1, 5), (4, 8, 3, 7)];
    for (t1, t2, l1, l2) in pairs {
        if at(t1) != at(t2).opposite() || at(l1) != at(t2) || at(l2) != at(t1) {
            findings.push(format!(
                "intersection `{id}`: phases {l1},{t1},{l2},{t2} do not form a NEMA dual-ring pairing"
            ));
        }
    }
    if !at(2).perpendicular(at(4)) {
        findings.push(format!("intersection `{id}`: phases 2 and 4 must serve crossing streets"));
    }
    for (p, d) in &int.detectors {
        if p.is_coordinated() {
            findings.push(format!("intersection `{id}`: coordinated phase {p} must not carry a detector"));
        }
        if !(d.zone_length_m.is_finite() && d.zone_length_m > 0.0) {
            findings.push(format!("intersection `{id}` detector {p}: zone_length_m must be positive"));
        }
    }
    for p in Phase::ACTUATED {
        if !int.detectors.contains_key(&p) {
            findings.push(format!("intersection `{id}`: actuated phase {p} has no stop-line detector"));
        }
    }
}

/// External demand in veh/h keyed by external entry id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExternalVolumes(pub BTreeMap<String, f64>);

impl ExternalVolumes {
    /// Volumes for the reference arterial's entry ids (`EB`, `WB`, `NB1`..`NB3`, `SB1`..`SB3`).
    pub fn arterial(eb: f64, wb: f64, nb: [f64; 3], sb: [f64; 3]) -> Self {
        let mut m = BTreeMap::new();
        m.insert("EB".to_string(), eb);
        m.insert("WB".to_string(), wb);
        for i in 0..3 {
            m.insert(format!("NB{}", i + 1), nb[i]);
            m.insert(format!("SB{}", i + 1), sb[i]);
        }
        ExternalVolumes(m)
    }

    pub fn get(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        ExternalVolumes(self.0.iter().map(|(id, v)| (id.clone(), v * k)).collect())
    }

    pub(crate) fn check(&self, net: &ArterialNetwork) -> Result<()> {
        for (id, v) in &self.0 {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Domain(format!("volume for `{id}` must be a non-negative number, got {v}")));
            }
            if !net.externals.iter().any(|e| &e.id == id) {
                return Err(Error::Unknown { kind: "external entry", name: id.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumesDoc {
    schema: String,
    lt_pct: f64,
    volumes: ExternalVolumes,
}

pub const VOLUMES_SCHEMA: &str = "actf-vol/1";

/// Parse an `actf-vol/1` demand document: entry volumes plus left-turn rate.
pub fn load_volumes(text: &str) -> Result<(ExternalVolumes, f64)> {
    let doc: VolumesDoc = from_json(text)?;
    if doc.schema != VOLUMES_SCHEMA {
        return Err(Error::parse("schema", format!("expected `{VOLUMES_SCHEMA}`, found `{}`", doc.schema)));
    }
    check_lt_rate(doc.lt_pct)?;
    for (id, v) in &doc.volumes.0 {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(Error::parse(format!("volumes.{id}"), "volume must be a non-negative number"));
        }
    }
    Ok((doc.volumes, doc.lt_pct))
}

pub fn volumes_to_json(vols: &ExternalVolumes, lt_pct: f64) -> String {
    let doc = VolumesDoc { schema: VOLUMES_SCHEMA.into(), lt_pct, volumes: vols.clone() };
    serde_json::to_string_pretty(&doc).expect("volumes serialize")
}

/// Turning shares for a given left-turn rate in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurnShares {
    pub left: f64,
    pub through: f64,
    pub right: f64,
}

impl TurnShares {
    pub fn from_lt_rate(lt_pct: f64) -> Result<Self> {
        check_lt_rate(lt_pct)?;
        let left = lt_pct / 100.0;
        Ok(TurnShares { left, right: RIGHT_TURN_SHARE, through: 1.0 - left - RIGHT_TURN_SHARE })
    }

    pub fn share(&self, turn: Turn) -> f64 {
        match turn {
            Turn::L => self.left,
            Turn::T => self.through,
            Turn::R => self.right,
        }
    }
}

fn check_lt_rate(lt_pct: f64) -> Result<()> {
    if !lt_pct.is_finite() || lt_pct < 0.0 || lt_pct + RIGHT_TURN_SHARE * 100.0 > 100.0 {
        return Err(Error::Domain(format!("left-turn rate {lt_pct}% leaves no room for the 10% right-turn share")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ApproachVolumes {
    pub left: f64,
    pub through: f64,
    pub right: f64,
}

impl ApproachVolumes {
    pub fn total(&self) -> f64 {
        self.left + self.through + self.right
    }
}

/// Per-intersection, per-approach movement volumes in veh/h.
#[derive(Clone, Debug, PartialEq)]
pub struct MovementVolumes {
    pub approaches: Vec<BTreeMap<Approach, ApproachVolumes>>,
}

impl MovementVolumes {
    pub fn approach(&self, intersection: usize, approach: Approach) -> ApproachVolumes {
        self.approaches[intersection].get(&approach).copied().unwrap_or_default()
    }

    /// Volume served by a phase: the left movement for odd phases, through
    /// plus right for even phases.
    pub fn phase_volume(&self, net: &ArterialNetwork, intersection: usize, phase: Phase) -> f64 {
        let m = net.intersections[intersection].phases[&phase];
        let v = self.approach(intersection, m.approach);
        match m.turn {
            Turn::L => v.left,
            Turn::T | Turn::R => v.through + v.right,
        }
    }
}

/// Expand entry volumes into movement volumes: every approach splits into
/// `lt_pct`% left, 10% right and the remainder through; flows leaving an
/// intersection onto an internal link are added to the downstream approach.
pub fn expand_volumes(net: &ArterialNetwork, ext: &ExternalVolumes, lt_pct: f64) -> Result<MovementVolumes> {
    ext.check(net)?;
    let shares = TurnShares::from_lt_rate(lt_pct)?;
    let n = net.intersections.len();

    let mut inject: Vec<BTreeMap<Approach, f64>> = vec![BTreeMap::new(); n];
    for e in &net.externals {
        let i = net.intersection_index(&e.intersection).expect("validated");
        *inject[i].entry(e.approach).or_default() += ext.get(&e.id);
    }

    // Downstream targets of each (intersection, approach, turn).
    let mut routes: HashMap<(usize, Approach, Turn), (usize, Approach)> = HashMap::new();
    for i in 0..n {
        for a in Approach::ALL {
            for t in [Turn::L, Turn::T, Turn::R] {
                let h = a.exit_heading(t);
                if let Some(k) = net.outgoing(i, h) {
                    let to = net.intersection_index(&net.links[k].to).expect("validated");
                    routes.insert((i, a, t), (to, h.arrival_approach()));
                }
            }
        }
    }

    // Fixed point of approach volume = injected + upstream turning flows.
    // Converges in at most n+1 sweeps on an arterial; the cap guards
    // networks with loops, where turning shares below one make it contract.
    let mut vol = inject.clone();
    for _ in 0..10_000 {
        let mut next = inject.clone();
        for (&(i, a, t), &(j, b)) in &routes {
            let v = vol[i].get(&a).copied().unwrap_or(0.0);
            *next[j].entry(b).or_default() += v * shares.share(t);
        }
        let delta = (0..n)
            .flat_map(|i| Approach::ALL.map(|a| (i, a)))
            .map(|(i, a)| {
                (next[i].get(&a).copied().unwrap_or(0.0) - vol[i].get(&a).copied().unwrap_or(0.0)).abs()
            })
            .fold(0.0, f64::max);
        vol = next;
        if delta < 1e-9 {
            break;
        }
    }

    let approaches = vol
        .into_iter()
        .map(|m| {
            m.into_iter()
                .map(|(a, v)| {
                    (a, ApproachVolumes { left: v * shares.left, through: v * shares.through, right: v * shares.right })
                })
                .collect()
        })
        .collect();
    Ok(MovementVolumes { approaches })
}

/// One leg of a vehicle route: the stop line it crosses and how it turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Leg {
    pub intersection: usize,
    pub approach: Approach,
    pub turn: Turn,
    /// Link travelled to reach this stop line.
    pub link: usize,
}

/// A route from an external entry through the network, with its share of
/// the entry volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub entry: String,
    pub legs: Vec<Leg>,
    pub probability: f64,
}

impl Route {
    /// Stable identifier used to key random streams.
    pub fn key(&self, net: &ArterialNetwork) -> String {
        let mut s = self.entry.clone();
        for leg in &self.legs {
            s.push('>');
            s.push_str(&net.intersections[leg.intersection].id);
            s.push(':');
            s.push(match leg.turn {
                Turn::L => 'L',
                Turn::T => 'T',
                Turn::R => 'R',
            });
        }
        s
    }

    pub fn free_flow_time(&self, net: &ArterialNetwork) -> f64 {
        self.legs.iter().map(|l| net.links[l.link].free_flow_time()).sum()
    }
}

/// Enumerate every route from every external entry. Routes whose
/// probability falls below 1e-9 are dropped.
pub fn enumerate_routes(net: &ArterialNetwork, lt_pct: f64) -> Result<Vec<Route>> {
    let shares = TurnShares::from_lt_rate(lt_pct)?;
    let max_depth = 4 * net.intersections.len() + 4;
    let mut out = Vec::new();
    for e in &net.externals {
        let i = net.intersection_index(&e.intersection).expect("validated");
        let link = net.external_link(&e.id).expect("validated");
        let mut legs = Vec::new();
        walk(net, &shares, &e.id, i, e.approach, link, 1.0, max_depth, &mut legs, &mut out);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    net: &ArterialNetwork,
    shares: &TurnShares,
    entry: &str,
    i: usize,
    a: Approach,
    link: usize,
    prob: f64,
    depth: usize,
    legs: &mut Vec<Leg>,
    out: &mut Vec<Route>,
) {
    for t in [Turn::L, Turn::T, Turn::R] {
        let p = prob * shares.share(t);
        if p < 1e-9 {
            continue;
        }
        legs.push(Leg { intersection: i, approach: a, turn: t, link });
        let h = a.exit_heading(t);
        match net.outgoing(i, h) {
            Some(k) if depth > 0 => {
                let j = net.intersection_index(&net.links[k].to).expect("validated");
                walk(net, shares, entry, j, h.arrival_approach(), k, p, depth - 1, legs, out);
            }
            _ => out.push(Route { entry: entry.to_string(), legs: legs.clone(), probability: p }),
        }
        legs.pop();
    }
}
