//! Coordinated timing plans.
//!
//! Greens are effective greens; yellow and red clearance are carried per
//! phase and never touched by the actuated-factor transform. Offsets are
//! referenced to the start of coordinated green.
//!
//! Cycle layout, in local time (0 = start of coordinated green): each ring
//! runs `left, coordinated | minor-left, minor-through`, both rings cross
//! the major-side barrier together at `-max(split1, split5)`. With equal
//! leading-left splits the coordinated phases start together at 0;
//! otherwise the ring with the shorter leading left starts its coordinated
//! green early and local 0 is the later of the two starts.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{from_json, Error, Result};
use crate::network::{ArterialNetwork, MovementVolumes};
use crate::phase::{Phase, Ring, Side};

pub const PLAN_SCHEMA: &str = "actf-plan/1";

const RING_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTiming {
    pub green_s: f64,
    pub yellow_s: f64,
    pub rc_s: f64,
    pub min_green_s: f64,
    pub coordinated: bool,
}

impl PhaseTiming {
    pub fn clearance(&self) -> f64 {
        self.yellow_s + self.rc_s
    }

    /// Green plus clearance.
    pub fn split(&self) -> f64 {
        self.green_s + self.clearance()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionTiming {
    pub id: String,
    pub offset_s: f64,
    pub phases: BTreeMap<Phase, PhaseTiming>,
}

impl IntersectionTiming {
    pub fn phase(&self, p: Phase) -> Option<&PhaseTiming> {
        self.phases.get(&p)
    }

    fn split_or_zero(&self, p: Phase) -> f64 {
        self.phases.get(&p).map_or(0.0, PhaseTiming::split)
    }

    pub fn ring_length(&self, ring: Ring) -> f64 {
        ring.sequence().iter().map(|&p| self.split_or_zero(p)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Provenance {
    Base,
    Factored { actf: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingPlan {
    pub cycle_s: f64,
    pub intersections: Vec<IntersectionTiming>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    schema: String,
    cycle_s: f64,
    intersections: Vec<IntersectionTiming>,
    provenance: Provenance,
}

/// Parse an `actf-plan/1` document. The plan is not validated; see
/// [`validate_plan`].
pub fn load_plan(text: &str) -> Result<TimingPlan> {
    let doc: PlanDoc = from_json(text)?;
    if doc.schema != PLAN_SCHEMA {
        return Err(Error::parse("schema", format!("expected `{PLAN_SCHEMA}`, found `{}`", doc.schema)));
    }
    Ok(TimingPlan { cycle_s: doc.cycle_s, intersections: doc.intersections, provenance: doc.provenance })
}

impl TimingPlan {
    pub fn to_json(&self) -> String {
        let doc = PlanDoc {
            schema: PLAN_SCHEMA.into(),
            cycle_s: self.cycle_s,
            intersections: self.intersections.clone(),
            provenance: self.provenance,
        };
        serde_json::to_string_pretty(&doc).expect("plan serializes")
    }

    pub fn intersection(&self, id: &str) -> Option<&IntersectionTiming> {
        self.intersections.iter().find(|i| i.id == id)
    }

    pub fn label(&self) -> String {
        match self.provenance {
            Provenance::Base => "base".into(),
            Provenance::Factored { actf } => format!("factored({actf})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FindingKind {
    RingLengthMismatch,
    MinGreenViolation,
    CoordinationMismatch,
    BadValue,
    DuplicateIntersection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub kind: FindingKind,
    pub intersection: Option<String>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "invalid timing plan: {}",
                self.findings.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; ")
            )))
        }
    }
}

/// List every violated plan invariant. Empty iff the plan is valid.
pub fn validate_plan(plan: &TimingPlan) -> ValidationReport {
    let mut out = ValidationReport::default();
    let mut push = |kind, int: Option<&str>, message: String| {
        out.findings.push(Finding { kind, intersection: int.map(str::to_string), message })
    };
    let c = plan.cycle_s;
    if !(c.is_finite() && c > 0.0) {
        push(FindingKind::BadValue, None, format!("cycle length {c} must be positive"));
        return out;
    }
    if plan.intersections.is_empty() {
        push(FindingKind::BadValue, None, "plan has no intersections".into());
    }
    if let Provenance::Factored { actf } = plan.provenance {
        if !(actf.is_finite() && actf >= 1.0) {
            push(FindingKind::BadValue, None, format!("provenance actf {actf} below 1"));
        }
    }
    let mut seen = HashSet::new();
    for int in &plan.intersections {
        let id = Some(int.id.as_str());
        if !seen.insert(int.id.as_str()) {
            push(FindingKind::DuplicateIntersection, id, format!("intersection `{}` listed twice", int.id));
        }
        if !(int.offset_s.is_finite() && (0.0..c).contains(&int.offset_s)) {
            push(FindingKind::BadValue, id, format!("`{}`: offset {} outside [0, {c})", int.id, int.offset_s));
        }
        for (p, t) in &int.phases {
            let vals = [t.green_s, t.yellow_s, t.rc_s, t.min_green_s];
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                push(FindingKind::BadValue, id, format!("`{}` phase {p}: negative or non-finite interval", int.id));
                continue;
            }
            if t.green_s + 1e-9 < t.min_green_s {
                push(
                    FindingKind::MinGreenViolation,
                    id,
                    format!("`{}` phase {p}: green {} below min green {}", int.id, t.green_s, t.min_green_s),
                );
            }
            if t.coordinated != p.is_coordinated() {
                push(
                    FindingKind::CoordinationMismatch,
                    id,
                    format!("`{}` phase {p}: coordinated flag must be {}", int.id, p.is_coordinated()),
                );
            }
        }
        for ring in Ring::BOTH {
            if !int.phases.contains_key(&ring.coordinated()) {
                push(
                    FindingKind::CoordinationMismatch,
                    id,
                    format!("`{}`: ring {} has no coordinated phase {}", int.id, ring.index() + 1, ring.coordinated()),
                );
                continue;
            }
            let len = int.ring_length(ring);
            if (len - c).abs() > RING_TOL {
                push(
                    FindingKind::RingLengthMismatch,
                    id,
                    format!("`{}`: ring {} length {len} != cycle {c} (ring-length mismatch)", int.id, ring.index() + 1),
                );
            }
        }
    }
    out
}

/// Parameters of the Webster base-plan generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebsterParams {
    /// veh/h/lane
    pub sat_flow: f64,
    pub lost_time_per_phase: f64,
    pub min_cycle: f64,
    pub max_cycle: f64,
    pub yellow_s: f64,
    pub rc_s: f64,
    pub min_green_coordinated: f64,
    pub min_green_actuated: f64,
}

impl Default for WebsterParams {
    fn default() -> Self {
        WebsterParams {
            sat_flow: 1900.0,
            lost_time_per_phase: 4.0,
            min_cycle: 60.0,
            max_cycle: 150.0,
            yellow_s: 3.0,
            rc_s: 1.0,
            // As printed: 2 s coordinated, 7 s non-coordinated.
            min_green_coordinated: 2.0,
            min_green_actuated: 7.0,
        }
    }
}

/// Webster's optimum cycle, `(1.5 L + 5) / (1 - Y)`.
pub fn webster_cycle(lost_time: f64, critical_ratio: f64) -> Result<f64> {
    if !(critical_ratio < 1.0) {
        return Err(Error::Infeasible(format!(
            "critical flow ratio {critical_ratio:.3} >= 1: demand exceeds capacity"
        )));
    }
    Ok((1.5 * lost_time + 5.0) / (1.0 - critical_ratio))
}

/// Clamp to `[min, max]`, then round up to the next multiple of 5 s.
pub fn practical_cycle(webster: f64, min_cycle: f64, max_cycle: f64) -> f64 {
    let c = webster.clamp(min_cycle, max_cycle);
    (c / 5.0 - 1e-9).ceil() * 5.0
}

fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Build the baseline coordinated plan: a common Webster cycle, greens
/// proportional to flow ratios within each barrier group, and eastbound
/// free-flow progression offsets.
pub fn optimize_base_plan(net: &ArterialNetwork, vols: &MovementVolumes, params: &WebsterParams) -> Result<TimingPlan> {
    if vols.approaches.len() != net.intersections().len() {
        return Err(Error::Precondition("movement volumes do not match the network".into()));
    }
    let n = net.intersections().len();
    let mut ratios = vec![[0.0f64; 8]; n];
    let mut cycle = 0.0f64;
    let critical_phases = 4.0;
    for (i, int) in net.intersections().iter().enumerate() {
        for (&p, m) in &int.phases {
            let link = net.feeder(i, m.approach).expect("validated network");
            let lanes = &net.links()[link].lanes;
            let n_lanes = if p.is_left() { lanes.left } else { lanes.through };
            ratios[i][p.index()] = vols.phase_volume(net, i, p) / (params.sat_flow * f64::from(n_lanes));
        }
        let y = |n: u8| ratios[i][usize::from(n - 1)];
        let big_y = (y(1) + y(2)).max(y(5) + y(6)) + (y(3) + y(4)).max(y(7) + y(8));
        let c_w = webster_cycle(critical_phases * params.lost_time_per_phase, big_y)
            .map_err(|e| Error::Infeasible(format!("intersection `{}`: {e}", int.id)))?;
        cycle = cycle.max(practical_cycle(c_w, params.min_cycle, params.max_cycle));
    }

    let travel = net.eastbound_travel_times();
    let mut intersections = Vec::with_capacity(n);
    for (i, int) in net.intersections().iter().enumerate() {
        let y = |p: Phase| ratios[i][p.index()];
        let clearance = params.yellow_s + params.rc_s;
        let min_green = |p: Phase| if p.is_coordinated() { params.min_green_coordinated } else { params.min_green_actuated };

        let side_ratio = |side: Side| {
            Ring::BOTH.iter().map(|r| r.side_sequence(side).iter().map(|&p| y(p)).sum::<f64>()).fold(0.0, f64::max)
        };
        let side_min = |side: Side| {
            Ring::BOTH
                .iter()
                .map(|r| r.side_sequence(side).iter().map(|&p| min_green(p)).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let total_green = cycle - 4.0 * clearance;
        let (ya, yb) = (side_ratio(Side::Major), side_ratio(Side::Minor));
        let mut green_major =
            if ya + yb > 0.0 { round_tenth(total_green * ya / (ya + yb)) } else { round_tenth(total_green / 2.0) };
        let (min_major, min_minor) = (side_min(Side::Major), side_min(Side::Minor));
        if min_major + min_minor > total_green + 1e-9 {
            return Err(Error::Infeasible(format!(
                "intersection `{}`: minimum greens need {:.1} s but cycle {cycle} s leaves {:.1} s",
                int.id,
                min_major + min_minor,
                total_green
            )));
        }
        green_major = green_major.max(min_major).min(total_green - min_minor);
        let green_minor = total_green - green_major;

        let mut phases = BTreeMap::new();
        for ring in Ring::BOTH {
            for (side, side_green) in [(Side::Major, green_major), (Side::Minor, green_minor)] {
                let [first, second] = ring.side_sequence(side);
                let (y1, y2) = (y(first), y(second));
                let mut g1 = if y1 + y2 > 0.0 { round_tenth(side_green * y1 / (y1 + y2)) } else { round_tenth(side_green / 2.0) };
                g1 = g1.max(min_green(first)).min(side_green - min_green(second));
                let g2 = side_green - g1;
                for (p, g) in [(first, g1), (second, g2)] {
                    phases.insert(
                        p,
                        PhaseTiming {
                            green_s: g,
                            yellow_s: params.yellow_s,
                            rc_s: params.rc_s,
                            min_green_s: min_green(p),
                            coordinated: p.is_coordinated(),
                        },
                    );
                }
            }
        }
        intersections.push(IntersectionTiming { id: int.id.clone(), offset_s: round_tenth(travel[i]).rem_euclid(cycle), phases });
    }
    Ok(TimingPlan { cycle_s: cycle, intersections, provenance: Provenance::Base })
}

/// Added green time bookkeeping for one ring of one intersection.
#[derive(Clone, Debug, PartialEq)]
pub struct RingAgt {
    pub intersection: String,
    pub ring: Ring,
    /// Green moved from the coordinated phase to the non-coordinated phases.
    pub added_green_s: f64,
    /// What the unclamped transform would have moved.
    pub raw_added_green_s: f64,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActfTransform {
    pub plan: TimingPlan,
    pub rings: Vec<RingAgt>,
    pub clamp_applied: bool,
}

/// Scale every non-coordinated green by `actf` and take the added time out
/// of the ring's coordinated green, holding cycle, offsets, sequence and
/// clearances fixed. When the coordinated green would fall below its
/// minimum it is held at the minimum and the additions in that ring shrink
/// proportionally.
pub fn apply_actf(base: &TimingPlan, actf: f64) -> Result<ActfTransform> {
    if !(actf.is_finite() && actf >= 1.0) {
        return Err(Error::Domain(format!("actuated factor {actf} must be >= 1")));
    }
    validate_plan(base).into_result()?;

    let mut plan = base.clone();
    let mut rings = Vec::new();
    let mut clamp_applied = false;
    for int in &mut plan.intersections {
        for ring in Ring::BOTH {
            let coord = ring.coordinated();
            let actuated: Vec<Phase> =
                ring.sequence().into_iter().filter(|p| *p != coord && int.phases.contains_key(p)).collect();
            let additions: Vec<f64> = actuated.iter().map(|p| (actf - 1.0) * int.phases[p].green_s).collect();
            let raw: f64 = additions.iter().sum();
            let c = int.phases[&coord];
            let room = c.green_s - c.min_green_s;
            let (scale, clamped) = if raw > room && raw > 0.0 { (room / raw, true) } else { (1.0, false) };
            let mut added = 0.0;
            for (p, a) in actuated.iter().zip(&additions) {
                let t = int.phases.get_mut(p).expect("present");
                let g = t.green_s + a * scale;
                added += g - t.green_s;
                t.green_s = g;
            }
            let ct = int.phases.get_mut(&coord).expect("present");
            ct.green_s = if clamped { ct.min_green_s } else { ct.green_s - added };
            clamp_applied |= clamped;
            rings.push(RingAgt {
                intersection: int.id.clone(),
                ring,
                added_green_s: added,
                raw_added_green_s: raw,
                clamped,
            });
        }
    }
    if actf != 1.0 {
        plan.provenance = Provenance::Factored { actf };
    }
    Ok(ActfTransform { plan, rings, clamp_applied })
}

/// Scheduled service window of one phase, in cycle-clock seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseWindow {
    pub phase: Phase,
    pub green_start: f64,
    /// Scheduled green end: the force-off point (yield point for a
    /// coordinated phase).
    pub green_end: f64,
    pub split_end: f64,
}

/// Where each phase sits in the cycle for one intersection, in the common
/// (system) cycle clock: local time shifted by the offset, modulo cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionSchedule {
    pub id: String,
    pub cycle_s: f64,
    pub offset_s: f64,
    /// Per ring, present phases in service order starting with the coordinated phase.
    pub rings: [Vec<PhaseWindow>; 2],
}

impl IntersectionSchedule {
    pub fn new(plan: &TimingPlan, int: &IntersectionTiming) -> Self {
        let c = plan.cycle_s;
        let s = |n: u8| int.split_or_zero(Phase::new(n).unwrap());
        let barrier = -s(1).max(s(5));
        let rings = Ring::BOTH.map(|ring| {
            let mut t = barrier;
            let mut windows = Vec::new();
            for p in ring.sequence() {
                if let Some(pt) = int.phases.get(&p) {
                    windows.push(PhaseWindow {
                        phase: p,
                        green_start: (t + int.offset_s).rem_euclid(c),
                        green_end: (t + pt.green_s + int.offset_s).rem_euclid(c),
                        split_end: (t + pt.split() + int.offset_s).rem_euclid(c),
                    });
                    t += pt.split();
                }
            }
            // Rotate so the coordinated phase leads.
            if let Some(k) = windows.iter().position(|w| w.phase.is_coordinated()) {
                windows.rotate_left(k);
            }
            windows
        });
        IntersectionSchedule { id: int.id.clone(), cycle_s: c, offset_s: int.offset_s, rings }
    }

    pub fn window(&self, p: Phase) -> Option<&PhaseWindow> {
        self.rings[p.ring().index()].iter().find(|w| w.phase == p)
    }

    /// Yield point of the ring's coordinated phase.
    pub fn yield_point(&self, ring: Ring) -> f64 {
        self.window(ring.coordinated()).map_or(0.0, |w| w.green_end)
    }

    /// Seconds from `from` forward to `to` on the cycle clock, in `[0, C)`.
    pub fn ahead(&self, from: f64, to: f64) -> f64 {
        let d = (to - from).rem_euclid(self.cycle_s);
        if d >= self.cycle_s - 1e-9 {
            0.0
        } else {
            d
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForceOffMode {
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionForceOffs {
    pub id: String,
    pub offset_s: f64,
    /// Non-coordinated phase -> force-off point on the cycle clock, in `[0, C)`.
    pub points: BTreeMap<Phase, f64>,
    /// Coordinated phase -> yield point.
    pub yield_points: BTreeMap<Phase, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceOffTable {
    pub cycle_s: f64,
    pub mode: ForceOffMode,
    pub intersections: Vec<IntersectionForceOffs>,
}

/// Fixed force-off points: each non-coordinated phase's scheduled green end.
pub fn compute_force_offs(plan: &TimingPlan) -> Result<ForceOffTable> {
    validate_plan(plan).into_result()?;
    let intersections = plan
        .intersections
        .iter()
        .map(|int| {
            let sched = IntersectionSchedule::new(plan, int);
            let mut points = BTreeMap::new();
            let mut yield_points = BTreeMap::new();
            for w in sched.rings.iter().flatten() {
                if w.phase.is_coordinated() {
                    yield_points.insert(w.phase, w.green_end);
                } else {
                    points.insert(w.phase, w.green_end);
                }
            }
            IntersectionForceOffs { id: int.id.clone(), offset_s: int.offset_s, points, yield_points }
        })
        .collect();
    Ok(ForceOffTable { cycle_s: plan.cycle_s, mode: ForceOffMode::Fixed, intersections })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::network::{expand_volumes, reference_network, ExternalVolumes};

    fn pt(green: f64, min: f64, coordinated: bool) -> PhaseTiming {
        PhaseTiming { green_s: green, yellow_s: 3.0, rc_s: 1.0, min_green_s: min, coordinated }
    }

    /// Both rings carry greens {left, coord, minor-left, minor-through}.
    pub(crate) fn plan_with(cycle: f64, rings: [[f64; 4]; 2], coord_min: f64, other_min: f64) -> TimingPlan {
        let mut phases = BTreeMap::new();
        for (r, greens) in rings.iter().enumerate() {
            for (k, g) in greens.iter().enumerate() {
                let p = Phase::new((r * 4 + k + 1) as u8).unwrap();
                let min = if p.is_coordinated() { coord_min } else { other_min };
                phases.insert(p, pt(*g, min, p.is_coordinated()));
            }
        }
        TimingPlan {
            cycle_s: cycle,
            intersections: vec![IntersectionTiming { id: "A".into(), offset_s: 0.0, phases }],
            provenance: Provenance::Base,
        }
    }

    /// The 60 s example: ring greens {6, 22, 8, 8}, 4 s clearance each.
    pub(crate) fn sixty_second_plan() -> TimingPlan {
        plan_with(60.0, [[6.0, 22.0, 8.0, 8.0]; 2], 2.0, 5.0)
    }

    fn greens(plan: &TimingPlan, ring: Ring) -> Vec<f64> {
        let int = &plan.intersections[0];
        ring.sequence().iter().map(|p| int.phases[p].green_s).collect()
    }

    #[test]
    fn worked_actf_example() {
        let out = apply_actf(&sixty_second_plan(), 1.10).unwrap();
        for ring in Ring::BOTH {
            let g = greens(&out.plan, ring);
            for (got, want) in g.iter().zip([6.6, 19.8, 8.8, 8.8]) {
                assert!((got - want).abs() < 1e-9, "{g:?}");
            }
            assert!((out.plan.intersections[0].ring_length(ring) - 60.0).abs() < 1e-9);
        }
        assert!((out.rings[0].added_green_s - 2.2).abs() < 1e-9);
        assert!(!out.clamp_applied);
        assert_eq!(out.plan.provenance, Provenance::Factored { actf: 1.10 });
    }

    #[test]
    fn identity_factor() {
        let base = sixty_second_plan();
        let out = apply_actf(&base, 1.0).unwrap();
        assert_eq!(out.plan, base);
        assert_eq!(out.plan.to_json(), base.to_json());
        assert!(out.rings.iter().all(|r| r.added_green_s == 0.0));
        assert!(!out.clamp_applied);
    }

    #[test]
    fn clamp_redistributes_proportionally() {
        // 10 + 12 + 10 + 10 + 16 clearance = 58
        let base = plan_with(58.0, [[10.0, 12.0, 10.0, 10.0]; 2], 10.0, 7.0);
        let out = apply_actf(&base, 1.2).unwrap();
        let g = greens(&out.plan, Ring::One);
        assert!((g[1] - 10.0).abs() < 1e-12);
        for k in [0, 2, 3] {
            assert!((g[k] - (10.0 + 2.0 / 3.0)).abs() < 1e-9, "{g:?}");
        }
        assert!(out.clamp_applied);
        assert!((out.rings[0].raw_added_green_s - 6.0).abs() < 1e-9);
        assert!((out.rings[0].added_green_s - 2.0).abs() < 1e-9);
        assert!((out.plan.intersections[0].ring_length(Ring::One) - 58.0).abs() < 1e-9);
    }

    #[test]
    fn actf_domain() {
        assert!(matches!(apply_actf(&sixty_second_plan(), 0.95), Err(Error::Domain(_))));
        let mut bad = sixty_second_plan();
        bad.cycle_s = 61.0;
        assert!(matches!(apply_actf(&bad, 1.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn validation_findings() {
        assert!(validate_plan(&sixty_second_plan()).is_valid());
        let mut p = sixty_second_plan();
        p.intersections[0].phases.get_mut(&Phase::new(3).unwrap()).unwrap().green_s = 7.0;
        let r = validate_plan(&p);
        assert!(r.has(FindingKind::RingLengthMismatch));
        assert!(r.findings[0].message.contains("ring-length mismatch"));
        let mut p = sixty_second_plan();
        let t = p.intersections[0].phases.get_mut(&Phase::new(4).unwrap()).unwrap();
        t.min_green_s = 9.0;
        assert!(validate_plan(&p).has(FindingKind::MinGreenViolation));
        let mut p = sixty_second_plan();
        p.intersections[0].phases.get_mut(&Phase::new(4).unwrap()).unwrap().coordinated = true;
        assert!(validate_plan(&p).has(FindingKind::CoordinationMismatch));
    }

    #[test]
    fn webster_formula() {
        let c = webster_cycle(16.0, 0.6).unwrap();
        assert!((c - 72.5).abs() < 1e-12);
        assert_eq!(practical_cycle(c, 30.0, 150.0), 75.0);
        assert_eq!(practical_cycle(75.0, 30.0, 150.0), 75.0);
        assert_eq!(practical_cycle(20.0, 60.0, 150.0), 60.0);
        assert!(matches!(webster_cycle(16.0, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn base_plan_on_reference_network() {
        let net = reference_network();
        let v = ExternalVolumes::arterial(826.0, 434.0, [215.0, 217.0, 217.0], [636.0, 652.0, 217.0]);
        let mv = expand_volumes(&net, &v, 20.0).unwrap();
        let plan = optimize_base_plan(&net, &mv, &WebsterParams::default()).unwrap();
        assert!(validate_plan(&plan).is_valid(), "{:?}", validate_plan(&plan));
        assert_eq!(plan.cycle_s % 5.0, 0.0);
        // 300 m at 15.6 m/s between neighbours.
        let i2 = plan.intersection("I2").unwrap();
        assert!((i2.offset_s - 19.2).abs() < 1e-9);
        for int in &plan.intersections {
            let side = |r: Ring, s: Side| r.side_sequence(s).iter().map(|p| int.phases[p].split()).sum::<f64>();
            assert!((side(Ring::One, Side::Major) - side(Ring::Two, Side::Major)).abs() < 1e-9);
        }
    }

    #[test]
    fn oversaturated_design_is_infeasible() {
        let net = reference_network();
        let v = ExternalVolumes::arterial(6000.0, 6000.0, [600.0; 3], [600.0; 3]);
        let mv = expand_volumes(&net, &v, 20.0).unwrap();
        assert!(matches!(optimize_base_plan(&net, &mv, &WebsterParams::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn min_greens_exceeding_cycle_are_infeasible() {
        let net = reference_network();
        let mv = expand_volumes(&net, &ExternalVolumes::arterial(400.0, 400.0, [200.0; 3], [200.0; 3]), 10.0).unwrap();
        let params = WebsterParams { min_green_actuated: 20.0, max_cycle: 60.0, ..WebsterParams::default() };
        assert!(matches!(optimize_base_plan(&net, &mv, &params), Err(Error::Infeasible(_))));
    }

    #[test]
    fn force_offs_at_cumulative_boundaries() {
        let table = compute_force_offs(&sixty_second_plan()).unwrap();
        let fo = &table.intersections[0];
        let at = |n: u8| fo.points[&Phase::new(n).unwrap()];
        // 2: [0,22) +4 -> 3: [26,34) +4 -> 4: [38,46) +4 -> 1: [50,56) +4 -> 60
        assert_eq!((at(3), at(4), at(1)), (34.0, 46.0, 56.0));
        assert_eq!((at(7), at(8), at(5)), (34.0, 46.0, 56.0));
        assert_eq!(fo.yield_points[&Phase::new(2).unwrap()], 22.0);
        assert_eq!(table.mode, ForceOffMode::Fixed);
    }

    #[test]
    fn force_offs_shift_with_offset() {
        let mut p = sixty_second_plan();
        let mut second = p.intersections[0].clone();
        second.id = "B".into();
        second.offset_s = 20.0;
        p.intersections.push(second);
        let t = compute_force_offs(&p).unwrap();
        for (ph, a) in &t.intersections[0].points {
            let b = t.intersections[1].points[ph];
            assert!(((b - a).rem_euclid(60.0) - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unequal_leading_lefts_share_the_barrier() {
        // ring 1 left 10, ring 2 left 6; major side 44 and minor side 36 in both rings.
        let p = plan_with(80.0, [[10.0, 26.0, 14.0, 14.0], [6.0, 30.0, 12.0, 16.0]], 2.0, 5.0);
        assert!(validate_plan(&p).is_valid());
        let s = IntersectionSchedule::new(&p, &p.intersections[0]);
        let w2 = s.window(Phase::new(2).unwrap()).unwrap();
        let w6 = s.window(Phase::new(6).unwrap()).unwrap();
        assert_eq!(w2.green_start, 0.0);
        assert_eq!(w6.green_start, 76.0);
        assert_eq!(w2.green_end, w6.green_end);
        assert_eq!(s.window(Phase::new(3).unwrap()).unwrap().green_start, 30.0);
        assert_eq!(s.window(Phase::new(7).unwrap()).unwrap().green_start, 30.0);
    }

    #[test]
    fn plan_document_round_trip() {
        let p = sixty_second_plan();
        let back = load_plan(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let bad = p.to_json().replace("\"green_s\"", "\"grene_s\"");
        assert!(matches!(load_plan(&bad), Err(Error::Parse { .. })));
    }
}
