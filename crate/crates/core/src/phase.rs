//! NEMA phase numbering for a dual-ring, eight-phase controller.
//!
//! Ring 1 runs phases 1-4, ring 2 runs phases 5-8. The barrier splits each
//! ring into the major-street side {1,2 | 5,6} and the minor-street side
//! {3,4 | 7,8}. Phases 2 and 6 are the coordinated through movements.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Phase(u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ring {
    One,
    Two,
}

/// Which side of the barrier a phase sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    /// Major street: phases 1, 2, 5, 6.
    Major,
    /// Minor street: phases 3, 4, 7, 8.
    Minor,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Major => Side::Minor,
            Side::Minor => Side::Major,
        }
    }
}

impl Phase {
    pub const ALL: [Phase; 8] =
        [Phase(1), Phase(2), Phase(3), Phase(4), Phase(5), Phase(6), Phase(7), Phase(8)];
    /// Non-coordinated phases, the only ones carrying detectors.
    pub const ACTUATED: [Phase; 6] = [Phase(1), Phase(3), Phase(4), Phase(5), Phase(7), Phase(8)];

    pub fn new(n: u8) -> Option<Phase> {
        (1..=8).contains(&n).then_some(Phase(n))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn ring(self) -> Ring {
        if self.0 <= 4 {
            Ring::One
        } else {
            Ring::Two
        }
    }

    pub fn side(self) -> Side {
        match self.0 {
            1 | 2 | 5 | 6 => Side::Major,
            _ => Side::Minor,
        }
    }

    pub fn is_coordinated(self) -> bool {
        self.0 == 2 || self.0 == 6
    }

    /// Odd phases are protected lefts, even phases are throughs.
    pub fn is_left(self) -> bool {
        self.0 % 2 == 1
    }
}

impl Ring {
    pub const BOTH: [Ring; 2] = [Ring::One, Ring::Two];

    pub fn index(self) -> usize {
        match self {
            Ring::One => 0,
            Ring::Two => 1,
        }
    }

    pub fn coordinated(self) -> Phase {
        match self {
            Ring::One => Phase(2),
            Ring::Two => Phase(6),
        }
    }

    /// Phases in standard sequence with leading lefts.
    pub fn sequence(self) -> [Phase; 4] {
        match self {
            Ring::One => [Phase(1), Phase(2), Phase(3), Phase(4)],
            Ring::Two => [Phase(5), Phase(6), Phase(7), Phase(8)],
        }
    }

    /// The ring's phases on one side of the barrier, in service order.
    pub fn side_sequence(self, side: Side) -> [Phase; 2] {
        let s = self.sequence();
        match side {
            Side::Major => [s[0], s[1]],
            Side::Minor => [s[2], s[3]],
        }
    }
}

impl TryFrom<u8> for Phase {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Phase::new(n).ok_or_else(|| format!("phase {n} outside NEMA range 1..=8"))
    }
}

impl From<Phase> for u8 {
    fn from(p: Phase) -> u8 {
        p.0
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_groups() {
        let major: Vec<u8> =
            Phase::ALL.iter().filter(|p| p.side() == Side::Major).map(|p| p.number()).collect();
        assert_eq!(major, vec![1, 2, 5, 6]);
        assert!(Phase::ALL.iter().filter(|p| p.is_coordinated()).all(|p| p.side() == Side::Major));
        assert_eq!(Ring::Two.side_sequence(Side::Minor), [Phase(7), Phase(8)]);
    }

    #[test]
    fn range_checked() {
        assert!(Phase::new(0).is_none());
        assert!(Phase::new(9).is_none());
        let p: Phase = serde_json::from_str("4").unwrap();
        assert_eq!(p.ring(), Ring::One);
        assert!(serde_json::from_str::<Phase>("9").is_err());
    }
}
