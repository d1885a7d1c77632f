use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ArterialNetwork, ExternalVolumes};

pub const DEFAULT_PHF: f64 = 0.92;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandProfile {
    /// Constant hourly rate.
    #[default]
    Flat,
    /// Four 15-minute periods over the analysis hour, the second at the
    /// peak rate V/phf and the others sharing the remainder equally.
    Peaked,
}

/// Entry demand for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandSpec {
    pub volumes: ExternalVolumes,
    pub lt_pct: f64,
    pub phf: f64,
    pub profile: DemandProfile,
}

impl DemandSpec {
    pub fn flat(volumes: ExternalVolumes, lt_pct: f64) -> Self {
        DemandSpec { volumes, lt_pct, phf: DEFAULT_PHF, profile: DemandProfile::Flat }
    }

    pub(crate) fn check(&self, net: &ArterialNetwork) -> Result<()> {
        if !(self.phf > 0.0 && self.phf <= 1.0) {
            return Err(Error::Domain(format!("phf must lie in (0, 1], got {}", self.phf)));
        }
        if self.profile == DemandProfile::Peaked && self.phf < 0.25 {
            return Err(Error::Domain(format!("phf {} too low for a 4-period profile", self.phf)));
        }
        self.volumes.check(net)
    }

    /// Multiplier on the hourly rate for each of the four analysis periods.
    pub fn period_factors(&self) -> [f64; 4] {
        match self.profile {
            DemandProfile::Flat => [1.0; 4],
            DemandProfile::Peaked => {
                let peak = 1.0 / self.phf;
                let rest = (4.0 - peak) / 3.0;
                [rest, peak, rest, rest]
            }
        }
    }
}

/// Piecewise-constant Poisson arrivals: base rate before and after the
/// analysis window, per-period rates inside it.
#[derive(Clone, Debug)]
pub(crate) struct ArrivalClock {
    /// Segment start times; the last segment is open-ended.
    starts: [f64; 6],
    rates: [f64; 6],
    now: f64,
}

impl ArrivalClock {
    pub(crate) fn new(rate_per_s: f64, factors: [f64; 4], warmup: f64, analysis: f64) -> Self {
        let q = analysis / 4.0;
        ArrivalClock {
            starts: [0.0, warmup, warmup + q, warmup + 2.0 * q, warmup + 3.0 * q, warmup + analysis],
            rates: [
                rate_per_s,
                rate_per_s * factors[0],
                rate_per_s * factors[1],
                rate_per_s * factors[2],
                rate_per_s * factors[3],
                rate_per_s,
            ],
            now: 0.0,
        }
    }

    /// Time of the next arrival.
    pub(crate) fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let mut e: f64 = rng.sample(Exp1);
        let mut k = self.starts.iter().rposition(|&s| s <= self.now).unwrap_or(0);
        loop {
            let rate = self.rates[k];
            let end = self.starts.get(k + 1).copied().unwrap_or(f64::INFINITY);
            if rate > 0.0 {
                let span = (end - self.now) * rate;
                if e < span {
                    self.now += e / rate;
                    return self.now;
                }
                e -= span;
            }
            if end.is_infinite() {
                self.now = f64::INFINITY;
                return self.now;
            }
            self.now = end;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn peaked_periods_average_to_hourly() {
        let mut d = DemandSpec::flat(ExternalVolumes::default(), 20.0);
        d.profile = DemandProfile::Peaked;
        let f = d.period_factors();
        assert!((f.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        // Peak 15-min flow = V / (4 phf).
        assert!((f[1] / 4.0 - 1.0 / (4.0 * 0.92)).abs() < 1e-12);
    }

    #[test]
    fn counts_follow_segment_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c = ArrivalClock::new(0.5, [0.0, 2.0, 0.0, 0.0], 100.0, 400.0);
        let mut n = [0usize; 3];
        loop {
            let t = c.next(&mut rng);
            if t >= 500.0 {
                break;
            }
            if t < 100.0 {
                n[0] += 1;
            } else if (200.0..300.0).contains(&t) {
                n[1] += 1;
            } else {
                n[2] += 1;
            }
        }
        // Expected 50, 100, 0.
        assert!((n[0] as f64 - 50.0).abs() < 4.0 * 50f64.sqrt(), "{n:?}");
        assert!((n[1] as f64 - 100.0).abs() < 4.0 * 10.0, "{n:?}");
        assert_eq!(n[2], 0);
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = ArrivalClock::new(0.0, [1.0; 4], 900.0, 3600.0);
        assert!(c.next(&mut rng).is_infinite());
    }
}
