//! GEH volume calibration.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LINK_THRESHOLD: f64 = 5.0;
pub const NETWORK_THRESHOLD: f64 = 4.0;
pub const LINK_SHARE_REQUIRED: f64 = 0.85;

/// Which GEH formula to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GehConvention {
    /// sqrt((E - V)^2 / ((E + V) / 2))
    #[default]
    Standard,
    /// sqrt((E - V)^2 / (2 (E + V))), half the standard value. Reproduces
    /// published tables that use this form.
    Halved,
}

pub fn geh(e: f64, v: f64) -> f64 {
    geh_with(e, v, GehConvention::Standard)
}

pub fn geh_with(e: f64, v: f64, convention: GehConvention) -> f64 {
    let s = e + v;
    if s == 0.0 {
        return 0.0;
    }
    let d = (e - v) * (e - v);
    match convention {
        GehConvention::Standard => (d / (s / 2.0)).sqrt(),
        GehConvention::Halved => (d / (2.0 * s)).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkCalibration {
    pub link: String,
    /// Target count.
    pub count: f64,
    /// Model estimate.
    pub model: f64,
    pub geh: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub convention: GehConvention,
    pub links: Vec<LinkCalibration>,
    pub total_count: f64,
    pub total_model: f64,
    pub network_geh: f64,
    /// Share of links with GEH below 5.
    pub link_share: f64,
    pub links_pass: bool,
    pub network_pass: bool,
    pub pass: bool,
}

/// Compare model estimates with counts, keyed by link: `link -> (E, V)`.
pub fn check_calibration(pairs: &BTreeMap<String, (f64, f64)>, convention: GehConvention) -> Result<CalibrationReport> {
    if pairs.is_empty() {
        return Err(Error::Precondition("calibration needs at least one link".into()));
    }
    let mut links = Vec::with_capacity(pairs.len());
    let (mut te, mut tv) = (0.0, 0.0);
    for (link, &(e, v)) in pairs {
        if !(e.is_finite() && v.is_finite() && e >= 0.0 && v >= 0.0) {
            return Err(Error::Domain(format!("link `{link}`: volumes must be non-negative, got E={e}, V={v}")));
        }
        let g = geh_with(e, v, convention);
        links.push(LinkCalibration { link: link.clone(), count: v, model: e, geh: g, pass: g < LINK_THRESHOLD });
        te += e;
        tv += v;
    }
    let network_geh = geh_with(te, tv, convention);
    let link_share = links.iter().filter(|l| l.pass).count() as f64 / links.len() as f64;
    let links_pass = link_share >= LINK_SHARE_REQUIRED;
    let network_pass = network_geh < NETWORK_THRESHOLD;
    Ok(CalibrationReport {
        convention,
        links,
        total_count: tv,
        total_model: te,
        network_geh,
        link_share,
        links_pass,
        network_pass,
        pass: links_pass && network_pass,
    })
}

#[derive(Debug, Deserialize)]
struct CountRow {
    link: String,
    count: f64,
}

/// Parse a target-count CSV with columns `link,count`.
pub fn load_counts(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (k, row) in rdr.deserialize::<CountRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(format!("row {}", k + 1), e.to_string()))?;
        if !(row.count.is_finite() && row.count >= 0.0) {
            return Err(Error::parse(format!("row {}.count", k + 1), "count must be a non-negative number"));
        }
        if out.insert(row.link.clone(), row.count).is_some() {
            return Err(Error::parse(format!("row {}.link", k + 1), format!("duplicate link `{}`", row.link)));
        }
    }
    Ok(out)
}

impl CalibrationReport {
    /// CSV with one row per link, then a summary row for the network.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["link", "count", "model", "geh", "pass"])?;
        for l in &self.links {
            w.write_record([
                l.link.clone(),
                format!("{:.1}", l.count),
                format!("{:.1}", l.model),
                format!("{:.3}", l.geh),
                u8::from(l.pass).to_string(),
            ])?;
        }
        w.write_record([
            "network".to_string(),
            format!("{:.1}", self.total_count),
            format!("{:.1}", self.total_model),
            format!("{:.3}", self.network_geh),
            u8::from(self.network_pass).to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {:.0}% of links GEH < 5 ({}), network GEH {:.3} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            100.0 * self.link_share,
            if self.links_pass { "ok" } else { "below 85%" },
            self.network_geh,
            if self.network_pass { "< 4" } else { ">= 4" },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_values() {
        assert_eq!(geh(500.0, 500.0), 0.0);
        assert_eq!(geh(0.0, 0.0), 0.0);
        assert!((geh(832.0, 826.0) - 0.20839).abs() < 1e-5);
        assert!((geh(100.0, 81.0) - 1.99724).abs() < 1e-5);
        assert!((geh_with(832.0, 826.0, GehConvention::Halved) - 0.10419).abs() < 1e-5);
        assert!((geh_with(220.0, 215.0, GehConvention::Halved) - 0.16952).abs() < 1e-5);
    }

    #[test]
    fn one_bad_link_in_ten_still_passes() {
        let mut m = BTreeMap::new();
        for k in 0..9 {
            m.insert(format!("l{k}"), (100.0, 100.0));
        }
        // GEH 6 with V = 100: (E - 100)^2 = 18 (E + 100).
        let e = (218.0 + (218.0f64 * 218.0 - 4.0 * 8200.0).sqrt()) / 2.0;
        m.insert("bad".into(), (e, 100.0));
        let r = check_calibration(&m, GehConvention::Standard).unwrap();
        let bad = r.links.iter().find(|l| l.link == "bad").unwrap();
        assert!((bad.geh - 6.0).abs() < 1e-9, "{}", bad.geh);
        assert!((r.link_share - 0.9).abs() < 1e-12);
        assert!(r.links_pass);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(check_calibration(&BTreeMap::new(), GehConvention::Standard).is_err());
    }

    #[test]
    fn counts_csv() {
        let c = load_counts("link,count\nEB_in, 826\nWB_in,434\n").unwrap();
        assert_eq!(c["EB_in"], 826.0);
        assert!(matches!(load_counts("link,count\nA,-1\n"), Err(Error::Parse { .. })));
        assert!(matches!(load_counts("link,count\nA,1\nA,2\n"), Err(Error::Parse { .. })));
        assert!(matches!(load_counts("link,count\nA,x\n"), Err(Error::Parse { .. })));
    }
}
