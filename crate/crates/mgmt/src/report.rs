//! Post-run report derived only from a rendered trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("line {line}: not a trace line: {text}")]
    Malformed { line: usize, text: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceLine {
    pub t: f64,
    pub kind: String,
    pub attrs: BTreeMap<String, String>,
}

impl TraceLine {
    pub fn parse(line: &str) -> Option<TraceLine> {
        let mut words = line.split(' ');
        let t = words.next()?.strip_prefix("t=")?.parse().ok()?;
        if words.next()? != "EVENT" {
            return None;
        }
        let kind = words.next()?.to_string();
        let mut attrs = BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=')?;
            attrs.insert(k.to_string(), v.to_string());
        }
        Some(TraceLine { t, kind, attrs })
    }

    pub fn get(&self, k: &str) -> &str {
        self.attrs.get(k).map(String::as_str).unwrap_or("")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StationSummary {
    pub hardware: String,
    pub region: String,
    pub profile: String,
    pub liveness: String,
    pub state: String,
    pub drift: u64,
    pub faults: usize,
    /// Latest convergence duration, seconds.
    pub converged_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaultLine {
    pub t: f64,
    pub station: String,
    pub layer: String,
    pub severity: String,
    pub subject: String,
    pub exhausted: bool,
    pub decision: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssertLine {
    pub t: f64,
    pub metric: String,
    pub station: String,
    pub op: String,
    pub expected: String,
    pub actual: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub end: f64,
    pub stations: BTreeMap<String, StationSummary>,
    pub liveness: BTreeMap<String, usize>,
    pub regions: BTreeMap<String, usize>,
    pub faults: Vec<FaultLine>,
    pub assertions: Vec<AssertLine>,
    pub workers: BTreeMap<String, u64>,
    pub digest: Option<String>,
    /// The recomputed digest equals the one recorded in the trace.
    pub digest_ok: bool,
}

impl Report {
    pub fn from_trace(text: &str) -> Result<Report, ReportError> {
        let mut r = Report::default();
        let mut h = Sha256::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.is_empty() {
                continue;
            }
            if let Some(d) = raw.strip_prefix("DIGEST ") {
                r.digest = Some(d.trim().to_string());
                continue;
            }
            let l = TraceLine::parse(raw).ok_or_else(|| ReportError::Malformed {
                line: i + 1,
                text: raw.to_string(),
            })?;
            h.update(raw.as_bytes());
            h.update(b"\n");
            r.end = r.end.max(l.t);
            r.absorb(l);
        }
        r.digest_ok = r.digest.as_deref() == Some(hex::encode(h.finalize()).as_str());
        for s in r.stations.values() {
            if !s.liveness.is_empty() {
                *r.liveness.entry(s.liveness.clone()).or_default() += 1;
            }
            *r.regions.entry(s.region.clone()).or_default() += 1;
        }
        Ok(r)
    }

    fn absorb(&mut self, l: TraceLine) {
        match l.kind.as_str() {
            "REGISTER" => {
                let s = self.stations.entry(l.get("station").into()).or_default();
                s.hardware = l.get("hardware").into();
                s.region = l.get("region").into();
                s.profile = l.get("profile").into();
            }
            "FAULT" => {
                let station = l.get("station").to_string();
                self.stations.entry(station.clone()).or_default().faults += 1;
                self.faults.push(FaultLine {
                    t: l.t,
                    station,
                    layer: l.get("layer").into(),
                    severity: l.get("severity").into(),
                    subject: l.get("subject").into(),
                    exhausted: l.get("exhausted") == "true",
                    decision: l.get("decision").into(),
                });
            }
            "CONVERGED" => {
                let s = self.stations.entry(l.get("station").into()).or_default();
                s.converged_after = l.get("after").parse().ok();
            }
            "FINAL" => {
                let s = self.stations.entry(l.get("station").into()).or_default();
                s.liveness = l.get("liveness").into();
                s.state = l.get("state").into();
                s.drift = l.get("drift").parse().unwrap_or(0);
            }
            "WORKER" => {
                self.workers
                    .insert(l.get("worker").into(), l.get("dispatched").parse().unwrap_or(0));
            }
            "ASSERT" => self.assertions.push(AssertLine {
                t: l.t,
                metric: l.get("metric").into(),
                station: l.get("station").into(),
                op: l.get("op").into(),
                expected: l.get("expected").into(),
                actual: l.get("actual").into(),
                passed: l.get("passed") == "true",
            }),
            _ => {}
        }
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn render(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "stations: {} (end t={:.3})", self.stations.len(), self.end);
        let counts = |m: &BTreeMap<String, usize>| {
            m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(o, "liveness: {}", counts(&self.liveness));
        let _ = writeln!(o, "regions:  {}", counts(&self.regions));
        let drift = self.stations.values().filter(|s| s.drift > 0).count();
        let _ = writeln!(o, "drift:    {drift}");
        let conv: Vec<f64> = self.stations.values().filter_map(|s| s.converged_after).collect();
        if !conv.is_empty() {
            let max = conv.iter().cloned().fold(0.0, f64::max);
            let mean = conv.iter().sum::<f64>() / conv.len() as f64;
            let _ = writeln!(
                o,
                "convergence: {}/{} stations, mean {mean:.3}s, max {max:.3}s",
                conv.len(),
                self.stations.len()
            );
        }
        if !self.workers.is_empty() {
            let w: Vec<String> = self.workers.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(o, "workers:  {}", w.join(" "));
        }
        let _ = writeln!(o, "faults:   {}", self.faults.len());
        for f in &self.faults {
            let _ = writeln!(
                o,
                "  t={:.3} {} {} {} {}{} -> {}",
                f.t,
                f.station,
                f.layer,
                f.severity,
                f.subject,
                if f.exhausted { " [ladder exhausted]" } else { "" },
                f.decision
            );
        }
        let failed = self.assertions.iter().filter(|a| !a.passed).count();
        let _ = writeln!(o, "assertions: {} ({} failed)", self.assertions.len(), failed);
        for a in &self.assertions {
            let _ = writeln!(
                o,
                "  {} t={:.3} {} station={} {} {} (actual {})",
                if a.passed { "PASS" } else { "FAIL" },
                a.t,
                a.metric,
                a.station,
                a.op,
                a.expected,
                a.actual
            );
        }
        let _ = writeln!(
            o,
            "digest: {} ({})",
            self.digest.as_deref().unwrap_or("-"),
            if self.digest_ok { "verified" } else { "MISMATCH" }
        );
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(lines: &[&str]) -> String {
        let mut h = Sha256::new();
        let mut s = String::new();
        for l in lines {
            h.update(l.as_bytes());
            h.update(b"\n");
            s.push_str(l);
            s.push('\n');
        }
        s + &format!("DIGEST {}\n", hex::encode(h.finalize()))
    }

    #[test]
    fn parses_attrs_with_equals_in_value() {
        let l = TraceLine::parse("t=1.500000 EVENT FAULT station=a decision=Quarantine(x=1)").unwrap();
        assert_eq!(l.t, 1.5);
        assert_eq!(l.get("decision"), "Quarantine(x=1)");
        assert!(TraceLine::parse("t=1 NOPE X").is_none());
    }

    #[test]
    fn summarizes_and_verifies() {
        let text = trace(&[
            "t=0.000000 EVENT REGISTER station=a hardware=h profile=GPRS region=URBAN",
            "t=0.000000 EVENT REGISTER station=b hardware=g profile=UMTS region=RURAL",
            "t=3.000000 EVENT CONVERGED station=a after=3.000000",
            "t=4.000000 EVENT FAULT station=b layer=Function severity=Critical subject=x exhausted=false decision=",
            "t=9.000000 EVENT ASSERT metric=converged station=* op=== expected=true actual=false passed=false",
            "t=9.000000 EVENT FINAL station=a region=URBAN profile=GPRS liveness=ONLINE state=RUNNING drift=0",
            "t=9.000000 EVENT FINAL station=b region=RURAL profile=UMTS liveness=OFFLINE state=FAILED drift=2",
        ]);
        let r = Report::from_trace(&text).unwrap();
        assert!(r.digest_ok);
        assert_eq!(r.stations["a"].converged_after, Some(3.0));
        assert_eq!(r.stations["b"].faults, 1);
        assert_eq!(r.liveness["OFFLINE"], 1);
        assert!(!r.all_passed());
        assert!(r.render().contains("FAIL t=9.000 converged"));

        let tampered = text.replace("drift=2", "drift=0");
        assert!(!Report::from_trace(&tampered).unwrap().digest_ok);
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert_eq!(
            Report::from_trace("garbage\n"),
            Err(ReportError::Malformed {
                line: 1,
                text: "garbage".into()
            })
        );
    }
}
