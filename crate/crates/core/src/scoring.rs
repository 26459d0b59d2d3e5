//! Wake-word detection scoring: false reject rate plus false alarm rate.
//!
//! A keyword fires when `score >= threshold`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "wake")]
    Wake,
    #[serde(rename = "non-wake")]
    NonWake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

/// Validated set of scored utterances: unique ids, scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    entries: Vec<ScoredUtterance>,
}

impl LabeledScores {
    pub fn new(entries: Vec<ScoredUtterance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::input(format!("duplicate utterance id {:?}", e.id)));
            }
            if !(0.0..=1.0).contains(&e.score) {
                return Err(Error::Validation(format!(
                    "utterance {:?}: score {} outside [0, 1]",
                    e.id, e.score
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ScoredUtterance] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let wake = self.entries.iter().filter(|e| e.label == Label::Wake).count();
        let non_wake = self.entries.len() - wake;
        if wake == 0 || non_wake == 0 {
            return Err(Error::input(format!(
                "scoring needs both classes (wake: {wake}, non-wake: {non_wake})"
            )));
        }
        Ok((wake, non_wake))
    }

    /// Reads a CSV with header `id,label,score`.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["id", "label", "score"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Validation(format!(
                "CSV header must be `id,label,score`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let entries = rdr
            .deserialize::<ScoredUtterance>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => Error::Csv(e),
                _ => Error::Validation(e.to_string()),
            })?;
        Self::new(entries)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }
}

/// One operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
    pub score: f64,
}

impl OperatingPoint {
    /// `FRR x.xx% FAR y.yy% Score z.zz%`
    pub fn render_percent(&self) -> String {
        format!(
            "FRR {:.2}% FAR {:.2}% Score {:.2}%",
            self.frr * 100.0,
            self.far * 100.0,
            self.score * 100.0
        )
    }
}

/// FRR, FAR and their sum at `threshold`.
pub fn score(entries: &LabeledScores, threshold: f64) -> Result<OperatingPoint> {
    if !threshold.is_finite() {
        return Err(Error::input("threshold must be finite"));
    }
    let (n_wake, n_non_wake) = entries.class_counts()?;
    let mut false_rejects = 0usize;
    let mut false_alarms = 0usize;
    for e in entries.entries() {
        let fires = e.score >= threshold;
        match e.label {
            Label::Wake if !fires => false_rejects += 1,
            Label::NonWake if fires => false_alarms += 1,
            _ => {}
        }
    }
    let frr = false_rejects as f64 / n_wake as f64;
    let far = false_alarms as f64 / n_non_wake as f64;
    Ok(OperatingPoint {
        threshold,
        frr,
        far,
        score: frr + far,
    })
}

/// Operating points at every distinct score (accepting everything at or
/// above it) plus one threshold just above the maximum that rejects all.
/// Thresholds are ascending.
pub fn sweep(entries: &LabeledScores) -> Result<Vec<OperatingPoint>> {
    let (n_wake, n_non_wake) = entries.class_counts()?;
    // per distinct score: (wake count, non-wake count)
    let mut by_score: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for e in entries.entries() {
        // scores are in [0, 1] so the bit pattern orders like the value
        let key = (e.score + 0.0).to_bits();
        let slot = by_score.entry(key).or_default();
        match e.label {
            Label::Wake => slot.0 += 1,
            Label::NonWake => slot.1 += 1,
        }
    }
    let mut points = Vec::with_capacity(by_score.len() + 1);
    let mut wake_below = 0usize;
    let mut non_wake_below = 0usize;
    let mut last = 0.0;
    for (key, (w, nw)) in by_score {
        let threshold = f64::from_bits(key);
        let frr = wake_below as f64 / n_wake as f64;
        let far = (n_non_wake - non_wake_below) as f64 / n_non_wake as f64;
        points.push(OperatingPoint {
            threshold,
            frr,
            far,
            score: frr + far,
        });
        wake_below += w;
        non_wake_below += nw;
        last = threshold;
    }
    points.push(OperatingPoint {
        threshold: f64::from_bits(last.to_bits() + 1),
        frr: 1.0,
        far: 0.0,
        score: 1.0,
    });
    Ok(points)
}

/// Operating point with the lowest score (first one on ties).
pub fn best_operating_point(points: &[OperatingPoint]) -> Option<OperatingPoint> {
    points
        .iter()
        .copied()
        .reduce(|best, p| if p.score < best.score { p } else { best })
}

/// Per-utterance mean of several systems' scores (decision-level fusion).
pub fn average_scores(systems: &[LabeledScores]) -> Result<LabeledScores> {
    let first = systems.first().ok_or_else(|| Error::input("no systems to average"))?;
    let mut sums: BTreeMap<&str, (Label, f64)> = first
        .entries()
        .iter()
        .map(|e| (e.id.as_str(), (e.label, e.score)))
        .collect();
    for (k, sys) in systems.iter().enumerate().skip(1) {
        if sys.len() != first.len() {
            return Err(Error::input(format!(
                "system {k} has {} utterances, system 0 has {}",
                sys.len(),
                first.len()
            )));
        }
        for e in sys.entries() {
            let slot = sums
                .get_mut(e.id.as_str())
                .ok_or_else(|| Error::input(format!("system {k} has unknown id {:?}", e.id)))?;
            if slot.0 != e.label {
                return Err(Error::input(format!("system {k} labels {:?} differently", e.id)));
            }
            slot.1 += e.score;
        }
    }
    let n = systems.len() as f64;
    let entries = first
        .entries()
        .iter()
        .map(|e| {
            let (label, total) = sums[e.id.as_str()];
            ScoredUtterance {
                id: e.id.clone(),
                label,
                score: (total / n).clamp(0.0, 1.0),
            }
        })
        .collect();
    LabeledScores::new(entries)
}

/// Summary written by the `score` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub frr: f64,
    pub far: f64,
    pub score: f64,
    pub threshold: f64,
}

impl From<OperatingPoint> for ScoreReport {
    fn from(p: OperatingPoint) -> Self {
        Self {
            frr: p.frr,
            far: p.far,
            score: p.score,
            threshold: p.threshold,
        }
    }
}

pub fn write_sweep_csv<W: std::io::Write>(points: &[OperatingPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
