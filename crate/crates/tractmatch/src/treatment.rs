//! Treatment binarization from structure counts.
//!
//! Sparse structure types (at most one per tract) binarize naturally: any
//! structure means treated. Dense types are thresholded at the median count,
//! and tracts in the two deciles just below the median are dropped so
//! borderline tracts cannot contaminate the control group.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Treated,
    Control,
    Dropped,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Label::Treated => "treated",
            Label::Control => "control",
            Label::Dropped => "dropped",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Sparse,
    Dense,
}

/// Percentile band of tracts dropped by the dense rule, as fractions of rank.
/// The default [0.30, 0.50) covers the fourth and fifth deciles.
pub const DEFAULT_DROP_BAND: (f64, f64) = (0.30, 0.50);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub labels: BTreeMap<String, Label>,
    pub counts: BTreeMap<String, f64>,
    pub threshold: f64,
    pub kind: StructureKind,
}

impl TreatmentAssignment {
    pub fn geoids_with(&self, label: Label) -> Vec<String> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(g, _)| g.clone())
            .collect()
    }

    pub fn n_with(&self, label: Label) -> usize {
        self.labels.values().filter(|l| **l == label).count()
    }

    /// Audit CSV: `geoid,label,count,threshold`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("geoid,label,count,threshold\n");
        for (geoid, label) in &self.labels {
            out.push_str(&format!(
                "{geoid},{label},{},{}\n",
                self.counts[geoid], self.threshold
            ));
        }
        out
    }
}

/// Sparse rule: treated iff the tract contains at least one structure.
pub fn classify_sparse(counts: &BTreeMap<String, f64>) -> TreatmentAssignment {
    let labels = counts
        .iter()
        .map(|(geoid, &c)| {
            let label = if c >= 1.0 {
                Label::Treated
            } else {
                Label::Control
            };
            (geoid.clone(), label)
        })
        .collect();
    TreatmentAssignment {
        labels,
        counts: counts.clone(),
        threshold: 0.0,
        kind: StructureKind::Sparse,
    }
}

/// Median of a sorted slice, midpoint convention for even length.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Dense rule: threshold at the median count; drop tracts whose midrank
/// percentile lies in `drop_band`; otherwise treated iff count > threshold.
///
/// Percentile rank of a tract = (#strictly smaller + half the ties) / n.
pub fn classify_dense(
    counts: &BTreeMap<String, f64>,
    drop_band: (f64, f64),
) -> Result<TreatmentAssignment> {
    let n = counts.len();
    if n < 10 {
        return Err(Error::Data(format!(
            "dense classification needs at least 10 tracts, got {n} (deciles undefined)"
        )));
    }
    let (band_lo, band_hi) = drop_band;
    if !(0.0..=1.0).contains(&band_lo) || !(0.0..=1.0).contains(&band_hi) || band_lo > band_hi {
        return Err(Error::Config(format!(
            "invalid drop band [{band_lo}, {band_hi})"
        )));
    }
    let mut sorted: Vec<f64> = counts.values().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = median_sorted(&sorted);

    let labels = counts
        .iter()
        .map(|(geoid, &c)| {
            let smaller = sorted.partition_point(|&v| v < c);
            let not_larger = sorted.partition_point(|&v| v <= c);
            let ties = not_larger - smaller;
            let rank = (smaller as f64 + 0.5 * ties as f64) / n as f64;
            let label = if rank >= band_lo && rank < band_hi {
                Label::Dropped
            } else if c > threshold {
                Label::Treated
            } else {
                Label::Control
            };
            (geoid.clone(), label)
        })
        .collect();
    Ok(TreatmentAssignment {
        labels,
        counts: counts.clone(),
        threshold,
        kind: StructureKind::Dense,
    })
}
