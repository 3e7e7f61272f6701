//! Decomposition quality: perceptual similarity of each rendered aspect to
//! the source, combined by harmonic mean.

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{harmonic_mean_score, render_table, MeanStd};
use crate::bridge::{Bridge, BridgeError};
use crate::forge::TripletRecord;
use crate::manifest::ManifestRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompScore {
    pub sample_id: String,
    /// First aspect to source.
    pub sim_a: f64,
    /// Second aspect to source.
    pub sim_b: f64,
    /// Aspect to aspect.
    pub sim_ab: f64,
    pub harmonic: f64,
}

impl ManifestRecord for DecompScore {
    const KIND: &'static str = "decomp_score";
}

impl DecompScore {
    pub fn new(sample_id: impl Into<String>, sim_a: f64, sim_b: f64, sim_ab: f64) -> Self {
        Self {
            sample_id: sample_id.into(),
            sim_a,
            sim_b,
            sim_ab,
            harmonic: harmonic_mean_score(sim_a, sim_b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompReport {
    pub n: usize,
    pub excluded: usize,
    pub sim_a: Option<MeanStd>,
    pub sim_b: Option<MeanStd>,
    pub sim_ab: Option<MeanStd>,
    pub harmonic: Option<MeanStd>,
}

impl DecompReport {
    pub fn render(&self) -> String {
        let cell = |m: &Option<MeanStd>| m.map_or("-".into(), |m| m.display(2));
        render_table(
            &["n", "excluded", "sim a", "sim b", "sim ab", "harmonic"],
            &[vec![
                self.n.to_string(),
                self.excluded.to_string(),
                cell(&self.sim_a),
                cell(&self.sim_b),
                cell(&self.sim_ab),
                cell(&self.harmonic),
            ]],
        )
    }
}

pub fn aggregate_scores(scores: &[DecompScore], excluded: usize) -> DecompReport {
    let col = |f: fn(&DecompScore) -> f64| MeanStd::of(&scores.iter().map(f).collect::<Vec<_>>());
    DecompReport {
        n: scores.len(),
        excluded,
        sim_a: col(|s| s.sim_a),
        sim_b: col(|s| s.sim_b),
        sim_ab: col(|s| s.sim_ab),
        harmonic: col(|s| s.harmonic),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompOutcome {
    pub scores: Vec<DecompScore>,
    /// (triplet id, reason) for every triplet left out.
    pub excluded: Vec<(String, String)>,
    pub report: DecompReport,
}

fn score_one(t: &TripletRecord, bridge: &Bridge) -> Result<DecompScore, BridgeError> {
    let (true, Some(a), Some(b)) = (t.is_ok(), &t.a, &t.b) else {
        return Err(BridgeError::Precondition(format!("triplet status {:?}", t.status)));
    };
    Ok(DecompScore::new(
        t.id.clone(),
        bridge.perceptual_similarity(a, &t.comb)?,
        bridge.perceptual_similarity(b, &t.comb)?,
        bridge.perceptual_similarity(a, b)?,
    ))
}

/// Scores ok triplets; anything else, or any similarity failure, is excluded.
pub fn score_decompositions(triplets: &[TripletRecord], bridge: &Bridge) -> DecompOutcome {
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for t in triplets {
        match score_one(t, bridge) {
            Ok(s) => scores.push(s),
            Err(e) => {
                warn!(triplet = %t.id, error = %e, "excluding triplet from scoring");
                excluded.push((t.id.clone(), e.to_string()));
            }
        }
    }
    let report = aggregate_scores(&scores, excluded.len());
    DecompOutcome {
        scores,
        excluded,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_report() {
        let s = DecompScore::new("x", 0.55, 0.56, 0.31);
        assert!((s.harmonic - 2.0 * 0.55 * 0.56 / 1.11).abs() < 1e-12);
        let r = aggregate_scores(&[s], 0);
        assert_eq!(r.harmonic.unwrap().std, 0.0);
        assert!(r.render().contains("0.55 ± 0.00"));
    }

    #[test]
    fn empty_scores() {
        let r = aggregate_scores(&[], 2);
        assert_eq!((r.n, r.excluded), (0, 2));
        assert!(r.harmonic.is_none());
    }
}
