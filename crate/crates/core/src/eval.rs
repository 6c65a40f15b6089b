//! Verification scoring: cosine scores, EER and minDCF.
//!
//! Decisions accept when `score >= threshold`. Operating points are taken at
//! every distinct score plus a reject-all point just above the largest score.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, norm};

pub fn cosine_score(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::Shape(format!("embeddings of length {} and {}", e1.len(), e2.len())));
    }
    let (n1, n2) = (norm(e1), norm(e2));
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::Numeric("cosine score of a zero-norm embedding".into()));
    }
    Ok((dot(e1, e2) / (n1 * n2)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub score: f64,
    pub is_target: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    trials: Vec<Trial>,
    n_target: usize,
    n_nontarget: usize,
}

impl TrialSet {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        if trials.iter().any(|t| !t.score.is_finite()) {
            return Err(Error::Numeric("trial scores must be finite".into()));
        }
        let n_target = trials.iter().filter(|t| t.is_target).count();
        let n_nontarget = trials.len() - n_target;
        if n_target == 0 || n_nontarget == 0 {
            return Err(Error::Precondition(format!(
                "trial set needs both classes, got {n_target} target / {n_nontarget} nontarget"
            )));
        }
        Ok(TrialSet { trials, n_target, n_nontarget })
    }

    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        let trials = targets
            .iter()
            .map(|&score| Trial { score, is_target: true })
            .chain(nontargets.iter().map(|&score| Trial { score, is_target: false }))
            .collect();
        TrialSet::new(trials)
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_nontarget(&self) -> usize {
        self.n_nontarget
    }

    /// Operating points `(threshold, P_miss, P_fa)` in ascending threshold
    /// order, ending with the reject-all point.
    pub fn operating_points(&self) -> Vec<(f64, f64, f64)> {
        let mut sorted: Vec<Trial> = self.trials.clone();
        sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
        let nt = self.n_target as f64;
        let nn = self.n_nontarget as f64;
        let mut points = Vec::new();
        // counts of trials strictly below the current threshold
        let (mut tgt_below, mut non_below) = (0usize, 0usize);
        let mut i = 0;
        while i < sorted.len() {
            let theta = sorted[i].score;
            points.push((theta, tgt_below as f64 / nt, (self.n_nontarget - non_below) as f64 / nn));
            while i < sorted.len() && sorted[i].score == theta {
                if sorted[i].is_target {
                    tgt_below += 1;
                } else {
                    non_below += 1;
                }
                i += 1;
            }
        }
        let top = sorted.last().map(|t| t.score).unwrap_or(0.0);
        points.push((top.next_up(), 1.0, 0.0));
        points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams { p_target: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config(format!("p_target {} outside (0, 1)", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(())
    }

    /// Normalized detection cost at one operating point.
    pub fn normalized_dcf(&self, p_miss: f64, p_fa: f64) -> f64 {
        let raw = self.c_miss * p_miss * self.p_target + self.c_fa * p_fa * (1.0 - self.p_target);
        raw / (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
}

/// Equal error rate with linear interpolation between the two operating
/// points that bracket the FRR/FAR crossing. Returns `(eer, threshold)`.
pub fn compute_eer(t: &TrialSet) -> (f64, f64) {
    let points = t.operating_points();
    // FRR − FAR rises from −1 at the lowest score to +1 at reject-all
    let mut prev = points[0];
    for &p in &points {
        let (theta, frr, far) = p;
        if frr >= far {
            if frr == far {
                return (frr, theta);
            }
            let (t0, frr0, far0) = prev;
            let d0 = frr0 - far0;
            let d1 = frr - far;
            let w = -d0 / (d1 - d0);
            let eer = frr0 + w * (frr - frr0);
            return (eer, t0 + w * (theta - t0));
        }
        prev = p;
    }
    unreachable!("reject-all point always has FRR >= FAR")
}

/// Minimum normalized DCF over every operating point, including accept-all
/// and reject-all. Returns `(min_dcf, threshold)`.
pub fn compute_min_dcf(t: &TrialSet, params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    let mut best = (f64::INFINITY, 0.0);
    for (theta, p_miss, p_fa) in t.operating_points() {
        let dcf = params.normalized_dcf(p_miss, p_fa);
        if dcf < best.0 {
            best = (dcf, theta);
        }
    }
    Ok(best)
}

pub fn evaluate(t: &TrialSet, params: &DcfParams) -> Result<MetricResult> {
    let (eer, eer_threshold) = compute_eer(t);
    let (min_dcf, dcf_threshold) = compute_min_dcf(t, params)?;
    Ok(MetricResult { eer, eer_threshold, min_dcf, dcf_threshold })
}

/// One line of a trial-score file: `enroll_id,test_id,score,is_target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    #[serde(with = "bool_as_int")]
    pub is_target: bool,
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("is_target must be 0 or 1, got {other}"))),
        }
    }
}

/// Writes trials without a header row.
pub fn write_trials<W: Write>(out: W, trials: &[ScoredTrial]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for t in trials {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials<R: Read>(input: R) -> Result<Vec<ScoredTrial>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn trial_set(scored: &[ScoredTrial]) -> Result<TrialSet> {
    TrialSet::new(scored.iter().map(|t| Trial { score: t.score, is_target: t.is_target }).collect())
}

/// Metric report as written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn report(t: &TrialSet, params: &DcfParams) -> Result<MetricReport> {
    let m = evaluate(t, params)?;
    Ok(MetricReport {
        eer: m.eer,
        min_dcf: m.min_dcf,
        p_target: params.p_target,
        c_miss: params.c_miss,
        c_fa: params.c_fa,
        n_target: t.n_target(),
        n_nontarget: t.n_nontarget(),
    })
}
