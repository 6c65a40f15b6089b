use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Matrix;

/// Synthetic speakers: a Gaussian mean per speaker, Gaussian frames around it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_pretrain_speakers: usize,
    pub pretrain_utterances_per_speaker: usize,
    pub n_finetune_speakers: usize,
    /// Per finetune speaker; the first half enrolls, the second half tests.
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    pub d_in: usize,
    /// Standard deviation of speaker means.
    pub speaker_spread: f64,
    /// Standard deviation of frames around their speaker mean.
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_pretrain_speakers: 20,
            pretrain_utterances_per_speaker: 10,
            n_finetune_speakers: 10,
            utterances_per_speaker: 8,
            frames_per_utterance: 20,
            d_in: 16,
            speaker_spread: 4.0,
            frame_noise: 1.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_finetune_speakers < 2 {
            return Err(Error::Config(format!(
                "need at least 2 finetune speakers, got {}",
                self.n_finetune_speakers
            )));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::Config("finetune speakers need at least 2 utterances (enroll + test)".into()));
        }
        if self.frames_per_utterance == 0 || self.d_in == 0 {
            return Err(Error::Config("frames_per_utterance and d_in must be positive".into()));
        }
        if self.n_pretrain_speakers > 0 && self.pretrain_utterances_per_speaker == 0 {
            return Err(Error::Config("pretrain speakers need utterances".into()));
        }
        if !(self.speaker_spread >= 0.0 && self.frame_noise >= 0.0) {
            return Err(Error::Config("speaker_spread and frame_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_enroll(&self) -> usize {
        self.utterances_per_speaker / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// Index within its speaker set (pretrain or finetune).
    pub speaker: usize,
    /// T×d_in
    pub frames: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub pretrain: Vec<Utterance>,
    pub enroll: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// An enroll/test pair by index into [`Corpus::enroll`] and [`Corpus::test`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialPair {
    pub enroll: usize,
    pub test: usize,
    pub is_target: bool,
}

impl Corpus {
    /// Every enroll×test pair.
    pub fn trials(&self) -> Vec<TrialPair> {
        all_pairs(&self.enroll, &self.test)
    }

    /// Splits pretrain utterances per speaker in half and pairs them, for
    /// judging the pretrained encoder on its own speakers.
    pub fn pretrain_trial_split(&self) -> (Vec<&Utterance>, Vec<&Utterance>) {
        let mut enroll = Vec::new();
        let mut test = Vec::new();
        let mut seen = std::collections::HashMap::<usize, usize>::new();
        let mut per_speaker = std::collections::HashMap::<usize, usize>::new();
        for u in &self.pretrain {
            *per_speaker.entry(u.speaker).or_default() += 1;
        }
        for u in &self.pretrain {
            let c = seen.entry(u.speaker).or_default();
            if *c < per_speaker[&u.speaker] / 2 {
                enroll.push(u);
            } else {
                test.push(u);
            }
            *c += 1;
        }
        (enroll, test)
    }
}

pub fn all_pairs(enroll: &[Utterance], test: &[Utterance]) -> Vec<TrialPair> {
    let mut out = Vec::with_capacity(enroll.len() * test.len());
    for (i, e) in enroll.iter().enumerate() {
        for (j, t) in test.iter().enumerate() {
            out.push(TrialPair { enroll: i, test: j, is_target: e.speaker == t.speaker });
        }
    }
    out
}

fn speaker_utterances(
    rng: &mut ChaCha8Rng,
    spec: &CorpusSpec,
    prefix: &str,
    speaker: usize,
    count: usize,
) -> Vec<Utterance> {
    let mean = Matrix::random_normal(1, spec.d_in, rng).scale(spec.speaker_spread);
    (0..count)
        .map(|u| {
            let noise = Matrix::random_normal(spec.frames_per_utterance, spec.d_in, rng);
            let frames = Matrix::from_fn(spec.frames_per_utterance, spec.d_in, |i, j| {
                mean[(0, j)] + spec.frame_noise * noise[(i, j)]
            });
            Utterance { id: format!("{prefix}{speaker}_u{u}"), speaker, frames }
        })
        .collect()
}

/// Deterministic in `spec.seed`. Pretrain speakers are `p*`, finetune
/// speakers `f*`; speaker identities are drawn independently, so the two
/// sets never share a speaker.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pretrain = Vec::new();
    for s in 0..spec.n_pretrain_speakers {
        pretrain.extend(speaker_utterances(&mut rng, spec, "p", s, spec.pretrain_utterances_per_speaker));
    }
    let n_enroll = spec.n_enroll();
    let mut enroll = Vec::new();
    let mut test = Vec::new();
    for s in 0..spec.n_finetune_speakers {
        let utts = speaker_utterances(&mut rng, spec, "f", s, spec.utterances_per_speaker);
        let (e, t) = utts.split_at(n_enroll);
        enroll.extend_from_slice(e);
        test.extend_from_slice(t);
    }
    Ok(Corpus { pretrain, enroll, test })
}
