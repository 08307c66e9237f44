//! Dataset files, the synthetic conversation generator, and
//! conversation-level splits.
//!
//! File format: line-delimited JSON. The first line is a header
//! `{"classes":[..],"dims":[text,audio,visual]}`; every following line is one
//! utterance record. Records of a conversation keep their file order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DgodeError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub classes: Vec<String>,
    pub dims: [usize; 3],
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub conversation: String,
    pub utterance: usize,
    pub speaker: String,
    pub label: String,
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub index: usize,
    pub speaker: String,
    pub label: usize,
    /// Text, audio, visual.
    pub features: [Vec<f64>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub dims: [usize; 3],
    pub conversations: Vec<Conversation>,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(|c| c.utterances.len()).sum()
    }

    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.conversations.iter().flat_map(|c| c.utterances.iter().map(|u| u.speaker.as_str())).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Utterance counts per class.
    pub fn class_support(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for u in self.conversations.iter().flat_map(|c| &c.utterances) {
            counts[u.label] += 1;
        }
        counts
    }

    fn with_conversations(&self, conversations: Vec<Conversation>) -> Dataset {
        Dataset { classes: self.classes.clone(), dims: self.dims, conversations }
    }

    pub fn to_jsonl(&self) -> String {
        let header = DatasetHeader { classes: self.classes.clone(), dims: self.dims };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for conv in &self.conversations {
            for u in &conv.utterances {
                let [text, audio, visual] = u.features.clone();
                let record = UtteranceRecord {
                    conversation: conv.id.clone(),
                    utterance: u.index,
                    speaker: u.speaker.clone(),
                    label: self.classes[u.label].clone(),
                    text,
                    audio,
                    visual,
                };
                let _ = writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"));
            }
        }
        out
    }
}

fn check_dims(dims: &[usize; 3], record: &UtteranceRecord, line: usize) -> Result<()> {
    let got = [record.text.len(), record.audio.len(), record.visual.len()];
    for (name, (want, have)) in ["text", "audio", "visual"].iter().zip(dims.iter().zip(got)) {
        if *want != have {
            return Err(DgodeError::Dimension(format!("line {line}: {name} vector has {have} entries, header declares {want}")));
        }
    }
    let finite = record.text.iter().chain(&record.audio).chain(&record.visual).all(|v| v.is_finite());
    if !finite {
        return Err(DgodeError::Parse { line, message: "non-finite feature value".into() });
    }
    Ok(())
}

/// Parses a dataset from any line-oriented reader.
pub fn read_dataset(reader: impl BufRead) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: DatasetHeader = loop {
        match lines.next() {
            None => return Err(DgodeError::Parse { line: 1, message: "missing header".into() }),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| DgodeError::Parse { line: i + 1, message: e.to_string() })?;
            }
        }
    };
    if header.classes.is_empty() {
        return Err(DgodeError::Config("header declares no classes".into()));
    }
    let mut dataset = Dataset { classes: header.classes, dims: header.dims, conversations: Vec::new() };
    let mut position: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| DgodeError::Parse { line: line_no, message: e.to_string() })?;
        check_dims(&dataset.dims, &record, line_no)?;
        let label = dataset
            .classes
            .iter()
            .position(|c| *c == record.label)
            .ok_or_else(|| DgodeError::UnknownLabel { line: line_no, label: record.label.clone() })?;
        let slot = *position.entry(record.conversation.clone()).or_insert_with(|| {
            dataset.conversations.push(Conversation { id: record.conversation.clone(), utterances: Vec::new() });
            dataset.conversations.len() - 1
        });
        dataset.conversations[slot].utterances.push(Utterance {
            index: record.utterance,
            speaker: record.speaker,
            label,
            features: [record.text, record.audio, record.visual],
        });
    }
    Ok(dataset)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DgodeError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(file))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(dataset.to_jsonl().as_bytes())?;
    Ok(())
}

/// Train, validation and test fractions used when none are configured.
pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.15, 0.15];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub conversations: usize,
    /// Inclusive range of utterances per conversation.
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub speakers: usize,
    pub classes: usize,
    pub dims: [usize; 3],
    /// Norm of each class mean.
    pub separation: f64,
    pub noise: f64,
    /// Weight of the previous utterance's class mean added to the current features.
    pub drift: f64,
    /// Probability that an utterance keeps the previous utterance's class.
    pub stay: f64,
    /// Extra sampling weight a speaker gives its preferred classes.
    pub speaker_bias: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            conversations: 150,
            min_utterances: 8,
            max_utterances: 16,
            speakers: 2,
            classes: 4,
            dims: [16, 12, 8],
            separation: 1.0,
            noise: 0.6,
            drift: 0.5,
            stay: 0.5,
            speaker_bias: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DgodeError::Config(m.into()));
        if self.conversations == 0 || self.speakers == 0 || self.classes < 2 {
            return bad("synthetic data needs conversations, speakers and at least two classes");
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return bad("utterance range must be nonempty and start at 1 or more");
        }
        if self.dims.iter().any(|&d| d < self.classes) {
            return bad("every modal dimension must be at least the class count");
        }
        if !(self.separation > 0.0 && self.noise > 0.0) {
            return bad("separation and noise must be positive");
        }
        if !(0.0..1.0).contains(&self.stay) || self.drift < 0.0 || self.speaker_bias < 0.0 {
            return bad("stay must lie in [0,1); drift and speaker bias must be nonnegative");
        }
        Ok(())
    }

    /// Class sampling weights of speaker `s` (normalized).
    pub fn speaker_distribution(&self, s: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..self.classes).map(|c| if c % self.speakers == s % self.speakers { 1.0 + self.speaker_bias } else { 1.0 }).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// Long-run class frequencies: speakers are drawn uniformly, so the
    /// class chain is a lazy walk toward the speaker-averaged distribution.
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.classes];
        for s in 0..self.speakers {
            for (acc, p) in q.iter_mut().zip(self.speaker_distribution(s)) {
                *acc += p / self.speakers as f64;
            }
        }
        q
    }
}

fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// `classes` orthonormal directions in `R^dim`, scaled to `norm`.
fn class_means(rng: &mut impl Rng, classes: usize, dim: usize, norm: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while basis.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-6 {
            basis.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    basis.into_iter().map(|b| b.into_iter().map(|x| x * norm).collect()).collect()
}

/// Class-conditional Gaussian conversations; a pure function of `config`.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let means: Vec<Vec<Vec<f64>>> = config.dims.iter().map(|&d| class_means(&mut rng, config.classes, d, config.separation)).collect();
    let speaker_probs: Vec<Vec<f64>> = (0..config.speakers).map(|s| config.speaker_distribution(s)).collect();
    let mut conversations = Vec::with_capacity(config.conversations);
    for c in 0..config.conversations {
        let len = rng.random_range(config.min_utterances..=config.max_utterances);
        let mut utterances: Vec<Utterance> = Vec::with_capacity(len);
        for i in 0..len {
            let speaker = rng.random_range(0..config.speakers);
            let prev = utterances.last().map(|u| u.label);
            let label = match prev {
                Some(p) if rng.random::<f64>() < config.stay => p,
                _ => sample_index(&mut rng, &speaker_probs[speaker]),
            };
            let features = std::array::from_fn(|m| {
                (0..config.dims[m])
                    .map(|k| {
                        let carried = prev.map_or(0.0, |p| config.drift * means[m][p][k]);
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        means[m][label][k] + carried + config.noise * noise
                    })
                    .collect()
            });
            utterances.push(Utterance { index: i, speaker: format!("s{speaker}"), label, features });
        }
        conversations.push(Conversation { id: format!("conv{c:04}"), utterances });
    }
    Ok(Dataset { classes: (0..config.classes).map(|c| format!("c{c}")).collect(), dims: config.dims, conversations })
}

/// Shuffles conversations with `seed` and cuts them into train/val/test.
/// Validation and test sizes are floored; the remainder goes to train.
pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DgodeError::Config(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let n = dataset.conversations.len();
    let size = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let (val_n, test_n) = (size(fractions[1]), size(fractions[2]));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| dataset.with_conversations(idx.iter().map(|&i| dataset.conversations[i].clone()).collect());
    let train_n = n - val_n - test_n;
    Ok((take(&order[..train_n]), take(&order[train_n..train_n + val_n]), take(&order[train_n + val_n..])))
}
