//! Conversations, the line-delimited dataset format, label taxonomies,
//! train/test splitting and the synthetic generator.

mod synth;
mod taxonomy;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};

pub use synth::{generate_synthetic, SynthConfig};
pub use taxonomy::{LabelTaxonomy, TaxonomySpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub text: usize,
    pub audio: usize,
    pub visual: usize,
}

impl Default for ModalityDims {
    fn default() -> Self {
        Self {
            text: 200,
            audio: 100,
            visual: 100,
        }
    }
}

impl ModalityDims {
    pub fn total(&self) -> usize {
        self.text + self.audio + self.visual
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.text, self.audio, self.visual]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub label: String,
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

impl Utterance {
    pub fn modality(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Text => &self.text,
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "T")]
    Text,
    #[serde(rename = "A")]
    Audio,
    #[serde(rename = "V")]
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Audio => 1,
            Modality::Visual => 2,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Modality::Text => "T",
            Modality::Audio => "A",
            Modality::Visual => "V",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Local speaker index per utterance, numbered by first appearance.
    pub fn speaker_indices(&self) -> (Vec<usize>, usize) {
        let mut seen: Vec<&str> = Vec::new();
        let idx = self
            .utterances
            .iter()
            .map(|u| match seen.iter().position(|s| *s == u.speaker) {
                Some(i) => i,
                None => {
                    seen.push(&u.speaker);
                    seen.len() - 1
                }
            })
            .collect();
        (idx, seen.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub taxonomy: TaxonomySpec,
    pub dims: ModalityDims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub taxonomy: LabelTaxonomy,
    pub conversations: Vec<Conversation>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, conversations: Vec<Conversation>) -> Result<Self> {
        let taxonomy = manifest.taxonomy.resolve()?;
        let ds = Self {
            manifest,
            taxonomy,
            conversations,
        };
        for c in &ds.conversations {
            ds.validate_conversation(c)?;
        }
        Ok(ds)
    }

    pub fn dims(&self) -> ModalityDims {
        self.manifest.dims
    }

    pub fn n_utterances(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    /// Largest number of distinct speakers in any conversation.
    pub fn max_speakers(&self) -> usize {
        self.conversations
            .iter()
            .map(|c| c.speaker_indices().1)
            .max()
            .unwrap_or(0)
    }

    pub fn with_conversations(&self, conversations: Vec<Conversation>) -> Self {
        Self {
            manifest: self.manifest.clone(),
            taxonomy: self.taxonomy.clone(),
            conversations,
        }
    }

    fn validate_conversation(&self, c: &Conversation) -> Result<()> {
        if c.utterances.is_empty() {
            return Err(Error::Dataset(format!("conversation {} has no utterances", c.id)));
        }
        let dims = self.manifest.dims;
        for (i, u) in c.utterances.iter().enumerate() {
            for m in Modality::ALL {
                let want = dims.as_array()[m.index()];
                let got = u.modality(m).len();
                if got != want {
                    return Err(Error::Dataset(format!(
                        "conversation {} utterance {i}: {} vector has {got} entries, manifest says {want}",
                        c.id,
                        m.name()
                    )));
                }
                if u.modality(m).iter().any(|v| !v.is_finite()) {
                    return Err(Error::Dataset(format!(
                        "conversation {} utterance {i}: non-finite {} feature",
                        c.id,
                        m.name()
                    )));
                }
            }
            self.taxonomy
                .fine_index(&u.label)
                .map_err(|e| Error::Dataset(format!("conversation {} utterance {i}: {e}", c.id)))?;
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.manifest)?;
        w.write_all(b"\n")?;
        for c in &self.conversations {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let manifest: DatasetManifest = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Load {
                line: 1,
                msg: format!("bad manifest: {e}"),
            })?,
            None => {
                return Err(Error::Load {
                    line: 1,
                    msg: "missing manifest".into(),
                })
            }
        };
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Load {
                line: 1,
                msg: format!("unsupported format_version {}", manifest.format_version),
            });
        }
        if manifest.dims.as_array().contains(&0) {
            return Err(Error::Load {
                line: 1,
                msg: "modality dims must be positive".into(),
            });
        }
        let mut ds = Dataset::new(manifest, Vec::new()).map_err(|e| Error::Load {
            line: 1,
            msg: e.to_string(),
        })?;
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let conv: Conversation = serde_json::from_str(&line).map_err(|e| Error::Load {
                line: lineno,
                msg: e.to_string(),
            })?;
            ds.validate_conversation(&conv).map_err(|e| Error::Load {
                line: lineno,
                msg: e.to_string(),
            })?;
            ds.conversations.push(conv);
        }
        Ok(ds)
    }
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    ds.write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::read_from(BufReader::new(std::fs::File::open(path)?))
}

/// Splits at conversation granularity: a seeded shuffle, then the first
/// `round(ratio * n)` conversations go to the training side.
pub fn split_train_test(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = ds.conversations.len();
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "ratio {ratio} over {n} conversations leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(Purpose::Shuffle, seed).shuffle(&mut order);
    let (a, b) = order.split_at(n_train);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        ds.with_conversations(idx.iter().map(|&i| ds.conversations[i].clone()).collect())
    };
    Ok((pick(a), pick(b)))
}
