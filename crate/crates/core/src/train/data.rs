//! Segment datasets backed by a corpus directory.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{ingest_recording_file, preprocess, PatchBatch, PipelineConfig};
use crate::synth::{Manifest, Split, MANIFEST_FILE};

#[derive(Debug, Clone)]
pub struct Sample {
    pub patches: PatchBatch,
    pub positive: bool,
    /// Manifest row the segment came from.
    pub recording: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.positive).collect()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.samples.iter().filter(|s| s.positive).count();
        p > 0 && p < self.len()
    }
}

/// Train, validation and test segments of one corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Reads `manifest.tsv` under `dir` and preprocesses every recording.
    pub fn load(dir: &Path, pipeline: &PipelineConfig) -> Result<Corpus> {
        let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
        let mut corpus = Corpus::default();
        for (i, row) in manifest.rows.iter().enumerate() {
            let rec = ingest_recording_file(&dir.join(&row.path))?;
            if rec.label != Some(row.label) {
                return Err(Error::InvalidArgument(format!(
                    "{}: file label {:?} disagrees with manifest label {:?}",
                    row.path, rec.label, row.label
                )));
            }
            let target = match row.split {
                Split::Train => &mut corpus.train,
                Split::Val => &mut corpus.val,
                Split::Test => &mut corpus.test,
            };
            for (patches, _) in preprocess(&rec, pipeline)? {
                target.samples.push(Sample {
                    patches,
                    positive: row.label.is_positive(),
                    recording: i,
                });
            }
        }
        Ok(corpus)
    }
}
