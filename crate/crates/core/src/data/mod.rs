//! Dataset layout, batching, frame I/O and the synthetic generator.

pub mod batch;
pub mod io;
pub mod manifest;
pub mod synth;

pub use batch::{batch_iterator, sequence_windows, BatchIterator, Window};
pub use io::{read_frame, read_mask, FrameImage};
pub use manifest::{scan_dataset, DatasetManifest, SequenceEntry, Split, MANIFEST_SCHEMA_VERSION};
pub use synth::{generate_synthetic, synthetic_sequences, BodyShape, RenderMode, SyntheticConfig, SyntheticSequence};

use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::preproc::{preprocess_depth, preprocess_rgb, BodyIndexMask, NetworkInput};

/// A sequence of preprocessed network inputs.
#[derive(Clone, Debug)]
pub struct PreparedSequence {
    /// 0-based class label.
    pub label: usize,
    pub person_id: u32,
    pub sequence_id: u32,
    pub split: Split,
    pub frames: Vec<NetworkInput>,
    /// Known only for generated data.
    pub corrupted: Option<Vec<bool>>,
}

/// Every sequence of a dataset, preprocessed and held in memory.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub classes: usize,
    pub sequences: Vec<PreparedSequence>,
}

pub fn prepare_frame(image: &FrameImage, mask: Option<&BodyIndexMask>, offset: u16) -> Result<NetworkInput> {
    match image {
        FrameImage::Depth(d) => preprocess_depth(d, mask, offset),
        FrameImage::Rgb { width, height, pixels } => preprocess_rgb(*width, *height, pixels, mask),
    }
}

impl PreparedDataset {
    /// Read and preprocess every frame listed in `manifest`.
    pub fn load(manifest: &DatasetManifest, offset: u16) -> Result<Self> {
        let mut sequences = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let mut frames = Vec::with_capacity(entry.frames.len());
            for (i, rel) in entry.frames.iter().enumerate() {
                let path = manifest.root.join(rel);
                let image = read_frame(&path)?;
                let mask = match &entry.masks {
                    Some(m) => Some(read_mask(&manifest.root.join(&m[i]))?),
                    None => None,
                };
                let input = prepare_frame(&image, mask.as_ref(), offset).map_err(|e| Error::dataset(&path, e.to_string()))?;
                frames.push(input);
            }
            sequences.push(PreparedSequence {
                label: entry.label(),
                person_id: entry.person_id,
                sequence_id: entry.sequence_id,
                split: entry.split,
                frames,
                corrupted: None,
            });
        }
        Ok(PreparedDataset {
            classes: manifest.classes,
            sequences,
        })
    }

    /// Generate and preprocess a synthetic dataset without touching disk.
    pub fn synthetic(cfg: &SyntheticConfig, rng: &RngStream, offset: u16) -> Result<Self> {
        let mut sequences = Vec::new();
        for seq in synthetic_sequences(cfg, rng)? {
            let seq = seq?;
            let frames = seq
                .frames
                .iter()
                .map(|f| prepare_frame(&f.image, Some(&f.mask), offset))
                .collect::<Result<Vec<_>>>()?;
            sequences.push(PreparedSequence {
                label: seq.person_id as usize - 1,
                person_id: seq.person_id,
                sequence_id: seq.sequence_id,
                split: seq.split,
                frames,
                corrupted: Some(seq.frames.iter().map(|f| f.corrupted).collect()),
            });
        }
        Ok(PreparedDataset {
            classes: cfg.classes,
            sequences,
        })
    }

    /// Indices of the sequences in `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.sequences.len())
            .filter(|&i| self.sequences[i].split == split)
            .collect()
    }

    /// `(sequence index, frame count)` pairs for [`batch_iterator`].
    pub fn split_lengths(&self, split: Split) -> Vec<(usize, usize)> {
        self.split_indices(split)
            .into_iter()
            .map(|i| (i, self.sequences[i].frames.len()))
            .collect()
    }

    pub fn frame_count(&self, split: Split) -> usize {
        self.split_lengths(split).iter().map(|(_, n)| n).sum()
    }
}
