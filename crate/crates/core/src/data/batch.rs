use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// `rho` consecutive frame indices of one sequence. Sequences shorter than
/// `rho` are padded by repeating their last frame; padded steps have
/// `valid == false`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub sequence: usize,
    pub frames: Vec<usize>,
    pub valid: Vec<bool>,
}

/// All sliding windows of length `rho` (stride 1) over a sequence.
pub fn sequence_windows(sequence: usize, len: usize, rho: usize) -> Result<Vec<Window>> {
    if rho == 0 {
        return Err(Error::config("train.rho", "must be >= 1"));
    }
    if len == 0 {
        return Err(Error::InvalidArgument(format!("sequence {sequence} is empty")));
    }
    if len < rho {
        let frames = (0..rho).map(|t| t.min(len - 1)).collect();
        let valid = (0..rho).map(|t| t < len).collect();
        return Ok(vec![Window {
            sequence,
            frames,
            valid,
        }]);
    }
    Ok((0..=len - rho)
        .map(|s| Window {
            sequence,
            frames: (s..s + rho).collect(),
            valid: vec![true; rho],
        })
        .collect())
}

/// One epoch of mini-batches over the windows of the given sequences,
/// visited in a seeded random order. The last batch may be smaller.
pub struct BatchIterator {
    windows: Vec<Window>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl BatchIterator {
    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<Window>;

    fn next(&mut self) -> Option<Vec<Window>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| self.windows[i].clone())
            .collect();
        self.cursor = end;
        Some(batch)
    }
}

/// `sequences` holds `(sequence index, frame count)` pairs.
pub fn batch_iterator(
    sequences: &[(usize, usize)],
    rho: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<BatchIterator> {
    if batch_size == 0 {
        return Err(Error::config("train.batch_size", "must be >= 1"));
    }
    let mut windows = Vec::new();
    for &(seq, len) in sequences {
        windows.extend(sequence_windows(seq, len, rho)?);
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    rng.shuffle(&mut order);
    Ok(BatchIterator {
        windows,
        order,
        batch_size,
        cursor: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sliding_windows() {
        let w = sequence_windows(4, 5, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].frames, vec![2, 3, 4]);
        assert!(w.iter().all(|w| w.sequence == 4 && w.valid.iter().all(|&v| v)));
    }

    #[test]
    fn short_sequence_padded() {
        let w = sequence_windows(0, 2, 4).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].frames, vec![0, 1, 1, 1]);
        assert_eq!(w[0].valid, vec![true, true, false, false]);
    }

    #[test]
    fn epoch_covers_every_window_once() {
        let mut rng = RngStream::new(3);
        let it = batch_iterator(&[(0, 5), (1, 4)], 3, 2, &mut rng).unwrap();
        assert_eq!(it.len(), 3);
        let mut seen: Vec<(usize, usize)> = it.flatten().map(|w| (w.sequence, w.frames[0])).collect();
        seen.sort();
        assert_eq!(seen, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
    }

    #[test]
    fn order_depends_only_on_seed() {
        let run = |seed| {
            let mut rng = RngStream::new(seed);
            batch_iterator(&[(0, 30)], 2, 4, &mut rng)
                .unwrap()
                .flatten()
                .map(|w| w.frames[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
