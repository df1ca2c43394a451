//! Padded token-id batches.

use crate::subword::PAD;

/// Row-major `[rows × width]` ids, right-padded with PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<u32>,
    pub rows: usize,
    pub width: usize,
    pub lens: Vec<usize>,
}

impl Padded {
    pub fn new(seqs: &[&[u32]]) -> Self {
        let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![PAD; seqs.len() * width];
        for (r, s) in seqs.iter().enumerate() {
            ids[r * width..r * width + s.len()].copy_from_slice(s);
        }
        Self { ids, rows: seqs.len(), width, lens: seqs.iter().map(|s| s.len()).collect() }
    }

    pub fn get(&self, row: usize, pos: usize) -> u32 {
        self.ids[row * self.width + pos]
    }

    /// `true` at real (non-padding) positions, row-major.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.rows).flat_map(|r| (0..self.width).map(move |p| p < self.lens[r])).collect()
    }

    /// Ids at `pos` for every row (PAD past a row's end).
    pub fn column(&self, pos: usize) -> Vec<u32> {
        (0..self.rows).map(|r| self.get(r, pos)).collect()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..r * self.width + self.lens[r]]
    }

    pub fn num_tokens(&self) -> usize {
        self.lens.iter().sum()
    }
}

/// Source and target sides of a training batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub src: Padded,
    pub tgt: Padded,
}

impl PaddedBatch {
    pub fn new(pairs: &[(&[u32], &[u32])]) -> Self {
        let src: Vec<&[u32]> = pairs.iter().map(|p| p.0).collect();
        let tgt: Vec<&[u32]> = pairs.iter().map(|p| p.1).collect();
        Self { src: Padded::new(&src), tgt: Padded::new(&tgt) }
    }

    pub fn len(&self) -> usize {
        self.src.rows
    }

    pub fn is_empty(&self) -> bool {
        self.src.rows == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_marks_padding_exactly() {
        let p = Padded::new(&[&[1, 5, 2], &[1, 2]]);
        assert_eq!(p.ids, vec![1, 5, 2, 1, 2, PAD]);
        assert_eq!(p.mask(), vec![true, true, true, true, true, false]);
        for (id, m) in p.ids.iter().zip(p.mask()) {
            assert_eq!(*id == PAD, !m);
        }
        assert_eq!(p.row(1), &[1, 2]);
        assert_eq!(p.column(2), vec![2, PAD]);
    }
}
