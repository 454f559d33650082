use serde::{Deserialize, Serialize};

/// Inclusive frame range `[onset, offset]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub onset: usize,
    pub offset: usize,
}

impl Segment {
    pub fn new(onset: usize, offset: usize) -> Self {
        debug_assert!(onset <= offset);
        Self { onset, offset }
    }

    pub fn len(&self) -> usize {
        self.offset - self.onset + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.onset..=self.offset).contains(&frame)
    }

    /// Number of frames shared with `other`.
    pub fn overlap(&self, other: &Segment) -> usize {
        let lo = self.onset.max(other.onset);
        let hi = self.offset.min(other.offset);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }

    pub fn intersects(&self, other: &Segment) -> bool {
        self.overlap(other) > 0
    }
}

/// Maximal runs of `true` as segments, in order.
pub fn runs(flags: &[bool]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Segment::new(s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Segment::new(s, flags.len() - 1));
    }
    out
}
