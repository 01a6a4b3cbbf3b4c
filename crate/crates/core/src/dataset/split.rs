use sha2::{Digest, Sha256};

use super::{DatasetIndex, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const STANDARD: SplitRatios = SplitRatios {
        train: 0.6,
        validation: 0.2,
        test: 0.2,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = Self {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    /// Parses `"0.6,0.2,0.2"`. Exactly three ratios are required.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::validation(format!(
                "3 ratios required (train,validation,test), got {}",
                parts.len()
            )));
        }
        let mut values = [0.0; 3];
        for (v, p) in values.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| Error::validation(format!("bad ratio {p:?}")))?;
        }
        Self::new(values[0], values[1], values[2])
    }

    fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::validation("split ratios must be positive"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Per-split counts for `n` items by largest remainder; each count is
    /// within one item of `n * ratio`.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [
            n as f64 * self.train,
            n as f64 * self.validation,
            n as f64 * self.test,
        ];
        let mut counts = exact.map(|e| e.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        // stable sort keeps train > validation > test on equal remainders
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

fn split_key(seed: u64, image_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.finalize().into()
}

/// Assigns every record to train/validation/test.
///
/// Records are ranked by a seeded hash of their `image_id`, and the ranking is
/// cut at the ratio boundaries. The result depends only on the id set, the
/// ratios and the seed; adding images moves only records near a boundary.
pub fn split_dataset(
    index: &DatasetIndex,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetIndex> {
    ratios.validate()?;
    let mut ranked: Vec<(usize, [u8; 32])> = index
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (i, split_key(seed, &r.image_id)))
        .collect();
    ranked.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then_with(|| index.records[a.0].image_id.cmp(&index.records[b.0].image_id))
    });

    let [n_train, n_val, _] = ratios.counts(ranked.len());
    let mut out = index.clone();
    out.split_seed = seed;
    for (rank, (i, _)) in ranked.into_iter().enumerate() {
        out.records[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(out)
}
