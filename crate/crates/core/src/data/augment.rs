use serde::{Deserialize, Serialize};

use crate::numcore::{RngStream, Tensor};

/// Label-preserving batch transforms used by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augment {
    #[default]
    None,
    Jitter { sigma: f64 },
    /// Jitter plus a horizontal mirror with probability 1/2 (images only).
    JitterMirror { sigma: f64 },
}

/// Applies the transform in place. Mirroring needs `image_side`.
pub fn augment_batch(x: &mut Tensor, aug: Augment, image_side: Option<usize>, rng: &mut RngStream) {
    let (sigma, mirror) = match aug {
        Augment::None => return,
        Augment::Jitter { sigma } => (sigma, false),
        Augment::JitterMirror { sigma } => (sigma, true),
    };
    let n = x.rows();
    for i in 0..n {
        let row = x.row_mut(i);
        if mirror {
            if let Some(side) = image_side {
                if rng.coin() {
                    for r in 0..side {
                        row[r * side..(r + 1) * side].reverse();
                    }
                }
            }
        }
        if sigma > 0.0 {
            for v in row.iter_mut() {
                *v += sigma * rng.standard_normal();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_is_identity() {
        let mut x = Tensor::matrix(2, 4, vec![0.1; 8]).unwrap();
        let before = x.clone();
        augment_batch(&mut x, Augment::None, Some(2), &mut RngStream::new(1, 1));
        assert_eq!(x, before);
    }

    #[test]
    fn mirror_reverses_rows_of_the_image() {
        let mut x = Tensor::matrix(64, 4, (0..64).flat_map(|_| [1.0, 2.0, 3.0, 4.0]).collect()).unwrap();
        augment_batch(&mut x, Augment::JitterMirror { sigma: 0.0 }, Some(2), &mut RngStream::new(3, 0));
        let flipped = (0..64).filter(|&i| x.row(i) == [2.0, 1.0, 4.0, 3.0]).count();
        let kept = (0..64).filter(|&i| x.row(i) == [1.0, 2.0, 3.0, 4.0]).count();
        assert_eq!(flipped + kept, 64);
        assert!(flipped > 10 && kept > 10);
    }
}
