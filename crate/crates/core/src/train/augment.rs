//! Rotation and flip augmentation over the 8-element dihedral group.

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// `index % 4` quarter turns counter-clockwise, preceded by a horizontal
/// flip when `index >= 4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(index: u8) -> Self {
        Self(index % 8)
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self(rng.random_range(0..8))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn quarter_turns(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    pub fn inverse(self) -> Self {
        if self.flipped() {
            self
        } else {
            Self((4 - self.0) % 4)
        }
    }

    /// Transforms every plane of `[B, C, H, W]`.
    pub fn apply(self, t: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = t.dims4()?;
        let turns = self.quarter_turns();
        let (oh, ow) = if turns.is_multiple_of(2) { (h, w) } else { (w, h) };
        let src = t.data();
        let mut out = Vec::with_capacity(src.len());
        for p in 0..b * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    // Undo the rotation, then the flip.
                    let (y, x) = match turns {
                        0 => (i, j),
                        1 => (j, w - 1 - i),
                        2 => (h - 1 - i, w - 1 - j),
                        _ => (h - 1 - j, i),
                    };
                    let x = if self.flipped() { w - 1 - x } else { x };
                    out.push(plane[y * w + x]);
                }
            }
        }
        Tensor::new(vec![b, c, oh, ow], out)
    }
}

/// Applies one random group element to both tensors.
pub fn augment(input: &Tensor, target: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, Tensor, Dihedral)> {
    let d = Dihedral::random(rng);
    Ok((d.apply(input)?, d.apply(target)?, d))
}
