use super::instance::{Instance, Point};

/// The eight symmetries of the unit square, identity first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symmetry {
    Identity,
    Swap,
    FlipX,
    FlipY,
    FlipXy,
    SwapFlipX,
    SwapFlipY,
    SwapFlipXy,
}

impl Symmetry {
    pub const ALL: [Symmetry; 8] = [
        Self::Identity,
        Self::Swap,
        Self::FlipX,
        Self::FlipY,
        Self::FlipXy,
        Self::SwapFlipX,
        Self::SwapFlipY,
        Self::SwapFlipXy,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }

    pub fn apply(self, [x, y]: Point) -> Point {
        match self {
            Self::Identity => [x, y],
            Self::Swap => [y, x],
            Self::FlipX => [1.0 - x, y],
            Self::FlipY => [x, 1.0 - y],
            Self::FlipXy => [1.0 - x, 1.0 - y],
            Self::SwapFlipX => [y, 1.0 - x],
            Self::SwapFlipY => [1.0 - y, x],
            Self::SwapFlipXy => [1.0 - y, 1.0 - x],
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Self::SwapFlipX => Self::SwapFlipY,
            Self::SwapFlipY => Self::SwapFlipX,
            other => other,
        }
    }
}

/// The eight symmetric copies of an instance, paired with the map that
/// produced each. Index order matches [`Symmetry::ALL`]. Solutions are index
/// based, so a route set found on a copy is valid unchanged on the original.
pub fn augment8(inst: &Instance) -> Vec<(Symmetry, Instance)> {
    Symmetry::ALL
        .iter()
        .map(|&s| (s, inst.map_coords(|p| s.apply(p))))
        .collect()
}
