//! Sets of pixel coordinates within fixed image bounds.

use crate::error::{Error, Result};

/// A set of `(row, col)` pixels inside an `H × W` image, kept sorted in
/// row-major order without duplicates.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PixelSet {
    height: usize,
    width: usize,
    pixels: Vec<(usize, usize)>,
}

impl PixelSet {
    pub fn empty(height: usize, width: usize) -> Self {
        PixelSet { height, width, pixels: Vec::new() }
    }

    /// Every pixel of the image (Ω).
    pub fn full(height: usize, width: usize) -> Self {
        let pixels = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect();
        PixelSet { height, width, pixels }
    }

    pub fn new(height: usize, width: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut pixels: Vec<_> = pixels.into_iter().collect();
        if let Some(&(r, c)) = pixels.iter().find(|&&(r, c)| r >= height || c >= width) {
            return Err(Error::InvalidArgument(format!("pixel ({r}, {c}) outside {height}×{width}")));
        }
        pixels.sort_unstable();
        pixels.dedup();
        Ok(PixelSet { height, width, pixels })
    }

    /// Pixels whose row-major flag is set.
    pub fn from_bitmap(height: usize, width: usize, bitmap: &[bool]) -> Result<Self> {
        if bitmap.len() != height * width {
            return Err(Error::shape("PixelSet::from_bitmap", format!("{} flags for {height}×{width}", bitmap.len())));
        }
        let pixels = bitmap.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (i / width, i % width)).collect();
        Ok(PixelSet { height, width, pixels })
    }

    /// Axis-aligned rectangle clipped to the image.
    pub fn rect(height: usize, width: usize, x: usize, y: usize, w: usize, h: usize) -> Self {
        let rows = y.min(height)..(y + h).min(height);
        let pixels = rows.flat_map(|r| (x.min(width)..(x + w).min(width)).map(move |c| (r, c))).collect();
        PixelSet { height, width, pixels }
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels.iter().copied()
    }

    /// Row-major flat indices.
    pub fn flat_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.pixels.iter().map(|&(r, c)| r * self.width + c)
    }

    pub fn contains(&self, pixel: (usize, usize)) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bitmap = vec![false; self.height * self.width];
        for i in self.flat_indices() {
            bitmap[i] = true;
        }
        bitmap
    }

    fn same_bounds(&self, other: &PixelSet) -> Result<()> {
        if self.bounds() != other.bounds() {
            return Err(Error::shape(
                "PixelSet",
                format!("bounds {:?} vs {:?}", self.bounds(), other.bounds()),
            ));
        }
        Ok(())
    }

    fn combine(&self, other: &PixelSet, f: impl Fn(bool, bool) -> bool) -> Result<PixelSet> {
        self.same_bounds(other)?;
        let (a, b) = (self.to_bitmap(), other.to_bitmap());
        let merged: Vec<bool> = a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect();
        PixelSet::from_bitmap(self.height, self.width, &merged)
    }

    pub fn union(&self, other: &PixelSet) -> Result<PixelSet> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &PixelSet) -> Result<PixelSet> {
        self.combine(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &PixelSet) -> Result<PixelSet> {
        self.combine(other, |a, b| a && !b)
    }

    /// Ω ∖ self.
    pub fn complement(&self) -> PixelSet {
        let bitmap: Vec<bool> = self.to_bitmap().into_iter().map(|b| !b).collect();
        PixelSet::from_bitmap(self.height, self.width, &bitmap).expect("bitmap has image size")
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> PixelSet {
        let mut bitmap = vec![false; self.height * self.width];
        for &(r, c) in &self.pixels {
            for rr in r.saturating_sub(radius)..(r + radius + 1).min(self.height) {
                for cc in c.saturating_sub(radius)..(c + radius + 1).min(self.width) {
                    bitmap[rr * self.width + cc] = true;
                }
            }
        }
        PixelSet::from_bitmap(self.height, self.width, &bitmap).expect("bitmap has image size")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_sorts_and_dedups() {
        let s = PixelSet::new(3, 3, [(2, 1), (0, 0), (2, 1), (1, 2)]).unwrap();
        assert_eq!(s.pixels(), [(0, 0), (1, 2), (2, 1)]);
        assert!(PixelSet::new(3, 3, [(3, 0)]).is_err());
    }

    #[test]
    fn set_algebra() {
        let a = PixelSet::new(2, 2, [(0, 0), (0, 1)]).unwrap();
        let b = PixelSet::new(2, 2, [(0, 1), (1, 1)]).unwrap();
        assert_eq!(a.union(&b).unwrap().len(), 3);
        assert_eq!(a.intersection(&b).unwrap().pixels(), [(0, 1)]);
        assert_eq!(a.difference(&b).unwrap().pixels(), [(0, 0)]);
        assert_eq!(a.complement().pixels(), [(1, 0), (1, 1)]);
        assert!(a.union(&PixelSet::empty(3, 2)).is_err());
    }

    #[test]
    fn rect_and_dilate_clip() {
        let r = PixelSet::rect(4, 4, 3, 3, 5, 5);
        assert_eq!(r.pixels(), [(3, 3)]);
        assert_eq!(r.dilate(1).len(), 4);
    }
}
