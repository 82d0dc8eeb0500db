//! Dense binary bitmaps, the decoder's output and the evaluator's currency.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask payload length {got} does not match {width}x{height}")]
    LengthMismatch { width: u32, height: u32, got: usize },
    #[error("mask byte stream is truncated or malformed")]
    MalformedBytes,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimMismatch(u32, u32, u32, u32),
}

/// Row-major bitset of `width * height` pixels, one bit each.
///
/// Bit `y * width + x` is pixel `(x, y)`. Storage is 64-bit words with the
/// unused tail bits of the last word kept zero, so popcounts over whole words
/// are exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        BinaryMask {
            width,
            height,
            words: vec![0u64; bits.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_bits(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1u64 << (i % 64);
        } else {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_area(&self, other: &BinaryMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Iterator over set pixel coordinates in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        (0..self.height).flat_map(move |y| {
            (0..w).filter_map(move |x| if self.get(x, y) { Some((x, y)) } else { None })
        })
    }

    /// Tight bounding rectangle of set pixels as integer pixel bounds
    /// `(min_x, min_y, max_x, max_y)` inclusive, or `None` if empty.
    pub fn pixel_bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for (x, y) in self.iter_set() {
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bounds
    }

    /// Serialize to bytes: `width, height` little-endian u32 followed by the
    /// word array little-endian. Round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.words.len() * 8);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MaskError> {
        if bytes.len() < 8 {
            return Err(MaskError::MalformedBytes);
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let bits = width as usize * height as usize;
        let expect_words = bits.div_ceil(64);
        let body = &bytes[8..];
        if body.len() != expect_words * 8 {
            return Err(MaskError::LengthMismatch {
                width,
                height,
                got: body.len(),
            });
        }
        let words: Vec<u64> = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        // Tail bits beyond width*height must be zero.
        if bits % 64 != 0 {
            if let Some(last) = words.last() {
                if last >> (bits % 64) != 0 {
                    return Err(MaskError::MalformedBytes);
                }
            }
        }
        Ok(BinaryMask {
            width,
            height,
            words,
        })
    }
}
