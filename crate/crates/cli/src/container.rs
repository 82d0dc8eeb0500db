//! The OMAP container: a flat binary file holding one image's orientation
//! maps, their anchors, and optionally the label grids.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0..4    magic "OMAP"
//! 4..6    version u16 — low 12 bits format version (1), bit 15 set when
//!         label sections follow the payload
//! 6       stride u8
//! 7       reserved u8 (zero)
//! 8..10   num_maps u16
//! 10..14  grid height u32
//! 14..18  grid width u32
//! 18..    per-map anchor (w, h) as f32 pairs
//! ...     payload: num_maps x H x W x 2 f32, row-major, (dx, dy) interleaved
//! ...     optional per-map label section: n_inst u32 + H*W label bytes
//!         (0 = ignore, 1 = negative, 2 = positive)
//! ```

use omap_core::encoder::{Label, LabelGrid, TargetBundle};
use omap_core::field::OrientationMap;
use omap_core::grouping::AnchorSet;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"OMAP";
pub const VERSION: u16 = 1;
pub const FLAG_LABELS: u16 = 0x8000;
const VERSION_MASK: u16 = 0x0fff;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not an OMAP container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    VersionMismatch(u16),
    #[error("container truncated: needed {needed} bytes, had {got}")]
    Truncated { needed: usize, got: usize },
    #[error("container has {got} trailing bytes")]
    TrailingBytes { got: usize },
    #[error("label byte {0} is not a valid label")]
    BadLabel(u8),
    #[error("container payload is not finite")]
    NonFinite,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSection {
    pub n_inst: u32,
    /// 0 = ignore, 1 = negative, 2 = positive.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmapContainer {
    pub stride: u8,
    pub grid_width: u32,
    pub grid_height: u32,
    /// Per-map anchor (width, height); position is the anchor index.
    pub anchors: Vec<(f32, f32)>,
    /// Per-map payload of length `grid_width * grid_height * 2`.
    pub maps: Vec<Vec<f32>>,
    pub labels: Option<Vec<LabelSection>>,
}

impl OmapContainer {
    /// Package encoded ground truth, labels included.
    pub fn from_bundles(bundles: &[TargetBundle], anchors: &AnchorSet) -> Self {
        assert_eq!(bundles.len(), anchors.len());
        let first = &bundles[0].orientation;
        let (gw, gh, stride) = (first.grid_width(), first.grid_height(), first.stride());
        let maps = bundles
            .iter()
            .map(|b| b.orientation.data().iter().map(|&v| v as f32).collect())
            .collect();
        let labels = bundles
            .iter()
            .map(|b| LabelSection {
                n_inst: b.n_inst as u32,
                labels: b
                    .labels
                    .labels()
                    .iter()
                    .map(|l| match l {
                        Label::Ignore => 0u8,
                        Label::Negative => 1,
                        Label::Positive(_) => 2,
                    })
                    .collect(),
            })
            .collect();
        OmapContainer {
            stride: stride as u8,
            grid_width: gw,
            grid_height: gh,
            anchors: anchors
                .priors()
                .iter()
                .map(|a| (a.width as f32, a.height as f32))
                .collect(),
            maps,
            labels: Some(labels),
        }
    }

    pub fn num_maps(&self) -> usize {
        self.maps.len()
    }

    /// Reconstruct the orientation maps; anchor index is the file position.
    pub fn to_orientation_maps(&self) -> Result<Vec<OrientationMap>, ContainerError> {
        self.maps
            .iter()
            .enumerate()
            .map(|(i, m)| {
                OrientationMap::from_data(
                    self.grid_width,
                    self.grid_height,
                    self.stride as u32,
                    i,
                    m.iter().map(|&v| v as f64).collect(),
                )
                .map_err(|_| ContainerError::NonFinite)
            })
            .collect()
    }

    /// Label grids, when the container carries them. Coverage counts are not
    /// serialized; they come back as zeros.
    pub fn to_label_grids(&self) -> Result<Option<Vec<(u32, LabelGrid)>>, ContainerError> {
        let Some(sections) = &self.labels else {
            return Ok(None);
        };
        let n = self.grid_width as usize * self.grid_height as usize;
        let mut out = Vec::with_capacity(sections.len());
        for s in sections {
            let labels: Result<Vec<Label>, ContainerError> = s
                .labels
                .iter()
                .map(|&b| match b {
                    0 => Ok(Label::Ignore),
                    1 => Ok(Label::Negative),
                    2 => Ok(Label::Positive(0)),
                    other => Err(ContainerError::BadLabel(other)),
                })
                .collect();
            let grid = LabelGrid::from_parts(self.grid_width, self.grid_height, labels?, vec![0; n])
                .expect("section length checked at parse");
            out.push((s.n_inst, grid));
        }
        Ok(Some(out))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.grid_width as usize * self.grid_height as usize;
        let mut out = Vec::with_capacity(18 + self.maps.len() * (8 + n * 8));
        out.extend_from_slice(&MAGIC);
        let version = VERSION | if self.labels.is_some() { FLAG_LABELS } else { 0 };
        out.extend_from_slice(&version.to_le_bytes());
        out.push(self.stride);
        out.push(0); // reserved
        out.extend_from_slice(&(self.maps.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.grid_height.to_le_bytes());
        out.extend_from_slice(&self.grid_width.to_le_bytes());
        for &(w, h) in &self.anchors {
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&h.to_le_bytes());
        }
        for map in &self.maps {
            debug_assert_eq!(map.len(), n * 2);
            for v in map {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(sections) = &self.labels {
            for s in sections {
                debug_assert_eq!(s.labels.len(), n);
                out.extend_from_slice(&s.n_inst.to_le_bytes());
                out.extend_from_slice(&s.labels);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let need = |needed: usize| -> Result<(), ContainerError> {
            if bytes.len() < needed {
                Err(ContainerError::Truncated {
                    needed,
                    got: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(18)?;
        if bytes[0..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version & VERSION_MASK != VERSION {
            return Err(ContainerError::VersionMismatch(version & VERSION_MASK));
        }
        let has_labels = version & FLAG_LABELS != 0;
        let stride = bytes[6];
        let num_maps = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
        let grid_height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let grid_width = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
        let n = grid_width as usize * grid_height as usize;

        let mut off = 18usize;
        need(off + num_maps * 8)?;
        let mut anchors = Vec::with_capacity(num_maps);
        for _ in 0..num_maps {
            let w = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let h = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            anchors.push((w, h));
            off += 8;
        }

        let mut maps = Vec::with_capacity(num_maps);
        for _ in 0..num_maps {
            need(off + n * 8)?;
            let mut map = Vec::with_capacity(n * 2);
            for _ in 0..n * 2 {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(ContainerError::NonFinite);
                }
                map.push(v);
                off += 4;
            }
            maps.push(map);
        }

        let labels = if has_labels {
            let mut sections = Vec::with_capacity(num_maps);
            for _ in 0..num_maps {
                need(off + 4 + n)?;
                let n_inst = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                off += 4;
                let raw = &bytes[off..off + n];
                if let Some(&bad) = raw.iter().find(|&&b| b > 2) {
                    return Err(ContainerError::BadLabel(bad));
                }
                sections.push(LabelSection {
                    n_inst,
                    labels: raw.to_vec(),
                });
                off += n;
            }
            Some(sections)
        } else {
            None
        };

        if off != bytes.len() {
            return Err(ContainerError::TrailingBytes {
                got: bytes.len() - off,
            });
        }
        Ok(OmapContainer {
            stride,
            grid_width,
            grid_height,
            anchors,
            maps,
            labels,
        })
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
