use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// An image tile with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub patch_id: String,
    pub slide_id: String,
    /// Top-left corner in pixels at `mpp`.
    pub x: u32,
    pub y: u32,
    pub mpp: f64,
    pub pixels: RgbImage,
    pub label: Option<usize>,
    pub split: Split,
    pub fold: Option<u32>,
}

impl Patch {
    pub fn make_id(slide_id: &str, x: u32, y: u32) -> String {
        format!("{slide_id}_x{x}_y{y}")
    }

    pub fn size(&self) -> u32 {
        self.pixels.width()
    }

    /// True when the boxes of two patches from the same slide intersect.
    pub fn overlaps(&self, other: &Patch) -> bool {
        if self.slide_id != other.slide_id {
            return false;
        }
        let (aw, ah) = self.pixels.dimensions();
        let (bw, bh) = other.pixels.dimensions();
        self.x < other.x + bw && other.x < self.x + aw && self.y < other.y + bh && other.y < self.y + ah
    }
}
