use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotation::PromptSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "native")]
    Native,
    #[serde(rename = "sam-image")]
    SamImage,
    #[serde(rename = "sam2-image")]
    Sam2Image,
    #[serde(rename = "sam2-video")]
    Sam2Video,
}

impl Family {
    /// Model variants a descriptor of this family may name.
    pub fn variants(self) -> &'static [&'static str] {
        match self {
            Family::Native => &["n/a"],
            Family::SamImage => &["vit-h", "vit-l", "vit-b"],
            Family::Sam2Image | Family::Sam2Video => &["tiny", "small", "base-plus", "large"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Native => "native",
            Family::SamImage => "sam-image",
            Family::Sam2Image => "sam2-image",
            Family::Sam2Video => "sam2-video",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_box: bool,
    pub supports_sequence: bool,
    pub supports_negative_points: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorDescriptor {
    pub id: String,
    pub family: Family,
    pub variant: String,
    pub capabilities: Capabilities,
}

impl PredictorDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidDescriptor("empty id".into()));
        }
        if !self.family.variants().contains(&self.variant.as_str()) {
            return Err(Error::InvalidDescriptor(format!(
                "{}: variant {:?} is not a {} variant",
                self.id, self.variant, self.family
            )));
        }
        if self.capabilities.supports_sequence && !matches!(self.family, Family::Native | Family::Sam2Video) {
            return Err(Error::InvalidDescriptor(format!(
                "{}: family {} cannot propagate sequences",
                self.id, self.family
            )));
        }
        Ok(())
    }

    /// Checks prompts against the slice shape and this predictor's capabilities.
    pub fn check_prompts(&self, prompts: &PromptSet, rows: usize, cols: usize) -> Result<()> {
        prompts.validate(rows, cols)?;
        if prompts.bbox.is_some() && !self.capabilities.supports_box {
            return Err(Error::UnsupportedPrompt(format!("{} does not accept boxes", self.id)));
        }
        if prompts.has_negatives() && !self.capabilities.supports_negative_points {
            return Err(Error::UnsupportedPrompt(format!(
                "{} does not accept negative points",
                self.id
            )));
        }
        Ok(())
    }

    pub fn require_sequence(&self) -> Result<()> {
        if self.capabilities.supports_sequence {
            Ok(())
        } else {
            Err(Error::SequenceUnsupported(self.id.clone()))
        }
    }
}
