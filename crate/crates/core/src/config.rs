use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_MIN_SECTION_CHARS;
use crate::error::{Error, Result};
use crate::protocol::{DEFAULT_PARTICIPANTS, DEFAULT_QUALIFICATION_THRESHOLD};

/// Study-wide defaults, loadable from a TOML file:
///
/// ```toml
/// participants = 3
/// qualification_threshold = 0.6
/// min_section_chars = 200
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub participants: usize,
    pub qualification_threshold: f64,
    pub min_section_chars: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            participants: DEFAULT_PARTICIPANTS,
            qualification_threshold: DEFAULT_QUALIFICATION_THRESHOLD,
            min_section_chars: DEFAULT_MIN_SECTION_CHARS,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: StudyConfig =
            toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.participants < 2 {
            return Err(Error::Validation(
                "config: participants must be at least 2".into(),
            ));
        }
        if !(self.qualification_threshold > 0.0 && self.qualification_threshold <= 1.0) {
            return Err(Error::Validation(
                "config: qualification_threshold must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}
