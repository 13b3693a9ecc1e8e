use crate::error::{Error, Result};

/// Per-example flag: `true` iff the example is a pure-noise image.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NoiseMask(Vec<bool>);

impl NoiseMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn all_natural(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn is_noise(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn noise_count(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }

    pub fn natural_rows(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| !self.0[i]).collect()
    }

    pub fn noise_rows(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    pub(crate) fn check_len(&self, batch: usize) -> Result<()> {
        if self.0.len() != batch {
            return Err(Error::invalid(format!("noise mask has {} entries for a batch of {batch}", self.0.len())));
        }
        Ok(())
    }
}
