use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static hyperparameters of one dynamic context-aware convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcacConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Channel groups `G`; must divide both channel counts.
    pub groups: usize,
    /// `(k_t, k_h, k_w)`, all odd.
    pub kernel: [usize; 3],
    /// Number of shared expert kernels `n`.
    pub experts: usize,
    /// Reduction ratio `r` of the attention bottleneck.
    pub reduction: usize,
    /// Temporal extent of the context convolution applied before pooling.
    #[serde(default = "default_context_kernel")]
    pub context_kernel: usize,
}

fn default_context_kernel() -> usize {
    1
}

impl DcacConfig {
    /// Depthwise deployment setting: `k_h = k_w = 1`, `G = C`, `n = 6`, `r = 16`.
    pub fn depthwise(channels: usize, k_t: usize) -> Self {
        DcacConfig {
            c_in: channels,
            c_out: channels,
            groups: channels,
            kernel: [k_t, 1, 1],
            experts: 6,
            reduction: 16,
            context_kernel: default_context_kernel(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.groups == 0 || !self.c_in.is_multiple_of(self.groups) || !self.c_out.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "groups {} must divide c_in {} and c_out {}",
                self.groups, self.c_in, self.c_out
            )));
        }
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::config(format!("kernel {:?} must be odd and positive", self.kernel)));
        }
        if self.context_kernel == 0 || self.context_kernel.is_multiple_of(2) {
            return Err(Error::config(format!("context kernel {} must be odd", self.context_kernel)));
        }
        if self.experts == 0 {
            return Err(Error::config("need at least one expert"));
        }
        if self.reduction == 0 || self.c_in / self.reduction < 1 {
            return Err(Error::config(format!(
                "c_in / r = {} / {} leaves an empty attention bottleneck",
                self.c_in, self.reduction
            )));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.c_in / self.reduction
    }

    pub fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Elements of one per-frame kernel `C_o × C_i/G × k_t × k_h × k_w`.
    pub fn kernel_numel(&self) -> usize {
        self.c_out * self.cin_per_group() * self.kernel_volume()
    }

    pub fn kernel_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.c_out, self.cin_per_group(), kt, kh, kw]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_errors() {
        assert!(DcacConfig::depthwise(16, 3).validate().is_ok());
        assert!(DcacConfig::depthwise(16, 4).validate().is_err());
        assert!(DcacConfig::depthwise(8, 3).validate().is_err(), "8 / 16 < 1");
        let mut c = DcacConfig::depthwise(16, 3);
        c.groups = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
