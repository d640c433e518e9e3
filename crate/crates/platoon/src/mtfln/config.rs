use serde::{Deserialize, Serialize};

use crate::data::D_IN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_m: usize,
    pub n_ssm: usize,
    /// Linear layers in the variational encoder, counting the output heads.
    pub ve_layers: usize,
    pub attn_layers: usize,
    pub attn_heads: usize,
    pub p: usize,
    pub f: usize,
    /// Steps sharing one parameter row.
    pub m: usize,
    /// Inner expansion factor of the sequence block.
    pub expand: usize,
    pub conv_kernel: usize,
    pub disable_tfl: bool,
    pub disable_pfl: bool,
    /// Magnitudes `(|f_v|, f_s, f_dv)` the output head starts from.
    pub theta_init: [f64; 3],
    /// Scale applied to the output head's initial weights.
    pub head_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: D_IN,
            d_m: 64,
            n_ssm: 8,
            ve_layers: 3,
            attn_layers: 2,
            attn_heads: 4,
            p: 21,
            f: 20,
            m: 5,
            expand: 2,
            conv_kernel: 4,
            disable_tfl: false,
            disable_pfl: false,
            theta_init: [0.15, 0.05, 0.4],
            head_init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks and quick tests.
    pub fn desk() -> Self {
        Self {
            d_m: 16,
            ..Self::default()
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.d_m
    }

    pub fn dt_rank(&self) -> usize {
        self.d_m.div_ceil(16)
    }

    pub fn param_steps(&self) -> usize {
        self.f / self.m
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d_in != D_IN {
            return fail(format!("d_in must be {D_IN}, got {}", self.d_in));
        }
        if [self.d_m, self.n_ssm, self.ve_layers, self.attn_heads, self.p, self.f, self.m, self.expand, self.conv_kernel]
            .contains(&0)
        {
            return fail(format!("sizes must be positive: {self:?}"));
        }
        if !self.d_m.is_multiple_of(self.attn_heads) {
            return fail(format!("d_m={} is not divisible by {} heads", self.d_m, self.attn_heads));
        }
        if !self.f.is_multiple_of(self.m) {
            return fail(format!("F={} is not a multiple of m={}", self.f, self.m));
        }
        if self.theta_init.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return fail(format!("theta_init must be positive, got {:?}", self.theta_init));
        }
        if !self.head_init_scale.is_finite() {
            return fail("head_init_scale must be finite".into());
        }
        Ok(())
    }
}
