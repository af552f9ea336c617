use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reaction and diffusion rates of the four-species model.
///
/// `L`, `P` live in the cell volume; `l` on the whole cortex; `p` only on the
/// active arc. Reaction rates are in 1/time, diffusion rates in length²/time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// P → L (volume dephosphorylation).
    pub alpha: f64,
    /// L → P (volume phosphorylation).
    pub beta: f64,
    /// l → L (cortical release).
    pub gamma: f64,
    /// L → l (cortical binding).
    pub lambda: f64,
    /// l → p on the active arc.
    pub sigma: f64,
    /// p → P release from the active arc.
    pub xi: f64,
    #[serde(rename = "d_L")]
    pub d_vol_l: f64,
    #[serde(rename = "d_P")]
    pub d_vol_p: f64,
    #[serde(rename = "d_l", default)]
    pub d_cortex_l: f64,
    #[serde(rename = "d_p", default)]
    pub d_cortex_p: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            gamma: 2.0,
            lambda: 4.0,
            sigma: 3.0,
            xi: 1.0,
            d_vol_l: 0.01,
            d_vol_p: 0.02,
            d_cortex_l: 0.0,
            d_cortex_p: 0.0,
        }
    }
}

impl ModelParams {
    pub fn with_xi(self, xi: f64) -> Self {
        Self { xi, ..self }
    }

    pub fn with_surface_diffusion(self, d_l: f64, d_p: f64) -> Self {
        Self {
            d_cortex_l: d_l,
            d_cortex_p: d_p,
            ..self
        }
    }

    /// All rates and diffusion coefficients set to zero.
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            lambda: 0.0,
            sigma: 0.0,
            xi: 0.0,
            d_vol_l: 0.0,
            d_vol_p: 0.0,
            d_cortex_l: 0.0,
            d_cortex_p: 0.0,
        }
    }

    /// `(config key, value)` pairs in declaration order.
    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("xi", self.xi),
            ("d_L", self.d_vol_l),
            ("d_P", self.d_vol_p),
            ("d_l", self.d_cortex_l),
            ("d_p", self.d_cortex_p),
        ]
    }

    /// Model invariants: reaction rates and volume diffusion strictly positive,
    /// surface diffusion non-negative. Returns the offending key on failure.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        for (key, v) in self.named() {
            if !v.is_finite() {
                return Err((key, format!("{v} is not finite")));
            }
            let surface = key == "d_l" || key == "d_p";
            if surface && v < 0.0 {
                return Err((key, format!("surface diffusion must be >= 0, got {v}")));
            }
            if !surface && v <= 0.0 {
                return Err((key, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(key, msg)| Error::Parameter(format!("{key}: {msg}")))
    }

    /// Weaker check used by assembly: everything finite and non-negative.
    pub(crate) fn check_assemblable(&self) -> Result<()> {
        for (key, v) in self.named() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!(
                    "{key} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}
