//! Predicted Sobolev regularity and energy-norm convergence exponents.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real number `x`, or `x⁻` (any value strictly below `x`) when `open`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenReal {
    pub value: f64,
    pub open: bool,
}

impl OpenReal {
    pub fn closed(value: f64) -> Self {
        OpenReal { value, open: false }
    }

    pub fn below(value: f64) -> Self {
        OpenReal { value, open: true }
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn shift(self, delta: f64) -> Self {
        OpenReal { value: self.value + delta, open: self.open }
    }
}

impl PartialOrd for OpenReal {
    /// `x⁻ < x`, otherwise ordered by value.
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.value.partial_cmp(&other.value)? {
            Ordering::Equal => Some(other.open.cmp(&self.open)),
            ord => Some(ord),
        }
    }
}

impl fmt::Display for OpenReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, if self.open { "-" } else { "" })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    /// `ι = 0`, `β = 0`.
    A,
    /// `ι = 0`, `β ≠ 0`, `s ≥ ½`.
    B,
    /// `ι = 1`.
    C,
}

impl std::str::FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(CaseId::A),
            "B" | "b" => Ok(CaseId::B),
            "C" | "c" => Ok(CaseId::C),
            other => Err(Error::Config(format!("unknown case '{other}' (expected A, B or C)"))),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::A => "A",
            CaseId::B => "B",
            CaseId::C => "C",
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case: CaseId,
    pub iota: f64,
    pub s: f64,
    pub beta_nonzero: bool,
    /// Elliptic regularity index of the domain, in `(0, 1]`.
    pub r: f64,
}

impl CaseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Config(format!("s = {} must lie in (0, 1)", self.s)));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!("regularity index r = {} must lie in (0, 1]", self.r)));
        }
        match self.case {
            CaseId::A if self.iota != 0.0 || self.beta_nonzero => {
                Err(Error::Config("case A has no local diffusion (ι = 0) and no drift (β = 0)".into()))
            }
            CaseId::B if self.iota != 0.0 || !self.beta_nonzero => {
                Err(Error::Config("case B has ι = 0 and a nonzero drift β".into()))
            }
            CaseId::B if self.s < 0.5 => Err(Error::Config(format!(
                "case B requires s ≥ 1/2 so that diffusion dominates the drift (got s = {})",
                self.s
            ))),
            CaseId::C if self.iota != 1.0 => Err(Error::Config("case C requires ι = 1".into())),
            _ => Ok(()),
        }
    }
}

/// Value or the marker for an exponent the theory leaves undetermined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Prediction {
    Value(OpenReal),
    /// Case B at `s = ½`, where the exponent depends on an unspecified `δ`.
    UnknownDelta,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Value(v) => v.fmt(f),
            Prediction::UnknownDelta => f.write_str("unknown-delta"),
        }
    }
}

/// Regularity of the linear integro-differential problem:
/// `1 + r` for `s < 5/4 − r/2`, else `(7/2 − 2s)⁻`.
pub fn mu(s: f64, r: f64) -> OpenReal {
    if s < 1.25 - 0.5 * r {
        OpenReal::closed(1.0 + r)
    } else {
        OpenReal::below(3.5 - 2.0 * s)
    }
}

/// Sobolev regularity of the obstacle solution.
pub fn sigma(spec: &CaseSpec) -> Result<OpenReal> {
    spec.validate()?;
    Ok(match spec.case {
        CaseId::A => OpenReal::closed(2.0 * spec.s).min(OpenReal::below(spec.s + 0.5)),
        CaseId::B => OpenReal::below(spec.s + 0.5),
        CaseId::C => mu(spec.s, spec.r),
    })
}

/// Interpolation-limited convergence exponent.
pub fn sigma_star(spec: &CaseSpec) -> Result<Prediction> {
    spec.validate()?;
    if spec.case == CaseId::B && spec.s == 0.5 {
        return Ok(Prediction::UnknownDelta);
    }
    Ok(Prediction::Value(match spec.case {
        CaseId::A | CaseId::B => OpenReal::closed(spec.s).min(OpenReal::below(0.5)),
        CaseId::C => mu(spec.s, spec.r).shift(-1.0),
    }))
}

/// `min{σ*, (3/2 − s)⁻}`, the exponent of the energy error bound.
pub fn predicted_rate(spec: &CaseSpec) -> Result<Prediction> {
    Ok(match sigma_star(spec)? {
        Prediction::Value(v) => Prediction::Value(v.min(OpenReal::below(1.5 - spec.s))),
        Prediction::UnknownDelta => Prediction::UnknownDelta,
    })
}
