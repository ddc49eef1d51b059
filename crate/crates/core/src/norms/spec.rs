use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Norm exponent `p ∈ [1, ∞]`. Infinity is its own variant so that the
/// max-norm and spectral norm are exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn validate(self) -> Result<Self> {
        match self {
            Exponent::Finite(p) if !(p >= 1.0) || !p.is_finite() => Err(Error::InvalidExponent(p)),
            e => Ok(e),
        }
    }

    /// Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> Exponent {
        match self {
            Exponent::Infinity => Exponent::Finite(1.0),
            Exponent::Finite(p) if p == 1.0 => Exponent::Infinity,
            Exponent::Finite(p) if p == 2.0 => Exponent::Finite(2.0),
            Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
        }
    }

    pub fn is_one(self) -> bool {
        self == Exponent::Finite(1.0)
    }

    pub fn is_two(self) -> bool {
        self == Exponent::Finite(2.0)
    }

    pub fn is_infinite(self) -> bool {
        self == Exponent::Infinity
    }
}

impl From<f64> for Exponent {
    fn from(p: f64) -> Self {
        if p == f64::INFINITY {
            Exponent::Infinity
        } else {
            Exponent::Finite(p)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormFamily {
    Entrywise,
    Schatten,
}

/// A norm on k×d matrices: entry-wise `‖·‖_p` or Schatten `|||·|||_p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSpec {
    family: NormFamily,
    p: Exponent,
}

impl NormSpec {
    pub fn new(family: NormFamily, p: impl Into<Exponent>) -> Result<Self> {
        let p = p.into().validate()?;
        Ok(NormSpec { family, p })
    }

    pub fn entrywise(p: impl Into<Exponent>) -> Result<Self> {
        Self::new(NormFamily::Entrywise, p)
    }

    pub fn schatten(p: impl Into<Exponent>) -> Result<Self> {
        Self::new(NormFamily::Schatten, p)
    }

    /// Entry-wise max-norm (SignGD geometry).
    pub const MAX: NormSpec = NormSpec {
        family: NormFamily::Entrywise,
        p: Exponent::Infinity,
    };
    /// Entry-wise 1-norm, dual of the max-norm.
    pub const SUM: NormSpec = NormSpec {
        family: NormFamily::Entrywise,
        p: Exponent::Finite(1.0),
    };
    /// Frobenius norm (NGD geometry).
    pub const FROBENIUS: NormSpec = NormSpec {
        family: NormFamily::Entrywise,
        p: Exponent::Finite(2.0),
    };
    /// Schatten-∞ (Spectral-GD / Muon geometry).
    pub const SPECTRAL: NormSpec = NormSpec {
        family: NormFamily::Schatten,
        p: Exponent::Infinity,
    };
    pub const NUCLEAR: NormSpec = NormSpec {
        family: NormFamily::Schatten,
        p: Exponent::Finite(1.0),
    };

    /// The five geometries tracked by default in experiments.
    pub const TRACKED: [NormSpec; 5] = [
        NormSpec::SUM,
        NormSpec::FROBENIUS,
        NormSpec::MAX,
        NormSpec::NUCLEAR,
        NormSpec::SPECTRAL,
    ];

    #[inline]
    pub fn family(&self) -> NormFamily {
        self.family
    }

    #[inline]
    pub fn exponent(&self) -> Exponent {
        self.p
    }

    pub fn dual(&self) -> NormSpec {
        NormSpec {
            family: self.family,
            p: self.p.conjugate(),
        }
    }

    /// Short tag used in CLI flags and CSV headers: `ew1`, `ew1.5`, `ewinf`, `s1`, `sinf`.
    pub fn tag(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.family {
            NormFamily::Entrywise => "ew",
            NormFamily::Schatten => "s",
        };
        match self.p {
            Exponent::Infinity => write!(f, "{prefix}inf"),
            Exponent::Finite(p) => write!(f, "{prefix}{p}"),
        }
    }
}

impl FromStr for NormSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (family, rest) = if let Some(rest) = s.strip_prefix("ew") {
            (NormFamily::Entrywise, rest)
        } else if let Some(rest) = s.strip_prefix('s') {
            (NormFamily::Schatten, rest)
        } else {
            return Err(Error::InvalidInput(format!(
                "unknown norm '{s}' (expected ew<p> or s<p>, p a number or 'inf')"
            )));
        };
        let p = if rest == "inf" {
            Exponent::Infinity
        } else {
            let v: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad norm exponent in '{s}'")))?;
            Exponent::Finite(v)
        };
        NormSpec::new(family, p)
    }
}

impl Serialize for NormSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for NormSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
