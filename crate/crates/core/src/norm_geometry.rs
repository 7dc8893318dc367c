//! `l_p` norms, Hölder duality and the perturbation directions that make
//! Hölder's inequality tight.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative tolerance for ties at `max |beta_i|` in the `p = 1` extremal
/// direction.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// An exponent in `[1, inf]`. Infinity is a tag, not a float, so that
/// `dual(1) = inf` and `dual(inf) = 1` are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub const ONE: Exponent = Exponent::Finite(1.0);
    pub const TWO: Exponent = Exponent::Finite(2.0);
    pub const INF: Exponent = Exponent::Infinite;

    pub fn validate(self) -> Result<Exponent> {
        match self {
            Exponent::Finite(p) if p.is_nan() || p < 1.0 => Err(Error::InvalidOrder(p)),
            Exponent::Finite(p) if p.is_infinite() => Ok(Exponent::Infinite),
            e => Ok(e),
        }
    }

    /// `1/p`, with `1/inf = 0`.
    pub fn reciprocal(self) -> f64 {
        match self {
            Exponent::Finite(p) => 1.0 / p,
            Exponent::Infinite => 0.0,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinite)
    }
}

impl From<f64> for Exponent {
    fn from(p: f64) -> Self {
        if p.is_infinite() {
            Exponent::Infinite
        } else {
            Exponent::Finite(p)
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "inf" | "infinity" | "∞") {
            return Ok(Exponent::Infinite);
        }
        let p: f64 = t
            .parse()
            .map_err(|_| Error::param(format!("cannot parse norm order '{s}'")))?;
        Exponent::from(p).validate()
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => s.serialize_f64(*p),
            Exponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ExpVisitor;
        impl Visitor<'_> for ExpVisitor {
            type Value = Exponent;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number >= 1 or the string \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Exponent, E> {
                Exponent::from(v).validate().map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Exponent, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(ExpVisitor)
    }
}

/// An `l_p` order paired with its Hölder dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOrder {
    p: Exponent,
    q: Exponent,
}

impl NormOrder {
    pub const L1: NormOrder = NormOrder {
        p: Exponent::ONE,
        q: Exponent::INF,
    };
    pub const L2: NormOrder = NormOrder {
        p: Exponent::TWO,
        q: Exponent::TWO,
    };
    pub const LINF: NormOrder = NormOrder {
        p: Exponent::INF,
        q: Exponent::ONE,
    };

    pub fn new(p: impl Into<Exponent>) -> Result<NormOrder> {
        let p = p.into().validate()?;
        Ok(NormOrder {
            p,
            q: dual_order(p)?,
        })
    }

    pub fn p(&self) -> Exponent {
        self.p
    }

    pub fn q(&self) -> Exponent {
        self.q
    }
}

impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.p.serialize(s)
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = Exponent::deserialize(d)?;
        NormOrder::new(p).map_err(de::Error::custom)
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.p)
    }
}

/// The Hölder conjugate `q` of `p`, `1/p + 1/q = 1`.
pub fn dual_order(p: Exponent) -> Result<Exponent> {
    match p.validate()? {
        Exponent::Infinite => Ok(Exponent::ONE),
        Exponent::Finite(p) if p == 1.0 => Ok(Exponent::Infinite),
        Exponent::Finite(p) if p == 2.0 => Ok(Exponent::TWO),
        Exponent::Finite(p) => Ok(Exponent::Finite(p / (p - 1.0))),
    }
}

/// `(sum |v_i|^p)^(1/p)`, or `max |v_i|` for `p = inf`.
pub fn vector_norm(v: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinite => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        Exponent::Finite(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
        Exponent::Finite(p) => {
            let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if scale == 0.0 || !scale.is_finite() {
                return scale;
            }
            let sum: f64 = if p == 2.0 {
                v.iter().map(|x| (x / scale) * (x / scale)).sum()
            } else {
                v.iter().map(|x| (x.abs() / scale).powf(p)).sum()
            };
            scale * sum.powf(1.0 / p)
        }
    }
}

/// Unit `l_p` vector `d` attaining `d^T beta = |beta|_q`.
///
/// For `1 < p < inf` the entries are `sign(beta_i) |beta_i|^(q/p)`, normalised.
/// For `p = inf` they are `sign(beta_i)`. For `p = 1` the mass is split evenly
/// over the coordinates attaining `max |beta_i|` (ties within
/// [`TIE_TOLERANCE`]), each carrying the sign of `beta_i`.
pub fn holder_extremal_direction(beta: &[f64], p: Exponent) -> Result<Vec<f64>> {
    let p = p.validate()?;
    let scale = vector_norm(beta, Exponent::INF);
    if scale == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let dir = match p {
        Exponent::Infinite => beta.iter().map(|&b| sign(b)).collect(),
        Exponent::Finite(p) if p == 1.0 => {
            let cutoff = scale * (1.0 - TIE_TOLERANCE);
            let count = beta.iter().filter(|b| b.abs() >= cutoff).count() as f64;
            beta.iter()
                .map(|&b| if b.abs() >= cutoff { sign(b) / count } else { 0.0 })
                .collect()
        }
        Exponent::Finite(p) => {
            let exponent = 1.0 / (p - 1.0);
            let raw: Vec<f64> = beta
                .iter()
                .map(|&b| sign(b) * (b.abs() / scale).powf(exponent))
                .collect();
            let norm = vector_norm(&raw, Exponent::Finite(p));
            raw.into_iter().map(|r| r / norm).collect()
        }
    };
    Ok(dir)
}

/// Result of checking `|v|_q <= |v|_p <= m^(1/p - 1/q) |v|_q` for `q > p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSandwich {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub holds: bool,
}

pub fn norm_sandwich(v: &[f64], p: Exponent, q: Exponent) -> Result<NormSandwich> {
    let p = p.validate()?;
    let q = q.validate()?;
    if q.as_f64() <= p.as_f64() {
        return Err(Error::OrderMismatch {
            p: p.to_string(),
            q: q.to_string(),
        });
    }
    let m = v.len() as f64;
    let value = vector_norm(v, p);
    let lower = vector_norm(v, q);
    let upper = m.powf(p.reciprocal() - q.reciprocal()) * lower;
    let slack = 1e-12 * upper.max(f64::MIN_POSITIVE);
    Ok(NormSandwich {
        value,
        lower,
        upper,
        holds: lower <= value + slack && value <= upper + slack,
    })
}
