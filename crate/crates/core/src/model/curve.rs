//! Closed parametric curve families used for rates, drifts and jump masses.
//!
//! Every curve is total on the real line and carries an analytic derivative,
//! which the hypothesis scans and the drift-conjugation check rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Curve {
    Constant {
        value: f64,
    },
    /// `base + height * exp(-(x - center)^2 / (2 width^2))`
    GaussianBump {
        #[serde(default)]
        base: f64,
        height: f64,
        #[serde(default)]
        center: f64,
        width: f64,
    },
    /// `base + height / (1 + ((x - center) / width)^2)`
    Lorentzian {
        #[serde(default)]
        base: f64,
        height: f64,
        #[serde(default)]
        center: f64,
        width: f64,
    },
    /// `sum_k coeffs[k] * x^k`
    Polynomial { coeffs: Vec<f64> },
    /// `sum_k coeffs[k] * |x|^k`
    AbsPolynomial { coeffs: Vec<f64> },
    /// `amplitude * sin(frequency * x + phase)`
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Monotone cubic interpolation through tabulated nodes, linear beyond the ends.
    Table(MonotoneCubic),
    Sum { terms: Vec<Curve> },
}

fn one() -> f64 {
    1.0
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::Constant { value }
    }

    pub fn zero() -> Self {
        Curve::constant(0.0)
    }

    pub fn polynomial(coeffs: &[f64]) -> Self {
        Curve::Polynomial {
            coeffs: coeffs.to_vec(),
        }
    }

    pub fn abs_polynomial(coeffs: &[f64]) -> Self {
        Curve::AbsPolynomial {
            coeffs: coeffs.to_vec(),
        }
    }

    pub fn gaussian_bump(base: f64, height: f64, center: f64, width: f64) -> Self {
        Curve::GaussianBump {
            base,
            height,
            center,
            width,
        }
    }

    pub fn sine(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Curve::Sine {
            amplitude,
            frequency,
            phase,
        }
    }

    pub fn sum(terms: Vec<Curve>) -> Self {
        Curve::Sum { terms }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::GaussianBump {
                base,
                height,
                center,
                width,
            } => {
                let z = (x - center) / width;
                base + height * (-0.5 * z * z).exp()
            }
            Curve::Lorentzian {
                base,
                height,
                center,
                width,
            } => {
                let z = (x - center) / width;
                base + height / (1.0 + z * z)
            }
            Curve::Polynomial { coeffs } => horner(coeffs, x),
            Curve::AbsPolynomial { coeffs } => horner(coeffs, x.abs()),
            Curve::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * x + phase).sin(),
            Curve::Table(t) => t.eval(x),
            Curve::Sum { terms } => terms.iter().map(|c| c.eval(x)).sum(),
        }
    }

    /// First derivative. `|x|^k` terms use the convention sign(0) = 0.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Curve::Constant { .. } => 0.0,
            Curve::GaussianBump {
                height,
                center,
                width,
                ..
            } => {
                let z = (x - center) / width;
                -height * z / width * (-0.5 * z * z).exp()
            }
            Curve::Lorentzian {
                height,
                center,
                width,
                ..
            } => {
                let z = (x - center) / width;
                let q = 1.0 + z * z;
                -2.0 * height * z / (width * q * q)
            }
            Curve::Polynomial { coeffs } => horner_derivative(coeffs, x),
            Curve::AbsPolynomial { coeffs } => {
                let s = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                s * horner_derivative(coeffs, x.abs())
            }
            Curve::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * frequency * (frequency * x + phase).cos(),
            Curve::Table(t) => t.derivative(x),
            Curve::Sum { terms } => terms.iter().map(|c| c.derivative(x)).sum(),
        }
    }

    /// True when the curve is the same constant everywhere.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Curve::Constant { value } => Some(*value),
            Curve::Polynomial { coeffs } | Curve::AbsPolynomial { coeffs }
                if coeffs.iter().skip(1).all(|&c| c == 0.0) =>
            {
                Some(coeffs.first().copied().unwrap_or(0.0))
            }
            Curve::Sum { terms } => terms
                .iter()
                .map(Curve::as_constant)
                .try_fold(0.0, |acc, c| c.map(|v| acc + v)),
            _ => None,
        }
    }

    /// Multiply the curve by a scalar.
    pub fn scaled(&self, factor: f64) -> Curve {
        match self {
            Curve::Constant { value } => Curve::constant(value * factor),
            Curve::GaussianBump {
                base,
                height,
                center,
                width,
            } => Curve::GaussianBump {
                base: base * factor,
                height: height * factor,
                center: *center,
                width: *width,
            },
            Curve::Lorentzian {
                base,
                height,
                center,
                width,
            } => Curve::Lorentzian {
                base: base * factor,
                height: height * factor,
                center: *center,
                width: *width,
            },
            Curve::Polynomial { coeffs } => Curve::Polynomial {
                coeffs: coeffs.iter().map(|c| c * factor).collect(),
            },
            Curve::AbsPolynomial { coeffs } => Curve::AbsPolynomial {
                coeffs: coeffs.iter().map(|c| c * factor).collect(),
            },
            Curve::Sine {
                amplitude,
                frequency,
                phase,
            } => Curve::Sine {
                amplitude: amplitude * factor,
                frequency: *frequency,
                phase: *phase,
            },
            Curve::Table(t) => Curve::Table(t.scaled(factor)),
            Curve::Sum { terms } => Curve::Sum {
                terms: terms.iter().map(|c| c.scaled(factor)).collect(),
            },
        }
    }

    /// `self + offset`
    pub fn shifted(&self, offset: f64) -> Curve {
        match self {
            Curve::Constant { value } => Curve::constant(value + offset),
            Curve::Sum { terms } => {
                let mut terms = terms.clone();
                terms.push(Curve::constant(offset));
                Curve::Sum { terms }
            }
            other => Curve::sum(vec![other.clone(), Curve::constant(offset)]),
        }
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
}

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableSpec", into = "TableSpec")]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpec {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TryFrom<TableSpec> for MonotoneCubic {
    type Error = Error;

    fn try_from(spec: TableSpec) -> Result<Self> {
        MonotoneCubic::new(spec.x, spec.y)
    }
}

impl From<MonotoneCubic> for TableSpec {
    fn from(t: MonotoneCubic) -> Self {
        TableSpec { x: t.xs, y: t.ys }
    }
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::config(
                "table curve needs at least two (x, y) pairs of equal length",
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("table curve abscissae must be strictly increasing"));
        }
        let slopes = pchip_slopes(&xs, &ys);
        Ok(Self { xs, ys, slopes })
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y * factor).collect(),
            slopes: self.slopes.iter().map(|s| s * factor).collect(),
        }
    }

    fn locate(&self, x: f64) -> usize {
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k => (k - 1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let k = self.locate(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.slopes[0];
        }
        if x >= self.xs[n - 1] {
            return self.slopes[n - 1];
        }
        let k = self.locate(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let d00 = 6.0 * t * t - 6.0 * t;
        let d10 = 3.0 * t * t - 4.0 * t + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * t * t - 2.0 * t;
        (d00 * self.ys[k] + d01 * self.ys[k + 1]) / h + d10 * self.slopes[k] + d11 * self.slopes[k + 1]
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}
