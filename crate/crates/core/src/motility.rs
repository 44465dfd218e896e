//! Motility laws `gamma(v)`: how strongly the population diffuses at a
//! given signal level.
//!
//! Built-in families: constant `c`, exponential `exp(-chi s)`, rational
//! `(1 + s)^(-k)`, and tabulated laws interpolated with a cubic Hermite
//! spline through `(s, gamma, gamma')` samples, so the evaluated derivative
//! matches the tabulated one at every node and the law is C^1.
//!
//! Range extrema (`min_on`, `derivative_sup_on`) are computed by a dense
//! scan plus golden-section refinement around the best bracket: the laws a
//! run accepts are piecewise smooth, so the scan localizes every extremum
//! and the refinement recovers it to near machine precision. Runs that
//! enforce the positivity assumption reject any evaluation `<= 0`.

use std::path::Path;

use crate::error::Error;

/// Points in the coarse extremum scan. The refinement step narrows the
/// winning bracket (width `2 V / (SCAN_POINTS - 1)`) to ~1e-14 relative.
const SCAN_POINTS: usize = 2048;

/// Tabulated motility: strictly increasing abscissas starting at 0 with
/// values and derivatives, evaluated as a cubic Hermite spline.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledLaw {
    s: Vec<f64>,
    value: Vec<f64>,
    slope: Vec<f64>,
}

impl SampledLaw {
    pub fn new(samples: &[(f64, f64, f64)]) -> Result<Self, Error> {
        if samples.len() < 2 {
            return Err(Error::Domain(
                "sampled motility needs at least two points".into(),
            ));
        }
        if samples[0].0 != 0.0 {
            return Err(Error::Domain(format!(
                "sampled motility must start at s = 0, got {}",
                samples[0].0
            )));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain(format!(
                    "sampled motility abscissas must increase strictly: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(s, v, d) in samples {
            if !(s.is_finite() && v.is_finite() && d.is_finite()) {
                return Err(Error::Domain(format!(
                    "sampled motility entry not finite: ({s}, {v}, {d})"
                )));
            }
        }
        Ok(SampledLaw {
            s: samples.iter().map(|t| t.0).collect(),
            value: samples.iter().map(|t| t.1).collect(),
            slope: samples.iter().map(|t| t.2).collect(),
        })
    }

    /// Upper end of the sampled range.
    pub fn s_max(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn segment(&self, s: f64) -> Result<usize, Error> {
        if s > self.s_max() {
            return Err(Error::Domain(format!(
                "motility evaluated at {s} outside sampled range [0, {}]",
                self.s_max()
            )));
        }
        // partition_point returns the first index with s[i] > s, so the
        // segment starts one position earlier; clamp for s == s_max.
        let i = self.s.partition_point(|&a| a <= s);
        Ok(i.saturating_sub(1).min(self.s.len() - 2))
    }

    fn eval(&self, s: f64) -> Result<f64, Error> {
        let i = self.segment(s)?;
        let h = self.s[i + 1] - self.s[i];
        let t = (s - self.s[i]) / h;
        let h00 = (2.0 * t - 3.0) * t * t + 1.0;
        let h10 = ((t - 2.0) * t + 1.0) * t;
        let h01 = (3.0 - 2.0 * t) * t * t;
        let h11 = (t - 1.0) * t * t;
        Ok(h00 * self.value[i]
            + h10 * h * self.slope[i]
            + h01 * self.value[i + 1]
            + h11 * h * self.slope[i + 1])
    }

    fn eval_derivative(&self, s: f64) -> Result<f64, Error> {
        let i = self.segment(s)?;
        let h = self.s[i + 1] - self.s[i];
        let t = (s - self.s[i]) / h;
        let d00 = 6.0 * t * (t - 1.0);
        let d10 = (3.0 * t - 4.0) * t + 1.0;
        let d01 = -6.0 * t * (t - 1.0);
        let d11 = (3.0 * t - 2.0) * t;
        Ok((d00 * self.value[i] + d01 * self.value[i + 1]) / h
            + d10 * self.slope[i]
            + d11 * self.slope[i + 1])
    }
}

/// The motility families a scenario can select.
#[derive(Debug, Clone, PartialEq)]
pub enum MotilityKind {
    /// `gamma(s) = c`.
    Constant(f64),
    /// `gamma(s) = exp(-chi s)`.
    Exponential(f64),
    /// `gamma(s) = (1 + s)^(-k)`.
    Rational(f64),
    /// Tabulated law, cubic Hermite between samples.
    Sampled(SampledLaw),
}

/// A motility law plus the positivity policy of the run using it.
#[derive(Debug, Clone, PartialEq)]
pub struct Motility {
    kind: MotilityKind,
    require_positive: bool,
}

impl Motility {
    pub fn constant(c: f64) -> Result<Self, Error> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("constant motility must be finite, got {c}")));
        }
        Ok(Motility { kind: MotilityKind::Constant(c), require_positive: false })
    }

    pub fn exponential(chi: f64) -> Result<Self, Error> {
        if !chi.is_finite() || chi < 0.0 {
            return Err(Error::Domain(format!(
                "exponential motility rate must be finite and nonnegative, got {chi}"
            )));
        }
        Ok(Motility { kind: MotilityKind::Exponential(chi), require_positive: false })
    }

    pub fn rational(k: f64) -> Result<Self, Error> {
        if !k.is_finite() || k < 0.0 {
            return Err(Error::Domain(format!(
                "rational motility exponent must be finite and nonnegative, got {k}"
            )));
        }
        Ok(Motility { kind: MotilityKind::Rational(k), require_positive: false })
    }

    pub fn sampled(samples: &[(f64, f64, f64)]) -> Result<Self, Error> {
        Ok(Motility { kind: MotilityKind::Sampled(SampledLaw::new(samples)?), require_positive: false })
    }

    /// Turn on (or off) the positivity assumption: evaluations `<= 0`
    /// become assumption-violation errors.
    pub fn with_positivity_required(mut self, required: bool) -> Self {
        self.require_positive = required;
        self
    }

    pub fn positivity_required(&self) -> bool {
        self.require_positive
    }

    pub fn kind(&self) -> &MotilityKind {
        &self.kind
    }

    /// Parse the scenario syntax `constant:1.0 | exp:0.5 | rational:2 |
    /// custom:<file>`; the custom path is resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let (head, arg) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("motility '{text}' must look like kind:arg")))?;
        let number = |what: &str| -> Result<f64, Error> {
            arg.trim().parse::<f64>().map_err(|e| {
                Error::Config(format!("motility {what} argument '{}': {e}", arg.trim()))
            })
        };
        match head.trim() {
            "constant" => Motility::constant(number("constant")?),
            "exp" => Motility::exponential(number("exp")?),
            "rational" => Motility::rational(number("rational")?),
            "custom" => {
                let path = base_dir.join(arg.trim());
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("motility table {}: {e}", path.display()))
                })?;
                Motility::from_table_text(&text)
            }
            other => Err(Error::Config(format!(
                "unknown motility kind '{other}' (expected constant, exp, rational, custom)"
            ))),
        }
    }

    /// Parse a sample table: one `s gamma gamma'` triple per line,
    /// whitespace or comma separated, `#` starts a comment.
    pub fn from_table_text(text: &str) -> Result<Self, Error> {
        let mut samples = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> =
                line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "motility table line {}: expected 3 numbers, got {}",
                    lineno + 1,
                    parts.len()
                )));
            }
            let mut nums = [0.0f64; 3];
            for (slot, part) in nums.iter_mut().zip(&parts) {
                *slot = part.parse().map_err(|e| {
                    Error::Config(format!("motility table line {}: {e}", lineno + 1))
                })?;
            }
            samples.push((nums[0], nums[1], nums[2]));
        }
        Motility::sampled(&samples).map_err(|e| match e {
            Error::Domain(msg) => Error::Config(format!("motility table: {msg}")),
            other => other,
        })
    }

    /// One-line description for run metadata.
    pub fn describe(&self) -> String {
        match &self.kind {
            MotilityKind::Constant(c) => format!("constant:{c}"),
            MotilityKind::Exponential(chi) => format!("exp:{chi}"),
            MotilityKind::Rational(k) => format!("rational:{k}"),
            MotilityKind::Sampled(t) => {
                format!("custom:{} samples on [0, {}]", t.s.len(), t.s_max())
            }
        }
    }

    /// `gamma(s)`. Errors: `s` outside `[0, inf)` (or past the sampled
    /// range), or a nonpositive value while positivity is required.
    pub fn eval(&self, s: f64) -> Result<f64, Error> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::Domain(format!("motility evaluated at invalid level {s}")));
        }
        let value = self.eval_raw(s)?;
        if self.require_positive && value <= 0.0 {
            return Err(Error::Assumption(format!(
                "motility must stay positive, got gamma({s}) = {value}"
            )));
        }
        Ok(value)
    }

    /// The law's value without the positivity gate; the range scans use
    /// this so they can report a nonpositive minimum instead of erroring
    /// at the first offending sample.
    fn eval_raw(&self, s: f64) -> Result<f64, Error> {
        match &self.kind {
            MotilityKind::Constant(c) => Ok(*c),
            MotilityKind::Exponential(chi) => Ok((-chi * s).exp()),
            MotilityKind::Rational(k) => Ok((1.0 + s).powf(-k)),
            MotilityKind::Sampled(t) => t.eval(s),
        }
    }

    /// `gamma'(s)`, with the same domain rules as [`Motility::eval`].
    pub fn eval_derivative(&self, s: f64) -> Result<f64, Error> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::Domain(format!("motility derivative at invalid level {s}")));
        }
        match &self.kind {
            MotilityKind::Constant(_) => Ok(0.0),
            MotilityKind::Exponential(chi) => Ok(-chi * (-chi * s).exp()),
            MotilityKind::Rational(k) => Ok(-k * (1.0 + s).powf(-k - 1.0)),
            MotilityKind::Sampled(t) => t.eval_derivative(s),
        }
    }

    /// Minimum of `gamma` over `[0, v_max]` by scan plus refinement.
    pub fn min_on(&self, v_max: f64) -> Result<f64, Error> {
        if !v_max.is_finite() || v_max < 0.0 {
            return Err(Error::Domain(format!("motility range bound invalid: {v_max}")));
        }
        scan_extremum(v_max, &mut |s| self.eval_raw(s))
    }

    /// Supremum of `|gamma'|` over `[0, v_max]` by scan plus refinement.
    pub fn derivative_sup_on(&self, v_max: f64) -> Result<f64, Error> {
        if !v_max.is_finite() || v_max < 0.0 {
            return Err(Error::Domain(format!("motility range bound invalid: {v_max}")));
        }
        let sup = scan_extremum(v_max, &mut |s| Ok(-self.eval_derivative(s)?.abs()))?;
        Ok(-sup)
    }
}

/// Minimize `f` over `[0, v_max]`: dense scan, then golden-section inside
/// the bracket around the best scan point.
fn scan_extremum(
    v_max: f64,
    f: &mut impl FnMut(f64) -> Result<f64, Error>,
) -> Result<f64, Error> {
    if v_max == 0.0 {
        return f(0.0);
    }
    let m = SCAN_POINTS - 1;
    let mut best_i = 0usize;
    let mut best = f64::INFINITY;
    for i in 0..=m {
        // Hit the right endpoint exactly so endpoint minima are sharp.
        let s = if i == m { v_max } else { v_max * i as f64 / m as f64 };
        let y = f(s)?;
        if y < best {
            best = y;
            best_i = i;
        }
    }
    let lo = v_max * best_i.saturating_sub(1) as f64 / m as f64;
    let hi = v_max * (best_i + 1).min(m) as f64 / m as f64;
    let refined = golden_min(f, lo, hi)?;
    Ok(best.min(refined))
}

fn golden_min(
    f: &mut impl FnMut(f64) -> Result<f64, Error>,
    mut a: f64,
    mut b: f64,
) -> Result<f64, Error> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    if !(b > a) {
        return f(a);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a) <= 1e-15 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(fc.min(fd))
}
