//! One-dimensional log-domain adaptive quadrature.
//!
//! Integrands are supplied as log-densities `g` and the routines return
//! `log ∫ exp(g)`. The positive half-line is mapped to the real line with
//! `σ = e^u`, so scale integrals are computed in `log σ`. On the real line the
//! integrand mode is located by a coarse scan and golden-section refinement,
//! the window is extended from the mode until `g` has dropped by
//! `window² / 2` (or hits a hard `-inf` edge, which is bracketed by bisection),
//! and the window is integrated by globally adaptive Gauss–Kronrod (21 point)
//! on `exp(g - g_max)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::rng::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    RealLine,
    PositiveHalfLine,
}

/// Integration domain with optional placement hints.
///
/// On the real line `center` and `scale` are in the integration variable. On
/// the positive half-line `center` is a typical value of `σ` (must be > 0) and
/// `scale` is a width in `log σ` units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain1D {
    pub kind: DomainKind,
    pub center: Option<f64>,
    pub scale: Option<f64>,
}

impl Domain1D {
    pub fn real_line() -> Self {
        Self {
            kind: DomainKind::RealLine,
            center: None,
            scale: None,
        }
    }

    pub fn positive_half_line() -> Self {
        Self {
            kind: DomainKind::PositiveHalfLine,
            center: None,
            scale: None,
        }
    }

    pub fn with_center(mut self, center: f64) -> Self {
        self.center = Some(center);
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }

    /// Hints mapped to the internal variable `u`.
    fn internal_hints(&self) -> Result<(f64, f64)> {
        let scale = match self.scale {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::invalid("scale hint", format!("must be > 0, got {s}"))),
            None => 1.0,
        };
        let center = match (self.kind, self.center) {
            (DomainKind::RealLine, Some(c)) if c.is_finite() => c,
            (DomainKind::PositiveHalfLine, Some(c)) if c > 0.0 && c.is_finite() => c.ln(),
            (_, Some(c)) => return Err(Error::invalid("center hint", format!("not usable: {c}"))),
            (_, None) => 0.0,
        };
        Ok((center, scale))
    }

    fn u_limit(&self) -> f64 {
        match self.kind {
            DomainKind::RealLine => 1e300,
            // exp(u) must stay finite and nonzero
            DomainKind::PositiveHalfLine => 700.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Window half-width in standardized units.
    pub window: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_subdivisions: 2000,
            window: 12.0,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(Error::invalid("rel_tol", format!("must lie in (0, 1e-2], got {}", self.rel_tol)));
        }
        if !(self.window >= 6.0) || !self.window.is_finite() {
            return Err(Error::invalid("window", format!("must be >= 6, got {}", self.window)));
        }
        if self.max_subdivisions < 8 {
            return Err(Error::invalid("max_subdivisions", "must be at least 8"));
        }
        Ok(())
    }
}

/// Result of [`log_integral`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogIntegral {
    pub log_value: f64,
    /// Estimated relative error of `exp(log_value)`.
    pub rel_error: f64,
    /// Located mode, in the original variable.
    pub mode: f64,
    /// Curvature-based width at the mode, in the internal variable.
    pub width: f64,
    pub evaluations: usize,
}

impl LogIntegral {
    /// Domain hints reproducing this integral's placement.
    pub fn hints(&self, kind: DomainKind) -> Domain1D {
        Domain1D {
            kind,
            center: Some(self.mode),
            scale: Some(self.width),
        }
    }
}

const MAX_DOUBLINGS: usize = 64;
const SCAN_HALF: i32 = 16;

struct Integrand<'a, G> {
    g: &'a G,
    kind: DomainKind,
    evaluations: usize,
}

impl<G: Fn(f64) -> f64> Integrand<'_, G> {
    fn eval(&mut self, u: f64) -> Result<f64> {
        self.evaluations += 1;
        let v = match self.kind {
            DomainKind::RealLine => (self.g)(u),
            DomainKind::PositiveHalfLine => {
                let s = u.exp();
                if s == 0.0 || !s.is_finite() {
                    return Ok(f64::NEG_INFINITY);
                }
                (self.g)(s) + u
            }
        };
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NonFiniteIntegrand { at: u });
        }
        Ok(v)
    }
}

fn divergence() -> Error {
    Error::ToleranceFailure {
        log_estimate: f64::INFINITY,
        rel_error: f64::INFINITY,
    }
}

/// `log ∫ exp(g)` over `domain`.
pub fn log_integral<G>(g: G, domain: Domain1D, cfg: &QuadConfig) -> Result<LogIntegral>
where
    G: Fn(f64) -> f64,
{
    log_integral_with_breaks(g, domain, &[], cfg)
}

/// [`log_integral`] with known kinks of `g` (points in the original variable).
/// They become panel boundaries, since a kink close to a panel edge can hide
/// between the edge and the outermost Kronrod node.
pub fn log_integral_with_breaks<G>(g: G, domain: Domain1D, breaks: &[f64], cfg: &QuadConfig) -> Result<LogIntegral>
where
    G: Fn(f64) -> f64,
{
    cfg.validate()?;
    let (center, scale) = domain.internal_hints()?;
    let limit = domain.u_limit();
    let mut f = Integrand {
        g: &g,
        kind: domain.kind,
        evaluations: 0,
    };

    let (mode, hmax) = locate_mode(&mut f, center, scale, limit)?;
    let width = curvature_width(&mut f, mode, hmax, scale)?;
    let drop = 0.5 * cfg.window * cfg.window;
    let lo = find_bound(&mut f, mode, hmax, -1.0, cfg.window * width, drop, limit)?;
    let hi = find_bound(&mut f, mode, hmax, 1.0, cfg.window * width, drop, limit)?;

    let cuts: Vec<f64> = breaks
        .iter()
        .filter_map(|&b| match domain.kind {
            DomainKind::RealLine => Some(b),
            DomainKind::PositiveHalfLine => (b > 0.0).then(|| b.ln()),
        })
        .collect();
    let (sum, rel_error) = adaptive_gk(&mut f, lo, mode, hi, &cuts, hmax, cfg)?;
    let mode_out = match domain.kind {
        DomainKind::RealLine => mode,
        DomainKind::PositiveHalfLine => mode.exp(),
    };
    Ok(LogIntegral {
        log_value: hmax + sum.ln(),
        rel_error,
        mode: mode_out,
        width,
        evaluations: f.evaluations,
    })
}

/// `∫ h·exp(g_den) / ∫ exp(g_den)`.
///
/// The numerator is split into the positive and negative parts of `h`, each
/// integrated in log form; a part with no mass contributes zero.
pub fn log_integral_ratio<H, G>(h: H, g_den: G, domain: Domain1D, cfg: &QuadConfig) -> Result<f64>
where
    H: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    log_integral_ratio_with_breaks(h, g_den, domain, &[], cfg)
}

/// [`log_integral_ratio`] with known kinks of `g_den`.
pub fn log_integral_ratio_with_breaks<H, G>(
    h: H,
    g_den: G,
    domain: Domain1D,
    breaks: &[f64],
    cfg: &QuadConfig,
) -> Result<f64>
where
    H: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let den = log_integral_with_breaks(&g_den, domain, breaks, cfg)?;
    let hinted = den.hints(domain.kind);
    let part = |sign: f64| -> Result<f64> {
        let lg = |t: f64| {
            let v = sign * h(t);
            if v > 0.0 {
                g_den(t) + v.ln()
            } else if v.is_nan() {
                f64::NAN
            } else {
                f64::NEG_INFINITY
            }
        };
        match log_integral_with_breaks(lg, hinted, breaks, cfg) {
            Ok(li) => Ok((li.log_value - den.log_value).exp()),
            Err(Error::EmptyMass) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let pos = part(1.0)?;
    let neg = part(-1.0)?;
    let r = pos - neg;
    if !r.is_finite() {
        return Err(Error::NonFiniteIntegrand { at: f64::NAN });
    }
    Ok(r)
}

fn locate_mode<G: Fn(f64) -> f64>(
    f: &mut Integrand<'_, G>,
    center: f64,
    scale: f64,
    limit: f64,
) -> Result<(f64, f64)> {
    // coarse scan, widening until some finite value is seen
    let mut step = 0.5 * scale;
    let mut best: Option<(i32, f64)> = None;
    for _ in 0..6 {
        for j in -SCAN_HALF..=SCAN_HALF {
            let u = center + step * f64::from(j);
            if u.abs() > limit {
                continue;
            }
            let v = f.eval(u)?;
            if v > f64::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if best.is_some() {
            break;
        }
        step *= 8.0;
    }
    let (j, mut vbest) = best.ok_or(Error::EmptyMass)?;
    let mut m = center + step * f64::from(j);

    // bracket [m - left, m + right] with the best value inside
    let (mut left, mut right) = (step, step);
    if j.abs() == SCAN_HALF {
        let dir = f64::from(j.signum());
        let mut s = step;
        let mut climbed = false;
        for _ in 0..MAX_DOUBLINGS {
            let u = m + dir * s;
            if u.abs() > limit {
                return Err(divergence());
            }
            let v = f.eval(u)?;
            if v > vbest {
                m = u;
                vbest = v;
                s *= 2.0;
            } else {
                climbed = true;
                break;
            }
        }
        if !climbed {
            return Err(divergence());
        }
        if dir > 0.0 {
            left = s / 2.0;
            right = s;
        } else {
            left = s;
            right = s / 2.0;
        }
    }

    // golden-section refinement
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (m - left, m + right);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f.eval(x1)?;
    let mut f2 = f.eval(x2)?;
    let tol = 1e-4 * scale.min(left.min(right));
    for _ in 0..60 {
        if (b - a) < tol {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f.eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f.eval(x2)?;
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v > vbest {
            m = x;
            vbest = v;
        }
    }
    Ok((m, vbest))
}

fn curvature_width<G: Fn(f64) -> f64>(
    f: &mut Integrand<'_, G>,
    mode: f64,
    hmax: f64,
    scale: f64,
) -> Result<f64> {
    let d = 1e-2 * scale;
    let lo = f.eval(mode - d)?;
    let hi = f.eval(mode + d)?;
    let second = hi - 2.0 * hmax + lo;
    // a second difference at rounding level means a flat top (or a kink-free
    // plateau); an overestimated width would make the window miss the mass
    if second.is_finite() && second < -1e-8 * hmax.abs().max(1.0) {
        Ok(d / (-second).sqrt())
    } else {
        Ok(scale)
    }
}

fn find_bound<G: Fn(f64) -> f64>(
    f: &mut Integrand<'_, G>,
    mode: f64,
    hmax: f64,
    dir: f64,
    step0: f64,
    drop: f64,
    limit: f64,
) -> Result<f64> {
    let threshold = hmax - drop;
    let mut inner = mode;
    let mut step = step0;
    for _ in 0..MAX_DOUBLINGS {
        let mut u = mode + dir * step;
        let clamped = u.abs() > limit;
        if clamped {
            u = dir * limit;
        }
        let v = f.eval(u)?;
        if v < threshold {
            if v == f64::NEG_INFINITY {
                return bisect_edge(f, inner, u);
            }
            return Ok(u);
        }
        if clamped {
            return Err(divergence());
        }
        inner = u;
        step *= 2.0;
    }
    Err(divergence())
}

/// Locate the boundary between finite values (at `inside`) and `-inf` (at
/// `outside`); returns a point at or just beyond the boundary.
fn bisect_edge<G: Fn(f64) -> f64>(f: &mut Integrand<'_, G>, mut inside: f64, mut outside: f64) -> Result<f64> {
    for _ in 0..200 {
        let gap = (outside - inside).abs();
        if gap <= 4.0 * f64::EPSILON * (inside.abs() + outside.abs()) || gap < 1e-300 {
            break;
        }
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if f.eval(mid)? == f64::NEG_INFINITY {
            outside = mid;
        } else {
            inside = mid;
        }
    }
    Ok(outside)
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn adaptive_gk<G: Fn(f64) -> f64>(
    f: &mut Integrand<'_, G>,
    lo: f64,
    mode: f64,
    hi: f64,
    cuts: &[f64],
    shift: f64,
    cfg: &QuadConfig,
) -> Result<(f64, f64)> {
    const INITIAL_PIECES: usize = 4;
    let mut breaks = Vec::with_capacity(2 * INITIAL_PIECES + cuts.len() + 1);
    for (a, b) in [(lo, mode), (mode, hi)] {
        if b > a {
            for i in 0..INITIAL_PIECES {
                breaks.push(a + (b - a) * i as f64 / INITIAL_PIECES as f64);
            }
        }
    }
    breaks.extend(cuts.iter().copied().filter(|&c| c > lo && c < hi));
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        heap.push(gk21(f, w[0], w[1], shift)?);
    }
    let mut done: Vec<Segment> = Vec::new();

    loop {
        let total: f64 = heap.iter().chain(done.iter()).map(|s| s.value).sum();
        let err: f64 = heap.iter().chain(done.iter()).map(|s| s.error).sum();
        if !(total > 0.0) {
            // the mode is finite, so the rule missed the mass: a placement failure
            return Err(Error::ToleranceFailure {
                log_estimate: f64::NEG_INFINITY,
                rel_error: f64::INFINITY,
            });
        }
        if err <= cfg.rel_tol * total || heap.is_empty() {
            let converged = err <= cfg.rel_tol * total;
            let mut all: Vec<Segment> = heap.into_vec();
            all.extend(done);
            all.sort_by(|x, y| x.a.total_cmp(&y.a));
            let values: Vec<f64> = all.iter().map(|s| s.value).collect();
            let sum = pairwise_sum(&values);
            if !converged {
                return Err(Error::ToleranceFailure {
                    log_estimate: shift + sum.ln(),
                    rel_error: err / total,
                });
            }
            return Ok((sum, err / sum));
        }
        if heap.len() + done.len() >= cfg.max_subdivisions {
            let values: Vec<f64> = heap.iter().chain(done.iter()).map(|s| s.value).collect();
            return Err(Error::ToleranceFailure {
                log_estimate: shift + values.iter().sum::<f64>().ln(),
                rel_error: err / total,
            });
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            done.push(worst);
            continue;
        }
        heap.push(gk21(f, worst.a, mid, shift)?);
        heap.push(gk21(f, mid, worst.b, shift)?);
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_351_996,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

/// The 21-point Kronrod rule on `[a, b]` as (node, weight) pairs, for callers
/// building fixed product grids.
pub(crate) fn kronrod21_rule(a: f64, b: f64) -> [(f64, f64); 21] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 21];
    for i in 0..10 {
        out[2 * i] = (c - h * XGK[i], h * WGK[i]);
        out[2 * i + 1] = (c + h * XGK[i], h * WGK[i]);
    }
    out[20] = (c, h * WGK[10]);
    out
}

fn gk21<G: Fn(f64) -> f64>(f: &mut Integrand<'_, G>, a: f64, b: f64, shift: f64) -> Result<Segment> {
    let centr = 0.5 * (a + b);
    let hlgth = 0.5 * (b - a);
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    let fc = (f.eval(centr)? - shift).exp();
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    for j in 0..10 {
        let dx = hlgth * XGK[j];
        let f1 = (f.eval(centr - dx)? - shift).exp();
        let f2 = (f.eval(centr + dx)? - shift).exp();
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * hlgth;
    resabs *= hlgth.abs();
    resasc *= hlgth.abs();
    let mut error = ((resk - resg) * hlgth).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Ok(Segment { a, b, value, error })
}
