//! Independent zero-mean GP per output dimension with Matérn ARD kernels.
//!
//! Outputs on periodic dimensions are modelled as the wrapped displacement
//! `y_ℓ - x_ℓ`, so the target stays continuous across the seam; their
//! predictive mean is reported on the unwrapped representative near the
//! query.

pub mod confidence;
pub mod kernel;
pub mod likelihood;
pub mod optimize;

use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryDataset;
use crate::error::{check_dim, Error, Result};
use crate::grid::StateBox;
use crate::par::map_range;
pub use kernel::KernelFamily;
use likelihood::Problem;
pub use optimize::OptimizerSettings;

/// Lower bound on the fitted noise-to-signal variance ratio.
pub const NOISE_FLOOR: f64 = 1e-8;
/// Lower bound on a fixed noise ratio, so zero noise still factorizes.
pub const EXACT_FLOOR: f64 = 1e-14;
/// Largest noise ratio the escalating jitter may reach.
pub const MAX_JITTER: f64 = 1e-4;
const NOISE_CEIL: f64 = 1.0;
const QUERY_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSettings {
    pub family: KernelFamily,
    pub optimizer: OptimizerSettings,
    /// Hold the noise ratio η²/σ² at this value instead of fitting it.
    pub fixed_noise_ratio: Option<f64>,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings {
            family: KernelFamily::Matern52,
            optimizer: OptimizerSettings::default(),
            fixed_noise_ratio: None,
        }
    }
}

/// One optimizer start and where it ended.
#[derive(Clone, Debug, PartialEq)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub start_value: f64,
    pub end: Vec<f64>,
    pub end_value: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct OutputModel {
    lengthscales: Vec<f64>,
    noise_ratio: f64,
    signal_variance: f64,
    log_likelihood: f64,
    targets: Vec<f64>,
    chol: Mat<f64>,
    alpha: Vec<f64>,
    // row-major n × embedded_dim, see kernel::embed
    features: Vec<f64>,
    starts: Vec<StartRecord>,
}

fn embed_all(xs: &[f64], m: usize, lengthscales: &[f64], periods: &[Option<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len() / m * kernel::embedded_dim(periods));
    for x in xs.chunks_exact(m) {
        kernel::embed(x, lengthscales, periods, &mut out);
    }
    out
}

impl OutputModel {
    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// η²/σ², including any jitter added to make the factorization succeed.
    pub fn noise_ratio(&self) -> f64 {
        self.noise_ratio
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn starts(&self) -> &[StartRecord] {
        &self.starts
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Clone, Debug)]
pub struct GpSurrogate {
    family: KernelFamily,
    dim: usize,
    periods: Vec<Option<f64>>,
    // row-major n × dim
    xs: Vec<f64>,
    outputs: Vec<OutputModel>,
}

/// Row-major `Q × M` predictive means and, if requested, standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Option<Vec<f64>>,
}

fn wrap_centered(v: f64, p: f64) -> f64 {
    (v + 0.5 * p).rem_euclid(p) - 0.5 * p
}

fn target(x: &[f64], y: &[f64], l: usize, periods: &[Option<f64>]) -> f64 {
    match periods[l] {
        Some(p) => wrap_centered(y[l] - x[l], p),
        None => y[l],
    }
}

struct Factored {
    chol: Mat<f64>,
    alpha: Vec<f64>,
    noise_ratio: f64,
    quad: f64,
    half_logdet: f64,
}

/// Cholesky of `C = K + g I`, escalating the ratio ×10 on failure until it
/// would exceed [`MAX_JITTER`].
fn factor(prob: &Problem, lengthscales: &[f64], g: f64, t: &[f64]) -> Result<Factored> {
    let mut g_eff = g.max(EXACT_FLOOR);
    loop {
        let c = prob.covariance(lengthscales, g_eff);
        if let Ok(llt) = c.llt(Side::Lower) {
            let n = t.len();
            let mut a = Mat::<f64>::from_fn(n, 1, |i, _| t[i]);
            llt.solve_in_place(a.as_mut());
            let alpha: Vec<f64> = (0..n).map(|i| a[(i, 0)]).collect();
            let quad = t.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let l = llt.L().to_owned();
            let half_logdet = (0..n).map(|i| l[(i, i)].ln()).sum();
            return Ok(Factored {
                chol: l,
                alpha,
                noise_ratio: g_eff,
                quad,
                half_logdet,
            });
        }
        let next = g_eff * 10.0;
        if next > MAX_JITTER.max(g) * (1.0 + 1e-12) {
            return Err(Error::Cholesky { jitter: g_eff });
        }
        g_eff = next;
    }
}

fn profiled_loglik(n: usize, sigma2: f64, half_logdet: f64) -> f64 {
    let nf = n as f64;
    -0.5 * nf * sigma2.ln() - half_logdet - 0.5 * nf * (1.0 + (2.0 * std::f64::consts::PI).ln())
}

/// Characteristic input scale per dimension: the period, or the data range.
fn input_scales(xs: &[f64], m: usize, periods: &[Option<f64>]) -> Vec<f64> {
    (0..m)
        .map(|i| match periods[i] {
            Some(p) => p,
            None => {
                let (lo, hi) = xs
                    .iter()
                    .skip(i)
                    .step_by(m)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                if hi > lo {
                    hi - lo
                } else {
                    1.0
                }
            }
        })
        .collect()
}

/// Keeps the first of each group of identical inputs (identical after
/// wrapping periodic coordinates). Conflicting targets are an error when the
/// noise is held fixed, since no noise level can explain them.
fn dedupe(xs: &[f64], targets: &[Vec<f64>], m: usize, periods: &[Option<f64>], fixed_noise: bool) -> Result<Vec<usize>> {
    let n = xs.len() / m;
    let key = |j: usize, i: usize| match periods[i] {
        Some(p) => xs[j * m + i].rem_euclid(p),
        None => xs[j * m + i],
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (0..m)
            .map(|i| key(a, i).total_cmp(&key(b, i)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; n];
    let mut g = 0;
    while g < n {
        let mut h = g + 1;
        while h < n && (0..m).all(|i| key(order[g], i) == key(order[h], i)) {
            h += 1;
        }
        let first = order[g];
        for &dup in &order[g + 1..h] {
            let same = targets.iter().all(|t| {
                let (a, b) = (t[first], t[dup]);
                (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
            });
            if same {
                keep[dup] = false;
            } else if fixed_noise {
                return Err(Error::DegenerateData(format!(
                    "inputs {first} and {dup} coincide but their outputs differ"
                )));
            }
        }
        g = h;
    }
    Ok((0..n).filter(|&j| keep[j]).collect())
}

struct Training {
    xs: Vec<f64>,
    targets: Vec<Vec<f64>>,
}

fn training_set(data: &TrajectoryDataset, periods: &[Option<f64>], fixed_noise: bool) -> Result<Training> {
    let m = data.dim();
    check_dim(m, periods.len())?;
    if data.len() < 2 {
        return Err(Error::DegenerateData(format!("need at least 2 pairs, got {}", data.len())));
    }
    let mut xs = Vec::with_capacity(data.len() * m);
    let mut targets = vec![Vec::with_capacity(data.len()); m];
    for (x, y) in data.xs().iter().zip(data.ys()) {
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite value in dataset".into()));
        }
        xs.extend_from_slice(x);
        for (l, t) in targets.iter_mut().enumerate() {
            t.push(target(x, y, l, periods));
        }
    }
    let keep = dedupe(&xs, &targets, m, periods, fixed_noise)?;
    if keep.len() < 2 {
        return Err(Error::DegenerateData("fewer than 2 distinct inputs".into()));
    }
    if keep.len() < data.len() {
        xs = keep.iter().flat_map(|&j| xs[j * m..(j + 1) * m].to_vec()).collect();
        for t in targets.iter_mut() {
            *t = keep.iter().map(|&j| t[j]).collect();
        }
    }
    Ok(Training { xs, targets })
}

#[allow(clippy::too_many_arguments)]
fn fit_output(
    family: KernelFamily,
    xs: &[f64],
    m: usize,
    periods: &[Option<f64>],
    t: Vec<f64>,
    settings: &GpSettings,
    seed: u64,
    warm: Option<(&[f64], f64)>,
) -> Result<OutputModel> {
    let prob = Problem::new(family, xs, m, periods, &t);
    let w = input_scales(xs, m, periods);
    let mut lo: Vec<f64> = w.iter().map(|w| (1e-2 * w).ln()).collect();
    let mut hi: Vec<f64> = w.iter().map(|w| (1e2 * w).ln()).collect();
    match settings.fixed_noise_ratio {
        Some(g) => {
            let g = g.max(EXACT_FLOOR).ln();
            lo.push(g);
            hi.push(g);
        }
        None => {
            lo.push(NOISE_FLOOR.ln());
            hi.push(NOISE_CEIL.ln());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    match warm {
        Some((ells, g)) => starts.push(ells.iter().map(|l| l.ln()).chain([g.ln()]).collect()),
        None => starts.push(w.iter().map(|w| (0.3 * w).ln()).chain([1e-6f64.ln()]).collect()),
    }
    while starts.len() < settings.optimizer.restarts.max(1) {
        let mut p: Vec<f64> = w.iter().map(|w| rng.gen_range((0.05 * w).ln()..(2.0 * w).ln())).collect();
        p.push(rng.gen_range(NOISE_FLOOR.ln()..1e-3f64.ln()));
        starts.push(p);
    }
    for p in starts.iter_mut() {
        for i in 0..p.len() {
            p[i] = p[i].clamp(lo[i], hi[i]);
        }
    }

    let eval = |p: &[f64]| prob.evaluate(p, true).map(|e| (e.value, e.gradient.unwrap()));
    let mut records = Vec::new();
    for mut p in starts {
        // nudge the noise up until the start is factorizable
        let mut first = prob.evaluate(&p, false);
        while first.is_none() && p[m] < hi[m] {
            p[m] = (p[m] + 10f64.ln()).min(hi[m]);
            first = prob.evaluate(&p, false);
        }
        let Some(first) = first else { continue };
        if let Some(a) = optimize::ascend(eval, &p, &lo, &hi, &settings.optimizer) {
            records.push(StartRecord {
                start: p,
                start_value: first.value,
                end: a.point,
                end_value: a.value,
                iterations: a.iterations,
            });
        }
    }
    let best = records
        .iter()
        .max_by(|a, b| a.end_value.total_cmp(&b.end_value))
        .ok_or(Error::Cholesky { jitter: MAX_JITTER })?;
    let ells: Vec<f64> = best.end[..m].iter().map(|v| v.exp()).collect();
    let g = best.end[m].exp();
    let f = factor(&prob, &ells, g, &t)?;
    let sigma2 = f.quad / t.len() as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateData("all targets are zero".into()));
    }
    Ok(OutputModel {
        features: embed_all(xs, m, &ells, periods),
        lengthscales: ells,
        noise_ratio: f.noise_ratio,
        signal_variance: sigma2,
        log_likelihood: profiled_loglik(t.len(), sigma2, f.half_logdet),
        targets: t,
        chol: f.chol,
        alpha: f.alpha,
        starts: records,
    })
}

/// Refactors one output at fixed hyperparameters, keeping `σ²` as given.
fn rebuild_output(
    family: KernelFamily,
    xs: &[f64],
    m: usize,
    periods: &[Option<f64>],
    t: Vec<f64>,
    lengthscales: &[f64],
    noise_ratio: f64,
    sigma2: f64,
) -> Result<OutputModel> {
    let prob = Problem::new(family, xs, m, periods, &t);
    let f = factor(&prob, lengthscales, noise_ratio, &t)?;
    let n = t.len() as f64;
    // likelihood at the held σ², not the profiled one
    let log_likelihood = -0.5 * f.quad / sigma2 - 0.5 * n * sigma2.ln() - f.half_logdet
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    Ok(OutputModel {
        features: embed_all(xs, m, lengthscales, periods),
        lengthscales: lengthscales.to_vec(),
        noise_ratio: f.noise_ratio,
        signal_variance: sigma2,
        log_likelihood,
        targets: t,
        chol: f.chol,
        alpha: f.alpha,
        starts: Vec::new(),
    })
}

fn output_seed(seed: u64, l: usize) -> u64 {
    seed ^ (l as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl GpSurrogate {
    /// Maximum-likelihood fit of every output dimension. `periods[i]` marks
    /// periodic state dimensions with their period.
    pub fn fit(data: &TrajectoryDataset, periods: &[Option<f64>], settings: &GpSettings, seed: u64) -> Result<Self> {
        Self::fit_from(data, periods, settings, seed, None)
    }

    /// Refits on `data` with the current hyperparameters as the first start.
    pub fn refit(&self, data: &TrajectoryDataset, settings: &GpSettings, seed: u64) -> Result<Self> {
        let periods = self.periods.clone();
        Self::fit_from(data, &periods, settings, seed, Some(self))
    }

    fn fit_from(
        data: &TrajectoryDataset,
        periods: &[Option<f64>],
        settings: &GpSettings,
        seed: u64,
        warm: Option<&GpSurrogate>,
    ) -> Result<Self> {
        let m = data.dim();
        let tr = training_set(data, periods, settings.fixed_noise_ratio.is_some())?;
        let xs = &tr.xs;
        let outputs = map_range(m, |l| {
            let w = warm.map(|g| (g.outputs[l].lengthscales.as_slice(), g.outputs[l].noise_ratio));
            fit_output(
                settings.family,
                xs,
                m,
                periods,
                tr.targets[l].clone(),
                settings,
                output_seed(seed, l),
                w,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(GpSurrogate {
            family: settings.family,
            dim: m,
            periods: periods.to_vec(),
            xs: tr.xs,
            outputs,
        })
    }

    /// Conditions on `data` (which replaces the training set) keeping every
    /// hyperparameter, including `σ²`, fixed. Predictive variance can then
    /// only shrink as data are added.
    pub fn condition_on(&self, data: &TrajectoryDataset) -> Result<Self> {
        check_dim(self.dim, data.dim())?;
        let m = self.dim;
        let tr = training_set(data, &self.periods, false)?;
        let outputs = map_range(m, |l| {
            let o = &self.outputs[l];
            rebuild_output(
                self.family,
                &tr.xs,
                m,
                &self.periods,
                tr.targets[l].clone(),
                &o.lengthscales,
                o.noise_ratio,
                o.signal_variance,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(GpSurrogate {
            family: self.family,
            dim: m,
            periods: self.periods.clone(),
            xs: tr.xs,
            outputs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    /// Number of distinct training inputs.
    pub fn len(&self) -> usize {
        self.xs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn training_inputs(&self) -> &[f64] {
        &self.xs
    }

    pub fn output(&self, l: usize) -> &OutputModel {
        &self.outputs[l]
    }

    pub fn outputs(&self) -> &[OutputModel] {
        &self.outputs
    }

    /// Mean and standard deviation at one state.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.predict_batch(x, true)?;
        Ok((p.mean, p.std.unwrap()))
    }

    /// Predictions at `Q` row-major states. Skipping the standard deviation
    /// avoids the triangular solves, which dominate the cost.
    pub fn predict_batch(&self, points: &[f64], with_std: bool) -> Result<Prediction> {
        let m = self.dim;
        if !points.len().is_multiple_of(m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: points.len() % m,
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite query state".into()));
        }
        let q = points.len() / m;
        let chunks = q.div_ceil(QUERY_CHUNK);
        let parts = map_range(chunks * m, |job| {
            let (c, l) = (job / m, job % m);
            let lo = c * QUERY_CHUNK;
            let hi = (lo + QUERY_CHUNK).min(q);
            self.predict_chunk(l, &points[lo * m..hi * m], with_std)
        });
        let mut mean = vec![0.0; q * m];
        let mut std = with_std.then(|| vec![0.0; q * m]);
        for (job, (mu, sd)) in parts.into_iter().enumerate() {
            let (c, l) = (job / m, job % m);
            let lo = c * QUERY_CHUNK;
            for (j, v) in mu.into_iter().enumerate() {
                mean[(lo + j) * m + l] = v;
            }
            if let (Some(std), Some(sd)) = (std.as_mut(), sd) {
                for (j, v) in sd.into_iter().enumerate() {
                    std[(lo + j) * m + l] = v;
                }
            }
        }
        Ok(Prediction { mean, std })
    }

    fn predict_chunk(&self, l: usize, points: &[f64], with_std: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let m = self.dim;
        let n = self.len();
        let q = points.len() / m;
        let o = &self.outputs[l];
        let e = kernel::embedded_dim(&self.periods);
        let query = embed_all(points, m, &o.lengthscales, &self.periods);
        let kstar = Mat::<f64>::from_fn(n, q, |i, j| {
            let a = &o.features[i * e..(i + 1) * e];
            let b = &query[j * e..(j + 1) * e];
            let r2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            self.family.corr(r2.sqrt())
        });
        let mean = (0..q)
            .map(|j| {
                let mut s = 0.0;
                for i in 0..n {
                    s += kstar[(i, j)] * o.alpha[i];
                }
                if self.periods[l].is_some() {
                    s += points[j * m + l];
                }
                s
            })
            .collect();
        let std = with_std.then(|| {
            let mut v = kstar;
            o.chol.solve_lower_triangular_in_place(v.as_mut());
            (0..q)
                .map(|j| {
                    let explained: f64 = (0..n).map(|i| v[(i, j)] * v[(i, j)]).sum();
                    (o.signal_variance * (1.0 - explained)).max(0.0).sqrt()
                })
                .collect()
        });
        (mean, std)
    }

    /// Box `μ ± z σ` with joint pointwise confidence `1 - δ`.
    pub fn confidence_hypercube(&self, x: &[f64], delta: f64) -> Result<StateBox> {
        check_dim(self.dim, x.len())?;
        let z = confidence::z_for(delta, self.dim)?;
        let (mu, sd) = self.predict(x)?;
        Ok(hypercube(&mu, &sd, z))
    }

    /// Text form: header lines, one line per output, then one training row
    /// `x_1 .. x_M t_1 .. t_M` per input, where `t` are the fitted targets.
    pub fn to_text(&self) -> String {
        let m = self.dim;
        let mut s = String::from("# gpmorse-model\n");
        writeln!(s, "family {}", self.family.name()).unwrap();
        writeln!(s, "dim {m}").unwrap();
        s.push_str("periods");
        for p in &self.periods {
            match p {
                Some(p) => write!(s, " {p:.17e}").unwrap(),
                None => s.push_str(" none"),
            }
        }
        s.push('\n');
        writeln!(s, "points {}", self.len()).unwrap();
        for (l, o) in self.outputs.iter().enumerate() {
            write!(
                s,
                "output {l} sigma2 {:.17e} noise_ratio {:.17e} loglik {:.17e} lengthscales",
                o.signal_variance, o.noise_ratio, o.log_likelihood
            )
            .unwrap();
            for v in &o.lengthscales {
                write!(s, " {v:.17e}").unwrap();
            }
            s.push('\n');
        }
        for j in 0..self.len() {
            let row = self.xs[j * m..(j + 1) * m].iter().chain(self.outputs.iter().map(|o| &o.targets[j]));
            let line: Vec<String> = row.map(|v| format!("{v:.17e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Inverse of [`to_text`](Self::to_text). The factorization is recomputed
    /// from the stored hyperparameters, so predictions match the original.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };
        let (ln, head) = next("header")?;
        if head != "# gpmorse-model" {
            return Err(err(ln, "missing '# gpmorse-model' header".into()));
        }
        let num = |ln: usize, t: &str| t.parse::<f64>().map_err(|_| err(ln, format!("bad number '{t}'")));
        let field = |ln: usize, line: &str, key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(err(ln, format!("expected '{key}'")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let (ln, l) = next("family")?;
        let v = field(ln, l, "family")?;
        let family = v
            .first()
            .and_then(|f| KernelFamily::from_name(f))
            .ok_or_else(|| err(ln, "unknown kernel family".into()))?;
        let (ln, l) = next("dim")?;
        let m: usize = field(ln, l, "dim")?
            .first()
            .and_then(|v| v.parse().ok())
            .filter(|&m| m > 0)
            .ok_or_else(|| err(ln, "bad dim".into()))?;
        let (ln, l) = next("periods")?;
        let periods = field(ln, l, "periods")?
            .iter()
            .map(|t| if t == "none" { Ok(None) } else { num(ln, t).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        if periods.len() != m {
            return Err(err(ln, format!("expected {m} periods")));
        }
        let (ln, l) = next("points")?;
        let n: usize = field(ln, l, "points")?
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(ln, "bad point count".into()))?;
        let mut hypers = Vec::new();
        for k in 0..m {
            let (ln, l) = next("output")?;
            let v = field(ln, l, "output")?;
            let ok = v.len() == 8 + m
                && v[0] == k.to_string()
                && v[1] == "sigma2"
                && v[3] == "noise_ratio"
                && v[5] == "loglik"
                && v[7] == "lengthscales";
            if !ok {
                return Err(err(ln, format!("malformed output line for dimension {k}")));
            }
            let ells = v[8..].iter().map(|t| num(ln, t)).collect::<Result<Vec<_>>>()?;
            hypers.push((num(ln, &v[2])?, num(ln, &v[4])?, num(ln, &v[6])?, ells));
        }
        let mut xs = Vec::with_capacity(n * m);
        let mut targets = vec![Vec::with_capacity(n); m];
        for (ln, l) in lines.by_ref() {
            if l.is_empty() {
                continue;
            }
            let row = l.split_whitespace().map(|t| num(ln, t)).collect::<Result<Vec<_>>>()?;
            if row.len() != 2 * m {
                return Err(err(ln, format!("expected {} numbers, found {}", 2 * m, row.len())));
            }
            xs.extend_from_slice(&row[..m]);
            for (k, t) in targets.iter_mut().enumerate() {
                t.push(row[m + k]);
            }
        }
        if targets[0].len() != n {
            return Err(err(0, format!("expected {n} training rows, found {}", targets[0].len())));
        }
        let outputs = targets
            .into_iter()
            .zip(hypers)
            .map(|(t, (s2, g, loglik, ells))| {
                let mut o = rebuild_output(family, &xs, m, &periods, t, &ells, g, s2)?;
                o.log_likelihood = loglik;
                Ok(o)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpSurrogate {
            family,
            dim: m,
            periods,
            xs,
            outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GpSurrogate::from_text(&text, path)
    }
}

/// The box `μ ± z σ`; degenerate where `σ = 0`.
pub fn hypercube(mu: &[f64], sd: &[f64], z: f64) -> StateBox {
    let lo = mu.iter().zip(sd).map(|(m, s)| m - z * s).collect();
    let hi = mu.iter().zip(sd).map(|(m, s)| m + z * s).collect();
    StateBox::new(lo, hi).expect("ordered by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset_1d(f: impl Fn(f64) -> f64, xs: &[f64]) -> TrajectoryDataset {
        let mut d = TrajectoryDataset::new(1, 1.0, "test");
        for &x in xs {
            d.push(vec![x], vec![f(x)]).unwrap();
        }
        d
    }

    fn exact() -> GpSettings {
        GpSettings {
            fixed_noise_ratio: Some(NOISE_FLOOR),
            ..Default::default()
        }
    }

    #[test]
    fn two_points_interpolate() {
        let d = dataset_1d(|x| 2.0 * x - 0.5, &[-1.0, 0.7]);
        let gp = GpSurrogate::fit(&d, &[None], &exact(), 1).unwrap();
        for (x, y) in d.xs().iter().zip(d.ys()) {
            let (mu, sd) = gp.predict(x).unwrap();
            assert!((mu[0] - y[0]).abs() < 1e-6);
            assert!(sd[0] <= 1e-3 * gp.output(0).signal_variance().sqrt());
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let d = dataset_1d(|x| x.sin(), &xs);
        let gp = GpSurrogate::fit(&d, &[None], &GpSettings::default(), 1).unwrap();
        let far = 1.0 + 10.0 * gp.output(0).lengthscales()[0] + 100.0;
        let (mu, sd) = gp.predict(&[far]).unwrap();
        assert!(mu[0].abs() < 1e-6);
        assert!((sd[0] - gp.output(0).signal_variance().sqrt()).abs() < 1e-6);
    }

    #[test]
    fn fit_is_deterministic() {
        let xs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let d = dataset_1d(|x| x.atan(), &xs);
        let a = GpSurrogate::fit(&d, &[None], &GpSettings::default(), 9).unwrap();
        let b = GpSurrogate::fit(&d, &[None], &GpSettings::default(), 9).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn text_round_trip_predicts_identically() {
        let mut d = TrajectoryDataset::new(2, 0.5, "test");
        for i in 0..25 {
            let x = vec![(i as f64 * 0.9).sin() * 3.0, (i as f64 * 0.4).cos()];
            let y = vec![x[0] + 0.1 * x[1], 0.8 * x[1] - 0.2 * x[0].sin()];
            d.push(x, y).unwrap();
        }
        let periods = [Some(2.0 * std::f64::consts::PI), None];
        let gp = GpSurrogate::fit(&d, &periods, &GpSettings::default(), 4).unwrap();
        let back = GpSurrogate::from_text(&gp.to_text(), Path::new("mem")).unwrap();
        let q = [0.3, 0.2, -2.9, 0.9, 3.1, -0.4];
        assert_eq!(gp.predict_batch(&q, true).unwrap(), back.predict_batch(&q, true).unwrap());
        assert_eq!(back.to_text(), gp.to_text());
    }

    #[test]
    fn duplicates() {
        let d = dataset_1d(|x| x, &[0.0, 0.5, 0.5, 1.0]);
        assert_eq!(GpSurrogate::fit(&d, &[None], &exact(), 0).unwrap().len(), 3);
        let mut bad = d.clone();
        bad.push(vec![1.0], vec![7.0]).unwrap();
        assert!(matches!(
            GpSurrogate::fit(&bad, &[None], &exact(), 0),
            Err(Error::DegenerateData(_))
        ));
        assert!(GpSurrogate::fit(&bad, &[None], &GpSettings::default(), 0).is_ok());
    }

    #[test]
    fn periodic_output_is_continuous_across_seam() {
        // rotation by a constant: θ ↦ θ + 0.3 wrapped
        let p = 2.0 * std::f64::consts::PI;
        let xs: Vec<f64> = (0..40).map(|i| -std::f64::consts::PI + p * i as f64 / 40.0).collect();
        let d = dataset_1d(|x| crate::dynamics::systems::wrap_angle(x + 0.3), &xs);
        let gp = GpSurrogate::fit(&d, &[Some(p)], &exact(), 2).unwrap();
        for x in [-3.1, 3.0, 3.1, 0.0] {
            let (mu, _) = gp.predict(&[x]).unwrap();
            assert!((mu[0] - (x + 0.3)).abs() < 1e-4, "{x} {}", mu[0]);
        }
    }

    #[test]
    fn conditioning_keeps_hyperparameters_and_shrinks_variance() {
        let xs: Vec<f64> = (0..15).map(|i| -2.0 + 0.3 * i as f64).collect();
        let d = dataset_1d(|x| x.atan(), &xs);
        let gp = GpSurrogate::fit(&d, &[None], &GpSettings::default(), 3).unwrap();
        let mut more = d.clone();
        for x in [-1.85, 0.15, 1.2] {
            more.push(vec![x], vec![f64::atan(x)]).unwrap();
        }
        let gp2 = gp.condition_on(&more).unwrap();
        assert_eq!(gp2.output(0).lengthscales(), gp.output(0).lengthscales());
        assert_eq!(gp2.output(0).signal_variance(), gp.output(0).signal_variance());
        let q: Vec<f64> = (0..50).map(|i| -2.5 + 0.1 * i as f64).collect();
        let a = gp.predict_batch(&q, true).unwrap().std.unwrap();
        let b = gp2.predict_batch(&q, true).unwrap().std.unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!(b <= &(a + 1e-12));
        }
    }

    #[test]
    fn best_start_dominates_recorded_starts() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 1.7).sin() * 3.0).collect();
        let d = dataset_1d(|x| (1.5 * x).sin(), &xs);
        let gp = GpSurrogate::fit(&d, &[None], &GpSettings::default(), 5).unwrap();
        let o = gp.output(0);
        assert_eq!(o.starts().len(), 8);
        for s in o.starts() {
            assert!(o.log_likelihood() >= s.start_value - 1e-9);
            assert!(s.end_value >= s.start_value);
        }
    }
}
