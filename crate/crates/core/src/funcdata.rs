//! Observed functional samples, synthetic generators and dataset I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{FotError, Result};
use crate::operator::OperatorCoeffs;

/// One observed function: strictly increasing design points and their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<u32>,
}

impl FunctionalSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let sample = Self { x, y, channel: None };
        sample.validate()?;
        Ok(sample)
    }

    pub fn with_channel(mut self, channel: u32) -> Self {
        self.channel = Some(channel);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(FotError::Validity(format!(
                "design points ({}) and values ({}) differ in length",
                self.x.len(),
                self.y.len()
            )));
        }
        if self.x.len() < 2 {
            return Err(FotError::Validity(format!(
                "a functional sample needs at least 2 design points, got {}",
                self.x.len()
            )));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(FotError::NonFinite("functional sample contains NaN or infinite values".into()));
        }
        if let Some(i) = self.x.windows(2).position(|w| w[1] <= w[0]) {
            return Err(FotError::Validity(format!(
                "design points not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Piecewise-linear interpolation at `points`, constant beyond the ends.
    pub fn interpolate(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&p| interpolate_at(&self.x, &self.y, p)).collect()
    }
}

fn interpolate_at(x: &[f64], y: &[f64], p: f64) -> f64 {
    let n = x.len();
    if p <= x[0] {
        return y[0];
    }
    if p >= x[n - 1] {
        return y[n - 1];
    }
    let hi = x.partition_point(|&v| v <= p);
    let lo = hi - 1;
    let w = (p - x[lo]) / (x[hi] - x[lo]);
    (1.0 - w) * y[lo] + w * y[hi]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// A nonempty collection of samples from one functional domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub domain: Domain,
    pub samples: Vec<FunctionalSample>,
}

impl FunctionalDataset {
    pub fn new(domain: Domain, samples: Vec<FunctionalSample>) -> Result<Self> {
        let dataset = Self { domain, samples };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(FotError::Validity("dataset has no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.validate().map_err(|e| FotError::Validity(format!("sample {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            domain: self.domain,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Interval covered by every sample: `(max of starts, min of ends)`.
    pub fn overlap(&self) -> (f64, f64) {
        let lo = self.samples.iter().map(|s| s.x[0]).fold(f64::NEG_INFINITY, f64::max);
        let hi = self.samples.iter().map(|s| s.x[s.len() - 1]).fold(f64::INFINITY, f64::min);
        (lo, hi)
    }
}

/// Sampling law for one scalar parameter of a sinusoid component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamDist {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

impl ParamDist {
    fn validate(&self) -> Result<()> {
        match *self {
            ParamDist::Fixed { value } if !value.is_finite() => {
                Err(FotError::Parameter("fixed parameter must be finite".into()))
            }
            ParamDist::Uniform { low, high } if !(low <= high) || !low.is_finite() || !high.is_finite() => {
                Err(FotError::Parameter(format!("uniform bounds [{low}, {high}] are invalid")))
            }
            ParamDist::Normal { mean, std } if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() => {
                Err(FotError::Parameter(format!("normal({mean}, {std}) is invalid")))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamDist::Fixed { value } => value,
            ParamDist::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.random_range(low..high)
                }
            }
            ParamDist::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }
}

/// Priors `P(θ_k)` for `y = A sin(ω x + φ) + m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidComponent {
    pub amplitude: ParamDist,
    pub frequency: ParamDist,
    pub phase: ParamDist,
    pub offset: ParamDist,
}

impl SinusoidComponent {
    pub fn fixed(amplitude: f64, frequency: f64, phase: f64, offset: f64) -> Self {
        Self {
            amplitude: ParamDist::Fixed { value: amplitude },
            frequency: ParamDist::Fixed { value: frequency },
            phase: ParamDist::Fixed { value: phase },
            offset: ParamDist::Fixed { value: offset },
        }
    }
}

/// How design points are chosen for each generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointsRule {
    /// `count` sorted uniform draws on `[0, 1]`.
    Random { count: usize },
    /// Random count in `min..=max`, then sorted uniform draws.
    RandomRange { min: usize, max: usize },
    /// Evenly spaced grid on `[0, 1]`.
    Grid { count: usize },
    Explicit { points: Vec<f64> },
}

impl PointsRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            PointsRule::Random { count } | PointsRule::Grid { count } if *count < 2 => {
                Err(FotError::Parameter("at least 2 design points per sample are required".into()))
            }
            PointsRule::RandomRange { min, max } if *min < 2 || min > max => Err(FotError::Parameter(
                format!("invalid design point range {min}..={max}"),
            )),
            PointsRule::Explicit { points } => {
                if points.len() < 2 || points.windows(2).any(|w| w[1] <= w[0]) {
                    Err(FotError::Parameter("explicit design points must be increasing, length ≥ 2".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PointsRule::Random { count } => sorted_uniform(*count, rng),
            PointsRule::RandomRange { min, max } => {
                let count = rng.random_range(*min..=*max);
                sorted_uniform(count, rng)
            }
            PointsRule::Grid { count } => uniform_grid(0.0, 1.0, *count),
            PointsRule::Explicit { points } => points.clone(),
        }
    }
}

pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (count - 1) as f64;
    (0..count).map(|i| if i + 1 == count { hi } else { lo + i as f64 * h }).collect()
}

fn sorted_uniform<R: Rng>(count: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut xs: Vec<f64> = (0..count).map(|_| rng.random::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).all(|w| w[1] > w[0]) {
            return xs;
        }
    }
}

/// Parameters actually drawn for one generated curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidDraw {
    pub component: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
}

impl SinusoidDraw {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x + self.phase).sin() + self.offset
    }
}

pub fn generate_sinusoid_mixture(
    n_samples: usize,
    components: &[SinusoidComponent],
    points: &PointsRule,
    seed: u64,
    domain: Domain,
) -> Result<FunctionalDataset> {
    generate_sinusoid_mixture_with_draws(n_samples, components, points, seed, domain).map(|(d, _)| d)
}

/// Mixture-of-sinusoids generator that also reports the per-sample draws.
pub fn generate_sinusoid_mixture_with_draws(
    n_samples: usize,
    components: &[SinusoidComponent],
    points: &PointsRule,
    seed: u64,
    domain: Domain,
) -> Result<(FunctionalDataset, Vec<SinusoidDraw>)> {
    if components.is_empty() {
        return Err(FotError::Parameter("sinusoid mixture needs at least one component".into()));
    }
    if n_samples == 0 {
        return Err(FotError::Parameter("n_samples must be at least 1".into()));
    }
    for c in components {
        for p in [c.amplitude, c.frequency, c.phase, c.offset] {
            p.validate()?;
        }
    }
    points.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let component = rng.random_range(0..components.len());
        let c = &components[component];
        let draw = SinusoidDraw {
            component,
            amplitude: c.amplitude.sample(&mut rng),
            frequency: c.frequency.sample(&mut rng),
            phase: c.phase.sample(&mut rng),
            offset: c.offset.sample(&mut rng),
        };
        let x = points.draw(&mut rng);
        let y = x.iter().map(|&t| draw.eval(t)).collect();
        samples.push(FunctionalSample { x, y, channel: None });
        draws.push(draw);
    }
    Ok((FunctionalDataset { domain, samples }, draws))
}

/// Zero-mean Gaussian process samples `Σ_k √λ_k Z_k φ_k(x)` plus a mean curve
/// given by its values on the same basis (`mean_coeffs`, may be empty).
pub fn generate_karhunen_loeve(
    basis: &BasisSet,
    n_samples: usize,
    n_terms: usize,
    mean_coeffs: &[f64],
    points: &PointsRule,
    seed: u64,
    domain: Domain,
) -> Result<FunctionalDataset> {
    if n_samples == 0 {
        return Err(FotError::Parameter("n_samples must be at least 1".into()));
    }
    if n_terms == 0 || n_terms > basis.count() || mean_coeffs.len() > basis.count() {
        return Err(FotError::Dimension(format!(
            "requested {n_terms} terms from a basis of size {}",
            basis.count()
        )));
    }
    points.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let width = n_terms.max(mean_coeffs.len());
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z: Vec<f64> = (0..n_terms).map(|_| normal.sample(&mut rng)).collect();
        let x = points.draw(&mut rng);
        let phi = basis.evaluate(&x, width)?;
        let y = (0..x.len())
            .map(|i| {
                let random: f64 = (0..n_terms).map(|k| basis.eigenvalues()[k].sqrt() * z[k] * phi[(i, k)]).sum();
                let mean: f64 = mean_coeffs.iter().enumerate().map(|(k, &m)| m * phi[(i, k)]).sum();
                random + mean
            })
            .collect();
        samples.push(FunctionalSample { x, y, channel: None });
    }
    FunctionalDataset::new(domain, samples)
}

/// Push every source sample through a ground-truth operator, evaluating each
/// image at freshly drawn design points.
pub fn pushforward_dataset_by_groundtruth(
    dataset: &FunctionalDataset,
    op: &OperatorCoeffs,
    target_points: &PointsRule,
    seed: u64,
) -> Result<FunctionalDataset> {
    target_points.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let x = target_points.draw(&mut rng);
        samples.push(op.pushforward(s, &x)?);
    }
    FunctionalDataset::new(Domain::Target, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(DataFormat::Csv),
            Some("json") => Ok(DataFormat::Json),
            _ => Err(FotError::Config(format!(
                "cannot infer dataset format from {}",
                path.display()
            ))),
        }
    }
}

/// Canonical JSON layout; `domain` defaults to source when absent.
#[derive(Deserialize)]
struct DatasetJson {
    #[serde(default = "default_domain")]
    domain: Domain,
    samples: Vec<FunctionalSample>,
}

fn default_domain() -> Domain {
    Domain::Source
}

pub fn save_dataset(dataset: &FunctionalDataset, path: &Path, format: DataFormat) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    match format {
        DataFormat::Json => {
            serde_json::to_writer(&mut writer, dataset)?;
            writer.write_all(b"\n")?;
        }
        DataFormat::Csv => write_csv(dataset, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

fn write_csv<W: Write>(dataset: &FunctionalDataset, writer: W) -> Result<()> {
    let with_channel = dataset.samples.iter().any(|s| s.channel.is_some());
    let mut csv = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| FotError::Io(std::io::Error::other(e));
    if with_channel {
        csv.write_record(["sample_id", "x", "y", "channel"]).map_err(io)?;
    } else {
        csv.write_record(["sample_id", "x", "y"]).map_err(io)?;
    }
    for (id, s) in dataset.samples.iter().enumerate() {
        for (x, y) in s.x.iter().zip(&s.y) {
            let mut row = vec![id.to_string(), x.to_string(), y.to_string()];
            if with_channel {
                row.push(s.channel.map(|c| c.to_string()).unwrap_or_default());
            }
            csv.write_record(&row).map_err(io)?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path, format: DataFormat, default_domain: Domain) -> Result<FunctionalDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        DataFormat::Json => {
            let raw: DatasetJson = serde_json::from_reader(reader)?;
            let dataset = FunctionalDataset { domain: raw.domain, samples: raw.samples };
            dataset.validate()?;
            Ok(dataset)
        }
        DataFormat::Csv => read_csv(reader, default_domain),
    }
}

fn read_csv<R: std::io::Read>(reader: R, domain: Domain) -> Result<FunctionalDataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| FotError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[0] != "sample_id" || names[1] != "x" || names[2] != "y" {
        return Err(FotError::Parse { line: 1, message: "expected header sample_id,x,y[,channel]".into() });
    }
    let columns = names.len();

    // (sample_id, first line, sample)
    let mut samples: Vec<(String, usize, FunctionalSample)> = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| FotError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != columns {
            return Err(FotError::Parse {
                line,
                message: format!("expected {columns} fields, found {}", record.len()),
            });
        }
        let parse = |idx: usize, what: &str| -> Result<f64> {
            let v: f64 = record[idx]
                .parse()
                .map_err(|_| FotError::Parse { line, message: format!("invalid {what} value '{}'", &record[idx]) })?;
            if !v.is_finite() {
                return Err(FotError::Parse { line, message: format!("non-finite {what} value") });
            }
            Ok(v)
        };
        let id = record[0].to_string();
        let x = parse(1, "x")?;
        let y = parse(2, "y")?;
        let channel = if columns > 3 && !record[3].is_empty() {
            Some(record[3].parse::<u32>().map_err(|_| FotError::Parse {
                line,
                message: format!("invalid channel '{}'", &record[3]),
            })?)
        } else {
            None
        };
        match samples.last_mut() {
            Some((last_id, _, s)) if *last_id == id => {
                if x <= *s.x.last().expect("nonempty") {
                    return Err(FotError::Parse {
                        line,
                        message: format!("design points of sample {id} are not strictly increasing"),
                    });
                }
                s.x.push(x);
                s.y.push(y);
            }
            _ => {
                if samples.iter().any(|(other, _, _)| *other == id) {
                    return Err(FotError::Parse { line, message: format!("rows of sample {id} are not contiguous") });
                }
                samples.push((id, line, FunctionalSample { x: vec![x], y: vec![y], channel }));
            }
        }
    }
    for (id, line, s) in &samples {
        if s.len() < 2 {
            return Err(FotError::Parse {
                line: *line,
                message: format!("sample {id} has fewer than 2 design points"),
            });
        }
    }
    FunctionalDataset::new(domain, samples.into_iter().map(|(_, _, s)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn degenerate_sinusoid_values() {
        let c = SinusoidComponent::fixed(1.0, 2.0 * PI, 0.0, 0.0);
        let rule = PointsRule::Explicit { points: vec![0.0, 0.25, 0.5] };
        let d = generate_sinusoid_mixture(1, &[c], &rule, 1, Domain::Source).unwrap();
        let y = &d.samples[0].y;
        assert!(y[0].abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-15);
        assert!(y[2].abs() < 1e-15);
    }

    #[test]
    fn zero_amplitude_gives_constant_curves() {
        let c = SinusoidComponent {
            amplitude: ParamDist::Fixed { value: 0.0 },
            frequency: ParamDist::Uniform { low: 1.0, high: 5.0 },
            phase: ParamDist::Uniform { low: 0.0, high: 1.0 },
            offset: ParamDist::Fixed { value: 0.7 },
        };
        let d = generate_sinusoid_mixture(5, &[c], &PointsRule::Random { count: 10 }, 3, Domain::Source).unwrap();
        assert!(d.samples.iter().all(|s| s.y.iter().all(|&v| v == 0.7)));
    }

    #[test]
    fn generator_is_deterministic() {
        let c = SinusoidComponent {
            amplitude: ParamDist::Normal { mean: 1.0, std: 0.2 },
            frequency: ParamDist::Uniform { low: 2.0, high: 6.0 },
            phase: ParamDist::Uniform { low: 0.0, high: PI },
            offset: ParamDist::Fixed { value: 0.0 },
        };
        let rule = PointsRule::RandomRange { min: 5, max: 20 };
        let a = generate_sinusoid_mixture(8, &[c, c], &rule, 11, Domain::Source).unwrap();
        let b = generate_sinusoid_mixture(8, &[c, c], &rule, 11, Domain::Source).unwrap();
        assert_eq!(a, b);
        let lengths: Vec<usize> = a.samples.iter().map(|s| s.len()).collect();
        assert!(lengths.iter().all(|&l| (5..=20).contains(&l)));
        assert!(a.samples.iter().all(|s| s.x.windows(2).all(|w| w[1] > w[0])));
    }

    #[test]
    fn generator_rejects_bad_parameters() {
        assert!(generate_sinusoid_mixture(3, &[], &PointsRule::Grid { count: 4 }, 0, Domain::Source).is_err());
        let c = SinusoidComponent::fixed(1.0, 1.0, 0.0, 0.0);
        assert!(generate_sinusoid_mixture(0, &[c], &PointsRule::Grid { count: 4 }, 0, Domain::Source).is_err());
        assert!(generate_sinusoid_mixture(2, &[c], &PointsRule::Grid { count: 1 }, 0, Domain::Source).is_err());
    }

    #[test]
    fn sample_invariants() {
        assert!(FunctionalSample::new(vec![0.0], vec![1.0]).is_err());
        assert!(FunctionalSample::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(FunctionalSample::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(FunctionalSample::new(vec![0.0, 1.0], vec![f64::NAN, 2.0]).is_err());
        let s = FunctionalSample::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(s.interpolate(&[-1.0, 0.5, 2.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_rejects_single_point_and_bad_rows() {
        let one = "sample_id,x,y\n0,0.1,1.0\n0,0.2,2.0\n1,0.3,1.0\n";
        match read_csv(one.as_bytes(), Domain::Source) {
            Err(FotError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let missing = "sample_id,x,y\n0,0.1,1.0\n0,0.2\n";
        match read_csv(missing.as_bytes(), Domain::Source) {
            Err(FotError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let decreasing = "sample_id,x,y\n0,0.3,1.0\n0,0.2,2.0\n";
        assert!(matches!(read_csv(decreasing.as_bytes(), Domain::Source), Err(FotError::Parse { line: 3, .. })));
        let nan = "sample_id,x,y\n0,0.1,NaN\n0,0.2,2.0\n";
        assert!(matches!(read_csv(nan.as_bytes(), Domain::Source), Err(FotError::Parse { line: 2, .. })));
    }

    #[test]
    fn json_rejects_mismatched_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"domain":"target","samples":[{"x":[0.0,0.5],"y":[1.0]}]}"#).unwrap();
        let err = load_dataset(&path, DataFormat::Json, Domain::Source).unwrap_err();
        assert!(err.to_string().contains("sample 0"));
    }

    #[test]
    fn channels_survive_csv() {
        let s0 = FunctionalSample::new(vec![0.0, 0.5], vec![1.0, 2.0]).unwrap().with_channel(0);
        let s1 = FunctionalSample::new(vec![0.0, 0.5], vec![3.0, 4.0]).unwrap().with_channel(1);
        let d = FunctionalDataset::new(Domain::Source, vec![s0, s1]).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Domain::Source).unwrap();
        assert_eq!(back, d);
    }
}
