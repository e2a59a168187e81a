//! Loading measures from sample files, histogram files and synthetic generators.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use projwass::measures::dirichlet_flat;
use projwass::{GroundSpace, ProbVector, SeedStream};

use crate::error::{CliError, CliResult};

/// Tolerance on the total weight of a histogram file.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// Header-free CSV, one observation of `d` reals per row.
    SamplesCsv { path: PathBuf },
    /// `{"points": [[..], ..], "weights": [..]}`
    HistogramJson { path: PathBuf },
    Synthetic(Synthetic),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum SyntheticSpace {
    /// `L x L` grid on the unit square.
    Grid { side: usize },
    /// `{1/M, ..., 1} x {-0.001, 0.001}^2`.
    Slab { levels: usize },
}

impl SyntheticSpace {
    pub fn build(self) -> CliResult<GroundSpace> {
        Ok(match self {
            SyntheticSpace::Grid { side } => GroundSpace::grid(side)?,
            SyntheticSpace::Slab { levels } => GroundSpace::thin_slab(levels)?,
        })
    }
}

/// A `Dir(1)` histogram on a synthetic space, optionally replaced by `samples`
/// i.i.d. observations from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthetic {
    #[serde(flatten)]
    pub space: SyntheticSpace,
    pub dirichlet_seed: u64,
    pub samples: Option<usize>,
}

/// Equidistant lattice with `levels` nodes from `lower` to `upper` along each
/// axis; observations snap to the nearest node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridQuantization {
    pub lower: f64,
    pub upper: f64,
    pub levels: usize,
}

impl FromStr for GridQuantization {
    type Err = CliError;

    /// `LOWER:UPPER:LEVELS`, e.g. `0:1:7`.
    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || CliError::input(format!("quantization '{s}' is not LOWER:UPPER:LEVELS"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lower: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let upper: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let levels: usize = parts[2].trim().parse().map_err(|_| bad())?;
        let q = GridQuantization { lower, upper, levels };
        q.validate()?;
        Ok(q)
    }
}

impl GridQuantization {
    fn validate(&self) -> CliResult<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(CliError::input("quantization needs finite bounds with lower < upper"));
        }
        if self.levels < 2 {
            return Err(CliError::input("quantization needs at least 2 levels"));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.levels - 1) as f64
    }

    /// All lattice nodes in `R^dim`, first coordinate varying slowest.
    pub fn lattice(&self, dim: usize) -> CliResult<GroundSpace> {
        self.validate()?;
        let total = self
            .levels
            .checked_pow(dim as u32)
            .filter(|&t| t <= 1 << 20)
            .ok_or_else(|| CliError::input("quantization lattice too large"))?;
        let step = self.step();
        let points = (0..total)
            .map(|mut idx| {
                let mut x = vec![0.0; dim];
                for c in (0..dim).rev() {
                    x[c] = self.lower + (idx % self.levels) as f64 * step;
                    idx /= self.levels;
                }
                x
            })
            .collect();
        Ok(GroundSpace::new(points)?)
    }

    /// Lattice index of the node nearest to `x`; `None` outside the box.
    pub fn index(&self, x: &[f64]) -> Option<usize> {
        let step = self.step();
        let slack = 1e-9 * (self.upper - self.lower);
        let mut idx = 0usize;
        for &v in x {
            if !(v >= self.lower - slack && v <= self.upper + slack) {
                return None;
            }
            let k = (((v - self.lower) / step).round() as usize).min(self.levels - 1);
            idx = idx * self.levels + k;
        }
        Some(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    None,
    Grid(GridQuantization),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: Source,
    /// Declared support that sample rows must match exactly.
    pub support: Option<Vec<Vec<f64>>>,
    pub binning: Binning,
}

impl DatasetSpec {
    pub fn new(source: Source) -> Self {
        DatasetSpec {
            source,
            support: None,
            binning: Binning::None,
        }
    }

    /// Reads a source token: `grid:L:SEED[:N]`, `slab:M:SEED[:N]`, or a path
    /// ending in `.csv` (samples) or `.json` (histogram).
    pub fn parse_source(token: &str) -> CliResult<Source> {
        let parts: Vec<&str> = token.split(':').collect();
        if matches!(parts[0], "grid" | "slab") {
            let bad = || CliError::input(format!("synthetic source '{token}' is not KIND:SIZE:SEED[:N]"));
            if !(3..=4).contains(&parts.len()) {
                return Err(bad());
            }
            let size: usize = parts[1].parse().map_err(|_| bad())?;
            let seed: u64 = parts[2].parse().map_err(|_| bad())?;
            let samples = match parts.get(3) {
                Some(n) => Some(n.parse().map_err(|_| bad())?),
                None => None,
            };
            let space = if parts[0] == "grid" {
                SyntheticSpace::Grid { side: size }
            } else {
                SyntheticSpace::Slab { levels: size }
            };
            return Ok(Source::Synthetic(Synthetic {
                space,
                dirichlet_seed: seed,
                samples,
            }));
        }
        let path = PathBuf::from(token);
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Source::SamplesCsv { path }),
            Some("json") => Ok(Source::HistogramJson { path }),
            _ => Err(CliError::input(format!("cannot tell the format of '{token}'; use .csv or .json"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    /// Support indices of the observations, in file order.
    Samples(Vec<usize>),
    Histogram(ProbVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: GroundSpace,
    pub observations: Observations,
}

impl Dataset {
    pub fn samples(&self) -> Option<&[usize]> {
        match &self.observations {
            Observations::Samples(s) => Some(s),
            Observations::Histogram(_) => None,
        }
    }

    /// The histogram itself, or the empirical measure of the samples.
    pub fn histogram(&self) -> CliResult<ProbVector> {
        match &self.observations {
            Observations::Histogram(r) => Ok(r.clone()),
            Observations::Samples(s) => Ok(projwass::measures::empirical_distribution(s, &self.space)?),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramFile {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Rows of a header-free numeric CSV, all of the same width.
pub fn read_points_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    read_points(open(path)?, path)
}

fn read_points(reader: impl Read, path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::parse(path, e))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::parse(path, format!("row {}: non-numeric field", line + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::parse(
                    path,
                    format!("row {} has {} columns, expected {}", line + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::parse(path, "no observations"));
    }
    Ok(rows)
}

fn histogram_from_file(file: HistogramFile, path: &Path) -> CliResult<Dataset> {
    if file.points.len() != file.weights.len() {
        return Err(CliError::parse(
            path,
            format!("{} points but {} weights", file.points.len(), file.weights.len()),
        ));
    }
    if file.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(CliError::parse(path, "weights must be finite and nonnegative"));
    }
    let total: f64 = file.weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(CliError::parse(path, format!("weights sum to {total}, not 1")));
    }
    let space = GroundSpace::new(file.points).map_err(|e| CliError::parse(path, e))?;
    // Keep the weights bit-for-bit when they already pass the simplex check.
    let r = match ProbVector::new(file.weights.clone()) {
        Ok(r) => r,
        Err(_) => ProbVector::from_masses(&file.weights)?,
    };
    Ok(Dataset {
        space,
        observations: Observations::Histogram(r),
    })
}

fn samples_to_dataset(rows: Vec<Vec<f64>>, spec: &DatasetSpec, path: &Path) -> CliResult<Dataset> {
    let dim = rows[0].len();
    match (&spec.binning, &spec.support) {
        (Binning::Grid(q), _) => {
            let space = q.lattice(dim)?;
            let idx = rows
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    q.index(x)
                        .ok_or_else(|| CliError::parse(path, format!("row {} lies outside the quantization box", i + 1)))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(Dataset {
                space,
                observations: Observations::Samples(idx),
            })
        }
        (Binning::None, Some(points)) => {
            let space = GroundSpace::new(points.clone())?;
            if space.dim() != dim {
                return Err(CliError::parse(
                    path,
                    format!("observations have {dim} columns but the support lives in R^{}", space.dim()),
                ));
            }
            let idx = rows
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    space
                        .index_of(x)
                        .ok_or_else(|| CliError::parse(path, format!("row {} is not a support point", i + 1)))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(Dataset {
                space,
                observations: Observations::Samples(idx),
            })
        }
        (Binning::None, None) => Err(CliError::input(format!(
            "{}: samples need a declared support or a grid quantization",
            path.display()
        ))),
    }
}

pub fn ingest(spec: &DatasetSpec) -> CliResult<Dataset> {
    match &spec.source {
        Source::SamplesCsv { path } => {
            let rows = read_points_csv(path)?;
            samples_to_dataset(rows, spec, path)
        }
        Source::HistogramJson { path } => {
            let file: HistogramFile = serde_json::from_reader(open(path)?).map_err(|e| CliError::parse(path, e))?;
            let data = histogram_from_file(file, path)?;
            if let Some(points) = &spec.support {
                if data.space.to_points() != *points {
                    return Err(CliError::parse(path, "histogram points differ from the declared support"));
                }
            }
            Ok(data)
        }
        Source::Synthetic(syn) => {
            let space = syn.space.build()?;
            let seed = SeedStream::new(syn.dirichlet_seed);
            let r = dirichlet_flat(space.len(), seed.derive_named("dirichlet"))?;
            let observations = match syn.samples {
                None => Observations::Histogram(r),
                Some(0) => return Err(CliError::input("synthetic sample size must be positive")),
                Some(n) => Observations::Samples(r.sample_indices(n, &mut seed.derive_named("samples").rng())),
            };
            Ok(Dataset { space, observations })
        }
    }
}

/// Serializes a histogram so that [`ingest`] reads back the same measure.
pub fn emit_histogram(space: &GroundSpace, r: &ProbVector, out: impl Write) -> CliResult<()> {
    if r.len() != space.len() {
        return Err(CliError::input("histogram and support sizes differ"));
    }
    let file = HistogramFile {
        points: space.to_points(),
        weights: r.weights().to_vec(),
    };
    serde_json::to_writer_pretty(out, &file).map_err(|e| CliError::input(e.to_string()))
}

pub fn write_histogram(path: &Path, space: &GroundSpace, r: &ProbVector) -> CliResult<()> {
    let f = File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    emit_histogram(space, r, std::io::BufWriter::new(f))
}

/// Loads two datasets and checks that they live on the same support.
pub fn ingest_pair(x: &DatasetSpec, y: &DatasetSpec) -> CliResult<(Dataset, Dataset)> {
    let a = ingest(x)?;
    let b = ingest(y)?;
    if a.space != b.space {
        return Err(CliError::input("the two datasets live on different supports"));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("projwass-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn synthetic_grid_has_four_points() {
        let spec = DatasetSpec::new(DatasetSpec::parse_source("grid:2:5").unwrap());
        let d = ingest(&spec).unwrap();
        assert_eq!(d.space.len(), 4);
        assert_eq!(d.space.to_points(), vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!(d.samples().is_none());
    }

    #[test]
    fn synthetic_slab_shape() {
        let spec = DatasetSpec::new(DatasetSpec::parse_source("slab:10:1:50").unwrap());
        let d = ingest(&spec).unwrap();
        assert_eq!(d.space.len(), 40);
        assert_eq!(d.samples().unwrap().len(), 50);
        for x in d.space.points() {
            assert!((1..=10).any(|a| x[0] == a as f64 / 10.0));
            assert!(x[1].abs() == 0.001 && x[2].abs() == 0.001);
        }
    }

    #[test]
    fn histogram_json_two_points() {
        let path = temp_path("two.json");
        std::fs::write(&path, r#"{"points": [[0.0], [1.0]], "weights": [0.5, 0.5]}"#).unwrap();
        let d = ingest(&DatasetSpec::new(Source::HistogramJson { path })).unwrap();
        assert_eq!(d.histogram().unwrap().weights(), &[0.5, 0.5]);
    }

    #[test]
    fn histogram_weight_sum_is_checked() {
        let path = temp_path("bad.json");
        std::fs::write(&path, r#"{"points": [[0.0], [1.0]], "weights": [0.5, 0.49]}"#).unwrap();
        assert!(ingest(&DatasetSpec::new(Source::HistogramJson { path: path.clone() })).is_err());
        std::fs::write(&path, r#"{"points": [[0.0], [1.0]], "weights": [0.5, 0.5000001]}"#).unwrap();
        let d = ingest(&DatasetSpec::new(Source::HistogramJson { path })).unwrap();
        assert!((d.histogram().unwrap().weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantization_matches_grid_space() {
        let q: GridQuantization = "0:1:7".parse().unwrap();
        assert_eq!(q.lattice(2).unwrap(), GroundSpace::grid(7).unwrap());
        assert_eq!(q.index(&[0.0, 0.0]), Some(0));
        assert_eq!(q.index(&[0.02, 1.0]), Some(6));
        assert_eq!(q.index(&[1.0, 0.0]), Some(42));
        assert_eq!(q.index(&[1.2, 0.0]), None);
        assert!("0:1".parse::<GridQuantization>().is_err());
        assert!("1:0:3".parse::<GridQuantization>().is_err());
    }

    #[test]
    fn samples_need_support_or_binning() {
        let path = temp_path("obs.csv");
        std::fs::write(&path, "0,0\n1,1\n0.5,0.5\n").unwrap();
        let mut spec = DatasetSpec::new(Source::SamplesCsv { path });
        assert_eq!(ingest(&spec).unwrap_err().exit_code(), 2);
        spec.support = Some(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert!(ingest(&spec).is_err());
        spec.support.as_mut().unwrap().push(vec![0.5, 0.5]);
        assert_eq!(ingest(&spec).unwrap().samples().unwrap(), &[0, 1, 2]);
        spec.support = None;
        spec.binning = Binning::Grid("0:1:3".parse().unwrap());
        assert_eq!(ingest(&spec).unwrap().samples().unwrap(), &[0, 8, 4]);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let path = temp_path("ragged.csv");
        std::fs::write(&path, "0,0\n1\n").unwrap();
        let spec = DatasetSpec {
            source: Source::SamplesCsv { path },
            support: None,
            binning: Binning::Grid("0:1:3".parse().unwrap()),
        };
        assert!(ingest(&spec).is_err());
    }

    #[test]
    fn parse_source_tokens() {
        assert!(matches!(DatasetSpec::parse_source("a/b.CSV").unwrap(), Source::SamplesCsv { .. }));
        assert!(matches!(DatasetSpec::parse_source("h.json").unwrap(), Source::HistogramJson { .. }));
        assert!(DatasetSpec::parse_source("h.txt").is_err());
        assert!(DatasetSpec::parse_source("grid:x:1").is_err());
    }
}
