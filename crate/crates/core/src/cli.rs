//! Command-line front end.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::analysis::{self, check_global_collapse, SpectralAnalysis, Verdict};
use crate::error::{Error, Result};
use crate::features::{
    covariance_descriptors, descriptor_from_row, descriptors_to_csv, feature_vector_field,
    CovarianceFeature, TextureParams,
};
use crate::graph::{
    build_gaussian, build_local_uniform, build_nonlocal, GridGeometry, NonlocalParams, WeightGraph,
};
use crate::io::{self, CsvTable, Image};
use crate::labeling::{
    build_distance_matrix, init_assignment, iterate, iterate_log_domain_eps0, FeatureImage,
    IterationConfig, LogRecursion, PriorSet, StoppingRule, Variant,
};
use crate::metric::{MetricSpace, Point, RotationPoint, SpdPoint, SymmetryGroup};
use crate::simplex::{check_epsilon, project_kl_sorted, DEFAULT_EPSILON};

/// Exit status for malformed input files.
pub const EXIT_PARSE: i32 = 2;
/// Exit status when a symmetric weight matrix is required but not given.
pub const EXIT_NOT_SYMMETRIC: i32 = 3;
/// Exit status for `ε ≥ 1/K`.
pub const EXIT_EPSILON: i32 = 4;

/// How pixel and prior features are read and compared.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    /// Plain vectors; the dimension comes from the data.
    Euclidean,
    /// SPD matrices given by their upper triangle.
    Spd(usize),
    /// Quaternions `w x y z` modulo a symmetry group (builtin name or file).
    Rotation(String),
    /// Quaternions plus a phase column, one group per phase.
    Multiphase { groups: Vec<String>, tau: f64 },
    /// Region covariance descriptors (5 means + 15 covariance entries).
    Texture,
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown metric `{s}`"));
        let mut parts = s.splitn(2, ':');
        let head = parts.next().unwrap_or("");
        let rest = parts.next();
        match (head, rest) {
            ("euclidean", None) => Ok(MetricSpec::Euclidean),
            ("texture", None) => Ok(MetricSpec::Texture),
            ("spd", Some(r)) => Ok(MetricSpec::Spd(r.parse().map_err(|_| bad())?)),
            ("rotation", Some(g)) if !g.is_empty() => Ok(MetricSpec::Rotation(g.to_string())),
            ("multiphase", Some(r)) => {
                let (groups, tau) = r.rsplit_once(':').ok_or_else(bad)?;
                Ok(MetricSpec::Multiphase {
                    groups: groups.split(',').map(str::to_string).collect(),
                    tau: tau.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Euclidean => write!(f, "euclidean"),
            MetricSpec::Texture => write!(f, "texture"),
            MetricSpec::Spd(r) => write!(f, "spd:{r}"),
            MetricSpec::Rotation(g) => write!(f, "rotation:{g}"),
            MetricSpec::Multiphase { groups, tau } => {
                write!(f, "multiphase:{}:{tau:?}", groups.join(","))
            }
        }
    }
}

fn load_group(name: &str) -> Result<SymmetryGroup> {
    match SymmetryGroup::builtin(name) {
        Some(g) => Ok(g),
        None => SymmetryGroup::load(Path::new(name)),
    }
}

impl MetricSpec {
    /// Metric space for points with `dim` vector columns.
    pub fn space(&self, dim: usize) -> Result<MetricSpace> {
        Ok(match self {
            MetricSpec::Euclidean => MetricSpace::Euclidean(dim),
            MetricSpec::Spd(r) => MetricSpace::Spd(*r),
            MetricSpec::Rotation(g) => MetricSpace::RotationQuotient(load_group(g)?),
            MetricSpec::Multiphase { groups, tau } => MetricSpace::MultiphaseRotation {
                groups: groups.iter().map(|g| load_group(g)).collect::<Result<_>>()?,
                tau_phase: *tau,
            },
            MetricSpec::Texture => CovarianceFeature::space(),
        })
    }

    /// Point from one CSV row.
    pub fn point(&self, row: &[f64]) -> Result<Point> {
        let want = |n: usize| -> Result<()> {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            Ok(())
        };
        match self {
            MetricSpec::Euclidean => Ok(Point::Vector(row.to_vec())),
            MetricSpec::Spd(r) => {
                want(r * (r + 1) / 2)?;
                Ok(Point::Spd(SpdPoint::from_upper(*r, row)?))
            }
            MetricSpec::Rotation(_) => {
                want(4)?;
                Ok(Point::Rotation(RotationPoint::normalized(
                    [row[0], row[1], row[2], row[3]],
                    0,
                )?))
            }
            MetricSpec::Multiphase { .. } => {
                want(5)?;
                if row[4] < 0.0 || row[4].fract() != 0.0 {
                    return Err(Error::Domain(format!("phase must be a nonnegative integer, got {}", row[4])));
                }
                Ok(Point::Rotation(RotationPoint::normalized(
                    [row[0], row[1], row[2], row[3]],
                    row[4] as usize,
                )?))
            }
            MetricSpec::Texture => Ok(descriptor_from_row(row)?.to_point()),
        }
    }
}

/// Weight graph recipe.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Identity,
    Uniform(usize),
    Gaussian { size: usize, sigma: f64 },
    /// Nonlocal patch weights with the given number of neighbors.
    Nonlocal(usize),
    /// Graph file in the `n rows` / `i j w` text format.
    File(PathBuf),
}

impl FromStr for WeightSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown weights `{s}`"));
        if s == "identity" {
            return Ok(WeightSpec::Identity);
        }
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        match head {
            "uniform" => Ok(WeightSpec::Uniform(rest.parse().map_err(|_| bad())?)),
            "gaussian" => {
                let (size, sigma) = rest.split_once(':').ok_or_else(bad)?;
                Ok(WeightSpec::Gaussian {
                    size: size.parse().map_err(|_| bad())?,
                    sigma: sigma.parse().map_err(|_| bad())?,
                })
            }
            "nonlocal" => Ok(WeightSpec::Nonlocal(rest.parse().map_err(|_| bad())?)),
            "file" if !rest.is_empty() => Ok(WeightSpec::File(PathBuf::from(rest))),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::Identity => write!(f, "identity"),
            WeightSpec::Uniform(s) => write!(f, "uniform:{s}"),
            WeightSpec::Gaussian { size, sigma } => write!(f, "gaussian:{size}:{sigma:?}"),
            WeightSpec::Nonlocal(k) => write!(f, "nonlocal:{k}"),
            WeightSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl WeightSpec {
    pub fn build(&self, geom: GridGeometry, image: Option<(&FeatureImage, &MetricSpace)>) -> Result<WeightGraph> {
        let g = match self {
            WeightSpec::Identity => WeightGraph::identity(geom.len()),
            WeightSpec::Uniform(s) => build_local_uniform(geom, *s)?,
            WeightSpec::Gaussian { size, sigma } => build_gaussian(geom, *size, *sigma)?,
            WeightSpec::Nonlocal(k) => {
                let (img, space) = image.ok_or_else(|| {
                    Error::InvalidParameter("nonlocal weights need pixel features".into())
                })?;
                let params = match space {
                    MetricSpace::Euclidean(_) => NonlocalParams::color(*k),
                    _ => NonlocalParams {
                        neighbors: *k,
                        ..NonlocalParams::tensor()
                    },
                };
                build_nonlocal(img, space, &params)?
            }
            WeightSpec::File(p) => WeightGraph::load(p)?,
        };
        if g.len() != geom.len() {
            return Err(Error::DimensionMismatch {
                expected: geom.len(),
                found: g.len(),
            });
        }
        Ok(g)
    }
}

/// Fully resolved settings of one run. Its text form is `key = value` lines
/// and parses back to an equal value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub metric: MetricSpec,
    pub alpha: WeightSpec,
    pub rho: WeightSpec,
    pub epsilon: f64,
    pub entropy_threshold: f64,
    pub max_iterations: usize,
    pub variant: Variant,
    pub input: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub size: Option<(usize, usize)>,
    pub mask: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub dump_assignment: Option<PathBuf>,
    pub seed: u64,
    pub symmetrize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metric: MetricSpec::Euclidean,
            alpha: WeightSpec::Identity,
            rho: WeightSpec::Uniform(3),
            epsilon: DEFAULT_EPSILON,
            entropy_threshold: StoppingRule::default().entropy_threshold,
            max_iterations: StoppingRule::default().max_iterations,
            variant: Variant::Standard,
            input: None,
            priors: None,
            init: None,
            size: None,
            mask: None,
            output: None,
            dump_assignment: None,
            seed: 0,
            symmetrize: false,
        }
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let size = self.size.map(|(h, w)| format!("{h}x{w}")).unwrap_or_default();
        [
            format!("metric = {}", self.metric),
            format!("alpha = {}", self.alpha),
            format!("rho = {}", self.rho),
            format!("epsilon = {:?}", self.epsilon),
            format!("entropy_threshold = {:?}", self.entropy_threshold),
            format!("max_iterations = {}", self.max_iterations),
            format!("variant = {}", self.variant),
            format!("input = {}", opt_path(&self.input)),
            format!("priors = {}", opt_path(&self.priors)),
            format!("init = {}", opt_path(&self.init)),
            format!("size = {size}"),
            format!("mask = {}", opt_path(&self.mask)),
            format!("output = {}", opt_path(&self.output)),
            format!("dump_assignment = {}", opt_path(&self.dump_assignment)),
            format!("seed = {}", self.seed),
            format!("symmetrize = {}", self.symmetrize),
        ]
        .join("\n")
            + "\n"
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, "expected `key = value`"))?;
            let value = value.trim();
            let at = |e: Error| Error::parse(lineno, e.to_string());
            let num_err = |what: &str| Error::parse(lineno, format!("invalid {what} `{value}`"));
            let path = || (!value.is_empty()).then(|| PathBuf::from(value));
            match key.trim() {
                "metric" => c.metric = value.parse().map_err(at)?,
                "alpha" => c.alpha = value.parse().map_err(at)?,
                "rho" => c.rho = value.parse().map_err(at)?,
                "epsilon" => c.epsilon = value.parse().map_err(|_| num_err("epsilon"))?,
                "entropy_threshold" => {
                    c.entropy_threshold = value.parse().map_err(|_| num_err("threshold"))?
                }
                "max_iterations" => {
                    c.max_iterations = value.parse().map_err(|_| num_err("iteration count"))?
                }
                "variant" => c.variant = value.parse().map_err(at)?,
                "input" => c.input = path(),
                "priors" => c.priors = path(),
                "init" => c.init = path(),
                "size" => {
                    c.size = if value.is_empty() {
                        None
                    } else {
                        Some(parse_size(value).map_err(|m| Error::parse(lineno, m))?)
                    }
                }
                "mask" => c.mask = path(),
                "output" => c.output = path(),
                "dump_assignment" => c.dump_assignment = path(),
                "seed" => c.seed = value.parse().map_err(|_| num_err("seed"))?,
                "symmetrize" => c.symmetrize = value.parse().map_err(|_| num_err("flag"))?,
                other => return Err(Error::parse(lineno, format!("unknown key `{other}`"))),
            }
        }
        Ok(c)
    }

    pub fn stopping_rule(&self) -> StoppingRule {
        StoppingRule {
            entropy_threshold: self.entropy_threshold,
            max_iterations: self.max_iterations,
        }
    }
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| format!("size must look like HxW, got `{s}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

#[derive(Debug, Parser)]
#[command(name = "mflabel", version, about = "Supervised labeling by multiplicative filtering")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label an image or feature file.
    Label(LabelArgs),
    /// Predict the ε = 0 limit from the spectrum of the weights.
    Analyze(AnalyzeArgs),
    /// KL-project a positive vector onto the ε-simplex.
    Project(ProjectArgs),
    /// Compute region covariance descriptors of a grayscale image.
    Features(FeaturesArgs),
    /// Reproduce the ten-pixel worked example.
    Example26(Example26Args),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Pixel features: PGM/PPM image or CSV (one row per pixel, NaN = missing).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prior features, CSV with one row per label.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Initial assignment matrix CSV; replaces --input/--priors/--alpha.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Grid size HxW for CSV inputs (default 1xN).
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    /// euclidean | spd:R | rotation:GROUP | multiphase:G1,G2:TAU | texture
    #[arg(long, default_value = "euclidean")]
    pub metric: MetricSpec,
    /// Initialization weights: identity | uniform:S | gaussian:S:SIGMA | nonlocal:K | file:PATH
    #[arg(long, default_value = "identity")]
    pub alpha: WeightSpec,
    /// Filtering weights, same syntax as --alpha.
    #[arg(long, default_value = "uniform:3")]
    pub rho: WeightSpec,
    /// Observed-pixel mask (PGM or CSV, nonzero = observed).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Replace nonsymmetric filtering weights by (P + Pᵀ)/2, renormalized.
    #[arg(long)]
    pub symmetrize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Read every setting from a config file instead of the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub entropy_threshold: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value = "standard")]
    pub variant: Variant,
    /// Label map path (PGM); a `.palette` and a `.report` file go next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the final assignment matrix as CSV.
    #[arg(long)]
    pub dump_assignment: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// standard or apss.
    #[arg(long, default_value = "standard")]
    pub variant: Variant,
    /// Per-pixel CSV verdicts.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Log-domain iterations for the agreement check (0 skips it).
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Vector components (separate arguments or one quoted string).
    #[arg(required = true)]
    pub values: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = TextureParams::default().presmooth_sigma)]
    pub sigma: f64,
    #[arg(long, default_value_t = TextureParams::default().cov_window)]
    pub window: usize,
    /// Descriptor CSV (stdout if absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Example26Args {
    #[arg(long, default_value_t = 1e-3)]
    pub entropy_threshold: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    pub max_iters: usize,
}

/// A failed command: exit status and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } => EXIT_PARSE,
        Error::NotSymmetric { .. } => EXIT_NOT_SYMMETRIC,
        Error::Pixel { source, .. } => code_of(source),
        _ => 1,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_of(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = std::result::Result<i32, Failure>;

fn epsilon_guard(k: usize, epsilon: f64) -> std::result::Result<(), Failure> {
    check_epsilon(k, epsilon).map_err(|e| Failure {
        code: EXIT_EPSILON,
        message: e.to_string(),
    })
}

/// Runs a parsed command line, writing results to `out`. Returns the exit
/// status on success paths (nonzero only when a reproduction check fails).
pub fn run(cli: Cli, out: &mut dyn Write) -> CmdResult {
    match cli.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Failure {
                    code: 1,
                    message: e.to_string(),
                })?;
            // The pool's workers may run the command; buffer its output here.
            let mut buf: Vec<u8> = Vec::new();
            let result = pool.install(|| dispatch(cli.command, &mut buf));
            out.write_all(&buf)?;
            result
        }
        None => dispatch(cli.command, out),
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Label(a) => {
            let config = match &a.config {
                Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?)?,
                None => label_config(&a),
            };
            cmd_label(&config, out)
        }
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Project(a) => cmd_project(&a, out),
        Command::Features(a) => cmd_features(&a, out),
        Command::Example26(a) => cmd_example26(&a, out),
    }
}

fn label_config(a: &LabelArgs) -> RunConfig {
    let i = &a.inputs;
    RunConfig {
        metric: i.metric.clone(),
        alpha: i.alpha.clone(),
        rho: i.rho.clone(),
        epsilon: a.epsilon,
        entropy_threshold: a.entropy_threshold,
        max_iterations: a.max_iters,
        variant: a.variant,
        input: i.input.clone(),
        priors: i.priors.clone(),
        init: i.init.clone(),
        size: i.size,
        mask: i.mask.clone(),
        output: a.output.clone(),
        dump_assignment: a.dump_assignment.clone(),
        seed: i.seed,
        symmetrize: i.symmetrize,
    }
}

/// Everything the iteration needs, resolved from files.
pub struct Problem {
    pub geom: GridGeometry,
    pub a: Array2<f64>,
    pub rho: WeightGraph,
    /// Display colors of the labels, when the priors have them.
    pub colors: Vec<Vec<f64>>,
    /// Asymmetry removed by `--symmetrize`, if it was applied.
    pub symmetrized: Option<f64>,
}

fn grid_for(size: Option<(usize, usize)>, n: usize) -> Result<GridGeometry> {
    let geom = match size {
        Some((h, w)) => GridGeometry::new(h, w)?,
        None => GridGeometry::new(1, n)?,
    };
    if geom.len() != n {
        return Err(Error::DimensionMismatch {
            expected: geom.len(),
            found: n,
        });
    }
    Ok(geom)
}

fn is_netpbm(path: &Path) -> Result<bool> {
    let mut head = [0u8; 2];
    let mut f = std::fs::File::open(path)?;
    let got = std::io::Read::read(&mut f, &mut head)?;
    Ok(got == 2 && head[0] == b'P' && matches!(head[1], b'2' | b'3' | b'5' | b'6'))
}

fn read_points(table: &CsvTable, metric: &MetricSpec) -> Result<(Vec<Point>, Vec<bool>)> {
    let valid = table.valid_mask();
    let width = table.columns();
    let points = table
        .rows
        .iter()
        .zip(&valid)
        .enumerate()
        .map(|(i, (row, ok))| {
            if *ok {
                metric.point(row).map_err(|e| e.at_pixel(i))
            } else {
                // Placeholder; missing pixels never enter a distance.
                Ok(Point::Vector(vec![0.0; width]))
            }
        })
        .collect::<Result<_>>()?;
    Ok((points, valid))
}

pub fn load_problem(c: &RunConfig) -> Result<Problem> {
    let (geom, a, image, colors) = if let Some(init) = &c.init {
        let table = io::read_csv(init)?;
        let n = table.rows.len();
        let k = table.columns();
        let mut a = Array2::zeros((n, k));
        for (i, row) in table.rows.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Domain("initial assignment must be positive".into()).at_pixel(i));
            }
            for (kk, v) in row.iter().enumerate() {
                a[[i, kk]] = v / total;
            }
        }
        (grid_for(c.size, n)?, a, None, Vec::new())
    } else {
        let input = c
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("need --input and --priors, or --init".into()))?;
        let priors_path = c
            .priors
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("need --priors with --input".into()))?;
        let (geom, features, mut valid) = if is_netpbm(input)? {
            let img = io::read_netpbm(input)?;
            let geom = img.geom();
            let features: Vec<Point> = if c.metric == MetricSpec::Texture {
                let params = TextureParams::default();
                let field = feature_vector_field(&img.to_gray(), &params)?;
                covariance_descriptors(geom, &field, &params)?
                    .iter()
                    .map(CovarianceFeature::to_point)
                    .collect()
            } else {
                img.channels().into_iter().map(Point::Vector).collect()
            };
            (geom, features, vec![true; geom.len()])
        } else {
            let table = io::read_csv(input)?;
            let (points, valid) = read_points(&table, &c.metric)?;
            (grid_for(c.size, points.len())?, points, valid)
        };
        if let Some(m) = &c.mask {
            let mask = io::read_mask(m, geom.len())?;
            valid.iter_mut().zip(mask).for_each(|(v, m)| *v &= m);
        }
        let prior_table = io::read_csv(priors_path)?;
        if prior_table.valid_mask().iter().any(|v| !v) {
            return Err(Error::Domain("priors must not contain missing values".into()));
        }
        let dim = prior_table.columns();
        let space = c.metric.space(dim)?;
        let priors = PriorSet::new(
            prior_table
                .rows
                .iter()
                .map(|r| c.metric.point(r))
                .collect::<Result<_>>()?,
            &space,
        )?;
        let colors = if c.metric == MetricSpec::Euclidean && (dim == 1 || dim == 3) {
            prior_table.rows.clone()
        } else {
            Vec::new()
        };
        let image = FeatureImage::new(geom, features, Some(valid))?;
        let alpha = c.alpha.build(geom, Some((&image, &space)))?;
        let d = build_distance_matrix(&image, &priors, &space)?;
        let a = init_assignment(&d, &alpha)?;
        (geom, a, Some((image, space)), colors)
    };
    let mut rho = c
        .rho
        .build(geom, image.as_ref().map(|(i, s)| (i, s)))?;
    let mut symmetrized = None;
    if c.symmetrize && !rho.is_symmetric() {
        let (g, residual) = rho.symmetrized()?;
        log::info!("symmetrized filtering weights, residual asymmetry {residual:e}");
        symmetrized = Some(rho.max_asymmetry());
        rho = g;
    }
    Ok(Problem {
        geom,
        a,
        rho,
        colors,
        symmetrized,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn label_lines(geom: GridGeometry, labels: &[usize]) -> String {
    labels
        .chunks(geom.width)
        .map(|r| r.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn cmd_label(c: &RunConfig, out: &mut dyn Write) -> CmdResult {
    let started = Instant::now();
    let problem = load_problem(c)?;
    let k = problem.a.ncols();
    epsilon_guard(k, c.epsilon)?;
    if !problem.rho.is_symmetric() {
        log::warn!(
            "filtering weights are not symmetric (max asymmetry {:e})",
            problem.rho.max_asymmetry()
        );
    }
    let config = IterationConfig {
        epsilon: c.epsilon,
        stop: c.stopping_rule(),
        variant: c.variant,
    };
    let state = iterate(&problem.a, &problem.rho, &config)?;
    let labels = state.labels();
    let elapsed = started.elapsed();

    let mut report = String::new();
    report.push_str("# configuration\n");
    report.push_str(&c.to_text());
    report.push_str("# result\n");
    report.push_str(&format!("pixels = {}\nlabels = {k}\n", problem.geom.len()));
    report.push_str(&format!("iterations = {}\n", state.iterations));
    report.push_str(&format!("converged = {}\n", state.converged));
    report.push_str(&format!("final_entropy = {:e}\n", state.final_entropy()));
    if let Some(asym) = problem.symmetrized {
        report.push_str(&format!("symmetrized_asymmetry = {asym:e}\n"));
    }
    report.push_str(&format!("wall_time_s = {:.6}\n", elapsed.as_secs_f64()));

    writeln!(out, "{}", label_lines(problem.geom, &labels))?;
    write!(out, "{report}")?;

    if let Some(path) = &c.output {
        std::fs::write(path, io::labels_to_pgm(problem.geom, &labels, k))?;
        let colors = if problem.colors.len() == k {
            problem.colors.clone()
        } else {
            (0..k).map(|l| vec![(l + 1) as f64 / k as f64]).collect()
        };
        std::fs::write(with_suffix(path, ".palette"), io::palette_text(&colors))?;
        std::fs::write(with_suffix(path, ".report"), &report)?;
    }
    if let Some(path) = &c.dump_assignment {
        let header: Vec<String> = (1..=k).map(|l| format!("w{l}")).collect();
        std::fs::write(path, io::matrix_to_csv(&state.w, Some(&header)))?;
    }
    Ok(0)
}

pub fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> CmdResult {
    let config = RunConfig {
        variant: a.variant,
        ..label_config(&LabelArgs {
            inputs: InputArgs {
                input: a.inputs.input.clone(),
                priors: a.inputs.priors.clone(),
                init: a.inputs.init.clone(),
                size: a.inputs.size,
                metric: a.inputs.metric.clone(),
                alpha: a.inputs.alpha.clone(),
                rho: a.inputs.rho.clone(),
                mask: a.inputs.mask.clone(),
                symmetrize: a.inputs.symmetrize,
                seed: a.inputs.seed,
            },
            config: None,
            epsilon: 0.0,
            entropy_threshold: 1e-3,
            max_iters: a.iterations,
            variant: a.variant,
            output: a.output.clone(),
            dump_assignment: None,
        })
    };
    let problem = load_problem(&config)?;
    problem.rho.require_symmetric()?;
    let (analysis, recursion) = match a.variant {
        Variant::Standard => (SpectralAnalysis::new(&problem.a, &problem.rho)?, LogRecursion::Standard),
        Variant::Apss => (SpectralAnalysis::new_apss(&problem.a, &problem.rho)?, LogRecursion::Apss),
        Variant::Additive => {
            return Err(Error::Unsupported("no limit theory for the additive update".into()).into())
        }
    };
    let verdicts = analysis.predict_all();
    let collapse = match check_global_collapse(&problem.a, &problem.rho) {
        Ok(c) => Some(c),
        Err(Error::NotApplicable(why)) => {
            log::info!("collapse check skipped: {why}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    write!(
        out,
        "{}",
        analysis::render_report(&analysis, &verdicts, collapse.as_ref())
    )?;
    if a.iterations > 0 {
        let run = iterate_log_domain_eps0(&problem.a, &problem.rho, a.iterations, recursion)?;
        let decided: Vec<(usize, usize)> = verdicts
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.label().map(|l| (i, l)))
            .collect();
        let agree = decided.iter().filter(|(i, l)| run.labels[*i] == *l).count();
        writeln!(
            out,
            "agreement with {} log-domain iterations: {agree}/{} vertex verdicts",
            a.iterations,
            decided.len()
        )?;
        let undecided = verdicts
            .iter()
            .filter(|v| !matches!(v, Verdict::Vertex { .. }))
            .count();
        writeln!(out, "pixels without a vertex verdict: {undecided}")?;
    }
    if let Some(path) = &a.output {
        std::fs::write(path, analysis::render_csv(&verdicts))?;
    }
    Ok(0)
}

fn parse_vector(values: &[String]) -> Result<Vec<f64>> {
    values
        .iter()
        .flat_map(|v| v.split(|c: char| c.is_whitespace() || c == ','))
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(1, format!("invalid number `{t}`")))
        })
        .collect()
}

pub fn cmd_project(a: &ProjectArgs, out: &mut dyn Write) -> CmdResult {
    let y = parse_vector(&a.values)?;
    epsilon_guard(y.len(), a.epsilon)?;
    let x = project_kl_sorted(&y, a.epsilon)?;
    let cells: Vec<String> = x.values().iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(out, "{}", cells.join(" "))?;
    Ok(0)
}

pub fn cmd_features(a: &FeaturesArgs, out: &mut dyn Write) -> CmdResult {
    let params = TextureParams::new(a.sigma, a.window)?;
    let img: Image = io::read_netpbm(&a.input)?;
    let gray = img.to_gray();
    let field = feature_vector_field(&gray, &params)?;
    let desc = covariance_descriptors(gray.geom, &field, &params)?;
    let csv = descriptors_to_csv(&desc);
    match &a.output {
        Some(p) => std::fs::write(p, csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(0)
}

pub fn cmd_example26(a: &Example26Args, out: &mut dyn Write) -> CmdResult {
    let report = analysis::reproduce_with(StoppingRule {
        entropy_threshold: a.entropy_threshold,
        max_iterations: a.max_iters,
    })?;
    write!(out, "{}", report.render())?;
    Ok(if report.passed() { 0 } else { 1 })
}

/// Parses `args`, runs, and returns the process exit status. Errors go to
/// stderr.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 64 } else { 0 };
        }
    };
    match run(cli, out) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let c = RunConfig {
            metric: MetricSpec::Multiphase {
                groups: vec!["hexagonal".into(), "c2".into()],
                tau: 1.0,
            },
            alpha: WeightSpec::Gaussian { size: 5, sigma: 0.8 },
            rho: WeightSpec::File(PathBuf::from("/tmp/w.txt")),
            epsilon: 1e-81,
            entropy_threshold: 0.1 + 0.2,
            max_iterations: 17,
            variant: Variant::Apss,
            input: Some("in.csv".into()),
            size: Some((3, 4)),
            seed: 99,
            symmetrize: true,
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
        assert!(matches!(RunConfig::parse("epsilon = x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn spec_strings() {
        for s in ["euclidean", "spd:3", "rotation:hexagonal", "multiphase:c2,c3:1.0", "texture"] {
            assert_eq!(s.parse::<MetricSpec>().unwrap().to_string(), s);
        }
        for s in ["identity", "uniform:3", "gaussian:3:0.8", "nonlocal:9", "file:x.txt"] {
            assert_eq!(s.parse::<WeightSpec>().unwrap().to_string(), s);
        }
        assert!("uniform".parse::<WeightSpec>().is_err());
        assert!("cosine".parse::<MetricSpec>().is_err());
    }

    fn run_args(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let mut full = vec!["mflabel"];
        full.extend_from_slice(args);
        let code = main_with_args(full, &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn project_verb() {
        let (code, out) = run_args(&["project", "0.2 0.3 0.5", "--epsilon", "0.05"]);
        assert_eq!(code, 0);
        let v: Vec<f64> = out.split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert_eq!(v, vec![0.2, 0.3, 0.5]);
        let (code, _) = run_args(&["project", "1", "2", "--epsilon", "0.5"]);
        assert_eq!(code, EXIT_EPSILON);
        let (code, out) = run_args(&["project", "1", "3", "--epsilon", "0"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("2.5000000000000000e-1 7.5000000000000000e-1"));
    }

    #[test]
    fn example_verb() {
        let (code, out) = run_args(&["example26"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("1,1,3,3,3,3,3,2,2,2"));
    }
}
