//! Simulation databases: hyperparameter sampling, generation through the
//! forward map, kernel conditioning and on-disk persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{forward_qoi, ForwardConfig};
use crate::qoi::QOI_DIM;
use crate::randfield::{HyperParams, DELTA_SUP};
use crate::rng::{derive_seed, stream};
use crate::stats::{pearson, robust_sigma, silverman_bandwidth, trapezoid};

pub const HYPER_DIM: usize = 4;
pub const FORMAT_VERSION: &str = "1";

const TAG_HYPER: u64 = 0x6879_7065;
const TAG_GERM: u64 = 0x6765_726e;
const MAX_ATTEMPTS_PER_ROW: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbKind {
    Initial,
    Processed,
}

impl std::fmt::Display for DbKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DbKind::Initial => "initial",
            DbKind::Processed => "processed",
        })
    }
}

/// Box of admissible hyperparameters `(δ, ℓ [m], κ [Pa], μ [Pa])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmissibleSet {
    pub delta: [f64; 2],
    pub ell: [f64; 2],
    pub kappa: [f64; 2],
    pub mu: [f64; 2],
}

impl Default for AdmissibleSet {
    fn default() -> Self {
        AdmissibleSet { delta: [0.25, 0.65], ell: [20e-6, 250e-6], kappa: [8.5e9, 17e9], mu: [2.15e9, 5.0e9] }
    }
}

impl AdmissibleSet {
    pub fn bounds(&self) -> [[f64; 2]; HYPER_DIM] {
        [self.delta, self.ell, self.kappa, self.mu]
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 4] = ["delta", "ell", "kappa", "mu"];
        for (name, [lo, hi]) in NAMES.iter().zip(self.bounds()) {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(Error::config(format!("admissible interval for {name} is empty or invalid: [{lo}, {hi}]")));
            }
        }
        if self.delta[1] >= DELTA_SUP {
            return Err(Error::config(format!("delta upper bound must stay below {DELTA_SUP}")));
        }
        Ok(())
    }

    pub fn contains(&self, h: &[f64; HYPER_DIM]) -> bool {
        self.bounds().iter().zip(h).all(|([lo, hi], v)| (lo..=hi).contains(&v))
    }

    fn draw(&self, seed: u64, tags: &[u64]) -> [f64; HYPER_DIM] {
        use rand::Rng;
        let mut rng = stream(seed, tags);
        self.bounds().map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
    }
}

/// `n` independent uniform draws from the admissible box.
pub fn sample_hyperparams(set: &AdmissibleSet, n: usize, seed: u64) -> Result<Vec<[f64; HYPER_DIM]>> {
    set.validate()?;
    if n == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    Ok((0..n).map(|i| set.draw(seed, &[TAG_HYPER, i as u64, 0])).collect())
}

/// Bandwidths and quadrature actually used to condition a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningRecord {
    pub method: IntegrationMethod,
    pub bandwidths_h: [f64; HYPER_DIM],
    pub bandwidths_q: [f64; QOI_DIM],
    pub grid_points: usize,
    pub span: f64,
    pub parent_sha256: String,
}

/// Everything needed to reproduce a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub kind: DbKind,
    pub n: usize,
    pub admissible: AdmissibleSet,
    pub forward: Option<ForwardConfig>,
    pub seed: Option<u64>,
    /// Germ seed of every row.
    pub row_seeds: Vec<u64>,
    /// Forward evaluations that failed and were replaced by a fresh draw.
    pub resampled: usize,
    pub conditioning: Option<ConditioningRecord>,
    pub software_version: String,
}

impl Manifest {
    pub fn new(kind: DbKind, n: usize, admissible: AdmissibleSet) -> Self {
        Manifest {
            format_version: FORMAT_VERSION.into(),
            kind,
            n,
            admissible,
            forward: None,
            seed: None,
            row_seeds: Vec::new(),
            resampled: 0,
            conditioning: None,
            software_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub q: Vec<[f64; QOI_DIM]>,
    pub h: Vec<[f64; HYPER_DIM]>,
    pub manifest: Manifest,
}

impl Database {
    /// Build a database from aligned rows, checking finiteness.
    pub fn from_rows(
        kind: DbKind,
        q: Vec<[f64; QOI_DIM]>,
        h: Vec<[f64; HYPER_DIM]>,
        admissible: AdmissibleSet,
    ) -> Result<Self> {
        if q.len() != h.len() || q.is_empty() {
            return Err(Error::domain("database needs equally many nonzero q and h rows"));
        }
        let db = Database { manifest: Manifest::new(kind, q.len(), admissible), q, h };
        db.check_rows()?;
        Ok(db)
    }

    pub fn kind(&self) -> DbKind {
        self.manifest.kind
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn q_column(&self, k: usize) -> Vec<f64> {
        self.q.iter().map(|r| r[k]).collect()
    }

    pub fn h_column(&self, j: usize) -> Vec<f64> {
        self.h.iter().map(|r| r[j]).collect()
    }

    fn check_rows(&self) -> Result<()> {
        for (i, (q, h)) in self.q.iter().zip(&self.h).enumerate() {
            if q.iter().chain(h).any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("row {i} has non-finite values")));
            }
        }
        Ok(())
    }

    /// CSV body exactly as written to `data.csv`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 13 * 24);
        let header: Vec<String> =
            (1..=QOI_DIM).map(|k| format!("q{k}")).chain((1..=HYPER_DIM).map(|j| format!("h{j}"))).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for (q, h) in self.q.iter().zip(&self.h) {
            for (c, v) in q.iter().chain(h).enumerate() {
                if c > 0 {
                    s.push(',');
                }
                write!(s, "{v:e}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }

    pub fn data_sha256(&self) -> String {
        hex(&Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest)?;
        manifest.push('\n');
        fs::write(dir.join("manifest.json"), manifest)?;
        fs::write(dir.join("data.csv"), self.to_csv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version { expected: FORMAT_VERSION.into(), found: manifest.format_version });
        }
        let data_path = dir.join("data.csv");
        let text = fs::read_to_string(&data_path)?;
        let parse_err = |line: usize, msg: String| Error::Parse { path: data_path.clone(), line, msg };
        if !text.ends_with('\n') {
            return Err(parse_err(text.lines().count(), "file does not end with a newline (truncated?)".into()));
        }
        let mut lines = text.lines();
        let expected_header = Database { q: vec![], h: vec![], manifest: manifest.clone() }.to_csv();
        if lines.next() != Some(expected_header.trim_end()) {
            return Err(parse_err(1, "unexpected header".into()));
        }
        let mut q = Vec::with_capacity(manifest.n);
        let mut h = Vec::with_capacity(manifest.n);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != QOI_DIM + HYPER_DIM {
                return Err(parse_err(lineno, format!("expected {} fields, found {}", QOI_DIM + HYPER_DIM, fields.len())));
            }
            let mut vals = [0.0; QOI_DIM + HYPER_DIM];
            for (c, f) in fields.iter().enumerate() {
                vals[c] = f.parse().map_err(|e| parse_err(lineno, format!("column {}: {e}", c + 1)))?;
            }
            q.push(std::array::from_fn(|k| vals[k]));
            h.push(std::array::from_fn(|j| vals[QOI_DIM + j]));
        }
        if q.len() != manifest.n {
            return Err(parse_err(q.len() + 1, format!("manifest announces {} rows, file has {}", manifest.n, q.len())));
        }
        let db = Database { q, h, manifest };
        db.check_rows()?;
        Ok(db)
    }

    /// Load and require a particular kind.
    pub fn load_kind(dir: &Path, expected: DbKind) -> Result<Self> {
        let db = Self::load(dir)?;
        if db.kind() != expected {
            return Err(Error::KindMismatch { expected, found: db.kind() });
        }
        Ok(db)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to a String");
        s
    })
}

/// SHA-256 of arbitrary bytes as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Settings of the initial-database generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub forward: ForwardConfig,
    pub admissible: AdmissibleSet,
    pub seed: u64,
}

/// Run the forward map on `n` uniform hyperparameter draws. A draw whose
/// forward evaluation fails is replaced by a fresh draw; the run aborts if
/// more than 1% of the evaluations fail.
pub fn generate_initial(n: usize, cfg: &GenerationConfig) -> Result<Database> {
    cfg.admissible.validate()?;
    cfg.forward.validate()?;
    if n == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let done = std::sync::atomic::AtomicUsize::new(0);
    let rows = crate::par::map_indexed(n, |i| {
        let mut failures = Vec::new();
        for attempt in 0..MAX_ATTEMPTS_PER_ROW {
            let h = cfg.admissible.draw(cfg.seed, &[TAG_HYPER, i as u64, attempt]);
            let germ_seed = derive_seed(cfg.seed, &[TAG_GERM, i as u64, attempt]);
            let result = HyperParams::from_array(h).and_then(|hp| forward_qoi(&hp, germ_seed, &cfg.forward));
            match result {
                Ok(q) => {
                    let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                    if k % 100 == 0 || k == n {
                        log::info!("generated {k}/{n} rows");
                    }
                    return (Some((q.0, h, germ_seed)), failures);
                }
                Err(e) => {
                    log::warn!("row {i} attempt {attempt} failed for h = {h:?}: {e}");
                    failures.push(e.to_string());
                }
            }
        }
        (None, failures)
    });
    let total_failures: usize = rows.iter().map(|(_, f)| f.len()).sum();
    let evaluations = n + total_failures;
    if rows.iter().any(|(r, _)| r.is_none()) || total_failures as f64 > 0.01 * evaluations as f64 {
        let sample = rows.iter().flat_map(|(_, f)| f).next().cloned().unwrap_or_default();
        return Err(Error::Numerical(format!(
            "{total_failures} of {evaluations} forward evaluations failed (limit 1%); first failure: {sample}"
        )));
    }
    let mut q = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut seeds = Vec::with_capacity(n);
    for (row, _) in rows {
        let (qi, hi, s) = row.expect("checked above");
        q.push(qi);
        h.push(hi);
        seeds.push(s);
    }
    let mut db = Database::from_rows(DbKind::Initial, q, h, cfg.admissible)?;
    db.manifest.forward = Some(cfg.forward);
    db.manifest.seed = Some(cfg.seed);
    db.manifest.row_seeds = seeds;
    db.manifest.resampled = total_failures;
    Ok(db)
}

/// How the conditional mean is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    /// Trapezoid rule of `q p(q | h)` over a uniform grid.
    Trapezoid,
    /// The exact integral of the Gaussian mixture, `Σ w q / Σ w`.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    /// Kernel widths for `h`; Silverman's rule when absent.
    pub bandwidths_h: Option<[f64; HYPER_DIM]>,
    /// Kernel widths for `q`; Silverman's rule when absent.
    pub bandwidths_q: Option<[f64; QOI_DIM]>,
    /// Multiplies every bandwidth.
    pub bandwidth_scale: f64,
    pub grid_points: usize,
    /// Grid padding beyond the data range, in bandwidths.
    pub span: f64,
    pub method: IntegrationMethod,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            bandwidths_h: None,
            bandwidths_q: None,
            bandwidth_scale: 1.0,
            grid_points: 512,
            span: 4.0,
            method: IntegrationMethod::Trapezoid,
        }
    }
}

impl ConditioningConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_points < 64 {
            return Err(Error::config("integration grid needs at least 64 points"));
        }
        if !(self.bandwidth_scale > 0.0 && self.span > 0.0) {
            return Err(Error::config("bandwidth scale and span must be positive"));
        }
        let positive = |b: &[f64]| b.iter().all(|v| *v > 0.0 && v.is_finite());
        if self.bandwidths_h.is_some_and(|b| !positive(&b)) || self.bandwidths_q.is_some_and(|b| !positive(&b)) {
            return Err(Error::config("bandwidths must be positive"));
        }
        Ok(())
    }
}

fn silverman_or_unit(column: &[f64], n: usize) -> f64 {
    let s = robust_sigma(column);
    let b = silverman_bandwidth(s, n.max(2), HYPER_DIM);
    if b > 0.0 {
        b
    } else {
        // A constant column: any width reproduces it exactly.
        column[0].abs().max(1.0) * 1e-3
    }
}

/// Nadaraya-Watson estimator of `E{Q_k | H = h}` with product Gaussian kernels.
pub struct KernelConditioner<'a> {
    db: &'a Database,
    bh: [f64; HYPER_DIM],
    bq: [f64; QOI_DIM],
    method: IntegrationMethod,
    grid_points: usize,
    span: f64,
    /// Per-row trapezoid moments `∫ K_b(q - q_ik) dq` and `∫ q K_b(q - q_ik) dq`.
    moments: Vec<[[f64; 2]; QOI_DIM]>,
}

impl<'a> KernelConditioner<'a> {
    pub fn new(db: &'a Database, cfg: &ConditioningConfig) -> Result<Self> {
        cfg.validate()?;
        if db.is_empty() {
            return Err(Error::domain("cannot condition an empty database"));
        }
        let n = db.len();
        let bh = cfg.bandwidths_h.unwrap_or_else(|| std::array::from_fn(|j| silverman_or_unit(&db.h_column(j), n)));
        let bq = cfg.bandwidths_q.unwrap_or_else(|| std::array::from_fn(|k| silverman_or_unit(&db.q_column(k), n)));
        let bh = bh.map(|b| b * cfg.bandwidth_scale);
        let bq = bq.map(|b| b * cfg.bandwidth_scale);
        let mut c = KernelConditioner {
            db,
            bh,
            bq,
            method: cfg.method,
            grid_points: cfg.grid_points,
            span: cfg.span,
            moments: Vec::new(),
        };
        if cfg.method == IntegrationMethod::Trapezoid {
            c.moments = c.trapezoid_moments();
        }
        Ok(c)
    }

    pub fn bandwidths_h(&self) -> [f64; HYPER_DIM] {
        self.bh
    }

    pub fn bandwidths_q(&self) -> [f64; QOI_DIM] {
        self.bq
    }

    /// Uniform integration grid for QoI `k`.
    pub fn grid(&self, k: usize) -> Vec<f64> {
        let col = self.db.q_column(k);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min) - self.span * self.bq[k];
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max) + self.span * self.bq[k];
        crate::stats::linspace(lo, hi, self.grid_points)
    }

    fn trapezoid_moments(&self) -> Vec<[[f64; 2]; QOI_DIM]> {
        let grids: Vec<Vec<f64>> = (0..QOI_DIM).map(|k| self.grid(k)).collect();
        crate::par::map_indexed(self.db.len(), |i| {
            std::array::from_fn(|k| {
                let b = self.bq[k];
                let qi = self.db.q[i][k];
                let norm = 1.0 / (b * (2.0 * std::f64::consts::PI).sqrt());
                let p: Vec<f64> = grids[k].iter().map(|&t| norm * (-0.5 * ((t - qi) / b).powi(2)).exp()).collect();
                let qp: Vec<f64> = grids[k].iter().zip(&p).map(|(t, v)| t * v).collect();
                [trapezoid(&grids[k], &p), trapezoid(&grids[k], &qp)]
            })
        })
    }

    /// Normalized kernel weights of every row for the query `h`.
    pub fn weights(&self, h: &[f64; HYPER_DIM]) -> Result<Vec<f64>> {
        let logw: Vec<f64> = self
            .db
            .h
            .iter()
            .map(|hi| -0.5 * (0..HYPER_DIM).map(|j| ((h[j] - hi[j]) / self.bh[j]).powi(2)).sum::<f64>())
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= f64::MIN_POSITIVE.ln()) {
            return Err(Error::domain(format!("query {h:?} is far outside the data support: every kernel weight underflows")));
        }
        let mut w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    /// Estimate of `E{Q_k | H = h}`.
    pub fn conditional_expectation(&self, k: usize, h: &[f64; HYPER_DIM]) -> Result<f64> {
        Ok(self.conditional_mean(h)?[k])
    }

    /// All nine conditional means at once. The trapezoid path divides the
    /// first moment of the conditional pdf by its quadrature mass.
    pub fn conditional_mean(&self, h: &[f64; HYPER_DIM]) -> Result<[f64; QOI_DIM]> {
        let w = self.weights(h)?;
        let mut out = [0.0; QOI_DIM];
        match self.method {
            IntegrationMethod::ClosedForm => {
                for (wi, row) in w.iter().zip(&self.db.q) {
                    for k in 0..QOI_DIM {
                        out[k] += wi * row[k];
                    }
                }
            }
            IntegrationMethod::Trapezoid => {
                let mut mass = [0.0; QOI_DIM];
                for (wi, row) in w.iter().zip(&self.moments) {
                    for k in 0..QOI_DIM {
                        mass[k] += wi * row[k][0];
                        out[k] += wi * row[k][1];
                    }
                }
                for k in 0..QOI_DIM {
                    out[k] /= mass[k];
                }
            }
        }
        Ok(out)
    }

    /// Conditional pdf of `Q_k` given `h` on the integration grid.
    pub fn conditional_pdf(&self, k: usize, h: &[f64; HYPER_DIM]) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.weights(h)?;
        let grid = self.grid(k);
        let b = self.bq[k];
        let norm = 1.0 / (b * (2.0 * std::f64::consts::PI).sqrt());
        let pdf = grid
            .iter()
            .map(|&t| {
                w.iter()
                    .zip(&self.db.q)
                    .map(|(wi, qi)| wi * norm * (-0.5 * ((t - qi[k]) / b).powi(2)).exp())
                    .sum()
            })
            .collect();
        Ok((grid, pdf))
    }

    fn record(&self) -> ConditioningRecord {
        ConditioningRecord {
            method: self.method,
            bandwidths_h: self.bh,
            bandwidths_q: self.bq,
            grid_points: self.grid_points,
            span: self.span,
            parent_sha256: self.db.data_sha256(),
        }
    }
}

/// Free-function form of [`KernelConditioner::conditional_expectation`].
pub fn conditional_expectation(k: usize, h: &[f64; HYPER_DIM], db: &Database, cfg: &ConditioningConfig) -> Result<f64> {
    if k >= QOI_DIM {
        return Err(Error::domain(format!("QoI index {k} out of range")));
    }
    KernelConditioner::new(db, cfg)?.conditional_expectation(k, h)
}

/// Replace every `q⁽ⁱ⁾` by the conditional mean at `h⁽ⁱ⁾`.
pub fn condition_database(db: &Database, cfg: &ConditioningConfig) -> Result<Database> {
    if db.kind() != DbKind::Initial {
        return Err(Error::KindMismatch { expected: DbKind::Initial, found: db.kind() });
    }
    let c = KernelConditioner::new(db, cfg)?;
    let q = crate::par::map_indexed(db.len(), |i| c.conditional_mean(&db.h[i])).into_iter().collect::<Result<Vec<_>>>()?;
    let mut manifest = db.manifest.clone();
    manifest.kind = DbKind::Processed;
    manifest.conditioning = Some(c.record());
    let out = Database { q, h: db.h.clone(), manifest };
    out.check_rows()?;
    Ok(out)
}

/// Pearson correlation of every QoI column (rows) with every hyperparameter
/// column (columns).
pub fn correlation_matrix(db: &Database) -> Result<[[f64; HYPER_DIM]; QOI_DIM]> {
    let hs: Vec<Vec<f64>> = (0..HYPER_DIM).map(|j| db.h_column(j)).collect();
    let mut out = [[0.0; HYPER_DIM]; QOI_DIM];
    for (k, row) in out.iter_mut().enumerate() {
        let qk = db.q_column(k);
        for (j, v) in row.iter_mut().enumerate() {
            *v = pearson(&qk, &hs[j]).map_err(|_| Error::domain(format!("column q{} or h{} has zero variance", k + 1, j + 1)))?;
        }
    }
    Ok(out)
}
