//! Benchmark harness: denoise the test FOV of every configuration at every
//! averaging level, score against the FOV reference and tabulate.

mod report;

pub use report::{emit_report, read_report_csv, render_csv, render_markdown, ReportFormat};

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{read_manifest, Level, ManifestEntry, MANIFEST_FILE};
use crate::denoise::{denoise, DenoiserSpec, NlmParams};
use crate::error::{Error, Result};
use crate::estimation::estimate_noise_params;
use crate::image::{read_image, Image};
use crate::metrics::score_multichannel;
use crate::noise::{NoiseParams, Seed};
use crate::vst::vst_denoise;

/// Environment variable bounding the benchmark worker pool.
pub const WORKERS_ENV: &str = "FMD_WORKERS";
/// FOV used for testing when none is given.
pub const DEFAULT_TEST_FOV: usize = 19;

/// A denoiser, optionally wrapped in the variance-stabilizing transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub denoiser: DenoiserSpec,
    pub vst: bool,
}

impl Method {
    pub fn new(denoiser: DenoiserSpec, vst: bool) -> Self {
        let name = match (&denoiser, vst) {
            (DenoiserSpec::Identity, false) => "Raw".to_owned(),
            (d, true) => format!("VST+{}", d.name()),
            (d, false) => d.name(),
        };
        Self { name, denoiser, vst }
    }

    /// The identity denoiser without transform: scores the noisy input itself.
    pub fn raw() -> Self {
        Self::new(DenoiserSpec::Identity, false)
    }

    /// Parses `raw`, `identity`, `box[:r]`, `nlm[:patch,search,h]` or
    /// `ext:<command>`, each optionally prefixed by `vst+`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("method `{text}`: {m}"));
        let (vst, body) = match text.get(..4) {
            Some(p) if p.eq_ignore_ascii_case("vst+") => (true, &text[4..]),
            _ => (false, text),
        };
        let (head, arg) = match body.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (body, None),
        };
        let denoiser = match (head.to_ascii_lowercase().as_str(), arg) {
            ("raw" | "identity", None) => DenoiserSpec::Identity,
            ("box", None) => DenoiserSpec::Box { radius: 1 },
            ("box", Some(r)) => DenoiserSpec::Box {
                radius: r.parse().map_err(|_| bad("radius must be an integer"))?,
            },
            ("nlm", None) => DenoiserSpec::nlm(),
            ("nlm", Some(args)) => {
                let parts: Vec<&str> = args.split(',').collect();
                let [p, s, h] = parts.as_slice() else {
                    return Err(bad("expected nlm:patch,search,h"));
                };
                DenoiserSpec::Nlm(NlmParams {
                    patch_radius: p.parse().map_err(|_| bad("patch radius"))?,
                    search_radius: s.parse().map_err(|_| bad("search radius"))?,
                    h: h.parse().map_err(|_| bad("h"))?,
                })
            }
            ("ext", Some(cmd)) => DenoiserSpec::External { command: cmd.to_owned() },
            _ => return Err(bad("unknown method")),
        };
        denoiser.validate()?;
        Ok(Self::new(denoiser, vst))
    }

    /// Denoises `image` with noise parameters `params`.
    ///
    /// Without the transform the denoiser gets the noise level at the mean
    /// intensity, `sqrt(a*mean + b)`.
    pub fn apply(&self, image: &Image, params: &NoiseParams) -> Result<Image> {
        if self.vst {
            vst_denoise(image, params, &self.denoiser)
        } else if self.denoiser == DenoiserSpec::Identity {
            Ok(image.clone())
        } else {
            let sigma = params.variance_at(image.mean().max(0.0)).sqrt();
            Ok(denoise(image, sigma, &self.denoiser)?.image)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamsSource {
    /// Parameters recorded in the manifest (known for synthetic data).
    Manifest,
    /// Estimated from each test image.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// The FOV ground truth obtained by averaging its captures.
    EstimatedGt,
    /// The noise-free phantom, available for synthetic datasets only.
    Clean,
}

impl Reference {
    fn level(self) -> Level {
        match self {
            Reference::EstimatedGt => Level::GroundTruth,
            Reference::Clean => Level::Clean,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Reference::EstimatedGt => "gt",
            Reference::Clean => "clean",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub root: PathBuf,
    pub methods: Vec<Method>,
    pub levels: Vec<usize>,
    pub test_fov: usize,
    /// Random subset of realizations per level; `None` takes all of them.
    pub images_per_level: Option<usize>,
    /// Configuration tags to include; empty means all.
    pub configs: Vec<String>,
    pub params_source: ParamsSource,
    pub reference: Reference,
    pub seed: Seed,
    /// Worker threads; `None` reads [`WORKERS_ENV`], else uses all cores.
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Raw and VST+NLM at the five canonical levels on FOV 19.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            methods: vec![Method::raw(), Method::new(DenoiserSpec::nlm(), true)],
            levels: vec![1, 2, 4, 8, 16],
            test_fov: DEFAULT_TEST_FOV,
            images_per_level: None,
            configs: Vec::new(),
            params_source: ParamsSource::Manifest,
            reference: Reference::EstimatedGt,
            seed: Seed(0),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.levels.is_empty() {
            return Err(Error::InvalidArgument(
                "a benchmark needs at least one method and one level".into(),
            ));
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.denoiser.validate()?;
            if self.methods[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::InvalidArgument(format!("method {} listed twice", m.name)));
            }
        }
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() != self.levels.len() || levels[0] == 0 {
            return Err(Error::InvalidArgument(format!("bad level list {:?}", self.levels)));
        }
        if self.images_per_level == Some(0) {
            return Err(Error::InvalidArgument("images per level must be >= 1".into()));
        }
        Ok(())
    }
}

/// Reads [`WORKERS_ENV`]; unset, unparsable or zero means no bound.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub level: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean seconds per image inside the method, transform included.
    pub time_s: f64,
    /// Images scored.
    pub n: usize,
    pub failures: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub config: String,
    pub method: String,
    pub level: usize,
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportMetadata {
    pub manifest_sha256: String,
    pub version: String,
    pub seed: u64,
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// One row per (method, level), methods in request order, levels ascending.
    pub rows: Vec<ReportRow>,
    pub scores: Vec<ImageScore>,
    pub metadata: ReportMetadata,
}

impl BenchmarkReport {
    pub fn row(&self, method: &str, level: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.level == level)
    }

    /// Per-configuration mean PSNR of one cell.
    pub fn config_psnr(&self, method: &str, level: usize) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for s in self.scores.iter().filter(|s| s.method == method && s.level == level) {
            let e = acc.entry(s.config.clone()).or_default();
            e.0 += s.psnr;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
    }
}

struct Task<'a> {
    config: &'a str,
    level: usize,
    entry: &'a ManifestEntry,
}

/// Runs every method at every level on the test images and aggregates scores.
///
/// Scores are deterministic for a given dataset and configuration; only
/// the timings vary between runs. A failing method is recorded in its rows
/// and does not stop the rest of the grid.
pub fn run_benchmark(config: &RunConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let manifest_bytes = fs::read(config.root.join(MANIFEST_FILE))
        .map_err(|e| Error::io(config.root.join(MANIFEST_FILE), e))?;
    let manifest = read_manifest(&config.root)?;
    manifest.check_closed(&config.root)?;

    let mut configs = manifest.configs();
    if !config.configs.is_empty() {
        if let Some(missing) = config.configs.iter().find(|c| !configs.contains(c)) {
            return Err(Error::Dataset(format!("configuration {missing} is not in the dataset")));
        }
        configs.retain(|c| config.configs.contains(c));
    }

    // inputs and references
    let mut tasks = Vec::new();
    let mut references = BTreeMap::new();
    for (ci, tag) in configs.iter().enumerate() {
        let reference = manifest
            .find(tag, config.test_fov, config.reference.level())
            .next()
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "{tag} FOV {} has no {} reference",
                    config.test_fov,
                    config.reference.label()
                ))
            })?;
        references.insert(tag.as_str(), reference);
        for &level in &config.levels {
            let mut entries: Vec<&ManifestEntry> =
                manifest.find(tag, config.test_fov, Level::Noisy(level)).collect();
            if entries.is_empty() {
                return Err(Error::Dataset(format!(
                    "{tag} FOV {} has no images at level {level}",
                    config.test_fov
                )));
            }
            entries.sort_by_key(|e| e.index);
            if let Some(k) = config.images_per_level {
                // the same realization indices at every level
                let mut rng = config.seed.derive(ci as u64).stream(0);
                let mut picked = sample(&mut rng, entries.len(), k.min(entries.len())).into_vec();
                picked.sort_unstable();
                entries = picked.into_iter().map(|i| entries[i]).collect();
            }
            tasks.extend(entries.into_iter().map(|entry| Task { config: tag, level, entry }));
        }
    }

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = config.workers.or_else(workers_from_env) {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?
    };

    let (references, params) = pool.install(|| -> Result<_> {
        let refs: BTreeMap<&str, Image> = references
            .par_iter()
            .map(|(tag, e)| Ok((*tag, read_image(config.root.join(&e.path))?)))
            .collect::<Result<_>>()?;
        let params: Vec<Result<NoiseParams>> = tasks
            .par_iter()
            .map(|t| match config.params_source {
                ParamsSource::Manifest => NoiseParams::new(t.entry.a, t.entry.b),
                ParamsSource::Estimate => {
                    let img = read_image(config.root.join(&t.entry.path))?;
                    Ok(estimate_noise_params(&img)?.params)
                }
            })
            .collect();
        Ok((refs, params))
    })?;

    let jobs: Vec<(usize, usize)> = (0..config.methods.len())
        .flat_map(|m| (0..tasks.len()).map(move |t| (m, t)))
        .collect();
    let outcomes: Vec<Result<(f64, f64, f64)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, t)| {
                let task = &tasks[t];
                let p = params[t].as_ref().map_err(|e| Error::Dataset(e.to_string()))?;
                let input = read_image(config.root.join(&task.entry.path))?;
                let start = Instant::now();
                let output = config.methods[m].apply(&input, p)?;
                let elapsed = start.elapsed().as_secs_f64();
                let q = score_multichannel(&references[task.config], &output)?;
                Ok((q.psnr_db, q.ssim, elapsed))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for (mi, method) in config.methods.iter().enumerate() {
        for &level in &config.levels {
            let mut row = ReportRow {
                method: method.name.clone(),
                level,
                psnr: 0.0,
                ssim: 0.0,
                time_s: 0.0,
                n: 0,
                failures: 0,
                error: None,
            };
            for (&(m, t), outcome) in jobs.iter().zip(&outcomes) {
                let task = &tasks[t];
                if m != mi || task.level != level {
                    continue;
                }
                match outcome {
                    Ok((psnr, ssim, time_s)) => {
                        row.psnr += psnr;
                        row.ssim += ssim;
                        row.time_s += time_s;
                        row.n += 1;
                        scores.push(ImageScore {
                            config: task.config.to_owned(),
                            method: method.name.clone(),
                            level,
                            index: task.entry.index.unwrap_or(0),
                            psnr: *psnr,
                            ssim: *ssim,
                            time_s: *time_s,
                        });
                    }
                    Err(e) => {
                        row.failures += 1;
                        row.error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            if row.n > 0 {
                let n = row.n as f64;
                row.psnr /= n;
                row.ssim /= n;
                row.time_s /= n;
            } else {
                row.psnr = f64::NAN;
                row.ssim = f64::NAN;
                row.time_s = f64::NAN;
            }
            if let Some(err) = &row.error {
                log::warn!("{} at level {level}: {} failures, first: {err}", method.name, row.failures);
            }
            rows.push(row);
        }
    }

    Ok(BenchmarkReport {
        rows,
        scores,
        metadata: ReportMetadata {
            manifest_sha256: hex::encode(Sha256::digest(&manifest_bytes)),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: config.seed.0,
            reference: config.reference,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, canonical_configurations, DatasetLayout};
    use std::path::Path;

    #[test]
    fn method_parsing_and_names() {
        assert_eq!(Method::parse("raw").unwrap().name, "Raw");
        assert_eq!(Method::parse("vst+nlm").unwrap().name, "VST+NLM");
        assert_eq!(Method::parse("VST+box:2").unwrap().denoiser, DenoiserSpec::Box { radius: 2 });
        let n = Method::parse("nlm:2,5,0.4").unwrap();
        assert!(!n.vst);
        assert_eq!(n.denoiser, DenoiserSpec::Nlm(NlmParams { patch_radius: 2, search_radius: 5, h: 0.4 }));
        assert_eq!(Method::parse("ext:cat").unwrap().name, "External(cat)");
        for bad in ["foo", "box:x", "nlm:1,2", "vst+", "box:0"] {
            assert!(Method::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::new("x");
        c.validate().unwrap();
        c.levels = vec![];
        assert!(c.validate().is_err());
        c.levels = vec![1, 1];
        assert!(c.validate().is_err());
        c.levels = vec![1];
        c.methods.push(Method::raw());
        assert!(c.validate().is_err());
    }

    fn tiny_dataset(root: &Path) {
        let layout = DatasetLayout {
            root: root.to_path_buf(),
            configurations: canonical_configurations()[..2].to_vec(),
            fovs_per_config: 2,
            realizations: 4,
            noise_levels: vec![1, 2, 4],
            gt_average_count: 4,
            image_side: 48,
            write_clean: true,
        };
        build_dataset(&layout, Seed(21)).unwrap();
    }

    fn tiny_config(root: &Path) -> RunConfig {
        let mut c = RunConfig::new(root);
        c.levels = vec![1, 2, 4];
        c.test_fov = 2;
        c.methods = vec![Method::raw(), Method::parse("vst+box:1").unwrap()];
        c.reference = Reference::Clean;
        c.workers = Some(2);
        c
    }

    #[test]
    fn grid_is_complete_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset(dir.path());
        let c = tiny_config(dir.path());
        let a = run_benchmark(&c).unwrap();
        assert_eq!(a.rows.len(), 6);
        assert!(a.rows.iter().all(|r| r.n == 8 && r.failures == 0));
        let b = run_benchmark(&c).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.psnr, x.ssim, x.n), (y.psnr, y.ssim, y.n));
        }
        assert_eq!(a.metadata.manifest_sha256.len(), 64);

        // Raw rows do not depend on which other methods run
        let mut only_raw = c.clone();
        only_raw.methods = vec![Method::raw()];
        let r = run_benchmark(&only_raw).unwrap();
        for level in [1, 2, 4] {
            assert_eq!(r.row("Raw", level).unwrap().psnr, a.row("Raw", level).unwrap().psnr);
        }
        // raw PSNR grows with averaging
        assert!(a.row("Raw", 4).unwrap().psnr > a.row("Raw", 1).unwrap().psnr);
    }

    #[test]
    fn raw_row_scores_the_noisy_inputs() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset(dir.path());
        let mut c = tiny_config(dir.path());
        c.methods = vec![Method::raw()];
        c.levels = vec![2];
        c.configs = vec!["CF_BPAE-Nuclei".into()];
        c.reference = Reference::EstimatedGt;
        let report = run_benchmark(&c).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        let gt = read_image(dir.path().join(&m.find("CF_BPAE-Nuclei", 2, Level::GroundTruth).next().unwrap().path)).unwrap();
        let mut sum = 0.0;
        let entries: Vec<_> = m.find("CF_BPAE-Nuclei", 2, Level::Noisy(2)).collect();
        for e in &entries {
            sum += crate::metrics::psnr(&gt, &read_image(dir.path().join(&e.path)).unwrap()).unwrap();
        }
        let want = sum / entries.len() as f64;
        assert!((report.rows[0].psnr - want).abs() < 1e-9);
    }

    #[test]
    fn subset_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset(dir.path());
        let mut c = tiny_config(dir.path());
        c.images_per_level = Some(2);
        c.methods = vec![Method::raw(), Method::parse("ext:exit 3").unwrap()];
        let r = run_benchmark(&c).unwrap();
        let raw = r.row("Raw", 1).unwrap();
        assert_eq!(raw.n, 4);
        let ext = r.row("External(exit)", 1).unwrap();
        assert_eq!((ext.n, ext.failures), (0, 4));
        assert!(ext.psnr.is_nan() && ext.error.is_some());

        let mut missing = tiny_config(dir.path());
        missing.test_fov = 19;
        assert!(run_benchmark(&missing).is_err());
        let mut unknown = tiny_config(dir.path());
        unknown.configs = vec!["nope".into()];
        assert!(run_benchmark(&unknown).is_err());
    }

    #[test]
    fn estimate_params_source_runs() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout {
            root: dir.path().to_path_buf(),
            configurations: canonical_configurations()[..1].to_vec(),
            fovs_per_config: 1,
            realizations: 2,
            noise_levels: vec![1],
            gt_average_count: 2,
            image_side: 64,
            write_clean: false,
        };
        build_dataset(&layout, Seed(2)).unwrap();
        let mut c = RunConfig::new(dir.path());
        c.test_fov = 1;
        c.levels = vec![1];
        c.params_source = ParamsSource::Estimate;
        c.methods = vec![Method::parse("vst+box:1").unwrap()];
        let r = run_benchmark(&c).unwrap();
        assert_eq!(r.rows[0].n, 2);
        assert!(r.rows[0].psnr.is_finite());
    }
}
