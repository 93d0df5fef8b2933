use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::{circular_average, estimate_ground_truth, generate_phantom, generate_synthetic_fov};
use super::{ImageSequence, PhantomSpec, PhantomStyle};
use crate::error::{Error, Result};
use crate::image::{write_image, Image, ImageFormat};
use crate::noise::{NoiseParams, Seed};

pub const MANIFEST_FILE: &str = "manifest.csv";
/// Present in the root while a build is in progress or after it failed.
pub const INCOMPLETE_MARKER: &str = ".incomplete";

const MANIFEST_HEADER: [&str; 8] = ["config", "fov", "level", "index", "path", "a", "b", "seed"];
const PHANTOM_TAG: u64 = u64::MAX;

/// One imaging configuration: a modality and a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub modality: String,
    pub sample: String,
    pub params: NoiseParams,
    pub style: PhantomStyle,
}

impl Configuration {
    pub fn new(modality: &str, sample: &str, a: f64, b: f64, style: PhantomStyle) -> Result<Self> {
        Ok(Self {
            modality: modality.into(),
            sample: sample.into(),
            params: NoiseParams::new(a, b)?,
            style,
        })
    }

    /// Directory name, `<modality>_<sample>`.
    pub fn tag(&self) -> String {
        format!("{}_{}", self.modality, self.sample)
    }
}

/// The twelve confocal / two-photon / wide-field configurations with their
/// measured noise parameters (images normalized to [0, 1]).
pub fn canonical_configurations() -> Vec<Configuration> {
    use PhantomStyle::*;
    let table: [(&str, &str, f64, f64, PhantomStyle); 12] = [
        ("CF", "BPAE-Nuclei", 1.39e-2, -2.16e-4, Nuclei),
        ("CF", "BPAE-Factin", 1.37e-2, -1.85e-4, Filaments),
        ("CF", "BPAE-Mito", 1.21e-2, -1.54e-4, Mitochondria),
        ("CF", "Zebrafish", 9.43e-2, -1.60e-3, Tissue),
        ("CF", "MouseBrain", 1.94e-2, -2.68e-4, Tissue),
        ("TP", "BPAE-Nuclei", 3.31e-2, -8.39e-4, Nuclei),
        ("TP", "BPAE-Factin", 2.55e-2, -5.43e-4, Filaments),
        ("TP", "BPAE-Mito", 2.10e-2, -4.57e-4, Mitochondria),
        ("TP", "MouseBrain", 3.38e-2, -9.16e-4, Tissue),
        ("WF", "BPAE-Nuclei", 2.29e-4, 2.35e-4, Nuclei),
        ("WF", "BPAE-Factin", 1.94e-3, 1.91e-4, Filaments),
        ("WF", "BPAE-Mito", 3.55e-4, 1.95e-4, Mitochondria),
    ];
    table
        .iter()
        .map(|&(m, s, a, b, style)| Configuration::new(m, s, a, b, style).expect("table values are valid"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub configurations: Vec<Configuration>,
    pub fovs_per_config: usize,
    /// Raw captures per FOV (`R`).
    pub realizations: usize,
    /// Averaging levels `S`, ascending.
    pub noise_levels: Vec<usize>,
    pub gt_average_count: usize,
    /// Side of the square synthetic images.
    pub image_side: usize,
    /// Also store the noise-free phantom of each FOV.
    pub write_clean: bool,
}

impl DatasetLayout {
    /// 12 configurations, 20 FOVs, 50 captures, levels 1..16, 512x512 images.
    pub fn canonical(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            configurations: canonical_configurations(),
            fovs_per_config: 20,
            realizations: 50,
            noise_levels: vec![1, 2, 4, 8, 16],
            gt_average_count: 50,
            image_side: 512,
            write_clean: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.configurations.is_empty() {
            return bad("layout has no configurations".into());
        }
        let mut tags: Vec<String> = self.configurations.iter().map(Configuration::tag).collect();
        tags.sort();
        if let Some(w) = tags.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("configuration {} appears twice", w[0]));
        }
        if self.fovs_per_config == 0 || self.realizations == 0 || self.image_side == 0 {
            return bad("FOV count, realization count and image side must be >= 1".into());
        }
        if self.noise_levels.is_empty() {
            return bad("layout has no noise levels".into());
        }
        if !self.noise_levels.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("noise levels {:?} are not strictly ascending", self.noise_levels));
        }
        let r = self.realizations;
        if self.noise_levels.iter().any(|&s| s == 0 || s > r) {
            return bad(format!("noise levels {:?} must lie in 1..={r}", self.noise_levels));
        }
        if self.gt_average_count == 0 || self.gt_average_count > r {
            return bad(format!("ground-truth count {} must lie in 1..={r}", self.gt_average_count));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// Circular average of `S` captures; `S = 1` are the raw captures.
    Noisy(usize),
    GroundTruth,
    /// The noise-free phantom.
    Clean,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Noisy(s) => write!(f, "{s}"),
            Level::GroundTruth => f.write_str("gt"),
            Level::Clean => f.write_str("clean"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Level::GroundTruth),
            "clean" => Ok(Level::Clean),
            _ => match s.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Level::Noisy(n)),
                _ => Err(Error::Dataset(format!("unknown level `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub config: String,
    /// 1-based FOV number.
    pub fov: usize,
    pub level: Level,
    /// 1-based realization index; `None` for ground truth and clean images.
    pub index: Option<usize>,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    fn count(&self, pred: impl Fn(&ManifestEntry) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(e)).count()
    }

    pub fn raw_count(&self) -> usize {
        self.count(|e| e.level == Level::Noisy(1))
    }

    /// Noisy images over all levels, raw captures included.
    pub fn noisy_count(&self) -> usize {
        self.count(|e| matches!(e.level, Level::Noisy(_)))
    }

    pub fn gt_count(&self) -> usize {
        self.count(|e| e.level == Level::GroundTruth)
    }

    pub fn clean_count(&self) -> usize {
        self.count(|e| e.level == Level::Clean)
    }

    pub fn configs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.config) {
                out.push(e.config.clone());
            }
        }
        out
    }

    pub fn find(&self, config: &str, fov: usize, level: Level) -> impl Iterator<Item = &ManifestEntry> {
        let config = config.to_owned();
        self.entries
            .iter()
            .filter(move |e| e.config == config && e.fov == fov && e.level == level)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Dataset(format!("manifest encoding: {e}"));
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                e.config.clone(),
                e.fov.to_string(),
                e.level.to_string(),
                e.index.map(|i| i.to_string()).unwrap_or_default(),
                e.path.clone(),
                e.a.to_string(),
                e.b.to_string(),
                e.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Dataset(format!("manifest encoding: {e}")))
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r
            .headers()
            .map_err(|e| Error::Dataset(format!("manifest header: {e}")))?;
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(Error::Dataset(format!(
                "manifest header is `{}`, expected `{}`",
                header.iter().collect::<Vec<_>>().join(","),
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Dataset(format!("manifest row {}: {e}", line + 1)))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| Error::Dataset(format!("manifest row {}: bad {what}", line + 1));
            let index = match field(3) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("index"))?),
            };
            entries.push(ManifestEntry {
                config: field(0).to_owned(),
                fov: field(1).parse().map_err(|_| bad("fov"))?,
                level: field(2).parse()?,
                index,
                path: field(4).to_owned(),
                a: field(5).parse().map_err(|_| bad("a"))?,
                b: field(6).parse().map_err(|_| bad("b"))?,
                seed: field(7).parse().map_err(|_| bad("seed"))?,
            });
        }
        Ok(Self { entries })
    }

    /// Checks that the files under `root` are exactly the manifest's entries.
    pub fn check_closed(&self, root: &Path) -> Result<()> {
        let mut listed: Vec<&str> = self.entries.iter().map(|e| e.path.as_str()).collect();
        listed.sort_unstable();
        let mut on_disk = Vec::new();
        for entry in walkdir::WalkDir::new(root) {
            let entry = entry.map_err(|e| Error::Dataset(format!("walking {}: {e}", root.display())))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(root).expect("walk stays under root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let rel = rel.join("/");
            if rel != MANIFEST_FILE {
                on_disk.push(rel);
            }
        }
        on_disk.sort_unstable();
        if let Some(extra) = on_disk.iter().find(|p| listed.binary_search(&p.as_str()).is_err()) {
            return Err(Error::Dataset(format!("{extra} is not in the manifest")));
        }
        if let Some(missing) = listed.iter().find(|p| on_disk.binary_search_by(|d| d.as_str().cmp(p)).is_err()) {
            return Err(Error::Dataset(format!("{missing} is in the manifest but missing on disk")));
        }
        if on_disk.len() != listed.len() {
            return Err(Error::Dataset("manifest lists a path twice".into()));
        }
        Ok(())
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::from_csv_bytes(&bytes)
}

fn fov_seed(seed: Seed, config: usize, fov: usize) -> Seed {
    seed.derive(config as u64).derive(fov as u64)
}

fn fov_dir(config: &Configuration, fov: usize) -> String {
    format!("{}/fov{fov:02}", config.tag())
}

fn fov_entries(layout: &DatasetLayout, ci: usize, fov: usize, seed: Seed) -> Result<Vec<ManifestEntry>> {
    let config = &layout.configurations[ci];
    let dir = fov_dir(config, fov);
    let fseed = fov_seed(seed, ci, fov);
    let entry = |level, index, path: String, p: Option<NoiseParams>, seed: Seed| ManifestEntry {
        config: config.tag(),
        fov,
        level,
        index,
        path,
        a: p.map_or(0.0, |p| p.a()),
        b: p.map_or(0.0, |p| p.b()),
        seed: seed.0,
    };
    let mut out = Vec::new();
    for &s in &layout.noise_levels {
        let p = config.params.averaged(s)?;
        for j in 0..layout.realizations {
            let (path, rseed) = if s == 1 {
                (format!("{dir}/raw/{:02}.fmdf", j + 1), fseed.derive(j as u64))
            } else {
                (format!("{dir}/avg{s}/{:02}.fmdf", j + 1), fseed)
            };
            out.push(entry(Level::Noisy(s), Some(j + 1), path, Some(p), rseed));
        }
    }
    let gt_params = config.params.averaged(layout.gt_average_count)?;
    out.push(entry(Level::GroundTruth, None, format!("{dir}/gt.fmdf"), Some(gt_params), fseed));
    if layout.write_clean {
        out.push(entry(Level::Clean, None, format!("{dir}/clean.fmdf"), None, fseed));
    }
    Ok(out)
}

/// The manifest `build_dataset` would write, without touching the disk.
pub fn plan_manifest(layout: &DatasetLayout, seed: Seed) -> Result<Manifest> {
    layout.validate()?;
    let mut entries = Vec::new();
    for ci in 0..layout.configurations.len() {
        for fov in 1..=layout.fovs_per_config {
            entries.extend(fov_entries(layout, ci, fov, seed)?);
        }
    }
    Ok(Manifest { entries })
}

fn build_fov(layout: &DatasetLayout, ci: usize, fov: usize, seed: Seed) -> Result<()> {
    let config = &layout.configurations[ci];
    let fseed = fov_seed(seed, ci, fov);
    let spec = PhantomSpec::new(layout.image_side, config.style);
    let phantom = generate_phantom(&spec, fseed.derive(PHANTOM_TAG))?;
    let id = fov_dir(config, fov);
    let raw = generate_synthetic_fov(id.clone(), &phantom, &config.params, layout.realizations, fseed)?;

    let entries = fov_entries(layout, ci, fov, seed)?;
    let write = |img: &Image, rel: &str| -> Result<()> {
        let path = layout.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_image(img, &path, ImageFormat::Fmdf)
    };
    for &s in &layout.noise_levels {
        let seq = circular_average(&raw, s)?;
        for (e, img) in entries
            .iter()
            .filter(|e| e.level == Level::Noisy(s))
            .zip(seq.realizations())
        {
            write(img, &e.path)?;
        }
    }
    let gt_seq = ImageSequence::new(
        id,
        raw.realizations()[..layout.gt_average_count].to_vec(),
        *raw.params(),
    )?;
    let gt = estimate_ground_truth(&gt_seq)?;
    for e in &entries {
        match e.level {
            Level::GroundTruth => write(&gt, &e.path)?,
            Level::Clean => write(&phantom, &e.path)?,
            Level::Noisy(_) => {}
        }
    }
    Ok(())
}

/// Generates every FOV of `layout` under its root and writes the manifest.
///
/// The root must be missing or empty. FOVs are built in parallel; the output
/// depends only on `layout` and `seed`. A failed build leaves
/// [`INCOMPLETE_MARKER`] in the root.
pub fn build_dataset(layout: &DatasetLayout, seed: Seed) -> Result<Manifest> {
    let manifest = plan_manifest(layout, seed)?;
    let root = &layout.root;
    if root.exists() {
        let mut it = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if it.next().is_some() {
            return Err(Error::Dataset(format!(
                "dataset root {} is not empty",
                root.display()
            )));
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let marker = root.join(INCOMPLETE_MARKER);
    fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))?;

    let jobs: Vec<(usize, usize)> = (0..layout.configurations.len())
        .flat_map(|ci| (1..=layout.fovs_per_config).map(move |f| (ci, f)))
        .collect();
    jobs.par_iter()
        .try_for_each(|&(ci, fov)| build_fov(layout, ci, fov, seed))?;

    let path = root.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_csv_bytes()?).map_err(|e| Error::io(&path, e))?;
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    log::info!(
        "built {} raw, {} noisy, {} ground-truth images under {}",
        manifest.raw_count(),
        manifest.noisy_count(),
        manifest.gt_count(),
        root.display()
    );
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::read_image;

    fn small_layout(root: &Path) -> DatasetLayout {
        DatasetLayout {
            root: root.to_path_buf(),
            configurations: canonical_configurations()[..2].to_vec(),
            fovs_per_config: 3,
            realizations: 10,
            noise_levels: vec![1, 2],
            gt_average_count: 10,
            image_side: 24,
            write_clean: true,
        }
    }

    #[test]
    fn canonical_counts() {
        let m = plan_manifest(&DatasetLayout::canonical("unused"), Seed(0)).unwrap();
        assert_eq!(m.gt_count(), 240);
        assert_eq!(m.raw_count(), 12_000);
        assert_eq!(m.noisy_count(), 60_000);
        assert_eq!(m.configs().len(), 12);
    }

    #[test]
    fn build_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let layout = small_layout(&dir.path().join("ds"));
        let m = build_dataset(&layout, Seed(4)).unwrap();
        assert_eq!((m.raw_count(), m.noisy_count(), m.gt_count()), (60, 120, 6));
        assert_eq!(m.clean_count(), 6);
        m.check_closed(&layout.root).unwrap();
        assert!(!layout.root.join(INCOMPLETE_MARKER).exists());
        let back = read_manifest(&layout.root).unwrap();
        assert_eq!(back, m);

        // averaged file params and the GT relation
        let e = m.find("CF_BPAE-Nuclei", 2, Level::Noisy(2)).next().unwrap();
        assert_eq!(e.a, 1.39e-2 / 2.0);
        assert_eq!(e.path, "CF_BPAE-Nuclei/fov02/avg2/01.fmdf");
        let raws: Vec<_> = m
            .find("CF_BPAE-Nuclei", 2, Level::Noisy(1))
            .map(|e| read_image(layout.root.join(&e.path)).unwrap())
            .collect();
        let gt_entry = m.find("CF_BPAE-Nuclei", 2, Level::GroundTruth).next().unwrap();
        let gt = read_image(layout.root.join(&gt_entry.path)).unwrap();
        assert_eq!(gt, crate::noise::average_images(&raws).unwrap());

        // stray files break closure; a second build into the same root is refused
        fs::write(layout.root.join("stray.txt"), b"x").unwrap();
        assert!(m.check_closed(&layout.root).is_err());
        assert!(build_dataset(&layout, Seed(4)).is_err());
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = small_layout(&dir.path().join("a"));
        a.configurations.truncate(1);
        a.fovs_per_config = 2;
        let mut b = a.clone();
        b.root = dir.path().join("b");
        let ma = build_dataset(&a, Seed(11)).unwrap();
        build_dataset(&b, Seed(11)).unwrap();
        for e in &ma.entries {
            let x = fs::read(a.root.join(&e.path)).unwrap();
            let y = fs::read(b.root.join(&e.path)).unwrap();
            assert!(x == y, "{} differs", e.path);
        }
        assert_eq!(
            fs::read(a.root.join(MANIFEST_FILE)).unwrap(),
            fs::read(b.root.join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn layout_validation() {
        let mut l = small_layout(Path::new("x"));
        l.noise_levels = vec![2, 1];
        assert!(l.validate().is_err());
        l.noise_levels = vec![1, 11];
        assert!(l.validate().is_err());
        l.noise_levels = vec![1];
        l.gt_average_count = 11;
        assert!(l.validate().is_err());
        l.gt_average_count = 10;
        l.configurations.push(l.configurations[0].clone());
        assert!(l.validate().is_err());
    }

    #[test]
    fn level_round_trip() {
        for l in [Level::Noisy(1), Level::Noisy(16), Level::GroundTruth, Level::Clean] {
            assert_eq!(l.to_string().parse::<Level>().unwrap(), l);
        }
        assert!("0".parse::<Level>().is_err());
        assert!("avg".parse::<Level>().is_err());
    }
}
