//! Real/fake captioned dataset construction.
//!
//! Input layout: `<input>/<source>/*.png`, where `<source>` is `corpusA` or
//! `corpusB`, with an optional `<stem>.txt` next to each image holding a short
//! action description for the captioner. Real images whose detector score is
//! below the threshold are dropped, the rest are captioned, and one fake is
//! generated per caption. The manifest is a JSON header line followed by one
//! JSON record per line, sorted by source and then path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::checkpoint::{config_hash, write_atomic};
use crate::decoder::Decoder;
use crate::denoiser::Denoiser;
use crate::discriminator::LabelledSet;
use crate::error::{Error, Result};
use crate::mask::RegionDetector;
use crate::sampler::sample_base;
use crate::schedule::{NoiseSchedule, SamplerConfig};
use crate::tensor::{self, Tensor};
use crate::toy_data::{self, Mode};
use crate::vocab::{self, Token};

pub const MANIFEST_VERSION: &str = "1";
pub const DEFAULT_THRESHOLD: f64 = 0.8;
/// Environment variable holding the bearer token for the HTTP captioner.
pub const CAPTIONER_TOKEN_ENV: &str = "HANDGUIDE_CAPTIONER_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "corpusA")]
    CorpusA,
    #[serde(rename = "corpusB")]
    CorpusB,
    #[serde(rename = "generated")]
    Generated,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::CorpusA => "corpusA",
            Source::CorpusB => "corpusB",
            Source::Generated => "generated",
        }
    }

    pub const REAL: [Source; 2] = [Source::CorpusA, Source::CorpusB];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image_path: String,
    pub caption: String,
    pub source: Source,
    pub detector_score: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_hash: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub real: usize,
    pub fake: usize,
    pub by_source: BTreeMap<String, usize>,
}

impl Counts {
    pub fn tally(records: &[Record]) -> Self {
        let mut c = Counts::default();
        for r in records {
            match r.label {
                Label::Real => c.real += 1,
                Label::Fake => c.fake += 1,
            }
            *c.by_source.entry(r.source.name().to_string()).or_default() += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: String,
    pub threshold: f64,
    pub captioner: String,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)? + "\n";
        for r in &self.records {
            out += &serde_json::to_string(r)?;
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader =
            serde_json::from_str(lines.next().ok_or_else(|| Error::Build("manifest is empty".into()))?)?;
        let records = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<Record>, _>>()?;
        Ok(Self { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Absolute location of a record's image.
    pub fn resolve(&self, manifest_path: &Path, record: &Record) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

/// Writes `[1, H, W]` (or `[H, W]`) intensities in `[0, 1]` as an 8-bit PNG.
pub fn write_gray_png(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = match img.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => return Err(Error::invalid(format!("expected a single-channel image, got {s:?}"))),
    };
    let px: Vec<u8> = img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, px).expect("buffer size");
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads any PNG as a `[1, H, W]` intensity tensor in `[0, 1]`.
pub fn read_gray_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    tensor::from_vec(&[1, h as usize, w as usize], data)
}

/// Side information a captioner may use.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemMeta {
    pub action: Option<String>,
}

pub trait Captioner: Send + Sync {
    fn caption(&self, png: &[u8], meta: &ItemMeta) -> Result<String>;

    /// Short description recorded in the manifest header.
    fn describe(&self) -> String;
}

/// Deterministic template captions.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubCaptioner;

impl Captioner for StubCaptioner {
    fn caption(&self, _png: &[u8], meta: &ItemMeta) -> Result<String> {
        let action = meta.action.as_deref().unwrap_or("raising a hand");
        Ok(format!("A person {action}, hands clearly visible"))
    }

    fn describe(&self) -> String {
        "stub".into()
    }
}

/// POSTs the PNG bytes to `url` and expects `{"caption": "..."}` back.
#[derive(Debug, Clone)]
pub struct HttpCaptioner {
    pub url: String,
    pub timeout: Duration,
    pub retries: usize,
    pub token: Option<String>,
}

#[derive(Deserialize)]
struct CaptionReply {
    caption: String,
}

impl HttpCaptioner {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            token: std::env::var(CAPTIONER_TOKEN_ENV).ok(),
        }
    }

    fn attempt(&self, agent: &ureq::Agent, png: &[u8]) -> std::result::Result<String, String> {
        let mut req = agent.post(&self.url).header("Content-Type", "image/png");
        if let Some(tok) = &self.token {
            req = req.header("Authorization", &format!("Bearer {tok}"));
        }
        let mut resp = req.send(png).map_err(|e| e.to_string())?;
        let reply: CaptionReply = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(reply.caption)
    }
}

impl Captioner for HttpCaptioner {
    fn caption(&self, png: &[u8], _meta: &ItemMeta) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.attempt(&agent, png) {
                Ok(c) => return Ok(c),
                Err(e) => {
                    warn!(attempt, error = %e, "caption request failed");
                    last = e;
                }
            }
        }
        Err(Error::Caption(format!(
            "{} after {} attempts: {last}",
            self.url,
            self.retries + 1
        )))
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}

/// Parses `stub` or `http:<url>`.
pub fn captioner_from_spec(spec: &str) -> Result<Box<dyn Captioner>> {
    if spec == "stub" {
        return Ok(Box::new(StubCaptioner));
    }
    match spec.strip_prefix("http:") {
        Some(rest) if rest.starts_with("//") => Ok(Box::new(HttpCaptioner::new(spec))),
        Some(url) if !url.is_empty() => Ok(Box::new(HttpCaptioner::new(url))),
        _ => Err(Error::invalid(format!(
            "captioner must be `stub` or `http:<url>`, got `{spec}`"
        ))),
    }
}

/// One caption result per item, in order; failures do not stop the others.
pub fn caption_images(items: &[(Vec<u8>, ItemMeta)], client: &dyn Captioner) -> Vec<Result<String>> {
    items.iter().map(|(png, meta)| client.caption(png, meta)).collect()
}

/// Items whose score is at least `threshold`, paired with their scores.
pub fn filter_by_detector<T: Clone>(
    items: &[(T, Tensor)],
    detector: &dyn RegionDetector,
    threshold: f64,
) -> Result<Vec<(T, f64)>> {
    let mut out = Vec::new();
    for (item, img) in items {
        let d = detector.detect(img)?;
        if d.score >= threshold {
            out.push((item.clone(), d.score));
        }
    }
    Ok(out)
}

/// Produces a fake image for a caption.
pub trait FakeGenerator: Send + Sync {
    /// `[1, H, W]` intensities in `[0, 1]`.
    fn generate(&self, caption: &str, seed: u64) -> Result<Tensor>;

    fn config_hash(&self) -> String;
}

/// Fakes drawn from a trained denoiser with the unguided sampler.
pub struct SamplerGenerator<'a> {
    pub model: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub decoder: Decoder,
    pub sampler: SamplerConfig,
}

impl FakeGenerator for SamplerGenerator<'_> {
    fn generate(&self, caption: &str, seed: u64) -> Result<Tensor> {
        let tok = vocab::token_for_text(caption);
        let z = sample_base(self.model, self.schedule, &[tok], &[seed], &self.sampler)
            .map_err(|e| Error::Generator(e.to_string()))?;
        let px = self.decoder.decode(&z).mapv(|v| v.clamp(0.0, 1.0));
        let shape = px.shape()[1..].to_vec();
        Ok(px.into_shape_with_order(shape).expect("single row"))
    }

    fn config_hash(&self) -> String {
        config_hash(&(
            self.model.checksum(),
            self.schedule.config(),
            self.decoder,
            self.sampler,
        ))
    }
}

/// Smoothed noise images, for building a corpus without a trained model.
#[derive(Debug, Clone, Copy)]
pub struct NoiseGenerator {
    pub size: usize,
}

impl FakeGenerator for NoiseGenerator {
    fn generate(&self, _caption: &str, seed: u64) -> Result<Tensor> {
        Ok(toy_data::render_noise(&mut ChaCha8Rng::seed_from_u64(seed), self.size))
    }

    fn config_hash(&self) -> String {
        config_hash(&("noise", self.size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Minimum detector score for a real image, inclusive.
    pub threshold: f64,
    pub fake_seed: u64,
    /// Build fails when more than this fraction of captions fail.
    pub max_caption_failure_rate: f64,
    /// Largest share of the real records any single source may hold.
    pub max_source_share: Option<f64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            fake_seed: 0,
            max_caption_failure_rate: 0.1,
            max_source_share: None,
        }
    }
}

/// Fails when one real source holds more than `bound` of the real records.
pub fn check_source_balance(counts: &Counts, bound: f64) -> Result<()> {
    if counts.real == 0 {
        return Ok(());
    }
    for s in Source::REAL {
        let n = counts.by_source.get(s.name()).copied().unwrap_or(0);
        let share = n as f64 / counts.real as f64;
        if share > bound {
            return Err(Error::Build(format!(
                "source {} holds {:.3} of real records, above the bound {bound}",
                s.name(),
                share
            )));
        }
    }
    Ok(())
}

/// Path of `p` relative to `base` when it lies below it.
fn display_path(p: &Path, base: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
}

/// Sorts, tallies and writes the manifest atomically; every path must exist.
pub fn build_manifest(
    mut records: Vec<Record>,
    out_path: &Path,
    threshold: f64,
    captioner: &str,
) -> Result<DatasetManifest> {
    records.sort_by(|a, b| (a.source, &a.image_path).cmp(&(b.source, &b.image_path)));
    let base = out_path.parent().unwrap_or(Path::new("."));
    let missing: Vec<PathBuf> = records
        .iter()
        .map(|r| {
            let p = Path::new(&r.image_path);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        })
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnresolvedPaths(missing));
    }
    if let Some(r) = records
        .iter()
        .find(|r| r.label == Label::Real && !(r.detector_score >= threshold))
    {
        return Err(Error::Build(format!(
            "{} has score {} below the threshold {threshold}",
            r.image_path, r.detector_score
        )));
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION.into(),
            threshold,
            captioner: captioner.into(),
            counts: Counts::tally(&records),
        },
        records,
    };
    write_atomic(out_path, manifest.to_jsonl()?.as_bytes())?;
    Ok(manifest)
}

struct RealItem {
    path: PathBuf,
    source: Source,
    png: Vec<u8>,
    meta: ItemMeta,
}

fn scan_input(input: &Path) -> Result<Vec<(RealItem, Tensor)>> {
    let mut items = Vec::new();
    let mut any_source = false;
    for source in Source::REAL {
        let dir = input.join(source.name());
        if !dir.is_dir() {
            continue;
        }
        any_source = true;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        for path in paths {
            let png = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let img = read_gray_png(&path)?;
            let action = std::fs::read_to_string(path.with_extension("txt"))
                .ok()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty());
            let path = std::fs::canonicalize(&path).map_err(|e| Error::io(&path, e))?;
            items.push((
                RealItem {
                    path,
                    source,
                    png,
                    meta: ItemMeta { action },
                },
                img,
            ));
        }
    }
    if !any_source {
        return Err(Error::Build(format!(
            "{} has neither a corpusA nor a corpusB directory",
            input.display()
        )));
    }
    Ok(items)
}

/// Directory next to the manifest that holds generated images.
pub fn fakes_dir(out_path: &Path) -> PathBuf {
    let stem = out_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    out_path.with_file_name(format!("{stem}_fakes"))
}

/// Filters, captions, generates fakes and writes the manifest.
pub fn build_dataset(
    input: &Path,
    out_path: &Path,
    detector: &dyn RegionDetector,
    captioner: &dyn Captioner,
    generator: &dyn FakeGenerator,
    cfg: &BuildConfig,
) -> Result<DatasetManifest> {
    let scanned = scan_input(input)?;
    let total = scanned.len();
    let (kept, scores): (Vec<RealItem>, Vec<f64>) = {
        let mut kept = Vec::new();
        let mut scores = Vec::new();
        for (item, img) in scanned {
            let d = detector.detect(&img)?;
            if d.score >= cfg.threshold {
                kept.push(item);
                scores.push(d.score);
            }
        }
        (kept, scores)
    };
    info!(total, kept = kept.len(), threshold = cfg.threshold, "detector filter");

    let captions: Vec<Result<String>> = kept.iter().map(|it| captioner.caption(&it.png, &it.meta)).collect();
    let failures = captions.iter().filter(|c| c.is_err()).count();
    if !kept.is_empty() && failures as f64 / kept.len() as f64 > cfg.max_caption_failure_rate {
        return Err(Error::Build(format!(
            "{failures} of {} captions failed, above the bound {}",
            kept.len(),
            cfg.max_caption_failure_rate
        )));
    }

    let parent = match out_path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let base = std::fs::canonicalize(parent).map_err(|e| Error::io(parent, e))?;
    let fdir = base.join(fakes_dir(out_path).file_name().expect("fakes dir has a name"));
    let gen_hash = generator.config_hash();
    let mut records = Vec::new();
    for (i, ((item, score), caption)) in kept.iter().zip(&scores).zip(captions).enumerate() {
        let caption = match caption {
            Ok(c) => c,
            Err(e) => {
                warn!(path = %item.path.display(), error = %e, "dropping uncaptioned image");
                continue;
            }
        };
        let seed = cfg.fake_seed.wrapping_add(i as u64);
        let fake = generator.generate(&caption, seed)?;
        let fake_path = fdir.join(format!("fake_{i:05}.png"));
        write_gray_png(&fake_path, &fake)?;
        records.push(Record {
            image_path: display_path(&item.path, &base),
            caption: caption.clone(),
            source: item.source,
            detector_score: *score,
            label: Label::Real,
            seed: None,
            generator_hash: None,
        });
        records.push(Record {
            image_path: display_path(&fake_path, &base),
            caption,
            source: Source::Generated,
            detector_score: 0.0,
            label: Label::Fake,
            seed: Some(seed),
            generator_hash: Some(gen_hash.clone()),
        });
    }
    let counts = Counts::tally(&records);
    if let Some(bound) = cfg.max_source_share {
        check_source_balance(&counts, bound)?;
    }
    build_manifest(records, out_path, cfg.threshold, &captioner.describe())
}

/// Loads every manifest image as a discriminator example conditioned on the
/// token its caption maps to.
pub fn load_labelled_set(manifest_path: &Path) -> Result<LabelledSet> {
    let m = DatasetManifest::load(manifest_path)?;
    let missing: Vec<PathBuf> = m
        .records
        .iter()
        .map(|r| m.resolve(manifest_path, r))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnresolvedPaths(missing));
    }
    let imgs = m
        .records
        .iter()
        .map(|r| read_gray_png(&m.resolve(manifest_path, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelledSet {
        samples: tensor::stack(&imgs)?,
        tokens: m
            .records
            .iter()
            .map(|r| vocab::token_for_text(&r.caption))
            .collect::<Vec<Token>>(),
        labels: m.records.iter().map(|r| r.label == Label::Real).collect(),
    })
}

/// Writes a synthetic input tree. A `good_frac` share of each source is
/// well-formed (mode A); the rest is malformed and scores below the filter
/// threshold. Images are rendered at `size / 2` and upsampled by two.
pub fn write_fixture_corpus(dir: &Path, per_source: usize, good_frac: f64, size: usize, seed: u64) -> Result<()> {
    const ACTIONS: [&str; 4] = ["opening a jar", "waving", "pointing at a map", "holding a cup"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dec = Decoder::Upsample { factor: 2 };
    for source in Source::REAL {
        let sdir = dir.join(source.name());
        std::fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        let good = (per_source as f64 * good_frac).round() as usize;
        for i in 0..per_source {
            let mode = if i < good { Mode::A } else { Mode::B };
            let img = toy_data::render_image(&mut rng, mode, size / 2);
            let latent = toy_data::image_to_latent(&img).insert_axis(ndarray::Axis(0));
            let px = dec.decode(&latent).index_axis(ndarray::Axis(0), 0).to_owned();
            let stem = format!("img_{i:04}");
            write_gray_png(&sdir.join(format!("{stem}.png")), &px)?;
            let txt = sdir.join(format!("{stem}.txt"));
            std::fs::write(&txt, ACTIONS[i % ACTIONS.len()]).map_err(|e| Error::io(&txt, e))?;
        }
    }
    Ok(())
}
