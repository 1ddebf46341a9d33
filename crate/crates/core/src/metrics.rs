//! Sample-quality metrics and report rendering.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::read_gray_png;
use crate::error::{Error, Result};
use crate::mask::{connected_components, intensity_plane, RegionDetector};
use crate::tensor::Tensor;
use crate::toy_data::GaussianMixture2d;
use crate::vocab::{self, Concept, Token};

/// Detection threshold used by [`hand_probability`].
pub const DEFAULT_TAU_DETECT: f64 = 0.4;
/// Eigenvalues of the covariance product above `-EIG_CLIP * scale` are
/// clipped to zero; anything lower is reported as a failure.
const EIG_CLIP: f64 = 1e-8;

/// `N x d` features with a tag naming where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: DMatrix<f64>,
    pub source: String,
}

impl FeatureSet {
    pub fn from_rows(rows: &[Vec<f64>], source: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("feature rows differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(Self {
            features: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn mean(&self) -> DVector<f64> {
        self.features.row_mean().transpose()
    }

    /// Unbiased sample covariance.
    fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut c = DMatrix::zeros(self.dim(), self.dim());
        for r in self.features.row_iter() {
            let d = r.transpose() - &mu;
            c += &d * d.transpose();
        }
        c / (self.len() as f64 - 1.0)
    }
}

/// Embeds a batch of samples into feature space.
pub trait FeatureEmbedder {
    fn embed(&self, sample: &Tensor) -> Result<Vec<f64>>;

    fn embed_all(&self, samples: &[Tensor], source: &str) -> Result<FeatureSet> {
        let rows = samples.iter().map(|s| self.embed(s)).collect::<Result<Vec<_>>>()?;
        FeatureSet::from_rows(&rows, source)
    }
}

/// Bundled image features: a 4x4 grid of mean intensities plus global mean,
/// spread, largest bright-region share and bright-region count. Points pass
/// through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyEmbedder;

impl FeatureEmbedder for ToyEmbedder {
    fn embed(&self, sample: &Tensor) -> Result<Vec<f64>> {
        if sample.ndim() == 1 {
            return Ok(sample.iter().copied().collect());
        }
        let (h, w, plane) = intensity_plane(sample).map_err(|e| Error::invalid(e.to_string()))?;
        let mut f = vec![0.0f64; 16];
        let mut cnt = vec![0.0f64; 16];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * 4 / h) * 4 + x * 4 / w;
                f[cell] += plane[y * w + x];
                cnt[cell] += 1.0;
            }
        }
        for (v, c) in f.iter_mut().zip(&cnt) {
            *v /= c.max(1.0);
        }
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let std = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let on: Vec<bool> = plane.iter().map(|&v| v > 0.5).collect();
        let comps = connected_components(h, w, &on);
        let largest = comps.iter().map(Vec::len).max().unwrap_or(0) as f64 / n;
        f.extend([mean, std, largest, comps.len() as f64 / 10.0]);
        Ok(f)
    }
}

/// Frechet distance between Gaussian fits of two feature sets.
pub fn compute_fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "feature dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("FID needs at least two samples per set"));
    }
    let (ca, cb) = (a.covariance(), b.covariance());
    let diff = a.mean() - b.mean();
    let sqrt_a = psd_sqrt(&ca, "covariance of the first set")?;
    let m = &sqrt_a * &cb * &sqrt_a;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m).eigenvalues;
    let tr_sqrt: f64 = clip_eigenvalues(&eig, "covariance product")?
        .iter()
        .map(|v| v.sqrt())
        .sum();
    Ok(diff.norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_sqrt)
}

fn clip_eigenvalues(eig: &DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let scale = eig.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -EIG_CLIP * scale {
        return Err(Error::NumericalDegeneracy(format!(
            "{what} is not positive semi-definite: smallest eigenvalue {min:e}, largest magnitude {scale:e}"
        )));
    }
    Ok(eig.iter().map(|&v| v.max(0.0)).collect())
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = clip_eigenvalues(&eig.eigenvalues, what)?;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt())));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidConfig {
    pub subset_size: usize,
    pub subsets: usize,
    pub seed: u64,
}

impl Default for KidConfig {
    fn default() -> Self {
        Self {
            subset_size: 100,
            subsets: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub mean: f64,
    /// Standard error of the mean over subsets.
    pub std_error: f64,
}

fn poly_kernel(x: &[f64], y: &[f64], d: f64) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased polynomial-kernel MMD^2 averaged over random subsets.
pub fn compute_kid(a: &FeatureSet, b: &FeatureSet, cfg: &KidConfig) -> Result<KidEstimate> {
    if a.dim() != b.dim() {
        return Err(Error::invalid("feature dims differ"));
    }
    let m = cfg.subset_size;
    if m < 2 || m > a.len() || m > b.len() {
        return Err(Error::invalid(format!(
            "subset size {m} must be in [2, min({}, {})]",
            a.len(),
            b.len()
        )));
    }
    if cfg.subsets == 0 {
        return Err(Error::invalid("at least one subset is required"));
    }
    let rows =
        |f: &FeatureSet| -> Vec<Vec<f64>> { f.features.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let (ra, rb) = (rows(a), rows(b));
    let d = a.dim() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vals = Vec::with_capacity(cfg.subsets);
    for _ in 0..cfg.subsets {
        let ia = sample(&mut rng, ra.len(), m).into_vec();
        let ib = sample(&mut rng, rb.len(), m).into_vec();
        let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    kxx += poly_kernel(&ra[ia[i]], &ra[ia[j]], d);
                    kyy += poly_kernel(&rb[ib[i]], &rb[ib[j]], d);
                }
                kxy += poly_kernel(&ra[ia[i]], &rb[ib[j]], d);
            }
        }
        let mf = m as f64;
        vals.push(kxx / (mf * (mf - 1.0)) + kyy / (mf * (mf - 1.0)) - 2.0 * kxy / (mf * mf));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(KidEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Mean detector score over images where something was detected. With
/// `include_misses`, undetected images count as zero. `None` when nothing
/// was detected.
pub fn hand_confidence(images: &[Tensor], detector: &dyn RegionDetector, include_misses: bool) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    let mut misses = 0;
    for img in images {
        let d = detector.detect(img)?;
        if d.region.area() > 0 {
            scores.push(d.score);
        } else {
            misses += 1;
        }
    }
    if scores.is_empty() {
        return Ok(None);
    }
    let n = scores.len() + if include_misses { misses } else { 0 };
    Ok(Some(scores.iter().sum::<f64>() / n as f64))
}

/// Fraction of images with a detected region scoring at least `tau_detect`.
pub fn hand_probability(images: &[Tensor], detector: &dyn RegionDetector, tau_detect: f64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("hand probability of an empty image list"));
    }
    let mut hits = 0;
    for img in images {
        let d = detector.detect(img)?;
        hits += (d.region.area() > 0 && d.score >= tau_detect) as usize;
    }
    Ok(hits as f64 / images.len() as f64)
}

/// Maps prompts and samples into a shared space.
pub trait JointEmbedder {
    fn embed_text(&self, token: Token) -> Vec<f64>;
    fn embed_image(&self, sample: &Tensor) -> Result<Vec<f64>>;
}

/// Two-axis embedding: affinity to the well-formed and to the malformed mode.
/// Images score by how much of the frame their largest bright region covers
/// (one large region reads as well-formed); points by a softmax over the
/// negative squared distances to the mixture centres.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyJointEmbedder {
    pub mixture: GaussianMixture2d,
}

impl JointEmbedder for ToyJointEmbedder {
    fn embed_text(&self, token: Token) -> Vec<f64> {
        match vocab::concept(token) {
            Some(Concept::Positive) => vec![1.0, 0.0],
            Some(Concept::Negative) => vec![0.0, 1.0],
            _ => vec![1.0, 1.0],
        }
    }

    fn embed_image(&self, sample: &Tensor) -> Result<Vec<f64>> {
        if sample.ndim() == 1 {
            let da = (sample[0] - self.mixture.center_a[0]).powi(2) + (sample[1] - self.mixture.center_a[1]).powi(2);
            let db = (sample[0] - self.mixture.center_b[0]).powi(2) + (sample[1] - self.mixture.center_b[1]).powi(2);
            let m = da.min(db);
            let (ea, eb) = ((-(da - m)).exp(), (-(db - m)).exp());
            return Ok(vec![ea / (ea + eb), eb / (ea + eb)]);
        }
        let (h, w, plane) = intensity_plane(sample).map_err(|e| Error::invalid(e.to_string()))?;
        let on: Vec<bool> = plane.iter().map(|&v| v > 0.5).collect();
        let largest = connected_components(h, w, &on).iter().map(Vec::len).max().unwrap_or(0);
        let a = (largest as f64 / (h * w) as f64 / 0.1).min(1.0);
        Ok(vec![a, 1.0 - a])
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean of `100 * cos(text, image)` over aligned pairs.
pub fn text_image_similarity(images: &[Tensor], prompts: &[Token], embedder: &dyn JointEmbedder) -> Result<f64> {
    if images.len() != prompts.len() {
        return Err(Error::invalid(format!(
            "{} images but {} prompts",
            images.len(),
            prompts.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::invalid("similarity of an empty set"));
    }
    let mut total = 0.0;
    for (img, &p) in images.iter().zip(prompts) {
        total += 100.0 * cosine(&embedder.embed_text(p), &embedder.embed_image(img)?);
    }
    Ok(total / images.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model_id: String,
    pub config_hash: String,
    pub n_generated: usize,
    pub n_reference: usize,
    pub tau_detect: f64,
    pub kid: KidConfig,
}

/// One evaluated model. Metrics that could not be computed are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: Option<f64>,
    pub kid: Option<f64>,
    pub kid_std_error: Option<f64>,
    pub hand_confidence: Option<f64>,
    pub hand_probability: Option<f64>,
    pub text_image_similarity: Option<f64>,
    pub metadata: ReportMetadata,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Markdown comparison table, rows ordered by ascending FID (missing last).
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by(|a, b| match (a.fid, b.fid) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let mut out = String::from("| Model | FID | KID | Hand Conf. | Hand Prob. | Sim. |\n|---|---|---|---|---|---|\n");
    for r in rows {
        out += &format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.metadata.model_id,
            cell(r.fid),
            cell(r.kid),
            cell(r.hand_confidence),
            cell(r.hand_probability),
            cell(r.text_image_similarity)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub model_id: String,
    pub config_hash: String,
    pub tau_detect: f64,
    pub kid: KidConfig,
    pub include_misses: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            model_id: "model".into(),
            config_hash: String::new(),
            tau_detect: DEFAULT_TAU_DETECT,
            kid: KidConfig::default(),
            include_misses: false,
        }
    }
}

/// Computes every metric; ones that cannot be evaluated on the given inputs
/// are left empty instead of failing the report.
pub fn evaluate_samples(
    generated: &[Tensor],
    reference: &[Tensor],
    prompts: Option<&[Token]>,
    detector: &dyn RegionDetector,
    embedder: &dyn FeatureEmbedder,
    joint: &dyn JointEmbedder,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if generated.is_empty() {
        return Err(Error::invalid("no generated samples to evaluate"));
    }
    let fg = embedder.embed_all(generated, "generated")?;
    let fr = embedder.embed_all(reference, "reference")?;
    let fid = compute_fid(&fg, &fr).ok();
    let kid_cfg = KidConfig {
        subset_size: opts.kid.subset_size.min(fg.len()).min(fr.len()),
        ..opts.kid
    };
    let kid = compute_kid(&fg, &fr, &kid_cfg).ok();
    let spatial = generated[0].ndim() > 1;
    let (hc, hp) = if spatial {
        (
            hand_confidence(generated, detector, opts.include_misses)?,
            Some(hand_probability(generated, detector, opts.tau_detect)?),
        )
    } else {
        (None, None)
    };
    let sim = match prompts {
        Some(p) => Some(text_image_similarity(generated, p, joint)?),
        None => None,
    };
    Ok(MetricsReport {
        fid,
        kid: kid.map(|k| k.mean),
        kid_std_error: kid.map(|k| k.std_error),
        hand_confidence: hc,
        hand_probability: hp,
        text_image_similarity: sim,
        metadata: ReportMetadata {
            model_id: opts.model_id.clone(),
            config_hash: opts.config_hash.clone(),
            n_generated: generated.len(),
            n_reference: reference.len(),
            tau_detect: opts.tau_detect,
            kid: kid_cfg,
        },
    })
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    Ok(v)
}

pub fn load_pngs(dir: &Path) -> Result<Vec<Tensor>> {
    list_pngs(dir)?.iter().map(|p| read_gray_png(p)).collect()
}

/// One prompt per non-empty line, resolved against the vocabulary (unknown
/// text maps to its closest phrase).
pub fn read_prompts(path: &Path) -> Result<Vec<Token>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| vocab::lookup(l).unwrap_or_else(|_| vocab::token_for_text(l)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BlobDetector;
    use crate::tensor;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + if j == 0 { shift } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        FeatureSet::from_rows(&rows, "g").unwrap()
    }

    #[test]
    fn fid_self_distance_is_zero() {
        let a = gaussian(500, 6, 0.0, 0);
        assert!(compute_fid(&a, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn fid_rejects_mismatched_dims() {
        assert!(compute_fid(&gaussian(10, 2, 0.0, 0), &gaussian(10, 3, 0.0, 1)).is_err());
        assert!(compute_fid(&gaussian(1, 2, 0.0, 0), &gaussian(10, 2, 0.0, 1)).is_err());
    }

    #[test]
    fn fid_grows_with_mean_shift() {
        let a = gaussian(400, 3, 0.0, 0);
        let mut last = compute_fid(&a, &gaussian(400, 3, 0.0, 1)).unwrap();
        for m in [0.5, 1.0, 2.0] {
            let f = compute_fid(&a, &gaussian(400, 3, m, 1)).unwrap();
            assert!(f > last);
            last = f;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fid_is_symmetric_and_nonnegative(s1 in 0u64..1000, s2 in 0u64..1000, shift in -2.0..2.0f64) {
            let a = gaussian(60, 3, 0.0, s1);
            let b = gaussian(80, 3, shift, s2 + 5000);
            let ab = compute_fid(&a, &b).unwrap();
            let ba = compute_fid(&b, &a).unwrap();
            prop_assert!(ab >= -1e-9);
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab.abs()));
        }
    }

    #[test]
    fn kid_separates_clusters() {
        let a = gaussian(300, 4, 0.0, 0);
        let b = gaussian(300, 4, 6.0, 1);
        let k = compute_kid(&a, &b, &KidConfig::default()).unwrap();
        assert!(k.mean > 10.0 * k.std_error, "{k:?}");
        assert!(compute_kid(
            &a,
            &b,
            &KidConfig {
                subset_size: 301,
                ..Default::default()
            }
        )
        .is_err());
    }

    fn blob(level: f64) -> Tensor {
        let mut img = tensor::zeros(&[1, 16, 16]);
        for y in 4..9 {
            for x in 4..9 {
                img[[0, y, x]] = level;
            }
        }
        img
    }

    #[test]
    fn hand_metrics_on_fixtures() {
        let det = BlobDetector::default();
        let imgs = vec![blob(0.9); 5];
        assert!((hand_confidence(&imgs, &det, false).unwrap().unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(
            hand_confidence(&[tensor::zeros(&[1, 8, 8])], &det, false).unwrap(),
            None
        );

        let mut mixed: Vec<Tensor> = (0..7).map(|_| blob(0.9)).collect();
        mixed.extend((0..3).map(|_| tensor::zeros(&[1, 16, 16])));
        assert_eq!(hand_probability(&mixed, &det, 0.4).unwrap(), 0.7);
        assert_eq!(hand_probability(&mixed[..7], &det, 0.4).unwrap(), 1.0);
        assert_eq!(hand_probability(&mixed[7..], &det, 0.4).unwrap(), 0.0);
        assert!(hand_probability(&[], &det, 0.4).is_err());
        let inclusive = hand_confidence(&mixed, &det, true).unwrap().unwrap();
        assert!((inclusive - 0.63).abs() < 1e-12);
    }

    #[test]
    fn similarity_prefers_matching_prompts() {
        let e = ToyJointEmbedder::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut good, mut bad) = (Vec::new(), Vec::new());
        let mut imgs = Vec::new();
        for i in 0..100 {
            let mode = if i % 2 == 0 {
                crate::toy_data::Mode::A
            } else {
                crate::toy_data::Mode::B
            };
            imgs.push(crate::toy_data::render_image(&mut rng, mode, 16));
            good.push(if i % 2 == 0 { 2 } else { 6 });
            bad.push(if i % 2 == 0 { 6 } else { 2 });
        }
        let s_good = text_image_similarity(&imgs, &good, &e).unwrap();
        let s_bad = text_image_similarity(&imgs, &bad, &e).unwrap();
        assert!(s_good > s_bad, "{s_good} vs {s_bad}");
        assert!(text_image_similarity(&imgs[..2], &good, &e).is_err());
        assert!((cosine(&[0.3, 0.4], &[0.3, 0.4]) - 1.0).abs() < 1e-15);
    }

    fn report(id: &str, fid: Option<f64>) -> MetricsReport {
        MetricsReport {
            fid,
            kid: Some(0.1368),
            kid_std_error: None,
            hand_confidence: Some(0.9009),
            hand_probability: Some(0.7250),
            text_image_similarity: Some(30.1349),
            metadata: ReportMetadata {
                model_id: id.into(),
                config_hash: "h".into(),
                n_generated: 10,
                n_reference: 10,
                tau_detect: 0.4,
                kid: KidConfig::default(),
            },
        }
    }

    #[test]
    fn report_roundtrip_and_table() {
        for r in [report("a", Some(0.9601)), report("b", None), report("c", Some(0.0))] {
            assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
        }
        let mut r = report("x", Some(0.9601));
        r.kid = None;
        let t = render_table(&[report("late", Some(2.0)), r, report("none", None)]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[2].starts_with("| x | 0.9601 | n/a | 0.9009 | 0.7250 | 30.1349 |"));
        assert!(lines[3].starts_with("| late |"));
        assert!(lines[4].contains("| none | n/a |"));
    }
}
