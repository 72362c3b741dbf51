//! Synthetic multi-classifier segmentation data with planted per-class
//! dependence, and a benchmark that compares fusers on it.
//!
//! For a pixel of true class `m` an `L`-vector is drawn from class `m`'s
//! copula and each coordinate goes through a Beta quantile with mean
//! `q_{m,i}` (classifier `i`'s quality on class `m`) and concentration
//! `κ`, giving the correct-class score `s`. The remaining `1 − s` is
//! split over the other classes in fixed proportions drawn once per class.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lop_fuse, logit_fuse, majority_vote, FusionWeights};
use crate::copula::{Copula, CopulaFamily, CopulaModel, CorrelationMatrix};
use crate::data::{BeliefTensor, LabelMap};
use crate::error::{Error, Result};
use crate::fusion::{build_class_models, BuildSettings, Fuser, LabeledImage};
use crate::metrics::{ConfusionMatrix, MetricsSummary};
use crate::seed::{derive_seed, rng_for, DEFAULT_SEED};
use crate::special::beta_quantile;

// stream ids for derive_seed; image k uses IMAGE_STREAM + k
const SPLIT_STREAM: u64 = 1;
const IMAGE_STREAM: u64 = 1 << 32;

/// Planted dependence for one class. Elliptical families use an
/// equicorrelation matrix with off-diagonal `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceSpec {
    pub family: CopulaFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl DependenceSpec {
    pub fn independence() -> Self {
        DependenceSpec {
            family: CopulaFamily::Independence,
            theta: None,
            rho: None,
            nu: None,
        }
    }

    pub fn archimedean(family: CopulaFamily, theta: f64) -> Self {
        DependenceSpec {
            theta: Some(theta),
            ..DependenceSpec::with_family(family)
        }
    }

    pub fn gaussian(rho: f64) -> Self {
        DependenceSpec {
            rho: Some(rho),
            ..DependenceSpec::with_family(CopulaFamily::Gaussian)
        }
    }

    pub fn student_t(rho: f64, nu: f64) -> Self {
        DependenceSpec {
            rho: Some(rho),
            nu: Some(nu),
            ..DependenceSpec::with_family(CopulaFamily::StudentT)
        }
    }

    fn with_family(family: CopulaFamily) -> Self {
        DependenceSpec {
            family,
            ..DependenceSpec::independence()
        }
    }

    pub fn model(&self, dim: usize) -> Result<CopulaModel> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("{} dependence needs `{name}`", self.family)))
        };
        let cfg = |e: Error| Error::Config(e.to_string());
        match self.family {
            CopulaFamily::Independence => CopulaModel::independence(dim),
            CopulaFamily::Gaussian => {
                let sigma = CorrelationMatrix::equicorrelated(dim, need(self.rho, "rho")?);
                CopulaModel::gaussian(sigma.map_err(cfg)?)
            }
            CopulaFamily::StudentT => {
                let sigma = CorrelationMatrix::equicorrelated(dim, need(self.rho, "rho")?);
                CopulaModel::student_t(sigma.map_err(cfg)?, need(self.nu, "nu")?)
            }
            f => CopulaModel::archimedean(f, dim, need(self.theta, "theta")?),
        }
        .map_err(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub dependence: DependenceSpec,
    /// Mean correct-class score of each classifier on this class.
    pub quality: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub height: usize,
    pub width: usize,
    pub classifiers: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// Beta concentration `κ` of the quality law.
    pub concentration: f64,
    /// Rectangles painted over each label map.
    pub patches: usize,
    pub class_specs: Vec<ClassSpec>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let spec = |dependence, quality: [f64; 3]| ClassSpec {
            dependence,
            quality: quality.to_vec(),
        };
        ScenarioConfig {
            height: 64,
            width: 64,
            classifiers: 3,
            train_images: 20,
            test_images: 10,
            concentration: 10.0,
            patches: 12,
            class_specs: vec![
                spec(
                    DependenceSpec::archimedean(CopulaFamily::Clayton, 2.0),
                    [0.7, 0.5, 0.55],
                ),
                spec(DependenceSpec::gaussian(0.7), [0.5, 0.7, 0.55]),
                spec(
                    DependenceSpec::archimedean(CopulaFamily::Gumbel, 2.0),
                    [0.55, 0.5, 0.7],
                ),
                spec(
                    DependenceSpec::archimedean(CopulaFamily::Frank, 5.74),
                    [0.6, 0.6, 0.6],
                ),
            ],
            seed: DEFAULT_SEED,
        }
    }
}

impl ScenarioConfig {
    pub fn classes(&self) -> usize {
        self.class_specs.len()
    }

    /// Same scenario with every class independent.
    pub fn with_dependence(mut self, dependence: DependenceSpec) -> Self {
        for c in &mut self.class_specs {
            c.dependence = dependence.clone();
        }
        self
    }

    pub fn validate(&self) -> Result<Vec<Copula>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if self.classifiers < 2 {
            return bad(format!("need at least 2 classifiers, got {}", self.classifiers));
        }
        if self.classes() < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes()));
        }
        if self.classes() > u16::MAX as usize {
            return bad("too many classes".into());
        }
        if self.train_images + self.test_images == 0 {
            return bad("no images requested".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(format!("concentration must be positive, got {}", self.concentration));
        }
        self.class_specs
            .iter()
            .enumerate()
            .map(|(m, c)| {
                if c.quality.len() != self.classifiers {
                    return Err(Error::Config(format!(
                        "class {m} lists {} qualities for {} classifiers",
                        c.quality.len(),
                        self.classifiers
                    )));
                }
                if let Some(q) = c.quality.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
                    return Err(Error::Config(format!("class {m} quality {q} is outside (0, 1]")));
                }
                Copula::new(&c.dependence.model(self.classifiers)?)
                    .map_err(|e| Error::Config(format!("class {m}: {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// Generate the train and test splits. Images are independent streams
/// derived from the seed, so generation runs in parallel.
pub fn generate(config: &ScenarioConfig) -> Result<SyntheticDataset> {
    let copulas = config.validate()?;
    let m = config.classes();
    // off-class proportions, one set per true class
    let mut rng = rng_for(config.seed, SPLIT_STREAM);
    let splits: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let w: Vec<f64> = (0..m - 1)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        })
        .collect();
    let n = config.train_images + config.test_images;
    let mut images: Vec<LabeledImage> = (0..n)
        .into_par_iter()
        .map(|k| generate_image(config, &copulas, &splits, derive_seed(config.seed, IMAGE_STREAM + k as u64)))
        .collect::<Result<_>>()?;
    let test = images.split_off(config.train_images);
    Ok(SyntheticDataset {
        train: images,
        test,
    })
}

fn label_map<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> LabelMap {
    let (h, w, m) = (config.height, config.width, config.classes());
    let mut map = LabelMap::filled(h, w, rng.random_range(0..m) as u16);
    for _ in 0..config.patches {
        let ph = rng.random_range((h / 8).max(1)..=(h / 2).max(1));
        let pw = rng.random_range((w / 8).max(1)..=(w / 2).max(1));
        let y0 = rng.random_range(0..=h - ph);
        let x0 = rng.random_range(0..=w - pw);
        let c = rng.random_range(0..m) as u16;
        let labels = map.as_mut_slice();
        for y in y0..y0 + ph {
            labels[y * w + x0..y * w + x0 + pw].fill(c);
        }
    }
    map
}

/// Correct-class score for uniform `u` at quality `q`.
fn quality_score(u: f64, q: f64, kappa: f64) -> Result<f64> {
    if q >= 1.0 {
        return Ok(1.0);
    }
    beta_quantile(u, q * kappa, (1.0 - q) * kappa)
}

fn generate_image(
    config: &ScenarioConfig,
    copulas: &[Copula],
    splits: &[Vec<f64>],
    seed: u64,
) -> Result<LabeledImage> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let labels = label_map(config, &mut rng);
    let (h, w, m, l) = (config.height, config.width, config.classes(), config.classifiers);
    let mut tensors = vec![BeliefTensor::zeros(h, w, m); l];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (p, &c) in labels.as_slice().iter().enumerate() {
        members[c as usize].push(p);
    }
    for (c, pixels) in members.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let u = copulas[c].sample(pixels.len(), &mut rng);
        let quality = &config.class_specs[c].quality;
        for (row, &p) in u.outer_iter().zip(pixels) {
            for (i, t) in tensors.iter_mut().enumerate() {
                let s = quality_score(row[i], quality[i], config.concentration)?;
                let rest = 1.0 - s;
                let out = t.pixel_mut(p);
                let mut k = 0;
                for (j, v) in out.iter_mut().enumerate() {
                    *v = if j == c {
                        s as f32
                    } else {
                        k += 1;
                        (rest * splits[c][k - 1]) as f32
                    };
                }
                renormalize(out);
            }
        }
    }
    Ok(LabeledImage { tensors, labels })
}

/// Make the f32 row sum exactly one by absorbing rounding into the largest
/// entry.
fn renormalize(row: &mut [f32]) {
    let big = crate::data::argmax_f32(row);
    let others: f32 = row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != big)
        .map(|(_, v)| *v)
        .sum();
    row[big] = 1.0 - others;
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Class-specific family selection.
    Proposed,
    /// One forced family for every class.
    Single(CopulaFamily),
    Lop,
    MajorityVote,
    Logit,
    /// One classifier alone.
    Classifier(usize),
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Proposed => "proposed".into(),
            Method::Single(f) => f.name().into(),
            Method::Lop => "lop".into(),
            Method::MajorityVote => "mv".into(),
            Method::Logit => "logit".into(),
            Method::Classifier(i) => format!("classifier-{i}"),
        }
    }

    /// Every method, with one per-classifier row per classifier.
    pub fn all(classifiers: usize) -> Vec<Method> {
        let mut v = vec![Method::Proposed];
        v.extend(
            CopulaFamily::CANDIDATES
                .iter()
                .filter(|f| **f != CopulaFamily::Independence)
                .map(|&f| Method::Single(f)),
        );
        v.extend([Method::Lop, Method::MajorityVote, Method::Logit]);
        v.extend((0..classifiers).map(Method::Classifier));
        v
    }

    /// Parse a comma-separated list; `per-classifier` expands to one entry
    /// per classifier and `all` to [`Method::all`].
    pub fn parse_list(s: &str, classifiers: usize) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for raw in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let t = raw.to_ascii_lowercase();
            match t.as_str() {
                "all" => out.extend(Method::all(classifiers)),
                "proposed" => out.push(Method::Proposed),
                "lop" => out.push(Method::Lop),
                "mv" | "majority" => out.push(Method::MajorityVote),
                "logit" => out.push(Method::Logit),
                "per-classifier" => out.extend((0..classifiers).map(Method::Classifier)),
                _ => {
                    if let Some(i) = t.strip_prefix("classifier-") {
                        let i: usize = i
                            .parse()
                            .map_err(|_| Error::usage(format!("bad method `{raw}`")))?;
                        if i >= classifiers {
                            return Err(Error::usage(format!(
                                "method `{raw}`: only {classifiers} classifiers"
                            )));
                        }
                        out.push(Method::Classifier(i));
                    } else {
                        let f: CopulaFamily = t
                            .parse()
                            .map_err(|_| Error::usage(format!("unknown method `{raw}`")))?;
                        out.push(Method::Single(f));
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::usage("no benchmark methods given"));
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|m| seen.insert(*m));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub metrics: MetricsSummary,
    /// Pixels decided by the pooling fallback (copula methods only).
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    /// Family chosen per class by the proposed method.
    pub chosen: Vec<CopulaFamily>,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, method: Method) -> Option<&BenchmarkRow> {
        let name = method.name();
        self.rows.iter().find(|r| r.method == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Method | Overall Accuracy | Mean Accuracy | Mean IOU |\n|---|---:|---:|---:|\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.6} | {:.6} | {:.6} |\n",
                r.method, r.metrics.oa, r.metrics.mean_ca, r.metrics.miou
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,overall_accuracy,mean_accuracy,mean_iou\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.method, r.metrics.oa, r.metrics.mean_ca, r.metrics.miou
            ));
        }
        out
    }
}

/// Generate the scenario, train on its train split and score every method
/// on its test split.
pub fn benchmark(config: &ScenarioConfig, methods: &[Method]) -> Result<BenchmarkReport> {
    let data = generate(config)?;
    benchmark_on(&data, config.classes(), config.seed, methods)
}

pub fn benchmark_on(
    data: &SyntheticDataset,
    classes: usize,
    seed: u64,
    methods: &[Method],
) -> Result<BenchmarkReport> {
    if data.test.is_empty() {
        return Err(Error::Config("benchmark needs at least one test image".into()));
    }
    let needs_models = methods
        .iter()
        .any(|m| matches!(m, Method::Proposed | Method::Single(_)));
    let settings = BuildSettings {
        seed,
        ..BuildSettings::default()
    };
    let built = if needs_models {
        Some(build_class_models(&data.train, &settings)?)
    } else {
        None
    };
    let l = data.test[0].tensors.len();
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut cm = ConfusionMatrix::new(classes);
        let mut fallbacks = 0;
        let set = match (method, &built) {
            (Method::Proposed, Some((set, _))) => Some(set.clone()),
            (Method::Single(f), Some((set, report))) => Some(set.with_family(report, f)?),
            _ => None,
        };
        let fuser = set.as_ref().map(Fuser::new).transpose()?;
        for img in &data.test {
            let pred = match method {
                Method::Proposed | Method::Single(_) => {
                    let r = fuser.as_ref().expect("model").fuse_image(&img.tensors, false)?;
                    fallbacks += r.fallbacks;
                    r.labels
                }
                Method::Lop => lop_fuse(&img.tensors, &FusionWeights::uniform(l)?)?.argmax(),
                Method::MajorityVote => majority_vote(&img.tensors)?,
                Method::Logit => logit_fuse(&img.tensors, 1.0)?.argmax(),
                Method::Classifier(i) => img
                    .tensors
                    .get(i)
                    .ok_or_else(|| Error::usage(format!("no classifier {i}")))?
                    .argmax(),
            };
            cm.accumulate(&pred, &img.labels, &[])?;
        }
        rows.push(BenchmarkRow {
            method: method.name(),
            metrics: MetricsSummary::from_confusion(&cm, false)?,
            fallbacks,
        });
    }
    Ok(BenchmarkReport {
        seed,
        chosen: built
            .map(|(set, _)| set.models.iter().map(|m| m.copula.family).collect())
            .unwrap_or_default(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            height: 24,
            width: 24,
            train_images: 2,
            test_images: 1,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let d = generate(&small()).unwrap();
        for img in d.train.iter().chain(&d.test) {
            for t in &img.tensors {
                t.check_probabilities(1e-6).unwrap();
            }
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.train[1].tensors, b.train[1].tensors);
        assert_eq!(a.test[0].labels, b.test[0].labels);
        let c = generate(&ScenarioConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.train[0].tensors, c.train[0].tensors);
    }

    #[test]
    fn perfect_quality_is_perfect() {
        let mut cfg = small().with_dependence(DependenceSpec::independence());
        for c in &mut cfg.class_specs {
            c.quality = vec![1.0; 3];
        }
        let d = generate(&cfg).unwrap();
        for img in &d.test {
            for t in &img.tensors {
                assert_eq!(t.argmax(), img.labels);
            }
        }
    }

    #[test]
    fn bad_configs() {
        let mut cfg = small();
        cfg.class_specs[0].quality = vec![0.5; 2];
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.class_specs[0].dependence = DependenceSpec::archimedean(CopulaFamily::Clayton, -1.0);
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.class_specs[1].dependence.rho = None;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn method_lists() {
        let m = Method::parse_list("proposed, per-classifier,lop,gaussian", 3).unwrap();
        assert_eq!(
            m,
            vec![
                Method::Proposed,
                Method::Classifier(0),
                Method::Classifier(1),
                Method::Classifier(2),
                Method::Lop,
                Method::Single(CopulaFamily::Gaussian)
            ]
        );
        assert!(Method::parse_list("nope", 3).is_err());
        assert!(Method::parse_list("classifier-3", 3).is_err());
        assert_eq!(Method::all(3).len(), 12);
    }
}
