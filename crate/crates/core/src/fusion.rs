//! Class-specific copula fusion.
//!
//! For each class `m` a model is built from the training pixels labelled
//! `m`: one KDE per classifier over that classifier's class-`m` scores, a
//! copula over the resulting pseudo-observations, and a prior. At
//! inference every pixel gets, per class,
//!
//! `ln c_m(F_m,1(p_1), …, F_m,L(p_L)) + Σ_i ln f_m,i(p_i) + ln Pr{m}`
//!
//! and the label is the argmax. Marginals fitted on training data are
//! reused at inference.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::copula::{clamp_unit, Copula, CopulaFamily, CopulaModel};
use crate::data::{argmax_f64, check_aligned, BeliefTensor, LabelMap, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::fitting::{pseudo_observations, select_family, Criterion, SelectionReport};
use crate::marginals::KdeModel;
use crate::seed::{rng_for, DEFAULT_SEED};

/// Laplace smoothing constant for class priors.
pub const PRIOR_ALPHA: f64 = 1.0;

/// `prior[m] = (count_m + 1) / (N + M)` over non-ignored pixels.
pub fn estimate_priors(gt: &[LabelMap], classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; classes];
    for map in gt {
        map.check_labels(classes)?;
        for &l in map.as_slice() {
            if l != IGNORE_LABEL {
                counts[l as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::usage("no labelled pixels to estimate class priors from"));
    }
    let denom = total as f64 + PRIOR_ALPHA * classes as f64;
    Ok(counts
        .iter()
        .map(|&c| (c as f64 + PRIOR_ALPHA) / denom)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildSettings {
    pub criterion: Criterion,
    /// Use this family for every class instead of selecting.
    pub family: Option<CopulaFamily>,
    pub candidates: Vec<CopulaFamily>,
    pub max_pixels_per_class: usize,
    pub min_pixels: usize,
    /// Fixed KDE bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    /// Store KDE samples as 16-bit fixed point in the model file.
    pub quantize: bool,
    pub seed: u64,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            criterion: Criterion::Aic,
            family: None,
            candidates: CopulaFamily::CANDIDATES.to_vec(),
            max_pixels_per_class: 100_000,
            min_pixels: 500,
            bandwidth: None,
            quantize: false,
            seed: DEFAULT_SEED,
        }
    }
}

impl BuildSettings {
    /// Hex SHA-256 of the settings' JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("settings serialize");
        hex::encode(Sha256::digest(&json))
    }

    fn validate(&self) -> Result<()> {
        if self.family.is_none() && self.candidates.is_empty() {
            return Err(Error::Config("no candidate families to select from".into()));
        }
        if self.max_pixels_per_class < 2 {
            return Err(Error::Config("max pixels per class must be at least 2".into()));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to score one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub copula: CopulaModel,
    /// One KDE per classifier over that classifier's class-`m` scores.
    pub marginals: Vec<KdeModel>,
    pub prior: f64,
    /// Training pixels labelled with this class.
    pub pixels: usize,
    /// Rows actually used for fitting after subsampling.
    pub fitted_rows: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModelSet {
    pub classes: usize,
    pub classifiers: usize,
    pub models: Vec<ClassModel>,
    pub settings: BuildSettings,
    pub fingerprint: String,
}

impl ClassModelSet {
    /// Structural checks for a model read from disk.
    pub fn validate(&self) -> Result<()> {
        if self.models.len() != self.classes {
            return Err(Error::data(format!(
                "model declares {} classes but holds {} class models",
                self.classes,
                self.models.len()
            )));
        }
        if self.classifiers < 2 {
            return Err(Error::data("model needs at least 2 classifiers"));
        }
        let total: f64 = self.models.iter().map(|m| m.prior).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("class priors sum to {total}, not 1")));
        }
        for (m, cm) in self.models.iter().enumerate() {
            if cm.marginals.len() != self.classifiers {
                return Err(Error::data(format!(
                    "class {m} has {} marginals, expected {}",
                    cm.marginals.len(),
                    self.classifiers
                )));
            }
            if cm.copula.dim() != self.classifiers {
                return Err(Error::data(format!(
                    "class {m} copula has dimension {}, expected {}",
                    cm.copula.dim(),
                    self.classifiers
                )));
            }
            if !(cm.prior > 0.0) {
                return Err(Error::data(format!("class {m} prior must be positive")));
            }
            cm.copula.validate()?;
            if !cm.copula.family.supports_density(self.classifiers) {
                return Err(Error::Capability(format!(
                    "class {m}: {} density is unavailable for {} classifiers",
                    cm.copula.family, self.classifiers
                )));
            }
        }
        Ok(())
    }

    pub fn priors(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.prior).collect()
    }

    /// The model set a build forcing `family` would have produced, taken
    /// from the per-family fits recorded while selecting. Marginals and
    /// subsamples do not depend on the family, so this matches a fresh
    /// forced build without refitting.
    pub fn with_family(&self, report: &BuildReport, family: CopulaFamily) -> Result<ClassModelSet> {
        if report.selections.len() != self.classes {
            return Err(Error::usage("build report does not match the model set"));
        }
        let mut settings = self.settings.clone();
        settings.family = Some(family);
        let mut models = self.models.clone();
        for (cm, sel) in models.iter_mut().zip(&report.selections) {
            let Some(sel) = sel else { continue };
            if let Some(fit) = sel.fits.iter().find(|f| f.family == family) {
                cm.copula = fit.model();
            } else {
                let reason = sel
                    .failures
                    .iter()
                    .find(|f| f.family == family)
                    .map(|f| f.reason.clone())
                    .ok_or_else(|| Error::usage(format!("{family} was not a candidate in this build")))?;
                cm.copula = CopulaModel::independence(self.classifiers)?;
                let e = Error::Selection(format!("every candidate fit failed: {family}: {reason}"));
                cm.warnings
                    .push(format!("copula fit failed ({e}), using the independence copula"));
            }
        }
        Ok(ClassModelSet {
            classes: self.classes,
            classifiers: self.classifiers,
            models,
            fingerprint: settings.fingerprint(),
            settings,
        })
    }
}

/// One training image: a tensor per classifier plus ground truth.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub tensors: Vec<BeliefTensor>,
    pub labels: LabelMap,
}

/// Side information from a build: the per-class selection reports.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub selections: Vec<Option<SelectionReport>>,
}

fn check_images(images: &[LabeledImage]) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::usage("no training images given"))?;
    let classifiers = first.tensors.len();
    if classifiers < 2 {
        return Err(Error::usage(format!(
            "fusion needs at least 2 classifiers, got {classifiers}"
        )));
    }
    let classes = first.tensors[0].classes();
    for (k, img) in images.iter().enumerate() {
        if img.tensors.len() != classifiers {
            return Err(Error::usage(format!(
                "image {k} has {} tensors, expected {classifiers}",
                img.tensors.len()
            )));
        }
        check_aligned(&img.tensors)?;
        let t = &img.tensors[0];
        if t.classes() != classes {
            return Err(Error::usage(format!(
                "image {k} has {} classes, expected {classes}",
                t.classes()
            )));
        }
        if t.height() != img.labels.height() || t.width() != img.labels.width() {
            return Err(Error::usage(format!(
                "image {k}: labels are {}x{} but tensors are {}x{}",
                img.labels.height(),
                img.labels.width(),
                t.height(),
                t.width()
            )));
        }
        img.labels.check_labels(classes)?;
    }
    Ok((classes, classifiers))
}

/// Fit one class model per class from labelled training images.
pub fn build_class_models(
    images: &[LabeledImage],
    settings: &BuildSettings,
) -> Result<(ClassModelSet, BuildReport)> {
    settings.validate()?;
    let (classes, classifiers) = check_images(images)?;
    if let Some(f) = settings.family {
        if !f.supports_density(classifiers) {
            return Err(Error::Capability(format!(
                "{f} density is unavailable for {classifiers} classifiers"
            )));
        }
    }
    let gt: Vec<LabelMap> = images.iter().map(|i| i.labels.clone()).collect();
    let priors = estimate_priors(&gt, classes)?;

    // rows[m] holds, per pixel labelled m, the class-m score of every classifier
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for img in images {
        for (p, &l) in img.labels.as_slice().iter().enumerate() {
            if l == IGNORE_LABEL {
                continue;
            }
            let m = l as usize;
            for t in &img.tensors {
                rows[m].push(t.pixel(p)[m] as f64);
            }
        }
    }

    let built: Vec<(ClassModel, Option<SelectionReport>)> = rows
        .into_par_iter()
        .enumerate()
        .map(|(m, flat)| build_one(m, flat, classifiers, priors[m], settings))
        .collect::<Result<_>>()?;
    let (models, selections) = built.into_iter().unzip();
    let set = ClassModelSet {
        classes,
        classifiers,
        models,
        settings: settings.clone(),
        fingerprint: settings.fingerprint(),
    };
    Ok((set, BuildReport { selections }))
}

fn build_one(
    m: usize,
    flat: Vec<f64>,
    l: usize,
    prior: f64,
    settings: &BuildSettings,
) -> Result<(ClassModel, Option<SelectionReport>)> {
    let pixels = flat.len() / l;
    let mut warnings = Vec::new();
    let mut data = Array2::from_shape_vec((pixels, l), flat).expect("row length");
    if pixels > settings.max_pixels_per_class {
        let mut rng = rng_for(settings.seed, m as u64);
        let mut idx =
            rand::seq::index::sample(&mut rng, pixels, settings.max_pixels_per_class).into_vec();
        idx.sort_unstable();
        data = data.select(ndarray::Axis(0), &idx);
    }
    let rows = data.nrows();

    let mut marginals = Vec::with_capacity(l);
    for (i, col) in data.columns().into_iter().enumerate() {
        let samples = col.to_vec();
        let kde = if samples.len() < 2 {
            warnings.push(format!(
                "classifier {i}: {} training pixels, using a flat marginal",
                samples.len()
            ));
            KdeModel::fit(vec![0.0, 1.0], settings.bandwidth)?.0
        } else {
            let (kde, bw) = KdeModel::fit(samples, settings.bandwidth)?;
            if bw.degenerate {
                warnings.push(format!(
                    "classifier {i}: scores have no spread, bandwidth fixed at {}",
                    bw.h
                ));
            }
            kde
        };
        marginals.push(if settings.quantize {
            kde.quantized()
        } else {
            kde
        });
    }

    let independence = CopulaModel::independence(l)?;
    let (copula, selection) = if rows < settings.min_pixels.max(10) {
        warnings.push(format!(
            "{rows} training pixels is below the minimum {}, using the independence copula",
            settings.min_pixels
        ));
        (independence, None)
    } else {
        let u = pseudo_observations(&data, &marginals)?;
        let candidates = match settings.family {
            Some(f) => vec![f],
            None => settings.candidates.clone(),
        };
        match select_family(&u, &candidates, settings.criterion) {
            Ok(mut report) => {
                report.class = m;
                (report.chosen_fit().model(), Some(report))
            }
            Err(e) => {
                warnings.push(format!("copula fit failed ({e}), using the independence copula"));
                (independence, None)
            }
        }
    };
    Ok((
        ClassModel {
            copula,
            marginals,
            prior,
            pixels,
            fitted_rows: rows,
            warnings,
        },
        selection,
    ))
}

/// Ready-to-evaluate form of a [`ClassModelSet`].
pub struct Fuser<'a> {
    set: &'a ClassModelSet,
    copulas: Vec<Copula>,
    ln_priors: Vec<f64>,
}

/// Per-pixel fusion outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFusion {
    pub label: usize,
    /// Posteriors normalized to sum to one.
    pub posteriors: Vec<f64>,
    /// The copula posterior was not finite and the label came from the
    /// linear opinion pool instead.
    pub fallback: bool,
}

impl<'a> Fuser<'a> {
    pub fn new(set: &'a ClassModelSet) -> Result<Self> {
        set.validate()?;
        let copulas = set
            .models
            .iter()
            .map(|m| Copula::new(&m.copula))
            .collect::<Result<Vec<_>>>()?;
        // build the interpolation tables up front rather than on first use
        set.models
            .par_iter()
            .flat_map(|m| m.marginals.par_iter())
            .for_each(|k| {
                k.grid();
            });
        Ok(Fuser {
            set,
            copulas,
            ln_priors: set.models.iter().map(|m| m.prior.ln()).collect(),
        })
    }

    /// Unnormalized log posteriors for one pixel; `score(i, m)` returns
    /// classifier `i`'s score for class `m`.
    fn log_posteriors(&self, score: impl Fn(usize, usize) -> f64, out: &mut [f64]) {
        let l = self.set.classifiers;
        let mut u = [0.0f64; 16];
        let mut heap;
        let u: &mut [f64] = if l <= 16 {
            &mut u[..l]
        } else {
            heap = vec![0.0; l];
            &mut heap
        };
        for (m, model) in self.set.models.iter().enumerate() {
            let mut lp = self.ln_priors[m];
            for (i, kde) in model.marginals.iter().enumerate() {
                let x = score(i, m);
                let g = kde.grid();
                u[i] = clamp_unit(g.cdf(x));
                lp += g.ln_pdf(x);
            }
            lp += self.copulas[m].log_density_unchecked(u);
            out[m] = lp;
        }
    }

    /// Fuse one pixel from an `L × M` score matrix.
    pub fn fuse_pixel(&self, scores: &Array2<f64>) -> Result<PixelFusion> {
        let (l, m) = (self.set.classifiers, self.set.classes);
        if scores.dim() != (l, m) {
            return Err(Error::usage(format!(
                "pixel scores are {}x{}, expected {l}x{m}",
                scores.nrows(),
                scores.ncols()
            )));
        }
        let mut lp = vec![0.0; m];
        self.log_posteriors(|i, c| scores[(i, c)], &mut lp);
        Ok(self.decide(lp, |c| (0..l).map(|i| scores[(i, c)]).sum::<f64>()))
    }

    fn decide(&self, lp: Vec<f64>, lop: impl Fn(usize) -> f64) -> PixelFusion {
        let m = lp.len();
        if lp.iter().all(|v| v.is_finite()) {
            let label = argmax_f64(&lp);
            let top = lp[label];
            let w: Vec<f64> = lp.iter().map(|v| (v - top).exp()).collect();
            let total: f64 = w.iter().sum();
            PixelFusion {
                label,
                posteriors: w.iter().map(|v| v / total).collect(),
                fallback: false,
            }
        } else {
            // non-finite inputs carry no vote in the pool
            let pooled: Vec<f64> = (0..m)
                .map(|c| {
                    let v = lop(c);
                    if v.is_finite() {
                        v
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = pooled.iter().sum();
            let posteriors = if total > 0.0 {
                pooled.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / m as f64; m]
            };
            PixelFusion {
                label: argmax_f64(&pooled),
                posteriors,
                fallback: true,
            }
        }
    }

    /// Fuse an image given one tensor per classifier.
    pub fn fuse_image(&self, tensors: &[BeliefTensor], with_scores: bool) -> Result<FusedResult> {
        check_aligned(tensors)?;
        let l = self.set.classifiers;
        let m = self.set.classes;
        if tensors.len() != l {
            return Err(Error::usage(format!(
                "model expects {l} classifiers, got {} tensors",
                tensors.len()
            )));
        }
        let t0 = &tensors[0];
        if t0.classes() != m {
            return Err(Error::usage(format!(
                "model expects {m} classes, tensors have {}",
                t0.classes()
            )));
        }
        let (h, w) = (t0.height(), t0.width());
        let results: Vec<PixelFusion> = (0..h * w)
            .into_par_iter()
            .map(|p| {
                let mut lp = vec![0.0; m];
                self.log_posteriors(|i, c| tensors[i].pixel(p)[c] as f64, &mut lp);
                self.decide(lp, |c| {
                    tensors.iter().map(|t| t.pixel(p)[c] as f64).sum::<f64>() / l as f64
                })
            })
            .collect();
        let labels: Vec<u16> = results.iter().map(|r| r.label as u16).collect();
        let fallbacks = results.iter().filter(|r| r.fallback).count();
        let scores = with_scores.then(|| {
            let data = results
                .iter()
                .flat_map(|r| r.posteriors.iter().map(|&v| v as f32))
                .collect();
            BeliefTensor::new(h, w, m, data).expect("shape")
        });
        Ok(FusedResult {
            labels: LabelMap::new(h, w, labels)?,
            scores,
            fallbacks,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedResult {
    pub labels: LabelMap,
    /// Normalized posteriors, when requested.
    pub scores: Option<BeliefTensor>,
    /// Pixels whose label came from the linear-opinion-pool fallback.
    pub fallbacks: usize,
}

pub fn fuse_pixel(models: &ClassModelSet, scores: &Array2<f64>) -> Result<PixelFusion> {
    Fuser::new(models)?.fuse_pixel(scores)
}

pub fn fuse_dataset(
    models: &ClassModelSet,
    tensors: &[BeliefTensor],
    with_scores: bool,
) -> Result<FusedResult> {
    Fuser::new(models)?.fuse_image(tensors, with_scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_kde(centre: f64) -> KdeModel {
        KdeModel::new(vec![centre, centre + 1e-3], 0.01).unwrap()
    }

    fn hand_set(centres: &[f64], priors: &[f64]) -> ClassModelSet {
        let models = centres
            .iter()
            .zip(priors)
            .map(|(&c, &p)| ClassModel {
                copula: CopulaModel::independence(2).unwrap(),
                marginals: vec![point_kde(c), point_kde(c)],
                prior: p,
                pixels: 0,
                fitted_rows: 0,
                warnings: vec![],
            })
            .collect();
        ClassModelSet {
            classes: centres.len(),
            classifiers: 2,
            models,
            settings: BuildSettings::default(),
            fingerprint: String::new(),
        }
    }

    #[test]
    fn prior_examples() {
        let half = LabelMap::new(1, 100, (0..100).map(|i| (i % 2) as u16).collect()).unwrap();
        let p = estimate_priors(&[half], 2).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let ones = LabelMap::filled(10, 10, 1);
        let p = estimate_priors(&[ones], 2).unwrap();
        assert!((p[0] - 1.0 / 102.0).abs() < 1e-15);
        assert!((p[1] - 101.0 / 102.0).abs() < 1e-15);
        let ignored = LabelMap::filled(2, 2, IGNORE_LABEL);
        assert!(matches!(estimate_priors(&[ignored], 2), Err(Error::Usage(_))));
    }

    #[test]
    fn separated_likelihoods_decide_the_label() {
        // class 0 marginals sit at 0.9, class 1 at 0.1; scores near 0.9 for
        // class 0 and far from 0.1 for class 1
        let set = hand_set(&[0.9, 0.1], &[0.5, 0.5]);
        let scores = Array2::from_shape_vec((2, 2), vec![0.9, 0.3, 0.9, 0.3]).unwrap();
        let r = fuse_pixel(&set, &scores).unwrap();
        assert_eq!(r.label, 0);
        assert!(!r.fallback);
        assert!(r.posteriors[0] > 0.999);
        assert!((r.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_symmetry_ties_to_lowest_index() {
        let set = hand_set(&[0.5, 0.5, 0.5], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let scores = Array2::from_elem((2, 3), 0.4);
        let r = fuse_pixel(&set, &scores).unwrap();
        assert_eq!(r.label, 0);
        for p in &r.posteriors {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_scores_fall_back_to_pooling() {
        let set = hand_set(&[0.5, 0.5], &[0.5, 0.5]);
        let a = BeliefTensor::new(1, 1, 2, vec![f32::NAN, 0.7]).unwrap();
        let b = BeliefTensor::new(1, 1, 2, vec![0.2, 0.7]).unwrap();
        let r = fuse_dataset(&set, &[a, b], true).unwrap();
        assert_eq!(r.fallbacks, 1);
        assert_eq!(r.labels.as_slice(), &[1]);
    }

    #[test]
    fn one_pixel_image_matches_fuse_pixel() {
        let set = hand_set(&[0.7, 0.2], &[0.3, 0.7]);
        let a = BeliefTensor::new(1, 1, 2, vec![0.65, 0.35]).unwrap();
        let b = BeliefTensor::new(1, 1, 2, vec![0.72, 0.28]).unwrap();
        let img = fuse_dataset(&set, &[a, b], true).unwrap();
        let scores = Array2::from_shape_vec(
            (2, 2),
            vec![0.65f32 as f64, 0.35f32 as f64, 0.72f32 as f64, 0.28f32 as f64],
        )
        .unwrap();
        let px = fuse_pixel(&set, &scores).unwrap();
        assert_eq!(img.labels.as_slice()[0] as usize, px.label);
        let fused: Vec<f64> = img.scores.unwrap().as_slice().iter().map(|&v| v as f64).collect();
        for (a, b) in fused.iter().zip(&px.posteriors) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_errors() {
        let set = hand_set(&[0.7, 0.2], &[0.5, 0.5]);
        let a = BeliefTensor::zeros(1, 1, 3);
        assert!(matches!(
            fuse_dataset(&set, &[a.clone(), a], false),
            Err(Error::Usage(_))
        ));
        assert!(fuse_pixel(&set, &Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn priors_must_sum_to_one() {
        let set = hand_set(&[0.7, 0.2], &[0.5, 0.6]);
        assert!(set.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_settings() {
        let a = BuildSettings::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 7;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
