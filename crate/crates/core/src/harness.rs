//! Experiment orchestration: the single-scene pipeline, the exposure-level
//! strain study (Ori vs DMD) and the glare-preset quality study.
//!
//! Every random stream is derived from `Scenario::noise_seed` through
//! [`derive_seed`], so identical configs produce byte-identical reports.
//! Within one repetition the Ori and DMD paths read out the same noise
//! realization; only the mask differs.

use std::fmt::Write as _;
use std::path::Path;

use crate::controller::{adapt_scene, AdaptationResult, ControllerConfig};
use crate::dic::{dic_match, effective_area, strain, DeformationField, DicConfig, StrainField};
use crate::hdr::{reconstruct, theoretical_dr, tone_map, HdrReconstruction};
use crate::io;
use crate::metrics::{quality, QualityMetrics};
use crate::optics::{
    capture, clahe, sve_capture, sve_fuse, CapturedFrame, ClaheParams, DmdModel, ModulationMask,
    SensorModel, SvePattern, NOISE_PRNG,
};
use crate::scene::{
    add_glare, gen_speckle, illuminate, warp, DeformationSpec, GlareKind, GlarePresets, GlareSpec,
    Hotspot, RadianceField, SpeckleParams, SPECKLE_PRNG,
};
use crate::{Error, Result};

/// SplitMix64 finalizer folded over `tags`.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

/// Default speckle density: one blob per this many pixels.
pub const SPECKLE_AREA_PER_BLOB: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub speckle: SpeckleParams,
    pub glare: GlareKind,
    pub presets: GlarePresets,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            speckle: SpeckleParams {
                seed: 1,
                width: 256,
                height: 256,
                count: 256 * 256 / SPECKLE_AREA_PER_BLOB,
                radius: 2.0,
                base: 15.0,
                peak: 100.0,
            },
            glare: GlareKind::None,
            presets: GlarePresets::default(),
        }
    }
}

impl SceneConfig {
    pub fn base_field(&self) -> Result<RadianceField> {
        gen_speckle(&self.speckle)
    }

    pub fn glare_spec(&self, base: &RadianceField) -> GlareSpec {
        GlareSpec::preset(self.glare, base, &self.presets)
    }

    pub fn build(&self) -> Result<RadianceField> {
        let base = self.base_field()?;
        add_glare(&base, &self.glare_spec(&base))
    }
}

/// Knobs of the exposure-level strain study.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainStudy {
    /// Multiplicative illumination hotspot, sigma as a fraction of the
    /// shorter edge, centered in the field.
    pub hotspot_sigma_frac: f64,
    pub hotspot_peak_gain: f64,
    /// Global gain per exposure level, in level order.
    pub level_gains: Vec<f64>,
}

impl Default for StrainStudy {
    fn default() -> Self {
        Self {
            hotspot_sigma_frac: 0.12,
            hotspot_peak_gain: 10.0,
            level_gains: vec![0.25, 1.0, 2.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityStudy {
    pub glares: Vec<GlareKind>,
    pub clahe: ClaheParams,
    pub sve: SvePattern,
}

impl Default for QualityStudy {
    fn default() -> Self {
        Self {
            glares: vec![
                GlareKind::LocalSpot,
                GlareKind::GlobalLow,
                GlareKind::GlobalHigh,
            ],
            clahe: ClaheParams::default(),
            sve: SvePattern::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub scene: SceneConfig,
    pub deformation: DeformationSpec,
    pub sensor: SensorModel,
    pub dmd: DmdModel,
    pub controller: ControllerConfig,
    pub dic: DicConfig,
    pub repetitions: usize,
    pub noise_seed: u64,
    /// Display gamma used by tone mapping.
    pub gamma: f64,
    pub strain: StrainStudy,
    pub quality: QualityStudy,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            scene: SceneConfig::default(),
            deformation: DeformationSpec::Identity,
            sensor: {
                let mut s = SensorModel::eight_bit();
                s.read_noise_sigma = 1.0;
                s
            },
            dmd: DmdModel::default(),
            controller: ControllerConfig::default(),
            dic: DicConfig {
                grid_step: 8,
                search_radius: 4,
                ..DicConfig::default()
            },
            repetitions: 8,
            noise_seed: 7,
            gamma: 2.2,
            strain: StrainStudy::default(),
            quality: QualityStudy::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::param("repetitions", "must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(
                "gamma",
                format!("must be > 0, got {}", self.gamma),
            ));
        }
        self.sensor.validate()?;
        self.dmd.validate()?;
        self.controller.validate()?;
        self.dic.validate()?;
        self.deformation.validate()?;
        if self.strain.level_gains.is_empty() {
            return Err(Error::param(
                "level_gains",
                "need at least one exposure level",
            ));
        }
        Ok(())
    }
}

/// Every intermediate of one scene -> capture -> adapt -> reconstruct run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub truth: RadianceField,
    pub original_frame: CapturedFrame,
    pub adaptation: AdaptationResult,
    pub modulated_frame: CapturedFrame,
    pub reconstruction: HdrReconstruction,
    pub tone_mapped: CapturedFrame,
}

impl PipelineOutput {
    pub fn adapted_mask(&self) -> &ModulationMask {
        &self.adaptation.mask
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_radiance(dir.join("scene.pfm"), &self.truth)?;
        io::write_pgm(dir.join("original.pgm"), &self.original_frame)?;
        io::write_mask(dir.join("mask.pgm"), &self.adaptation.mask)?;
        io::write_pgm(dir.join("modulated.pgm"), &self.modulated_frame)?;
        io::write_reconstruction(
            dir.join("reconstruction.pfm"),
            dir.join("reconstruction_valid.pgm"),
            &self.reconstruction,
        )?;
        io::write_pgm(dir.join("tone_mapped.pgm"), &self.tone_mapped)?;
        if let Some(trace) = &self.adaptation.trace {
            write_trace(dir.join("trace.csv"), trace)?;
        }
        Ok(())
    }
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[crate::controller::TraceRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|t| {
            vec![
                t.iteration.to_string(),
                t.saturated_count.to_string(),
                format!("{:e}", t.min_mu),
                format!("{:e}", t.max_mu),
            ]
        })
        .collect();
    io::write_csv(
        path,
        &["iteration", "saturated_count", "min_mu", "max_mu"],
        &rows,
    )
}

/// Captures `truth` under a unit mask and under the adapted mask, both with
/// the same readout noise, then reconstructs and tone maps.
pub fn run_pipeline_on(
    truth: RadianceField,
    scenario: &Scenario,
    repetition: u64,
) -> Result<PipelineOutput> {
    let (w, h) = truth.dims();
    let readout = derive_seed(scenario.noise_seed, &[repetition, 0]);
    let loop_seed = derive_seed(scenario.noise_seed, &[repetition, 1]);
    let ones = ModulationMask::ones(w, h, scenario.dmd.max_exponent)?;
    let original_frame = capture(&truth, &ones, &scenario.sensor, &scenario.dmd, readout)?;
    let adaptation = adapt_scene(
        &truth,
        &scenario.sensor,
        &scenario.dmd,
        &scenario.controller,
        loop_seed,
    )?;
    let modulated_frame = capture(
        &truth,
        &adaptation.mask,
        &scenario.sensor,
        &scenario.dmd,
        readout,
    )?;
    let reconstruction = reconstruct(&modulated_frame, &adaptation.mask, &scenario.sensor)?
        .with_theoretical(theoretical_dr(&scenario.sensor, &scenario.dmd, false));
    let tone_mapped = tone_map(&reconstruction, scenario.gamma)?;
    Ok(PipelineOutput {
        truth,
        original_frame,
        adaptation,
        modulated_frame,
        reconstruction,
        tone_mapped,
    })
}

/// Builds the configured scene (speckle + glare, then the deformation) and
/// runs the pipeline on it.
pub fn run_pipeline(scenario: &Scenario) -> Result<PipelineOutput> {
    scenario.validate()?;
    let truth = warp(&scenario.scene.build()?, &scenario.deformation)?;
    run_pipeline_on(truth, scenario, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Ori,
    Dmd,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ori => "Ori",
            Mode::Dmd => "DMD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainRow {
    /// 1-based exposure level.
    pub level: usize,
    pub mode: Mode,
    /// Percent of pixels above the controller threshold under a unit mask.
    pub saturated_pct: f64,
    pub mean_abs_e1_pct: f64,
    pub mean_abs_e2_pct: f64,
    pub mean_e1_pct: f64,
    pub mean_e2_pct: f64,
    pub effective_area_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    pub level: usize,
    /// `100 * (1 - DMD / Ori)` on mean |E1|.
    pub e1_pct: f64,
    pub e2_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrainReport {
    pub rows: Vec<StrainRow>,
    pub reductions: Vec<Reduction>,
}

impl StrainReport {
    pub fn row(&self, level: usize, mode: Mode) -> Option<&StrainRow> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.mode == mode)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = io::fmt_f64;
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.level.to_string(),
                    r.mode.name().to_string(),
                    f(r.saturated_pct),
                    f(r.mean_e1_pct),
                    f(r.mean_e2_pct),
                    f(r.mean_abs_e1_pct),
                    f(r.mean_abs_e2_pct),
                    f(r.effective_area_pct),
                    String::new(),
                    String::new(),
                ]
            })
            .collect();
        for red in &self.reductions {
            rows.push(vec![
                red.level.to_string(),
                "reduction".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                f(red.e1_pct),
                f(red.e2_pct),
            ]);
        }
        io::write_csv(
            path,
            &[
                "level",
                "mode",
                "saturated_pct",
                "e1_pct",
                "e2_pct",
                "abs_e1_pct",
                "abs_e2_pct",
                "effective_area_pct",
                "e1_reduction_pct",
                "e2_reduction_pct",
            ],
            &rows,
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct StrainAccum {
    abs_e1: f64,
    abs_e2: f64,
    e1: f64,
    e2: f64,
    area: f64,
    saturated: f64,
}

/// Strain statistics of one reference/deformed pair.
fn strain_stats(
    reference: &CapturedFrame,
    deformed: &CapturedFrame,
    dic: &DicConfig,
) -> Result<StrainAccum> {
    let field = dic_match(reference, deformed, dic)?;
    let area = effective_area(&field);
    let s = strain(&field, dic)?;
    let mut acc = StrainAccum {
        area,
        ..StrainAccum::default()
    };
    let mut n = 0usize;
    for (i, &ok) in s.defined.as_slice().iter().enumerate() {
        if ok {
            let (e1, e2) = (s.e1.as_slice()[i], s.e2.as_slice()[i]);
            acc.e1 += e1;
            acc.e2 += e2;
            acc.abs_e1 += e1.abs();
            acc.abs_e2 += e2.abs();
            n += 1;
        }
    }
    if n > 0 {
        let k = 100.0 / n as f64;
        acc.e1 *= k;
        acc.e2 *= k;
        acc.abs_e1 *= k;
        acc.abs_e2 *= k;
    }
    Ok(acc)
}

/// Scene used by the strain study at `level` (0-based).
pub fn strain_scene(scenario: &Scenario, level: usize) -> Result<RadianceField> {
    let base = gen_speckle(&scenario.scene.speckle)?;
    let (w, h) = base.dims();
    let lit = illuminate(
        &base,
        &Hotspot {
            center: (w as f64 / 2.0, h as f64 / 2.0),
            sigma: scenario.strain.hotspot_sigma_frac * w.min(h) as f64,
            peak_gain: scenario.strain.hotspot_peak_gain,
        },
    )?;
    let gain = *scenario
        .strain
        .level_gains
        .get(level)
        .ok_or_else(|| Error::param("level", format!("no exposure level {}", level + 1)))?;
    lit.scaled(gain)
}

/// Zero-deformation static test: per level and repetition, two readouts of
/// the same scene are correlated, once through a unit mask (Ori) and once
/// through the mask adapted on that repetition (DMD).
pub fn run_strain_study(scenario: &Scenario) -> Result<StrainReport> {
    scenario.validate()?;
    let reps = scenario.repetitions;
    let mut rows = Vec::new();
    let mut reductions = Vec::new();
    for level in 0..scenario.strain.level_gains.len() {
        let truth = strain_scene(scenario, level)?;
        let (w, h) = truth.dims();
        let ones = ModulationMask::ones(w, h, scenario.dmd.max_exponent)?;
        let threshold = scenario.controller.threshold(&scenario.sensor);
        let mut ori = StrainAccum::default();
        let mut dmd = StrainAccum::default();
        for rep in 0..reps as u64 {
            let tag = [level as u64, rep];
            let ref_seed = derive_seed(scenario.noise_seed, &[tag[0], tag[1], 10]);
            let def_seed = derive_seed(scenario.noise_seed, &[tag[0], tag[1], 11]);
            let loop_seed = derive_seed(scenario.noise_seed, &[tag[0], tag[1], 12]);

            let cap = |mask: &ModulationMask, seed| {
                capture(&truth, mask, &scenario.sensor, &scenario.dmd, seed)
            };
            let ori_ref = cap(&ones, ref_seed)?;
            let ori_def = cap(&ones, def_seed)?;
            let mut o = strain_stats(&ori_ref, &ori_def, &scenario.dic)?;
            o.saturated = 100.0 * ori_ref.fraction_above(threshold);

            // Static scene: the converged mask stays in place for the pair.
            let adapted = adapt_scene(
                &truth,
                &scenario.sensor,
                &scenario.dmd,
                &scenario.controller,
                loop_seed,
            )?;
            let dmd_ref = cap(&adapted.mask, ref_seed)?;
            let dmd_def = cap(&adapted.mask, def_seed)?;
            let mut d = strain_stats(&dmd_ref, &dmd_def, &scenario.dic)?;
            d.saturated = o.saturated;

            for (acc, x) in [(&mut ori, o), (&mut dmd, d)] {
                acc.abs_e1 += x.abs_e1;
                acc.abs_e2 += x.abs_e2;
                acc.e1 += x.e1;
                acc.e2 += x.e2;
                acc.area += x.area;
                acc.saturated += x.saturated;
            }
        }
        let n = reps as f64;
        for (mode, acc) in [(Mode::Ori, ori), (Mode::Dmd, dmd)] {
            rows.push(StrainRow {
                level: level + 1,
                mode,
                saturated_pct: acc.saturated / n,
                mean_abs_e1_pct: acc.abs_e1 / n,
                mean_abs_e2_pct: acc.abs_e2 / n,
                mean_e1_pct: acc.e1 / n,
                mean_e2_pct: acc.e2 / n,
                effective_area_pct: acc.area / n,
            });
        }
        let reduction = |d: f64, o: f64| if o > 0.0 { 100.0 * (1.0 - d / o) } else { 0.0 };
        reductions.push(Reduction {
            level: level + 1,
            e1_pct: reduction(dmd.abs_e1, ori.abs_e1),
            e2_pct: reduction(dmd.abs_e2, ori.abs_e2),
        });
    }
    Ok(StrainReport { rows, reductions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ori,
    Clahe,
    Sve,
    Dmd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ori, Method::Clahe, Method::Sve, Method::Dmd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ori => "Ori",
            Method::Clahe => "CLAHE",
            Method::Sve => "SVE",
            Method::Dmd => "DMD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityRow {
    pub glare: GlareKind,
    pub method: Method,
    pub metrics: QualityMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<QualityRow>,
}

impl QualityReport {
    pub fn get(&self, glare: GlareKind, method: Method) -> Option<&QualityMetrics> {
        self.rows
            .iter()
            .find(|r| r.glare == glare && r.method == method)
            .map(|r| &r.metrics)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = io::fmt_f64;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.glare.name().to_string(),
                    r.method.name().to_string(),
                    f(r.metrics.avg_gradient),
                    f(r.metrics.entropy),
                    f(r.metrics.rms_contrast),
                ]
            })
            .collect();
        io::write_csv(
            path,
            &["glare", "method", "ag", "entropy", "contrast"],
            &rows,
        )
    }
}

/// The 8-bit image each method hands to the metrics for one repetition.
pub fn method_frames(
    truth: &RadianceField,
    scenario: &Scenario,
    repetition: u64,
) -> Result<Vec<(Method, CapturedFrame)>> {
    let readout = derive_seed(scenario.noise_seed, &[repetition, 20]);
    let sve_seed = derive_seed(scenario.noise_seed, &[repetition, 21]);
    let loop_seed = derive_seed(scenario.noise_seed, &[repetition, 22]);
    let (w, h) = truth.dims();
    let s = &scenario.sensor;
    let q = &scenario.quality;

    let ones = ModulationMask::ones(w, h, scenario.dmd.max_exponent)?;
    let ori = capture(truth, &ones, s, &scenario.dmd, readout)?;
    let clahe_frame = clahe(&ori, &q.clahe)?;
    let sve_frame = sve_capture(truth, s, &q.sve, sve_seed)?;
    let sve = tone_map(&sve_fuse(&sve_frame, &q.sve, s)?, scenario.gamma)?;
    let adapted = adapt_scene(truth, s, &scenario.dmd, &scenario.controller, loop_seed)?;
    let modulated = capture(truth, &adapted.mask, s, &scenario.dmd, readout)?;
    let dmd = tone_map(&reconstruct(&modulated, &adapted.mask, s)?, scenario.gamma)?;
    Ok(vec![
        (Method::Ori, ori),
        (Method::Clahe, clahe_frame),
        (Method::Sve, sve),
        (Method::Dmd, dmd),
    ])
}

/// AG / entropy / contrast per glare preset and method, averaged over
/// repetitions. All methods see the same scene per preset.
pub fn run_quality_study(scenario: &Scenario) -> Result<QualityReport> {
    scenario.validate()?;
    let base = scenario.scene.base_field()?;
    let mut rows = Vec::new();
    for &glare in &scenario.quality.glares {
        let truth = add_glare(
            &base,
            &GlareSpec::preset(glare, &base, &scenario.scene.presets),
        )?;
        let mut sums = [[0.0f64; 3]; 4];
        for rep in 0..scenario.repetitions as u64 {
            for (i, (_, frame)) in method_frames(&truth, scenario, rep)?.iter().enumerate() {
                let m = quality(frame)?;
                sums[i][0] += m.avg_gradient;
                sums[i][1] += m.entropy;
                sums[i][2] += m.rms_contrast;
            }
        }
        let n = scenario.repetitions as f64;
        for (i, method) in Method::ALL.into_iter().enumerate() {
            rows.push(QualityRow {
                glare,
                method,
                metrics: QualityMetrics {
                    avg_gradient: sums[i][0] / n,
                    entropy: sums[i][1] / n,
                    rms_contrast: sums[i][2] / n,
                },
            });
        }
    }
    Ok(QualityReport { rows })
}

/// One row per metric: `metric,value`.
pub fn write_metrics_csv(path: impl AsRef<Path>, m: &QualityMetrics) -> Result<()> {
    let f = io::fmt_f64;
    let rows = vec![
        vec!["ag".to_string(), f(m.avg_gradient)],
        vec!["entropy".to_string(), f(m.entropy)],
        vec!["contrast".to_string(), f(m.rms_contrast)],
    ];
    io::write_csv(path, &["metric", "value"], &rows)
}

/// Grid-point table of a DIC run; strains are fractions, principal strains
/// percent. Undefined values print as `nan`.
pub fn write_dic_csv(
    path: impl AsRef<Path>,
    field: &DeformationField,
    strain: &StrainField,
) -> Result<()> {
    let f = io::fmt_f64;
    let mut rows = Vec::with_capacity(field.u.len());
    for (j, &y) in field.ys.iter().enumerate() {
        for (i, &x) in field.xs.iter().enumerate() {
            rows.push(vec![
                x.to_string(),
                y.to_string(),
                f(*field.u.get(i, j)),
                f(*field.v.get(i, j)),
                f(*field.zncc.get(i, j)),
                (*field.converged.get(i, j) as u8).to_string(),
                f(*strain.exx.get(i, j)),
                f(*strain.eyy.get(i, j)),
                f(*strain.exy.get(i, j)),
                f(100.0 * strain.e1.get(i, j)),
                f(100.0 * strain.e2.get(i, j)),
            ]);
        }
    }
    io::write_csv(
        path,
        &[
            "x",
            "y",
            "u",
            "v",
            "zncc",
            "converged",
            "exx",
            "eyy",
            "exy",
            "e1_pct",
            "e2_pct",
        ],
        &rows,
    )
}

/// Theoretical (timing ratio and mask depth) and measured dynamic range.
pub fn write_dr_csv(
    path: impl AsRef<Path>,
    scenario: &Scenario,
    recon: &HdrReconstruction,
) -> Result<()> {
    let f = io::fmt_f64;
    let measured = recon.dr_report.measured_db.unwrap_or(f64::NAN);
    let rows = vec![
        vec![
            "theoretical_t_ratio".to_string(),
            f(theoretical_dr(&scenario.sensor, &scenario.dmd, false)),
        ],
        vec![
            "theoretical_mask_ratio".to_string(),
            f(theoretical_dr(&scenario.sensor, &scenario.dmd, true)),
        ],
        vec!["intrinsic".to_string(), f(scenario.sensor.intrinsic_db())],
        vec!["measured".to_string(), f(measured)],
        vec!["valid_fraction".to_string(), f(recon.valid_fraction())],
    ];
    io::write_csv(path, &["quantity", "db"], &rows)
}

/// Human-readable record of every seed and parameter of a run.
pub fn manifest(scenario: &Scenario) -> String {
    let mut m = String::new();
    let s = &scenario.scene.speckle;
    let _ = writeln!(m, "speckle_prng = {SPECKLE_PRNG}");
    let _ = writeln!(m, "noise_prng = {NOISE_PRNG}");
    let _ = writeln!(m, "seed_derivation = splitmix64-fold");
    let _ = writeln!(m, "{}", crate::config::render(scenario));
    let _ = writeln!(
        m,
        "# derived: s_max = {}, threshold = {}, speckle {}x{} count {}",
        scenario.sensor.s_max(),
        scenario.controller.threshold(&scenario.sensor),
        s.width,
        s.height,
        s.count
    );
    m
}

/// Runs the pipeline and both studies, writing every artifact into `dir`.
pub fn run_experiment(scenario: &Scenario, dir: &Path) -> Result<()> {
    scenario.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = run_pipeline(scenario)?;
    out.write(dir)?;
    write_dr_csv(dir.join("dr.csv"), scenario, &out.reconstruction)?;
    run_quality_study(scenario)?.write_csv(dir.join("metrics.csv"))?;
    run_strain_study(scenario)?.write_csv(dir.join("strain.csv"))?;
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest(scenario)).map_err(|e| Error::io(&path, e))
}
